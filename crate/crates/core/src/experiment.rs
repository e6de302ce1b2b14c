//! End-to-end pipeline: generate, split, train, embed the held-out views,
//! mean-pool per object and evaluate retrieval and geometry.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{generate, Dataset, SyntheticSpec, ViewRecord};
use crate::encoder::{Activation, Mlp};
use crate::error::{Error, Result};
use crate::eval::{evaluate_descriptors, geometry_report, EvalOptions, GeometryReport, RetrievalSummary};
use crate::losses::CenterlineBank;
use crate::trainer::{Checkpoint, Trainer, TrainConfig};
use crate::vector::{mean_pool, FeatureVector, ShapeDescriptor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: SyntheticSpec,
    pub train_fraction: f64,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    /// Evaluate test MAP after every epoch and record it in the history.
    pub track_map: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: SyntheticSpec::default(),
            train_fraction: 0.5,
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            track_map: false,
        }
    }
}

impl ExperimentConfig {
    /// The standard synthetic retrieval benchmark: ten well separated but
    /// noisy classes, a linear encoder with a rectified 16 dimensional
    /// output, the CIP objective with `λ = 0.1` and a slower centerline rate.
    pub fn benchmark(seed: u64) -> Self {
        let mut cfg = Self::default();
        cfg.data = SyntheticSpec {
            num_classes: 10,
            objects_per_class: 300,
            views_per_object: 20,
            input_dim: 16,
            class_separation: 3.0,
            view_noise_std: 0.5,
            object_noise_std: 0.5,
            seed,
        };
        cfg.train.seed = seed;
        cfg.train.encoder.embedding_dim = 16;
        cfg.train.encoder.hidden = Vec::new();
        cfg.train.encoder.init_std = 0.3;
        cfg.train.encoder.final_activation = Activation::Relu;
        cfg.train.centerline_lr = Some(0.001);
        cfg.train.loss.lambda = 0.1;
        cfg
    }
}

/// Embeddings of individual views.
pub fn embed_records(encoder: &Mlp, records: &[&ViewRecord]) -> Result<Vec<FeatureVector>> {
    records.iter().map(|r| encoder.embed(&r.input)).collect()
}

/// One descriptor per object, the mean of its view embeddings, in ascending
/// object id.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledObjects {
    pub object_ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub descriptors: Vec<ShapeDescriptor>,
}

pub fn pool_objects(encoder: &Mlp, records: &[&ViewRecord]) -> Result<PooledObjects> {
    let mut groups: BTreeMap<usize, (usize, Vec<FeatureVector>)> = BTreeMap::new();
    for r in records {
        let f = encoder.embed(&r.input)?;
        groups.entry(r.object_id).or_insert((r.label, Vec::new())).1.push(f);
    }
    let mut out = PooledObjects {
        object_ids: Vec::with_capacity(groups.len()),
        labels: Vec::with_capacity(groups.len()),
        descriptors: Vec::with_capacity(groups.len()),
    };
    for (id, (label, views)) in groups {
        out.object_ids.push(id);
        out.labels.push(label);
        out.descriptors.push(mean_pool(&views)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub retrieval: RetrievalSummary,
    /// View-level features of the evaluated records against the centerlines.
    pub geometry: GeometryReport,
}

/// Object-level retrieval over the evaluation records plus a view-level
/// geometry report.
pub fn evaluate_model(
    encoder: &Mlp,
    centerlines: &CenterlineBank,
    dataset: &Dataset,
    options: EvalOptions,
) -> Result<ModelEvaluation> {
    let records = dataset.evaluation_records();
    if records.is_empty() {
        return Err(Error::Empty("no evaluation records"));
    }
    let pooled = pool_objects(encoder, &records)?;
    let descs: Vec<&[f64]> = pooled.descriptors.iter().map(|d| d.components.as_slice()).collect();
    let retrieval = evaluate_descriptors(&descs, &pooled.labels, options)?;
    let features = embed_records(encoder, &records)?;
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let geometry = geometry_report(&features, &labels, centerlines)?;
    Ok(ModelEvaluation { retrieval, geometry })
}

/// Micro MAP of `encoder` on the evaluation records.
pub fn test_map(encoder: &Mlp, dataset: &Dataset, options: EvalOptions) -> Result<f64> {
    let pooled = pool_objects(encoder, &dataset.evaluation_records())?;
    let descs: Vec<&[f64]> = pooled.descriptors.iter().map(|d| d.components.as_slice()).collect();
    Ok(evaluate_descriptors(&descs, &pooled.labels, options)?.micro.map)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub checkpoint: Checkpoint,
    pub evaluation: ModelEvaluation,
}

/// Trains on an already split dataset and evaluates on its test split.
pub fn train_and_evaluate(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let trainer = Trainer::new(dataset, cfg.train.clone())?;
    let options = cfg.eval;
    let checkpoint = if cfg.track_map {
        trainer.run(&mut |state| test_map(&state.encoder, dataset, options).ok())?
    } else {
        trainer.run(&mut |_| None)?
    };
    let evaluation = evaluate_model(
        checkpoint.encoder(),
        checkpoint.centerlines(),
        dataset,
        options,
    )?;
    Ok(RunOutcome {
        checkpoint,
        evaluation,
    })
}

/// Generates the synthetic dataset, splits it with the data seed and runs
/// [`train_and_evaluate`].
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let dataset = generate(&cfg.data)?.split(cfg.train_fraction, cfg.data.seed)?;
    train_and_evaluate(&dataset, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub d: f64,
    pub converged: bool,
    pub final_loss: Option<f64>,
    pub map: Option<f64>,
    /// Divergence or other failure message when not converged.
    pub error: Option<String>,
}

/// Trains one model per `(λ, d)` pair on the same split. A run converges when
/// it finishes the schedule with a finite final loss.
pub fn sweep(dataset: &Dataset, cfg: &ExperimentConfig, lambdas: &[f64], ds: &[f64]) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one lambda".into()));
    }
    if ds.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one d".into()));
    }
    let mut rows = Vec::with_capacity(lambdas.len() * ds.len());
    for &d in ds {
        for &lambda in lambdas {
            let mut run_cfg = cfg.clone();
            run_cfg.train.loss.lambda = lambda;
            run_cfg.train.loss.d = d;
            run_cfg.train.validate()?;
            let row = match train_and_evaluate(dataset, &run_cfg) {
                Ok(out) => {
                    let final_loss = out.checkpoint.state.history.last().map(|r| r.total);
                    SweepRow {
                        lambda,
                        d,
                        converged: final_loss.is_some_and(f64::is_finite),
                        final_loss,
                        map: Some(out.evaluation.retrieval.micro.map),
                        error: None,
                    }
                }
                Err(e @ (Error::Diverged { .. } | Error::NonFinite(_))) => SweepRow {
                    lambda,
                    d,
                    converged: false,
                    final_loss: None,
                    map: None,
                    error: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Sample standard deviation of the converged MAPs at each `d`.
pub fn map_spread(rows: &[SweepRow]) -> BTreeMap<String, f64> {
    let mut by_d: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(m) = r.map {
            by_d.entry(r.d.to_string()).or_default().push(m);
        }
    }
    by_d.into_iter()
        .map(|(d, maps)| {
            let n = maps.len() as f64;
            let mean = maps.iter().sum::<f64>() / n;
            let var = if maps.len() > 1 {
                maps.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (d, var.sqrt())
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda,d,converged,final_loss,map,error\n");
    for r in rows {
        let error = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        out.push_str(&format!(
            "{},{},{},{},{},\"{}\"\n",
            r.lambda,
            r.d,
            r.converged,
            r.final_loss.map(|v| v.to_string()).unwrap_or_default(),
            r.map.map(|v| v.to_string()).unwrap_or_default(),
            error
        ));
    }
    out
}
