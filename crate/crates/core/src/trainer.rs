//! Mini-batch SGD over the encoder, the centerline bank and the auxiliary
//! baseline parameters.
//!
//! The loop is sequential and all randomness (initialisation and the
//! per-epoch permutation) comes from one ChaCha stream seeded by
//! `TrainConfig::seed`, so identical configs give bit-identical histories.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ViewRecord};
use crate::encoder::{Activation, Mlp, MlpParams, MlpSpec};
use crate::error::{Error, Result};
use crate::eval::max_pairwise_cosine;
use crate::losses::{self, CenterlineBank, LabeledBatch, LinearClassifier, LossConfig, LossInputs};
use crate::vector::{all_finite, norm};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Hidden layer widths between the input and the embedding.
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub init_std: f64,
    pub final_activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            embedding_dim: 3,
            init_std: 0.01,
            final_activation: Activation::Identity,
        }
    }
}

impl EncoderConfig {
    pub fn spec(&self, input_dim: usize) -> MlpSpec {
        let mut layer_dims = Vec::with_capacity(self.hidden.len() + 2);
        layer_dims.push(input_dim);
        layer_dims.extend(&self.hidden);
        layer_dims.push(self.embedding_dim);
        MlpSpec {
            layer_dims,
            hidden_activation: Activation::Relu,
            final_activation: self.final_activation,
        }
    }
}

/// Thresholds that mark a run as diverged. Checked after every epoch on
/// runs whose objective maintains centerlines; non-finite values abort every
/// run immediately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceConfig {
    /// Largest allowed centerline norm.
    pub max_centerline_norm: f64,
    /// Largest allowed ratio of the current to the initial max centerline
    /// norm.
    pub max_centerline_growth: f64,
    /// Optional collapse check: centerlines whose pairwise cosine exceeds
    /// this have folded onto one direction. Off by default since a collapsed
    /// bank is a poor optimum rather than a numerical blow-up.
    pub collapse_cosine: Option<f64>,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            max_centerline_norm: 1e3,
            max_centerline_growth: 1e4,
            collapse_cosine: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Base rate for centerlines and class centers; follows the same drop.
    /// `None` uses `lr0`.
    pub centerline_lr: Option<f64>,
    pub centerline_init_std: f64,
    pub classifier_init_std: f64,
    pub encoder: EncoderConfig,
    pub divergence: DivergenceConfig,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            epochs: 30,
            lr0: 0.01,
            lr_drop_epoch: 20,
            lr_drop_factor: 5.0,
            momentum: 0.9,
            weight_decay: 2e-4,
            centerline_lr: None,
            centerline_init_std: 0.01,
            classifier_init_std: 0.01,
            encoder: EncoderConfig::default(),
            divergence: DivergenceConfig::default(),
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let positive_counts = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("lr_drop_epoch", self.lr_drop_epoch),
            ("embedding_dim", self.encoder.embedding_dim),
        ];
        for (name, v) in positive_counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.encoder.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        let positive = [
            ("lr0", self.lr0),
            ("lr_drop_factor", self.lr_drop_factor),
            ("centerline_lr", self.centerline_lr.unwrap_or(self.lr0)),
            ("max_centerline_norm", self.divergence.max_centerline_norm),
            ("max_centerline_growth", self.divergence.max_centerline_growth),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        let nonneg = [
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("centerline_init_std", self.centerline_init_std),
            ("classifier_init_std", self.classifier_init_std),
            ("encoder.init_std", self.encoder.init_std),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn drop_multiplier(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_drop_epoch {
            1.0 / self.lr_drop_factor
        } else {
            1.0
        }
    }

    fn centerline_lr_at(&self, epoch: usize) -> f64 {
        self.centerline_lr.unwrap_or(self.lr0) * self.drop_multiplier(epoch)
    }
}

/// Encoder learning rate for zero-based `epoch`: `lr0` before
/// `lr_drop_epoch`, `lr0 / lr_drop_factor` from then on.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::InvalidConfig(format!(
            "epoch {epoch} outside a {}-epoch schedule",
            cfg.epochs
        )));
    }
    Ok(cfg.lr0 * cfg.drop_multiplier(epoch))
}

/// One epoch of the training history. Term values are means over the
/// epoch's batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub terms: BTreeMap<String, f64>,
    pub max_centerline_norm: f64,
    pub max_centerline_cosine: f64,
    /// Optional evaluation metric supplied by the caller (test MAP).
    pub eval_map: Option<f64>,
}

/// Header and rows of the training-history CSV.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,total");
    for name in losses::TERM_NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",max_centerline_norm,max_centerline_cosine,eval_map\n");
    for r in history {
        out.push_str(&format!("{},{},{}", r.epoch, r.lr, r.total));
        for name in losses::TERM_NAMES {
            out.push(',');
            if let Some(v) = r.terms.get(name) {
                out.push_str(&v.to_string());
            }
        }
        out.push_str(&format!(
            ",{},{},{}\n",
            r.max_centerline_norm,
            r.max_centerline_cosine,
            r.eval_map.map(|m| m.to_string()).unwrap_or_default()
        ));
    }
    out
}

/// Gradients for every trainable group.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrads {
    pub encoder: MlpParams,
    pub centerlines: Vec<Vec<f64>>,
    pub class_centers: Vec<Vec<f64>>,
    pub classifier_weights: Vec<Vec<f64>>,
    pub classifier_bias: Vec<f64>,
}

impl StateGrads {
    fn is_finite(&self) -> bool {
        self.encoder.is_finite()
            && self.centerlines.iter().all(|v| all_finite(v))
            && self.class_centers.iter().all(|v| all_finite(v))
            && self.classifier_weights.iter().all(|v| all_finite(v))
            && all_finite(&self.classifier_bias)
    }
}

/// Learnable parameters with their momentum buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub encoder: Mlp,
    pub encoder_velocity: MlpParams,
    pub centerlines: CenterlineBank,
    pub centerline_velocity: Vec<Vec<f64>>,
    pub class_centers: CenterlineBank,
    pub class_center_velocity: Vec<Vec<f64>>,
    pub classifier: LinearClassifier,
    pub classifier_weight_velocity: Vec<Vec<f64>>,
    pub classifier_bias_velocity: Vec<f64>,
    /// Epochs completed.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    initial_max_centerline_norm: f64,
}

impl TrainState {
    /// Fresh state: Gaussian encoder weights, Gaussian centerlines and
    /// classifier weights, zero class centers and zero momentum.
    pub fn init(
        cfg: &TrainConfig,
        input_dim: usize,
        num_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let n = cfg.encoder.embedding_dim;
        let spec = cfg.encoder.spec(input_dim);
        let encoder = Mlp::gaussian(spec.clone(), cfg.encoder.init_std, rng)?;
        let centerlines = CenterlineBank::gaussian(num_classes, n, cfg.centerline_init_std, rng)?;
        let classifier = LinearClassifier::gaussian(num_classes, n, cfg.classifier_init_std, rng);
        let initial = centerlines
            .centers()
            .iter()
            .map(|c| norm(c))
            .fold(0.0, f64::max);
        Ok(Self {
            encoder_velocity: MlpParams::zeros_like(&spec),
            encoder,
            centerline_velocity: vec![vec![0.0; n]; num_classes],
            centerlines,
            class_centers: CenterlineBank::zeros(num_classes, n)?,
            class_center_velocity: vec![vec![0.0; n]; num_classes],
            classifier,
            classifier_weight_velocity: vec![vec![0.0; n]; num_classes],
            classifier_bias_velocity: vec![0.0; num_classes],
            epoch: 0,
            history: Vec::new(),
            initial_max_centerline_norm: initial,
        })
    }

    fn loss_inputs(&self) -> LossInputs<'_> {
        LossInputs {
            centerlines: &self.centerlines,
            classifier: &self.classifier,
            class_centers: &self.class_centers,
        }
    }

    pub fn max_centerline_norm(&self) -> f64 {
        self.centerlines
            .centers()
            .iter()
            .map(|c| norm(c))
            .fold(0.0, f64::max)
    }
}

/// Momentum SGD for one parameter group:
/// `v ← μ·v − lr·(g + decay·θ)`, `θ ← θ + v`.
pub fn sgd_update<'a>(
    params: impl Iterator<Item = &'a mut f64>,
    velocity: impl Iterator<Item = &'a mut f64>,
    grads: impl Iterator<Item = &'a f64>,
    lr: f64,
    momentum: f64,
    decay: f64,
) {
    for ((p, v), g) in params.zip(velocity).zip(grads) {
        *v = momentum * *v - lr * (g + decay * *p);
        *p += *v;
    }
}

/// Applies one update to every group. Encoder and classifier use `lr` with
/// weight decay; centerlines and class centers use `centerline_lr` without
/// decay. Non-finite gradients leave the state untouched and return an error.
pub fn sgd_step(
    state: &mut TrainState,
    grads: &StateGrads,
    lr: f64,
    centerline_lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    sgd_update(
        state.encoder.params.iter_mut(),
        state.encoder_velocity.iter_mut(),
        grads.encoder.iter(),
        lr,
        momentum,
        weight_decay,
    );
    sgd_update(
        state.classifier.weights.iter_mut().flatten(),
        state.classifier_weight_velocity.iter_mut().flatten(),
        grads.classifier_weights.iter().flatten(),
        lr,
        momentum,
        weight_decay,
    );
    sgd_update(
        state.classifier.bias.iter_mut(),
        state.classifier_bias_velocity.iter_mut(),
        grads.classifier_bias.iter(),
        lr,
        momentum,
        weight_decay,
    );
    sgd_update(
        state.centerlines.centers_mut().iter_mut().flatten(),
        state.centerline_velocity.iter_mut().flatten(),
        grads.centerlines.iter().flatten(),
        centerline_lr,
        momentum,
        0.0,
    );
    sgd_update(
        state.class_centers.centers_mut().iter_mut().flatten(),
        state.class_center_velocity.iter_mut().flatten(),
        grads.class_centers.iter().flatten(),
        centerline_lr,
        momentum,
        0.0,
    );
    Ok(())
}

/// Encoder, centerlines and optimiser state, with the config that produced
/// them. Serialised as JSON; `format_version` guards the layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub num_classes: usize,
    pub input_dim: usize,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    pub fn encoder(&self) -> &Mlp {
        &self.state.encoder
    }

    pub fn centerlines(&self) -> &CenterlineBank {
        &self.state.centerlines
    }
}

/// Sequential trainer over a fixed set of view records.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    records: Vec<&'a ViewRecord>,
    num_classes: usize,
    input_dim: usize,
    rng: ChaCha8Rng,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    /// Trains on the dataset's training records (all records when no split
    /// is assigned).
    pub fn new(dataset: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let records = dataset.training_records();
        if records.is_empty() {
            return Err(Error::Empty("no training records"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let state = TrainState::init(&cfg, dataset.input_dim, dataset.num_classes, &mut rng)?;
        Ok(Self {
            cfg,
            records,
            num_classes: dataset.num_classes,
            input_dim: dataset.input_dim,
            rng,
            state,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            state: self.state.clone(),
        }
    }

    fn batch_step(&mut self, batch: &[usize], lr: f64, cl_lr: f64) -> Result<losses::LossReport> {
        let mut features = Vec::with_capacity(batch.len());
        let mut caches = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for &i in batch {
            let record = self.records[i];
            let (f, cache) = self.state.encoder.forward(&record.input)?;
            features.push(f);
            caches.push(cache);
            labels.push(record.label);
        }
        let labeled = LabeledBatch::new(features, labels)?;
        let report = losses::evaluate(&labeled, self.state.loss_inputs(), &self.cfg.loss)?;
        if !report.total.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }

        let mut encoder_grads = MlpParams::zeros_like(&self.state.encoder.spec);
        for (cache, g) in caches.iter().zip(&report.feature_grads) {
            self.state.encoder.backward_into(cache, g, &mut encoder_grads)?;
        }
        let grads = StateGrads {
            encoder: encoder_grads,
            centerlines: report.center_grads.clone(),
            class_centers: report.class_center_grads.clone(),
            classifier_weights: report.classifier_weight_grads.clone(),
            classifier_bias: report.classifier_bias_grads.clone(),
        };
        sgd_step(
            &mut self.state,
            &grads,
            lr,
            cl_lr,
            self.cfg.momentum,
            self.cfg.weight_decay,
        )?;
        Ok(report)
    }

    /// Checks the state after an epoch; `Some(reason)` means diverged.
    fn divergence_reason(&self) -> Option<String> {
        let s = &self.state;
        if !s.encoder.params.is_finite()
            || !s.centerlines.centers().iter().all(|c| all_finite(c))
            || !s.classifier.weights.iter().all(|w| all_finite(w))
        {
            return Some("non-finite parameters".into());
        }
        if !self.cfg.loss.terms.uses_centerlines(self.cfg.loss.ortho_variant) {
            return None;
        }
        let d = &self.cfg.divergence;
        let max_norm = s.max_centerline_norm();
        if max_norm > d.max_centerline_norm {
            return Some(format!(
                "centerline norm {max_norm:.4e} exceeds {:.4e}",
                d.max_centerline_norm
            ));
        }
        if s.initial_max_centerline_norm > 0.0
            && max_norm > d.max_centerline_growth * s.initial_max_centerline_norm
        {
            return Some(format!(
                "centerline norm grew {:.4e}x from initialisation (limit {:.4e}x)",
                max_norm / s.initial_max_centerline_norm,
                d.max_centerline_growth
            ));
        }
        if let Some(limit) = d.collapse_cosine {
            let cos = max_pairwise_cosine(&s.centerlines);
            if cos > limit {
                return Some(format!(
                    "centerlines collapsed: pairwise cosine {cos:.6} exceeds {limit}"
                ));
            }
        }
        None
    }

    fn diverged(&self, reason: String, last_good: Checkpoint) -> Error {
        Error::Diverged {
            epoch: self.state.epoch,
            reason,
            last_good: Box::new(last_good),
        }
    }

    /// Runs one epoch and appends its record to the history.
    ///
    /// `evaluate` may return a metric (e.g. test MAP) recorded with the epoch.
    pub fn run_epoch(
        &mut self,
        evaluate: &mut dyn FnMut(&TrainState) -> Option<f64>,
    ) -> Result<&EpochRecord> {
        let epoch = self.state.epoch;
        let lr = lr_at(epoch, &self.cfg)?;
        let cl_lr = self.cfg.centerline_lr_at(epoch);
        let last_good = self.checkpoint();

        let mut order: Vec<usize> = (0..self.records.len()).collect();
        order.shuffle(&mut self.rng);

        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let report = match self.batch_step(chunk, lr, cl_lr) {
                Ok(r) => r,
                Err(Error::NonFinite(what)) => {
                    return Err(self.diverged(format!("non-finite {what}"), last_good))
                }
                Err(e) => return Err(e),
            };
            for (k, v) in &report.per_term {
                *sums.entry(k.clone()).or_default() += v;
            }
            total += report.total;
            batches += 1;
        }
        self.state.epoch += 1;

        if let Some(reason) = self.divergence_reason() {
            return Err(self.diverged(reason, last_good));
        }

        let inv = 1.0 / batches as f64;
        let eval_map = evaluate(&self.state);
        self.state.history.push(EpochRecord {
            epoch,
            lr,
            total: total * inv,
            terms: sums.into_iter().map(|(k, v)| (k, v * inv)).collect(),
            max_centerline_norm: self.state.max_centerline_norm(),
            max_centerline_cosine: max_pairwise_cosine(&self.state.centerlines),
            eval_map,
        });
        Ok(self.state.history.last().expect("just pushed"))
    }

    /// Runs the remaining epochs of the schedule.
    pub fn run(mut self, evaluate: &mut dyn FnMut(&TrainState) -> Option<f64>) -> Result<Checkpoint> {
        while self.state.epoch < self.cfg.epochs {
            self.run_epoch(evaluate)?;
        }
        Ok(self.checkpoint())
    }
}

/// Trains from scratch on `dataset` and returns the final checkpoint, whose
/// state carries the encoder, the centerline bank and the history.
pub fn train(dataset: &Dataset, cfg: TrainConfig) -> Result<Checkpoint> {
    Trainer::new(dataset, cfg)?.run(&mut |_| None)
}
