//! Flat run configuration read from TOML with `key=value` overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cip_core::data::SyntheticSpec;
use cip_core::encoder::Activation;
use cip_core::eval::EvalOptions;
use cip_core::experiment::ExperimentConfig;
use cip_core::losses::{parse_terms, LossConfig, LossTerms, Reduction};
use cip_core::trainer::{DivergenceConfig, EncoderConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Every setting of a run. All randomness derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,

    pub num_classes: usize,
    pub objects_per_class: usize,
    pub views_per_object: usize,
    pub input_dim: usize,
    pub class_separation: f64,
    pub view_noise_std: f64,
    pub object_noise_std: f64,
    pub train_fraction: f64,

    pub loss: String,
    pub lambda: f64,
    pub d: f64,
    pub softmax_weight: f64,
    pub center_weight: f64,
    pub triplet_weight: f64,
    pub triplet_margin: f64,
    pub reduction: Reduction,

    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub init_std: f64,
    pub final_activation: Activation,

    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    #[serde(with = "none_or")]
    pub centerline_lr: Option<f64>,
    pub centerline_init_std: f64,
    pub classifier_init_std: f64,

    pub max_centerline_norm: f64,
    pub max_centerline_growth: f64,
    #[serde(with = "none_or")]
    pub collapse_cosine: Option<f64>,

    #[serde(with = "none_or")]
    pub f1_cutoff: Option<usize>,
    #[serde(with = "none_or")]
    pub ndcg_cutoff: Option<usize>,
    pub track_map: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::benchmark(0);
        let data = &exp.data;
        let train = &exp.train;
        let loss = &train.loss;
        let div = &train.divergence;
        Self {
            output_dir: PathBuf::from("run"),
            seed: 0,
            num_classes: data.num_classes,
            objects_per_class: data.objects_per_class,
            views_per_object: data.views_per_object,
            input_dim: data.input_dim,
            class_separation: data.class_separation,
            view_noise_std: data.view_noise_std,
            object_noise_std: data.object_noise_std,
            train_fraction: exp.train_fraction,
            loss: if loss.terms == LossTerms::CIP {
                "cip".into()
            } else {
                loss.terms.to_string()
            },
            lambda: loss.lambda,
            d: loss.d,
            softmax_weight: loss.softmax_weight,
            center_weight: loss.center_weight,
            triplet_weight: loss.triplet_weight,
            triplet_margin: loss.triplet_margin,
            reduction: loss.reduction,
            hidden: train.encoder.hidden.clone(),
            embedding_dim: train.encoder.embedding_dim,
            init_std: train.encoder.init_std,
            final_activation: train.encoder.final_activation,
            batch_size: train.batch_size,
            epochs: train.epochs,
            lr: train.lr0,
            lr_drop_epoch: train.lr_drop_epoch,
            lr_drop_factor: train.lr_drop_factor,
            momentum: train.momentum,
            weight_decay: train.weight_decay,
            centerline_lr: train.centerline_lr,
            centerline_init_std: train.centerline_init_std,
            classifier_init_std: train.classifier_init_std,
            max_centerline_norm: div.max_centerline_norm,
            max_centerline_growth: div.max_centerline_growth,
            collapse_cosine: div.collapse_cosine,
            f1_cutoff: exp.eval.f1_cutoff,
            ndcg_cutoff: exp.eval.ndcg_cutoff,
            track_map: exp.track_map,
        }
    }
}

/// Optional settings are written as their value or the string `"none"`,
/// so a saved config states every choice explicitly.
mod none_or {
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Serialize, S: Serializer>(v: &Option<T>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => x.serialize(s),
            None => s.serialize_str("none"),
        }
    }

    pub fn deserialize<'de, T: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<Option<T>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw<T> {
            Value(T),
            Text(String),
        }
        match Raw::<T>::deserialize(d)? {
            Raw::Value(x) => Ok(Some(x)),
            Raw::Text(t) if t == "none" => Ok(None),
            Raw::Text(t) => Err(D::Error::custom(format!("expected a value or \"none\", got \"{t}\""))),
        }
    }
}

/// One line of documentation per key, in file order.
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("output_dir", "directory for every artifact of the command"),
    ("seed", "seed for data generation, the split, initialisation and shuffling"),
    ("num_classes", "number of synthetic classes K"),
    ("objects_per_class", "objects generated per class"),
    ("views_per_object", "views rendered per object"),
    ("input_dim", "dimension of a view vector"),
    ("class_separation", "distance of class prototypes from the origin"),
    ("view_noise_std", "per-view Gaussian noise"),
    ("object_noise_std", "per-object offset from the class prototype"),
    ("train_fraction", "fraction of each class's objects used for training"),
    ("loss", "terms joined by '+': cip, cluster, ortho, ortho_batch, softmax, center, triplet"),
    ("lambda", "weight of the orthogonality term"),
    ("d", "offset in the cluster term 1/(f.c + d)"),
    ("softmax_weight", "weight of softmax cross-entropy"),
    ("center_weight", "weight of the center loss"),
    ("triplet_weight", "weight of the batch-hard triplet loss"),
    ("triplet_margin", "triplet margin on squared distances"),
    ("reduction", "mean or sum over the batch for cluster, ortho and center"),
    ("hidden", "hidden layer widths of the encoder, e.g. [64] or []"),
    ("embedding_dim", "embedding dimension n"),
    ("init_std", "std of the Gaussian encoder weights"),
    ("final_activation", "identity or relu on the embedding layer"),
    ("batch_size", "minibatch size"),
    ("epochs", "training epochs"),
    ("lr", "initial learning rate"),
    ("lr_drop_epoch", "epoch at which the learning rate is divided"),
    ("lr_drop_factor", "divisor applied at lr_drop_epoch"),
    ("momentum", "SGD momentum"),
    ("weight_decay", "L2 weight decay on encoder and classifier"),
    ("centerline_lr", "base rate for centerlines and class centers, or none to use lr"),
    ("centerline_init_std", "std of the Gaussian centerline initialisation"),
    ("classifier_init_std", "std of the Gaussian softmax weights"),
    ("max_centerline_norm", "divergence: largest allowed centerline norm"),
    ("max_centerline_growth", "divergence: largest allowed growth over the initial norm"),
    ("collapse_cosine", "divergence: optional pairwise centerline cosine limit, or none"),
    ("f1_cutoff", "F1 cutoff, or none for the number of relevant items"),
    ("ndcg_cutoff", "NDCG cutoff, or none for the full ranking"),
    ("track_map", "record test MAP after every epoch"),
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Parses an override value as TOML, falling back to a bare string so that
/// `loss=cip+softmax` needs no quotes.
fn parse_value(raw: &str) -> Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides in order and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            let raw = raw.trim();
            if !KEY_DOCS.iter().any(|(k, _)| *k == key) {
                return Err(ConfigError(format!("unknown config key `{key}`")));
            }
            table.insert(key.to_string(), parse_value(raw));
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(e.message().to_string()))?;
        cfg.experiment()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        let (terms, variant) = parse_terms(&self.loss).map_err(|e| ConfigError(e.to_string()))?;
        let data = SyntheticSpec {
            num_classes: self.num_classes,
            objects_per_class: self.objects_per_class,
            views_per_object: self.views_per_object,
            input_dim: self.input_dim,
            class_separation: self.class_separation,
            view_noise_std: self.view_noise_std,
            object_noise_std: self.object_noise_std,
            seed: self.seed,
        };
        let loss = LossConfig {
            terms,
            lambda: self.lambda,
            d: self.d,
            softmax_weight: self.softmax_weight,
            center_weight: self.center_weight,
            triplet_weight: self.triplet_weight,
            triplet_margin: self.triplet_margin,
            ortho_variant: variant.unwrap_or_default(),
            reduction: self.reduction,
        };
        let train = TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr0: self.lr,
            lr_drop_epoch: self.lr_drop_epoch,
            lr_drop_factor: self.lr_drop_factor,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            centerline_lr: self.centerline_lr,
            centerline_init_std: self.centerline_init_std,
            classifier_init_std: self.classifier_init_std,
            encoder: EncoderConfig {
                hidden: self.hidden.clone(),
                embedding_dim: self.embedding_dim,
                init_std: self.init_std,
                final_activation: self.final_activation,
            },
            divergence: DivergenceConfig {
                max_centerline_norm: self.max_centerline_norm,
                max_centerline_growth: self.max_centerline_growth,
                collapse_cosine: self.collapse_cosine,
            },
            seed: self.seed,
            loss,
        };
        let err = |e: cip_core::Error| ConfigError(e.to_string());
        data.validate().map_err(err)?;
        train.validate().map_err(err)?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(ConfigError(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(ExperimentConfig {
            data,
            train_fraction: self.train_fraction,
            train,
            eval: EvalOptions {
                f1_cutoff: self.f1_cutoff,
                ndcg_cutoff: self.ndcg_cutoff,
            },
            track_map: self.track_map,
        })
    }
}

/// Key, default and description of every setting, for `--help`.
pub fn key_table() -> String {
    let defaults = match Value::try_from(RunConfig::default()) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("config serialises to a table"),
    };
    let width = KEY_DOCS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (TOML file via --config, or --set key=value):\n");
    for (key, doc) in KEY_DOCS {
        let default = match defaults.get(*key) {
            Some(Value::String(v)) => v.clone(),
            Some(v) => v.to_string(),
            None => unreachable!("every key has a default"),
        };
        let _ = writeln!(out, "  {key:<width$}  {doc} [default: {default}]");
    }
    out
}
