//! Loss terms, their gradients and the weighted combination used in training.
//!
//! Class labels are zero-based indices `0..K` throughout the library.

pub mod baseline;
pub mod cip;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use baseline::{
    batch_hard_triplet, center_loss, softmax_ce, triplet_loss, CenterOutput, LinearClassifier,
    SoftmaxOutput, TripletOutput,
};
pub use cip::{
    cip_forward, cluster_forward, cluster_forward_unclipped, cluster_grad_centerline,
    cluster_grad_feature, cluster_grad_feature_origin, normalized_weight_gradient,
    ortho_batch_forward, ortho_batch_grad_feature, ortho_forward, ortho_grad_centerline,
    ortho_grad_feature,
};

use crate::error::{Error, Result};
use crate::vector::{all_finite, axpy, FeatureVector};

/// One learnable vector per class. Used both for CIP centerlines (directions)
/// and for center-loss centers (points).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterlineBank {
    centers: Vec<Vec<f64>>,
}

impl CenterlineBank {
    pub fn new(centers: Vec<Vec<f64>>) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "a centerline bank needs at least 2 classes, got {}",
                centers.len()
            )));
        }
        let dim = centers[0].len();
        if dim == 0 {
            return Err(Error::Empty("centerline dimension is zero"));
        }
        for c in &centers {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.len(),
                });
            }
            if !all_finite(c) {
                return Err(Error::NonFinite("centerline bank".into()));
            }
        }
        Ok(Self { centers })
    }

    /// Centers drawn i.i.d. from `N(0, std²)`.
    pub fn gaussian<R: Rng + ?Sized>(
        classes: usize,
        dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::InvalidConfig(format!("centerline init std {std}: {e}")))?;
        Self::new(
            (0..classes)
                .map(|_| (0..dim).map(|_| normal.sample(rng)).collect())
                .collect(),
        )
    }

    pub fn zeros(classes: usize, dim: usize) -> Result<Self> {
        Self::new(vec![vec![0.0; dim]; classes])
    }

    pub fn num_classes(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn center(&self, k: usize) -> &[f64] {
        &self.centers[k]
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub(crate) fn centers_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.centers
    }

    pub(crate) fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_classes() {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.num_classes(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: dim,
            });
        }
        Ok(())
    }
}

/// Features of one mini-batch with their class labels. Position `i` in the
/// batch is the routing key for `LossReport::feature_grads[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    features: Vec<FeatureVector>,
    labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(features: Vec<FeatureVector>, labels: Vec<usize>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("batch has no features"));
        }
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                got: labels.len(),
            });
        }
        let dim = features[0].len();
        for f in &features {
            if f.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: f.len(),
                });
            }
            if !all_finite(f) {
                return Err(Error::NonFinite("batch feature".into()));
            }
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.features
            .iter()
            .zip(&self.labels)
            .map(|(f, &y)| (f.as_slice(), y))
    }

    pub(crate) fn check_labels(&self, classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&y| y >= classes) {
            Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
            None => Ok(()),
        }
    }

    pub(crate) fn check_against(&self, bank: &CenterlineBank) -> Result<()> {
        bank.check_dim(self.dim())?;
        self.check_labels(bank.num_classes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrthoVariant {
    /// Feature against other classes' centerlines.
    #[default]
    Centerline,
    /// Feature against other-class features in the same batch.
    Batch,
}

/// How the batch-summed terms (cluster, ortho, center) enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Divide their values and feature gradients by the batch size, matching
    /// the per-sample scale of softmax and triplet. Centerline and class
    /// center gradients keep their closed forms.
    #[default]
    Mean,
    /// Use the sums as they are.
    Sum,
}

/// Which loss terms contribute to the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub cluster: bool,
    pub ortho: bool,
    pub softmax: bool,
    pub center: bool,
    pub triplet: bool,
}

impl LossTerms {
    pub const CIP: LossTerms = LossTerms {
        cluster: true,
        ortho: true,
        softmax: false,
        center: false,
        triplet: false,
    };

    pub fn any(&self) -> bool {
        self.cluster || self.ortho || self.softmax || self.center || self.triplet
    }

    /// True when the objective maintains centerlines.
    pub fn uses_centerlines(&self, variant: OrthoVariant) -> bool {
        self.cluster || (self.ortho && variant == OrthoVariant::Centerline)
    }
}

/// Parses `+`-joined term names such as `cip+softmax` or `cluster+ortho_batch`.
///
/// `cip` expands to `cluster+ortho`. `ortho_batch` selects the ortho term
/// with the batch variant; the variant is returned alongside when named.
pub fn parse_terms(spec: &str) -> Result<(LossTerms, Option<OrthoVariant>)> {
    let mut terms = LossTerms::default();
    let mut variant = None;
    for raw in spec.split('+') {
        match raw.trim().to_ascii_lowercase().as_str() {
            "cip" => {
                terms.cluster = true;
                terms.ortho = true;
            }
            "cluster" => terms.cluster = true,
            "ortho" => terms.ortho = true,
            "ortho_batch" => {
                terms.ortho = true;
                variant = Some(OrthoVariant::Batch);
            }
            "softmax" => terms.softmax = true,
            "center" => terms.center = true,
            "triplet" => terms.triplet = true,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown loss term `{other}` in `{spec}`"
                )))
            }
        }
    }
    if variant == Some(OrthoVariant::Batch) && spec.split('+').any(|t| t.trim() == "ortho") {
        return Err(Error::InvalidConfig(format!(
            "`{spec}` names both ortho variants"
        )));
    }
    Ok((terms, variant))
}

impl fmt::Display for LossTerms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.cluster, "cluster"),
            (self.ortho, "ortho"),
            (self.softmax, "softmax"),
            (self.center, "center"),
            (self.triplet, "triplet"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        write!(f, "{}", names.join("+"))
    }
}

impl FromStr for LossTerms {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_terms(s).map(|(t, _)| t)
    }
}

/// Weights and constants of the combined objective
/// `cluster + λ·ortho + w_softmax·softmax + w_center·center + w_triplet·triplet`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub terms: LossTerms,
    pub lambda: f64,
    pub d: f64,
    pub softmax_weight: f64,
    pub center_weight: f64,
    pub triplet_weight: f64,
    pub triplet_margin: f64,
    pub ortho_variant: OrthoVariant,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            terms: LossTerms::CIP,
            lambda: 1.0,
            d: 2.0,
            softmax_weight: 0.1,
            center_weight: 0.0003,
            triplet_weight: 1.0,
            triplet_margin: 1.0,
            ortho_variant: OrthoVariant::Centerline,
            reduction: Reduction::Mean,
        }
    }
}

pub const TERM_NAMES: [&str; 6] = ["cluster", "ortho", "ortho_batch", "softmax", "center", "triplet"];

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda", self.lambda),
            ("softmax_weight", self.softmax_weight),
            ("center_weight", self.center_weight),
            ("triplet_weight", self.triplet_weight),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "d must be positive and finite, got {}",
                self.d
            )));
        }
        if !(self.triplet_margin > 0.0 && self.triplet_margin.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "triplet_margin must be positive, got {}",
                self.triplet_margin
            )));
        }
        if !self.terms.any() {
            return Err(Error::InvalidConfig("no loss terms enabled".into()));
        }
        Ok(())
    }

    /// Name under which the enabled Ortho term is reported.
    fn ortho_name(&self) -> &'static str {
        match self.ortho_variant {
            OrthoVariant::Centerline => "ortho",
            OrthoVariant::Batch => "ortho_batch",
        }
    }

    /// Weight applied to `term` in the total (0 when disabled).
    pub fn weight_of(&self, term: &str) -> f64 {
        let t = &self.terms;
        match term {
            "cluster" if t.cluster => 1.0,
            "ortho" | "ortho_batch" if t.ortho && term == self.ortho_name() => self.lambda,
            "softmax" if t.softmax => self.softmax_weight,
            "center" if t.center => self.center_weight,
            "triplet" if t.triplet => self.triplet_weight,
            _ => 0.0,
        }
    }
}

/// Borrowed learnable state the losses read.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub centerlines: &'a CenterlineBank,
    pub classifier: &'a LinearClassifier,
    pub class_centers: &'a CenterlineBank,
}

/// Loss values and gradients of the weighted objective for one batch.
///
/// `per_term` holds unweighted term values; `term_weights` the weights they
/// enter `total` with. Gradient arrays always have full shape and stay
/// zero for disabled terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub per_term: BTreeMap<String, f64>,
    pub term_weights: BTreeMap<String, f64>,
    pub feature_grads: Vec<FeatureVector>,
    pub center_grads: Vec<FeatureVector>,
    pub class_center_grads: Vec<FeatureVector>,
    pub classifier_weight_grads: Vec<Vec<f64>>,
    pub classifier_bias_grads: Vec<f64>,
}

/// Evaluates every enabled term on `batch` and assembles the weighted
/// gradients for features, centerlines, class centers and the classifier.
pub fn evaluate(batch: &LabeledBatch, inputs: LossInputs<'_>, cfg: &LossConfig) -> Result<LossReport> {
    cfg.validate()?;
    let bank = inputs.centerlines;
    batch.check_against(bank)?;
    batch.check_against(inputs.class_centers)?;
    let k = bank.num_classes();
    let n = bank.dim();
    let m = batch.len();
    let terms = cfg.terms;
    let scale = match cfg.reduction {
        Reduction::Mean => 1.0 / m as f64,
        Reduction::Sum => 1.0,
    };

    let mut per_term = BTreeMap::new();
    let mut term_weights = BTreeMap::new();
    let mut feature_grads = vec![vec![0.0; n]; m];
    let mut center_grads = vec![vec![0.0; n]; k];
    let mut class_center_grads = vec![vec![0.0; n]; k];
    let mut classifier_weight_grads = vec![vec![0.0; inputs.classifier.dim()]; inputs.classifier.num_classes()];
    let mut classifier_bias_grads = vec![0.0; inputs.classifier.num_classes()];

    if terms.cluster {
        per_term.insert("cluster".to_string(), scale * cluster_forward(batch, bank, cfg.d)?);
        for (i, (f, y)) in batch.iter().enumerate() {
            let g = cluster_grad_feature(f, bank.center(y), cfg.d)?;
            axpy(scale, &g, &mut feature_grads[i]);
        }
        for (class, grad) in center_grads.iter_mut().enumerate() {
            axpy(1.0, &cluster_grad_centerline(batch, bank, class, cfg.d)?, grad);
        }
    }

    if terms.ortho {
        let lambda = cfg.lambda * scale;
        match cfg.ortho_variant {
            OrthoVariant::Centerline => {
                per_term.insert("ortho".to_string(), scale * ortho_forward(batch, bank)?);
                for (i, (f, y)) in batch.iter().enumerate() {
                    axpy(lambda, &ortho_grad_feature(f, bank, y)?, &mut feature_grads[i]);
                }
                for (class, grad) in center_grads.iter_mut().enumerate() {
                    axpy(cfg.lambda, &ortho_grad_centerline(batch, bank, class)?, grad);
                }
            }
            OrthoVariant::Batch => {
                per_term.insert("ortho_batch".to_string(), scale * ortho_batch_forward(batch));
                for (i, grad) in feature_grads.iter_mut().enumerate() {
                    axpy(lambda, &ortho_batch_grad_feature(batch, i)?, grad);
                }
            }
        }
    }

    if terms.softmax {
        let out = softmax_ce(batch, inputs.classifier)?;
        let w = cfg.softmax_weight;
        per_term.insert("softmax".to_string(), out.loss);
        for (acc, g) in feature_grads.iter_mut().zip(&out.feature_grads) {
            axpy(w, g, acc);
        }
        for (acc, g) in classifier_weight_grads.iter_mut().zip(&out.weight_grads) {
            axpy(w, g, acc);
        }
        axpy(w, &out.bias_grads, &mut classifier_bias_grads);
    }

    if terms.center {
        let out = center_loss(batch, inputs.class_centers)?;
        per_term.insert("center".to_string(), scale * out.loss);
        for (acc, g) in feature_grads.iter_mut().zip(&out.feature_grads) {
            axpy(cfg.center_weight * scale, g, acc);
        }
        // centers follow their own averaged update, not scaled by the loss weight
        class_center_grads = out.center_grads;
    }

    if terms.triplet {
        let (loss, grads) = batch_hard_triplet(batch, cfg.triplet_margin)?;
        per_term.insert("triplet".to_string(), loss);
        for (acc, g) in feature_grads.iter_mut().zip(&grads) {
            axpy(cfg.triplet_weight, g, acc);
        }
    }

    let mut total = 0.0;
    for (name, value) in &per_term {
        let w = cfg.weight_of(name);
        term_weights.insert(name.clone(), w);
        total += w * value;
    }

    Ok(LossReport {
        total,
        per_term,
        term_weights,
        feature_grads,
        center_grads,
        class_center_grads,
        classifier_weight_grads,
        classifier_bias_grads,
    })
}
