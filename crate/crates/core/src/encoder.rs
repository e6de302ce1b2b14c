//! Fully connected encoder mapping view vectors to embeddings, with an exact
//! hand-written backward pass.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{all_finite, FeatureVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidConfig(format!("unknown activation `{other}`"))),
        }
    }
}

/// Layer widths from input to embedding, plus activations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub final_activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>) -> Self {
        Self {
            layer_dims,
            hidden_activation: Activation::Relu,
            final_activation: Activation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "encoder needs at least an input and an output width".into(),
            ));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::InvalidConfig("encoder layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 2 == self.layer_dims.len() {
            self.final_activation
        } else {
            self.hidden_activation
        }
    }
}

/// Weights (row-major, `out × in`) and bias of one affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }
}

/// Parameters of every layer, or gradients with the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros_like(spec: &MlpSpec) -> Self {
        Self {
            layers: spec
                .layer_dims
                .windows(2)
                .map(|w| Layer::zeros(w[0], w[1]))
                .collect(),
        }
    }

    /// Gaussian weights with standard deviation `std`, zero biases.
    pub fn gaussian<R: Rng + ?Sized>(spec: &MlpSpec, std: f64, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::InvalidConfig(format!("encoder init std {std}: {e}")))?;
        let mut params = Self::zeros_like(spec);
        for layer in &mut params.layers {
            layer.weights.iter_mut().for_each(|w| *w = normal.sample(rng));
        }
        Ok(params)
    }

    /// Every parameter in a fixed order (layer by layer, weights then bias).
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// `self += alpha·other`; shapes must match.
    pub fn add_scaled(&mut self, alpha: f64, other: &MlpParams) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += alpha * b;
        }
    }

    fn same_shape(&self, spec: &MlpSpec) -> bool {
        self.layers.len() + 1 == spec.layer_dims.len()
            && self
                .layers
                .iter()
                .zip(spec.layer_dims.windows(2))
                .all(|(l, w)| {
                    l.inputs == w[0]
                        && l.outputs == w[1]
                        && l.weights.len() == w[0] * w[1]
                        && l.bias.len() == w[1]
                })
    }
}

/// Pre-activations and layer inputs recorded by [`Mlp::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// Input to each layer; `layer_inputs[0]` is the network input.
    layer_inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

impl Mlp {
    pub fn new(spec: MlpSpec, params: MlpParams) -> Result<Self> {
        spec.validate()?;
        if !params.same_shape(&spec) {
            return Err(Error::InvalidConfig(
                "encoder parameters do not match the layer widths".into(),
            ));
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn gaussian<R: Rng + ?Sized>(spec: MlpSpec, std: f64, rng: &mut R) -> Result<Self> {
        let params = MlpParams::gaussian(&spec, std, rng)?;
        Self::new(spec, params)
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(FeatureVector, ForwardCache)> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut layer_inputs = Vec::with_capacity(self.params.layers.len());
        let mut pre_activations = Vec::with_capacity(self.params.layers.len());
        let mut x = input.to_vec();
        for (l, layer) in self.params.layers.iter().enumerate() {
            let act = self.spec.activation(l);
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| crate::vector::dot_unchecked(layer.row(o), &x) + layer.bias[o])
                .collect();
            let next = z.iter().map(|&v| act.apply(v)).collect();
            layer_inputs.push(std::mem::replace(&mut x, next));
            pre_activations.push(z);
        }
        Ok((
            x,
            ForwardCache {
                layer_inputs,
                pre_activations,
            },
        ))
    }

    /// Embedding only, without keeping the cache.
    pub fn embed(&self, input: &[f64]) -> Result<FeatureVector> {
        self.forward(input).map(|(f, _)| f)
    }

    /// Gradients of `⟨grad_out, forward(input)⟩` w.r.t. the parameters and
    /// the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &[f64],
    ) -> Result<(MlpParams, Vec<f64>)> {
        let mut grads = MlpParams::zeros_like(&self.spec);
        let grad_in = self.backward_into(cache, grad_out, &mut grads)?;
        Ok((grads, grad_in))
    }

    /// Like [`Mlp::backward`] but accumulates parameter gradients into `acc`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_out: &[f64],
        acc: &mut MlpParams,
    ) -> Result<Vec<f64>> {
        let layers = &self.params.layers;
        if cache.layer_inputs.len() != layers.len()
            || cache
                .layer_inputs
                .iter()
                .zip(layers)
                .any(|(x, l)| x.len() != l.inputs)
        {
            return Err(Error::CacheMismatch(
                "cache was not produced by this encoder".into(),
            ));
        }
        if grad_out.len() != self.embedding_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.embedding_dim(),
                got: grad_out.len(),
            });
        }
        if !all_finite(grad_out) {
            return Err(Error::NonFinite("encoder output gradient".into()));
        }

        let mut upstream = grad_out.to_vec();
        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            let act = self.spec.activation(l);
            let x = &cache.layer_inputs[l];
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&cache.pre_activations[l])
                .map(|(g, &z)| g * act.derivative(z))
                .collect();
            let out = &mut acc.layers[l];
            let mut down = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                out.bias[o] += d;
                let row = o * layer.inputs;
                for i in 0..layer.inputs {
                    out.weights[row + i] += d * x[i];
                    down[i] += d * layer.weights[row + i];
                }
            }
            upstream = down;
        }
        Ok(upstream)
    }
}
