//! Finite-difference helpers and random instances kept away from the hinge,
//! clip and ReLU kinks.

use cip_core::encoder::{Activation, Mlp, MlpSpec};
use cip_core::losses::{CenterlineBank, LabeledBatch};
use cip_core::vector::dot;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const INSTANCES: usize = 200;
pub const KINK_MARGIN: f64 = 1e-3;
// perturbations of up to 2H stay well inside the kink margin
pub const H: f64 = 5e-5;
pub const LOSS_TOL: f64 = 1e-5;
pub const ENCODER_TOL: f64 = 1e-6;

pub fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Five-point central difference of `f` along every coordinate of `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut at = |i: usize, offset: f64, probe: &mut Vec<f64>| {
        let orig = probe[i];
        probe[i] = orig + offset;
        let v = f(probe);
        probe[i] = orig;
        v
    };
    (0..x.len())
        .map(|i| {
            let p2 = at(i, 2.0 * H, &mut probe);
            let p1 = at(i, H, &mut probe);
            let m1 = at(i, -H, &mut probe);
            let m2 = at(i, -2.0 * H, &mut probe);
            (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * H)
        })
        .collect()
}

/// Norm-wise relative error with a small floor for gradients that vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-4);
    diff / scale
}

pub fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64, what: &str) {
    let err = rel_err(analytic, numeric);
    assert!(
        err <= tol,
        "{what}: relative error {err:e} > {tol:e}\nanalytic {analytic:?}\nnumeric  {numeric:?}"
    );
}

pub struct Instance {
    pub batch: LabeledBatch,
    pub bank: CenterlineBank,
}

/// Draws a batch whose features all have `fᵀc_y > δ` and `|fᵀc_k| > δ` for
/// every other centerline, and whose cross-class inner products are at least
/// `δ` away from zero.
pub fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(2..6);
    let k = rng.random_range(2..5);
    let m = rng.random_range(2..8);
    loop {
        let centers: Vec<Vec<f64>> = (0..k).map(|_| gauss(rng, n)).collect();
        let bank = CenterlineBank::new(centers).unwrap();
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
        let features: Vec<Vec<f64>> = labels
            .iter()
            .map(|&y| {
                // bias toward the own centerline so the cluster term sits on its smooth side
                let mut f = gauss(rng, n);
                for (fi, ci) in f.iter_mut().zip(bank.center(y)) {
                    *fi += ci;
                }
                f
            })
            .collect();
        let batch = LabeledBatch::new(features, labels).unwrap();
        let clear = batch.iter().all(|(f, y)| {
            bank.centers().iter().enumerate().all(|(j, c)| {
                let p = dot(f, c).unwrap();
                if j == y {
                    p > KINK_MARGIN
                } else {
                    p.abs() > KINK_MARGIN
                }
            })
        }) && batch.iter().enumerate().all(|(i, (fi, yi))| {
            batch
                .iter()
                .enumerate()
                .all(|(j, (fj, yj))| i == j || yi == yj || dot(fi, fj).unwrap().abs() > KINK_MARGIN)
        });
        if clear {
            return Instance { batch, bank };
        }
    }
}

pub fn with_feature(batch: &LabeledBatch, i: usize, f: &[f64]) -> LabeledBatch {
    let mut features = batch.features().to_vec();
    features[i] = f.to_vec();
    LabeledBatch::new(features, batch.labels().to_vec()).unwrap()
}

pub fn with_center(bank: &CenterlineBank, k: usize, c: &[f64]) -> CenterlineBank {
    let mut centers = bank.centers().to_vec();
    centers[k] = c.to_vec();
    CenterlineBank::new(centers).unwrap()
}

pub fn random_encoder(rng: &mut ChaCha8Rng, final_activation: Activation) -> Mlp {
    let depth = rng.random_range(1..4);
    let mut dims = vec![rng.random_range(2..7)];
    for _ in 0..depth {
        dims.push(rng.random_range(2..7));
    }
    let spec = MlpSpec {
        final_activation,
        ..MlpSpec::new(dims)
    };
    Mlp::gaussian(spec, 0.8, rng).unwrap()
}

/// True when every ReLU pre-activation is farther than `δ` from zero.
pub fn away_from_relu_kinks(encoder: &Mlp, input: &[f64]) -> bool {
    let mut x = input.to_vec();
    let last = encoder.params.layers.len() - 1;
    for (l, layer) in encoder.params.layers.iter().enumerate() {
        let relu = l < last || encoder.spec.final_activation == Activation::Relu;
        let z: Vec<f64> = (0..layer.outputs)
            .map(|o| {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                dot(row, &x).unwrap() + layer.bias[o]
            })
            .collect();
        if relu && z.iter().any(|v| v.abs() < KINK_MARGIN) {
            return false;
        }
        x = if relu { z.iter().map(|v| v.max(0.0)).collect() } else { z };
    }
    true
}

