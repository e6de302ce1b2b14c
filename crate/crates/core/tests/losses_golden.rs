//! Hand-computed loss values and gradients, plus the clipping and
//! weight-normalization diagnostics.

use cip_core::losses::{
    cip_forward, cluster_forward, cluster_forward_unclipped, cluster_grad_centerline,
    cluster_grad_feature, cluster_grad_feature_origin, normalized_weight_gradient,
    ortho_batch_forward, ortho_batch_grad_feature, ortho_forward, ortho_grad_centerline,
    ortho_grad_feature, CenterlineBank, LabeledBatch, LossConfig,
};
use cip_core::vector::norm;
use cip_core::Error;

const EXACT: f64 = 1e-12;

fn bank(centers: &[&[f64]]) -> CenterlineBank {
    CenterlineBank::new(centers.iter().map(|c| c.to_vec()).collect()).unwrap()
}

fn batch(features: &[&[f64]], labels: &[usize]) -> LabeledBatch {
    LabeledBatch::new(features.iter().map(|f| f.to_vec()).collect(), labels.to_vec()).unwrap()
}

fn assert_vec(got: &[f64], want: &[f64]) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= EXACT, "got {got:?}, want {want:?}");
    }
}

#[test]
fn cluster_values() {
    let b = bank(&[&[3.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
    let v = cluster_forward(&batch(&[&[1.0, 0.0, 0.0]], &[0]), &b, 2.0).unwrap();
    assert!((v - 0.2).abs() <= EXACT);
    let v = cluster_forward(&batch(&[&[0.0, 0.0, 4.0]], &[0]), &b, 2.0).unwrap();
    assert!((v - 0.5).abs() <= EXACT);
    let neg = batch(&[&[-1.0 / 3.0, 0.0, 0.0]], &[0]);
    assert!((cluster_forward(&neg, &b, 2.0).unwrap() - 0.5).abs() <= EXACT);
    assert!((cluster_forward_unclipped(&neg, &b, 2.0).unwrap() - 1.0).abs() <= EXACT);
    assert!(matches!(cluster_forward(&neg, &b, 0.0), Err(Error::InvalidConfig(_))));
    assert!(cluster_forward(&batch(&[&[1.0, 0.0, 0.0]], &[2]), &b, 2.0).is_err());
}

#[test]
fn ortho_values() {
    let b = bank(&[&[5.0, 5.0, 5.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, -1.0]]);
    assert!((ortho_forward(&batch(&[&[1.0, 1.0, 0.0]], &[0]), &b).unwrap() - 1.0).abs() <= EXACT);
    let b2 = bank(&[&[0.0, 1.0], &[1.0, 0.0]]);
    assert!((ortho_forward(&batch(&[&[2.0, 0.0]], &[0]), &b2).unwrap() - 2.0).abs() <= EXACT);
    assert_eq!(ortho_forward(&batch(&[&[-1.0, 3.0]], &[0]), &b2).unwrap(), 0.0);
}

#[test]
fn batch_ortho_values() {
    let x = batch(&[&[1.0, 0.0], &[1.0, 1.0]], &[0, 1]);
    assert!((ortho_batch_forward(&x) - 2.0).abs() <= EXACT);
    assert_vec(&ortho_batch_grad_feature(&x, 0).unwrap(), &[2.0, 2.0]);
    assert_eq!(ortho_batch_forward(&batch(&[&[1.0, 0.0], &[1.0, 1.0]], &[1, 1])), 0.0);
    assert_eq!(ortho_batch_forward(&batch(&[&[1.0, 0.0], &[-1.0, 1.0]], &[0, 1])), 0.0);
    assert_vec(&ortho_batch_grad_feature(&batch(&[&[1.0, 2.0]], &[0]), 0).unwrap(), &[0.0, 0.0]);
}

#[test]
fn cip_combination() {
    let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let x = batch(&[&[1.0, 1.0]], &[0]);
    let cfg = LossConfig {
        lambda: 0.5,
        ..LossConfig::default()
    };
    // cluster = 1/(1+2), ortho = 1
    let want = 1.0 / 3.0 + 0.5;
    assert!((cip_forward(&x, &b, &cfg).unwrap() - want).abs() <= EXACT);
    let zero = LossConfig {
        lambda: 0.0,
        ..LossConfig::default()
    };
    assert_eq!(
        cip_forward(&x, &b, &zero).unwrap(),
        cluster_forward(&x, &b, 2.0).unwrap()
    );
}

#[test]
fn surrogate_feature_gradient() {
    let c = [3.0, 0.0, 0.0];
    assert_vec(&cluster_grad_feature(&[1.0, 0.0, 0.0], &c, 2.0).unwrap(), &[-3.0 / 25.0, 0.0, 0.0]);
    assert_vec(&cluster_grad_feature(&[0.0, 1.0, 0.0], &c, 2.0).unwrap(), &[-0.75, 0.0, 0.0]);
    // fᵀc = −5: surrogate stays at −c/4, the unclipped form gives −c/9
    let f = [-5.0 / 3.0, 0.0, 0.0];
    assert_vec(&cluster_grad_feature(&f, &c, 2.0).unwrap(), &[-0.75, 0.0, 0.0]);
    assert_vec(&cluster_grad_feature_origin(&f, &c, 2.0).unwrap(), &[-3.0 / 9.0, 0.0, 0.0]);
    assert_vec(
        &cluster_grad_feature_origin(&[1.0, 0.0, 0.0], &c, 2.0).unwrap(),
        &[-3.0 / 25.0, 0.0, 0.0],
    );
}

#[test]
fn origin_gradient_explodes_near_minus_d() {
    let c = [1.0, 0.0];
    let d = 2.0;
    let surrogate = norm(&cluster_grad_feature(&[-2.0 + 1e-3, 0.0], &c, d).unwrap());
    let mut gap = 1e-3;
    while gap > 1e-8 {
        let f = [-d + gap, 0.0];
        let origin = norm(&cluster_grad_feature_origin(&f, &c, d).unwrap());
        assert!(origin > 1e3 * surrogate, "gap {gap}: {origin} vs {surrogate}");
        assert!(norm(&cluster_grad_feature(&f, &c, d).unwrap()) <= norm(&c) / (d * d));
        gap /= 10.0;
    }
    assert!(matches!(
        cluster_grad_feature_origin(&[-2.0, 0.0], &c, d),
        Err(Error::Singularity { .. })
    ));
}

#[test]
fn ortho_feature_gradient_selects_violated_centerlines() {
    let b = bank(&[&[5.0, 5.0, 5.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, -1.0]]);
    assert_vec(&ortho_grad_feature(&[1.0, 1.0, 0.0], &b, 0).unwrap(), &[0.0, 1.0, 0.0]);
    let b = bank(&[&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
    assert_vec(&ortho_grad_feature(&[1.0, 1.0, 0.0], &b, 0).unwrap(), &[1.0, 1.0, 0.0]);
    assert_vec(&ortho_grad_feature(&[-1.0, -1.0, 0.0], &b, 0).unwrap(), &[0.0, 0.0, 0.0]);
}

#[test]
fn cluster_centerline_gradient() {
    let b = bank(&[&[3.0, 0.0], &[0.0, 1.0]]);
    let one = batch(&[&[1.0, 0.0]], &[0]);
    assert_vec(&cluster_grad_centerline(&one, &b, 0, 2.0).unwrap(), &[-1.0 / 25.0, 0.0]);
    assert_vec(&cluster_grad_centerline(&one, &b, 1, 2.0).unwrap(), &[0.0, 0.0]);
    // products 0 and 3
    let two = batch(&[&[0.0, 2.0], &[1.0, 0.0]], &[0, 0]);
    assert_vec(
        &cluster_grad_centerline(&two, &b, 0, 2.0).unwrap(),
        &[-1.0 / 25.0, -2.0 / 4.0],
    );
}

#[test]
fn ortho_centerline_gradient_is_averaged() {
    let b = bank(&[&[1.0, 1.0], &[0.0, 1.0]]);
    let x = batch(&[&[1.0, 0.0], &[0.0, 1.0]], &[1, 1]);
    assert_vec(&ortho_grad_centerline(&x, &b, 0).unwrap(), &[1.0 / 3.0, 1.0 / 3.0]);
    let one = batch(&[&[2.0, 4.0]], &[1]);
    assert_vec(&ortho_grad_centerline(&one, &b, 0).unwrap(), &[1.0, 2.0]);
    let none = batch(&[&[-2.0, -4.0]], &[1]);
    assert_vec(&ortho_grad_centerline(&none, &b, 0).unwrap(), &[0.0, 0.0]);
}

#[test]
fn normalized_gradient_scales_inversely() {
    assert_vec(&normalized_weight_gradient(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), &[0.0, 1.0]);
    assert_vec(&normalized_weight_gradient(&[0.1, 0.0], &[0.0, 1.0]).unwrap(), &[0.0, 10.0]);
    assert_vec(&normalized_weight_gradient(&[2.0, 1.0], &[4.0, 2.0]).unwrap(), &[0.0, 0.0]);
    assert!(matches!(
        normalized_weight_gradient(&[0.0, 0.0], &[1.0, 0.0]),
        Err(Error::ZeroNorm(_))
    ));

    let w = [0.3, -1.2, 0.7];
    let f = [1.1, 0.4, -0.9];
    let base = norm(&normalized_weight_gradient(&w, &f).unwrap());
    for s in [1.0, 0.1, 0.01] {
        let ws: Vec<f64> = w.iter().map(|v| v * s).collect();
        let g = norm(&normalized_weight_gradient(&ws, &f).unwrap());
        assert!((g * s - base).abs() <= 1e-9 * base);
    }
}
