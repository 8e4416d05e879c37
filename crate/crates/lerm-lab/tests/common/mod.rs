//! Shared helpers for the integration suites: relative-error metric and
//! central finite-difference oracles over model parameters.

#![allow(dead_code)]

use lerm_lab::model::{MlpGrads, MlpModel, ShdaGrads, ShdaModel};
use lerm_lab::risks::prediction_means_unlabeled;
use lerm_lab::{Matrix, DEFAULT_MASS_EPS};

/// Relative error with a floor so true-zero entries compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Max relative error between `analytic` and central finite differences of
/// `loss` over every parameter of `model`.
pub fn fd_check_mlp<F: Fn(&MlpModel) -> f64>(
    model: &MlpModel,
    loss: F,
    analytic: &MlpGrads,
    h: f64,
) -> f64 {
    let mut m = model.clone();
    let mut worst = 0.0_f64;
    let n_tensors = analytic.tensors().len();
    for ti in 0..n_tensors {
        let len = analytic.tensors()[ti].1.data().len();
        for k in 0..len {
            let orig = m.tensors_mut()[ti].1.data()[k];
            m.tensors_mut()[ti].1.data_mut()[k] = orig + h;
            let up = loss(&m);
            m.tensors_mut()[ti].1.data_mut()[k] = orig - h;
            let down = loss(&m);
            m.tensors_mut()[ti].1.data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic.tensors()[ti].1.data()[k];
            worst = worst.max(rel_err(a, fd));
        }
    }
    worst
}

/// Same oracle for the dual-extractor model.
pub fn fd_check_shda<F: Fn(&ShdaModel) -> f64>(
    model: &ShdaModel,
    loss: F,
    analytic: &ShdaGrads,
    h: f64,
) -> f64 {
    let mut m = model.clone();
    let mut worst = 0.0_f64;
    let n_tensors = analytic.tensors().len();
    for ti in 0..n_tensors {
        let len = analytic.tensors()[ti].1.data().len();
        for k in 0..len {
            let orig = m.tensors_mut()[ti].1.data()[k];
            m.tensors_mut()[ti].1.data_mut()[k] = orig + h;
            let up = loss(&m);
            m.tensors_mut()[ti].1.data_mut()[k] = orig - h;
            let down = loss(&m);
            m.tensors_mut()[ti].1.data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic.tensors()[ti].1.data()[k];
            worst = worst.max(rel_err(a, fd));
        }
    }
    worst
}

/// Smallest |m[c][j] - e_c[j]| over the model's prediction means on `x`;
/// L1 finite differences are only trusted when this margin is comfortably
/// above the step size.
pub fn l1_kink_margin(model: &MlpModel, x: &Matrix) -> f64 {
    let fp = model.forward(x).unwrap();
    let means = prediction_means_unlabeled(&fp.probs, DEFAULT_MASS_EPS).unwrap();
    let c = means.num_classes();
    let mut margin = f64::INFINITY;
    for i in 0..c {
        if means.is_degenerate(i) {
            continue;
        }
        for (j, &v) in means.row(i).iter().enumerate() {
            let e = if i == j { 1.0 } else { 0.0 };
            margin = margin.min((v - e).abs());
        }
    }
    margin
}

pub fn l1_kink_margin_dual(model: &ShdaModel, x: &Matrix) -> f64 {
    let fp = model.forward_target(x).unwrap();
    let means = prediction_means_unlabeled(&fp.probs, DEFAULT_MASS_EPS).unwrap();
    let c = means.num_classes();
    let mut margin = f64::INFINITY;
    for i in 0..c {
        if means.is_degenerate(i) {
            continue;
        }
        for (j, &v) in means.row(i).iter().enumerate() {
            let e = if i == j { 1.0 } else { 0.0 };
            margin = margin.min((v - e).abs());
        }
    }
    margin
}
