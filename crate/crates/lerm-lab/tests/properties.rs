//! Invariant and property suites: softmax/matmul/RNG determinism,
//! prediction-mean properties on random batches, gradient oracles against
//! central finite differences, and the unconditional inequality steps on
//! random instances.

mod common;

use common::rel_err;
use lerm_lab::model::{init_model, Activation, MlpSpec};
use lerm_lab::theory::DEFAULT_TOL;
use lerm_lab::trainer::{MeanScope, ObjectiveSpec, Regularizer, Scenario};
use lerm_lab::{
    balanced_labels, check_theorem1, check_theorem2, check_theorem3, empirical_risk_grad,
    entropy_risk, entropy_risk_grad, label_encoding_risk, label_encoding_risk_grad,
    prediction_means_unlabeled, random_prob_batch, softmax_rows, DivergenceKind, Matrix, ProbBatch,
    RngState, DEFAULT_MASS_EPS,
};
use proptest::prelude::*;

fn random_logits(rng: &mut RngState, rows: usize, cols: usize) -> Matrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform() * 100.0 - 50.0).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

#[test]
fn softmax_rows_sum_to_one_on_1000_random_matrices() {
    let mut rng = RngState::new(2024);
    for _ in 0..1000 {
        let rows = 1 + rng.below(8);
        let cols = 2 + rng.below(9);
        let logits = random_logits(&mut rng, rows, cols);
        let p = softmax_rows(&logits).unwrap();
        for i in 0..rows {
            let sum: f64 = p.row(i).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row sum {sum}");
        }
    }
}

#[test]
fn matmul_associativity_on_random_chains() {
    let mut rng = RngState::new(7);
    for _ in 0..200 {
        let a = random_logits(&mut rng, 4, 4).scaled(0.02);
        let b = random_logits(&mut rng, 4, 4).scaled(0.02);
        let c = random_logits(&mut rng, 4, 4).scaled(0.02);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        assert!(left.max_abs_diff(&right) < 1e-9);
    }
}

#[test]
fn rng_streams_are_byte_identical_for_equal_seeds() {
    let mut a = RngState::new(99);
    let mut b = RngState::new(99);
    for _ in 0..1000 {
        assert_eq!(a.next_u64(), b.next_u64());
    }
    let mut a = RngState::new(99);
    let mut b = RngState::new(99);
    for _ in 0..1000 {
        assert_eq!(a.normal(0.0, 1.0).to_bits(), b.normal(0.0, 1.0).to_bits());
    }
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(
        rows in proptest::collection::vec(
            proptest::collection::vec(-30.0f64..30.0, 4), 1..6),
        shift in -25.0f64..25.0,
    ) {
        let m = Matrix::from_rows(&rows).unwrap();
        let shifted = m.map(|v| v + shift);
        let a = softmax_rows(&m).unwrap();
        let b = softmax_rows(&shifted).unwrap();
        prop_assert!(a.matrix().max_abs_diff(b.matrix()) <= 1e-12);
    }

    #[test]
    fn duplicating_samples_leaves_means_unchanged(seed in 0u64..5000) {
        let mut rng = RngState::new(seed);
        let p = random_prob_batch(&mut rng, 6, 3);
        let mut doubled = Vec::new();
        for i in 0..p.len() {
            doubled.push(p.row(i).to_vec());
        }
        for i in 0..p.len() {
            doubled.push(p.row(i).to_vec());
        }
        let p2 = ProbBatch::new(Matrix::from_rows(&doubled).unwrap()).unwrap();
        let m1 = prediction_means_unlabeled(&p, DEFAULT_MASS_EPS).unwrap();
        let m2 = prediction_means_unlabeled(&p2, DEFAULT_MASS_EPS).unwrap();
        prop_assert!(m1.matrix().max_abs_diff(m2.matrix()) <= 1e-12);
    }
}

#[test]
fn prediction_mean_properties_on_random_batches() {
    let mut rng = RngState::new(31);
    for trial in 0..1000 {
        let c = [2, 5, 10][trial % 3];
        let p = random_prob_batch(&mut rng, 32, c);
        let means = prediction_means_unlabeled(&p, DEFAULT_MASS_EPS).unwrap();
        for k in 0..c {
            if means.is_degenerate(k) {
                continue;
            }
            let sum: f64 = means.row(k).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9, "row sum {sum} at trial {trial}");
            for &v in means.row(k) {
                assert!(
                    (-1e-12..=1.0 + 1e-12).contains(&v),
                    "entry {v} out of range at trial {trial}"
                );
            }
        }
    }
}

#[test]
fn near_one_hot_batches_certify_the_converse_direction() {
    // Rows within 1e-10 of one-hot force means within 1e-9 of identity,
    // which in turn must certify rows within 1e-6 of one-hot.
    let mut rng = RngState::new(77);
    for _ in 0..50 {
        let c = 4;
        let n = 20;
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % c;
            let mut row = vec![0.0; c];
            row[class] = 1.0;
            let bleed = 1e-10 * rng.uniform();
            row[(class + 1) % c] = bleed;
            row[class] -= bleed;
            rows.push(row);
        }
        let p = ProbBatch::new(Matrix::from_rows(&rows).unwrap()).unwrap();
        let report = check_theorem1(&p, 1e-9).unwrap();
        assert_eq!(report.quantity("means_near_identity"), Some(1.0));
        assert!(report.quantity("max_row_one_hot_dist").unwrap() <= 1e-6);
        assert!(report.conclusion_holds);
    }
}

/// Central finite differences of a scalar function of the batch entries,
/// treating every entry as a free coordinate.
fn fd_grad_probs(p: &ProbBatch, f: impl Fn(&ProbBatch) -> f64, h: f64) -> Matrix {
    let n = p.len();
    let c = p.num_classes();
    let mut g = Matrix::zeros(n, c);
    let mut work = p.matrix().clone();
    for i in 0..n {
        for j in 0..c {
            let orig = work.get(i, j);
            work.set(i, j, orig + h);
            let up = f(&ProbBatch::new_unchecked(work.clone()));
            work.set(i, j, orig - h);
            let down = f(&ProbBatch::new_unchecked(work.clone()));
            work.set(i, j, orig);
            g.set(i, j, (up - down) / (2.0 * h));
        }
    }
    g
}

fn interior_batch(rng: &mut RngState, n: usize, c: usize, floor: f64) -> ProbBatch {
    loop {
        let p = random_prob_batch(rng, n, c);
        if p.matrix().data().iter().all(|&v| v >= floor) {
            return p;
        }
    }
}

fn max_rel_err(a: &Matrix, b: &Matrix) -> f64 {
    let mut worst = 0.0_f64;
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        worst = worst.max(rel_err(*x, *y));
    }
    worst
}

#[test]
fn label_encoding_grad_matches_finite_differences_l2_ce() {
    let h = 1e-6;
    let mut rng = RngState::new(404);
    for trial in 0..100 {
        let (n, c) = if trial % 2 == 0 { (5, 3) } else { (8, 4) };
        let p = interior_batch(&mut rng, n, c, 1e-3);
        for kind in [DivergenceKind::L2, DivergenceKind::Ce] {
            let analytic = label_encoding_risk_grad(&p, kind, DEFAULT_MASS_EPS).unwrap();
            let fd = fd_grad_probs(
                &p,
                |q| {
                    let m = prediction_means_unlabeled(q, DEFAULT_MASS_EPS).unwrap();
                    label_encoding_risk(&m, kind).unwrap()
                },
                h,
            );
            let err = max_rel_err(&analytic, &fd);
            assert!(err < 1e-4, "{kind:?} trial {trial}: rel err {err}");
        }
    }
}

#[test]
fn label_encoding_grad_matches_finite_differences_l1_away_from_kinks() {
    let h = 1e-6;
    let mut rng = RngState::new(505);
    let mut checked = 0;
    for _ in 0..300 {
        let p = interior_batch(&mut rng, 5, 3, 1e-3);
        let means = prediction_means_unlabeled(&p, DEFAULT_MASS_EPS).unwrap();
        let mut margin = f64::INFINITY;
        for i in 0..3 {
            for (j, &v) in means.row(i).iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                margin = margin.min((v - e).abs());
            }
        }
        if margin < 1e-4 {
            continue;
        }
        let analytic = label_encoding_risk_grad(&p, DivergenceKind::L1, DEFAULT_MASS_EPS).unwrap();
        let fd = fd_grad_probs(
            &p,
            |q| {
                let m = prediction_means_unlabeled(q, DEFAULT_MASS_EPS).unwrap();
                label_encoding_risk(&m, DivergenceKind::L1).unwrap()
            },
            h,
        );
        let err = max_rel_err(&analytic, &fd);
        assert!(err < 1e-4, "L1 rel err {err}");
        checked += 1;
    }
    assert!(checked >= 100, "only {checked} kink-free batches checked");
}

#[test]
fn entropy_grad_matches_finite_differences() {
    let h = 1e-6;
    let mut rng = RngState::new(606);
    for _ in 0..100 {
        let p = interior_batch(&mut rng, 6, 4, 1e-2);
        let analytic = entropy_risk_grad(&p);
        let fd = fd_grad_probs(&p, entropy_risk, h);
        let err = max_rel_err(&analytic, &fd);
        assert!(err < 1e-6, "entropy rel err {err}");
    }
}

#[test]
fn mlp_backward_matches_finite_differences_on_composite_loss() {
    // ERM + lambda * LERM through a [3 -> 4 -> 3] network.
    let spec = MlpSpec::new(vec![3, 4], Activation::ReLU, 3).unwrap();
    let model = init_model(&spec, &mut RngState::new(100)).unwrap();
    let x_lab = lerm_lab::normal_matrix(&mut RngState::new(101), 6, 3, 0.0, 1.0).unwrap();
    let labels = [0usize, 1, 2, 0, 1, 2];
    let x_unlab = lerm_lab::normal_matrix(&mut RngState::new(102), 8, 3, 0.0, 1.0).unwrap();
    let lambda = 0.7;

    let loss = |m: &lerm_lab::model::MlpModel| {
        let fp = m.forward(&x_lab).unwrap();
        let ce = lerm_lab::empirical_risk(&fp.probs, &labels).unwrap();
        let fu = m.forward(&x_unlab).unwrap();
        let means = prediction_means_unlabeled(&fu.probs, DEFAULT_MASS_EPS).unwrap();
        ce + lambda * label_encoding_risk(&means, DivergenceKind::L2).unwrap()
    };

    let fp = model.forward(&x_lab).unwrap();
    let mut grads = model
        .backward(&fp.cache, &empirical_risk_grad(&fp.probs, &labels).unwrap())
        .unwrap();
    let fu = model.forward(&x_unlab).unwrap();
    let dreg = label_encoding_risk_grad(&fu.probs, DivergenceKind::L2, DEFAULT_MASS_EPS).unwrap();
    grads
        .add_assign(&model.backward(&fu.cache, &dreg.scaled(lambda)).unwrap())
        .unwrap();

    let err = common::fd_check_mlp(&model, loss, &grads, 1e-6);
    assert!(err < 1e-4, "composite FD rel err {err}");
}

#[test]
fn forward_is_bit_deterministic() {
    let spec = MlpSpec::new(vec![5, 8, 4], Activation::LeakyReLU, 3).unwrap();
    let model = init_model(&spec, &mut RngState::new(55)).unwrap();
    let x = lerm_lab::normal_matrix(&mut RngState::new(56), 7, 5, 0.0, 1.0).unwrap();
    let a = model.forward(&x).unwrap();
    let b = model.forward(&x).unwrap();
    for (va, vb) in a
        .probs
        .matrix()
        .data()
        .iter()
        .zip(b.probs.matrix().data().iter())
    {
        assert_eq!(va.to_bits(), vb.to_bits());
    }
}

#[test]
fn jensen_and_logsum_steps_hold_on_every_random_instance() {
    let mut rng = RngState::new(808);
    for trial in 0..1000 {
        let p = random_prob_batch(&mut rng, 32, 5);
        let labels = balanced_labels(32, 5);
        let r2 = check_theorem2(&p, &labels, DEFAULT_TOL).unwrap();
        assert!(
            r2.quantity("jensen_slack").unwrap() >= -1e-10,
            "Jensen violated at trial {trial}"
        );
        let r3 = check_theorem3(&p, DEFAULT_TOL).unwrap();
        assert!(
            r3.quantity("logsum_slack").unwrap() >= -1e-10,
            "log-sum violated at trial {trial}"
        );
        if r3.assumption_holds {
            assert!(r3.quantity("conclusion_slack").unwrap() >= -DEFAULT_TOL);
        }
        if r2.assumption_holds {
            assert!(r2.quantity("conclusion_slack").unwrap() >= -DEFAULT_TOL);
        }
    }
}

#[test]
fn uniform_column_mass_makes_midpoint_equal_risk() {
    // Cyclic shifts of one simplex row give every column the same mass.
    let mut rng = RngState::new(909);
    for _ in 0..100 {
        let c = 4;
        let base = random_prob_batch(&mut rng, 1, c);
        let mut rows = Vec::new();
        for rep in 0..3 {
            for shift in 0..c {
                let _ = rep;
                let mut row = vec![0.0; c];
                for j in 0..c {
                    row[(j + shift) % c] = base.row(0)[j];
                }
                rows.push(row);
            }
        }
        let p = ProbBatch::new(Matrix::from_rows(&rows).unwrap()).unwrap();
        let r3 = check_theorem3(&p, DEFAULT_TOL).unwrap();
        assert!(r3.quantity("mass_uniformity").unwrap() <= 1e-12);
        assert!(
            r3.quantity("assumption_slack").unwrap().abs() <= 1e-12,
            "midpoint != risk under uniform masses"
        );
    }
}

#[test]
fn degeneration_invariant_alpha_slot_is_structural() {
    // The objective keeps a slot for an external method's loss; it must
    // stay inert at 0 and reject anything else.
    let spec = ObjectiveSpec {
        scenario: Scenario::Uda,
        use_erm: true,
        regularizer: Regularizer::Lerm(DivergenceKind::L1),
        lambda: 1.0,
        mu: 0.0,
        alpha: 0.0,
        tau: 0.0,
        mean_scope: MeanScope::MiniBatch,
    };
    assert!(spec.validate().is_ok());
    let bad = ObjectiveSpec { alpha: 0.1, ..spec };
    assert!(bad.validate().is_err());
}
