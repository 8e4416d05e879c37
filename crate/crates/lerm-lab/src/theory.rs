//! Numerical certifiers for the three structural results behind the
//! label-encoding risk: the prediction-mean properties, the empirical-risk
//! upper bound, and the entropy upper bound. Each check reports the
//! quantities on both sides of every inequality and evaluates the stated
//! assumption as an explicit predicate, so "assumption fails" is kept
//! separate from "bound fails".

use crate::error::Result;
use crate::numerics::{Matrix, RngState};
use crate::risks::{
    empirical_risk, entropy_risk, prediction_means_labeled, prediction_means_unlabeled,
    DivergenceKind, ProbBatch, DEFAULT_MASS_EPS,
};

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoremId {
    T1,
    T2,
    T3,
}

impl TheoremId {
    pub fn name(self) -> &'static str {
        match self {
            TheoremId::T1 => "T1",
            TheoremId::T2 => "T2",
            TheoremId::T3 => "T3",
        }
    }
}

/// Outcome of one certification run.
///
/// `conclusion_holds` is evaluated up to `tolerance`; when
/// `assumption_holds` is false the conclusion is still reported but callers
/// must not assert it.
#[derive(Debug, Clone)]
pub struct TheoremReport {
    pub theorem: TheoremId,
    pub quantities: Vec<(String, f64)>,
    pub assumption_holds: bool,
    pub conclusion_holds: bool,
    pub tolerance: f64,
    pub notes: Vec<String>,
}

impl TheoremReport {
    pub fn quantity(&self, name: &str) -> Option<f64> {
        self.quantities
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
    }
}

fn max_abs(vals: impl Iterator<Item = f64>) -> f64 {
    vals.fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Certifies the prediction-mean properties on one batch:
/// rows sum to 1, entries stay in `[0, 1]`, one-hot batches give identity
/// means, and means close to identity force near-one-hot rows.
///
/// Properties 1-2 are unconditional, so `assumption_holds` is always true;
/// the one-hot and near-identity checks are vacuously true when their
/// premises do not apply. The identity-to-one-hot direction uses a
/// tolerance ball (means within `tol` of identity must put every row within
/// `row_tol = max(tol * 1e3, 1e-6)` of a one-hot vector), an empirical
/// coupling reported in the quantities.
pub fn check_theorem1(p: &ProbBatch, tol: f64) -> Result<TheoremReport> {
    let means = prediction_means_unlabeled(p, DEFAULT_MASS_EPS)?;
    let c = p.num_classes();
    let mut notes = Vec::new();

    // Property 1: non-degenerate rows sum to 1.
    let mut rowsum_dev = 0.0_f64;
    for k in 0..c {
        if means.is_degenerate(k) {
            notes.push(format!("class {k} degenerate (mass below guard)"));
            continue;
        }
        let sum: f64 = means.row(k).iter().sum();
        rowsum_dev = rowsum_dev.max((sum - 1.0).abs());
    }

    // Property 2: entries in [0, 1].
    let range_dev = max_abs(
        means
            .matrix()
            .data()
            .iter()
            .map(|&v| (-v).max(v - 1.0).max(0.0)),
    );

    // Property 3: one-hot batch => identity means.
    let is_one_hot = (0..p.len()).all(|i| row_one_hot_distance(p.row(i)) == 0.0);
    let identity_dev = identity_deviation(means.matrix());
    let prop3_ok = !is_one_hot || identity_dev <= tol;

    // Properties 4-5 (tolerance-ball converse): means near identity force
    // near-one-hot rows.
    let row_tol = (tol * 1e3).max(1e-6);
    let means_near_identity = identity_dev <= tol && means.degenerate_classes().is_empty();
    let max_row_dist = max_abs((0..p.len()).map(|i| row_one_hot_distance(p.row(i))));
    let prop45_ok = !means_near_identity || max_row_dist <= row_tol;
    if means_near_identity {
        notes.push(format!(
            "converse checked on a tolerance ball: the coupling {tol:e} -> {row_tol:e} is an empirical choice, not a proved stability bound"
        ));
    }

    let conclusion_holds = rowsum_dev <= tol && range_dev <= tol && prop3_ok && prop45_ok;
    Ok(TheoremReport {
        theorem: TheoremId::T1,
        quantities: vec![
            ("max_row_sum_dev".to_string(), rowsum_dev),
            ("max_range_dev".to_string(), range_dev),
            ("identity_dev".to_string(), identity_dev),
            ("input_one_hot".to_string(), if is_one_hot { 1.0 } else { 0.0 }),
            (
                "means_near_identity".to_string(),
                if means_near_identity { 1.0 } else { 0.0 },
            ),
            ("max_row_one_hot_dist".to_string(), max_row_dist),
            ("row_tol".to_string(), row_tol),
        ],
        assumption_holds: true,
        conclusion_holds,
        tolerance: tol,
        notes,
    })
}

/// Max-norm distance from `row` to the nearest one-hot vector.
fn row_one_hot_distance(row: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for c in 0..row.len() {
        let mut dev = 0.0_f64;
        for (j, &v) in row.iter().enumerate() {
            let target = if j == c { 1.0 } else { 0.0 };
            dev = dev.max((v - target).abs());
        }
        best = best.min(dev);
    }
    best
}

fn identity_deviation(m: &Matrix) -> f64 {
    let mut dev = 0.0_f64;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let want = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((m.get(i, j) - want).abs());
        }
    }
    dev
}

/// Certifies the chain `empirical risk >= weighted midpoint >= label-encoding
/// risk` for labeled samples under the cross-entropy loss.
///
/// The first step (Jensen over each class) holds unconditionally; the second
/// is exactly the stated assumption, evaluated here as a predicate. Classes
/// with no labeled samples are excluded and noted.
pub fn check_theorem2(p: &ProbBatch, labels: &[usize], tol: f64) -> Result<TheoremReport> {
    let c = p.num_classes();
    let n = p.len() as f64;
    let emp = empirical_risk(p, labels)?;
    let means = prediction_means_labeled(p, labels)?;

    let mut notes = Vec::new();
    let mut midpoint = 0.0;
    let mut ler = 0.0;
    for k in 0..c {
        if means.is_degenerate(k) {
            notes.push(format!("class {k} has no labeled samples; excluded"));
            continue;
        }
        let loss = DivergenceKind::Ce.value(means.row(k), k)?;
        midpoint += means.mass(k) * loss / n;
        ler += loss / c as f64;
    }

    let jensen_slack = emp - midpoint;
    let assumption_slack = midpoint - ler;
    let conclusion_slack = emp - ler;
    let assumption_holds = assumption_slack >= -tol;
    Ok(TheoremReport {
        theorem: TheoremId::T2,
        quantities: vec![
            ("empirical_risk".to_string(), emp),
            ("weighted_midpoint".to_string(), midpoint),
            ("label_encoding_risk".to_string(), ler),
            ("jensen_slack".to_string(), jensen_slack),
            ("assumption_slack".to_string(), assumption_slack),
            ("conclusion_slack".to_string(), conclusion_slack),
        ],
        assumption_holds,
        conclusion_holds: jensen_slack >= -tol && conclusion_slack >= -tol,
        tolerance: tol,
        notes,
    })
}

/// Certifies the chain `entropy >= weighted midpoint >= label-encoding risk`
/// for unlabeled samples under the cross-entropy divergence.
///
/// The log-convexity step holds unconditionally; the second step is the
/// stated column-mass assumption. When the column masses are exactly
/// uniform the midpoint equals the risk, which the report exposes via
/// `mass_uniformity`.
pub fn check_theorem3(p: &ProbBatch, tol: f64) -> Result<TheoremReport> {
    let c = p.num_classes();
    let n = p.len() as f64;
    let ent = entropy_risk(p);
    let means = prediction_means_unlabeled(p, DEFAULT_MASS_EPS)?;

    let mut notes = Vec::new();
    let mut midpoint = 0.0;
    let mut ler = 0.0;
    let mut mass_uniformity = 0.0_f64;
    for k in 0..c {
        if means.is_degenerate(k) || means.row(k)[k] <= 0.0 {
            notes.push(format!("class {k} degenerate under CE; excluded"));
            mass_uniformity = mass_uniformity.max(1.0 / c as f64);
            continue;
        }
        let loss = DivergenceKind::Ce.value(means.row(k), k)?;
        midpoint += means.mass(k) * loss / n;
        ler += loss / c as f64;
        mass_uniformity = mass_uniformity.max((means.mass(k) / n - 1.0 / c as f64).abs());
    }

    let logsum_slack = ent - midpoint;
    let assumption_slack = midpoint - ler;
    let conclusion_slack = ent - ler;
    let assumption_holds = assumption_slack >= -tol;
    Ok(TheoremReport {
        theorem: TheoremId::T3,
        quantities: vec![
            ("entropy_risk".to_string(), ent),
            ("weighted_midpoint".to_string(), midpoint),
            ("label_encoding_risk".to_string(), ler),
            ("logsum_slack".to_string(), logsum_slack),
            ("assumption_slack".to_string(), assumption_slack),
            ("conclusion_slack".to_string(), conclusion_slack),
            ("mass_uniformity".to_string(), mass_uniformity),
        ],
        assumption_holds,
        conclusion_holds: logsum_slack >= -tol && conclusion_slack >= -tol,
        tolerance: tol,
        notes,
    })
}

/// Batch with rows drawn uniformly from the probability simplex
/// (Dirichlet(1,...,1) via normalized exponentials).
pub fn random_prob_batch(rng: &mut RngState, n: usize, c: usize) -> ProbBatch {
    let mut m = Matrix::zeros(n, c);
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..c {
            let e = -(1.0 - rng.uniform()).ln();
            m.set(i, j, e);
            sum += e;
        }
        let row = m.row_mut(i);
        for v in row.iter_mut() {
            *v /= sum;
        }
        // Normalized exponentials can drift a hair off 1; renormalize the
        // largest entry so the ProbBatch invariant holds exactly enough.
        let s: f64 = row.iter().sum();
        let imax = (0..c)
            .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
            .unwrap();
        row[imax] += 1.0 - s;
    }
    ProbBatch::new(m).expect("normalized rows form a valid batch")
}

/// Labels drawn uniformly from `0..c`.
pub fn random_labels(rng: &mut RngState, n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|_| rng.below(c)).collect()
}

/// Round-robin labels; exactly balanced when `c` divides `n`.
pub fn balanced_labels(n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|i| i % c).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risks::ProbBatch;

    fn batch(rows: &[Vec<f64>]) -> ProbBatch {
        ProbBatch::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn theorem1_one_hot_batch_passes_all() {
        let p = batch(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let r = check_theorem1(&p, DEFAULT_TOL).unwrap();
        assert!(r.conclusion_holds);
        assert_eq!(r.quantity("input_one_hot"), Some(1.0));
        assert_eq!(r.quantity("means_near_identity"), Some(1.0));
    }

    #[test]
    fn theorem1_soft_batch_checks_unconditional_properties() {
        let p = batch(&[vec![0.8, 0.2], vec![0.6, 0.4], vec![0.2, 0.8]]);
        let r = check_theorem1(&p, DEFAULT_TOL).unwrap();
        assert!(r.conclusion_holds);
        assert_eq!(r.quantity("input_one_hot"), Some(0.0));
        assert!(r.quantity("identity_dev").unwrap() > 0.1);
    }

    #[test]
    fn theorem2_equality_at_one_hot_predictions() {
        let p = batch(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let r = check_theorem2(&p, &[0, 1], DEFAULT_TOL).unwrap();
        assert!(r.assumption_holds);
        assert!(r.conclusion_holds);
        assert!(r.quantity("empirical_risk").unwrap().abs() < 1e-15);
        assert!(r.quantity("label_encoding_risk").unwrap().abs() < 1e-15);
    }

    #[test]
    fn theorem2_balanced_labels_make_midpoint_equal_ler() {
        let mut rng = RngState::new(5);
        let p = random_prob_batch(&mut rng, 30, 5);
        let labels = balanced_labels(30, 5);
        let r = check_theorem2(&p, &labels, DEFAULT_TOL).unwrap();
        assert!(r.quantity("assumption_slack").unwrap().abs() < 1e-12);
        assert!(r.assumption_holds);
        assert!(r.conclusion_holds);
    }

    #[test]
    fn theorem2_missing_class_is_noted() {
        let p = batch(&[vec![0.9, 0.1], vec![0.7, 0.3]]);
        let r = check_theorem2(&p, &[0, 0], DEFAULT_TOL).unwrap();
        assert_eq!(r.notes.len(), 1);
        assert!(r.notes[0].contains("class 1"));
    }

    #[test]
    fn theorem3_uniform_column_mass_equality() {
        // Two mirrored rows: column masses are exactly [1, 1] = n/C each.
        let p = batch(&[vec![0.3, 0.7], vec![0.7, 0.3]]);
        let r = check_theorem3(&p, DEFAULT_TOL).unwrap();
        assert!(r.quantity("mass_uniformity").unwrap() < 1e-15);
        assert!(r.quantity("assumption_slack").unwrap().abs() < 1e-12);
        assert!(r.conclusion_holds);
    }

    #[test]
    fn theorem3_one_hot_equalities() {
        let p = batch(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let r = check_theorem3(&p, DEFAULT_TOL).unwrap();
        assert!(r.quantity("entropy_risk").unwrap().abs() < 1e-15);
        assert!(r.quantity("weighted_midpoint").unwrap().abs() < 1e-15);
        assert!(r.quantity("label_encoding_risk").unwrap().abs() < 1e-15);
        assert!(r.conclusion_holds);
    }

    #[test]
    fn random_batches_satisfy_unconditional_steps() {
        let mut rng = RngState::new(11);
        for trial in 0..200 {
            let p = random_prob_batch(&mut rng, 64, 4);
            let r3 = check_theorem3(&p, DEFAULT_TOL).unwrap();
            assert!(
                r3.quantity("logsum_slack").unwrap() >= -1e-10,
                "trial {trial} violated the log-sum step"
            );
            let p2 = random_prob_batch(&mut rng, 32, 5);
            let labels = balanced_labels(32, 5);
            let r2 = check_theorem2(&p2, &labels, DEFAULT_TOL).unwrap();
            assert!(
                r2.quantity("jensen_slack").unwrap() >= -1e-10,
                "trial {trial} violated the Jensen step"
            );
        }
    }
}
