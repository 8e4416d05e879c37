//! Risk functionals over predicted category distributions: empirical risk,
//! prediction means, label-encoding risk, entropy, and their analytic
//! gradients with respect to the prediction batch.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Guard for vanishing class mass in prediction-mean denominators.
pub const DEFAULT_MASS_EPS: f64 = 1e-12;

/// Floor applied to diagonal means inside cross-entropy *gradients* only;
/// the risk value itself rejects exact zeros.
const CE_GRAD_FLOOR: f64 = 1e-30;

/// A batch of predicted category distributions: an `n x C` row-stochastic
/// matrix. Construction validates that every row sums to 1 (within 1e-9)
/// and every entry lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBatch {
    p: Matrix,
}

impl ProbBatch {
    pub fn new(p: Matrix) -> Result<Self> {
        if p.rows() == 0 || p.cols() == 0 {
            return Err(Error::InvalidProbBatch("empty matrix".to_string()));
        }
        for i in 0..p.rows() {
            let mut sum = 0.0;
            for &v in p.row(i) {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidProbBatch(format!(
                        "entry {v} outside [0, 1] in row {i}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidProbBatch(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(ProbBatch { p })
    }

    /// Skips the row-stochastic validation. Meant for finite-difference
    /// oracles that evaluate the risks at single-entry perturbations of a
    /// valid batch; the entries must still be non-negative.
    pub fn new_unchecked(p: Matrix) -> Self {
        ProbBatch { p }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.p.rows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.p.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.p.row(i)
    }
}

/// One-hot label encoding `e_c`: entry `class` is 1, all others 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHot {
    pub num_classes: usize,
    pub class: usize,
}

impl OneHot {
    pub fn new(num_classes: usize, class: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: class,
                classes: num_classes,
                row: 0,
            });
        }
        Ok(OneHot { num_classes, class })
    }

    pub fn to_vec(self) -> Vec<f64> {
        let mut v = vec![0.0; self.num_classes];
        v[self.class] = 1.0;
        v
    }
}

/// Divergence between an estimated encoding row and its one-hot target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceKind {
    /// Sum of absolute differences.
    L1,
    /// Sum of squared differences.
    L2,
    /// `-ln m[class]` (cross-entropy against the one-hot target).
    Ce,
}

impl DivergenceKind {
    pub fn name(self) -> &'static str {
        match self {
            DivergenceKind::L1 => "l1",
            DivergenceKind::L2 => "l2",
            DivergenceKind::Ce => "ce",
        }
    }

    /// Divergence of `row` from the one-hot encoding of `class`.
    pub fn value(self, row: &[f64], class: usize) -> Result<f64> {
        match self {
            DivergenceKind::L1 => Ok(row
                .iter()
                .enumerate()
                .map(|(j, &m)| (m - if j == class { 1.0 } else { 0.0 }).abs())
                .sum()),
            DivergenceKind::L2 => Ok(row
                .iter()
                .enumerate()
                .map(|(j, &m)| {
                    let d = m - if j == class { 1.0 } else { 0.0 };
                    d * d
                })
                .sum()),
            DivergenceKind::Ce => {
                if row[class] <= 0.0 {
                    Err(Error::ZeroDiagonalMean { class })
                } else {
                    Ok(-row[class].ln())
                }
            }
        }
    }

    /// Gradient of [`Self::value`] with respect to `row`. The L1
    /// subgradient at 0 is 0, so a perfect encoding stays stationary.
    fn grad_row(self, row: &[f64], class: usize) -> Vec<f64> {
        match self {
            DivergenceKind::L1 => row
                .iter()
                .enumerate()
                .map(|(j, &m)| {
                    let d = m - if j == class { 1.0 } else { 0.0 };
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            DivergenceKind::L2 => row
                .iter()
                .enumerate()
                .map(|(j, &m)| 2.0 * (m - if j == class { 1.0 } else { 0.0 }))
                .collect(),
            DivergenceKind::Ce => {
                let mut g = vec![0.0; row.len()];
                g[class] = -1.0 / row[class].max(CE_GRAD_FLOOR);
                g
            }
        }
    }
}

/// Per-class prediction means: a `C x C` matrix whose row `c` estimates the
/// one-hot encoding of class `c`, together with the class mass behind each
/// row. Rows whose mass fell below the guard are flagged degenerate and
/// stored as uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMeans {
    means: Matrix,
    mass: Vec<f64>,
    degenerate: Vec<bool>,
}

impl PredictionMeans {
    pub fn num_classes(&self) -> usize {
        self.means.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.means
    }

    pub fn row(&self, c: usize) -> &[f64] {
        self.means.row(c)
    }

    /// Total predicted mass behind class `c` (a sample count for labeled
    /// means).
    pub fn mass(&self, c: usize) -> f64 {
        self.mass[c]
    }

    pub fn is_degenerate(&self, c: usize) -> bool {
        self.degenerate[c]
    }

    pub fn degenerate_classes(&self) -> Vec<usize> {
        (0..self.num_classes())
            .filter(|&c| self.degenerate[c])
            .collect()
    }
}

/// Prediction means of unlabeled samples: row `c` is the mean of the
/// predicted distributions weighted by each sample's probability of class
/// `c`, normalized by the total class mass (guarded by `eps`).
pub fn prediction_means_unlabeled(p: &ProbBatch, eps: f64) -> Result<PredictionMeans> {
    let c = p.num_classes();
    if c < 2 {
        return Err(Error::InvalidArgument(
            "prediction means need at least 2 classes".to_string(),
        ));
    }
    if eps <= 0.0 || eps.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "mass guard eps must be positive, got {eps}"
        )));
    }
    let n = p.len();
    let mut mass = vec![0.0; c];
    for i in 0..n {
        for (k, &v) in p.row(i).iter().enumerate() {
            mass[k] += v;
        }
    }
    // numerator[c][j] = sum_i p[i][c] * p[i][j]
    let numerator = p.matrix().matmul_tn(p.matrix())?;
    let mut means = Matrix::zeros(c, c);
    let mut degenerate = vec![false; c];
    for k in 0..c {
        if mass[k] < eps {
            degenerate[k] = true;
            for j in 0..c {
                means.set(k, j, 1.0 / c as f64);
            }
        } else {
            for j in 0..c {
                means.set(k, j, numerator.get(k, j) / mass[k]);
            }
        }
    }
    Ok(PredictionMeans {
        means,
        mass,
        degenerate,
    })
}

/// Prediction means of labeled samples: row `c` is the plain average of the
/// predicted distributions of samples labeled `c`. Classes with no labeled
/// samples are flagged degenerate.
pub fn prediction_means_labeled(p: &ProbBatch, labels: &[usize]) -> Result<PredictionMeans> {
    let c = p.num_classes();
    if c < 2 {
        return Err(Error::InvalidArgument(
            "prediction means need at least 2 classes".to_string(),
        ));
    }
    if labels.len() != p.len() {
        return Err(Error::DimMismatch {
            op: "prediction_means_labeled",
            detail: format!("{} labels for {} rows", labels.len(), p.len()),
        });
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: c,
                row: i,
            });
        }
    }
    let mut counts = vec![0usize; c];
    let mut sums = Matrix::zeros(c, c);
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        for (j, &v) in p.row(i).iter().enumerate() {
            sums.set(y, j, sums.get(y, j) + v);
        }
    }
    let mut means = Matrix::zeros(c, c);
    let mut degenerate = vec![false; c];
    for k in 0..c {
        if counts[k] == 0 {
            degenerate[k] = true;
            for j in 0..c {
                means.set(k, j, 1.0 / c as f64);
            }
        } else {
            for j in 0..c {
                means.set(k, j, sums.get(k, j) / counts[k] as f64);
            }
        }
    }
    Ok(PredictionMeans {
        means,
        mass: counts.iter().map(|&n| n as f64).collect(),
        degenerate,
    })
}

/// Label-encoding risk: mean divergence between each prediction-mean row
/// and its one-hot target. Degenerate rows contribute 0.
pub fn label_encoding_risk(m: &PredictionMeans, kind: DivergenceKind) -> Result<f64> {
    let c = m.num_classes();
    let mut sum = 0.0;
    for k in 0..c {
        if m.is_degenerate(k) {
            continue;
        }
        sum += kind.value(m.row(k), k)?;
    }
    Ok(sum / c as f64)
}

/// Mean Shannon entropy of the predicted distributions, with the
/// `0 ln 0 = 0` convention.
pub fn entropy_risk(p: &ProbBatch) -> f64 {
    let n = p.len();
    let mut sum = 0.0;
    for i in 0..n {
        for &v in p.row(i) {
            if v > 0.0 {
                sum -= v * v.ln();
            }
        }
    }
    sum / n as f64
}

/// Gradient of [`entropy_risk`] w.r.t. each probability; entries that are
/// exactly 0 get gradient 0 by the same convention.
pub fn entropy_risk_grad(p: &ProbBatch) -> Matrix {
    let n = p.len();
    let scale = 1.0 / n as f64;
    let mut g = Matrix::zeros(n, p.num_classes());
    for i in 0..n {
        for (j, &v) in p.row(i).iter().enumerate() {
            if v > 0.0 {
                g.set(i, j, -scale * (v.ln() + 1.0));
            }
        }
    }
    g
}

/// Mean cross-entropy against the ground-truth labels.
pub fn empirical_risk(p: &ProbBatch, labels: &[usize]) -> Result<f64> {
    validate_labels(p, labels)?;
    let mut sum = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let v = p.row(i)[y];
        if v <= 0.0 {
            return Err(Error::ZeroTrueClassProb { row: i, class: y });
        }
        sum -= v.ln();
    }
    Ok(sum / labels.len() as f64)
}

/// Gradient of [`empirical_risk`] w.r.t. the probabilities.
pub fn empirical_risk_grad(p: &ProbBatch, labels: &[usize]) -> Result<Matrix> {
    validate_labels(p, labels)?;
    let n = p.len();
    let mut g = Matrix::zeros(n, p.num_classes());
    for (i, &y) in labels.iter().enumerate() {
        let v = p.row(i)[y];
        if v <= 0.0 {
            return Err(Error::ZeroTrueClassProb { row: i, class: y });
        }
        g.set(i, y, -1.0 / (n as f64 * v));
    }
    Ok(g)
}

fn validate_labels(p: &ProbBatch, labels: &[usize]) -> Result<()> {
    if labels.len() != p.len() {
        return Err(Error::DimMismatch {
            op: "labels",
            detail: format!("{} labels for {} rows", labels.len(), p.len()),
        });
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= p.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: p.num_classes(),
                row: i,
            });
        }
    }
    Ok(())
}

/// Gradient of the unlabeled label-encoding risk w.r.t. every probability.
///
/// Each probability `p[a][b]` enters the means twice: as the weight of
/// sample `a` in class `b`'s mean, and as component `b` of sample `a`'s
/// distribution inside every class mean. With `g[c][j]` the divergence
/// gradient at mean row `c` (already scaled by `1/C`) and `S_c` the class
/// mass, the chain rule gives
///
/// ```text
/// d/dp[a][b] = sum_j g[b][j] * (p[a][j] - m[b][j]) / S_b
///            + sum_c g[c][b] * p[a][c] / S_c
/// ```
///
/// Degenerate classes contribute nothing on either side.
pub fn label_encoding_risk_grad(p: &ProbBatch, kind: DivergenceKind, eps: f64) -> Result<Matrix> {
    let means = prediction_means_unlabeled(p, eps)?;
    let c = p.num_classes();
    let n = p.len();
    let scale = 1.0 / c as f64;

    // g[c][j]: divergence gradient per mean row, 1/C included.
    let mut g = Matrix::zeros(c, c);
    for k in 0..c {
        if means.is_degenerate(k) {
            continue;
        }
        // Surface the same pathology the risk value reports.
        if kind == DivergenceKind::Ce && means.row(k)[k] <= 0.0 {
            return Err(Error::ZeroDiagonalMean { class: k });
        }
        let row = kind.grad_row(means.row(k), k);
        for (j, v) in row.into_iter().enumerate() {
            g.set(k, j, v * scale);
        }
    }

    let mut grad = Matrix::zeros(n, c);
    for a in 0..n {
        let pa = p.row(a);
        for b in 0..c {
            let mut acc = 0.0;
            if !means.is_degenerate(b) {
                let mb = means.row(b);
                let inv_mass = 1.0 / means.mass(b);
                for j in 0..c {
                    acc += g.get(b, j) * (pa[j] - mb[j]) * inv_mass;
                }
            }
            for (k, &pak) in pa.iter().enumerate() {
                if !means.is_degenerate(k) {
                    acc += g.get(k, b) * pak / means.mass(k);
                }
            }
            grad.set(a, b, acc);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[Vec<f64>]) -> ProbBatch {
        ProbBatch::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn hand_batch() -> ProbBatch {
        batch(&[vec![0.8, 0.2], vec![0.6, 0.4], vec![0.2, 0.8]])
    }

    #[test]
    fn prob_batch_rejects_bad_rows() {
        let m = Matrix::from_rows(&[vec![0.5, 0.4]]).unwrap();
        assert!(ProbBatch::new(m).is_err());
        let m = Matrix::from_rows(&[vec![1.2, -0.2]]).unwrap();
        assert!(ProbBatch::new(m).is_err());
    }

    #[test]
    fn means_of_one_hot_batch_are_identity() {
        let p = batch(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
        ]);
        let m = prediction_means_unlabeled(&p, DEFAULT_MASS_EPS).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((m.matrix().get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn means_hand_value() {
        let m = prediction_means_unlabeled(&hand_batch(), DEFAULT_MASS_EPS).unwrap();
        assert!((m.matrix().get(0, 0) - 0.65).abs() < 1e-12);
        assert!((m.matrix().get(0, 1) - 0.35).abs() < 1e-12);
        assert!((m.matrix().get(1, 0) - 0.4).abs() < 1e-12);
        assert!((m.matrix().get(1, 1) - 0.6).abs() < 1e-12);
        assert!((m.mass(0) - 1.6).abs() < 1e-12);
        assert!((m.mass(1) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn means_flag_empty_class_as_degenerate() {
        let p = batch(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let m = prediction_means_unlabeled(&p, DEFAULT_MASS_EPS).unwrap();
        assert!(!m.is_degenerate(0));
        assert!(m.is_degenerate(1));
        assert_eq!(m.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn means_reject_single_class() {
        let p = ProbBatch::new(Matrix::from_rows(&[vec![1.0]]).unwrap()).unwrap();
        assert!(prediction_means_unlabeled(&p, DEFAULT_MASS_EPS).is_err());
    }

    #[test]
    fn labeled_means_single_samples() {
        let p = batch(&[vec![0.7, 0.3], vec![0.4, 0.6]]);
        let m = prediction_means_labeled(&p, &[0, 1]).unwrap();
        assert_eq!(m.row(0), &[0.7, 0.3]);
        assert_eq!(m.row(1), &[0.4, 0.6]);
    }

    #[test]
    fn labeled_means_average_and_missing_class() {
        let p = batch(&[vec![0.6, 0.4], vec![0.8, 0.2]]);
        let m = prediction_means_labeled(&p, &[0, 0]).unwrap();
        assert!((m.row(0)[0] - 0.7).abs() < 1e-12);
        assert!((m.row(0)[1] - 0.3).abs() < 1e-12);
        assert!(m.is_degenerate(1));
    }

    #[test]
    fn labeled_means_reject_out_of_range() {
        let p = batch(&[vec![0.5, 0.5]]);
        assert!(prediction_means_labeled(&p, &[2]).is_err());
    }

    #[test]
    fn ler_risk_identity_is_zero() {
        let p = batch(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let m = prediction_means_unlabeled(&p, DEFAULT_MASS_EPS).unwrap();
        for kind in [DivergenceKind::L1, DivergenceKind::L2, DivergenceKind::Ce] {
            assert_eq!(label_encoding_risk(&m, kind).unwrap(), 0.0);
        }
    }

    #[test]
    fn ler_risk_hand_values() {
        let m = prediction_means_unlabeled(&hand_batch(), DEFAULT_MASS_EPS).unwrap();
        let l1 = label_encoding_risk(&m, DivergenceKind::L1).unwrap();
        assert!((l1 - 0.75).abs() < 1e-12);
        let ce = label_encoding_risk(&m, DivergenceKind::Ce).unwrap();
        let want = (-(0.65_f64.ln()) - 0.6_f64.ln()) / 2.0;
        assert!((ce - want).abs() < 1e-12);
    }

    #[test]
    fn ce_risk_rejects_zero_diagonal() {
        // Hand-built means with a zero diagonal entry.
        let p = batch(&[vec![0.0, 1.0], vec![0.0, 1.0]]);
        let m = prediction_means_labeled(&p, &[0, 1]).unwrap();
        match label_encoding_risk(&m, DivergenceKind::Ce) {
            Err(Error::ZeroDiagonalMean { class }) => assert_eq!(class, 0),
            other => panic!("expected zero-diagonal error, got {other:?}"),
        }
    }

    #[test]
    fn entropy_hand_values() {
        let one_hot = batch(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(entropy_risk(&one_hot), 0.0);

        let uniform = batch(&[vec![0.5, 0.5]]);
        assert!((entropy_risk(&uniform) - 2.0_f64.ln()).abs() < 1e-12);

        let mixed = batch(&[vec![0.25, 0.75], vec![1.0, 0.0]]);
        let want = (-(0.25_f64) * 0.25_f64.ln() - 0.75 * 0.75_f64.ln()) / 2.0;
        assert!((entropy_risk(&mixed) - want).abs() < 1e-12);
    }

    #[test]
    fn empirical_risk_hand_values() {
        let exact = batch(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(empirical_risk(&exact, &[0, 1]).unwrap(), 0.0);

        let p = batch(&[vec![0.25, 0.75]]);
        assert!((empirical_risk(&p, &[1]).unwrap() - (-(0.75_f64.ln()))).abs() < 1e-12);

        let uniform = batch(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert!((empirical_risk(&uniform, &[0, 1]).unwrap() - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empirical_risk_rejects_zero_true_prob() {
        let p = batch(&[vec![1.0, 0.0]]);
        assert!(matches!(
            empirical_risk(&p, &[1]),
            Err(Error::ZeroTrueClassProb { .. })
        ));
    }

    #[test]
    fn ler_grad_zero_at_one_hot_l2() {
        let p = batch(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let g = label_encoding_risk_grad(&p, DivergenceKind::L2, DEFAULT_MASS_EPS).unwrap();
        assert!(g.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn entropy_grad_closed_forms() {
        let p = batch(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let g = entropy_risk_grad(&p);
        let want = -(0.5_f64.ln() + 1.0) / 2.0;
        assert!(g.data().iter().all(|&v| (v - want).abs() < 1e-12));

        let e = (-1.0_f64).exp();
        let p = batch(&[vec![e, 1.0 - e]]);
        let g = entropy_risk_grad(&p);
        assert!(g.get(0, 0).abs() < 1e-12);
    }
}
