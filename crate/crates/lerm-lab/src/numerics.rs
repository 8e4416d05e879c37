//! Dense f64 linear algebra and seeded random number generation.
//!
//! Everything here is deterministic: matrix reductions run in row-major,
//! left-to-right order, and all randomness flows through [`RngState`], a
//! ChaCha8 stream seeded from a single `u64`. Normal draws use the
//! Box-Muller transform on that stream (two uniforms per draw), so equal
//! seeds give byte-identical sequences on every platform. Changing the
//! generator or the draw order is a breaking change.

use crate::error::{Error, Result};
use crate::risks::ProbBatch;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Row-major dense matrix of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                op: "from_vec",
                detail: format!("{} values for a {}x{} matrix", data.len(), rows, cols),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimMismatch {
                    op: "from_rows",
                    detail: "ragged rows".to_string(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self * other`. Accumulation over `k` runs left to right so results
    /// are bit-stable across runs.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch {
                op: "matmul",
                detail: format!(
                    "{}x{} * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.get(i, k) * other.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    /// `self^T * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::DimMismatch {
                op: "matmul_tn",
                detail: format!(
                    "{}x{}^T * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for i in 0..self.cols {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.rows {
                    acc += self.get(k, i) * other.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::DimMismatch {
                op: "matmul_nt",
                detail: format!(
                    "{}x{} * {}x{}^T",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.get(i, k) * other.get(j, k);
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn scale_mut(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.add_scaled_assign(other, 1.0)
    }

    pub fn add_scaled_assign(&mut self, other: &Matrix, s: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimMismatch {
                op: "add_scaled_assign",
                detail: format!(
                    "{}x{} += {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
        Ok(())
    }

    /// Adds a 1-row matrix to every row of `self`.
    pub fn add_row_bias(&mut self, bias: &Matrix) -> Result<()> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(Error::DimMismatch {
                op: "add_row_bias",
                detail: format!("bias {}x{} for {} columns", bias.rows, bias.cols, self.cols),
            });
        }
        for i in 0..self.rows {
            let row = self.row_mut(i);
            for (v, b) in row.iter_mut().zip(bias.data.iter()) {
                *v += b;
            }
        }
        Ok(())
    }

    /// Column sums as a 1-row matrix; sums run top to bottom.
    pub fn col_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j] += self.get(i, j);
            }
        }
        out
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a list of tags into a new seed.
///
/// Used to split one experiment seed into independent streams (init,
/// batch sampling, augmentation, ...) without the streams interfering.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut z = root.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    for &t in tags {
        z ^= t
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(z << 6)
            .wrapping_add(z >> 2);
        z = splitmix_finalize(z);
    }
    splitmix_finalize(z)
}

/// Seeded random stream. The generator is ChaCha8 (`rand_chacha`), fixed
/// for the life of this crate; uniform doubles take the top 53 bits of
/// each `u64`, and normals come from Box-Muller on two uniforms.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A fresh stream for `(root, tags)`; see [`derive_seed`].
    pub fn substream(root: u64, tags: &[u64]) -> Self {
        RngState::new(derive_seed(root, tags))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// One `N(mean, std^2)` draw; always consumes exactly two uniforms.
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1], keeps ln finite
        let u2 = self.uniform();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        mean + std * z
    }

    /// Uniform integer in `[0, bound)` via 128-bit multiply (no modulo bias
    /// worth speaking of, and fully deterministic).
    pub fn below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle(&mut self, items: &mut [usize]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n` (partial Fisher-Yates).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

/// Row-wise stable softmax (max subtraction before exponentiation).
pub fn softmax_rows(logits: &Matrix) -> Result<ProbBatch> {
    if !logits.is_finite() {
        return Err(Error::NonFinite("softmax_rows input".to_string()));
    }
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out.set(i, j, e);
            sum += e;
        }
        let orow = out.row_mut(i);
        for v in orow.iter_mut() {
            *v /= sum;
            if *v == 0.0 {
                *v = 0.0; // normalize -0.0 from rounding to +0.0
            }
        }
    }
    ProbBatch::new(out)
}

/// `n` draws from `N(mean, std^2)` as an `n x 1` matrix.
pub fn draw_normal(rng: &mut RngState, n: usize, mean: f64, std: f64) -> Result<Matrix> {
    if std < 0.0 || !std.is_finite() || !mean.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "draw_normal requires finite mean and std >= 0, got mean={mean}, std={std}"
        )));
    }
    let data: Vec<f64> = (0..n).map(|_| rng.normal(mean, std)).collect();
    Matrix::from_vec(n, 1, data)
}

/// Matrix of independent `N(mean, std^2)` draws, filled row-major.
pub fn normal_matrix(
    rng: &mut RngState,
    rows: usize,
    cols: usize,
    mean: f64,
    std: f64,
) -> Result<Matrix> {
    if std < 0.0 || !std.is_finite() || !mean.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "normal_matrix requires finite mean and std >= 0, got mean={mean}, std={std}"
        )));
    }
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal(mean, std)).collect();
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let p = softmax_rows(&m).unwrap();
        assert!((p.matrix().get(0, 0) - 0.5).abs() < 1e-15);
        assert!((p.matrix().get(0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_equal_logits() {
        let m = Matrix::from_rows(&[vec![1000.0, 1000.0, 1000.0]]).unwrap();
        let p = softmax_rows(&m).unwrap();
        for j in 0..3 {
            assert!((p.matrix().get(0, j) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_hand_value() {
        let m = Matrix::from_rows(&[vec![1.0_f64.ln(), 3.0_f64.ln()]]).unwrap();
        let p = softmax_rows(&m).unwrap();
        assert!((p.matrix().get(0, 0) - 0.25).abs() < 1e-12);
        assert!((p.matrix().get(0, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let m = Matrix::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(softmax_rows(&m).is_err());
    }

    #[test]
    fn matmul_identity_and_hand_value() {
        let eye = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = Matrix::from_rows(&[vec![2.0, 3.0], vec![4.0, 5.0]]).unwrap();
        assert_eq!(eye.matmul(&m).unwrap(), m);

        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().get(0, 0), 11.0);

        let z = Matrix::zeros(2, 2);
        assert_eq!(z.matmul(&m).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn draw_normal_std_zero_and_determinism() {
        let mut rng = RngState::new(7);
        let m = draw_normal(&mut rng, 10, 2.5, 0.0).unwrap();
        assert!(m.data().iter().all(|&v| v == 2.5));

        let a = draw_normal(&mut RngState::new(1), 100, 0.0, 1.0).unwrap();
        let b = draw_normal(&mut RngState::new(1), 100, 0.0, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn draw_normal_sample_mean() {
        let n = 100_000;
        let m = draw_normal(&mut RngState::new(1), n, 0.0, 1.0).unwrap();
        let mean = m.data().iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "sample mean {mean}");

        // 5 sigma / sqrt(n) concentration at n = 10^4
        for seed in [2, 3, 4] {
            let n = 10_000;
            let m = draw_normal(&mut RngState::new(seed), n, 1.5, 2.0).unwrap();
            let mean = m.data().iter().sum::<f64>() / n as f64;
            let bound = 5.0 * 2.0 / (n as f64).sqrt();
            assert!((mean - 1.5).abs() < bound, "seed {seed}: mean {mean}");
        }
    }

    #[test]
    fn draw_normal_rejects_negative_std() {
        assert!(draw_normal(&mut RngState::new(0), 4, 0.0, -1.0).is_err());
    }

    #[test]
    fn derived_streams_are_independent_of_tag_order_usage() {
        let a = RngState::substream(42, &[1, 2]).next_u64();
        let b = RngState::substream(42, &[2, 1]).next_u64();
        assert_ne!(a, b);
        let c = RngState::substream(42, &[1, 2]).next_u64();
        assert_eq!(a, c);
    }
}
