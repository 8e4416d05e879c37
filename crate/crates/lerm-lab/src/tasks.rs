//! Seeded synthetic scenario generators and the weak/strong augmentation
//! pair for vector data.
//!
//! All generators are pure functions of `(seed, parameters)`: class means
//! are placed on the unit sphere from the seeded stream, then samples are
//! drawn class by class in a fixed order (labeled, unlabeled, test, and for
//! transfer scenarios source first), so bundles are byte-identical across
//! runs.

use crate::error::{Error, Result};
use crate::numerics::{normal_matrix, Matrix, RngState};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    SslBlobs,
    SslImbalanced,
    Uda,
    Shda,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SslBlobs => "ssl-blobs",
            TaskKind::SslImbalanced => "ssl-imbalanced",
            TaskKind::Uda => "uda",
            TaskKind::Shda => "shda",
        }
    }
}

/// Scenario metadata; per-class counts always match the data exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMeta {
    pub kind: TaskKind,
    pub num_classes: usize,
    /// Dimension of labeled/unlabeled/test samples (target domain).
    pub input_dim: usize,
    /// Dimension of source samples when a source split exists.
    pub source_dim: Option<usize>,
    pub labeled_per_class: Vec<usize>,
    pub unlabeled_per_class: Vec<usize>,
    pub test_per_class: Vec<usize>,
    pub source_per_class: Option<Vec<usize>>,
    /// Set when the bundle carries no labeled target samples at all
    /// (source-free adaptation runs on such bundles).
    pub no_labeled_flag: bool,
}

/// One synthetic scenario: labeled, unlabeled and held-out test splits,
/// plus a labeled source split for transfer scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBundle {
    pub labeled_x: Matrix,
    pub labeled_y: Vec<usize>,
    pub unlabeled_x: Matrix,
    pub test_x: Matrix,
    pub test_y: Vec<usize>,
    pub source_x: Option<Matrix>,
    pub source_y: Option<Vec<usize>>,
    pub meta: TaskMeta,
}

/// Augmentation intensity for vector data. Weak adds Gaussian jitter;
/// strong adds larger jitter and then zeroes each coordinate independently
/// with probability `dropout_p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentKind {
    Weak { sigma: f64 },
    Strong { sigma: f64, dropout_p: f64 },
}

/// Applies one augmentation draw. Noise is drawn for the whole batch
/// row-major, then (for strong) the dropout mask row-major.
pub fn augment(x: &Matrix, kind: AugmentKind, rng: &mut RngState) -> Result<Matrix> {
    match kind {
        AugmentKind::Weak { sigma } => {
            if sigma < 0.0 {
                return Err(Error::InvalidArgument("sigma must be >= 0".to_string()));
            }
            let noise = normal_matrix(rng, x.rows(), x.cols(), 0.0, sigma)?;
            let mut out = x.clone();
            out.add_assign(&noise)?;
            Ok(out)
        }
        AugmentKind::Strong { sigma, dropout_p } => {
            if sigma < 0.0 {
                return Err(Error::InvalidArgument("sigma must be >= 0".to_string()));
            }
            if !(0.0..1.0).contains(&dropout_p) {
                return Err(Error::InvalidArgument(format!(
                    "dropout_p must be in [0, 1), got {dropout_p}"
                )));
            }
            let noise = normal_matrix(rng, x.rows(), x.cols(), 0.0, sigma)?;
            let mut out = x.clone();
            out.add_assign(&noise)?;
            if dropout_p > 0.0 {
                for v in out.data_mut() {
                    if rng.uniform() < dropout_p {
                        *v = 0.0;
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Class means placed deterministically on the unit sphere.
fn sphere_means(rng: &mut RngState, classes: usize, dim: usize) -> Result<Matrix> {
    let mut means = normal_matrix(rng, classes, dim, 0.0, 1.0)?;
    for c in 0..classes {
        let row = means.row_mut(c);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        } else {
            row[0] = 1.0; // vanishing draw; pin to an axis
        }
    }
    Ok(means)
}

fn sample_class(
    rng: &mut RngState,
    mean: &[f64],
    n: usize,
    spread: f64,
) -> Result<Matrix> {
    let dim = mean.len();
    let mut m = normal_matrix(rng, n, dim, 0.0, spread)?;
    for i in 0..n {
        let row = m.row_mut(i);
        for (v, &mu) in row.iter_mut().zip(mean.iter()) {
            *v += mu;
        }
    }
    Ok(m)
}

struct SplitBuilder {
    x: Vec<f64>,
    y: Vec<usize>,
    rows: usize,
    dim: usize,
}

impl SplitBuilder {
    fn new(dim: usize) -> Self {
        SplitBuilder {
            x: Vec::new(),
            y: Vec::new(),
            rows: 0,
            dim,
        }
    }

    fn push(&mut self, samples: &Matrix, class: usize) {
        self.x.extend_from_slice(samples.data());
        self.y.extend(std::iter::repeat_n(class, samples.rows()));
        self.rows += samples.rows();
    }

    fn finish(self) -> Result<(Matrix, Vec<usize>)> {
        Ok((Matrix::from_vec(self.rows, self.dim, self.x)?, self.y))
    }
}

fn validate_common(classes: usize, dim: usize, spread: f64) -> Result<()> {
    if classes < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".to_string()));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("dim must be >= 1".to_string()));
    }
    if spread < 0.0 || !spread.is_finite() {
        return Err(Error::InvalidArgument(format!("spread must be >= 0, got {spread}")));
    }
    Ok(())
}

/// Gaussian blob semi-supervised task: per-class labeled/unlabeled/test
/// draws around unit-sphere means. `n_labeled_per_class = 0` is allowed
/// (source-free adaptation uses it) and sets `no_labeled_flag`.
pub fn gen_blobs_ssl(
    rng: &mut RngState,
    classes: usize,
    n_labeled_per_class: usize,
    n_unlabeled_per_class: usize,
    n_test_per_class: usize,
    dim: usize,
    spread: f64,
) -> Result<TaskBundle> {
    validate_common(classes, dim, spread)?;
    let means = sphere_means(rng, classes, dim)?;
    let mut labeled = SplitBuilder::new(dim);
    let mut unlabeled = SplitBuilder::new(dim);
    let mut test = SplitBuilder::new(dim);
    for c in 0..classes {
        let mean = means.row(c);
        labeled.push(&sample_class(rng, mean, n_labeled_per_class, spread)?, c);
        unlabeled.push(&sample_class(rng, mean, n_unlabeled_per_class, spread)?, c);
        test.push(&sample_class(rng, mean, n_test_per_class, spread)?, c);
    }
    let (labeled_x, labeled_y) = labeled.finish()?;
    let (unlabeled_x, _) = unlabeled.finish()?;
    let (test_x, test_y) = test.finish()?;
    Ok(TaskBundle {
        labeled_x,
        labeled_y,
        unlabeled_x,
        test_x,
        test_y,
        source_x: None,
        source_y: None,
        meta: TaskMeta {
            kind: TaskKind::SslBlobs,
            num_classes: classes,
            input_dim: dim,
            source_dim: None,
            labeled_per_class: vec![n_labeled_per_class; classes],
            unlabeled_per_class: vec![n_unlabeled_per_class; classes],
            test_per_class: vec![n_test_per_class; classes],
            source_per_class: None,
            no_labeled_flag: n_labeled_per_class == 0,
        },
    })
}

/// Class-imbalanced SSL task: majority classes get `majority_n` labeled
/// samples, the listed minority classes get `minority_n`. The unlabeled
/// and test splits stay balanced at `majority_n` per class.
pub fn gen_imbalanced_ssl(
    rng: &mut RngState,
    classes: usize,
    majority_n: usize,
    minority_n: usize,
    minority_classes: &[usize],
    dim: usize,
    spread: f64,
) -> Result<TaskBundle> {
    validate_common(classes, dim, spread)?;
    if minority_classes.is_empty() {
        return Err(Error::InvalidArgument(
            "minority_classes must be non-empty (use the balanced generator otherwise)".to_string(),
        ));
    }
    if minority_n >= majority_n {
        return Err(Error::InvalidArgument(format!(
            "minority_n ({minority_n}) must be smaller than majority_n ({majority_n})"
        )));
    }
    for &c in minority_classes {
        if c >= classes {
            return Err(Error::LabelOutOfRange {
                label: c,
                classes,
                row: 0,
            });
        }
    }
    let means = sphere_means(rng, classes, dim)?;
    let mut labeled = SplitBuilder::new(dim);
    let mut unlabeled = SplitBuilder::new(dim);
    let mut test = SplitBuilder::new(dim);
    let mut labeled_counts = Vec::with_capacity(classes);
    for c in 0..classes {
        let n_l = if minority_classes.contains(&c) {
            minority_n
        } else {
            majority_n
        };
        labeled_counts.push(n_l);
        let mean = means.row(c);
        labeled.push(&sample_class(rng, mean, n_l, spread)?, c);
        unlabeled.push(&sample_class(rng, mean, majority_n, spread)?, c);
        test.push(&sample_class(rng, mean, majority_n, spread)?, c);
    }
    let (labeled_x, labeled_y) = labeled.finish()?;
    let (unlabeled_x, _) = unlabeled.finish()?;
    let (test_x, test_y) = test.finish()?;
    Ok(TaskBundle {
        labeled_x,
        labeled_y,
        unlabeled_x,
        test_x,
        test_y,
        source_x: None,
        source_y: None,
        meta: TaskMeta {
            kind: TaskKind::SslImbalanced,
            num_classes: classes,
            input_dim: dim,
            source_dim: None,
            labeled_per_class: labeled_counts,
            unlabeled_per_class: vec![majority_n; classes],
            test_per_class: vec![majority_n; classes],
            source_per_class: None,
            no_labeled_flag: false,
        },
    })
}

/// Rotates coordinates (0, 1) by `angle` and shifts along the normalized
/// all-ones direction by `shift`.
fn domain_shift(x: &mut Matrix, angle: f64, shift: f64) {
    let dim = x.cols();
    let (sin, cos) = angle.sin_cos();
    let offset = shift / (dim as f64).sqrt();
    for i in 0..x.rows() {
        let row = x.row_mut(i);
        if dim >= 2 && angle != 0.0 {
            let (a, b) = (row[0], row[1]);
            row[0] = cos * a - sin * b;
            row[1] = sin * a + cos * b;
        }
        for v in row.iter_mut() {
            *v += offset;
        }
    }
}

/// Covariate-shift domain adaptation task: labeled source blobs plus a
/// target domain drawn from the same class-conditionals, rotated in the
/// (0, 1) coordinate plane and shifted along the all-ones direction. The
/// target contributes `n_target_per_class` unlabeled samples and an equally
/// sized held-out labeled test split.
#[allow(clippy::too_many_arguments)]
pub fn gen_uda(
    rng: &mut RngState,
    classes: usize,
    n_source_per_class: usize,
    n_target_per_class: usize,
    dim: usize,
    spread: f64,
    shift: f64,
    rotation_angle: f64,
) -> Result<TaskBundle> {
    validate_common(classes, dim, spread)?;
    if !shift.is_finite() || !rotation_angle.is_finite() {
        return Err(Error::InvalidArgument("shift and rotation must be finite".to_string()));
    }
    if dim < 2 && rotation_angle != 0.0 {
        return Err(Error::InvalidArgument(
            "rotation needs at least 2 dimensions".to_string(),
        ));
    }
    let means = sphere_means(rng, classes, dim)?;
    let mut source = SplitBuilder::new(dim);
    let mut unlabeled = SplitBuilder::new(dim);
    let mut test = SplitBuilder::new(dim);
    for c in 0..classes {
        let mean = means.row(c);
        source.push(&sample_class(rng, mean, n_source_per_class, spread)?, c);
        let mut u = sample_class(rng, mean, n_target_per_class, spread)?;
        domain_shift(&mut u, rotation_angle, shift);
        unlabeled.push(&u, c);
        let mut t = sample_class(rng, mean, n_target_per_class, spread)?;
        domain_shift(&mut t, rotation_angle, shift);
        test.push(&t, c);
    }
    let (source_x, source_y) = source.finish()?;
    let (unlabeled_x, _) = unlabeled.finish()?;
    let (test_x, test_y) = test.finish()?;
    Ok(TaskBundle {
        labeled_x: Matrix::zeros(0, dim),
        labeled_y: Vec::new(),
        unlabeled_x,
        test_x,
        test_y,
        source_x: Some(source_x),
        source_y: Some(source_y),
        meta: TaskMeta {
            kind: TaskKind::Uda,
            num_classes: classes,
            input_dim: dim,
            source_dim: Some(dim),
            labeled_per_class: vec![0; classes],
            unlabeled_per_class: vec![n_target_per_class; classes],
            test_per_class: vec![n_target_per_class; classes],
            source_per_class: Some(vec![n_source_per_class; classes]),
            no_labeled_flag: true,
        },
    })
}

/// Heterogeneous domain adaptation task: shared latent blobs projected
/// through two fixed random linear maps into feature spaces of different
/// dimensionality, with small observation noise (0.1 x spread). The target
/// carries a few labeled samples plus unlabeled and test splits of
/// `n_target_per_class` each.
#[allow(clippy::too_many_arguments)]
pub fn gen_shda(
    rng: &mut RngState,
    classes: usize,
    n_source_per_class: usize,
    n_labeled_per_class: usize,
    n_target_per_class: usize,
    latent_dim: usize,
    dim_s: usize,
    dim_t: usize,
    spread: f64,
) -> Result<TaskBundle> {
    validate_common(classes, latent_dim, spread)?;
    if dim_s == 0 || dim_t == 0 {
        return Err(Error::InvalidArgument("feature dims must be >= 1".to_string()));
    }
    let means = sphere_means(rng, classes, latent_dim)?;
    let proj_scale = 1.0 / (latent_dim as f64).sqrt();
    let map_s = normal_matrix(rng, latent_dim, dim_s, 0.0, proj_scale)?;
    let map_t = normal_matrix(rng, latent_dim, dim_t, 0.0, proj_scale)?;
    let obs_noise = 0.1 * spread;

    let project = |rng: &mut RngState,
                   mean: &[f64],
                   n: usize,
                   map: &Matrix|
     -> Result<Matrix> {
        let latent = sample_class(rng, mean, n, spread)?;
        let mut out = latent.matmul(map)?;
        let noise = normal_matrix(rng, out.rows(), out.cols(), 0.0, obs_noise)?;
        out.add_assign(&noise)?;
        Ok(out)
    };

    let mut source = SplitBuilder::new(dim_s);
    let mut labeled = SplitBuilder::new(dim_t);
    let mut unlabeled = SplitBuilder::new(dim_t);
    let mut test = SplitBuilder::new(dim_t);
    for c in 0..classes {
        let mean = means.row(c).to_vec();
        source.push(&project(rng, &mean, n_source_per_class, &map_s)?, c);
        labeled.push(&project(rng, &mean, n_labeled_per_class, &map_t)?, c);
        unlabeled.push(&project(rng, &mean, n_target_per_class, &map_t)?, c);
        test.push(&project(rng, &mean, n_target_per_class, &map_t)?, c);
    }
    let (source_x, source_y) = source.finish()?;
    let (labeled_x, labeled_y) = labeled.finish()?;
    let (unlabeled_x, _) = unlabeled.finish()?;
    let (test_x, test_y) = test.finish()?;
    Ok(TaskBundle {
        labeled_x,
        labeled_y,
        unlabeled_x,
        test_x,
        test_y,
        source_x: Some(source_x),
        source_y: Some(source_y),
        meta: TaskMeta {
            kind: TaskKind::Shda,
            num_classes: classes,
            input_dim: dim_t,
            source_dim: Some(dim_s),
            labeled_per_class: vec![n_labeled_per_class; classes],
            unlabeled_per_class: vec![n_target_per_class; classes],
            test_per_class: vec![n_target_per_class; classes],
            source_per_class: Some(vec![n_source_per_class; classes]),
            no_labeled_flag: n_labeled_per_class == 0,
        },
    })
}

// ---------------------------------------------------------------------------
// CSV export/import. One file per split; labeled splits carry a `class`
// column (1-based on disk), the unlabeled split has features only. Floats
// use shortest round-trip formatting and LF line endings.
// ---------------------------------------------------------------------------

fn split_to_csv(x: &Matrix, y: Option<&[usize]>) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = Vec::new();
    if y.is_some() {
        header.push("class".to_string());
    }
    for j in 1..=x.cols() {
        header.push(format!("x{j}"));
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..x.rows() {
        let mut fields: Vec<String> = Vec::with_capacity(x.cols() + 1);
        if let Some(labels) = y {
            fields.push((labels[i] + 1).to_string());
        }
        for v in x.row(i) {
            fields.push(format!("{v}"));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn split_from_csv(text: &str, labeled: bool) -> Result<(Matrix, Vec<usize>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty CSV".to_string()))?;
    let cols = header.split(',').count() - usize::from(labeled);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        if labeled {
            let c: usize = fields
                .next()
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad class in line {line}")))?;
            if c == 0 {
                return Err(Error::InvalidArgument("class ids are 1-based on disk".to_string()));
            }
            labels.push(c - 1);
        }
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad float `{f}`")))?;
            data.push(v);
        }
        rows += 1;
    }
    Ok((Matrix::from_vec(rows, cols, data)?, labels))
}

/// Writes `labeled.csv`, `unlabeled.csv`, `test.csv` and (when present)
/// `source.csv` under `dir`.
pub fn export_bundle(bundle: &TaskBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("labeled.csv"),
        split_to_csv(&bundle.labeled_x, Some(&bundle.labeled_y)),
    )?;
    std::fs::write(dir.join("unlabeled.csv"), split_to_csv(&bundle.unlabeled_x, None))?;
    std::fs::write(
        dir.join("test.csv"),
        split_to_csv(&bundle.test_x, Some(&bundle.test_y)),
    )?;
    if let (Some(sx), Some(sy)) = (&bundle.source_x, &bundle.source_y) {
        std::fs::write(dir.join("source.csv"), split_to_csv(sx, Some(sy)))?;
    }
    Ok(())
}

/// Reads a bundle back from [`export_bundle`] output. Per-class counts in
/// the metadata are recomputed from the data.
pub fn import_bundle(dir: &Path, kind: TaskKind) -> Result<TaskBundle> {
    let (labeled_x, labeled_y) =
        split_from_csv(&std::fs::read_to_string(dir.join("labeled.csv"))?, true)?;
    let (unlabeled_x, _) =
        split_from_csv(&std::fs::read_to_string(dir.join("unlabeled.csv"))?, false)?;
    let (test_x, test_y) = split_from_csv(&std::fs::read_to_string(dir.join("test.csv"))?, true)?;
    let source_path = dir.join("source.csv");
    let (source_x, source_y) = if source_path.exists() {
        let (x, y) = split_from_csv(&std::fs::read_to_string(source_path)?, true)?;
        (Some(x), Some(y))
    } else {
        (None, None)
    };

    let num_classes = test_y
        .iter()
        .chain(labeled_y.iter())
        .chain(source_y.iter().flatten())
        .max()
        .map_or(0, |&m| m + 1);
    let count = |ys: &[usize]| {
        let mut c = vec![0usize; num_classes];
        for &y in ys {
            c[y] += 1;
        }
        c
    };
    // Unlabeled counts are unknown after export; record the total under
    // class 0 only if needed. Here we keep an empty histogram shape.
    let meta = TaskMeta {
        kind,
        num_classes,
        input_dim: test_x.cols(),
        source_dim: source_x.as_ref().map(|m| m.cols()),
        labeled_per_class: count(&labeled_y),
        unlabeled_per_class: vec![0; num_classes],
        test_per_class: count(&test_y),
        source_per_class: source_y.as_deref().map(count),
        no_labeled_flag: labeled_y.is_empty(),
    };
    Ok(TaskBundle {
        labeled_x,
        labeled_y,
        unlabeled_x,
        test_x,
        test_y,
        source_x,
        source_y,
        meta,
    })
}
