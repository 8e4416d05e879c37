//! A small MLP feature extractor with a linear-softmax classifier, manual
//! forward/backward passes, SGD-momentum and Adam, and a text checkpoint
//! format. A dual-extractor variant shares the classifier between two
//! feature extractors with different input dimensionalities.

use crate::error::{Error, Result};
use crate::numerics::{normal_matrix, softmax_rows, Matrix, RngState};
use crate::risks::ProbBatch;
use std::fmt::Write as _;
use std::path::Path;

pub const LEAKY_SLOPE: f64 = 0.01;
pub const SGD_MOMENTUM: f64 = 0.9;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    /// Slope 0.01 on the negative side.
    LeakyReLU,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::ReLU => "relu",
            Activation::LeakyReLU => "leaky_relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::ReLU),
            "leaky_relu" => Ok(Activation::LeakyReLU),
            other => Err(Error::InvalidArgument(format!("unknown activation {other}"))),
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => z.max(0.0),
            Activation::LeakyReLU => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

/// Architecture of one extractor+classifier stack. `layer_dims` runs
/// input -> hidden... -> feature dim; a single entry means the classifier
/// acts on the raw input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub num_classes: usize,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>, activation: Activation, num_classes: usize) -> Result<Self> {
        let spec = MlpSpec {
            layer_dims,
            activation,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() {
            return Err(Error::InvalidArgument("layer_dims must be non-empty".to_string()));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::InvalidArgument("all layer dims must be >= 1".to_string()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("num_classes must be >= 2".to_string()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for w in self.layer_dims.windows(2) {
            n += w[0] * w[1] + w[1];
        }
        n + self.feature_dim() * self.num_classes + self.num_classes
    }
}

/// One affine layer. Weight is `in_dim x out_dim`, bias is `1 x out_dim`.
/// Also reused as the per-layer gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl DenseLayer {
    fn zeros_like(&self) -> DenseLayer {
        DenseLayer {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: Matrix::zeros(1, self.bias.cols()),
        }
    }
}

/// Feature extractor: a stack of affine layers, each followed by the
/// activation. Zero layers means the identity map.
#[derive(Debug, Clone, PartialEq)]
pub struct Extractor {
    pub input_dim: usize,
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

struct ExtractorTrace {
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl Extractor {
    pub fn feature_dim(&self) -> usize {
        self.layers
            .last()
            .map_or(self.input_dim, |l| l.weight.cols())
    }

    fn forward(&self, x: &Matrix) -> Result<(Matrix, ExtractorTrace)> {
        if x.cols() != self.input_dim {
            return Err(Error::DimMismatch {
                op: "extractor forward",
                detail: format!("input has {} columns, expected {}", x.cols(), self.input_dim),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = h.matmul(&layer.weight)?;
            z.add_row_bias(&layer.bias)?;
            let a = z.map(|v| self.activation.apply(v));
            pre.push(z);
            post.push(a.clone());
            h = a;
        }
        Ok((h, ExtractorTrace { pre, post }))
    }

    /// Backprop through the stack given d(loss)/d(features); returns the
    /// per-layer gradients (same order as `layers`).
    fn backward(
        &self,
        input: &Matrix,
        trace: &ExtractorTrace,
        dfeatures: &Matrix,
    ) -> Result<Vec<DenseLayer>> {
        let mut grads: Vec<DenseLayer> = self.layers.iter().map(|l| l.zeros_like()).collect();
        let mut dh = dfeatures.clone();
        for l in (0..self.layers.len()).rev() {
            let pre = &trace.pre[l];
            let mut dz = dh.clone();
            for i in 0..dz.rows() {
                let prow = pre.row(i);
                let drow = dz.row_mut(i);
                for (d, &z) in drow.iter_mut().zip(prow.iter()) {
                    *d *= self.activation.derivative(z);
                }
            }
            let below = if l == 0 { input } else { &trace.post[l - 1] };
            grads[l].weight = below.matmul_tn(&dz)?;
            grads[l].bias = dz.col_sums();
            dh = dz.matmul_nt(&self.layers[l].weight)?;
        }
        Ok(grads)
    }
}

/// Extractor plus linear-softmax classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub spec: MlpSpec,
    pub extractor: Extractor,
    pub classifier: DenseLayer,
    revision: u64,
}

/// Dual-extractor model for heterogeneous domains: separate source/target
/// extractors feeding one shared classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ShdaModel {
    pub source: Extractor,
    pub target: Extractor,
    pub classifier: DenseLayer,
    pub num_classes: usize,
    revision: u64,
}

/// Everything produced by one forward pass; `cache` feeds `backward`.
pub struct ForwardPass {
    pub features: Matrix,
    pub logits: Matrix,
    pub probs: ProbBatch,
    pub cache: ForwardCache,
}

pub struct ForwardCache {
    input: Matrix,
    trace: ExtractorTrace,
    features: Matrix,
    probs: Matrix,
    revision: u64,
}

fn init_dense(rng: &mut RngState, in_dim: usize, out_dim: usize) -> Result<DenseLayer> {
    let std = (2.0 / in_dim as f64).sqrt();
    Ok(DenseLayer {
        weight: normal_matrix(rng, in_dim, out_dim, 0.0, std)?,
        bias: Matrix::zeros(1, out_dim),
    })
}

fn init_extractor(rng: &mut RngState, spec: &MlpSpec) -> Result<Extractor> {
    let mut layers = Vec::new();
    for w in spec.layer_dims.windows(2) {
        layers.push(init_dense(rng, w[0], w[1])?);
    }
    Ok(Extractor {
        input_dim: spec.input_dim(),
        layers,
        activation: spec.activation,
    })
}

/// He-style initialization: weights `N(0, 2/fan_in)`, biases zero. Draw
/// order is extractor layers then classifier, each weight row-major.
pub fn init_model(spec: &MlpSpec, rng: &mut RngState) -> Result<MlpModel> {
    spec.validate()?;
    let extractor = init_extractor(rng, spec)?;
    let classifier = init_dense(rng, spec.feature_dim(), spec.num_classes)?;
    Ok(MlpModel {
        spec: spec.clone(),
        extractor,
        classifier,
        revision: 0,
    })
}

/// Dual-extractor initialization; both specs must agree on feature dim and
/// class count. Draw order: source extractor, target extractor, classifier.
pub fn init_shda_model(
    source_spec: &MlpSpec,
    target_spec: &MlpSpec,
    rng: &mut RngState,
) -> Result<ShdaModel> {
    source_spec.validate()?;
    target_spec.validate()?;
    if source_spec.feature_dim() != target_spec.feature_dim() {
        return Err(Error::InvalidArgument(format!(
            "extractor feature dims differ: {} vs {}",
            source_spec.feature_dim(),
            target_spec.feature_dim()
        )));
    }
    if source_spec.num_classes != target_spec.num_classes {
        return Err(Error::InvalidArgument("class counts differ".to_string()));
    }
    let source = init_extractor(rng, source_spec)?;
    let target = init_extractor(rng, target_spec)?;
    let classifier = init_dense(rng, source_spec.feature_dim(), source_spec.num_classes)?;
    Ok(ShdaModel {
        source,
        target,
        classifier,
        num_classes: source_spec.num_classes,
        revision: 0,
    })
}

fn forward_through(
    extractor: &Extractor,
    classifier: &DenseLayer,
    x: &Matrix,
    revision: u64,
) -> Result<ForwardPass> {
    let (features, trace) = extractor.forward(x)?;
    let mut logits = features.matmul(&classifier.weight)?;
    logits.add_row_bias(&classifier.bias)?;
    let probs = softmax_rows(&logits)?;
    Ok(ForwardPass {
        cache: ForwardCache {
            input: x.clone(),
            trace,
            features: features.clone(),
            probs: probs.matrix().clone(),
            revision,
        },
        features,
        logits,
        probs,
    })
}

/// VJP of row-wise softmax: `dz = p .* (dp - rowsum(dp .* p))`.
fn softmax_vjp(probs: &Matrix, dprobs: &Matrix) -> Matrix {
    let mut dz = Matrix::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        let p = probs.row(i);
        let dp = dprobs.row(i);
        let mut s = 0.0;
        for (a, b) in dp.iter().zip(p.iter()) {
            s += a * b;
        }
        let out = dz.row_mut(i);
        for j in 0..p.len() {
            out[j] = p[j] * (dp[j] - s);
        }
    }
    dz
}

fn backward_through(
    extractor: &Extractor,
    classifier: &DenseLayer,
    cache: &ForwardCache,
    grad_wrt_probs: &Matrix,
    revision: u64,
) -> Result<(Vec<DenseLayer>, DenseLayer)> {
    if cache.revision != revision {
        return Err(Error::StaleCache(format!(
            "cache built at revision {}, model now at {}",
            cache.revision, revision
        )));
    }
    if grad_wrt_probs.rows() != cache.probs.rows() || grad_wrt_probs.cols() != cache.probs.cols() {
        return Err(Error::DimMismatch {
            op: "backward",
            detail: format!(
                "grad is {}x{}, cache holds {}x{}",
                grad_wrt_probs.rows(),
                grad_wrt_probs.cols(),
                cache.probs.rows(),
                cache.probs.cols()
            ),
        });
    }
    let dz = softmax_vjp(&cache.probs, grad_wrt_probs);
    let cls_grad = DenseLayer {
        weight: cache.features.matmul_tn(&dz)?,
        bias: dz.col_sums(),
    };
    let dfeatures = dz.matmul_nt(&classifier.weight)?;
    let layer_grads = extractor.backward(&cache.input, &cache.trace, &dfeatures)?;
    Ok((layer_grads, cls_grad))
}

/// Parameter gradients matching [`MlpModel`] layout.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<DenseLayer>,
    pub classifier: DenseLayer,
}

impl MlpGrads {
    pub fn zeros_like(model: &MlpModel) -> MlpGrads {
        MlpGrads {
            layers: model.extractor.layers.iter().map(|l| l.zeros_like()).collect(),
            classifier: model.classifier.zeros_like(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) -> Result<()> {
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            a.weight.add_assign(&b.weight)?;
            a.bias.add_assign(&b.bias)?;
        }
        self.classifier.weight.add_assign(&other.classifier.weight)?;
        self.classifier.bias.add_assign(&other.classifier.bias)
    }

    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("extractor.{i}.weight"), &l.weight));
            out.push((format!("extractor.{i}.bias"), &l.bias));
        }
        out.push(("classifier.weight".to_string(), &self.classifier.weight));
        out.push(("classifier.bias".to_string(), &self.classifier.bias));
        out
    }
}

/// Parameter gradients matching [`ShdaModel`] layout.
#[derive(Debug, Clone)]
pub struct ShdaGrads {
    pub source: Vec<DenseLayer>,
    pub target: Vec<DenseLayer>,
    pub classifier: DenseLayer,
}

impl ShdaGrads {
    pub fn zeros_like(model: &ShdaModel) -> ShdaGrads {
        ShdaGrads {
            source: model.source.layers.iter().map(|l| l.zeros_like()).collect(),
            target: model.target.layers.iter().map(|l| l.zeros_like()).collect(),
            classifier: model.classifier.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.source.iter().enumerate() {
            out.push((format!("source.{i}.weight"), &l.weight));
            out.push((format!("source.{i}.bias"), &l.bias));
        }
        for (i, l) in self.target.iter().enumerate() {
            out.push((format!("target.{i}.weight"), &l.weight));
            out.push((format!("target.{i}.bias"), &l.bias));
        }
        out.push(("classifier.weight".to_string(), &self.classifier.weight));
        out.push(("classifier.bias".to_string(), &self.classifier.bias));
        out
    }
}

impl MlpModel {
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardPass> {
        forward_through(&self.extractor, &self.classifier, x, self.revision)
    }

    /// Reverse-mode gradients of a scalar loss given its gradient with
    /// respect to the output probabilities. The cache must come from a
    /// forward call on the current parameters.
    pub fn backward(&self, cache: &ForwardCache, grad_wrt_probs: &Matrix) -> Result<MlpGrads> {
        let (layers, classifier) = backward_through(
            &self.extractor,
            &self.classifier,
            cache,
            grad_wrt_probs,
            self.revision,
        )?;
        Ok(MlpGrads { layers, classifier })
    }

    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.extractor.layers.iter().enumerate() {
            out.push((format!("extractor.{i}.weight"), &l.weight));
            out.push((format!("extractor.{i}.bias"), &l.bias));
        }
        out.push(("classifier.weight".to_string(), &self.classifier.weight));
        out.push(("classifier.bias".to_string(), &self.classifier.bias));
        out
    }

    /// Mutable view of every parameter tensor, in optimizer order. Callers
    /// that mutate parameters outside `apply_step` must treat outstanding
    /// forward caches as stale.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.extractor.layers.iter_mut().enumerate() {
            out.push((format!("extractor.{i}.weight"), &mut l.weight));
            out.push((format!("extractor.{i}.bias"), &mut l.bias));
        }
        out.push(("classifier.weight".to_string(), &mut self.classifier.weight));
        out.push(("classifier.bias".to_string(), &mut self.classifier.bias));
        out
    }

    /// One optimizer step; invalidates outstanding forward caches.
    pub fn apply_step(&mut self, grads: &MlpGrads, opt: &mut OptimizerState) -> Result<()> {
        opt.step(self.tensors_mut(), &grads.tensors())?;
        self.revision += 1;
        Ok(())
    }

    /// Squared Frobenius norm of all weight matrices (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        let mut s: f64 = self.extractor.layers.iter().map(|l| l.weight.frobenius_sq()).sum();
        s += self.classifier.weight.frobenius_sq();
        s
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }
}

impl ShdaModel {
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn forward_source(&self, x: &Matrix) -> Result<ForwardPass> {
        forward_through(&self.source, &self.classifier, x, self.revision)
    }

    pub fn forward_target(&self, x: &Matrix) -> Result<ForwardPass> {
        forward_through(&self.target, &self.classifier, x, self.revision)
    }

    pub fn backward_source(
        &self,
        cache: &ForwardCache,
        grad_wrt_probs: &Matrix,
    ) -> Result<(Vec<DenseLayer>, DenseLayer)> {
        backward_through(&self.source, &self.classifier, cache, grad_wrt_probs, self.revision)
    }

    pub fn backward_target(
        &self,
        cache: &ForwardCache,
        grad_wrt_probs: &Matrix,
    ) -> Result<(Vec<DenseLayer>, DenseLayer)> {
        backward_through(&self.target, &self.classifier, cache, grad_wrt_probs, self.revision)
    }

    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.source.layers.iter().enumerate() {
            out.push((format!("source.{i}.weight"), &l.weight));
            out.push((format!("source.{i}.bias"), &l.bias));
        }
        for (i, l) in self.target.layers.iter().enumerate() {
            out.push((format!("target.{i}.weight"), &l.weight));
            out.push((format!("target.{i}.bias"), &l.bias));
        }
        out.push(("classifier.weight".to_string(), &self.classifier.weight));
        out.push(("classifier.bias".to_string(), &self.classifier.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.source.layers.iter_mut().enumerate() {
            out.push((format!("source.{i}.weight"), &mut l.weight));
            out.push((format!("source.{i}.bias"), &mut l.bias));
        }
        for (i, l) in self.target.layers.iter_mut().enumerate() {
            out.push((format!("target.{i}.weight"), &mut l.weight));
            out.push((format!("target.{i}.bias"), &mut l.bias));
        }
        out.push(("classifier.weight".to_string(), &mut self.classifier.weight));
        out.push(("classifier.bias".to_string(), &mut self.classifier.bias));
        out
    }

    pub fn apply_step(&mut self, grads: &ShdaGrads, opt: &mut OptimizerState) -> Result<()> {
        opt.step(self.tensors_mut(), &grads.tensors())?;
        self.revision += 1;
        Ok(())
    }

    /// Squared Frobenius norm of all weight matrices (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        let mut s: f64 = self.source.layers.iter().map(|l| l.weight.frobenius_sq()).sum();
        s += self
            .target
            .layers
            .iter()
            .map(|l| l.weight.frobenius_sq())
            .sum::<f64>();
        s += self.classifier.weight.frobenius_sq();
        s
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// SGD with momentum 0.9: `buf = 0.9 buf + g; p -= lr * buf`.
    SgdMomentum,
    /// Adam with beta1 0.9, beta2 0.999, eps 1e-8 and bias correction.
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::SgdMomentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer {other}"))),
        }
    }
}

/// Optimizer with per-parameter slots, lazily shaped on the first step.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    t: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerState {
            kind,
            learning_rate,
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(
        &mut self,
        mut params: Vec<(String, &mut Matrix)>,
        grads: &[(String, &Matrix)],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::DimMismatch {
                op: "optimizer step",
                detail: format!("{} parameters, {} gradients", params.len(), grads.len()),
            });
        }
        for ((_, p), (path, g)) in params.iter().zip(grads.iter()) {
            if p.rows() != g.rows() || p.cols() != g.cols() {
                return Err(Error::DimMismatch {
                    op: "optimizer step",
                    detail: format!("gradient shape mismatch at {path}"),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(path.clone()));
            }
        }
        if self.first.is_empty() {
            self.first = grads
                .iter()
                .map(|(_, g)| Matrix::zeros(g.rows(), g.cols()))
                .collect();
            if self.kind == OptimizerKind::Adam {
                self.second = self.first.clone();
            }
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::SgdMomentum => {
                for (slot, ((_, p), (_, g))) in self
                    .first
                    .iter_mut()
                    .zip(params.iter_mut().zip(grads.iter()))
                {
                    for (b, (pv, gv)) in slot
                        .data_mut()
                        .iter_mut()
                        .zip(p.data_mut().iter_mut().zip(g.data().iter()))
                    {
                        *b = SGD_MOMENTUM * *b + gv;
                        *pv -= self.learning_rate * *b;
                    }
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for ((m, v), ((_, p), (_, g))) in self
                    .first
                    .iter_mut()
                    .zip(self.second.iter_mut())
                    .zip(params.iter_mut().zip(grads.iter()))
                {
                    for ((mv, vv), (pv, gv)) in m
                        .data_mut()
                        .iter_mut()
                        .zip(v.data_mut().iter_mut())
                        .zip(p.data_mut().iter_mut().zip(g.data().iter()))
                    {
                        *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                        *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *pv -= self.learning_rate * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: a line-oriented text format. Floats use Rust's shortest
// round-trippable formatting, so save/load is bit-exact. Field order is
// header, then tensors layer-major, each tensor row-major.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &str = "lermlab-checkpoint v1";

fn write_tensor(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "tensor {name} {} {}", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

fn dims_line(dims: &[usize]) -> String {
    dims.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn checkpoint_to_string(model: &MlpModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(out, "kind mlp");
    let _ = writeln!(out, "activation {}", model.spec.activation.name());
    let _ = writeln!(out, "layer_dims {}", dims_line(&model.spec.layer_dims));
    let _ = writeln!(out, "num_classes {}", model.spec.num_classes);
    for (name, tensor) in model.tensors() {
        write_tensor(&mut out, &name, tensor);
    }
    let _ = writeln!(out, "end");
    out
}

pub fn shda_checkpoint_to_string(model: &ShdaModel, activation: Activation) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(out, "kind shda");
    let _ = writeln!(out, "activation {}", activation.name());
    let _ = writeln!(out, "source_dims {}", dims_line(&extractor_dims(&model.source)));
    let _ = writeln!(out, "target_dims {}", dims_line(&extractor_dims(&model.target)));
    let _ = writeln!(out, "num_classes {}", model.num_classes);
    for (name, tensor) in model.tensors() {
        write_tensor(&mut out, &name, tensor);
    }
    let _ = writeln!(out, "end");
    out
}

fn extractor_dims(e: &Extractor) -> Vec<usize> {
    let mut dims = vec![e.input_dim];
    for l in &e.layers {
        dims.push(l.weight.cols());
    }
    dims
}

pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(model))?;
    Ok(())
}

struct CheckpointReader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> CheckpointReader<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.lines
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("unexpected end of file at line {}", self.line_no)))
    }

    fn expect_field(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.collect()),
            other => Err(Error::Checkpoint(format!(
                "expected `{key}` at line {}, found {:?}",
                self.line_no, other
            ))),
        }
    }

    fn read_tensor(&mut self, expect_name: &str) -> Result<Matrix> {
        let parts = self.expect_field("tensor")?;
        if parts.len() != 3 || parts[0] != expect_name {
            return Err(Error::Checkpoint(format!(
                "expected tensor {expect_name} at line {}",
                self.line_no
            )));
        }
        let rows: usize = parse_num(parts[1], self.line_no)?;
        let cols: usize = parse_num(parts[2], self.line_no)?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.next_line()?;
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| {
                    Error::Checkpoint(format!("bad float `{tok}` at line {}", self.line_no))
                })?;
                data.push(v);
            }
        }
        Matrix::from_vec(rows, cols, data)
            .map_err(|e| Error::Checkpoint(format!("tensor {expect_name}: {e}")))
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("bad number `{s}` at line {line}")))
}

fn parse_dims(parts: &[&str], line: usize) -> Result<Vec<usize>> {
    parts.iter().map(|s| parse_num(s, line)).collect()
}

pub fn checkpoint_from_string(text: &str) -> Result<MlpModel> {
    let mut r = CheckpointReader {
        lines: text.lines(),
        line_no: 0,
    };
    if r.next_line()? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic line".to_string()));
    }
    let kind = r.expect_field("kind")?;
    if kind != ["mlp"] {
        return Err(Error::Checkpoint(format!("expected kind mlp, got {kind:?}")));
    }
    let activation = Activation::parse(
        r.expect_field("activation")?
            .first()
            .ok_or_else(|| Error::Checkpoint("missing activation".to_string()))?,
    )?;
    let dims = parse_dims(&r.expect_field("layer_dims")?, r.line_no)?;
    let num_classes: usize = parse_num(
        r.expect_field("num_classes")?
            .first()
            .ok_or_else(|| Error::Checkpoint("missing num_classes".to_string()))?,
        r.line_no,
    )?;
    let spec = MlpSpec::new(dims, activation, num_classes)
        .map_err(|e| Error::Checkpoint(format!("invalid spec: {e}")))?;

    let mut layers = Vec::new();
    for i in 0..spec.layer_dims.len() - 1 {
        let weight = r.read_tensor(&format!("extractor.{i}.weight"))?;
        let bias = r.read_tensor(&format!("extractor.{i}.bias"))?;
        layers.push(DenseLayer { weight, bias });
    }
    let classifier = DenseLayer {
        weight: r.read_tensor("classifier.weight")?,
        bias: r.read_tensor("classifier.bias")?,
    };
    if r.next_line()? != "end" {
        return Err(Error::Checkpoint("missing end marker".to_string()));
    }
    Ok(MlpModel {
        extractor: Extractor {
            input_dim: spec.input_dim(),
            layers,
            activation,
        },
        classifier,
        spec,
        revision: 0,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    checkpoint_from_string(&std::fs::read_to_string(path)?)
}

pub fn save_shda_checkpoint(model: &ShdaModel, activation: Activation, path: &Path) -> Result<()> {
    std::fs::write(path, shda_checkpoint_to_string(model, activation))?;
    Ok(())
}
