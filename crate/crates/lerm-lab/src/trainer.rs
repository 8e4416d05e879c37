//! Composite training objectives (ERM plus an optional unlabeled-data
//! regularizer), seeded training loops for the four scenarios, and
//! evaluation metrics.
//!
//! All randomness inside a run derives from the single train seed through
//! tagged substreams (init, labeled order, unlabeled sampling, per-step
//! augmentation), so arms that share a seed see identical draws for the
//! parts of the objective they share. With `lambda = 0` the regularizer
//! term is skipped entirely, which makes the trajectory bit-identical to
//! the plain ERM arm.

use crate::error::{Error, Result};
use crate::model::{
    init_model, init_shda_model, Activation, DenseLayer, MlpGrads, MlpModel, MlpSpec,
    OptimizerKind, OptimizerState, ShdaGrads, ShdaModel,
};
use crate::numerics::{Matrix, RngState};
use crate::risks::{
    empirical_risk, empirical_risk_grad, entropy_risk, entropy_risk_grad, label_encoding_risk,
    label_encoding_risk_grad, prediction_means_unlabeled, DivergenceKind, ProbBatch,
    DEFAULT_MASS_EPS,
};
use crate::tasks::{augment, AugmentKind, TaskBundle, TaskKind};
use std::fmt::Write as _;

const TAG_INIT: u64 = 1;
const TAG_LABELED_ORDER: u64 = 2;
const TAG_UNLABELED_SAMPLE: u64 = 3;
const TAG_AUG: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Ssl,
    Uda,
    Shda,
    Sfda,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Ssl => "ssl",
            Scenario::Uda => "uda",
            Scenario::Shda => "shda",
            Scenario::Sfda => "sfda",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularizer {
    None,
    EntMin,
    Lerm(DivergenceKind),
}

impl Regularizer {
    pub fn name(self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::EntMin => "entmin",
            Regularizer::Lerm(_) => "lerm",
        }
    }
}

/// Whether prediction means (and entropy) are taken over the sampled
/// mini-batch or the full unlabeled set at every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanScope {
    MiniBatch,
    FullSet,
}

impl MeanScope {
    pub fn name(self) -> &'static str {
        match self {
            MeanScope::MiniBatch => "minibatch",
            MeanScope::FullSet => "fullset",
        }
    }
}

/// Which objective to assemble. `alpha` is the attachment point for an
/// external method's loss; no such method ships here, so it must be 0 and
/// the objective degenerates to ERM plus the chosen regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub scenario: Scenario,
    pub use_erm: bool,
    pub regularizer: Regularizer,
    pub lambda: f64,
    pub mu: f64,
    pub alpha: f64,
    pub tau: f64,
    pub mean_scope: MeanScope,
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument("lambda must be >= 0".to_string()));
        }
        if self.mu < 0.0 || !self.mu.is_finite() {
            return Err(Error::InvalidArgument("mu must be >= 0".to_string()));
        }
        if self.tau < 0.0 || !self.tau.is_finite() {
            return Err(Error::InvalidArgument("tau must be >= 0".to_string()));
        }
        if self.alpha != 0.0 {
            return Err(Error::InvalidArgument(
                "alpha attaches an external method loss; none is bundled, so alpha must be 0"
                    .to_string(),
            ));
        }
        if self.scenario != Scenario::Ssl && self.mu != 0.0 {
            return Err(Error::InvalidArgument("mu applies to SSL only".to_string()));
        }
        if self.scenario != Scenario::Shda && self.tau != 0.0 {
            return Err(Error::InvalidArgument("tau applies to SHDA only".to_string()));
        }
        if self.scenario == Scenario::Sfda {
            if self.use_erm {
                return Err(Error::InvalidArgument(
                    "source-free adaptation has no labeled data; use_erm must be false".to_string(),
                ));
            }
            if self.regularizer == Regularizer::None {
                return Err(Error::InvalidArgument(
                    "source-free adaptation needs a regularizer".to_string(),
                ));
            }
        }
        Ok(())
    }

    /// True when the unlabeled term is actually computed.
    fn reg_active(&self) -> bool {
        self.regularizer != Regularizer::None && self.lambda != 0.0
    }
}

/// Weak/strong augmentation intensities used by the SSL objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub sigma_weak: f64,
    pub sigma_strong: f64,
    pub dropout_p: f64,
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_weak < 0.0 || self.sigma_strong < 0.0 {
            return Err(Error::InvalidArgument("sigmas must be >= 0".to_string()));
        }
        if self.sigma_weak >= self.sigma_strong {
            return Err(Error::InvalidArgument(format!(
                "sigma_weak ({}) must be smaller than sigma_strong ({})",
                self.sigma_weak, self.sigma_strong
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidArgument("dropout_p must be in [0, 1)".to_string()));
        }
        Ok(())
    }

    pub fn weak(&self) -> AugmentKind {
        AugmentKind::Weak {
            sigma: self.sigma_weak,
        }
    }

    pub fn strong(&self) -> AugmentKind {
        AugmentKind::Strong {
            sigma: self.sigma_strong,
            dropout_p: self.dropout_p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".to_string()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidArgument("eval_every must be >= 1".to_string()));
        }
        if self.learning_rate <= 0.0 || self.learning_rate.is_nan() {
            return Err(Error::InvalidArgument("learning_rate must be positive".to_string()));
        }
        Ok(())
    }

    /// Non-fatal configuration smells.
    pub fn warnings(&self, num_classes: usize) -> Vec<String> {
        let mut w = Vec::new();
        if self.batch_size < num_classes {
            w.push(format!(
                "batch_size {} is below the class count {}; per-batch prediction means will starve classes",
                self.batch_size, num_classes
            ));
        }
        w
    }
}

/// Loss decomposition of one objective evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    /// Cross-entropy terms on labeled data.
    pub erm: f64,
    /// The lambda-weighted unlabeled regularizer term.
    pub reg: f64,
    /// The tau-weighted parameter-norm term (dual-extractor objective).
    pub penalty: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.erm + self.reg + self.penalty
    }
}

/// Unweighted regularizer value and its gradient w.r.t. the probabilities.
fn reg_value_and_grad(probs: &ProbBatch, reg: Regularizer) -> Result<(f64, Matrix)> {
    match reg {
        Regularizer::EntMin => Ok((entropy_risk(probs), entropy_risk_grad(probs))),
        Regularizer::Lerm(kind) => {
            let means = prediction_means_unlabeled(probs, DEFAULT_MASS_EPS)?;
            let value = label_encoding_risk(&means, kind)?;
            let grad = label_encoding_risk_grad(probs, kind, DEFAULT_MASS_EPS)?;
            Ok((value, grad))
        }
        Regularizer::None => Ok((0.0, Matrix::zeros(probs.len(), probs.num_classes()))),
    }
}

fn add_ce_term(
    model: &MlpModel,
    x: &Matrix,
    labels: &[usize],
    weight: f64,
    parts: &mut LossParts,
    grads: &mut MlpGrads,
) -> Result<()> {
    let fp = model.forward(x)?;
    parts.erm += weight * empirical_risk(&fp.probs, labels)?;
    let dp = empirical_risk_grad(&fp.probs, labels)?.scaled(weight);
    grads.add_assign(&model.backward(&fp.cache, &dp)?)
}

fn add_reg_term(
    model: &MlpModel,
    x: &Matrix,
    reg: Regularizer,
    weight: f64,
    parts: &mut LossParts,
    grads: &mut MlpGrads,
) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::EmptySet("unlabeled batch"));
    }
    let fp = model.forward(x)?;
    let (value, dprobs) = reg_value_and_grad(&fp.probs, reg)?;
    parts.reg += weight * value;
    grads.add_assign(&model.backward(&fp.cache, &dprobs.scaled(weight))?)
}

/// SSL objective on already-augmented batches: weak/strong cross-entropy on
/// labeled data plus the lambda-weighted regularizer on weak/strong views
/// of the unlabeled batch. This is the deterministic core that gradient
/// checks drive directly.
pub fn ssl_objective_on_views(
    model: &MlpModel,
    weak_labeled: &Matrix,
    strong_labeled: Option<&Matrix>,
    labels: &[usize],
    weak_unlabeled: Option<&Matrix>,
    strong_unlabeled: Option<&Matrix>,
    spec: &ObjectiveSpec,
) -> Result<(LossParts, MlpGrads)> {
    spec.validate()?;
    let mut parts = LossParts::default();
    let mut grads = MlpGrads::zeros_like(model);
    if spec.use_erm {
        if labels.is_empty() {
            return Err(Error::EmptySet("labeled batch"));
        }
        add_ce_term(model, weak_labeled, labels, 1.0, &mut parts, &mut grads)?;
        if let Some(sl) = strong_labeled {
            add_ce_term(model, sl, labels, spec.mu, &mut parts, &mut grads)?;
        }
    }
    if spec.reg_active() {
        let wu = weak_unlabeled.ok_or(Error::EmptySet("unlabeled batch"))?;
        add_reg_term(model, wu, spec.regularizer, spec.lambda, &mut parts, &mut grads)?;
        if let Some(su) = strong_unlabeled {
            add_reg_term(
                model,
                su,
                spec.regularizer,
                spec.lambda * spec.mu,
                &mut parts,
                &mut grads,
            )?;
        }
    }
    Ok((parts, grads))
}

/// SSL objective: augments the batches (weak labeled, strong labeled when
/// `mu != 0`, then weak/strong unlabeled when the regularizer is active)
/// and evaluates [`ssl_objective_on_views`].
pub fn ssl_objective(
    model: &MlpModel,
    labeled_x: &Matrix,
    labels: &[usize],
    unlabeled_x: Option<&Matrix>,
    spec: &ObjectiveSpec,
    aug: &AugmentParams,
    rng: &mut RngState,
) -> Result<(LossParts, MlpGrads)> {
    spec.validate()?;
    if spec.regularizer != Regularizer::None && unlabeled_x.is_none_or(|m| m.rows() == 0) {
        return Err(Error::EmptySet("unlabeled batch"));
    }
    let weak_labeled = augment(labeled_x, aug.weak(), rng)?;
    let strong_labeled = if spec.use_erm && spec.mu != 0.0 {
        Some(augment(labeled_x, aug.strong(), rng)?)
    } else {
        None
    };
    let (weak_unlabeled, strong_unlabeled) = if spec.reg_active() {
        let u = unlabeled_x.expect("validated above");
        let wu = augment(u, aug.weak(), rng)?;
        let su = if spec.mu != 0.0 {
            Some(augment(u, aug.strong(), rng)?)
        } else {
            None
        };
        (Some(wu), su)
    } else {
        (None, None)
    };
    ssl_objective_on_views(
        model,
        &weak_labeled,
        strong_labeled.as_ref(),
        labels,
        weak_unlabeled.as_ref(),
        strong_unlabeled.as_ref(),
        spec,
    )
}

/// UDA objective: source cross-entropy plus the lambda-weighted regularizer
/// over target predictions. No augmentation is involved.
pub fn uda_objective(
    model: &MlpModel,
    source_x: &Matrix,
    source_y: &[usize],
    target_x: Option<&Matrix>,
    spec: &ObjectiveSpec,
) -> Result<(LossParts, MlpGrads)> {
    spec.validate()?;
    if spec.regularizer != Regularizer::None && target_x.is_none_or(|m| m.rows() == 0) {
        return Err(Error::EmptySet("unlabeled batch"));
    }
    let mut parts = LossParts::default();
    let mut grads = MlpGrads::zeros_like(model);
    if spec.use_erm {
        if source_y.is_empty() {
            return Err(Error::EmptySet("source batch"));
        }
        add_ce_term(model, source_x, source_y, 1.0, &mut parts, &mut grads)?;
    }
    if spec.reg_active() {
        add_reg_term(
            model,
            target_x.expect("validated above"),
            spec.regularizer,
            spec.lambda,
            &mut parts,
            &mut grads,
        )?;
    }
    Ok((parts, grads))
}

/// Source-free adaptation objective: the regularizer term alone, evaluated
/// on unlabeled target samples through a pretrained model.
pub fn sfda_objective(
    model: &MlpModel,
    target_x: &Matrix,
    spec: &ObjectiveSpec,
) -> Result<(LossParts, MlpGrads)> {
    spec.validate()?;
    let mut parts = LossParts::default();
    let mut grads = MlpGrads::zeros_like(model);
    if spec.reg_active() {
        add_reg_term(model, target_x, spec.regularizer, spec.lambda, &mut parts, &mut grads)?;
    }
    Ok((parts, grads))
}

fn add_shda_layer_grads(dst: &mut [DenseLayer], src: Vec<DenseLayer>) -> Result<()> {
    for (d, s) in dst.iter_mut().zip(src) {
        d.weight.add_assign(&s.weight)?;
        d.bias.add_assign(&s.bias)?;
    }
    Ok(())
}

/// Dual-extractor objective: source cross-entropy through the source
/// extractor, labeled-target cross-entropy through the target extractor,
/// the lambda-weighted regularizer on unlabeled target predictions, and a
/// tau-weighted squared norm of all weight matrices (biases excluded).
pub fn shda_objective(
    model: &ShdaModel,
    source_x: &Matrix,
    source_y: &[usize],
    labeled_x: &Matrix,
    labeled_y: &[usize],
    unlabeled_x: Option<&Matrix>,
    spec: &ObjectiveSpec,
) -> Result<(LossParts, ShdaGrads)> {
    spec.validate()?;
    if spec.regularizer != Regularizer::None && unlabeled_x.is_none_or(|m| m.rows() == 0) {
        return Err(Error::EmptySet("unlabeled batch"));
    }
    let mut parts = LossParts::default();
    let mut grads = ShdaGrads::zeros_like(model);

    if spec.use_erm {
        if source_y.is_empty() || labeled_y.is_empty() {
            return Err(Error::EmptySet("labeled batch"));
        }
        let fp = model.forward_source(source_x)?;
        parts.erm += empirical_risk(&fp.probs, source_y)?;
        let dp = empirical_risk_grad(&fp.probs, source_y)?;
        let (src_layers, cls) = model.backward_source(&fp.cache, &dp)?;
        add_shda_layer_grads(&mut grads.source, src_layers)?;
        grads.classifier.weight.add_assign(&cls.weight)?;
        grads.classifier.bias.add_assign(&cls.bias)?;

        let fp = model.forward_target(labeled_x)?;
        parts.erm += empirical_risk(&fp.probs, labeled_y)?;
        let dp = empirical_risk_grad(&fp.probs, labeled_y)?;
        let (tgt_layers, cls) = model.backward_target(&fp.cache, &dp)?;
        add_shda_layer_grads(&mut grads.target, tgt_layers)?;
        grads.classifier.weight.add_assign(&cls.weight)?;
        grads.classifier.bias.add_assign(&cls.bias)?;
    }

    if spec.reg_active() {
        let u = unlabeled_x.expect("validated above");
        let fp = model.forward_target(u)?;
        let (value, dprobs) = reg_value_and_grad(&fp.probs, spec.regularizer)?;
        parts.reg += spec.lambda * value;
        let (tgt_layers, cls) = model.backward_target(&fp.cache, &dprobs.scaled(spec.lambda))?;
        add_shda_layer_grads(&mut grads.target, tgt_layers)?;
        grads.classifier.weight.add_assign(&cls.weight)?;
        grads.classifier.bias.add_assign(&cls.bias)?;
    }

    if spec.tau != 0.0 {
        parts.penalty = spec.tau * model.weight_norm_sq();
        let two_tau = 2.0 * spec.tau;
        for (g, l) in grads.source.iter_mut().zip(model.source.layers.iter()) {
            g.weight.add_scaled_assign(&l.weight, two_tau)?;
        }
        for (g, l) in grads.target.iter_mut().zip(model.target.layers.iter()) {
            g.weight.add_scaled_assign(&l.weight, two_tau)?;
        }
        grads
            .classifier
            .weight
            .add_scaled_assign(&model.classifier.weight, two_tau)?;
    }
    Ok((parts, grads))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Per-class confusion counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClassStats {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub support: usize,
}

impl ClassStats {
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalMetrics {
    pub top1: f64,
    pub macro_f1: f64,
    pub mean_entropy: f64,
    /// Predicted-class counts over the test set.
    pub histogram: Vec<usize>,
    pub per_class: Vec<ClassStats>,
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Metrics from a probability batch against ground-truth labels.
pub fn evaluate_probs(probs: &ProbBatch, labels: &[usize]) -> Result<EvalMetrics> {
    if labels.is_empty() {
        return Err(Error::EmptySet("test"));
    }
    if labels.len() != probs.len() {
        return Err(Error::DimMismatch {
            op: "evaluate",
            detail: format!("{} labels for {} rows", labels.len(), probs.len()),
        });
    }
    let c = probs.num_classes();
    let mut stats = vec![ClassStats::default(); c];
    let mut histogram = vec![0usize; c];
    let mut correct = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: c,
                row: i,
            });
        }
        let pred = argmax_row(probs.row(i));
        histogram[pred] += 1;
        stats[y].support += 1;
        if pred == y {
            correct += 1;
            stats[y].tp += 1;
        } else {
            stats[pred].fp += 1;
            stats[y].fn_ += 1;
        }
    }
    let macro_f1 = stats.iter().map(ClassStats::f1).sum::<f64>() / c as f64;
    Ok(EvalMetrics {
        top1: correct as f64 / labels.len() as f64,
        macro_f1,
        mean_entropy: entropy_risk(probs),
        histogram,
        per_class: stats,
    })
}

pub fn evaluate_model(model: &MlpModel, x: &Matrix, y: &[usize]) -> Result<EvalMetrics> {
    let fp = model.forward(x)?;
    evaluate_probs(&fp.probs, y)
}

pub fn evaluate_shda_model(model: &ShdaModel, x: &Matrix, y: &[usize]) -> Result<EvalMetrics> {
    let fp = model.forward_target(x)?;
    evaluate_probs(&fp.probs, y)
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

/// One evaluation row; the CSV layout is
/// `epoch,loss_erm,loss_reg,top1,macro_f1,mean_entropy,hist_1..hist_C`.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub loss_erm: f64,
    pub loss_reg: f64,
    pub loss_penalty: f64,
    pub top1: f64,
    pub macro_f1: f64,
    pub mean_entropy: f64,
    pub histogram: Vec<usize>,
}

pub fn metrics_csv(records: &[MetricsRecord], num_classes: usize) -> String {
    let mut out = String::new();
    let mut header = vec![
        "epoch".to_string(),
        "loss_erm".to_string(),
        "loss_reg".to_string(),
        "top1".to_string(),
        "macro_f1".to_string(),
        "mean_entropy".to_string(),
    ];
    for c in 1..=num_classes {
        header.push(format!("hist_{c}"));
    }
    let _ = writeln!(out, "{}", header.join(","));
    for r in records {
        let mut fields = vec![
            r.epoch.to_string(),
            format!("{}", r.loss_erm),
            format!("{}", r.loss_reg),
            format!("{}", r.top1),
            format!("{}", r.macro_f1),
            format!("{}", r.mean_entropy),
        ];
        for &h in &r.histogram {
            fields.push(h.to_string());
        }
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Single(MlpModel),
    Dual(ShdaModel),
}

impl TrainedModel {
    pub fn as_single(&self) -> Option<&MlpModel> {
        match self {
            TrainedModel::Single(m) => Some(m),
            TrainedModel::Dual(_) => None,
        }
    }

    pub fn as_dual(&self) -> Option<&ShdaModel> {
        match self {
            TrainedModel::Single(_) => None,
            TrainedModel::Dual(m) => Some(m),
        }
    }

    pub fn evaluate(&self, x: &Matrix, y: &[usize]) -> Result<EvalMetrics> {
        match self {
            TrainedModel::Single(m) => evaluate_model(m, x, y),
            TrainedModel::Dual(m) => evaluate_shda_model(m, x, y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub metrics: Vec<MetricsRecord>,
    /// Set when a non-finite loss or gradient aborted training; metrics
    /// hold the last finite records.
    pub diverged: Option<(usize, usize)>,
    pub warnings: Vec<String>,
}

/// Architecture knob shared by all scenarios: hidden layer widths appended
/// to the input dimension; the last entry is the feature dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub hidden_dims: Vec<usize>,
}

impl ArchSpec {
    fn mlp_spec(&self, input_dim: usize, activation: Activation, classes: usize) -> Result<MlpSpec> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&self.hidden_dims);
        MlpSpec::new(dims, activation, classes)
    }
}

fn eval_losses_single(
    model: &MlpModel,
    task: &TaskBundle,
    spec: &ObjectiveSpec,
) -> Result<LossParts> {
    let mut parts = LossParts::default();
    if spec.use_erm {
        match spec.scenario {
            Scenario::Ssl => {
                let fp = model.forward(&task.labeled_x)?;
                parts.erm = empirical_risk(&fp.probs, &task.labeled_y)?;
            }
            Scenario::Uda => {
                let sx = task.source_x.as_ref().ok_or(Error::EmptySet("source"))?;
                let sy = task.source_y.as_ref().ok_or(Error::EmptySet("source"))?;
                let fp = model.forward(sx)?;
                parts.erm = empirical_risk(&fp.probs, sy)?;
            }
            _ => {}
        }
    }
    if spec.reg_active() && task.unlabeled_x.rows() > 0 {
        let fp = model.forward(&task.unlabeled_x)?;
        let (value, _) = reg_value_and_grad(&fp.probs, spec.regularizer)?;
        parts.reg = spec.lambda * value;
    }
    Ok(parts)
}

fn eval_losses_dual(model: &ShdaModel, task: &TaskBundle, spec: &ObjectiveSpec) -> Result<LossParts> {
    let mut parts = LossParts::default();
    if spec.use_erm {
        let sx = task.source_x.as_ref().ok_or(Error::EmptySet("source"))?;
        let sy = task.source_y.as_ref().ok_or(Error::EmptySet("source"))?;
        let fp = model.forward_source(sx)?;
        parts.erm = empirical_risk(&fp.probs, sy)?;
        let fp = model.forward_target(&task.labeled_x)?;
        parts.erm += empirical_risk(&fp.probs, &task.labeled_y)?;
    }
    if spec.reg_active() && task.unlabeled_x.rows() > 0 {
        let fp = model.forward_target(&task.unlabeled_x)?;
        let (value, _) = reg_value_and_grad(&fp.probs, spec.regularizer)?;
        parts.reg = spec.lambda * value;
    }
    if spec.tau != 0.0 {
        parts.penalty = spec.tau * model.weight_norm_sq();
    }
    Ok(parts)
}

fn record_for(
    epoch: usize,
    losses: LossParts,
    eval: &EvalMetrics,
) -> MetricsRecord {
    MetricsRecord {
        epoch,
        loss_erm: losses.erm,
        loss_reg: losses.reg,
        loss_penalty: losses.penalty,
        top1: eval.top1,
        macro_f1: eval.macro_f1,
        mean_entropy: eval.mean_entropy,
        histogram: eval.histogram.clone(),
    }
}

fn check_scenario_task(spec: &ObjectiveSpec, task: &TaskBundle) -> Result<()> {
    let ok = match spec.scenario {
        Scenario::Ssl => matches!(task.meta.kind, TaskKind::SslBlobs | TaskKind::SslImbalanced),
        Scenario::Uda | Scenario::Sfda => task.meta.kind == TaskKind::Uda,
        Scenario::Shda => task.meta.kind == TaskKind::Shda,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "scenario {} cannot run on a {} bundle",
            spec.scenario.name(),
            task.meta.kind.name()
        )))
    }
}

/// Runs one seeded training loop and evaluates on the test split at epoch 0,
/// every `eval_every` epochs, and at the final epoch.
///
/// `pretrained` is required for source-free adaptation (the model to adapt)
/// and rejected elsewhere.
pub fn train(
    task: &TaskBundle,
    spec: &ObjectiveSpec,
    cfg: &TrainConfig,
    aug: &AugmentParams,
    pretrained: Option<&MlpModel>,
    arch: &ArchSpec,
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    check_scenario_task(spec, task)?;
    if task.test_y.is_empty() {
        return Err(Error::EmptySet("test"));
    }
    if spec.scenario == Scenario::Sfda && pretrained.is_none() {
        return Err(Error::InvalidArgument(
            "source-free adaptation needs a pretrained checkpoint".to_string(),
        ));
    }
    if spec.scenario != Scenario::Sfda && pretrained.is_some() {
        return Err(Error::InvalidArgument(
            "pretrained models are only consumed by source-free adaptation".to_string(),
        ));
    }
    if spec.regularizer != Regularizer::None && task.unlabeled_x.rows() == 0 {
        return Err(Error::EmptySet("unlabeled"));
    }
    match spec.scenario {
        Scenario::Shda => train_shda(task, spec, cfg, arch),
        Scenario::Sfda => train_single(task, spec, cfg, aug, Some(pretrained.unwrap()), arch),
        _ => train_single(task, spec, cfg, aug, None, arch),
    }
}

fn train_single(
    task: &TaskBundle,
    spec: &ObjectiveSpec,
    cfg: &TrainConfig,
    aug: &AugmentParams,
    pretrained: Option<&MlpModel>,
    arch: &ArchSpec,
) -> Result<TrainOutcome> {
    let classes = task.meta.num_classes;
    let mut warnings = cfg.warnings(classes);
    if spec.scenario == Scenario::Ssl {
        aug.validate()?;
    }
    if task.meta.no_labeled_flag && spec.scenario == Scenario::Ssl {
        warnings.push("bundle carries no labeled samples".to_string());
    }

    let mut model = match pretrained {
        Some(m) => {
            if m.spec.input_dim() != task.meta.input_dim {
                return Err(Error::DimMismatch {
                    op: "sfda",
                    detail: format!(
                        "checkpoint expects {} input dims, task has {}",
                        m.spec.input_dim(),
                        task.meta.input_dim
                    ),
                });
            }
            m.clone()
        }
        None => {
            let mlp_spec = arch.mlp_spec(task.meta.input_dim, Activation::ReLU, classes)?;
            let mut init_rng = RngState::substream(cfg.seed, &[TAG_INIT]);
            init_model(&mlp_spec, &mut init_rng)?
        }
    };
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate);

    // The "labeled" loop set: labeled samples for SSL, source samples for
    // UDA, the unlabeled target set for source-free adaptation.
    let (loop_x, loop_y): (&Matrix, Option<&[usize]>) = match spec.scenario {
        Scenario::Ssl => (&task.labeled_x, Some(&task.labeled_y)),
        Scenario::Uda => (
            task.source_x.as_ref().ok_or(Error::EmptySet("source"))?,
            Some(task.source_y.as_ref().ok_or(Error::EmptySet("source"))?),
        ),
        Scenario::Sfda => (&task.unlabeled_x, None),
        Scenario::Shda => unreachable!("dual loop handles shda"),
    };
    if loop_x.rows() == 0 {
        return Err(Error::EmptySet("training"));
    }

    let mut metrics = Vec::new();
    let losses = eval_losses_single(&model, task, spec)?;
    let eval = evaluate_model(&model, &task.test_x, &task.test_y)?;
    metrics.push(record_for(0, losses, &eval));

    let n_loop = loop_x.rows();
    let n_unlab = task.unlabeled_x.rows();
    let steps = n_loop.div_ceil(cfg.batch_size);
    let mut diverged = None;

    'outer: for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n_loop).collect();
        RngState::substream(cfg.seed, &[TAG_LABELED_ORDER, epoch as u64]).shuffle(&mut order);
        let mut unlab_rng = RngState::substream(cfg.seed, &[TAG_UNLABELED_SAMPLE, epoch as u64]);
        for step in 0..steps {
            let lo = step * cfg.batch_size;
            let hi = (lo + cfg.batch_size).min(n_loop);
            let idx = &order[lo..hi];
            let batch_x = loop_x.select_rows(idx);
            let batch_y: Vec<usize> =
                loop_y.map_or_else(Vec::new, |y| idx.iter().map(|&i| y[i]).collect());

            // Unlabeled views are sampled whenever a regularizer arm is
            // configured, so lambda sweeps of one arm share every stream.
            let unlabeled: Option<Matrix> = if spec.regularizer != Regularizer::None
                && spec.scenario != Scenario::Sfda
            {
                match spec.mean_scope {
                    MeanScope::FullSet => Some(task.unlabeled_x.clone()),
                    MeanScope::MiniBatch => {
                        let k = cfg.batch_size.min(n_unlab);
                        let uidx = unlab_rng.sample_indices(n_unlab, k);
                        Some(task.unlabeled_x.select_rows(&uidx))
                    }
                }
            } else {
                None
            };

            let step_result = match spec.scenario {
                Scenario::Ssl => {
                    let mut aug_rng =
                        RngState::substream(cfg.seed, &[TAG_AUG, epoch as u64, step as u64]);
                    ssl_objective(
                        &model,
                        &batch_x,
                        &batch_y,
                        unlabeled.as_ref(),
                        spec,
                        aug,
                        &mut aug_rng,
                    )
                }
                Scenario::Uda => {
                    uda_objective(&model, &batch_x, &batch_y, unlabeled.as_ref(), spec)
                }
                Scenario::Sfda => sfda_objective(&model, &batch_x, spec),
                Scenario::Shda => unreachable!(),
            };
            let (parts, grads) = step_result?;
            if !parts.total().is_finite() {
                diverged = Some((epoch, step));
                break 'outer;
            }
            match model.apply_step(&grads, &mut opt) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient(_)) => {
                    diverged = Some((epoch, step));
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let losses = eval_losses_single(&model, task, spec)?;
            let eval = evaluate_model(&model, &task.test_x, &task.test_y)?;
            metrics.push(record_for(epoch, losses, &eval));
        }
    }

    Ok(TrainOutcome {
        model: TrainedModel::Single(model),
        metrics,
        diverged,
        warnings,
    })
}

fn train_shda(
    task: &TaskBundle,
    spec: &ObjectiveSpec,
    cfg: &TrainConfig,
    arch: &ArchSpec,
) -> Result<TrainOutcome> {
    let classes = task.meta.num_classes;
    if arch.hidden_dims.is_empty() && task.meta.source_dim != Some(task.meta.input_dim) {
        return Err(Error::InvalidArgument(
            "heterogeneous domains need at least one hidden layer to reach a shared feature dim"
                .to_string(),
        ));
    }
    let source_dim = task.meta.source_dim.ok_or(Error::EmptySet("source"))?;
    let source_spec = arch.mlp_spec(source_dim, Activation::LeakyReLU, classes)?;
    let target_spec = arch.mlp_spec(task.meta.input_dim, Activation::LeakyReLU, classes)?;
    let mut init_rng = RngState::substream(cfg.seed, &[TAG_INIT]);
    let mut model = init_shda_model(&source_spec, &target_spec, &mut init_rng)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate);

    let source_x = task.source_x.as_ref().ok_or(Error::EmptySet("source"))?;
    let source_y = task.source_y.as_ref().ok_or(Error::EmptySet("source"))?;
    if spec.use_erm && (source_y.is_empty() || task.labeled_y.is_empty()) {
        return Err(Error::EmptySet("labeled"));
    }

    let mut metrics = Vec::new();
    let losses = eval_losses_dual(&model, task, spec)?;
    let eval = evaluate_shda_model(&model, &task.test_x, &task.test_y)?;
    metrics.push(record_for(0, losses, &eval));

    let unlabeled = if spec.regularizer != Regularizer::None {
        Some(&task.unlabeled_x)
    } else {
        None
    };
    let mut diverged = None;

    // Full-batch gradient descent: one step per epoch over all splits.
    for epoch in 1..=cfg.epochs {
        let (parts, grads) = shda_objective(
            &model,
            source_x,
            source_y,
            &task.labeled_x,
            &task.labeled_y,
            unlabeled.map(|m| m as _),
            spec,
        )?;
        if !parts.total().is_finite() {
            diverged = Some((epoch, 0));
            break;
        }
        match model.apply_step(&grads, &mut opt) {
            Ok(()) => {}
            Err(Error::NonFiniteGradient(_)) => {
                diverged = Some((epoch, 0));
                break;
            }
            Err(e) => return Err(e),
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let losses = eval_losses_dual(&model, task, spec)?;
            let eval = evaluate_shda_model(&model, &task.test_x, &task.test_y)?;
            metrics.push(record_for(epoch, losses, &eval));
        }
    }

    Ok(TrainOutcome {
        model: TrainedModel::Dual(model),
        metrics,
        diverged,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{gen_blobs_ssl, gen_shda, gen_uda};

    fn ssl_spec(reg: Regularizer, lambda: f64) -> ObjectiveSpec {
        ObjectiveSpec {
            scenario: Scenario::Ssl,
            use_erm: true,
            regularizer: reg,
            lambda,
            mu: 0.1,
            alpha: 0.0,
            tau: 0.0,
            mean_scope: MeanScope::MiniBatch,
        }
    }

    fn small_cfg(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate: 0.05,
            optimizer: OptimizerKind::SgdMomentum,
            seed,
            eval_every: 10,
        }
    }

    fn aug_default() -> AugmentParams {
        AugmentParams {
            sigma_weak: 0.01,
            sigma_strong: 0.05,
            dropout_p: 0.2,
        }
    }

    fn arch() -> ArchSpec {
        ArchSpec {
            hidden_dims: vec![16],
        }
    }

    #[test]
    fn evaluate_hand_confusion_case() {
        let probs = ProbBatch::new(
            Matrix::from_rows(&[
                vec![0.9, 0.1],
                vec![0.9, 0.1],
                vec![0.1, 0.9],
                vec![0.1, 0.9],
            ])
            .unwrap(),
        )
        .unwrap();
        let truth = [0usize, 1, 0, 1];
        let m = evaluate_probs(&probs, &truth).unwrap();
        assert!((m.top1 - 0.5).abs() < 1e-15);
        assert!((m.macro_f1 - 0.5).abs() < 1e-15);
        assert_eq!(m.histogram, vec![2, 2]);
    }

    #[test]
    fn evaluate_uniform_ties_break_low() {
        let probs = ProbBatch::new(
            Matrix::from_rows(&[vec![0.25; 4], vec![0.25; 4], vec![0.25; 4]]).unwrap(),
        )
        .unwrap();
        let m = evaluate_probs(&probs, &[0, 1, 2]).unwrap();
        assert_eq!(m.histogram, vec![3, 0, 0, 0]);
    }

    #[test]
    fn evaluate_perfect_predictor() {
        let probs =
            ProbBatch::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()).unwrap();
        let m = evaluate_probs(&probs, &[0, 1]).unwrap();
        assert_eq!(m.top1, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn evaluate_rejects_empty_test() {
        let probs = ProbBatch::new(Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        assert!(evaluate_probs(&probs, &[]).is_err());
    }

    #[test]
    fn zero_epochs_returns_one_record() {
        let mut rng = RngState::new(1);
        let task = gen_blobs_ssl(&mut rng, 3, 2, 20, 5, 4, 0.2).unwrap();
        let out = train(
            &task,
            &ssl_spec(Regularizer::None, 0.0),
            &small_cfg(0, 7),
            &aug_default(),
            None,
            &arch(),
        )
        .unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.metrics[0].epoch, 0);
    }

    #[test]
    fn separable_limit_reaches_full_accuracy() {
        let mut rng = RngState::new(2);
        let task = gen_blobs_ssl(&mut rng, 3, 3, 10, 10, 4, 0.0).unwrap();
        let out = train(
            &task,
            &ssl_spec(Regularizer::None, 0.0),
            &small_cfg(50, 3),
            &aug_default(),
            None,
            &arch(),
        )
        .unwrap();
        assert_eq!(out.metrics.last().unwrap().top1, 1.0);
    }

    #[test]
    fn lambda_zero_trajectories_match_erm_bitwise() {
        let mut rng = RngState::new(3);
        let task = gen_blobs_ssl(&mut rng, 4, 2, 40, 10, 5, 0.3).unwrap();
        let cfg = small_cfg(12, 11);
        let erm = train(&task, &ssl_spec(Regularizer::None, 0.0), &cfg, &aug_default(), None, &arch())
            .unwrap();
        let lerm0 = train(
            &task,
            &ssl_spec(Regularizer::Lerm(DivergenceKind::L1), 0.0),
            &cfg,
            &aug_default(),
            None,
            &arch(),
        )
        .unwrap();
        let entmin0 = train(
            &task,
            &ssl_spec(Regularizer::EntMin, 0.0),
            &cfg,
            &aug_default(),
            None,
            &arch(),
        )
        .unwrap();
        let a = erm.model.as_single().unwrap();
        let b = lerm0.model.as_single().unwrap();
        let c = entmin0.model.as_single().unwrap();
        for ((_, ta), ((_, tb), (_, tc))) in a
            .tensors()
            .iter()
            .zip(b.tensors().iter().zip(c.tensors().iter()))
        {
            assert_eq!(ta.data(), tb.data());
            assert_eq!(ta.data(), tc.data());
        }
    }

    #[test]
    fn ssl_objective_rejects_empty_unlabeled() {
        let mut rng = RngState::new(4);
        let task = gen_blobs_ssl(&mut rng, 3, 2, 0, 5, 4, 0.2).unwrap();
        let err = train(
            &task,
            &ssl_spec(Regularizer::Lerm(DivergenceKind::L1), 1.0),
            &small_cfg(2, 5),
            &aug_default(),
            None,
            &arch(),
        );
        assert!(matches!(err, Err(Error::EmptySet(_))));
    }

    #[test]
    fn full_batch_step_decreases_loss_on_each_scenario() {
        // SSL
        let mut rng = RngState::new(5);
        let task = gen_blobs_ssl(&mut rng, 3, 4, 30, 5, 4, 0.3).unwrap();
        let spec = ssl_spec(Regularizer::Lerm(DivergenceKind::L2), 1.0);
        let mlp_spec = arch().mlp_spec(4, Activation::ReLU, 3).unwrap();
        let mut model = init_model(&mlp_spec, &mut RngState::new(6)).unwrap();
        let mut aug_rng = RngState::new(7);
        let views = (
            augment(&task.labeled_x, aug_default().weak(), &mut aug_rng).unwrap(),
            augment(&task.labeled_x, aug_default().strong(), &mut aug_rng).unwrap(),
            augment(&task.unlabeled_x, aug_default().weak(), &mut aug_rng).unwrap(),
            augment(&task.unlabeled_x, aug_default().strong(), &mut aug_rng).unwrap(),
        );
        let loss_at = |m: &MlpModel| {
            ssl_objective_on_views(
                m,
                &views.0,
                Some(&views.1),
                &task.labeled_y,
                Some(&views.2),
                Some(&views.3),
                &spec,
            )
            .unwrap()
        };
        let (l0, g) = loss_at(&model);
        let mut opt = OptimizerState::new(OptimizerKind::SgdMomentum, 1e-3);
        model.apply_step(&g, &mut opt).unwrap();
        let (l1, _) = loss_at(&model);
        assert!(l1.total() < l0.total(), "{} !< {}", l1.total(), l0.total());

        // UDA
        let mut rng = RngState::new(8);
        let task = gen_uda(&mut rng, 3, 10, 10, 4, 0.3, 1.0, 0.4).unwrap();
        let spec = ObjectiveSpec {
            scenario: Scenario::Uda,
            use_erm: true,
            regularizer: Regularizer::Lerm(DivergenceKind::Ce),
            lambda: 1.0,
            mu: 0.0,
            alpha: 0.0,
            tau: 0.0,
            mean_scope: MeanScope::MiniBatch,
        };
        let mut model = init_model(&mlp_spec, &mut RngState::new(9)).unwrap();
        let loss_at = |m: &MlpModel| {
            uda_objective(
                m,
                task.source_x.as_ref().unwrap(),
                task.source_y.as_ref().unwrap(),
                Some(&task.unlabeled_x),
                &spec,
            )
            .unwrap()
        };
        let (l0, g) = loss_at(&model);
        let mut opt = OptimizerState::new(OptimizerKind::SgdMomentum, 1e-3);
        model.apply_step(&g, &mut opt).unwrap();
        let (l1, _) = loss_at(&model);
        assert!(l1.total() < l0.total());

        // SHDA
        let mut rng = RngState::new(10);
        let task = gen_shda(&mut rng, 3, 10, 3, 10, 4, 8, 5, 0.3).unwrap();
        let spec = ObjectiveSpec {
            scenario: Scenario::Shda,
            use_erm: true,
            regularizer: Regularizer::Lerm(DivergenceKind::L1),
            lambda: 1.0,
            mu: 0.0,
            alpha: 0.0,
            tau: 0.01,
            mean_scope: MeanScope::FullSet,
        };
        let s_spec = arch().mlp_spec(8, Activation::LeakyReLU, 3).unwrap();
        let t_spec = arch().mlp_spec(5, Activation::LeakyReLU, 3).unwrap();
        let mut model = init_shda_model(&s_spec, &t_spec, &mut RngState::new(11)).unwrap();
        let loss_at = |m: &ShdaModel| {
            shda_objective(
                m,
                task.source_x.as_ref().unwrap(),
                task.source_y.as_ref().unwrap(),
                &task.labeled_x,
                &task.labeled_y,
                Some(&task.unlabeled_x),
                &spec,
            )
            .unwrap()
        };
        let (l0, g) = loss_at(&model);
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 1e-3);
        model.apply_step(&g, &mut opt).unwrap();
        let (l1, _) = loss_at(&model);
        assert!(l1.total() < l0.total());
    }

    #[test]
    fn parameters_stay_finite_over_many_steps() {
        let mut rng = RngState::new(12);
        let task = gen_blobs_ssl(&mut rng, 4, 2, 50, 10, 5, 0.3).unwrap();
        let mut cfg = small_cfg(0, 13);
        cfg.epochs = 250; // 4 steps/epoch at batch 16 over 8 labeled => 1000+ steps
        cfg.batch_size = 2;
        let out = train(
            &task,
            &ssl_spec(Regularizer::Lerm(DivergenceKind::L1), 1.0),
            &cfg,
            &aug_default(),
            None,
            &arch(),
        )
        .unwrap();
        assert!(out.diverged.is_none());
        assert!(out.model.as_single().unwrap().all_finite());
    }

    #[test]
    fn metrics_histogram_sums_to_test_size() {
        let mut rng = RngState::new(14);
        let task = gen_blobs_ssl(&mut rng, 3, 2, 20, 7, 4, 0.3).unwrap();
        let out = train(
            &task,
            &ssl_spec(Regularizer::EntMin, 0.5),
            &small_cfg(5, 15),
            &aug_default(),
            None,
            &arch(),
        )
        .unwrap();
        for r in &out.metrics {
            assert_eq!(r.histogram.iter().sum::<usize>(), 21);
            assert!(r.mean_entropy >= 0.0 && r.mean_entropy <= (3.0_f64).ln() + 1e-12);
        }
    }

    #[test]
    fn alpha_hook_must_stay_zero() {
        let mut spec = ssl_spec(Regularizer::None, 0.0);
        spec.alpha = 0.5;
        assert!(spec.validate().is_err());
    }
}
