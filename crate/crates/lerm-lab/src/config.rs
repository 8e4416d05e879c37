//! Flat key=value run configuration.
//!
//! One pair per line, UTF-8, `#` starts a comment line. Unknown keys and
//! keys that do not apply to the configured scenario are rejected with the
//! offending line number. Every run writes a `resolved.cfg` that echoes all
//! effective values (defaults included); feeding that file back reproduces
//! the identical run.
//!
//! Class ids are 1-based on disk (`minority_classes=9,10`) and 0-based in
//! memory.

use crate::error::{Error, Result};
use crate::model::OptimizerKind;
use crate::numerics::RngState;
use crate::risks::DivergenceKind;
use crate::tasks::{
    gen_blobs_ssl, gen_imbalanced_ssl, gen_shda, gen_uda, TaskBundle,
};
use crate::trainer::{
    ArchSpec, AugmentParams, MeanScope, ObjectiveSpec, Regularizer, Scenario, TrainConfig,
};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Ssl,
    SslImbalanced,
    Uda,
    Shda,
    Sfda,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Ssl => "ssl",
            ScenarioKind::SslImbalanced => "ssl-imbalanced",
            ScenarioKind::Uda => "uda",
            ScenarioKind::Shda => "shda",
            ScenarioKind::Sfda => "sfda",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ssl" => Ok(ScenarioKind::Ssl),
            "ssl-imbalanced" => Ok(ScenarioKind::SslImbalanced),
            "uda" => Ok(ScenarioKind::Uda),
            "shda" => Ok(ScenarioKind::Shda),
            "sfda" => Ok(ScenarioKind::Sfda),
            other => Err(Error::ConfigGeneral(format!("unknown scenario `{other}`"))),
        }
    }

    pub fn objective_scenario(self) -> Scenario {
        match self {
            ScenarioKind::Ssl | ScenarioKind::SslImbalanced => Scenario::Ssl,
            ScenarioKind::Uda => Scenario::Uda,
            ScenarioKind::Shda => Scenario::Shda,
            ScenarioKind::Sfda => Scenario::Sfda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    None,
    EntMin,
    Lerm,
}

impl RegKind {
    pub fn name(self) -> &'static str {
        match self {
            RegKind::None => "none",
            RegKind::EntMin => "entmin",
            RegKind::Lerm => "lerm",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RegKind::None),
            "entmin" => Ok(RegKind::EntMin),
            "lerm" => Ok(RegKind::Lerm),
            other => Err(Error::ConfigGeneral(format!("unknown regularizer `{other}`"))),
        }
    }
}

/// Fully resolved run configuration. Fields that do not apply to the
/// scenario hold their defaults and are neither read nor emitted.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub classes: usize,
    pub dim: usize,
    pub latent_dim: usize,
    pub source_dim: usize,
    pub target_dim: usize,
    pub spread: f64,
    pub n_labeled_per_class: usize,
    pub n_unlabeled_per_class: usize,
    pub n_test_per_class: usize,
    pub majority_n: usize,
    pub minority_n: usize,
    /// 0-based in memory, 1-based on disk.
    pub minority_classes: Vec<usize>,
    pub n_source_per_class: usize,
    pub n_target_per_class: usize,
    pub shift: f64,
    pub rotation_angle: f64,
    pub use_erm: bool,
    pub regularizer: RegKind,
    pub divergence: DivergenceKind,
    pub lambda: f64,
    pub mu: f64,
    pub tau: f64,
    pub mean_scope: MeanScope,
    pub sigma_weak: f64,
    pub sigma_strong: f64,
    pub dropout_p: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub eval_every: usize,
    pub hidden_dims: Vec<usize>,
    pub pretrain_epochs: usize,
    pub source_checkpoint: Option<PathBuf>,
    pub seed_task: u64,
    pub seed_train: u64,
    pub out_dir: PathBuf,
}

/// CLI flag overrides applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed_task: Option<u64>,
    pub seed_train: Option<u64>,
}

/// Emission and applicability order of every known key.
const KEY_ORDER: &[&str] = &[
    "scenario",
    "classes",
    "dim",
    "latent_dim",
    "source_dim",
    "target_dim",
    "spread",
    "n_labeled_per_class",
    "n_unlabeled_per_class",
    "n_test_per_class",
    "majority_n",
    "minority_n",
    "minority_classes",
    "n_source_per_class",
    "n_target_per_class",
    "shift",
    "rotation_angle",
    "use_erm",
    "regularizer",
    "divergence",
    "lambda",
    "mu",
    "tau",
    "mean_scope",
    "sigma_weak",
    "sigma_strong",
    "dropout_p",
    "epochs",
    "batch_size",
    "learning_rate",
    "optimizer",
    "eval_every",
    "hidden_dims",
    "pretrain_epochs",
    "source_checkpoint",
    "seed_task",
    "seed_train",
    "out_dir",
];

fn key_applies(key: &str, s: ScenarioKind) -> bool {
    use ScenarioKind::*;
    match key {
        "scenario" | "classes" | "spread" | "regularizer" | "divergence" | "lambda"
        | "mean_scope" | "epochs" | "learning_rate" | "optimizer" | "eval_every"
        | "hidden_dims" | "seed_task" | "seed_train" | "out_dir" => true,
        "dim" => matches!(s, Ssl | SslImbalanced | Uda | Sfda),
        "latent_dim" | "source_dim" | "target_dim" | "tau" => s == Shda,
        "n_labeled_per_class" => matches!(s, Ssl | Shda),
        "n_unlabeled_per_class" | "n_test_per_class" => s == Ssl,
        "majority_n" | "minority_n" | "minority_classes" => s == SslImbalanced,
        "n_source_per_class" | "n_target_per_class" => matches!(s, Uda | Sfda | Shda),
        "shift" | "rotation_angle" => matches!(s, Uda | Sfda),
        "use_erm" => matches!(s, Ssl | SslImbalanced | Uda | Shda),
        "mu" | "sigma_weak" | "sigma_strong" | "dropout_p" => {
            matches!(s, Ssl | SslImbalanced)
        }
        "batch_size" => matches!(s, Ssl | SslImbalanced | Uda | Sfda),
        "pretrain_epochs" | "source_checkpoint" => s == Sfda,
        _ => false,
    }
}

/// Keys that `sweep` may vary.
pub fn is_numeric_key(key: &str) -> bool {
    matches!(
        key,
        "lambda"
            | "mu"
            | "tau"
            | "learning_rate"
            | "spread"
            | "shift"
            | "rotation_angle"
            | "sigma_weak"
            | "sigma_strong"
            | "dropout_p"
    )
}

struct Pairs {
    map: HashMap<String, (String, usize)>,
}

fn parse_pairs(text: &str) -> Result<Pairs> {
    let mut map = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            line: line_no,
            msg: format!("expected key=value, got `{line}`"),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KEY_ORDER.contains(&key.as_str()) {
            return Err(Error::Config {
                line: line_no,
                msg: format!("unknown key `{key}`"),
            });
        }
        if map.insert(key.clone(), (value, line_no)).is_some() {
            return Err(Error::Config {
                line: line_no,
                msg: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(Pairs { map })
}

impl Pairs {
    fn check_applicability(&self, scenario: ScenarioKind) -> Result<()> {
        for (key, (_, line)) in &self.map {
            if !key_applies(key, scenario) {
                return Err(Error::Config {
                    line: *line,
                    msg: format!(
                        "key `{key}` does not apply to scenario `{}`",
                        scenario.name()
                    ),
                });
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&(String, usize)> {
        self.map.get(key)
    }

    fn parse_with<T>(
        &self,
        key: &str,
        default: T,
        f: impl Fn(&str) -> Result<T>,
    ) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some((v, line)) => f(v).map_err(|e| Error::Config {
                line: *line,
                msg: format!("key `{key}`: {e}"),
            }),
        }
    }

    fn usize_of(&self, key: &str, default: usize) -> Result<usize> {
        self.parse_with(key, default, |s| {
            s.parse()
                .map_err(|_| Error::ConfigGeneral(format!("expected an integer, got `{s}`")))
        })
    }

    fn u64_of(&self, key: &str, default: u64) -> Result<u64> {
        self.parse_with(key, default, |s| {
            s.parse()
                .map_err(|_| Error::ConfigGeneral(format!("expected an integer, got `{s}`")))
        })
    }

    fn f64_of(&self, key: &str, default: f64) -> Result<f64> {
        self.parse_with(key, default, |s| {
            s.parse()
                .map_err(|_| Error::ConfigGeneral(format!("expected a number, got `{s}`")))
        })
    }

    fn bool_of(&self, key: &str, default: bool) -> Result<bool> {
        self.parse_with(key, default, |s| match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(Error::ConfigGeneral(format!("expected true/false, got `{s}`"))),
        })
    }

    fn usize_list_of(&self, key: &str, default: Vec<usize>) -> Result<Vec<usize>> {
        self.parse_with(key, default, |s| {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',')
                .map(|t| {
                    t.trim().parse().map_err(|_| {
                        Error::ConfigGeneral(format!("expected comma-separated integers, got `{s}`"))
                    })
                })
                .collect()
        })
    }
}

struct Defaults {
    classes: usize,
    dim: usize,
    latent_dim: usize,
    source_dim: usize,
    target_dim: usize,
    spread: f64,
    n_labeled_per_class: usize,
    n_unlabeled_per_class: usize,
    n_test_per_class: usize,
    majority_n: usize,
    minority_n: usize,
    minority_classes_disk: Vec<usize>,
    n_source_per_class: usize,
    n_target_per_class: usize,
    shift: f64,
    rotation_angle: f64,
    lambda: f64,
    mu: f64,
    tau: f64,
    mean_scope: MeanScope,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    optimizer: OptimizerKind,
    eval_every: usize,
    hidden_dims: Vec<usize>,
    pretrain_epochs: usize,
}

fn defaults_for(scenario: ScenarioKind) -> Defaults {
    let base = Defaults {
        classes: 10,
        dim: 10,
        latent_dim: 8,
        source_dim: 20,
        target_dim: 12,
        spread: 0.25,
        n_labeled_per_class: 1,
        n_unlabeled_per_class: 200,
        n_test_per_class: 100,
        majority_n: 100,
        minority_n: 2,
        minority_classes_disk: vec![9, 10],
        n_source_per_class: 100,
        n_target_per_class: 100,
        shift: 2.0,
        rotation_angle: 0.5,
        lambda: 1.0,
        mu: 0.0,
        tau: 0.0,
        mean_scope: MeanScope::MiniBatch,
        epochs: 1500,
        batch_size: 32,
        learning_rate: 0.03,
        optimizer: OptimizerKind::SgdMomentum,
        eval_every: 100,
        hidden_dims: vec![64],
        pretrain_epochs: 150,
    };
    match scenario {
        ScenarioKind::Ssl => Defaults { mu: 0.1, ..base },
        ScenarioKind::SslImbalanced => Defaults {
            mu: 0.1,
            epochs: 150,
            ..base
        },
        ScenarioKind::Uda => Defaults {
            classes: 5,
            dim: 8,
            spread: 0.3,
            epochs: 150,
            ..base
        },
        ScenarioKind::Sfda => Defaults {
            classes: 5,
            dim: 8,
            spread: 0.3,
            epochs: 100,
            learning_rate: 0.01,
            ..base
        },
        ScenarioKind::Shda => Defaults {
            classes: 6,
            spread: 0.25,
            n_labeled_per_class: 5,
            n_source_per_class: 50,
            n_target_per_class: 50,
            tau: 0.01,
            mean_scope: MeanScope::FullSet,
            epochs: 600,
            learning_rate: 0.001,
            optimizer: OptimizerKind::Adam,
            eval_every: 50,
            hidden_dims: vec![16],
            ..base
        },
    }
}

impl RunConfig {
    pub fn from_file(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_text(&text, overrides)
    }

    pub fn from_text(text: &str, overrides: &Overrides) -> Result<RunConfig> {
        let pairs = parse_pairs(text)?;
        let scenario = match pairs.get("scenario") {
            None => ScenarioKind::Ssl,
            Some((v, line)) => ScenarioKind::parse(v).map_err(|e| Error::Config {
                line: *line,
                msg: e.to_string(),
            })?,
        };
        pairs.check_applicability(scenario)?;
        let d = defaults_for(scenario);

        let spread = pairs.f64_of("spread", d.spread)?;
        let classes = pairs.usize_of("classes", d.classes)?;
        let minority_classes = if scenario == ScenarioKind::SslImbalanced {
            let minority_disk =
                pairs.usize_list_of("minority_classes", d.minority_classes_disk)?;
            let mut zero_based = Vec::with_capacity(minority_disk.len());
            for &c in &minority_disk {
                if c == 0 || c > classes {
                    return Err(Error::ConfigGeneral(format!(
                        "minority class {c} outside 1..={classes} (classes are 1-based on disk)"
                    )));
                }
                zero_based.push(c - 1);
            }
            zero_based
        } else {
            Vec::new()
        };

        let use_erm_default = scenario != ScenarioKind::Sfda;
        let regularizer = pairs.parse_with("regularizer", default_reg(scenario), |s| {
            RegKind::parse(s)
        })?;
        let divergence = pairs.parse_with("divergence", DivergenceKind::L1, |s| match s {
            "l1" => Ok(DivergenceKind::L1),
            "l2" => Ok(DivergenceKind::L2),
            "ce" => Ok(DivergenceKind::Ce),
            other => Err(Error::ConfigGeneral(format!("unknown divergence `{other}`"))),
        })?;
        let mean_scope = pairs.parse_with("mean_scope", d.mean_scope, |s| match s {
            "minibatch" => Ok(MeanScope::MiniBatch),
            "fullset" => Ok(MeanScope::FullSet),
            other => Err(Error::ConfigGeneral(format!("unknown mean_scope `{other}`"))),
        })?;
        let optimizer = pairs.parse_with("optimizer", d.optimizer, OptimizerKind::parse)?;
        let source_checkpoint = pairs
            .parse_with("source_checkpoint", None, |s| {
                Ok(Some(PathBuf::from(s)))
            })?;

        let cfg = RunConfig {
            scenario,
            classes,
            dim: pairs.usize_of("dim", d.dim)?,
            latent_dim: pairs.usize_of("latent_dim", d.latent_dim)?,
            source_dim: pairs.usize_of("source_dim", d.source_dim)?,
            target_dim: pairs.usize_of("target_dim", d.target_dim)?,
            spread,
            n_labeled_per_class: pairs.usize_of("n_labeled_per_class", d.n_labeled_per_class)?,
            n_unlabeled_per_class: pairs
                .usize_of("n_unlabeled_per_class", d.n_unlabeled_per_class)?,
            n_test_per_class: pairs.usize_of("n_test_per_class", d.n_test_per_class)?,
            majority_n: pairs.usize_of("majority_n", d.majority_n)?,
            minority_n: pairs.usize_of("minority_n", d.minority_n)?,
            minority_classes,
            n_source_per_class: pairs.usize_of("n_source_per_class", d.n_source_per_class)?,
            n_target_per_class: pairs.usize_of("n_target_per_class", d.n_target_per_class)?,
            shift: pairs.f64_of("shift", d.shift)?,
            rotation_angle: pairs.f64_of("rotation_angle", d.rotation_angle)?,
            use_erm: pairs.bool_of("use_erm", use_erm_default)?,
            regularizer,
            divergence,
            lambda: pairs.f64_of("lambda", d.lambda)?,
            mu: if key_applies("mu", scenario) {
                pairs.f64_of("mu", d.mu)?
            } else {
                0.0
            },
            tau: if key_applies("tau", scenario) {
                pairs.f64_of("tau", d.tau)?
            } else {
                0.0
            },
            mean_scope,
            sigma_weak: pairs.f64_of("sigma_weak", 0.2 * spread)?,
            sigma_strong: pairs.f64_of("sigma_strong", 0.6 * spread)?,
            dropout_p: pairs.f64_of("dropout_p", 0.2)?,
            epochs: pairs.usize_of("epochs", d.epochs)?,
            batch_size: pairs.usize_of("batch_size", d.batch_size)?,
            learning_rate: pairs.f64_of("learning_rate", d.learning_rate)?,
            optimizer,
            eval_every: pairs.usize_of("eval_every", d.eval_every)?,
            hidden_dims: pairs.usize_list_of("hidden_dims", d.hidden_dims)?,
            pretrain_epochs: pairs.usize_of("pretrain_epochs", d.pretrain_epochs)?,
            source_checkpoint,
            seed_task: overrides
                .seed_task
                .map_or_else(|| pairs.u64_of("seed_task", 1), Ok)?,
            seed_train: overrides
                .seed_train
                .map_or_else(|| pairs.u64_of("seed_train", 1), Ok)?,
            out_dir: overrides.out.clone().map_or_else(
                || {
                    pairs
                        .parse_with("out_dir", None, |s| Ok(Some(PathBuf::from(s))))
                        .map(|p| p.unwrap_or_else(default_out_dir))
                },
                Ok,
            )?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.objective_spec()?;
        self.train_config().validate()?;
        if self.scenario == ScenarioKind::Ssl || self.scenario == ScenarioKind::SslImbalanced {
            self.augment_params().validate()?;
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> Option<String> {
        let v = match key {
            "scenario" => self.scenario.name().to_string(),
            "classes" => self.classes.to_string(),
            "dim" => self.dim.to_string(),
            "latent_dim" => self.latent_dim.to_string(),
            "source_dim" => self.source_dim.to_string(),
            "target_dim" => self.target_dim.to_string(),
            "spread" => format!("{}", self.spread),
            "n_labeled_per_class" => self.n_labeled_per_class.to_string(),
            "n_unlabeled_per_class" => self.n_unlabeled_per_class.to_string(),
            "n_test_per_class" => self.n_test_per_class.to_string(),
            "majority_n" => self.majority_n.to_string(),
            "minority_n" => self.minority_n.to_string(),
            "minority_classes" => self
                .minority_classes
                .iter()
                .map(|c| (c + 1).to_string())
                .collect::<Vec<_>>()
                .join(","),
            "n_source_per_class" => self.n_source_per_class.to_string(),
            "n_target_per_class" => self.n_target_per_class.to_string(),
            "shift" => format!("{}", self.shift),
            "rotation_angle" => format!("{}", self.rotation_angle),
            "use_erm" => self.use_erm.to_string(),
            "regularizer" => self.regularizer.name().to_string(),
            "divergence" => self.divergence.name().to_string(),
            "lambda" => format!("{}", self.lambda),
            "mu" => format!("{}", self.mu),
            "tau" => format!("{}", self.tau),
            "mean_scope" => self.mean_scope.name().to_string(),
            "sigma_weak" => format!("{}", self.sigma_weak),
            "sigma_strong" => format!("{}", self.sigma_strong),
            "dropout_p" => format!("{}", self.dropout_p),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => format!("{}", self.learning_rate),
            "optimizer" => self.optimizer.name().to_string(),
            "eval_every" => self.eval_every.to_string(),
            "hidden_dims" => self
                .hidden_dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "pretrain_epochs" => self.pretrain_epochs.to_string(),
            "source_checkpoint" => {
                return self
                    .source_checkpoint
                    .as_ref()
                    .map(|p| p.display().to_string())
            }
            "seed_task" => self.seed_task.to_string(),
            "seed_train" => self.seed_train.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// All effective values, in registry order, restricted to applicable
    /// keys. Reparsing this text reproduces the identical config.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# resolved configuration (all effective values)");
        for key in KEY_ORDER {
            if !key_applies(key, self.scenario) {
                continue;
            }
            if let Some(v) = self.value_of(key) {
                let _ = writeln!(out, "{key}={v}");
            }
        }
        out
    }

    /// Generates the task bundle from the task seed.
    pub fn build_bundle(&self) -> Result<TaskBundle> {
        let mut rng = RngState::new(self.seed_task);
        match self.scenario {
            ScenarioKind::Ssl => gen_blobs_ssl(
                &mut rng,
                self.classes,
                self.n_labeled_per_class,
                self.n_unlabeled_per_class,
                self.n_test_per_class,
                self.dim,
                self.spread,
            ),
            ScenarioKind::SslImbalanced => gen_imbalanced_ssl(
                &mut rng,
                self.classes,
                self.majority_n,
                self.minority_n,
                &self.minority_classes,
                self.dim,
                self.spread,
            ),
            ScenarioKind::Uda | ScenarioKind::Sfda => gen_uda(
                &mut rng,
                self.classes,
                self.n_source_per_class,
                self.n_target_per_class,
                self.dim,
                self.spread,
                self.shift,
                self.rotation_angle,
            ),
            ScenarioKind::Shda => gen_shda(
                &mut rng,
                self.classes,
                self.n_source_per_class,
                self.n_labeled_per_class,
                self.n_target_per_class,
                self.latent_dim,
                self.source_dim,
                self.target_dim,
                self.spread,
            ),
        }
    }

    pub fn objective_spec(&self) -> Result<ObjectiveSpec> {
        let spec = ObjectiveSpec {
            scenario: self.scenario.objective_scenario(),
            use_erm: self.use_erm,
            regularizer: match self.regularizer {
                RegKind::None => Regularizer::None,
                RegKind::EntMin => Regularizer::EntMin,
                RegKind::Lerm => Regularizer::Lerm(self.divergence),
            },
            lambda: self.lambda,
            mu: self.mu,
            alpha: 0.0,
            tau: self.tau,
            mean_scope: self.mean_scope,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed: self.seed_train,
            eval_every: self.eval_every,
        }
    }

    pub fn augment_params(&self) -> AugmentParams {
        AugmentParams {
            sigma_weak: self.sigma_weak,
            sigma_strong: self.sigma_strong,
            dropout_p: self.dropout_p,
        }
    }

    pub fn arch(&self) -> ArchSpec {
        ArchSpec {
            hidden_dims: self.hidden_dims.clone(),
        }
    }

    /// Same run with a different regularizer arm (compare subcommand).
    pub fn with_regularizer(&self, reg: RegKind) -> RunConfig {
        RunConfig {
            regularizer: reg,
            ..self.clone()
        }
    }

    /// Overrides one numeric key (sweep subcommand).
    pub fn set_numeric(&mut self, key: &str, value: f64) -> Result<()> {
        match key {
            "lambda" => self.lambda = value,
            "mu" => self.mu = value,
            "tau" => self.tau = value,
            "learning_rate" => self.learning_rate = value,
            "spread" => self.spread = value,
            "shift" => self.shift = value,
            "rotation_angle" => self.rotation_angle = value,
            "sigma_weak" => self.sigma_weak = value,
            "sigma_strong" => self.sigma_strong = value,
            "dropout_p" => self.dropout_p = value,
            other => {
                return Err(Error::ConfigGeneral(format!(
                    "`{other}` is not a sweepable numeric key"
                )))
            }
        }
        self.validate()
    }
}

fn default_reg(scenario: ScenarioKind) -> RegKind {
    match scenario {
        ScenarioKind::Sfda => RegKind::Lerm,
        _ => RegKind::Lerm,
    }
}

/// Default output directory: `LERM_LAB_OUT` if set, else `./out`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os("LERM_LAB_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}
