//! Subcommand implementations: run one experiment, compare regularizer
//! arms, sweep a numeric key, certify the theorems, export a task bundle.
//! Each writes deterministic CSV artifacts (LF endings, `.` decimals) under
//! the run's output directory.

use crate::config::{RegKind, RunConfig, ScenarioKind};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, save_shda_checkpoint, Activation, MlpModel};
use crate::numerics::{derive_seed, RngState};
use crate::theory::{check_theorem1, check_theorem2, check_theorem3, random_labels, random_prob_batch, TheoremReport, DEFAULT_TOL};
use crate::trainer::{
    metrics_csv, train, MetricsRecord, Scenario, TrainOutcome, TrainedModel,
};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const TAG_PRETRAIN_SEED: u64 = 101;

/// Outcome of one CLI action; `error_records` forces a nonzero exit.
#[derive(Debug, Default)]
pub struct CmdReport {
    pub artifacts: Vec<PathBuf>,
    pub error_records: Vec<String>,
    pub summary_lines: Vec<String>,
}

impl CmdReport {
    fn artifact(&mut self, p: PathBuf) {
        self.artifacts.push(p);
    }

    pub fn ok(&self) -> bool {
        self.error_records.is_empty()
    }
}

fn write_artifact(report: &mut CmdReport, path: PathBuf, contents: &str) -> Result<()> {
    std::fs::write(&path, contents)?;
    report.artifact(path);
    Ok(())
}

fn final_record(outcome: &TrainOutcome) -> &MetricsRecord {
    outcome.metrics.last().expect("training always records epoch 0")
}

/// Pretrains (or loads) the source model consumed by source-free runs.
fn obtain_source_model(
    cfg: &RunConfig,
    bundle: &crate::tasks::TaskBundle,
    report: &mut CmdReport,
) -> Result<MlpModel> {
    if let Some(path) = &cfg.source_checkpoint {
        return load_checkpoint(path);
    }
    let mut pre_cfg = cfg.train_config();
    pre_cfg.epochs = cfg.pretrain_epochs;
    pre_cfg.seed = derive_seed(cfg.seed_train, &[TAG_PRETRAIN_SEED]);
    let pre_spec = crate::trainer::ObjectiveSpec {
        scenario: Scenario::Uda,
        use_erm: true,
        regularizer: crate::trainer::Regularizer::None,
        lambda: 0.0,
        mu: 0.0,
        alpha: 0.0,
        tau: 0.0,
        mean_scope: cfg.mean_scope,
    };
    let outcome = train(bundle, &pre_spec, &pre_cfg, &cfg.augment_params(), None, &cfg.arch())?;
    let model = match outcome.model {
        TrainedModel::Single(m) => m,
        TrainedModel::Dual(_) => unreachable!("pretraining is single-extractor"),
    };
    let path = cfg.out_dir.join("source_model.ckpt");
    save_checkpoint(&model, &path)?;
    report.artifact(path);
    Ok(model)
}

fn run_one(cfg: &RunConfig, report: &mut CmdReport) -> Result<TrainOutcome> {
    let bundle = cfg.build_bundle()?;
    let spec = cfg.objective_spec()?;
    let outcome = if cfg.scenario == ScenarioKind::Sfda {
        let source_model = obtain_source_model(cfg, &bundle, report)?;
        train(
            &bundle,
            &spec,
            &cfg.train_config(),
            &cfg.augment_params(),
            Some(&source_model),
            &cfg.arch(),
        )?
    } else {
        train(
            &bundle,
            &spec,
            &cfg.train_config(),
            &cfg.augment_params(),
            None,
            &cfg.arch(),
        )?
    };
    for w in &outcome.warnings {
        report.summary_lines.push(format!("warning: {w}"));
    }
    if let Some((epoch, step)) = outcome.diverged {
        report
            .error_records
            .push(format!("training diverged at epoch {epoch}, step {step}; artifacts hold the last finite records"));
    }
    Ok(outcome)
}

/// `run`: one train+evaluate pipeline. Writes `resolved.cfg`,
/// `metrics.csv` and the final checkpoint.
pub fn cmd_run(cfg: &RunConfig) -> Result<CmdReport> {
    let mut report = CmdReport::default();
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_artifact(&mut report, cfg.out_dir.join("resolved.cfg"), &cfg.resolved_text())?;
    let outcome = run_one(cfg, &mut report)?;
    write_artifact(
        &mut report,
        cfg.out_dir.join("metrics.csv"),
        &metrics_csv(&outcome.metrics, cfg.classes),
    )?;
    let ckpt = cfg.out_dir.join("model.ckpt");
    match &outcome.model {
        TrainedModel::Single(m) => save_checkpoint(m, &ckpt)?,
        TrainedModel::Dual(m) => save_shda_checkpoint(m, Activation::LeakyReLU, &ckpt)?,
    }
    report.artifact(ckpt);
    let last = final_record(&outcome);
    report.summary_lines.push(format!(
        "epoch {}: top1={:.4} macro_f1={:.4} mean_entropy={:.4}",
        last.epoch, last.top1, last.macro_f1, last.mean_entropy
    ));
    Ok(report)
}

fn arm_row(arm: &str, r: &MetricsRecord) -> Vec<String> {
    let mut fields = vec![
        arm.to_string(),
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
    fields
}

fn metrics_like_header(first_col: &str, classes: usize) -> String {
    let mut header = vec![
        first_col.to_string(),
        "epoch".to_string(),
        "loss_erm".to_string(),
        "loss_reg".to_string(),
        "top1".to_string(),
        "macro_f1".to_string(),
        "mean_entropy".to_string(),
    ];
    for c in 1..=classes {
        header.push(format!("hist_{c}"));
    }
    header.join(",")
}

/// `compare`: ERM vs ERM+EntMin vs ERM+LERM on the identical bundle and
/// seeds; one row of final metrics per arm.
pub fn cmd_compare(cfg: &RunConfig) -> Result<CmdReport> {
    if cfg.scenario == ScenarioKind::Sfda {
        return Err(Error::InvalidArgument(
            "compare needs an ERM arm; source-free adaptation has none".to_string(),
        ));
    }
    let mut report = CmdReport::default();
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_artifact(&mut report, cfg.out_dir.join("resolved.cfg"), &cfg.resolved_text())?;

    let mut csv = metrics_like_header("arm", cfg.classes);
    csv.push('\n');
    for (arm, reg) in [
        ("erm", RegKind::None),
        ("erm_entmin", RegKind::EntMin),
        ("erm_lerm", RegKind::Lerm),
    ] {
        let arm_cfg = cfg.with_regularizer(reg);
        let outcome = run_one(&arm_cfg, &mut report)?;
        let row = arm_row(arm, final_record(&outcome));
        let _ = writeln!(csv, "{}", row.join(","));
        report.summary_lines.push(format!(
            "{arm}: top1={:.4} macro_f1={:.4} mean_entropy={:.4}",
            final_record(&outcome).top1,
            final_record(&outcome).macro_f1,
            final_record(&outcome).mean_entropy
        ));
    }
    write_artifact(&mut report, cfg.out_dir.join("compare.csv"), &csv)?;
    Ok(report)
}

/// `sweep`: one run per value of a numeric key, shared task seed; one row
/// of final metrics per value, in the given order.
pub fn cmd_sweep(cfg: &RunConfig, key: &str, values: &[f64]) -> Result<CmdReport> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".to_string()));
    }
    let mut report = CmdReport::default();
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_artifact(&mut report, cfg.out_dir.join("resolved.cfg"), &cfg.resolved_text())?;

    let mut csv = metrics_like_header(key, cfg.classes);
    csv.push('\n');
    for &v in values {
        let mut arm_cfg = cfg.clone();
        arm_cfg.set_numeric(key, v)?;
        let outcome = run_one(&arm_cfg, &mut report)?;
        let mut row = arm_row("", final_record(&outcome));
        row[0] = format!("{v}");
        let _ = writeln!(csv, "{}", row.join(","));
        report
            .summary_lines
            .push(format!("{key}={v}: top1={:.4}", final_record(&outcome).top1));
    }
    write_artifact(&mut report, cfg.out_dir.join("sweep.csv"), &csv)?;
    Ok(report)
}

fn quantities_field(r: &TheoremReport) -> String {
    r.quantities
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn theorem_row(trial: usize, r: &TheoremReport) -> String {
    format!(
        "{},{},{},{},{}",
        trial,
        r.theorem.name(),
        r.assumption_holds,
        r.conclusion_holds,
        quantities_field(r)
    )
}

/// `check-theorems`: per-trial certification rows for the three theorems on
/// Dirichlet-random batches, plus a summary row of violation counts. The
/// unconditional steps must never be violated.
pub fn cmd_check_theorems(
    seed: u64,
    trials: usize,
    n: usize,
    classes: usize,
    out_dir: &Path,
) -> Result<CmdReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".to_string()));
    }
    let mut report = CmdReport::default();
    std::fs::create_dir_all(out_dir)?;

    let mut csv = String::from("trial,theorem,assumption_holds,conclusion_holds,quantities\n");
    let mut t1_violations = 0usize;
    let mut t2_jensen = 0usize;
    let mut t2_conditional = 0usize;
    let mut t3_logsum = 0usize;
    let mut t3_conditional = 0usize;
    let tol = DEFAULT_TOL;

    for trial in 0..trials {
        let mut rng = RngState::substream(seed, &[trial as u64]);
        let p = random_prob_batch(&mut rng, n, classes);
        let labels = random_labels(&mut rng, n, classes);

        let r1 = check_theorem1(&p, tol)?;
        if !r1.conclusion_holds {
            t1_violations += 1;
        }
        csv.push_str(&theorem_row(trial, &r1));
        csv.push('\n');

        let r2 = check_theorem2(&p, &labels, tol)?;
        if r2.quantity("jensen_slack").unwrap_or(0.0) < -tol {
            t2_jensen += 1;
        }
        if r2.assumption_holds && !r2.conclusion_holds {
            t2_conditional += 1;
        }
        csv.push_str(&theorem_row(trial, &r2));
        csv.push('\n');

        let r3 = check_theorem3(&p, tol)?;
        if r3.quantity("logsum_slack").unwrap_or(0.0) < -tol {
            t3_logsum += 1;
        }
        if r3.assumption_holds && !r3.conclusion_holds {
            t3_conditional += 1;
        }
        csv.push_str(&theorem_row(trial, &r3));
        csv.push('\n');
    }

    let summary = format!(
        "summary,all,true,{},t1_violations={t1_violations};t2_jensen_violations={t2_jensen};t2_conditional_violations={t2_conditional};t3_logsum_violations={t3_logsum};t3_conditional_violations={t3_conditional};trials={trials};n={n};classes={classes};seed={seed}",
        t1_violations + t2_jensen + t2_conditional + t3_logsum + t3_conditional == 0
    );
    csv.push_str(&summary);
    csv.push('\n');
    write_artifact(&mut report, out_dir.join("theorems.csv"), &csv)?;

    report.summary_lines.push(format!(
        "theorem certification over {trials} trials: t1={t1_violations} t2_jensen={t2_jensen} t2_cond={t2_conditional} t3_logsum={t3_logsum} t3_cond={t3_conditional} violations"
    ));
    if t1_violations + t2_jensen + t2_conditional + t3_logsum + t3_conditional > 0 {
        report
            .error_records
            .push("theorem certification reported violations".to_string());
    }
    Ok(report)
}

/// `export-task`: dumps the configured bundle as per-split CSV files.
pub fn cmd_export_task(cfg: &RunConfig) -> Result<CmdReport> {
    let mut report = CmdReport::default();
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_artifact(&mut report, cfg.out_dir.join("resolved.cfg"), &cfg.resolved_text())?;
    let bundle = cfg.build_bundle()?;
    crate::tasks::export_bundle(&bundle, &cfg.out_dir)?;
    for name in ["labeled.csv", "unlabeled.csv", "test.csv"] {
        report.artifact(cfg.out_dir.join(name));
    }
    if bundle.source_x.is_some() {
        report.artifact(cfg.out_dir.join("source.csv"));
    }
    report.summary_lines.push(format!(
        "exported {} labeled / {} unlabeled / {} test rows",
        bundle.labeled_x.rows(),
        bundle.unlabeled_x.rows(),
        bundle.test_x.rows()
    ));
    Ok(report)
}
