use clap::{Args, Parser, Subcommand};
use lerm_lab::cli::{cmd_check_theorems, cmd_compare, cmd_export_task, cmd_run, cmd_sweep, CmdReport};
use lerm_lab::config::{default_out_dir, Overrides, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lerm-lab",
    about = "Label-encoding risk minimization experiments on synthetic tasks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonFlags {
    /// Output directory (falls back to config out_dir, then $LERM_LAB_OUT, then ./out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the task-generation seed
    #[arg(long = "seed-task")]
    seed_task: Option<u64>,
    /// Overrides the training seed
    #[arg(long = "seed-train")]
    seed_train: Option<u64>,
    /// Suppress non-error output
    #[arg(long)]
    quiet: bool,
}

impl CommonFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed_task: self.seed_task,
            seed_train: self.seed_train,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one train+evaluate pipeline from a config file
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Run the ERM / ERM+EntMin / ERM+LERM arms on the identical bundle
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Re-run one config while varying a numeric key
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Numeric config key to vary (e.g. lambda)
        #[arg(long)]
        key: String,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Certify the prediction-mean/ERM/entropy inequalities on random batches
    CheckTheorems {
        /// Number of random trials
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Samples per batch
        #[arg(long, default_value_t = 32)]
        n: usize,
        /// Number of classes
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Export the configured task bundle as per-split CSV files
    ExportTask {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
}

fn load_config(path: &std::path::Path, flags: &CommonFlags) -> Result<RunConfig, lerm_lab::Error> {
    RunConfig::from_file(path, &flags.overrides())
}

fn finish(report: CmdReport, quiet: bool) -> ExitCode {
    // Ignore write errors so piping into `head` cannot kill the run.
    use std::io::Write;
    if !quiet {
        let mut out = std::io::stdout().lock();
        for line in &report.summary_lines {
            let _ = writeln!(out, "{line}");
        }
        for artifact in &report.artifacts {
            let _ = writeln!(out, "wrote {}", artifact.display());
        }
    }
    for err in &report.error_records {
        eprintln!("error: {err}");
    }
    if report.ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, flags } => {
            load_config(config, flags).and_then(|cfg| cmd_run(&cfg)).map(|r| (r, flags.quiet))
        }
        Command::Compare { config, flags } => load_config(config, flags)
            .and_then(|cfg| cmd_compare(&cfg))
            .map(|r| (r, flags.quiet)),
        Command::Sweep {
            config,
            key,
            values,
            flags,
        } => load_config(config, flags)
            .and_then(|cfg| cmd_sweep(&cfg, key, values))
            .map(|r| (r, flags.quiet)),
        Command::CheckTheorems {
            trials,
            n,
            classes,
            flags,
        } => {
            let out = flags.out.clone().unwrap_or_else(default_out_dir);
            cmd_check_theorems(flags.seed_task.unwrap_or(1), *trials, *n, *classes, &out)
                .map(|r| (r, flags.quiet))
        }
        Command::ExportTask { config, flags } => load_config(config, flags)
            .and_then(|cfg| cmd_export_task(&cfg))
            .map(|r| (r, flags.quiet)),
    };
    match result {
        Ok((report, quiet)) => finish(report, quiet),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
