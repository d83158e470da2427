use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;

use fxanc::experiment::{self, Axis, ExperimentConfig, RunOptions, Stage};
use fxanc::AncError;

/// Three-axis magnetic active noise control: secondary-path estimation,
/// FxLMS runs and coherence scans on the simulated rig.
///
/// Config values can be overridden with ANC_-prefixed environment variables
/// whose remainder is the key path, separated by `.` or `__`, e.g.
/// ANC_anc.calibration_s=2 or ANC_pid__ki=0.1.
#[derive(Parser, Debug)]
#[command(name = "fxanc", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config file; every field is optional.
    #[arg(long, value_name = "PATH", global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "anc_out", global = true)]
    out: PathBuf,

    /// Master seed, overriding the config.
    #[arg(long, value_name = "N", global = true)]
    seed: Option<u64>,

    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Errors only.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Identify the secondary path of each axis and write the models.
    SpEstimate {
        #[command(flatten)]
        common: Common,
    },
    /// Raw, PID and ANC stages with report, spectra and traces.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run sp-estimate first instead of loading saved models.
        #[arg(long)]
        estimate_first: bool,
        /// Comma-separated subset of raw,pid,anc.
        #[arg(long, value_name = "LIST", default_value = "raw,pid,anc")]
        stages: String,
        /// Directory holding sp_model_{x,y,z}.toml (default: --out).
        #[arg(long, value_name = "DIR")]
        models: Option<PathBuf>,
    },
    /// Achieved suppression against the coherence ceiling over contamination levels.
    Coherence {
        #[command(flatten)]
        common: Common,
        /// Comma-separated contamination levels (default: from config).
        #[arg(long, value_name = "LIST")]
        levels: Option<String>,
        /// Load models from this directory instead of estimating them.
        #[arg(long, value_name = "DIR")]
        models: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::SpEstimate { common } | Command::Run { common, .. } | Command::Coherence { common, .. } => common,
        }
    }
}

fn exit_code(e: &AncError) -> u8 {
    match e {
        AncError::Config(_) | AncError::InvalidArgument(_) | AncError::MissingStage(_) | AncError::Mismatch(_) => 2,
        AncError::Divergence { .. }
        | AncError::UnnulledDc { .. }
        | AncError::PrenullTimeout { .. }
        | AncError::Degenerate(_) => 3,
        AncError::Io(_) | AncError::Format(_) => 4,
    }
}

fn parse_stages(list: &str) -> fxanc::Result<Vec<Stage>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(Stage::parse).collect()
}

fn parse_levels(list: &str) -> fxanc::Result<Vec<f64>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| AncError::Config(format!("bad contamination level '{s}'")))
        })
        .collect()
}

fn load_config(common: &Common) -> fxanc::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn execute(command: &Command) -> fxanc::Result<()> {
    let common = command.common();
    let config = load_config(common)?;
    match command {
        Command::SpEstimate { .. } => {
            let r = experiment::sp_estimate(&config, &common.out)?;
            let errs = r.relative_errors();
            for a in Axis::ALL {
                let m = &r.models[a.index()];
                println!(
                    "{}: {} taps, peak at tap {}, relative error {:.3e}{}",
                    a.name(),
                    m.taps(),
                    m.peak_tap(),
                    errs[a.index()],
                    if m.elevated_residual { " (elevated residual)" } else { "" }
                );
            }
        }
        Command::Run {
            estimate_first,
            stages,
            models,
            ..
        } => {
            let options = RunOptions {
                stages: parse_stages(stages)?,
                estimate_first: *estimate_first,
                models_dir: models.clone(),
            };
            let outcome = experiment::run(&config, &common.out, &options)?;
            print!("{}", outcome.report.to_csv());
            for c in &outcome.report.convergence {
                let fmt = |v: Option<f64>| v.map_or("not detected".to_string(), |t| format!("{t:.2} s"));
                println!("convergence {}: phase 1 {}, phase 2 {}", c.axis, fmt(c.phase1_s), fmt(c.phase2_s));
            }
        }
        Command::Coherence { levels, models, .. } => {
            let levels = levels.as_deref().map(parse_levels).transpose()?;
            let scan = experiment::coherence(&config, &common.out, levels.as_deref(), models.is_none(), models.as_deref())?;
            print!("{}", experiment::scan_table_csv(&scan));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.command.common();
    let level = match (common.quiet, common.verbose) {
        (true, _) => LevelFilter::Error,
        (false, 0) => LevelFilter::Warn,
        (false, 1) => LevelFilter::Info,
        (false, 2) => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
