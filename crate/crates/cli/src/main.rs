use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use saec::harness::{cmd_eval, cmd_run, cmd_synth, cmd_train, Algo, ExperimentConfig};
use saec::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

/// Stereophonic echo suppression experiments: synthesise mixtures, run
/// cancellers, train the network and score the results.
#[derive(Debug, Parser)]
#[command(name = "saec", version)]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for bundle-level parallelism (default: all cores).
    #[arg(long, short, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the mixture dataset described by the grid.
    Synth {
        /// Dataset directory (default: <output root>/dataset).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply one algorithm to every bundle of a dataset.
    Run(RunArgs),
    /// Train the network on a dataset and write a checkpoint.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint directory (default: <output root>/checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score enhanced outputs; writes per_file.csv and summary.csv.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Directory holding one sub-directory per algorithm.
        #[arg(long)]
        enhanced: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigAction {
    /// Print the default configuration as TOML.
    PrintDefaults,
    /// Check a configuration file and print it with defaults filled in.
    Validate { path: PathBuf },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// none, nlms, wiener, neural or sle-srn.
    #[arg(long)]
    algo: Algo,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Required for neural and sle-srn.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory; results go to <out>/<algo>/ (default: <output root>/enhanced).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    nlms_filter_len: Option<usize>,
    #[arg(long)]
    nlms_mu: Option<f64>,
    #[arg(long)]
    nlms_delta: Option<f64>,
    #[arg(long)]
    wiener_alpha: Option<f64>,
    #[arg(long)]
    wiener_floor: Option<f64>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::MissingPaths(_) => EXIT_CONFIG,
        Error::Data(_) | Error::Wav(_) | Error::Io(_) => EXIT_DATA,
        _ => EXIT_FAILURE,
    }
}

fn load_config(path: Option<&Path>) -> saec::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, a: &RunArgs) -> saec::Result<()> {
    if let Some(v) = a.nlms_filter_len {
        cfg.nlms.filter_len = v;
    }
    if let Some(v) = a.nlms_mu {
        cfg.nlms.mu = v;
    }
    if let Some(v) = a.nlms_delta {
        cfg.nlms.delta = v;
    }
    if let Some(v) = a.wiener_alpha {
        cfg.wiener.alpha_psd = v;
    }
    if let Some(v) = a.wiener_floor {
        cfg.wiener.gain_floor = v;
    }
    cfg.validate()
}

fn execute(cli: Cli) -> saec::Result<()> {
    if let Command::Config { action } = &cli.command {
        match action {
            ConfigAction::PrintDefaults => print!("{}", ExperimentConfig::default().to_toml_string()),
            ConfigAction::Validate { path } => print!("{}", ExperimentConfig::load(path)?.to_toml_string()),
        }
        return Ok(());
    }
    let mut cfg = load_config(cli.config.as_deref())?;
    let root = cfg.output_root();
    let dataset = |d: &Option<PathBuf>| d.clone().unwrap_or_else(|| root.join("dataset"));
    match cli.command {
        Command::Synth { out } => {
            let dir = dataset(&out);
            let m = cmd_synth(&cfg, &dir)?;
            eprintln!("wrote {} bundles to {}", m.bundles.len(), dir.display());
        }
        Command::Run(a) => {
            apply_overrides(&mut cfg, &a)?;
            let out = a.out.clone().unwrap_or_else(|| root.join("enhanced"));
            let s = cmd_run(&cfg, &dataset(&a.dataset), a.algo, a.checkpoint.as_deref(), &out)?;
            eprintln!("{}: processed {} bundles into {}", s.algo, s.files, out.join(s.algo.label()).display());
        }
        Command::Train { dataset: d, checkpoint } => {
            let ck = checkpoint.unwrap_or_else(|| root.join("checkpoint"));
            let r = cmd_train(&cfg, &dataset(&d), &ck)?;
            eprintln!(
                "trained {} + {} epochs; final losses {:?} / {:?}; checkpoint in {}",
                r.stage1_losses.len(),
                r.stage2_losses.len(),
                r.stage1_losses.last(),
                r.stage2_losses.last(),
                ck.display()
            );
        }
        Command::Eval { dataset: d, enhanced, out } => {
            let enhanced = enhanced.unwrap_or_else(|| root.join("enhanced"));
            let out = out.unwrap_or_else(|| root.join("eval"));
            let r = cmd_eval(&dataset(&d), &enhanced, &out)?;
            eprintln!("scored {} files; tables in {}", r.rows.len(), out.display());
        }
        Command::Config { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
