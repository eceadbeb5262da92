use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use localcal_cli::commands::write_file;
use localcal_cli::error::EXIT_CONFIG;
use localcal_cli::{cmd_diagnose, cmd_eval, cmd_fit, cmd_score, cmd_synth, CliError, CliResult, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "localcal", version, about = "Locally calibrated detection of machine-generated text")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Token-record corpus (JSON lines).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Model bundle to write (fit) or read.
    #[arg(long, global = true)]
    bundle: Option<PathBuf>,
    /// Score report to evaluate.
    #[arg(long, global = true)]
    scores: Option<PathBuf>,
    /// Output file (score, eval) or directory (diagnose, synth).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restrict to these scorers (repeatable).
    #[arg(long, global = true)]
    scorer: Vec<String>,
    /// Restrict to these generators (repeatable).
    #[arg(long, global = true)]
    generator: Vec<String>,
    #[arg(long, global = true)]
    cap_tokens: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Fit PCA, DMAP references and the local predictors.
    Fit,
    /// Score a corpus with naive and calibrated detectors.
    Score,
    /// AUROC and TPR at fixed FPR with bootstrap intervals.
    Eval,
    /// Cluster table, z-score and DMAP histograms.
    Diagnose,
    /// Generate a synthetic corpus from the configured world.
    Synth,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(Overrides {
        corpus: cli.corpus,
        bundle: cli.bundle,
        scores: cli.scores,
        out: cli.out,
        scorers: cli.scorer,
        generators: cli.generator,
        cap_tokens: cli.cap_tokens,
        seed: cli.seed,
    })?;
    let output = match cli.command {
        Command::Fit => cmd_fit(&cfg)?,
        Command::Score => cmd_score(&cfg)?,
        Command::Eval => cmd_eval(&cfg)?,
        Command::Diagnose => cmd_diagnose(&cfg)?,
        Command::Synth => cmd_synth(&cfg)?,
    };
    match (cli.command, &cfg.out) {
        (Command::Score | Command::Eval, Some(path)) => write_file(path, &output),
        _ => {
            print!("{output}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
