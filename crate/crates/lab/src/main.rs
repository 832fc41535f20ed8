use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use zsp_lab::common::build_pool;
use zsp_lab::{default_out, run, write_outputs, ExperimentConfig, ExperimentKind, LabError, LabResult};

#[derive(Parser)]
#[command(name = "zsp", version, about = "Zero-shot prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Direct, indirect and trained-encoder accuracy along θ.
    ThetaSweep(Common),
    /// MSE of both routes across the N and M grids.
    Convergence(Common),
    /// Accuracy against prompts per class for each strategy.
    PromptCompare(Common),
    /// NOCCO and kernel CCA on correlated Gaussian pairs.
    Dependence(Common),
    /// Exact identity and inequality battery.
    Identities(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; defaults apply to every missing field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact path; the sidecar goes to <out>.meta.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Replicate count; overrides the config.
    #[arg(long)]
    replicates: Option<usize>,
}

fn execute(kind: ExperimentKind, args: &Common) -> LabResult<bool> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    if let Some(out) = &args.out {
        config.out = Some(out.clone());
    }
    if args.threads == 0 {
        return Err(LabError::Config("threads: must be at least 1".into()));
    }
    config.validate(kind)?;
    let out = config.out.clone().unwrap_or_else(|| default_out(kind));
    let pool = build_pool(args.threads)?;
    let start = Instant::now();
    let result = pool.install(|| run(kind, &config))?;
    let sidecar = write_outputs(kind, &config, &result, &out)?;
    eprintln!(
        "{}: wrote {} and {} in {:.2} s",
        kind.name(),
        out.display(),
        sidecar.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(result.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::ThetaSweep(a) => (ExperimentKind::ThetaSweep, a),
        Command::Convergence(a) => (ExperimentKind::Convergence, a),
        Command::PromptCompare(a) => (ExperimentKind::PromptCompare, a),
        Command::Dependence(a) => (ExperimentKind::Dependence, a),
        Command::Identities(a) => (ExperimentKind::Identities, a),
    };
    match execute(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}: one or more checks failed", kind.name());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
