use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedface_cli::run::{default_run_dir, MANIFEST_FILE, VERSION};
use fedface_cli::{exit_code, replay, run_job, Job, RunConfig};
use fedface_core::Result;

#[derive(Parser)]
#[command(name = "fedface", version = VERSION, about = "Federated face-embedding simulator", after_help = RunConfig::help_text())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to runs/<timestamp>-<command>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Start federation from the untrained initialization.
    #[arg(long)]
    no_pretrain: bool,
    /// Let batch-norm statistics update during local training.
    #[arg(long)]
    no_freeze_bn: bool,
    /// Train at the full learning rate from the first batch.
    #[arg(long)]
    no_warmup: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the backbone on public data.
    Pretrain(Common),
    /// Federated fine-tuning; pretrains inline when no checkpoint is given.
    Federate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// TAR at FAR 1e-2 and 1e-3 on the private test pairs.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Second checkpoint; the report adds the difference.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Gradient inversion on MNIST in all three sharing modes.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Victim backbone; a fresh one is drawn from the seed otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Federated, centralized and ablated variants on one seed.
    Ablate(Common),
    /// Reruns a recorded command and checks that its outputs are bit-identical.
    Replay {
        /// A run directory or its manifest.json.
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Input paths are recorded absolute so a replay works from any directory.
fn absolute(p: PathBuf) -> PathBuf {
    std::fs::canonicalize(&p).unwrap_or(p)
}

fn prepare(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.pretrained_init &= !c.no_pretrain;
    cfg.freeze_bn &= !c.no_freeze_bn;
    if c.no_warmup {
        cfg.warmup_batches = 0;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main_inner(cli: Cli) -> Result<bool> {
    let (job, common) = match cli.command {
        Command::Pretrain(c) => (Job::Pretrain, c),
        Command::Federate { common, checkpoint } => (Job::Federate { checkpoint: checkpoint.map(absolute) }, common),
        Command::Evaluate { common, checkpoint, compare } => (Job::Evaluate { checkpoint: absolute(checkpoint), compare: compare.map(absolute) }, common),
        Command::Attack { common, checkpoint } => (Job::Attack { checkpoint: checkpoint.map(absolute) }, common),
        Command::Ablate(c) => (Job::Ablate, c),
        Command::Replay { manifest, out } => {
            let path = if manifest.is_dir() { manifest.join(MANIFEST_FILE) } else { manifest };
            let dir = out.unwrap_or_else(|| default_run_dir(&PathBuf::from("runs"), "replay"));
            let report = replay(&path, &dir)?;
            if report.mismatched.is_empty() {
                println!("replayed {} into {}: all {} outputs bit-identical", path.display(), dir.display(), report.manifest.outputs.len());
                return Ok(true);
            }
            eprintln!("replay differs from the recorded run in: {}", report.mismatched.join(", "));
            return Ok(false);
        }
    };
    let cfg = prepare(&common)?;
    let dir = common.out.unwrap_or_else(|| default_run_dir(&PathBuf::from("runs"), job.name()));
    let (manifest, outcome) = run_job(&job, &cfg, &dir)?;
    print!("{}", outcome.summary);
    println!("{} finished in {:.1}s; outputs in {}", job.name(), manifest.duration_secs, dir.display());
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match main_inner(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
