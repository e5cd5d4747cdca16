mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use depthpose::workflow::TrainTarget;
use depthpose::{Error, ErrorCategory, Result};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "depthpose", version, about = "Head and shoulder pose estimation from depth images")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. They override `--set`, which overrides the
/// config file.
#[derive(Args)]
struct Global {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set learning_rate=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// none, biwi, pandora, sequences:A,B or subjects:A,B.
    #[arg(long, global = true)]
    split: Option<String>,
    /// none, left, top, right, bottom, middle, random or all.
    #[arg(long, global = true)]
    occlusion: Option<String>,
    /// Crop around the annotated head center (default).
    #[arg(long, global = true, conflicts_with = "use_locnet")]
    use_gt_center: bool,
    /// Crop around the center predicted by the trained locnet.
    #[arg(long, global = true)]
    use_locnet: bool,
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Synth {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Convert a Biwi Kinect Head Pose directory into the canonical layout.
    ConvertBiwi {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train one network; checkpoints are read from and written to --out.
    Train {
        /// locnet, ffd, branch-depth, branch-ffd, branch-motion, poseidon or shoulder.
        target: String,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<u32>,
    },
    /// Evaluate a trained model and write a report under --out.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// poseidon, branch-depth, branch-ffd, branch-motion or shoulder.
        #[arg(long)]
        model: Option<String>,
    },
    /// Reconstruct a gray face image from a depth crop.
    Reconstruct {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Dense optical flow between two depth images.
    Flow {
        prev: PathBuf,
        next: PathBuf,
        output: PathBuf,
    },
    /// Print report files as one table, also written under --out if given.
    Report { inputs: Vec<PathBuf> },
}

fn set_opt<T: ToString>(cfg: &mut RunConfig, key: &str, value: &Option<T>) -> Result<()> {
    match value {
        Some(v) => cfg.set(key, v.to_string()),
        None => Ok(()),
    }
}

fn path_string(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::defaults(),
    };
    for a in &g.set {
        cfg.set_assignment(a)?;
    }
    set_opt(&mut cfg, "seed", &g.seed)?;
    set_opt(&mut cfg, "out", &path_string(&g.out))?;
    set_opt(&mut cfg, "split", &g.split)?;
    set_opt(&mut cfg, "occlusion", &g.occlusion)?;
    set_opt(&mut cfg, "jobs", &g.jobs)?;
    if g.use_gt_center {
        cfg.set("center", "gt")?;
    }
    if g.use_locnet {
        cfg.set("center", "locnet")?;
    }
    match &cli.command {
        Command::Synth { count } => set_opt(&mut cfg, "count", count)?,
        Command::ConvertBiwi { input } => set_opt(&mut cfg, "input", &path_string(input))?,
        Command::Train { dataset, epochs, .. } => {
            set_opt(&mut cfg, "dataset", &path_string(dataset))?;
            set_opt(&mut cfg, "epochs", epochs)?;
        }
        Command::Eval {
            dataset,
            checkpoints,
            model,
        } => {
            set_opt(&mut cfg, "dataset", &path_string(dataset))?;
            set_opt(&mut cfg, "checkpoints", &path_string(checkpoints))?;
            set_opt(&mut cfg, "model", model)?;
        }
        Command::Reconstruct { checkpoints, .. } => set_opt(&mut cfg, "checkpoints", &path_string(checkpoints))?,
        Command::Flow { .. } | Command::Report { .. } => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String> {
    let mut cfg = build_config(cli)?;
    match &cli.command {
        Command::Synth { .. } => commands::synth(&cfg),
        Command::ConvertBiwi { .. } => commands::convert_biwi(&cfg),
        Command::Train { target, .. } => {
            let target: TrainTarget = target.parse()?;
            commands::train(&mut cfg, target)
        }
        Command::Eval { .. } => commands::eval(&cfg),
        Command::Reconstruct { input, output, .. } => commands::reconstruct(&cfg, input, output),
        Command::Flow { prev, next, output } => commands::flow(&cfg, prev, next, output),
        Command::Report { inputs } => commands::report(&cfg, inputs),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Checkpoint => 4,
        ErrorCategory::Numeric => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(msg) => {
            // A closed pipe (e.g. `| head`) is not a failure of the command.
            let _ = writeln!(std::io::stdout(), "{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
