//! `nucleonet`: synthetic data, feature extraction, autoencoder
//! pretraining, two-cycle training, prediction, evaluation and gradient
//! checks from one JSON configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nucleonet::gradcheck::suite::Group;
use nucleonet::{Error, ErrorKind, Result};

use config::{RunConfig, Selection};

const DEFAULT_GRADCHECK_SEED: u64 = 2024;

#[derive(Parser, Debug)]
#[command(name = "nucleonet", version, about = "Nuclear attribute and shape classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the pipeline subcommands. Each overrides the
/// corresponding config value.
#[derive(Args, Debug, Default)]
struct Common {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Selection>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset manifest CSV.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Injected-feature file.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a labeled synthetic image set (--seed sets the generator seed).
    GenSynth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Write stand-in injected features for every manifest image.
    ExtractFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Pretrain an autoencoder on every manifest image.
    PretrainCae {
        #[command(flatten)]
        common: Common,
    },
    /// Split, pretrain, train in two cycles and evaluate, for each round.
    Train {
        #[command(flatten)]
        common: Common,
        /// Autoencoder checkpoint to initialize from instead of pretraining.
        #[arg(long)]
        cae: Option<PathBuf>,
    },
    /// Score every manifest image with a checkpoint (or a WF then a WFM
    /// checkpoint, combined).
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Re-evaluate the checkpoints of a `train` output directory.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Output directory of the `train` run.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Merge the per-round results of several runs into one report.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directories holding rounds.json.
        inputs: Vec<PathBuf>,
    },
    /// Finite-difference gradient checks at compact dimensions.
    Gradcheck {
        /// Layers, losses and full models.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        layers: bool,
        #[arg(long)]
        losses: bool,
        #[arg(long)]
        models: bool,
        #[arg(long, default_value_t = DEFAULT_GRADCHECK_SEED)]
        seed: u64,
    },
}

fn cwd() -> Result<PathBuf> {
    std::env::current_dir().map_err(|e| Error::io(".", e))
}

/// Loads the config (or defaults) and applies command-line overrides.
fn resolve(common: &Common, synth: bool) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut flags = RunConfig {
        out_dir: common.out.clone(),
        manifest: common.manifest.clone(),
        features: common.features.clone(),
        ..RunConfig::default()
    };
    flags.resolve_paths(&cwd()?)?;
    cfg.out_dir = flags.out_dir.or(cfg.out_dir);
    cfg.manifest = flags.manifest.or(cfg.manifest);
    cfg.features = flags.features.or(cfg.features);
    if let Some(v) = common.variant {
        cfg.variant = Some(v);
    }
    if let Some(s) = common.seed {
        if synth {
            cfg.synth.seed = s;
        } else {
            cfg.experiment.seed = s;
        }
    }
    if let Some(r) = common.rounds {
        cfg.experiment.rounds = r;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenSynth { common, count } => {
            let mut cfg = resolve(&common, true)?;
            if let Some(c) = count {
                cfg.synth.count = c;
            }
            commands::gen_synth(&cfg)?;
        }
        Command::ExtractFeatures { common, dim } => {
            let mut cfg = resolve(&common, false)?;
            if let Some(d) = dim {
                cfg.feature_dim = d;
            }
            commands::extract(&cfg)?;
        }
        Command::PretrainCae { common } => commands::pretrain_cae(&resolve(&common, false)?)?,
        Command::Train { common, cae } => {
            let mut cfg = resolve(&common, false)?;
            if let Some(p) = cae {
                cfg.cae_checkpoint = Some(std::path::absolute(&p).map_err(|e| Error::io(&p, e))?);
            }
            commands::train(&cfg)?;
        }
        Command::Predict { common, checkpoints } => commands::predict(&resolve(&common, false)?, &checkpoints)?,
        Command::Eval { common, checkpoints } => {
            let mut cfg = resolve(&common, false)?;
            if let Some(p) = checkpoints {
                cfg.checkpoints = Some(std::path::absolute(&p).map_err(|e| Error::io(&p, e))?);
            }
            commands::eval(&cfg)?;
        }
        Command::Report { common, inputs } => commands::report(&resolve(&common, false)?, &inputs)?,
        Command::Gradcheck {
            all,
            layers,
            losses,
            models,
            seed,
        } => {
            let mut groups = Vec::new();
            if all || layers {
                groups.push(Group::Layers);
            }
            if all || losses {
                groups.push(Group::Losses);
            }
            if all || models {
                groups.push(Group::Models);
            }
            if groups.is_empty() {
                return Err(Error::Config(
                    "gradcheck needs --all or at least one of --layers, --losses, --models".into(),
                ));
            }
            return commands::gradcheck(&groups, seed);
        }
    }
    Ok(true)
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(exit_code(ErrorKind::Numerical)),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
