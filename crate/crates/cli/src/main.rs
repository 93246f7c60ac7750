mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Point cloud video action recognition with cross-modal alignment.
#[derive(Parser, Debug)]
#[command(name = "vg4d", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML run configuration; unset keys keep their defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving artifacts and the summary (overrides the config).
    #[arg(long, short, global = true)]
    output_dir: Option<PathBuf>,
    /// Master seed; also seeds dataset synthesis (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded execution for bit-exact reproduction.
    #[arg(long, global = true)]
    deterministic: bool,
    /// More log output (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ScheduleArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic motion dataset.
    SynthData {
        #[arg(long)]
        samples_per_class: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Generate a synthetic text/video embedding store for a dataset.
    SynthEmbed {
        /// Dataset directory (synthesized from the config when omitted).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        sigma_emb: Option<f64>,
    },
    /// Supervised pretraining on the train split.
    Pretrain {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Cross-modal fine-tuning of a pretrained model.
    Finetune {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Embedding store directory (synthesized from the config when omitted).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Run directory holding model.vg4dckpt and model.json.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Score a split and fuse the four channels.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        /// Fusion weights `w_pc,w_pc_text,w_rgb,w_rgb_text`.
        #[arg(long)]
        weights: Option<vg4d::infer::FusionWeights>,
        /// Channels taking part, e.g. `pc,pc_text` or `all`.
        #[arg(long, default_value = "all")]
        mask: vg4d::infer::ChannelMask,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Fail when a sample has no video embedding instead of skipping
        /// its RGB channels.
        #[arg(long)]
        require_video: bool,
    },
    /// Additive ablation over training strategies.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated toggles (overrides the config).
        #[arg(long, value_delimiter = ',')]
        toggles: Option<Vec<String>>,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Finite-difference gradient checks of every op and the full loss.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        seeds: usize,
    },
    /// Brute-force equivalence checks of sampling, grouping and aggregation.
    OracleCheck {
        #[arg(long, default_value_t = 200)]
        instances: usize,
    },
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for vg4d::data::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => vg4d::data::Split::Train,
            SplitArg::Test => vg4d::data::Split::Test,
        }
    }
}

/// Exit code when a verification suite reports failures.
const EXIT_CHECK_FAILED: u8 = 5;

fn exit_code(err: &anyhow::Error) -> u8 {
    use vg4d::ErrorCategory;
    match err.downcast_ref::<vg4d::Error>().map(vg4d::Error::category) {
        Some(ErrorCategory::Config) => 2,
        Some(ErrorCategory::Data) => 3,
        Some(ErrorCategory::Numerical) => 4,
        None if err.is::<commands::CheckFailed>() => EXIT_CHECK_FAILED,
        None => 3,
    }
}

fn resolve(global: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &global.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(s) = global.seed {
        cfg.seed = s;
        cfg.synth.rng_seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve(&cli.global)?;
    match cli.command {
        Command::SynthData { samples_per_class, frames, points, noise } => {
            commands::synth_data(cfg, samples_per_class, frames, points, noise)
        }
        Command::SynthEmbed { data, sigma_emb } => commands::synth_embed(cfg, data, sigma_emb),
        Command::Pretrain { data, schedule } => commands::pretrain(cfg, data, &schedule),
        Command::Finetune { data, embeddings, model, schedule } => {
            commands::finetune(cfg, data, embeddings, &model, &schedule)
        }
        Command::Eval { data, embeddings, model, weights, mask, split, require_video } => {
            commands::eval(cfg, data, embeddings, &model, weights, mask, split.into(), require_video)
        }
        Command::Ablate { data, toggles, schedule } => commands::ablate(cfg, data, toggles, &schedule),
        Command::Gradcheck { seeds } => commands::gradcheck(cfg, seeds),
        Command::OracleCheck { instances } => commands::oracle_check(cfg, instances),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if cli.global.deterministic {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            log::warn!("could not pin the thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
