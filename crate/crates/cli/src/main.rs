mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use echolab::model::AblationStage;
use echolab::synth::DatasetStyle;
use echolab::train::{FinetunePreset, MinibatchConditionSplit};
use echolab::ErrorCategory;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "echolab", version, about = "Deep acoustic echo suppression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Directory receiving every output of the run.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for synthesis and evaluation.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a training, development or test dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_style)]
        style: Option<DatasetStyle>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a model from scratch.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// fcrn15, m1 .. m5
        #[arg(long)]
        stage: Option<AblationStage>,
        /// Minibatch condition split: d/f/n or random.
        #[arg(long)]
        mcs: Option<MinibatchConditionSplit>,
        /// plain, ca-15-1-0 or ca-16-0-0
        #[arg(long)]
        preset: Option<FinetunePreset>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from the last checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Fine-tune a trained model with condition-aware loss weights.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Directory of the base run.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        mcs: Option<MinibatchConditionSplit>,
        #[arg(long)]
        preset: Option<FinetunePreset>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a model on a condition-sectioned dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<String>,
        /// Report metrics of the unprocessed microphone signal.
        #[arg(long)]
        identity_mask: bool,
        /// Write enhanced WAVs next to the report.
        #[arg(long)]
        emit_audio: bool,
    },
    /// Parameter and FLOPS table of the ablation stages.
    Complexity {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        stage: Vec<AblationStage>,
    },
}

fn parse_style(s: &str) -> Result<DatasetStyle, String> {
    match s {
        "train" => Ok(DatasetStyle::Train),
        "dev" => Ok(DatasetStyle::Dev),
        "test" => Ok(DatasetStyle::Test),
        _ => Err(format!("unknown style `{s}` (expected train, dev or test)")),
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.run_dir {
        cfg.run_dir = d.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn resolve(command: Command) -> Result<(RunConfig, fn(&RunConfig) -> Result<()>)> {
    Ok(match command {
        Command::Synth { common, style, count } => {
            let mut cfg = base_config(&common)?;
            if let Some(s) = style {
                cfg.synth.style = s;
            }
            if let Some(c) = count {
                cfg.synth.count = c;
            }
            cfg.synth.resolve();
            (cfg, commands::synth)
        }
        Command::Train { common, dataset, stage, mcs, preset, epochs, resume } => {
            let mut cfg = base_config(&common)?;
            let t = &mut cfg.train;
            t.dataset = dataset.unwrap_or(t.dataset.clone());
            t.stage = stage.unwrap_or(t.stage);
            t.mcs = mcs.unwrap_or(t.mcs);
            t.preset = preset.unwrap_or(t.preset);
            t.schedule.max_epochs = epochs.unwrap_or(t.schedule.max_epochs);
            t.resume |= resume;
            (cfg, commands::train)
        }
        Command::Finetune { common, dataset, model, mcs, preset, epochs, resume } => {
            let mut cfg = base_config(&common)?;
            let f = &mut cfg.finetune;
            f.dataset = dataset.unwrap_or(f.dataset.clone());
            f.model = model.unwrap_or(f.model.clone());
            if let Some(p) = preset {
                f.preset = p;
                f.mcs = None;
            }
            f.mcs = mcs.or(f.mcs);
            f.schedule.max_epochs = epochs.unwrap_or(f.schedule.max_epochs);
            f.resume |= resume;
            f.resolve()?;
            (cfg, commands::finetune)
        }
        Command::Evaluate { common, dataset, model, checkpoint, identity_mask, emit_audio } => {
            let mut cfg = base_config(&common)?;
            let e = &mut cfg.evaluate;
            e.dataset = dataset.unwrap_or(e.dataset.clone());
            e.model = model.unwrap_or(e.model.clone());
            e.checkpoint = checkpoint.unwrap_or(e.checkpoint.clone());
            e.identity_mask |= identity_mask;
            e.emit_audio |= emit_audio;
            (cfg, commands::evaluate_cmd)
        }
        Command::Complexity { common, stage } => {
            let mut cfg = base_config(&common)?;
            if !stage.is_empty() {
                cfg.complexity.stages = stage;
            }
            (cfg, commands::complexity)
        }
    })
}

fn run(cli: Cli) -> Result<()> {
    let (cfg, cmd) = resolve(cli.command)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global()?;
    }
    cfg.write_snapshot(&cfg.run_dir)?;
    cmd(&cfg)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<echolab::Error>() {
            return match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numeric => 4,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
