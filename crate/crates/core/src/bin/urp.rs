use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use urp_core::config::RunConfig;
use urp_core::pipeline::{self, EvalOptions, RolloutOptions, TrainOptions};
use urp_core::world::Indicator;
use urp_core::{Result, UrpError};

/// Urban region profiling: data generation, GRPO and SFT training, evaluation.
#[derive(Parser)]
#[command(name = "urp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the world seed (gen-data) or the training seeds (other subcommands).
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated indicator subset, e.g. carbon,population.
    #[arg(long, value_delimiter = ',')]
    indicators: Option<Vec<Indicator>>,
    /// Dataset directory; defaults to paths.dataset.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic world and write the split files.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Train with group-relative policy optimization.
    TrainGrpo(TrainArgs),
    /// Train with supervised fine-tuning on gold answers.
    TrainSft(TrainArgs),
    /// Evaluate a checkpoint on the configured splits.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
        #[arg(long)]
        ablate_image: bool,
        #[arg(long)]
        ablate_text: bool,
    },
    /// Sample candidates for one region and print their rewards.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        region: String,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long)]
        indicator: Option<Indicator>,
        #[arg(long)]
        ablate_image: bool,
        #[arg(long)]
        ablate_text: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
    /// Resume from a checkpoint of the same trainer, or start from any other policy checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn load(common: &Common, world_seed: bool) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        if world_seed {
            cfg.world.seed = seed;
        } else {
            cfg.set_training_seed(seed);
        }
    }
    if let Some(ind) = &common.indicators {
        cfg.set_indicators(ind.clone())?;
    }
    cfg.validate()?;
    let data = common.data.clone().unwrap_or_else(|| cfg.paths.dataset.clone());
    Ok((cfg, data))
}

fn train(args: TrainArgs, grpo: bool) -> Result<()> {
    let (cfg, data) = load(&args.common, false)?;
    let default_out = cfg.paths.checkpoints.join(if grpo { "grpo" } else { "sft" });
    let opts = TrainOptions {
        data,
        out: args.out.unwrap_or(default_out),
        overwrite: args.overwrite,
        checkpoint: args.checkpoint,
    };
    let s = if grpo {
        pipeline::train_grpo(&cfg, &opts)?
    } else {
        pipeline::train_sft_run(&cfg, &opts)?
    };
    println!("{} steps, final checkpoint {}", s.steps, s.final_checkpoint.display());
    if let Some(m) = s.last_metrics {
        println!("{m}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out, overwrite } => {
            let (cfg, data) = load(&common, true)?;
            let out = out.unwrap_or(data);
            let m = pipeline::gen_data(&cfg, &out, overwrite)?;
            println!("wrote {} (dataset {})", out.display(), m.dataset_hash);
        }
        Command::TrainGrpo(args) => train(args, true)?,
        Command::TrainSft(args) => train(args, false)?,
        Command::Evaluate { common, checkpoint, out, overwrite, ablate_image, ablate_text } => {
            let (mut cfg, data) = load(&common, false)?;
            cfg.eval.ablate_image |= ablate_image;
            cfg.eval.ablate_text |= ablate_text;
            let out = out.unwrap_or_else(|| cfg.paths.reports.clone());
            let ev = pipeline::evaluate(&cfg, &EvalOptions { data, checkpoint, out: out.clone(), overwrite })?;
            for row in &ev.report.rows {
                let f = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
                println!(
                    "{:<12} {:<12} n={:<4} rho={} r2={} parse={:.3}",
                    row.indicator.as_str(),
                    row.split.to_string(),
                    row.n,
                    f(row.rho),
                    f(row.r2),
                    row.parse_rate
                );
            }
            println!("report written to {}", out.join(pipeline::REPORT).display());
        }
        Command::Rollout { common, checkpoint, region, n, indicator, ablate_image, ablate_text } => {
            let (mut cfg, data) = load(&common, false)?;
            cfg.eval.ablate_image |= ablate_image;
            cfg.eval.ablate_text |= ablate_text;
            let dump = pipeline::rollout(&cfg, &RolloutOptions { data, checkpoint, region, indicator, n })?;
            print!("{dump}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_byte(&e))
        }
    }
}

fn exit_byte(e: &UrpError) -> u8 {
    e.exit_code() as u8
}
