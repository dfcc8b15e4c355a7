//! Workflow entry point: dataset generation, splits, condition mining,
//! response generation, consistency ranking, training, evaluation and the
//! two ablation sweeps.

mod backend;
mod commands;
mod config;
mod plot;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::*;

#[derive(Parser)]
#[command(
    name = "vlcfusion",
    about = "Condition-aware multimodal fusion benchmark workflow",
    version
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-modality dataset.
    SynthData(SynthDataArgs),
    /// Build train/val/test splits with held-out condition combinations.
    Split(SplitArgs),
    /// Caption a subset, extract conditions, deduplicate.
    MineConditions(MineArgs),
    /// Generate the per-image boolean response matrix.
    Respond(RespondArgs),
    /// Score condition consistency over repeated runs; optionally keep top-k.
    Rank(RankArgs),
    /// Train one detector variant.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint on the test splits.
    Eval(EvalArgs),
    /// Train and evaluate all five fusion variants on one seed.
    Compare(CompareArgs),
    /// Sweep the number of conditions and plot quality against k.
    AblateK(AblateKArgs),
    /// Compare condition-noise profiles standing in for backend quality.
    AblateBackend(AblateBackendArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut ctx = Ctx::new(&cli.common)?;
    std::fs::create_dir_all(&ctx.out_dir)?;
    match &cli.command {
        Command::SynthData(args) => synth_data(&mut ctx, args),
        Command::Split(args) => split(&mut ctx, args),
        Command::MineConditions(args) => mine_conditions(&mut ctx, args),
        Command::Respond(args) => respond(&mut ctx, args),
        Command::Rank(args) => rank(&mut ctx, args),
        Command::Train(args) => train_cmd(&mut ctx, args),
        Command::Eval(args) => eval_cmd(&mut ctx, args),
        Command::Compare(args) => compare(&mut ctx, args),
        Command::AblateK(args) => ablate_k(&mut ctx, args),
        Command::AblateBackend(args) => ablate_backend(&mut ctx, args),
    }
}
