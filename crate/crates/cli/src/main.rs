use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use entcap_core::model::EntityMode;

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "entcap",
    version,
    about = "Entity-aware image captioning with coverage control"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write raw synthetic train/dev/test splits.
    GenerateSynthetic {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Turn alt-text into ground-truth captions by selective hypernymization.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build the vocabulary and train the captioner.
    Train(TrainArgs),
    /// Fit the coverage regressors on a frozen checkpoint.
    TrainRegressors {
        #[command(flatten)]
        model: ModelPaths,
        #[arg(long)]
        train: Option<PathBuf>,
        /// Where to write the updated checkpoint (default: overwrite).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Caption a dataset; writes JSON lines.
    Caption(CaptionArgs),
    /// Score captions against a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// JSON lines with `example_id` and `caption`.
        #[arg(long)]
        captions: PathBuf,
        /// JSON report path; the text table always goes to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Aggregate side-by-side ratings from CSV.
    Ratings {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ModelPaths {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelPaths,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    entity_mode: Option<EntityMode>,
}

#[derive(Args, Debug)]
struct CaptionArgs {
    #[command(flatten)]
    model: ModelPaths,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Must match the checkpoint's mode.
    #[arg(long)]
    entity_mode: Option<EntityMode>,
    #[arg(long)]
    boost_we: Option<f64>,
    #[arg(long)]
    boost_obj: Option<f64>,
    #[arg(long)]
    beam: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .any(|c| c.downcast_ref::<entcap_core::Error>().is_some_and(|e| e.is_numerical()));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}
