use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use iocount::dataset::DatasetLayout;
use iocount::metrics::DEFAULT_THRESHOLD;
use iocount::synth::{SplitSizes, SplitTemplate};
use iocount_cli::commands;
use iocount_cli::config::TrainOverrides;
use iocount_cli::serve;

#[derive(Parser)]
#[command(name = "ioc", version, about = "Count indiscernible objects: synthesize data, train, evaluate, infer, annotate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Kv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with exact point labels.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        train: usize,
        #[arg(long, default_value_t = 8)]
        val: usize,
        #[arg(long, default_value_t = 16)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        #[arg(long, default_value_t = 10)]
        max_count: usize,
        /// 0 is high contrast, 1 matches the surroundings.
        #[arg(long, default_value_t = 0.5)]
        indiscernibility: f64,
    },
    /// Train a model on the train split, selecting on val.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Flat TOML file with the same keys as the flags below.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Loss log CSV; defaults to loss.csv in the checkpoint directory.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Count errors of a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, value_enum, default_value_t = Format::Kv)]
        format: Format,
    },
    /// Predict points for one image and print its count.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Prediction JSON to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-image count statistics of a dataset.
    Stats {
        #[arg(long)]
        data: PathBuf,
        /// Restrict to one split of the manifest.
        #[arg(long)]
        split: Option<String>,
    },
    /// Serve the annotation API and UI.
    Serve {
        #[arg(long)]
        data: PathBuf,
        /// Overrides the IOC_PORT environment variable.
        #[arg(long)]
        port: Option<u16>,
        /// Directory of built UI assets.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth {
            out,
            train,
            val,
            test,
            seed,
            width,
            height,
            min_count,
            max_count,
            indiscernibility,
        } => {
            let template = SplitTemplate {
                width,
                height,
                min_count,
                max_count,
                indiscernibility,
                ..SplitTemplate::desk()
            };
            commands::synth(&template, SplitSizes { train, val, test }, seed, &out)
        }
        Command::Train {
            data,
            config,
            log,
            overrides,
        } => {
            let base = match config {
                Some(p) => TrainOverrides::from_file(&p)?,
                None => TrainOverrides::default(),
            };
            let mut merged = base.layered(overrides);
            if merged.checkpoint_dir.is_none() {
                merged.checkpoint_dir = Some(PathBuf::from("checkpoints"));
            }
            commands::train(merged.resolve()?, &data, log).map(|_| ())
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            threshold,
            format,
        } => {
            let report = commands::eval(&checkpoint, &data, &split, threshold)?;
            match format {
                Format::Kv => print!("{}", report.to_kv()),
                Format::Json => println!("{}", report.to_json()),
            }
            Ok(())
        }
        Command::Infer {
            checkpoint,
            image,
            threshold,
            out,
        } => {
            let count = commands::infer(&checkpoint, &image, threshold, &out)?;
            println!("count={count}");
            Ok(())
        }
        Command::Stats { data, split } => {
            commands::print_stats(&commands::stats(&data, split.as_deref())?);
            Ok(())
        }
        Command::Serve { data, port, ui } => {
            let layout = DatasetLayout::new(&data);
            if !layout.images_dir().is_dir() {
                anyhow::bail!("{} has no images/ directory", data.display());
            }
            let port = serve::resolve_port(port, std::env::var(serve::PORT_ENV).ok().as_deref())?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve::run(serve::AppState::new(layout, ui), port))
        }
    }
}
