use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use iocount::checkpoint;
use iocount::dataset::{
    dataset_stats, read_image, write_predictions, DatasetLayout, DatasetStats, PredictionDoc,
};
use iocount::infer::{evaluate_images, infer_image};
use iocount::metrics::CountReport;
use iocount::synth::{generate_split, SplitSizes, SplitTemplate};
use iocount::train::{TrainConfig, TrainSummary, Trainer};

pub fn synth(template: &SplitTemplate, sizes: SplitSizes, seed: u64, out: &Path) -> Result<()> {
    let m = generate_split(template, sizes, seed, out)?;
    println!(
        "wrote {} images to {} (train {}, val {}, test {})",
        m.all().count(),
        out.display(),
        m.train.len(),
        m.val.len(),
        m.test.len()
    );
    Ok(())
}

/// Trains on `train`, validating on `val`; the loss log lands beside the checkpoints.
pub fn train(cfg: TrainConfig, data: &Path, log_path: Option<PathBuf>) -> Result<TrainSummary> {
    let layout = DatasetLayout::new(data);
    let train = layout.load_split("train")?;
    let val = layout.load_split("val")?;
    let log_path = log_path
        .or_else(|| cfg.checkpoint_dir.as_ref().map(|d| d.join("loss.csv")))
        .unwrap_or_else(|| PathBuf::from("loss.csv"));
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut trainer = Trainer::new(cfg)?;
    let summary = trainer.run(&train, Some(&val), &mut log)?;
    log.flush()?;
    println!("steps={}", summary.steps);
    println!("final_total_loss={}", summary.last.total);
    if let Some(b) = &summary.best {
        println!("best_val_mae={} at step {}", b.mae, b.step);
    }
    println!("loss_log={}", log_path.display());
    Ok(summary)
}

pub fn eval(ckpt: &Path, data: &Path, split: &str, threshold: f64) -> Result<CountReport> {
    let (model, _) = checkpoint::load(ckpt)?;
    let items = DatasetLayout::new(data).load_split(split)?;
    let (report, _) = evaluate_images(&model, &items, threshold)?;
    Ok(report)
}

/// Writes predictions for one image and returns its count.
pub fn infer(ckpt: &Path, image: &Path, threshold: f64, out: &Path) -> Result<f64> {
    let (model, _) = checkpoint::load(ckpt)?;
    let tensor = read_image(image)?;
    let pred = infer_image(&model, &tensor, threshold)?;
    let name = image
        .file_name()
        .and_then(|n| n.to_str())
        .with_context(|| format!("{} has no file name", image.display()))?;
    let doc = PredictionDoc::from_scored(name, tensor.shape()[1] as u32, tensor.shape()[0] as u32, &pred.points);
    write_predictions(&doc, out)?;
    Ok(pred.count)
}

/// Statistics over one split, or over every annotated image.
pub fn stats(data: &Path, split: Option<&str>) -> Result<DatasetStats> {
    let layout = DatasetLayout::new(data);
    let files: Vec<String> = match split {
        Some(s) => layout.manifest()?.split(s)?.to_vec(),
        None => layout.image_files()?,
    };
    let mut docs = Vec::with_capacity(files.len());
    for f in &files {
        if let Some(d) = layout.annotation(f)? {
            docs.push(d);
        } else if split.is_some() {
            anyhow::bail!("{f} has no annotation file");
        }
    }
    Ok(dataset_stats(&docs)?)
}

pub fn print_stats(s: &DatasetStats) {
    println!("images={}", s.images);
    println!("total={}", s.total);
    println!("min={}", s.min);
    println!("avg={}", s.avg);
    println!("max={}", s.max);
    println!("difficult={}", s.difficult);
    for (label, n) in iocount::metrics::COUNT_RANGE_LABELS.iter().zip(s.histogram) {
        println!("histogram[{label}]={n}");
    }
}
