//! Optimization loop: sampling, per-image losses, AdamW steps, loss log and
//! best-on-validation checkpointing.

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::checkpoint;
use crate::dataset::{augment, extract_tile, LabeledImage};
use crate::error::{Error, Result};
use crate::infer::evaluate_images;
use crate::loss::{classification_loss, density_loss, localization_loss, total_loss};
use crate::matching::{match_predictions, Assignment, MatchWeights};
use crate::metrics::DEFAULT_THRESHOLD;
use crate::model::{IocFormer, ModelConfig, Variant};
use crate::nn::Session;
use crate::optim::{AdamW, AdamWConfig};
use crate::points::{Point, ScoredPoint};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Budget {
    Steps(usize),
    /// Passes over the training split, `ceil(len / batch)` steps each.
    Epochs(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub budget: Budget,
    /// Matching cost weights and the density-loss weight λ.
    pub matching: MatchWeights,
    pub seed: u64,
    /// Random resize, flip and crop; without it images are only cropped.
    pub augment: bool,
    /// Validation cadence in steps; 0 validates once at the end.
    pub eval_every: usize,
    pub threshold: f64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn full() -> Self {
        Self {
            model: ModelConfig::full(),
            lr: 1e-5,
            weight_decay: 5e-4,
            batch_size: 8,
            budget: Budget::Epochs(1500),
            matching: MatchWeights::default(),
            seed: 0,
            augment: true,
            eval_every: 0,
            threshold: DEFAULT_THRESHOLD,
            checkpoint_dir: None,
        }
    }

    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            lr: 1e-4,
            batch_size: 4,
            budget: Budget::Steps(2000),
            eval_every: 200,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.matching.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0,1]", self.threshold)));
        }
        Ok(())
    }

    pub fn total_steps(&self, train_len: usize) -> usize {
        match self.budget {
            Budget::Steps(n) => n,
            Budget::Epochs(e) => e * train_len.div_ceil(self.batch_size),
        }
    }
}

/// One training crop with labels in crop pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub points: Vec<Point>,
    /// Where the crop came from, for error messages.
    pub origin: String,
}

impl Sample {
    /// Whole image as a sample; it must already be crop-sized.
    pub fn whole(item: &LabeledImage) -> Self {
        Self {
            image: item.image.clone(),
            points: item.doc.centers(),
            origin: format!("{} (whole image)", item.doc.image),
        }
    }
}

/// Per-term loss values; absent terms are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub density: Option<f64>,
    pub classification: Option<f64>,
    pub localization: Option<f64>,
    pub total: f64,
}

impl LossTerms {
    pub const CSV_HEADER: &'static str = "step,L_D,L_c,L_l,total";

    pub fn csv_row(&self, step: usize) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{step},{},{},{},{}",
            f(self.density),
            f(self.classification),
            f(self.localization),
            self.total
        )
    }

    fn accumulate(&mut self, other: &LossTerms, w: f64) {
        let add = |a: &mut Option<f64>, b: Option<f64>| {
            if let Some(b) = b {
                *a = Some(a.unwrap_or(0.0) + w * b);
            }
        };
        add(&mut self.density, other.density);
        add(&mut self.classification, other.classification);
        add(&mut self.localization, other.localization);
        self.total += w * other.total;
    }
}

pub struct LossVars {
    pub density: Option<Var>,
    pub classification: Option<Var>,
    pub localization: Option<Var>,
    pub total: Var,
}

impl LossVars {
    pub fn values(&self, s: &Session) -> LossTerms {
        let v = |x: Option<Var>| x.map(|x| s.value(x).item().expect("scalar loss"));
        LossTerms {
            density: v(self.density),
            classification: v(self.classification),
            localization: v(self.localization),
            total: s.value(self.total).item().expect("scalar loss"),
        }
    }
}

/// Records the forward pass and every loss term of one sample. The
/// density-only variant trains on `L_D` alone; the others use
/// `λ·L_D + L_c + L_l`.
pub fn sample_loss(model: &IocFormer, s: &mut Session, sample: &Sample, weights: &MatchWeights) -> Result<LossVars> {
    let cfg = model.config();
    let vars = model.forward(s, &sample.image)?;
    let k = sample.points.len();
    let g = &mut s.graph;

    let density = vars.density.map(|d| density_loss(g, d, k as f64)).transpose()?;

    let (classification, localization) = match (vars.scores, vars.points) {
        (Some(scores), Some(points)) => {
            if k >= cfg.queries {
                return Err(Error::Config(format!(
                    "{} holds {k} objects but the model has only {} queries; increase queries above {k}",
                    sample.origin, cfg.queries
                )));
            }
            let crop = cfg.crop as f64;
            let gts: Vec<Point> = sample.points.iter().map(|p| Point::new(p.x / crop, p.y / crop)).collect();
            let preds: Vec<ScoredPoint> = g
                .value(scores)
                .data()
                .iter()
                .zip(g.value(points).data().chunks(2))
                .map(|(&sc, xy)| ScoredPoint::new(xy[0], xy[1], sc))
                .collect();
            let asg = if gts.is_empty() {
                Assignment::empty(preds.len())
            } else {
                match_predictions(&preds, &gts, weights)?
            };
            (
                Some(classification_loss(g, scores, &asg)?),
                Some(localization_loss(g, points, &gts, &asg)?),
            )
        }
        _ => (None, None),
    };

    let total = if cfg.variant == Variant::DensityOnly {
        density.ok_or_else(|| Error::Config("density-only model without a density map".into()))?
    } else {
        total_loss(g, density, classification, localization, weights.lambda)?
    };
    Ok(LossVars {
        density,
        classification,
        localization,
        total,
    })
}

/// Mean loss terms of `model` over fixed samples, without gradients.
pub fn mean_loss(model: &IocFormer, samples: &[Sample], weights: &MatchWeights) -> Result<LossTerms> {
    if samples.is_empty() {
        return Err(Error::Usage("mean_loss over no samples".into()));
    }
    let mut acc = LossTerms::default();
    for sample in samples {
        let mut s = model.session(false);
        let vars = sample_loss(model, &mut s, sample, weights)?;
        acc.accumulate(&vars.values(&s), 1.0 / samples.len() as f64);
    }
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValRecord {
    pub step: usize,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub last: LossTerms,
    pub validations: Vec<ValRecord>,
    pub best: Option<ValRecord>,
}

pub struct Trainer {
    cfg: TrainConfig,
    model: IocFormer,
    opt: AdamW,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl Trainer {
    /// Fresh model initialized from the config seed.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = IocFormer::new(cfg.model.clone(), cfg.seed)?;
        Self::with_model(cfg, model)
    }

    pub fn with_model(cfg: TrainConfig, model: IocFormer) -> Result<Self> {
        cfg.validate()?;
        if model.config() != &cfg.model {
            return Err(Error::Config("model architecture differs from the training config".into()));
        }
        let opt = AdamW::new(AdamWConfig::new(cfg.lr, cfg.weight_decay), model.params())?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
        Ok(Self {
            cfg,
            model,
            opt,
            rng,
            order: Vec::new(),
            cursor: 0,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &IocFormer {
        &self.model
    }

    pub fn into_model(self) -> IocFormer {
        self.model
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Fails early when a crop-sized training image already holds at least
    /// as many objects as there are queries.
    pub fn check_capacity(&self, images: &[LabeledImage]) -> Result<()> {
        let cfg = &self.cfg.model;
        if !cfg.variant.has_regression() {
            return Ok(());
        }
        for item in images {
            let fits = item.doc.width as usize <= cfg.crop && item.doc.height as usize <= cfg.crop;
            if fits && item.doc.count() >= cfg.queries {
                return Err(Error::Config(format!(
                    "{} (whole image) holds {} objects but the model has only {} queries; increase queries above {}",
                    item.doc.image,
                    item.doc.count(),
                    cfg.queries,
                    item.doc.count()
                )));
            }
        }
        Ok(())
    }

    /// Draws one crop from `item` using the trainer's random stream.
    pub fn draw_sample(&mut self, item: &LabeledImage) -> Result<Sample> {
        let crop = self.cfg.model.crop;
        let (h, w) = (item.image.shape()[0], item.image.shape()[1]);
        if self.cfg.augment {
            let seed = self.rng.gen();
            let (image, points, p) = augment(&item.image, &item.doc.centers(), crop, seed)?;
            return Ok(Sample {
                image,
                points,
                origin: format!(
                    "{} crop at ({},{}) of the {}×{} rescale{}",
                    item.doc.image,
                    p.crop_x,
                    p.crop_y,
                    p.scaled_width,
                    p.scaled_height,
                    if p.flip { ", flipped" } else { "" }
                ),
            });
        }
        if (w, h) == (crop, crop) {
            return Ok(Sample::whole(item));
        }
        if w < crop || h < crop {
            return Err(Error::Config(format!(
                "{} is {w}×{h}, smaller than the {crop}-pixel crop; enable augmentation to upscale",
                item.doc.image
            )));
        }
        let (x0, y0) = (self.rng.gen_range(0..=w - crop), self.rng.gen_range(0..=h - crop));
        let image = extract_tile(&item.image, (x0, y0), crop)?;
        let points = item
            .doc
            .centers()
            .into_iter()
            .filter(|p| p.x >= x0 as f64 && p.x < (x0 + crop) as f64 && p.y >= y0 as f64 && p.y < (y0 + crop) as f64)
            .map(|p| Point::new(p.x - x0 as f64, p.y - y0 as f64))
            .collect();
        Ok(Sample {
            image,
            points,
            origin: format!("{} crop at ({x0},{y0})", item.doc.image),
        })
    }

    fn next_indices(&mut self, n: usize, len: usize) -> Vec<usize> {
        (0..n)
            .map(|_| {
                if self.cursor >= self.order.len() {
                    self.order = (0..len).collect();
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }

    /// One optimizer step on the batch mean loss.
    pub fn train_step(&mut self, batch: &[Sample]) -> Result<LossTerms> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let w = 1.0 / batch.len() as f64;
        let (terms, grads) = {
            let mut s = self.model.session(true);
            let mut terms = LossTerms::default();
            let mut total: Option<Var> = None;
            for sample in batch {
                let vars = sample_loss(&self.model, &mut s, sample, &self.cfg.matching)?;
                terms.accumulate(&vars.values(&s), w);
                total = Some(match total {
                    Some(t) => s.graph.add(t, vars.total)?,
                    None => vars.total,
                });
            }
            let mean = s.graph.scale(total.expect("non-empty batch"), w)?;
            s.graph.backward(mean)?;
            (terms, s.param_grads())
        };
        self.opt.step(self.model.params_mut(), &grads)?;
        self.step += 1;
        Ok(terms)
    }

    /// Trains for the configured budget, writing one CSV row per step to `log`
    /// and validating on `val` when given.
    pub fn run(&mut self, train: &[LabeledImage], val: Option<&[LabeledImage]>, log: &mut dyn Write) -> Result<TrainSummary> {
        if train.is_empty() {
            return Err(Error::Usage("training split is empty".into()));
        }
        self.check_capacity(train)?;
        let io = |e| Error::io("loss log", e);
        writeln!(log, "{}", LossTerms::CSV_HEADER).map_err(io)?;
        let total = self.cfg.total_steps(train.len());
        let mut summary = TrainSummary {
            steps: 0,
            last: LossTerms::default(),
            validations: Vec::new(),
            best: None,
        };
        if let Some(dir) = &self.cfg.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        for _ in 0..total {
            let idx = self.next_indices(self.cfg.batch_size, train.len());
            let batch = idx.iter().map(|&i| self.draw_sample(&train[i])).collect::<Result<Vec<_>>>()?;
            summary.last = self.train_step(&batch)?;
            writeln!(log, "{}", summary.last.csv_row(self.step)).map_err(io)?;
            let due = self.step == total || (self.cfg.eval_every > 0 && self.step % self.cfg.eval_every == 0);
            if due {
                self.checkpoint(val, &mut summary)?;
            }
        }
        summary.steps = self.step;
        Ok(summary)
    }

    fn checkpoint(&self, val: Option<&[LabeledImage]>, summary: &mut TrainSummary) -> Result<()> {
        let mae = match val {
            Some(v) if !v.is_empty() => Some(evaluate_images(&self.model, v, self.cfg.threshold)?.0.mae),
            _ => None,
        };
        let improved = match (mae, &summary.best) {
            (Some(m), Some(b)) => m < b.mae,
            (Some(_), None) => true,
            _ => false,
        };
        if let Some(m) = mae {
            let rec = ValRecord { step: self.step, mae: m };
            summary.validations.push(rec.clone());
            if improved {
                summary.best = Some(rec);
            }
        }
        if let Some(dir) = &self.cfg.checkpoint_dir {
            checkpoint::save(&self.model, self.step as u64, mae, &dir.join("last.ckpt"))?;
            if improved {
                checkpoint::save(&self.model, self.step as u64, mae, &dir.join("best.ckpt"))?;
            }
        }
        Ok(())
    }
}
