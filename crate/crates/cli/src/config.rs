//! Flat TOML training config. Keys left out keep the preset's value.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use iocount::model::Variant;
use iocount::train::{Budget, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    /// Starting point: "desk" or "full".
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Transformer encoder layers.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub encoder_channels: Option<usize>,
    #[arg(long)]
    pub density_channels: Option<usize>,
    #[arg(long)]
    pub decoder_layers: Option<usize>,
    #[arg(long)]
    pub downsample: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Optimizer steps; exclusive with `epochs`.
    #[arg(long, conflicts_with = "epochs")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Weight of the density counting loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub w_dist: Option<f64>,
    #[arg(long)]
    pub w_score: Option<f64>,
    #[arg(long)]
    pub w_knn: Option<f64>,
    /// Neighbors in the k-NN matching term.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub augment: Option<bool>,
    /// Validate every N steps; 0 validates only at the end.
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainOverrides {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// `other` wins wherever it sets a key.
    pub fn layered(self, other: Self) -> Self {
        macro_rules! pick {
            ($($f:ident),*) => { Self { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            preset, variant, layers, queries, hidden, heads, encoder_channels, density_channels, decoder_layers,
            downsample, crop, lr, weight_decay, batch_size, steps, epochs, lambda, w_dist, w_score, w_knn, k, seed,
            augment, eval_every, threshold, checkpoint_dir
        )
    }

    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match self.preset.as_deref().unwrap_or("desk") {
            "desk" => TrainConfig::desk(),
            "full" => TrainConfig::full(),
            other => bail!("unknown preset {other:?}; expected desk or full"),
        };
        macro_rules! set {
            ($($src:ident => $($dst:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$src.clone() { c.$($dst).+ = v; })*
            };
        }
        set!(
            variant => model.variant,
            layers => model.layers,
            queries => model.queries,
            hidden => model.hidden,
            heads => model.heads,
            encoder_channels => model.encoder_channels,
            density_channels => model.density_channels,
            decoder_layers => model.decoder_layers,
            downsample => model.downsample,
            crop => model.crop,
            lr => lr,
            weight_decay => weight_decay,
            batch_size => batch_size,
            lambda => matching.lambda,
            w_dist => matching.w_dist,
            w_score => matching.w_score,
            w_knn => matching.w_knn,
            k => matching.k,
            seed => seed,
            augment => augment,
            eval_every => eval_every,
            threshold => threshold,
        );
        if let Some(s) = self.steps {
            c.budget = Budget::Steps(s);
        }
        if let Some(e) = self.epochs {
            c.budget = Budget::Epochs(e);
        }
        if self.checkpoint_dir.is_some() {
            c.checkpoint_dir = self.checkpoint_dir.clone();
        }
        c.validate()?;
        Ok(c)
    }
}
