//! The counting network: backbone, density branch, transformer encoder
//! (density-enhanced or plain) and the query decoder with score/point heads.

mod branches;
mod config;
mod position;

pub use branches::{Backbone, DensityBranch, EncoderOutput, QueryDecoder, TransformerEncoder};
pub use config::{ModelConfig, Variant};
pub use position::positional_embedding;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Session};
use crate::points::ScoredPoint;
use crate::tensor::Tensor;

/// Graph handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// `[h×w]` density map, absent for the regression-only variant.
    pub density: Option<Var>,
    /// `[n×1]` foreground probabilities.
    pub scores: Option<Var>,
    /// `[n×2]` `(x, y)` in `[0,1]` relative to the input crop.
    pub points: Option<Var>,
    /// Transformer encoder layers applied during this pass.
    pub encoder_layers: usize,
}

/// Plain values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub density: Option<Tensor>,
    /// Scored points with coordinates in `[0,1]²` relative to the crop.
    pub predictions: Option<Vec<ScoredPoint>>,
}

#[derive(Clone, Debug)]
pub struct IocFormer {
    cfg: ModelConfig,
    params: ParamStore,
    backbone: Backbone,
    density: Option<DensityBranch>,
    encoder: Option<TransformerEncoder>,
    decoder: Option<QueryDecoder>,
}

impl IocFormer {
    /// Builds the submodules the variant needs, initialized from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let backbone = Backbone::new(&mut params, &cfg, &mut rng);
        let density = cfg
            .variant
            .has_density()
            .then(|| DensityBranch::new(&mut params, &cfg, &mut rng));
        let (encoder, decoder) = if cfg.variant.has_regression() {
            let dete = cfg.variant == Variant::DualDete;
            (
                Some(TransformerEncoder::new(&mut params, &cfg, dete, &mut rng)?),
                Some(QueryDecoder::new(&mut params, &cfg, &mut rng)?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            cfg,
            params,
            backbone,
            density,
            encoder,
            decoder,
        })
    }

    /// Rebuilds the architecture for `cfg` and installs stored parameter values.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(cfg, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::Config(format!(
                "architecture has {} parameter tensors, stored weights have {}",
                model.params.len(),
                params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let stored = params
                .find(&name)
                .ok_or_else(|| Error::Config(format!("stored weights lack {name}")))?;
            model.params.set(id, params.get(stored).clone())?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn density_branch(&self) -> Option<&DensityBranch> {
        self.density.as_ref()
    }

    pub fn encoder(&self) -> Option<&TransformerEncoder> {
        self.encoder.as_ref()
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn decoder(&self) -> Option<&QueryDecoder> {
        self.decoder.as_ref()
    }

    pub fn session(&self, trainable: bool) -> Session<'_> {
        Session::new(&self.params, trainable)
    }

    /// Records a full forward pass of `image[H×W×3]` into `s`.
    pub fn forward(&self, s: &mut Session, image: &Tensor) -> Result<ForwardVars> {
        let input = s.constant(image.clone());
        let features = self.backbone.forward(s, input)?;
        let fshape = s.value(features).shape().to_vec();
        let (h, w) = (fshape[0], fshape[1]);

        let (density_features, density) = match &self.density {
            Some(branch) => {
                let (fd, d) = branch.forward(s, features)?;
                (Some(fd), Some(d))
            }
            None => (None, None),
        };

        let (scores, points, encoder_layers) = match (&self.encoder, &self.decoder) {
            (Some(encoder), Some(decoder)) => {
                let pos = s.constant(positional_embedding(h, w, self.cfg.hidden)?);
                let encoded = match (encoder.is_density_enhanced(), density_features) {
                    (true, Some(fd)) => encoder.forward_dete(s, features, fd, pos)?,
                    (false, _) => encoder.forward_tte(s, features, pos)?,
                    (true, None) => return Err(Error::Config("density-enhanced encoder without a density branch".into())),
                };
                let (scores, points) = decoder.forward(s, encoded.features, pos)?;
                (Some(scores), Some(points), encoded.layers_applied)
            }
            _ => (None, None, 0),
        };

        Ok(ForwardVars {
            density,
            scores,
            points,
            encoder_layers,
        })
    }

    /// Inference-only forward pass returning plain values.
    pub fn predict(&self, image: &Tensor) -> Result<ModelOutput> {
        let mut s = self.session(false);
        let vars = self.forward(&mut s, image)?;
        Ok(Self::collect(&s, &vars))
    }

    pub fn collect(s: &Session, vars: &ForwardVars) -> ModelOutput {
        let density = vars.density.map(|d| s.value(d).clone());
        let predictions = match (vars.scores, vars.points) {
            (Some(sc), Some(pt)) => {
                let (sc, pt) = (s.value(sc).data(), s.value(pt).data());
                Some(
                    sc.iter()
                        .zip(pt.chunks(2))
                        .map(|(&score, xy)| ScoredPoint::new(xy[0], xy[1], score))
                        .collect(),
                )
            }
            _ => None,
        };
        ModelOutput { density, predictions }
    }
}
