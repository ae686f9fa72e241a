//! Backbone, density branch, transformer encoders and the query decoder.

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv, DecoderLayer, EncoderLayer, Linear, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

use super::config::ModelConfig;

/// Plain convolutional backbone: `log2(downsample)` stride-2 blocks followed
/// by stride-1 blocks, at least four blocks in total, each conv + ReLU.
#[derive(Clone, Debug)]
pub struct Backbone {
    blocks: Vec<Conv>,
    downsample: usize,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let stages = cfg.downsample.trailing_zeros() as usize;
        let total = stages.max(3) + 1;
        let c1 = cfg.encoder_channels;
        let mut blocks = Vec::with_capacity(total);
        let mut cin = 3;
        for i in 0..total {
            let (cout, stride) = if i < stages {
                ((c1 >> (stages - 1 - i)).max(8).min(c1), 2)
            } else {
                (c1, 1)
            };
            blocks.push(Conv::new(store, &format!("backbone.{i}"), 3, cin, cout, stride, rng));
            cin = cout;
        }
        Self {
            blocks,
            downsample: cfg.downsample,
        }
    }

    /// `image[H×W×3]` in `[0,1]` to features `[H/ds × W/ds × c1]`.
    pub fn forward(&self, s: &mut Session, image: Var) -> Result<Var> {
        let shape = s.value(image).shape().to_vec();
        match shape[..] {
            [h, w, 3] if h % self.downsample == 0 && w % self.downsample == 0 => {}
            _ => {
                return Err(Error::dim(
                    "encode_image",
                    format!("image {shape:?} must be H×W×3 with sides divisible by {}", self.downsample),
                ))
            }
        }
        let mut x = s.graph.add_scalar(image, -0.5)?;
        for block in &self.blocks {
            x = block.forward(s, x)?;
            x = s.graph.relu(x)?;
        }
        Ok(x)
    }
}

/// Two 3×3 convolutions producing density-aware features, then a 1×1 ReLU
/// head producing the density map.
#[derive(Clone, Debug)]
pub struct DensityBranch {
    conv1: Conv,
    conv2: Conv,
    head: Conv,
}

impl DensityBranch {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (c1, c2) = (cfg.encoder_channels, cfg.density_channels);
        Self {
            conv1: Conv::new(store, "density.conv1", 3, c1, c2, 1, rng),
            conv2: Conv::new(store, "density.conv2", 3, c2, c2, 1, rng),
            head: Conv::new(store, "density.head", 1, c2, 1, 1, rng),
        }
    }

    pub fn head_params(&self) -> [ParamId; 2] {
        [self.head.weight, self.head.bias]
    }

    /// Returns `(F_d[h×w×c2], D[h×w])`.
    pub fn forward(&self, s: &mut Session, features: Var) -> Result<(Var, Var)> {
        let x = self.conv1.forward(s, features)?;
        let x = s.graph.relu(x)?;
        let x = self.conv2.forward(s, x)?;
        let fd = s.graph.relu(x)?;
        let d = self.head.forward(s, fd)?;
        let d = s.graph.relu(d)?;
        let shape = s.value(d).shape().to_vec();
        let d = s.graph.reshape(d, &shape[..2])?;
        Ok((fd, d))
    }
}

/// Conv → ReLU → conv refinement applied to density features between merges.
#[derive(Clone, Debug)]
struct ConvBlock {
    a: Conv,
    b: Conv,
}

impl ConvBlock {
    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.a.forward(s, x)?;
        let y = s.graph.relu(y)?;
        self.b.forward(s, y)
    }
}

/// Transformer encoder stack over flattened backbone features.
///
/// Built with density inputs it runs the density-enhanced form: density
/// features are merged before each of the `L` layers, refined by a chain of
/// `L-1` convolution blocks. Built without them it is the plain encoder.
#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    input_proj: Linear,
    density_proj: Option<Linear>,
    convs: Vec<ConvBlock>,
    layers: Vec<EncoderLayer>,
    hidden: usize,
}

/// Encoder result plus the number of transformer layers actually applied.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub features: Var,
    pub layers_applied: usize,
}

impl TransformerEncoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, density: bool, rng: &mut impl Rng) -> Result<Self> {
        let c = cfg.hidden;
        let input_proj = Linear::new(store, "encoder.input_proj", cfg.encoder_channels, c, rng);
        let (density_proj, convs) = if density {
            let proj = Linear::new(store, "encoder.density_proj", cfg.density_channels, c, rng);
            let convs = (1..cfg.layers)
                .map(|i| ConvBlock {
                    a: Conv::new(store, &format!("encoder.convs.{i}.a"), 3, c, c, 1, rng),
                    b: Conv::new(store, &format!("encoder.convs.{i}.b"), 3, c, c, 1, rng),
                })
                .collect();
            (Some(proj), convs)
        } else {
            (None, Vec::new())
        };
        let layers = (0..cfg.layers)
            .map(|i| EncoderLayer::new(store, &format!("encoder.layers.{i}"), c, cfg.heads, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            input_proj,
            density_proj,
            convs,
            layers,
            hidden: c,
        })
    }

    pub fn is_density_enhanced(&self) -> bool {
        self.density_proj.is_some()
    }

    /// Parameters that only exist on the density path (projection and conv chain).
    pub fn density_params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if let Some(p) = &self.density_proj {
            ids.extend([p.weight, p.bias]);
        }
        for block in &self.convs {
            ids.extend([block.a.weight, block.a.bias, block.b.weight, block.b.bias]);
        }
        ids
    }

    fn project(&self, s: &mut Session, features: Var) -> Result<(Var, usize, usize)> {
        let shape = s.value(features).shape().to_vec();
        let [h, w, c1] = shape[..] else {
            return Err(Error::dim("encoder", format!("expected h×w×c features, got {shape:?}")));
        };
        let flat = s.graph.reshape(features, &[h * w, c1])?;
        Ok((self.input_proj.forward(s, flat)?, h, w))
    }

    /// Density-enhanced forward pass over `F[h×w×c1]` and `F_d[h×w×c2]`.
    pub fn forward_dete(&self, s: &mut Session, features: Var, density: Var, pos: Var) -> Result<EncoderOutput> {
        let Some(density_proj) = &self.density_proj else {
            return Err(Error::Usage("encoder was built without density inputs".into()));
        };
        let fshape = s.value(features).shape().to_vec();
        let dshape = s.value(density).shape().to_vec();
        if fshape.len() != 3 || dshape.len() != 3 || fshape[..2] != dshape[..2] {
            return Err(Error::dim(
                "dete_forward",
                format!("features {fshape:?} and density features {dshape:?} must share spatial extents"),
            ));
        }
        let (projected, h, w) = self.project(s, features)?;
        let dflat = s.graph.reshape(density, &[h * w, dshape[2]])?;
        let dproj = density_proj.forward(s, dflat)?;

        let x = s.graph.add(projected, dproj)?;
        let x = s.graph.add(x, pos)?;
        let mut x = self.layers[0].forward(s, x)?;
        let mut dmap = s.graph.reshape(dproj, &[h, w, self.hidden])?;
        for (layer, block) in self.layers[1..].iter().zip(&self.convs) {
            dmap = block.forward(s, dmap)?;
            let merged = s.graph.reshape(dmap, &[h * w, self.hidden])?;
            let input = s.graph.add(x, merged)?;
            x = layer.forward(s, input)?;
        }
        Ok(EncoderOutput {
            features: x,
            layers_applied: self.layers.len(),
        })
    }

    /// Plain forward pass over `F[h×w×c1]` only.
    pub fn forward_tte(&self, s: &mut Session, features: Var, pos: Var) -> Result<EncoderOutput> {
        let (projected, _, _) = self.project(s, features)?;
        let mut x = s.graph.add(projected, pos)?;
        for layer in &self.layers {
            x = layer.forward(s, x)?;
        }
        Ok(EncoderOutput {
            features: x,
            layers_applied: self.layers.len(),
        })
    }
}

/// Learned queries decoded against the encoder memory into scores and points.
#[derive(Clone, Debug)]
pub struct QueryDecoder {
    queries: ParamId,
    layers: Vec<DecoderLayer>,
    class_head: Linear,
    point_hidden: Linear,
    point_out: Linear,
}

impl QueryDecoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = cfg.hidden;
        let queries = store.add(
            "decoder.queries",
            Tensor::from_fn(&[cfg.queries, c], |_| rng.gen_range(-1.0..1.0)),
        );
        let layers = (0..cfg.decoder_layers)
            .map(|i| DecoderLayer::new(store, &format!("decoder.layers.{i}"), c, cfg.heads, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            queries,
            layers,
            class_head: Linear::new(store, "decoder.class_head", c, 1, rng),
            point_hidden: Linear::new(store, "decoder.point_head.0", c, c, rng),
            point_out: Linear::new(store, "decoder.point_head.1", c, 2, rng),
        })
    }

    /// Returns `(scores[n×1], points[n×2])`, both squashed into `[0,1]`.
    pub fn forward(&self, s: &mut Session, memory: Var, pos: Var) -> Result<(Var, Var)> {
        let keys = s.graph.add(memory, pos)?;
        let mut x = s.param(self.queries);
        for layer in &self.layers {
            x = layer.forward(s, x, keys, memory)?;
        }
        let logits = self.class_head.forward(s, x)?;
        let scores = s.graph.sigmoid(logits)?;
        let h = self.point_hidden.forward(s, x)?;
        let h = s.graph.relu(h)?;
        let coords = self.point_out.forward(s, h)?;
        let points = s.graph.sigmoid(coords)?;
        Ok((scores, points))
    }
}
