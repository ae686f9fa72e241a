//! Parameter storage and the layers the network is assembled from.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::dim(
                "param_set",
                format!("{} expects {:?}, got {:?}", self.names[id.0], self.values[id.0].shape(), value.shape()),
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }
}

/// One forward pass: a fresh graph plus lazily bound parameters.
pub struct Session<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a> Session<'a> {
    /// With `trainable = false` parameters enter the graph as constants.
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            trainable,
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = if self.trainable {
            self.graph.parameter(value)
        } else {
            self.graph.constant(value)
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.graph.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    /// Gradient per parameter, `None` for parameters this pass never touched.
    pub fn param_grads(&self) -> Vec<Option<Tensor>> {
        self.bound
            .iter()
            .map(|b| b.and_then(|v| self.graph.grad(v).cloned()))
            .collect()
    }
}

fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Self {
            weight: store.add(format!("{name}.weight"), uniform(&[input, output], bound, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[output])),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        let y = s.graph.matmul(x, w)?;
        s.graph.add_row(y, b)
    }
}

/// Odd-kernel convolution with bias over HWC maps.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kernel: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (6.0 / (kernel * kernel * cin) as f64).sqrt();
        Self {
            weight: store.add(format!("{name}.weight"), uniform(&[kernel, kernel, cin, cout], bound, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        let y = s.graph.conv2d(x, w, self.stride)?;
        let shape = s.value(y).shape().to_vec();
        let flat = s.graph.reshape(y, &[shape[0] * shape[1], shape[2]])?;
        let biased = s.graph.add_row(flat, b)?;
        s.graph.reshape(biased, &shape)
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        let n = s.graph.layer_norm_rows(x, LAYER_NORM_EPS)?;
        let scaled = s.graph.mul_row(n, g)?;
        s.graph.add_row(scaled, b)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("{dim} channels do not split into {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng),
            heads,
            dim,
        })
    }

    pub fn forward(&self, s: &mut Session, query: Var, key: Var, value: Var) -> Result<Var> {
        let q = self.q.forward(s, query)?;
        let k = self.k.forward(s, key)?;
        let v = self.v.forward(s, value)?;
        let width = self.dim / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = s.graph.slice_cols(q, h * width, width)?;
            let kh = s.graph.slice_cols(k, h * width, width)?;
            let vh = s.graph.slice_cols(v, h * width, width)?;
            outs.push(s.graph.attention(qh, kh, vh)?);
        }
        let merged = if outs.len() == 1 { outs[0] } else { s.graph.concat_cols(&outs)? };
        self.out.forward(s, merged)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.up.forward(s, x)?;
        let h = s.graph.relu(h)?;
        self.down.forward(s, h)
    }
}

/// Post-norm encoder layer: self-attention then feed-forward, each wrapped in
/// a residual connection followed by layer normalization.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ffn: FeedForward,
    norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, 2 * dim, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let a = self.attn.forward(s, x, x, x)?;
        let x = s.graph.add(x, a)?;
        let x = self.norm1.forward(s, x)?;
        let f = self.ffn.forward(s, x)?;
        let x = s.graph.add(x, f)?;
        self.norm2.forward(s, x)
    }
}

/// Post-norm decoder layer: query self-attention, cross-attention into the
/// encoder memory, then feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    ffn: FeedForward,
    norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), dim, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), dim, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, 2 * dim, rng),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), dim),
        })
    }

    /// `keys` carries position information; `memory` supplies the values.
    pub fn forward(&self, s: &mut Session, tgt: Var, keys: Var, memory: Var) -> Result<Var> {
        let a = self.self_attn.forward(s, tgt, tgt, tgt)?;
        let x = s.graph.add(tgt, a)?;
        let x = self.norm1.forward(s, x)?;
        let c = self.cross_attn.forward(s, x, keys, memory)?;
        let x = s.graph.add(x, c)?;
        let x = self.norm2.forward(s, x)?;
        let f = self.ffn.forward(s, x)?;
        let x = s.graph.add(x, f)?;
        self.norm3.forward(s, x)
    }
}
