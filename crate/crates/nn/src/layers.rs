//! Transformer building blocks. Layers only hold parameter ids; values live
//! in a [`ParamStore`] passed to every forward call.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::graph::{Graph, Mask, Var};
use crate::params::{ParamBuilder, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Fully connected layer `x · W + b` with `W: in × out`.
#[derive(Clone, Debug)]
pub struct Dense {
    w: ParamId,
    b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let mut s = pb.scope(name);
        let w = s.uniform_fan_in("w", in_dim, out_dim);
        let b = s.constant("b", 1, out_dim, 0.0);
        Self { w, b, in_dim, out_dim }
    }

    /// He-uniform weights, for layers followed by a ReLU.
    pub fn relu<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let mut s = pb.scope(name);
        let w = s.uniform("w", in_dim, out_dim, (6.0 / in_dim as f64).sqrt());
        let b = s.constant("b", 1, out_dim, 0.0);
        Self { w, b, in_dim, out_dim }
    }

    /// All-zero weights and bias; the layer initially outputs zeros.
    pub fn zeroed<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let mut s = pb.scope(name);
        let w = s.constant("w", in_dim, out_dim, 0.0);
        let b = s.constant("b", 1, out_dim, 0.0);
        Self { w, b, in_dim, out_dim }
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, dim: usize) -> Self {
        let mut s = pb.scope(name);
        Self {
            gamma: s.constant("gamma", 1, dim, 1.0),
            beta: s.constant("beta", 1, dim, 0.0),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(p, self.gamma);
        let beta = g.param(p, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Token embedding table.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, vocab: usize, dim: usize) -> Self {
        let table = pb
            .scope(name)
            .uniform("table", vocab, dim, 1.0 / (dim as f64).sqrt());
        Self { table, vocab, dim }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, ids: &[usize]) -> Result<Var> {
        let t = g.param(p, self.table);
        g.gather_rows(t, ids)
    }
}

/// `[T × D]` sinusoidal table: column `2i` holds `sin(t · 10000^(-2i/D))`
/// and column `2i + 1` the matching cosine.
pub fn sinusoidal_positions<T: Real>(len: usize, dim: usize) -> Tensor<T> {
    sinusoidal_positions_from(0, len, dim)
}

/// Rows `start .. start + len` of the sinusoidal table.
pub fn sinusoidal_positions_from<T: Real>(start: usize, len: usize, dim: usize) -> Tensor<T> {
    Tensor::from_fn(len, dim, |r, c| {
        let t = (start + r) as f64;
        let i = (c / 2) as f64;
        let angle = t * 10000f64.powf(-2.0 * i / dim as f64);
        T::from_f64_lossy(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Concatenates sinusoidal positions to the input and projects back down.
#[derive(Clone, Debug)]
pub struct PositionEncoder {
    proj: Dense,
    pos_dim: usize,
}

impl PositionEncoder {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            proj: Dense::new(&mut pb.scope(name), "proj", 2 * in_dim, out_dim),
            pos_dim: in_dim,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        self.forward_from(g, p, x, 0)
    }

    /// Same as `forward` for a chunk whose first row sits at position `start`.
    pub fn forward_from<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var, start: usize) -> Result<Var> {
        let rows = g.shape(x)[0];
        let pos = g.constant(sinusoidal_positions_from(start, rows, self.pos_dim));
        let cat = g.concat_cols(&[x, pos])?;
        self.proj.forward(g, p, cat)
    }
}

/// Two ReLU dense layers applied per row to sparse pianoroll frames.
#[derive(Clone, Debug)]
pub struct EmbeddingModule {
    hidden: Dense,
    out: Dense,
}

impl EmbeddingModule {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        let mut s = pb.scope(name);
        Self {
            hidden: Dense::relu(&mut s, "hidden", in_dim, hidden),
            out: Dense::relu(&mut s, "out", hidden, out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.hidden.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out.out_dim
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, p, x)?;
        let h = g.relu(h);
        let y = self.out.forward(g, p, h)?;
        Ok(g.relu(y))
    }
}

/// Head layout for attention. When the model dimension does not split
/// evenly, each head gets `ceil(model_dim / heads)` dims and the output
/// projection maps `heads · head_dim` back to `model_dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadGeometry {
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl HeadGeometry {
    pub fn new(model_dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || model_dim == 0 || heads > model_dim {
            return Err(NnError::BadHeadCount { model_dim, heads });
        }
        Ok(Self {
            model_dim,
            heads,
            head_dim: model_dim.div_ceil(heads),
        })
    }

    pub fn inner_dim(&self) -> usize {
        self.heads * self.head_dim
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    geom: HeadGeometry,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, geom: HeadGeometry) -> Self {
        let mut s = pb.scope(name);
        let (d, inner) = (geom.model_dim, geom.inner_dim());
        Self {
            q: Dense::new(&mut s, "q", d, inner),
            k: Dense::new(&mut s, "k", d, inner),
            v: Dense::new(&mut s, "v", d, inner),
            o: Dense::new(&mut s, "o", inner, d),
            geom,
        }
    }

    pub fn geometry(&self) -> HeadGeometry {
        self.geom
    }

    pub fn output(&self) -> &Dense {
        &self.o
    }

    /// Projects a key/value source once so it can be reused across calls.
    pub fn project_kv<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, kv: Var) -> Result<(Var, Var)> {
        Ok((self.k.forward(g, p, kv)?, self.v.forward(g, p, kv)?))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, query: Var, kv: Var, mask: Mask) -> Result<Var> {
        let (k, v) = self.project_kv(g, p, kv)?;
        self.attend(g, p, query, k, v, mask)
    }

    /// Attention of `query` rows against already projected keys and values.
    pub fn attend<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        query: Var,
        k: Var,
        v: Var,
        mask: Mask,
    ) -> Result<Var> {
        let q = self.q.forward(g, p, query)?;
        let hd = self.geom.head_dim;
        let scale = T::one() / T::from_usize(hd).expect("usize fits").sqrt();
        let mut heads = Vec::with_capacity(self.geom.heads);
        for h in 0..self.geom.heads {
            let qh = g.slice_cols(q, h * hd, hd)?;
            let kh = g.slice_cols(k, h * hd, hd)?;
            let vh = g.slice_cols(v, h * hd, hd)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax_rows(scores, mask);
            heads.push(g.matmul(weights, vh)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        self.o.forward(g, p, cat)
    }
}

/// Position-wise `d → hidden → d` ReLU network.
#[derive(Clone, Debug)]
pub struct FeedForward {
    up: Dense,
    down: Dense,
}

impl FeedForward {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, dim: usize, hidden: usize) -> Self {
        let mut s = pb.scope(name);
        Self {
            up: Dense::new(&mut s, "up", dim, hidden),
            down: Dense::new(&mut s, "down", hidden, dim),
        }
    }

    pub fn layers(&self) -> [&Dense; 2] {
        [&self.up, &self.down]
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, p, x)?;
        let h = g.relu(h);
        self.down.forward(g, p, h)
    }
}

/// Post-norm encoder block: `LN(x + SelfAttn(x))` then `LN(y + FF(y))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attn: MultiHeadAttention,
    ln1: LayerNorm,
    pub ff: FeedForward,
    ln2: LayerNorm,
}

impl EncoderBlock {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, geom: HeadGeometry, ff_hidden: usize) -> Self {
        let mut s = pb.scope(name);
        Self {
            attn: MultiHeadAttention::new(&mut s, "attn", geom),
            ln1: LayerNorm::new(&mut s, "ln1", geom.model_dim),
            ff: FeedForward::new(&mut s, "ff", geom.model_dim, ff_hidden),
            ln2: LayerNorm::new(&mut s, "ln2", geom.model_dim),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let a = self.attn.forward(g, p, x, x, Mask::None)?;
        let x = g.add(x, a)?;
        let x = self.ln1.forward(g, p, x)?;
        let f = self.ff.forward(g, p, x)?;
        let x = g.add(x, f)?;
        self.ln2.forward(g, p, x)
    }
}

/// Post-norm decoder block with causal self-attention and cross-attention.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub self_attn: MultiHeadAttention,
    ln1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    ln2: LayerNorm,
    pub ff: FeedForward,
    ln3: LayerNorm,
}

/// Self-attention keys and values of the rows decoded so far.
#[derive(Clone, Debug)]
pub struct KvCache<T> {
    pub k: Arc<Tensor<T>>,
    pub v: Arc<Tensor<T>>,
}

impl<T: Real> KvCache<T> {
    pub fn new(inner_dim: usize) -> Self {
        Self {
            k: Arc::new(Tensor::zeros(0, inner_dim)),
            v: Arc::new(Tensor::zeros(0, inner_dim)),
        }
    }

    pub fn len(&self) -> usize {
        self.k.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.k.rows() == 0
    }
}

impl DecoderBlock {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, geom: HeadGeometry, ff_hidden: usize) -> Self {
        let mut s = pb.scope(name);
        Self {
            self_attn: MultiHeadAttention::new(&mut s, "self_attn", geom),
            ln1: LayerNorm::new(&mut s, "ln1", geom.model_dim),
            cross_attn: MultiHeadAttention::new(&mut s, "cross_attn", geom),
            ln2: LayerNorm::new(&mut s, "ln2", geom.model_dim),
            ff: FeedForward::new(&mut s, "ff", geom.model_dim, ff_hidden),
            ln3: LayerNorm::new(&mut s, "ln3", geom.model_dim),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var, memory: Var) -> Result<Var> {
        let a = self.self_attn.forward(g, p, x, x, Mask::Causal)?;
        let x = g.add(x, a)?;
        let x = self.ln1.forward(g, p, x)?;
        let c = self.cross_attn.forward(g, p, x, memory, Mask::None)?;
        self.finish(g, p, x, c)
    }

    /// Decodes rows appended after those already in `cache`. Row `i` of `x`
    /// may attend to every cached row and to rows `0..=i` of itself, which
    /// reproduces the causal full-sequence forward pass.
    pub fn forward_incremental<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x: Var,
        cache: &mut KvCache<T>,
        memory_kv: (Var, Var),
    ) -> Result<Var> {
        let (k_new, v_new) = self.self_attn.project_kv(g, p, x)?;
        let new_rows = g.shape(x)[0];
        Arc::make_mut(&mut cache.k).push_rows(g.value(k_new))?;
        Arc::make_mut(&mut cache.v).push_rows(g.value(v_new))?;
        let k = g.constant_shared(Arc::clone(&cache.k));
        let v = g.constant_shared(Arc::clone(&cache.v));
        let a = if new_rows == 1 {
            self.self_attn.attend(g, p, x, k, v, Mask::None)?
        } else if cache.len() == new_rows {
            self.self_attn.attend(g, p, x, k, v, Mask::Causal)?
        } else {
            // mixed prefix + multi-row chunk: decode row by row
            return Err(NnError::ShapeMismatch {
                op: "forward_incremental",
                left: vec![cache.len(), 0],
                right: vec![new_rows, 0],
            });
        };
        let x = g.add(x, a)?;
        let x = self.ln1.forward(g, p, x)?;
        let c = self.cross_attn.attend(g, p, x, memory_kv.0, memory_kv.1, Mask::None)?;
        self.finish(g, p, x, c)
    }

    fn finish<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var, cross: Var) -> Result<Var> {
        let x = g.add(x, cross)?;
        let x = self.ln2.forward(g, p, x)?;
        let f = self.ff.forward(g, p, x)?;
        let x = g.add(x, f)?;
        self.ln3.forward(g, p, x)
    }
}
