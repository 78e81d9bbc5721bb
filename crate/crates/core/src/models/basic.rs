//! Encoder-decoder transformer that writes drum tokens for an MA sample.

use std::sync::Arc;

use drumsmith_nn::layers::{DecoderBlock, Dense, Embedding, HeadGeometry, KvCache, PositionEncoder};
use drumsmith_nn::{Graph, ParamBuilder, ParamStore, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{Checkpointed, EncoderDims, SequenceEncoder};
use crate::error::{Error, Result};
use crate::pianoroll::MA_FEATURES;
use crate::tokenizer::{SHIFT, VOCAB_SIZE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasicDrumGenConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub vocab: usize,
    pub token_embed_dim: usize,
    pub embed_hidden: usize,
    pub embed_dim: usize,
    pub ff_hidden: usize,
    pub ma_features: usize,
}

impl Default for BasicDrumGenConfig {
    fn default() -> Self {
        Self {
            enc_layers: 2,
            dec_layers: 2,
            model_dim: 128,
            heads: 8,
            vocab: VOCAB_SIZE,
            token_embed_dim: 128,
            embed_hidden: 1024,
            embed_dim: 128,
            ff_hidden: 512,
            ma_features: MA_FEATURES,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BasicDrumGen {
    config: BasicDrumGenConfig,
    encoder: SequenceEncoder,
    tokens: Embedding,
    token_pos: PositionEncoder,
    decoder: Vec<DecoderBlock>,
    out: Dense,
}

/// Decoder state for token-by-token generation.
pub struct IncrementalState<T> {
    memory_kv: Vec<(Arc<Tensor<T>>, Arc<Tensor<T>>)>,
    caches: Vec<KvCache<T>>,
    position: usize,
}

impl<T> IncrementalState<T> {
    pub fn position(&self) -> usize {
        self.position
    }
}

impl Checkpointed for BasicDrumGen {
    type Config = BasicDrumGenConfig;
    const KIND: &'static str = "basic";

    fn build<T: Real>(config: &BasicDrumGenConfig, pb: &mut ParamBuilder<'_, T>) -> Result<Self> {
        let geom = HeadGeometry::new(config.model_dim, config.heads)?;
        let dims = EncoderDims {
            input: config.ma_features,
            embed_hidden: config.embed_hidden,
            embed_dim: config.embed_dim,
            model_dim: config.model_dim,
            heads: config.heads,
            layers: config.enc_layers,
            ff_hidden: config.ff_hidden,
        };
        Ok(Self {
            config: config.clone(),
            encoder: SequenceEncoder::new(pb, "encoder", dims, false)?,
            tokens: Embedding::new(pb, "tokens", config.vocab, config.token_embed_dim),
            token_pos: PositionEncoder::new(pb, "token_pos", config.token_embed_dim, config.model_dim),
            decoder: (0..config.dec_layers)
                .map(|i| DecoderBlock::new(pb, &format!("decoder{i}"), geom, config.ff_hidden))
                .collect(),
            out: Dense::zeroed(pb, "out", config.model_dim, config.vocab),
        })
    }

    fn config(&self) -> &BasicDrumGenConfig {
        &self.config
    }
}

impl BasicDrumGen {
    fn check_tokens(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&t| t >= self.config.vocab) {
            Some(&t) => Err(Error::TokenOutOfRange(t)),
            None => Ok(()),
        }
    }

    pub fn encode<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, ma: Var) -> Result<Var> {
        self.encoder.forward(g, p, ma)
    }

    /// Next-token logits `[L × vocab]` for decoder inputs `dec_in`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, ma: Var, dec_in: &[usize]) -> Result<Var> {
        self.check_tokens(dec_in)?;
        let memory = self.encode(g, p, ma)?;
        let e = self.tokens.forward(g, p, dec_in)?;
        let mut h = self.token_pos.forward(g, p, e)?;
        for block in &self.decoder {
            h = block.forward(g, p, h, memory)?;
        }
        Ok(self.out.forward(g, p, h)?)
    }

    /// Decoder inputs for teacher forcing: `SHIFT` followed by all but the
    /// last target token.
    pub fn shift_right(targets: &[usize]) -> Vec<usize> {
        std::iter::once(SHIFT as usize)
            .chain(targets.iter().copied().take(targets.len().saturating_sub(1)))
            .collect()
    }

    /// Mean next-token negative log-likelihood of `targets`.
    pub fn loss<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, ma: Var, targets: &[usize]) -> Result<Var> {
        self.check_tokens(targets)?;
        let logits = self.forward(g, p, ma, &Self::shift_right(targets))?;
        Ok(g.cross_entropy(logits, targets)?)
    }

    /// Encodes the MA once and prepares empty self-attention caches.
    pub fn start<T: Real>(&self, p: &ParamStore<T>, ma: &Tensor<T>) -> Result<IncrementalState<T>> {
        let mut g = Graph::inference();
        let x = g.constant(ma.clone());
        let memory = self.encode(&mut g, p, x)?;
        let mut memory_kv = Vec::with_capacity(self.decoder.len());
        for block in &self.decoder {
            let (k, v) = block.cross_attn.project_kv(&mut g, p, memory)?;
            memory_kv.push((Arc::new(g.value(k).clone()), Arc::new(g.value(v).clone())));
        }
        let inner = HeadGeometry::new(self.config.model_dim, self.config.heads)?.inner_dim();
        Ok(IncrementalState {
            memory_kv,
            caches: (0..self.decoder.len()).map(|_| KvCache::new(inner)).collect(),
            position: 0,
        })
    }

    /// Feeds one decoder input token and returns the logits for the next.
    pub fn step<T: Real>(&self, p: &ParamStore<T>, state: &mut IncrementalState<T>, token: usize) -> Result<Vec<T>> {
        self.check_tokens(&[token])?;
        let mut g = Graph::inference();
        let e = self.tokens.forward(&mut g, p, &[token])?;
        let mut h = self.token_pos.forward_from(&mut g, p, e, state.position)?;
        for ((block, cache), (k, v)) in self.decoder.iter().zip(&mut state.caches).zip(&state.memory_kv) {
            let kv = (g.constant_shared(Arc::clone(k)), g.constant_shared(Arc::clone(v)));
            h = block.forward_incremental(&mut g, p, h, cache, kv)?;
        }
        let logits = self.out.forward(&mut g, p, h)?;
        state.position += 1;
        Ok(g.value(logits).data().to_vec())
    }
}
