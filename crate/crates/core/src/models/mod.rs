//! The three networks and their training loops.

use std::path::Path;

use drumsmith_nn::checkpoint::{self, CheckpointMeta};
use drumsmith_nn::layers::{EmbeddingModule, EncoderBlock, HeadGeometry, PositionEncoder};
use drumsmith_nn::{Graph, ParamBuilder, ParamStore, Real, Var};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub mod basic;
pub mod infill;
pub mod locator;
pub mod train;

pub use basic::{BasicDrumGen, BasicDrumGenConfig, IncrementalState};
pub use infill::{DecoderVariant, Infill, InfillConfig};
pub use locator::{Locator, LocatorConfig};

/// Per-timestep embedding, sinusoidal position encoding and a stack of
/// encoder blocks. With `skip` set, the position-encoded embedding is added
/// to the stack output.
#[derive(Clone, Debug)]
pub struct SequenceEncoder {
    embed: EmbeddingModule,
    pos: PositionEncoder,
    blocks: Vec<EncoderBlock>,
    skip: bool,
}

/// Dimensions of a [`SequenceEncoder`].
#[derive(Clone, Copy, Debug)]
pub struct EncoderDims {
    pub input: usize,
    pub embed_hidden: usize,
    pub embed_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_hidden: usize,
}

impl SequenceEncoder {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, dims: EncoderDims, skip: bool) -> Result<Self> {
        let geom = HeadGeometry::new(dims.model_dim, dims.heads)?;
        let mut s = pb.scope(name);
        Ok(Self {
            embed: EmbeddingModule::new(&mut s, "embed", dims.input, dims.embed_hidden, dims.embed_dim),
            pos: PositionEncoder::new(&mut s, "pos", dims.embed_dim, dims.model_dim),
            blocks: (0..dims.layers)
                .map(|i| EncoderBlock::new(&mut s, &format!("block{i}"), geom, dims.ff_hidden))
                .collect(),
            skip,
        })
    }

    /// Embedding plus position encoding, before any attention.
    pub fn embed<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let e = self.embed.forward(g, p, x)?;
        Ok(self.pos.forward(g, p, e)?)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let e = self.embed(g, p, x)?;
        let mut h = e;
        for b in &self.blocks {
            h = b.forward(g, p, h)?;
        }
        if self.skip {
            h = g.add(h, e)?;
        }
        Ok(h)
    }
}

/// Throwaway RNG for rebuilding a layout whose values are then replaced by
/// checkpoint contents.
pub(crate) fn layout_rng() -> StdRng {
    StdRng::seed_from_u64(0)
}

/// A network that can be stored and rebuilt from its config.
pub trait Checkpointed: Sized {
    type Config: Serialize + DeserializeOwned;
    const KIND: &'static str;

    fn build<T: Real>(config: &Self::Config, pb: &mut ParamBuilder<'_, T>) -> Result<Self>;
    fn config(&self) -> &Self::Config;

    fn init<T: Real>(config: &Self::Config, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut r = crate::rng::stream(seed, &[0x1417]);
        let model = Self::build(config, &mut ParamBuilder::new(&mut store, &mut r))?;
        Ok((model, store))
    }
}

pub fn save_model<M: Checkpointed>(
    stem: &Path,
    model: &M,
    params: &ParamStore<f32>,
    step: u64,
    epoch: usize,
    lr: f64,
    seed: u64,
) -> Result<()> {
    let meta = CheckpointMeta {
        model: M::KIND.to_string(),
        step,
        epoch,
        lr,
        seed,
        config: serde_json::to_value(model.config())?,
    };
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    checkpoint::save(stem, params, &meta).map_err(|e| match e {
        drumsmith_nn::NnError::Io(io) => Error::io(stem, io),
        other => other.into(),
    })
}

pub fn load_model<M: Checkpointed>(stem: &Path) -> Result<(M, ParamStore<f32>, CheckpointMeta)> {
    let (stored, meta): (ParamStore<f32>, CheckpointMeta) = checkpoint::load(stem).map_err(|e| match e {
        drumsmith_nn::NnError::Io(io) => Error::io(stem, io),
        other => other.into(),
    })?;
    if meta.model != M::KIND {
        return Err(Error::CheckpointMismatch(format!(
            "{} holds a {:?} model, expected {:?}",
            stem.display(),
            meta.model,
            M::KIND
        )));
    }
    let config: M::Config = serde_json::from_value(meta.config.clone())
        .map_err(|e| Error::CheckpointMismatch(format!("bad model config: {e}")))?;
    let mut params = ParamStore::new();
    let mut r = layout_rng();
    let model = M::build(&config, &mut ParamBuilder::new(&mut params, &mut r))?;
    params.load_from(&stored)?;
    Ok((model, params, meta))
}
