//! Encoder classifier deciding whether the middle bar of an MA window
//! should carry a fill.

use drumsmith_nn::layers::Dense;
use drumsmith_nn::{Graph, ParamBuilder, ParamStore, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{Checkpointed, EncoderDims, SequenceEncoder};
use crate::error::Result;
use crate::pianoroll::MA_FEATURES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocatorConfig {
    pub enc_layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub hidden: usize,
    pub classes: usize,
    pub embed_hidden: usize,
    pub embed_dim: usize,
    pub ff_hidden: usize,
    pub ma_features: usize,
    pub huber_delta: f64,
}

impl Default for LocatorConfig {
    fn default() -> Self {
        Self {
            enc_layers: 2,
            model_dim: 64,
            heads: 12,
            hidden: 1024,
            classes: 2,
            embed_hidden: 1024,
            embed_dim: 128,
            ff_hidden: 256,
            ma_features: MA_FEATURES,
            huber_delta: 1.0,
        }
    }
}

/// Class 1 means "fill here".
#[derive(Clone, Debug)]
pub struct Locator {
    config: LocatorConfig,
    encoder: SequenceEncoder,
    hidden: Dense,
    out: Dense,
}

impl Checkpointed for Locator {
    type Config = LocatorConfig;
    const KIND: &'static str = "locator";

    fn build<T: Real>(config: &LocatorConfig, pb: &mut ParamBuilder<'_, T>) -> Result<Self> {
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
            hidden: Dense::new(pb, "hidden", config.model_dim, config.hidden),
            out: Dense::zeroed(pb, "out", config.hidden, config.classes),
        })
    }

    fn config(&self) -> &LocatorConfig {
        &self.config
    }
}

impl Locator {
    /// Encoder output rows before pooling.
    pub fn encoder_forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, ma: Var) -> Result<Var> {
        self.encoder.forward(g, p, ma)
    }

    /// Class probabilities `[1 × classes]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, ma: Var) -> Result<Var> {
        let h = self.encoder_forward(g, p, ma)?;
        let pooled = g.mean_rows(h);
        let z = self.hidden.forward(g, p, pooled)?;
        let z = g.relu(z);
        let logits = self.out.forward(g, p, z)?;
        Ok(g.softmax_rows(logits, drumsmith_nn::Mask::None))
    }

    /// Huber loss between the probabilities and the one-hot label.
    pub fn loss<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, ma: Var, positive: bool) -> Result<Var> {
        let probs = self.forward(g, p, ma)?;
        self.loss_from_probs(g, probs, positive)
    }

    /// [`Locator::loss`] for probabilities already computed by
    /// [`Locator::forward`].
    pub fn loss_from_probs<T: Real>(&self, g: &mut Graph<T>, probs: Var, positive: bool) -> Result<Var> {
        let target = Tensor::from_fn(1, self.config.classes, |_, c| {
            if c == positive as usize {
                T::one()
            } else {
                T::zero()
            }
        });
        Ok(g.huber(probs, &target, T::from_f64_lossy(self.config.huber_delta))?)
    }

    /// Probability of the "fill" class.
    pub fn predict<T: Real>(&self, p: &ParamStore<T>, ma: &Tensor<T>) -> Result<f64> {
        let mut g = Graph::inference();
        let x = g.constant(ma.clone());
        let probs = self.forward(&mut g, p, x)?;
        Ok(g.value(probs).data()[1].to_f64().unwrap_or(f64::NAN))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_and_init() {
        let cfg = LocatorConfig {
            embed_hidden: 32,
            hidden: 16,
            ..Default::default()
        };
        let (m, p) = Locator::init::<f64>(&cfg, 2).unwrap();
        let ma = Tensor::from_fn(12, MA_FEATURES, |r, c| ((r + c) % 7 == 0) as u8 as f64);
        let mut g = Graph::inference();
        let x = g.constant(ma);
        let probs = m.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(probs).data(), &[0.5, 0.5]);
        let q = p.id_of("encoder.block0.attn.q.w").unwrap();
        assert_eq!(p.get(q).shape(), [64, 72]);
        let o = p.id_of("encoder.block0.attn.o.w").unwrap();
        assert_eq!(p.get(o).shape(), [72, 64]);
    }
}
