//! Masked-bar in-filling: two encoders summarize the MA and the drum
//! context with the middle bar blanked, and a decoder maps the joint code
//! to stroke probabilities for that bar.

use std::fmt;
use std::str::FromStr;

use drumsmith_nn::layers::{Dense, LayerNorm};
use drumsmith_nn::{Graph, ParamBuilder, ParamStore, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{Checkpointed, EncoderDims, SequenceEncoder};
use crate::error::{Error, Result};
use crate::pianoroll::{Bar, PaSample, CENTER_BAR, LANES, MA_FEATURES, STEPS_PER_BAR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderVariant {
    Mlp,
    MlpMixer,
    Conv1d,
}

impl FromStr for DecoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mlp" => Ok(Self::Mlp),
            "mlpmixer" | "mixer" => Ok(Self::MlpMixer),
            "conv1d" | "conv" => Ok(Self::Conv1d),
            _ => Err(Error::UnknownVariant(s.to_string())),
        }
    }
}

impl fmt::Display for DecoderVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mlp => "mlp",
            Self::MlpMixer => "mlp_mixer",
            Self::Conv1d => "conv1d",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfillConfig {
    pub variant: DecoderVariant,
    pub enc_layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub embed_hidden: usize,
    pub embed_dim: usize,
    pub ff_hidden: usize,
    pub ma_features: usize,
    pub pa_features: usize,
    /// Hidden widths of the MLP decoder; a final layer of 32·16 follows.
    pub mlp_hidden: Vec<usize>,
    pub mixer_blocks: usize,
    pub mixer_token_hidden: usize,
    pub mixer_channel_hidden: usize,
    pub conv_channels: usize,
    pub conv_layers_per_block: usize,
    pub huber_delta: f64,
}

impl Default for InfillConfig {
    fn default() -> Self {
        Self {
            variant: DecoderVariant::Mlp,
            enc_layers: 2,
            model_dim: 128,
            heads: 8,
            embed_hidden: 1024,
            embed_dim: 128,
            ff_hidden: 512,
            ma_features: MA_FEATURES,
            pa_features: LANES,
            mlp_hidden: vec![2048, 2048],
            mixer_blocks: 4,
            mixer_token_hidden: 64,
            mixer_channel_hidden: 512,
            conv_channels: 64,
            conv_layers_per_block: 2,
            huber_delta: 1.0,
        }
    }
}

impl InfillConfig {
    pub fn latent_dim(&self) -> usize {
        2 * self.model_dim
    }
}

#[derive(Clone, Debug)]
pub struct MixerBlock {
    token_norm: LayerNorm,
    token_up: Dense,
    token_down: Dense,
    channel_norm: LayerNorm,
    channel_up: Dense,
    channel_down: Dense,
}

#[derive(Clone, Debug)]
pub enum BarDecoder {
    Mlp { layers: Vec<Dense> },
    Mixer { expand: Dense, blocks: Vec<MixerBlock>, head: Dense },
    Conv { layers: Vec<Vec<Dense>>, head: Dense, channels: usize },
}

/// Length of the conv decoder's input sequence; three ×2 upsamplings reach 32.
const CONV_START_LEN: usize = 4;
const CONV_BLOCKS: usize = 3;

impl BarDecoder {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, c: &InfillConfig) -> Result<Self> {
        let latent = c.latent_dim();
        let out_cells = STEPS_PER_BAR * LANES;
        let mut s = pb.scope("decoder");
        Ok(match c.variant {
            DecoderVariant::Mlp => {
                let mut widths = vec![latent];
                widths.extend(&c.mlp_hidden);
                let mut layers: Vec<Dense> = widths
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| Dense::new(&mut s, &format!("dense{i}"), w[0], w[1]))
                    .collect();
                let last = *widths.last().expect("non-empty");
                layers.push(Dense::new(&mut s, &format!("dense{}", widths.len() - 1), last, out_cells));
                BarDecoder::Mlp { layers }
            }
            DecoderVariant::MlpMixer => {
                let blocks = (0..c.mixer_blocks)
                    .map(|i| {
                        let mut b = s.scope(&format!("mixer{i}"));
                        MixerBlock {
                            token_norm: LayerNorm::new(&mut b, "token_norm", latent),
                            token_up: Dense::new(&mut b, "token_up", STEPS_PER_BAR, c.mixer_token_hidden),
                            token_down: Dense::new(&mut b, "token_down", c.mixer_token_hidden, STEPS_PER_BAR),
                            channel_norm: LayerNorm::new(&mut b, "channel_norm", latent),
                            channel_up: Dense::new(&mut b, "channel_up", latent, c.mixer_channel_hidden),
                            channel_down: Dense::new(&mut b, "channel_down", c.mixer_channel_hidden, latent),
                        }
                    })
                    .collect();
                BarDecoder::Mixer {
                    expand: Dense::new(&mut s, "expand", latent, STEPS_PER_BAR * latent),
                    blocks,
                    head: Dense::new(&mut s, "head", latent, LANES),
                }
            }
            DecoderVariant::Conv1d => {
                let ch = c.conv_channels;
                if latent % CONV_START_LEN != 0 || latent / CONV_START_LEN != ch {
                    return Err(Error::InvalidConfig(format!(
                        "conv decoder needs conv_channels = latent / {CONV_START_LEN} = {}, got {ch}",
                        latent / CONV_START_LEN
                    )));
                }
                let layers = (0..CONV_BLOCKS)
                    .map(|b| {
                        (0..c.conv_layers_per_block)
                            .map(|l| Dense::new(&mut s, &format!("conv{b}_{l}"), 3 * ch, ch))
                            .collect()
                    })
                    .collect();
                BarDecoder::Conv {
                    layers,
                    head: Dense::new(&mut s, "head", ch, LANES),
                    channels: ch,
                }
            }
        })
    }

    /// Maps a `[1 × latent]` code to `[32 × 16]` probabilities.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, code: Var) -> Result<Var> {
        let logits = match self {
            BarDecoder::Mlp { layers } => {
                let mut h = code;
                for (i, layer) in layers.iter().enumerate() {
                    h = layer.forward(g, p, h)?;
                    if i + 1 < layers.len() {
                        h = g.relu(h);
                    }
                }
                g.reshape(h, STEPS_PER_BAR, LANES)?
            }
            BarDecoder::Mixer { expand, blocks, head } => {
                let latent = g.shape(code)[1];
                let e = expand.forward(g, p, code)?;
                let mut x = g.reshape(e, STEPS_PER_BAR, latent)?;
                for b in blocks {
                    let n = b.token_norm.forward(g, p, x)?;
                    let t = g.transpose(n);
                    let t = b.token_up.forward(g, p, t)?;
                    let t = g.relu(t);
                    let t = b.token_down.forward(g, p, t)?;
                    let t = g.transpose(t);
                    x = g.add(x, t)?;
                    let n = b.channel_norm.forward(g, p, x)?;
                    let h = b.channel_up.forward(g, p, n)?;
                    let h = g.relu(h);
                    let h = b.channel_down.forward(g, p, h)?;
                    x = g.add(x, h)?;
                }
                head.forward(g, p, x)?
            }
            BarDecoder::Conv { layers, head, channels } => {
                let mut x = g.reshape(code, CONV_START_LEN, *channels)?;
                for block in layers {
                    for conv in block {
                        let u = g.unfold_rows(x, 3);
                        let y = conv.forward(g, p, u)?;
                        x = g.relu(y);
                    }
                    x = g.repeat_rows(x, 2);
                }
                head.forward(g, p, x)?
            }
        };
        Ok(g.sigmoid(logits))
    }
}

#[derive(Clone, Debug)]
pub struct Infill {
    config: InfillConfig,
    ma_encoder: SequenceEncoder,
    pa_encoder: SequenceEncoder,
    decoder: BarDecoder,
}

impl Checkpointed for Infill {
    type Config = InfillConfig;
    const KIND: &'static str = "infill";

    fn build<T: Real>(config: &InfillConfig, pb: &mut ParamBuilder<'_, T>) -> Result<Self> {
        let dims = |input| EncoderDims {
            input,
            embed_hidden: config.embed_hidden,
            embed_dim: config.embed_dim,
            model_dim: config.model_dim,
            heads: config.heads,
            layers: config.enc_layers,
            ff_hidden: config.ff_hidden,
        };
        Ok(Self {
            config: config.clone(),
            ma_encoder: SequenceEncoder::new(pb, "ma_encoder", dims(config.ma_features), true)?,
            pa_encoder: SequenceEncoder::new(pb, "pa_encoder", dims(config.pa_features), true)?,
            decoder: BarDecoder::new(pb, config)?,
        })
    }

    fn config(&self) -> &InfillConfig {
        &self.config
    }
}

/// Drum context with the middle bar blanked.
pub fn mask_center(pa: &PaSample) -> PaSample {
    let mut out = pa.clone();
    out.set_bar(CENTER_BAR, &Bar::empty()).expect("center bar exists");
    out
}

impl Infill {
    pub fn decoder(&self) -> &BarDecoder {
        &self.decoder
    }

    /// Joint `[1 × 2·model_dim]` code: averaged MA and PA encodings.
    pub fn summarize<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, ma: Var, pa: Var) -> Result<Var> {
        let m = self.ma_encoder.forward(g, p, ma)?;
        let m = g.mean_rows(m);
        let d = self.pa_encoder.forward(g, p, pa)?;
        let d = g.mean_rows(d);
        Ok(g.concat_cols(&[m, d])?)
    }

    /// Stroke probabilities for the middle bar. `pa` should already have
    /// its middle bar blanked; see [`mask_center`].
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, ma: Var, pa: Var) -> Result<Var> {
        let code = self.summarize(g, p, ma, pa)?;
        self.decoder.forward(g, p, code)
    }

    pub fn loss<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, ma: Var, pa: Var, target: &Bar) -> Result<Var> {
        let probs = self.forward(g, p, ma, pa)?;
        Ok(g.huber(probs, &bar_tensor(target), T::from_f64_lossy(self.config.huber_delta))?)
    }

    /// Probabilities for the middle bar of `pa`, which is blanked first.
    pub fn predict<T: Real>(&self, p: &ParamStore<T>, ma: &Tensor<T>, pa: &PaSample) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let x = g.constant(ma.clone());
        let d = g.constant(mask_center(pa).to_tensor());
        let probs = self.forward(&mut g, p, x, d)?;
        Ok(g.value(probs).clone())
    }
}

pub fn bar_tensor<T: Real>(bar: &Bar) -> Tensor<T> {
    Tensor::from_fn(STEPS_PER_BAR, LANES, |t, l| if bar.get(t, l) { T::one() } else { T::zero() })
}

/// Strokes where the probability reaches `threshold`.
pub fn threshold_bar<T: Real>(probs: &Tensor<T>, threshold: f64) -> Bar {
    Bar::from_fn(|t, l| probs.get(t, l).to_f64().unwrap_or(0.0) >= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: DecoderVariant) -> InfillConfig {
        InfillConfig {
            variant,
            model_dim: 16,
            heads: 2,
            embed_hidden: 16,
            embed_dim: 8,
            ff_hidden: 16,
            mlp_hidden: vec![24, 24],
            mixer_blocks: 2,
            mixer_token_hidden: 8,
            mixer_channel_hidden: 16,
            conv_channels: 8,
            enc_layers: 1,
            ..Default::default()
        }
    }

    #[test]
    fn full_mlp_decoder_parameter_count() {
        let mut store = ParamStore::<f32>::new();
        let mut r = crate::rng::stream(0, &[]);
        let cfg = InfillConfig::default();
        let d = BarDecoder::new(&mut ParamBuilder::new(&mut store, &mut r), &cfg).unwrap();
        assert!(matches!(d, BarDecoder::Mlp { .. }));
        let expected = 256 * 2048 + 2048 * 2048 + 2048 * 512 + 2048 + 2048 + 512;
        assert_eq!(store.num_scalars(), expected);
    }

    #[test]
    fn every_variant_outputs_a_bar_of_probabilities() {
        for v in [DecoderVariant::Mlp, DecoderVariant::MlpMixer, DecoderVariant::Conv1d] {
            let (m, mut p) = Infill::init::<f64>(&small(v), 4).unwrap();
            let ids: Vec<_> = p.ids().collect();
            for id in ids {
                for (j, x) in p.get_mut(id).data_mut().iter_mut().enumerate() {
                    *x += 0.05 * (((j * 7) % 5) as f64 - 2.0);
                }
            }
            let ma = Tensor::from_fn(352, MA_FEATURES, |r, c| ((r * 3 + c) % 11 == 0) as u8 as f64);
            let pa = PaSample::from_fn(|t, l| (t + l) % 5 == 0);
            let probs = m.predict(&p, &ma, &pa).unwrap();
            assert_eq!(probs.shape(), [32, 16]);
            assert!(probs.data().iter().all(|&x| x > 0.0 && x < 1.0));
            let mut other = pa.clone();
            other.set_bar(CENTER_BAR, &Bar::full()).unwrap();
            assert_eq!(m.predict(&p, &ma, &other).unwrap(), probs);
        }
    }

    #[test]
    fn variant_names_parse() {
        assert_eq!("mlp".parse::<DecoderVariant>().unwrap(), DecoderVariant::Mlp);
        assert_eq!("mlp-mixer".parse::<DecoderVariant>().unwrap(), DecoderVariant::MlpMixer);
        assert_eq!("Conv1D".parse::<DecoderVariant>().unwrap(), DecoderVariant::Conv1d);
        assert!(matches!("rnn".parse::<DecoderVariant>(), Err(Error::UnknownVariant(_))));
    }
}
