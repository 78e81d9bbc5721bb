//! Autoregressive generation, post-hoc sample filtering and the full
//! basic → locator → infill pipeline.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use drumsmith_nn::ParamStore;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::infill::threshold_bar;
use crate::models::{load_model, BasicDrumGen, Infill, Locator};
use crate::pianoroll::{DrumTrack, MaSample, MaTrack, PaSample, BARS_PER_SAMPLE, BAR_CELLS, CENTER_BAR, SAMPLE_STEPS};
use crate::rng::{self, Rng};
use crate::tokenizer::{self, TokenSeq, SHIFT, VOCAB_SIZE};

/// Longest possible canonical sequence: every step holds all 16 lanes.
pub const DEFAULT_MAX_TOKENS: usize = SAMPLE_STEPS * (VOCAB_SIZE - 1);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Highest-probability token, lowest id on ties.
    #[default]
    Greedy,
    /// Draw from the softmax distribution.
    Sample,
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "sample" => Ok(Strategy::Sample),
            other => Err(Error::UnknownVariant(other.to_string())),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Greedy => "greedy",
            Strategy::Sample => "sample",
        })
    }
}

/// Softmax of `logits` in f64.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exp: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// Picks the next token. `rng` is only consumed by [`Strategy::Sample`].
pub fn sample_token(logits: &[f32], strategy: Strategy, rng: &mut Rng) -> usize {
    match strategy {
        Strategy::Greedy => logits
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0,
        Strategy::Sample => {
            let probs = softmax(logits);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            // Rounding left `acc` just below 1: take the last token with mass.
            probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        }
    }
}

/// Generates tokens until the sample's 352 steps are closed or `max_tokens`
/// have been emitted.
pub fn generate_tokens(
    model: &BasicDrumGen,
    params: &ParamStore<f32>,
    ma: &MaSample,
    strategy: Strategy,
    rng: &mut Rng,
    max_tokens: usize,
) -> Result<TokenSeq> {
    let mut state = model.start(params, &ma.to_tensor())?;
    let mut out = Vec::new();
    let mut shifts = 0;
    let mut prev = SHIFT as usize;
    while shifts < SAMPLE_STEPS && out.len() < max_tokens {
        let logits = model.step(params, &mut state, prev)?;
        let tok = sample_token(&logits, strategy, rng);
        if tok == SHIFT as usize {
            shifts += 1;
        }
        out.push(tok as u8);
        prev = tok;
    }
    Ok(TokenSeq(out))
}

/// Drum accompaniment for one MA sample. Steps never reached before
/// `max_tokens` stay silent.
pub fn generate_pa(
    model: &BasicDrumGen,
    params: &ParamStore<f32>,
    ma: &MaSample,
    strategy: Strategy,
    rng: &mut Rng,
    max_tokens: usize,
) -> Result<PaSample> {
    let tokens = generate_tokens(model, params, ma, strategy, rng, max_tokens)?;
    tokenizer::decode(&tokens.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Samples with more fully silent bars than this are dropped.
    pub max_silent_bars: usize,
    /// Samples whose bar-density standard deviation exceeds this are dropped.
    pub density_std_threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_silent_bars: 4,
            density_std_threshold: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total: usize,
    pub kept: usize,
    pub dropped_silent: usize,
    pub dropped_density: usize,
    /// Input indices of the kept samples.
    pub kept_indices: Vec<usize>,
}

/// Population standard deviation of the per-bar densities.
pub fn bar_density_std(sample: &PaSample) -> f64 {
    let d: Vec<f64> = sample.bars().iter().map(|b| b.density()).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt()
}

pub fn silent_bars(sample: &PaSample) -> usize {
    sample.bars().iter().filter(|b| b.is_silent()).count()
}

/// Keeps samples with at most `max_silent_bars` silent bars and a bar-density
/// spread within the threshold. A sample failing both rules is counted as
/// dropped for silence.
pub fn filter_samples(samples: &[PaSample], cfg: &FilterConfig) -> (Vec<PaSample>, FilterReport) {
    let mut report = FilterReport {
        total: samples.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if silent_bars(s) > cfg.max_silent_bars {
            report.dropped_silent += 1;
        } else if bar_density_std(s) > cfg.density_std_threshold {
            report.dropped_density += 1;
        } else {
            report.kept_indices.push(i);
            kept.push(s.clone());
        }
    }
    report.kept = kept.len();
    (kept, report)
}

/// The three trained networks used by [`run_pipeline`].
pub struct PipelineModels {
    pub basic: BasicDrumGen,
    pub basic_params: ParamStore<f32>,
    pub locator: Locator,
    pub locator_params: ParamStore<f32>,
    pub infill: Infill,
    pub infill_params: ParamStore<f32>,
}

impl PipelineModels {
    /// Loads the `basic`, `locator` and `infill` checkpoints from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let (basic, basic_params, _) = load_model::<BasicDrumGen>(&dir.join("basic"))?;
        let (locator, locator_params, _) = load_model::<Locator>(&dir.join("locator"))?;
        let (infill, infill_params, _) = load_model::<Infill>(&dir.join("infill"))?;
        Ok(Self {
            basic,
            basic_params,
            locator,
            locator_params,
            infill,
            infill_params,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub max_tokens: usize,
    /// A bar is flagged when the locator's fill probability exceeds this.
    pub locator_threshold: f64,
    /// Infill probabilities at or above this become strokes.
    pub infill_threshold: f64,
    pub filter: FilterConfig,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            max_tokens: DEFAULT_MAX_TOKENS,
            locator_threshold: 0.5,
            infill_threshold: 0.5,
            filter: FilterConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarProbability {
    pub bar: usize,
    pub p_fill: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// Output of the basic generator alone.
    pub basic: DrumTrack,
    /// `basic` with every flagged bar replaced by the infill model.
    pub drums: DrumTrack,
    pub flagged: Vec<usize>,
    pub probabilities: Vec<BarProbability>,
}

/// First bars of the 11-bar windows the basic generator fills. When the song
/// length is not a multiple of 11, the last window ends at the final bar and
/// overlaps its predecessor.
pub fn segment_starts(bars: usize) -> Result<Vec<usize>> {
    if bars < BARS_PER_SAMPLE {
        return Err(Error::SongTooShort {
            bars,
            needed: BARS_PER_SAMPLE,
        });
    }
    let mut starts: Vec<usize> = (0..bars / BARS_PER_SAMPLE).map(|i| i * BARS_PER_SAMPLE).collect();
    if bars % BARS_PER_SAMPLE != 0 {
        starts.push(bars - BARS_PER_SAMPLE);
    }
    Ok(starts)
}

/// Basic drums for a whole song. Segment `i` draws from its own RNG stream,
/// so the result does not depend on the thread count.
pub fn generate_song(
    model: &BasicDrumGen,
    params: &ParamStore<f32>,
    ma: &MaTrack,
    cfg: &DecodeConfig,
    seed: u64,
) -> Result<DrumTrack> {
    let bars = ma.bars();
    let starts = segment_starts(bars)?;
    let samples: Vec<Result<PaSample>> = starts
        .par_iter()
        .enumerate()
        .map(|(i, &first)| {
            let mut r = rng::stream(seed, &[0xdec0, i as u64]);
            generate_pa(model, params, &ma.window(first)?, cfg.strategy, &mut r, cfg.max_tokens)
        })
        .collect();
    let mut track = DrumTrack::silent(bars);
    let mut covered = 0usize;
    for (&first, sample) in starts.iter().zip(samples) {
        let sample = sample?;
        // An overlapping tail window only contributes the bars not yet written.
        for k in covered.saturating_sub(first)..BARS_PER_SAMPLE {
            track.set_bar(first + k, &sample.bar(k)?)?;
        }
        covered = first + BARS_PER_SAMPLE;
    }
    Ok(track)
}

/// Locator probabilities for every bar that can sit at a window center.
pub fn locate(locator: &Locator, params: &ParamStore<f32>, ma: &MaTrack) -> Result<Vec<BarProbability>> {
    let bars = ma.bars();
    if bars < BARS_PER_SAMPLE {
        return Err(Error::SongTooShort {
            bars,
            needed: BARS_PER_SAMPLE,
        });
    }
    (CENTER_BAR..bars - CENTER_BAR)
        .into_par_iter()
        .map(|bar| {
            let window = ma.window(bar - CENTER_BAR)?;
            Ok(BarProbability {
                bar,
                p_fill: locator.predict(params, &window.to_tensor())?,
            })
        })
        .collect()
}

/// Replaces each flagged bar in ascending order, so later bars see the
/// already infilled ones in their context.
pub fn infill_bars(
    infill: &Infill,
    params: &ParamStore<f32>,
    ma: &MaTrack,
    drums: &mut DrumTrack,
    flagged: &[usize],
    threshold: f64,
) -> Result<()> {
    let mut order = flagged.to_vec();
    order.sort_unstable();
    for bar in order {
        let first = bar.checked_sub(CENTER_BAR).ok_or(Error::IndexOutOfRange {
            what: "infill bar",
            index: bar,
            size: drums.bars(),
        })?;
        let ma_win = ma.window(first)?;
        let pa_win = drums.window(first)?;
        let probs = infill.predict(params, &ma_win.to_tensor(), &pa_win)?;
        drums.set_bar(bar, &threshold_bar(&probs, threshold))?;
    }
    Ok(())
}

/// Full song generation: basic drums, fill locations, then infilling.
pub fn run_pipeline(ma: &MaTrack, models: &PipelineModels, cfg: &DecodeConfig, seed: u64) -> Result<PipelineOutput> {
    let basic = generate_song(&models.basic, &models.basic_params, ma, cfg, seed)?;
    let probabilities = locate(&models.locator, &models.locator_params, ma)?;
    let flagged: Vec<usize> = probabilities
        .iter()
        .filter(|p| p.p_fill > cfg.locator_threshold)
        .map(|p| p.bar)
        .collect();
    let mut drums = basic.clone();
    infill_bars(&models.infill, &models.infill_params, ma, &mut drums, &flagged, cfg.infill_threshold)?;
    Ok(PipelineOutput {
        basic,
        drums,
        flagged,
        probabilities,
    })
}

/// Bars where two tracks of equal length differ.
pub fn differing_bars(a: &DrumTrack, b: &DrumTrack) -> Vec<usize> {
    a.cells()
        .chunks(BAR_CELLS)
        .zip(b.cells().chunks(BAR_CELLS))
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BasicDrumGenConfig, Checkpointed};
    use crate::pianoroll::Bar;

    fn tiny_basic() -> (BasicDrumGen, ParamStore<f32>) {
        let cfg = BasicDrumGenConfig {
            enc_layers: 1,
            dec_layers: 1,
            model_dim: 8,
            heads: 2,
            token_embed_dim: 8,
            embed_hidden: 16,
            embed_dim: 8,
            ff_hidden: 16,
            ..Default::default()
        };
        let (m, mut p) = BasicDrumGen::init::<f32>(&cfg, 4).unwrap();
        let ids: Vec<_> = p.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            for (j, v) in p.get_mut(id).data_mut().iter_mut().enumerate() {
                *v += 0.3 * (((i * 7 + j * 13) % 11) as f32 / 5.0 - 1.0);
            }
        }
        (m, p)
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let mut r = rng::stream(0, &[]);
        assert_eq!(sample_token(&[1.0, 3.0, 3.0, -1.0], Strategy::Greedy, &mut r), 1);
    }

    #[test]
    fn sampling_never_picks_zero_mass() {
        let mut r = rng::stream(1, &[]);
        for _ in 0..2000 {
            assert_ne!(sample_token(&[0.0, f32::NEG_INFINITY, 0.0], Strategy::Sample, &mut r), 1);
        }
    }

    #[test]
    fn sampling_frequencies_follow_softmax() {
        let logits = [0.3f32, -1.0, 1.2, 0.0, 0.5, -0.4];
        let probs = softmax(&logits);
        let mut r = rng::stream(7, &[]);
        let n = 10_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[sample_token(&logits, Strategy::Sample, &mut r)] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
            .sum();
        // 5 degrees of freedom, 0.999 quantile.
        assert!(chi2 < 20.52, "chi2 {chi2}");
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("sample".parse::<Strategy>().unwrap(), Strategy::Sample);
        assert!(matches!("beam".parse::<Strategy>(), Err(Error::UnknownVariant(_))));
    }

    #[test]
    fn generation_is_reproducible_and_bounded() {
        let (m, p) = tiny_basic();
        let ma = MaSample::silent();
        let greedy = |seed| generate_tokens(&m, &p, &ma, Strategy::Greedy, &mut rng::stream(seed, &[]), 400).unwrap();
        assert_eq!(greedy(1), greedy(2));
        let a = generate_tokens(&m, &p, &ma, Strategy::Sample, &mut rng::stream(3, &[]), 400).unwrap();
        let b = generate_tokens(&m, &p, &ma, Strategy::Sample, &mut rng::stream(3, &[]), 400).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 400);
        assert!(a.ids().iter().filter(|&&t| t == SHIFT).count() <= SAMPLE_STEPS);
        generate_pa(&m, &p, &ma, Strategy::Sample, &mut rng::stream(3, &[]), 50).unwrap();
    }

    #[test]
    fn segments_cover_song() {
        assert_eq!(segment_starts(11).unwrap(), vec![0]);
        assert_eq!(segment_starts(24).unwrap(), vec![0, 11, 13]);
        assert_eq!(segment_starts(33).unwrap(), vec![0, 11, 22]);
        assert!(matches!(segment_starts(10), Err(Error::SongTooShort { bars: 10, .. })));
    }

    fn sample_with(silent: usize, per_bar: usize) -> PaSample {
        let mut bars = [Bar::empty(); BARS_PER_SAMPLE];
        for b in bars.iter_mut().skip(silent) {
            for k in 0..per_bar {
                b.set(k * 2, k % 16, true);
            }
        }
        PaSample::from_bars(&bars)
    }

    #[test]
    fn filter_boundaries() {
        let cfg = FilterConfig::default();
        let four = sample_with(4, 8);
        let five = sample_with(5, 8);
        let flat = sample_with(0, 12);
        assert_eq!(bar_density_std(&flat), 0.0);
        let (kept, rep) = filter_samples(&[four.clone(), five, flat.clone()], &cfg);
        assert_eq!(kept, vec![four, flat]);
        assert_eq!((rep.kept, rep.dropped_silent, rep.dropped_density), (2, 1, 0));
        assert_eq!(rep.kept_indices, vec![0, 2]);
        let (again, rep2) = filter_samples(&kept, &cfg);
        assert_eq!(again, kept);
        assert_eq!(rep2.kept, 2);
    }

    #[test]
    fn filter_drops_uneven_density() {
        let mut bars = [Bar::empty(); BARS_PER_SAMPLE];
        bars[0] = Bar::full();
        for b in bars.iter_mut().skip(1) {
            b.set(0, 0, true);
        }
        let (_, rep) = filter_samples(&[PaSample::from_bars(&bars)], &FilterConfig::default());
        assert_eq!(rep.dropped_density, 1);
    }

    #[test]
    fn differing_bars_reports_changes() {
        let a = DrumTrack::silent(3);
        let mut b = a.clone();
        b.set_bar(2, &Bar::full()).unwrap();
        assert_eq!(differing_bars(&a, &b), vec![2]);
    }
}
