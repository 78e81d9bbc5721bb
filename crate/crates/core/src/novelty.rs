//! Per-bar drum novelty and the balanced fill-location dataset.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pianoroll::{bar_l1_norm, Bar, DrumTrack, MaSample, PaSample, BARS_PER_SAMPLE, BAR_CELLS, CENTER_BAR};
use crate::preprocess::PreparedSong;
use crate::rng;

/// Context bars on each side of the bar under test.
pub const CONTEXT: usize = CENTER_BAR;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoveltyConfig {
    /// A peak must exceed each neighbour's value by more than this.
    pub peak_margin: f64,
    /// Positives per song are capped at this fraction of its bars.
    pub positive_cap: f64,
    /// Negatives are never drawn within this many bars of a peak.
    pub negative_exclusion: usize,
}

impl Default for NoveltyConfig {
    fn default() -> Self {
        Self {
            peak_margin: 0.1,
            positive_cap: 0.1,
            negative_exclusion: 1,
        }
    }
}

/// `‖a − b‖₁ · k / (‖a‖₁ + ‖b‖₁)`, or 0 when both bars are empty.
pub fn bar_dissimilarity(a: &Bar, b: &Bar, k: f64) -> f64 {
    let denom = bar_l1_norm(a) + bar_l1_norm(b);
    if denom == 0 {
        return 0.0;
    }
    let diff = a.cells().iter().zip(b.cells()).filter(|(x, y)| x != y).count();
    debug_assert!(diff <= BAR_CELLS);
    k * diff as f64 / denom as f64
}

/// Raw Hann weight `0.5 · (1 + cos(π d / 6))` for a context offset.
pub fn raw_hann(offset: isize) -> f64 {
    0.5 * (1.0 + (std::f64::consts::PI * offset as f64 / 6.0).cos())
}

/// Context offsets in weight order: −5..−1 then +1..+5.
pub const OFFSETS: [isize; 10] = [-5, -4, -3, -2, -1, 1, 2, 3, 4, 5];

/// Normalized weights for [`OFFSETS`]; they sum to 1.
pub fn hann_weights() -> [f64; 10] {
    let raw = OFFSETS.map(raw_hann);
    let total: f64 = raw.iter().sum();
    raw.map(|w| w / total)
}

/// Weighted dissimilarity of the middle bar against its ten neighbours.
pub fn novelty_value(bars: &[Bar; BARS_PER_SAMPLE]) -> f64 {
    let w = hann_weights();
    let center = &bars[CENTER_BAR];
    OFFSETS
        .iter()
        .zip(w)
        .map(|(&d, k)| bar_dissimilarity(center, &bars[(CENTER_BAR as isize + d) as usize], k))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoveltyProfile {
    pub song_id: String,
    /// One entry per bar; `None` for the first and last five bars.
    pub values: Vec<Option<f64>>,
    pub peaks: Vec<usize>,
}

impl NoveltyProfile {
    pub fn is_peak(&self, bar: usize) -> bool {
        self.peaks.binary_search(&bar).is_ok()
    }
}

/// Bars whose value beats both immediate neighbours by more than `margin`.
/// Bars with an undefined neighbour are never peaks.
pub fn pick_peaks(values: &[Option<f64>], margin: f64) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&b| match (values[b - 1], values[b], values[b + 1]) {
            (Some(l), Some(v), Some(r)) => v - l > margin && v - r > margin,
            _ => false,
        })
        .collect()
}

pub fn novelty_profile(song_id: &str, drums: &DrumTrack, margin: f64) -> Result<NoveltyProfile> {
    let n = drums.bars();
    if n < BARS_PER_SAMPLE {
        return Err(Error::SongTooShort {
            bars: n,
            needed: BARS_PER_SAMPLE,
        });
    }
    let bars = drums.all_bars();
    let mut values = vec![None; n];
    for b in CONTEXT..n - CONTEXT {
        let window: &[Bar; BARS_PER_SAMPLE] = bars[b - CONTEXT..=b + CONTEXT].try_into().expect("11 bars");
        values[b] = Some(novelty_value(window));
    }
    let peaks = pick_peaks(&values, margin);
    Ok(NoveltyProfile {
        song_id: song_id.to_string(),
        values,
        peaks,
    })
}

/// One labeled window centred on `bar`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationEntry {
    pub song_id: String,
    pub bar: usize,
    pub positive: bool,
    pub ma: MaSample,
    pub pa: PaSample,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SongCounts {
    pub song_id: String,
    pub bars: usize,
    pub peaks: usize,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocationDataset {
    pub entries: Vec<LocationEntry>,
    pub per_song: Vec<SongCounts>,
}

impl LocationDataset {
    pub fn positives(&self) -> impl Iterator<Item = &LocationEntry> {
        self.entries.iter().filter(|e| e.positive)
    }

    pub fn count(&self, positive: bool) -> usize {
        self.entries.iter().filter(|e| e.positive == positive).count()
    }
}

/// Per song: the highest peaks (ties to the earlier bar) up to the cap as
/// positives, and the same number of negatives drawn without replacement
/// from defined bars away from every peak. When too few negative bars
/// exist, positives are trimmed to match.
pub fn build_location_dataset(songs: &[PreparedSong], config: &NoveltyConfig, seed: u64) -> Result<LocationDataset> {
    let mut out = LocationDataset::default();
    for (si, song) in songs.iter().enumerate() {
        let n = song.bars();
        if n < BARS_PER_SAMPLE {
            continue;
        }
        let profile = novelty_profile(&song.song_id, &song.drums, config.peak_margin)?;
        let mut ranked = profile.peaks.clone();
        ranked.sort_by(|&a, &b| {
            let (va, vb) = (profile.values[a].unwrap_or(0.0), profile.values[b].unwrap_or(0.0));
            vb.total_cmp(&va).then(a.cmp(&b))
        });
        let cap = (config.positive_cap * n as f64 + 1e-9).floor() as usize;
        ranked.truncate(cap);

        let ex = config.negative_exclusion;
        let candidates: Vec<usize> = (CONTEXT..n - CONTEXT)
            .filter(|&b| profile.peaks.iter().all(|&p| b.abs_diff(p) > ex))
            .collect();
        let count = ranked.len().min(candidates.len());
        ranked.truncate(count);
        if count == 0 {
            continue;
        }
        let mut r = rng::stream(seed, &[si as u64]);
        let mut negatives: Vec<usize> = sample(&mut r, candidates.len(), count)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        negatives.sort_unstable();

        for (bars, positive) in [(&ranked, true), (&negatives, false)] {
            for &b in bars {
                out.entries.push(LocationEntry {
                    song_id: song.song_id.clone(),
                    bar: b,
                    positive,
                    ma: song.ma.window(b - CONTEXT)?,
                    pa: song.drums.window(b - CONTEXT)?,
                });
            }
        }
        out.per_song.push(SongCounts {
            song_id: song.song_id.clone(),
            bars: n,
            peaks: profile.peaks.len(),
            positives: count,
            negatives: count,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn groove() -> Bar {
        Bar::from_fn(|t, l| (l == 3 && t % 8 == 0) || (l == 0 && t % 16 == 8) || (l == 2 && t % 4 == 0))
    }

    fn fill() -> Bar {
        Bar::from_fn(|t, l| (6..=10).contains(&l) && t % 2 == 0)
    }

    #[test]
    fn dissimilarity_examples() {
        assert_eq!(bar_dissimilarity(&groove(), &groove(), 3.0), 0.0);
        assert_eq!(bar_dissimilarity(&groove(), &fill(), 1.0), 1.0);
        assert_eq!(bar_dissimilarity(&Bar::empty(), &Bar::empty(), 1.0), 0.0);
    }

    #[test]
    fn weights_shape() {
        let w = hann_weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(w[i], w[9 - i]);
        }
        for i in 5..9 {
            assert!(w[i] > w[i + 1]);
        }
        assert!((raw_hann(1) - 0.9330127).abs() < 1e-7);
    }

    #[test]
    fn novelty_value_examples() {
        let g = groove();
        assert_eq!(novelty_value(&[g; 11]), 0.0);
        let mut bars = [g; 11];
        bars[5] = fill();
        assert!((novelty_value(&bars) - 1.0).abs() < 1e-12);
        let mut half = [g; 11];
        for b in half.iter_mut().skip(6) {
            *b = fill();
        }
        assert!((novelty_value(&half) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn profile_finds_single_fill() {
        let mut bars = vec![groove(); 20];
        bars[9] = fill();
        let p = novelty_profile("s", &DrumTrack::from_bars(&bars), 0.1).unwrap();
        assert_eq!(p.peaks, vec![9]);
        assert!(p.values[..5].iter().all(Option::is_none));
        assert!(p.values[15..].iter().all(Option::is_none));
        let flat = novelty_profile("s", &DrumTrack::from_bars(&vec![groove(); 20]), 0.1).unwrap();
        assert!(flat.peaks.is_empty());
        assert!(flat.values.iter().flatten().all(|&v| v == 0.0));
        assert!(matches!(
            novelty_profile("s", &DrumTrack::from_bars(&vec![groove(); 10]), 0.1),
            Err(Error::SongTooShort { .. })
        ));
    }
}
