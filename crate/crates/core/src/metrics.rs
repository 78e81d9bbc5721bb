//! Objective evaluation measures for generated drum tracks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::novelty::bar_dissimilarity;
use crate::pianoroll::{Bar, PaSample, BARS_PER_SAMPLE, LANES, STEPS_PER_BAR};

/// Share of all onsets that fall on each of the 32 timesteps of a bar.
pub fn onset_position_histogram(bars: &[Bar]) -> Result<[f64; STEPS_PER_BAR]> {
    let mut counts = [0usize; STEPS_PER_BAR];
    for bar in bars {
        for (t, c) in counts.iter_mut().enumerate() {
            *c += bar.row(t).iter().map(|&v| v as usize).sum::<usize>();
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(counts.map(|c| c as f64 / total as f64))
}

/// Number of lanes with at least one onset.
pub fn instrument_count(bar: &Bar) -> usize {
    (0..LANES).filter(|&l| (0..STEPS_PER_BAR).any(|t| bar.get(t, l))).count()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcDeviation {
    pub exact_match_frac: f64,
    pub within_1_frac: f64,
    pub bars: usize,
}

/// Compares instrument counts bar by bar across aligned samples.
pub fn ic_deviation_report(generated: &[PaSample], reference: &[PaSample]) -> Result<IcDeviation> {
    if generated.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: generated.len(),
            right: reference.len(),
        });
    }
    let gen: Vec<Bar> = generated.iter().flat_map(|s| s.bars()).collect();
    let refs: Vec<Bar> = reference.iter().flat_map(|s| s.bars()).collect();
    ic_deviation_bars(&gen, &refs)
}

pub fn ic_deviation_bars(generated: &[Bar], reference: &[Bar]) -> Result<IcDeviation> {
    if generated.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: generated.len(),
            right: reference.len(),
        });
    }
    if generated.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (mut exact, mut near) = (0usize, 0usize);
    for (g, r) in generated.iter().zip(reference) {
        let d = instrument_count(g).abs_diff(instrument_count(r));
        exact += (d == 0) as usize;
        near += (d <= 1) as usize;
    }
    let n = generated.len() as f64;
    Ok(IcDeviation {
        exact_match_frac: exact as f64 / n,
        within_1_frac: near as f64 / n,
        bars: generated.len(),
    })
}

/// Dissimilarity (k = 1) between each pair of consecutive bars.
pub fn pattern_consistency(sample: &PaSample) -> [f64; BARS_PER_SAMPLE - 1] {
    let bars = sample.bars();
    std::array::from_fn(|i| bar_dissimilarity(&bars[i], &bars[i + 1], 1.0))
}

/// Same as [`pattern_consistency`] over any run of bars.
pub fn pattern_consistency_bars(bars: &[Bar]) -> Vec<f64> {
    bars.windows(2).map(|w| bar_dissimilarity(&w[0], &w[1], 1.0)).collect()
}

/// `IC(bar) − IC(bar − 1)`.
pub fn ic_change(sample: &PaSample, bar_index: usize) -> Result<i64> {
    if bar_index == 0 || bar_index >= BARS_PER_SAMPLE {
        return Err(Error::IndexOutOfRange {
            what: "bar",
            index: bar_index,
            size: BARS_PER_SAMPLE,
        });
    }
    let cur = instrument_count(&sample.bar(bar_index)?);
    let prev = instrument_count(&sample.bar(bar_index - 1)?);
    Ok(cur as i64 - prev as i64)
}

/// `Σ_b min(p_b, q_b)`.
pub fn overlap_area(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::BinMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(p.iter().zip(q).map(|(a, b)| a.min(*b)).sum())
}

/// Normalized histograms of two value sets over shared equal-width bins
/// spanning the combined observed range.
pub fn shared_histograms(a: &[f64], b: &[f64], bins: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.is_empty() || b.is_empty() || bins == 0 {
        return Err(Error::EmptyInput);
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let hist = |xs: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in xs {
            let i = (((x - lo) / width) as usize).min(bins - 1);
            h[i] += 1.0;
        }
        let n = xs.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    };
    Ok((hist(a), hist(b)))
}

/// Precision, recall and F1 are `None` when their denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: f64,
    pub f1: Option<f64>,
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

impl ClassificationReport {
    pub fn degenerate(&self) -> bool {
        self.precision.is_none() || self.recall.is_none() || self.f1.is_none()
    }
}

pub fn classification_report(preds: &[bool], labels: &[bool]) -> Result<ClassificationReport> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(ClassificationReport {
        precision,
        recall,
        accuracy: (tp + tn) as f64 / preds.len() as f64,
        f1,
        true_pos: tp,
        false_pos: fp,
        true_neg: tn,
        false_neg: fn_,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_examples() {
        let mut b = Bar::empty();
        b.set(0, 0, true);
        let h = onset_position_histogram(&[b]).unwrap();
        assert_eq!(h[0], 1.0);
        assert!(h[1..].iter().all(|&v| v == 0.0));
        let u = onset_position_histogram(&[Bar::full()]).unwrap();
        assert!(u.iter().all(|&v| v == 1.0 / 32.0));
        let eighths = Bar::from_fn(|t, l| t % 4 == 0 && l == 2);
        let h = onset_position_histogram(&[eighths]).unwrap();
        assert!(h.iter().enumerate().all(|(t, &v)| (t % 4 == 0) == (v > 0.0)));
        assert!(matches!(onset_position_histogram(&[Bar::empty()]), Err(Error::EmptyInput)));
    }

    #[test]
    fn instrument_count_examples() {
        assert_eq!(instrument_count(&Bar::empty()), 0);
        assert_eq!(instrument_count(&Bar::full()), 16);
        let groove = Bar::from_fn(|t, l| matches!((l, t % 8), (0, 4) | (3, 0) | (2, _)));
        assert_eq!(instrument_count(&groove), 3);
    }

    #[test]
    fn ic_deviation_extra_lane() {
        let reference = vec![PaSample::from_fn(|t, l| l == 3 && t % 8 == 0); 2];
        let generated = vec![PaSample::from_fn(|t, l| (l == 3 || l == 5) && t % 8 == 0); 2];
        let r = ic_deviation_report(&generated, &reference).unwrap();
        assert_eq!((r.exact_match_frac, r.within_1_frac), (0.0, 1.0));
        let same = ic_deviation_report(&reference, &reference).unwrap();
        assert_eq!((same.exact_match_frac, same.within_1_frac), (1.0, 1.0));
        assert!(ic_deviation_report(&reference[..1], &reference).is_err());
    }

    #[test]
    fn consistency_and_ic_change() {
        let groove = Bar::from_fn(|t, l| l == 3 && t % 8 == 0);
        let fill = Bar::from_fn(|t, l| (l == 7 || l == 8) && t % 2 == 0);
        let mut bars = [groove; 11];
        assert!(pattern_consistency(&PaSample::from_bars(&bars)).iter().all(|&d| d == 0.0));
        bars[4] = fill;
        let s = PaSample::from_bars(&bars);
        assert_eq!(pattern_consistency(&s).iter().filter(|&&d| d > 0.0).count(), 2);
        assert_eq!(ic_change(&s, 4).unwrap(), 1);
        assert_eq!(ic_change(&s, 2).unwrap(), 0);
        assert!(ic_change(&s, 0).is_err());
        let alt: [Bar; 11] = std::array::from_fn(|i| if i % 2 == 0 { groove } else { fill });
        assert!(pattern_consistency(&PaSample::from_bars(&alt)).iter().all(|&d| d == 1.0));
        let mut plus_two = groove;
        plus_two.set(0, 6, true);
        plus_two.set(0, 7, true);
        let mut bars = [groove; 11];
        bars[6] = plus_two;
        assert_eq!(ic_change(&PaSample::from_bars(&bars), 6).unwrap(), 2);
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap_area(&[0.5, 0.5, 0.0], &[0.25, 0.25, 0.5]).unwrap(), 0.5);
        assert_eq!(overlap_area(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(overlap_area(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 1.0);
        assert!(matches!(overlap_area(&[1.0], &[0.5, 0.5]), Err(Error::BinMismatch { .. })));
    }

    #[test]
    fn classification_examples() {
        let labels = [true, false, true, false];
        let perfect = classification_report(&labels, &labels).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.accuracy, perfect.f1), (Some(1.0), Some(1.0), 1.0, Some(1.0)));
        let all_pos = classification_report(&[true; 4], &labels).unwrap();
        assert_eq!(all_pos.precision, Some(0.5));
        assert_eq!(all_pos.recall, Some(1.0));
        assert_eq!(all_pos.accuracy, 0.5);
        assert!((all_pos.f1.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let none = classification_report(&[false; 4], &labels).unwrap();
        assert!(none.precision.is_none() && none.degenerate());
    }
}
