//! Training-time augmentation of MA and PA samples.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pianoroll::{MaSample, PaSample, MELODIC_TRACKS, SAMPLE_CELLS, SAMPLE_STEPS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub instrument_mask_frac: f64,
    pub timestep_mask_frac: f64,
    pub input_drop_frac: f64,
    pub drum_noise_max_density_delta: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            instrument_mask_frac: 0.4,
            timestep_mask_frac: 0.2,
            input_drop_frac: 0.2,
            drum_noise_max_density_delta: 0.01,
        }
    }
}

impl AugmentConfig {
    /// No augmentation at all.
    pub fn off() -> Self {
        Self {
            instrument_mask_frac: 0.0,
            timestep_mask_frac: 0.0,
            input_drop_frac: 0.0,
            drum_noise_max_density_delta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("instrument_mask_frac", self.instrument_mask_frac),
            ("timestep_mask_frac", self.timestep_mask_frac),
            ("input_drop_frac", self.input_drop_frac),
            ("drum_noise_max_density_delta", self.drum_noise_max_density_delta),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("augment.{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Largest number of cell flips that keeps the density change within
    /// the configured bound.
    pub fn max_drum_flips(&self) -> usize {
        (self.drum_noise_max_density_delta * SAMPLE_CELLS as f64 + 1e-9).floor() as usize
    }
}

/// Silence-encodes one instrument at every timestep.
pub fn mask_instrument(ma: &MaSample, which: usize) -> Result<MaSample> {
    if which >= MELODIC_TRACKS {
        return Err(Error::IndexOutOfRange {
            what: "instrument",
            index: which,
            size: MELODIC_TRACKS,
        });
    }
    let mut out = ma.clone();
    for t in 0..SAMPLE_STEPS {
        out.silence(t, which);
    }
    Ok(out)
}

/// Picks which instrument (if any) to mask: one draw `u`, and `u < frac`
/// masks instrument `⌊u / (frac / 4)⌋`.
pub fn choose_instrument_mask<R: Rng + ?Sized>(frac: f64, rng: &mut R) -> Option<usize> {
    let u: f64 = rng.gen();
    (u < frac).then(|| ((u / (frac / MELODIC_TRACKS as f64)) as usize).min(MELODIC_TRACKS - 1))
}

/// Silence-encodes `⌊frac · 352⌋` distinct timesteps across all instruments.
pub fn mask_timesteps<R: Rng + ?Sized>(ma: &MaSample, frac: f64, rng: &mut R) -> MaSample {
    let count = ((frac * SAMPLE_STEPS as f64) + 1e-9).floor() as usize;
    let mut out = ma.clone();
    for t in sample(rng, SAMPLE_STEPS, count.min(SAMPLE_STEPS)) {
        out.silence_step(t);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dropped {
    Nothing,
    Ma,
    Pa,
}

/// With probability `frac`, replaces one input (fair coin) by its silent
/// encoding.
pub fn drop_input<R: Rng + ?Sized>(ma: &MaSample, pa: &PaSample, frac: f64, rng: &mut R) -> (MaSample, PaSample, Dropped) {
    let u: f64 = rng.gen();
    if u >= frac {
        return (ma.clone(), pa.clone(), Dropped::Nothing);
    }
    if rng.gen::<bool>() {
        (MaSample::silent(), pa.clone(), Dropped::Ma)
    } else {
        (ma.clone(), PaSample::silent(), Dropped::Pa)
    }
}

/// Flips a uniform number of cells in `0..=max_flips` at uniform distinct
/// positions.
pub fn drum_noise<R: Rng + ?Sized>(pa: &PaSample, max_flips: usize, rng: &mut R) -> PaSample {
    let flips = rng.gen_range(0..=max_flips.min(SAMPLE_CELLS));
    let mut out = pa.clone();
    for cell in sample(rng, SAMPLE_CELLS, flips) {
        out.toggle(cell);
    }
    out
}

/// Instrument then timestep masking, as applied to every MA training input.
pub fn augment_ma<R: Rng + ?Sized>(ma: &MaSample, config: &AugmentConfig, rng: &mut R) -> MaSample {
    let masked = match choose_instrument_mask(config.instrument_mask_frac, rng) {
        Some(i) => mask_instrument(ma, i).expect("index below 4"),
        None => ma.clone(),
    };
    if config.timestep_mask_frac > 0.0 {
        mask_timesteps(&masked, config.timestep_mask_frac, rng)
    } else {
        masked
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn busy_ma() -> MaSample {
        let mut ma = MaSample::silent();
        for t in 0..SAMPLE_STEPS {
            for i in 0..4 {
                ma.set_velocity(t, i, (t * 7 + i) % 63, 90);
            }
        }
        ma
    }

    #[test]
    fn mask_guitar_only_touches_guitar() {
        let ma = busy_ma();
        let m = mask_instrument(&ma, 1).unwrap();
        for t in 0..SAMPLE_STEPS {
            assert!(m.is_instrument_silent(t, 1));
            for i in [0, 2, 3] {
                for p in 0..63 {
                    assert_eq!(m.velocity(t, i, p), ma.velocity(t, i, p));
                }
            }
        }
        assert_eq!(mask_instrument(&MaSample::silent(), 0).unwrap(), MaSample::silent());
        assert!(mask_instrument(&ma, 4).is_err());
    }

    #[test]
    fn timestep_mask_counts() {
        let ma = busy_ma();
        let mut r = rng::stream(1, &[]);
        assert_eq!(mask_timesteps(&ma, 0.0, &mut r), ma);
        let m = mask_timesteps(&ma, 0.2, &mut r);
        let masked = (0..SAMPLE_STEPS).filter(|&t| (0..4).all(|i| m.is_instrument_silent(t, i))).count();
        assert_eq!(masked, 70);
        assert_eq!(mask_timesteps(&ma, 1.0, &mut r), MaSample::silent());
    }

    #[test]
    fn drum_noise_stays_within_one_percent() {
        let cfg = AugmentConfig::default();
        assert_eq!(cfg.max_drum_flips(), 56);
        let mut r = rng::stream(2, &[]);
        let pa = PaSample::from_fn(|t, l| (t + l) % 5 == 0);
        for _ in 0..200 {
            let out = drum_noise(&pa, cfg.max_drum_flips(), &mut r);
            assert!((out.density() - pa.density()).abs() <= 0.01);
        }
        assert_eq!(drum_noise(&pa, 0, &mut r), pa);
    }
}
