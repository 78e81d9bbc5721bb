//! Serialized-grid tokens for drum samples.
//!
//! Each timestep becomes its active lane ids in ascending order (or
//! `SILENCE` when none are active) followed by `SHIFT`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pianoroll::{Lane, PaSample, LANES, SAMPLE_STEPS};

pub const VOCAB_SIZE: usize = 18;
pub const SILENCE: u8 = 16;
pub const SHIFT: u8 = 17;

/// Name of a token id, or `None` outside the vocabulary.
pub fn token_name(id: u8) -> Option<&'static str> {
    match id {
        SILENCE => Some("SILENCE"),
        SHIFT => Some("SHIFT"),
        _ => Lane::from_index(id as usize).map(Lane::name),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VocabEntry {
    pub id: u8,
    pub name: &'static str,
}

pub fn vocabulary() -> Vec<VocabEntry> {
    (0..VOCAB_SIZE as u8)
        .map(|id| VocabEntry {
            id,
            name: token_name(id).expect("dense ids"),
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq(pub Vec<u8>);

impl TokenSeq {
    pub fn ids(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_usize(&self) -> Vec<usize> {
        self.0.iter().map(|&t| t as usize).collect()
    }

    /// True when the sequence is exactly what `encode` would emit.
    pub fn is_canonical(&self) -> bool {
        let mut shifts = 0;
        let mut step: Vec<u8> = Vec::new();
        for &t in &self.0 {
            if t == SHIFT {
                let ok = match step.as_slice() {
                    [SILENCE] => true,
                    lanes => !lanes.is_empty() && lanes.windows(2).all(|w| w[0] < w[1]) && lanes.iter().all(|&l| (l as usize) < LANES),
                };
                if !ok {
                    return false;
                }
                shifts += 1;
                step.clear();
            } else if t as usize >= VOCAB_SIZE {
                return false;
            } else {
                step.push(t);
            }
        }
        shifts == SAMPLE_STEPS && step.is_empty()
    }
}

pub fn encode(pa: &PaSample) -> TokenSeq {
    let mut ids = Vec::with_capacity(2 * SAMPLE_STEPS + pa.onsets());
    for t in 0..SAMPLE_STEPS {
        let before = ids.len();
        ids.extend(
            pa.row(t)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 1)
                .map(|(l, _)| l as u8),
        );
        if ids.len() == before {
            ids.push(SILENCE);
        }
        ids.push(SHIFT);
    }
    TokenSeq(ids)
}

/// Permissive inverse of [`encode`]: unsorted or repeated lane tokens and
/// stray `SILENCE` tokens are accepted; missing trailing timesteps stay
/// empty. Lane tokens after the last `SHIFT` belong to the following
/// timestep, so they are kept only when that timestep exists.
pub fn decode(ids: &[u8]) -> Result<PaSample> {
    let mut pa = PaSample::silent();
    let mut t = 0usize;
    for &id in ids {
        match id {
            SHIFT => {
                t += 1;
                if t > SAMPLE_STEPS {
                    return Err(Error::TooManyShifts { max: SAMPLE_STEPS });
                }
            }
            SILENCE => {}
            lane if (lane as usize) < LANES => {
                if t < SAMPLE_STEPS {
                    pa.set(t, lane as usize, true);
                }
            }
            other => return Err(Error::TokenOutOfRange(other as usize)),
        }
    }
    Ok(pa)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silent_sample_is_silence_shift_pairs() {
        let seq = encode(&PaSample::silent());
        assert_eq!(seq.len(), 2 * SAMPLE_STEPS);
        assert!(seq.0.chunks(2).all(|c| c == [SILENCE, SHIFT]));
        assert!(seq.is_canonical());
        assert_eq!(decode(seq.ids()).unwrap(), PaSample::silent());
    }

    #[test]
    fn kick_and_snare_order() {
        let mut pa = PaSample::silent();
        pa.set(0, Lane::Kick.index(), true);
        pa.set(0, Lane::Snare.index(), true);
        assert_eq!(&encode(&pa).0[..3], &[0, 3, SHIFT]);
    }

    #[test]
    fn duplicates_collapse_and_overflow_errors() {
        let pa = decode(&[0, 0, SHIFT]).unwrap();
        assert!(pa.get(0, 0));
        assert_eq!(pa.onsets(), 1);
        let too_many = vec![SHIFT; SAMPLE_STEPS + 1];
        assert!(matches!(decode(&too_many), Err(Error::TooManyShifts { .. })));
        assert!(decode(&vec![SHIFT; SAMPLE_STEPS]).is_ok());
        assert!(matches!(decode(&[18]), Err(Error::TokenOutOfRange(18))));
    }

    #[test]
    fn vocabulary_is_dense() {
        let v = vocabulary();
        assert_eq!(v.len(), 18);
        assert_eq!(v[3].name, "kick");
        assert_eq!(v[17].name, "SHIFT");
    }
}
