//! Synthetic songs with a known fill structure.
//!
//! Each song repeats one drum groove and closes every 16-bar section with
//! a tom fill. The melodic tracks change chord at section starts and play a
//! distinctive break figure under each fill, so fill bars can be recognised
//! from the accompaniment alone.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::pianoroll::{Bar, DrumTrack, Lane, MultiTrackPianoroll, Roll, BEATS_PER_BAR, LANES, RAW_RESOLUTION, STEPS_PER_BAR};
use crate::preprocess::PercussionMergeMap;
use crate::rng::{self, Rng};

pub const SECTION_BARS: usize = 16;
const VELOCITY: u8 = 100;
const RAW_PER_STEP: usize = RAW_RESOLUTION as usize * BEATS_PER_BAR / STEPS_PER_BAR;

const GROOVE_LANES: [Lane; 5] = [Lane::Kick, Lane::Snare, Lane::ClosedHiHat, Lane::Ride, Lane::PedalHiHat];
const FILL_LANES: [Lane; 6] = [
    Lane::Crash,
    Lane::HighTom,
    Lane::HiMidTom,
    Lane::LowTom,
    Lane::HighFloorTom,
    Lane::LowFloorTom,
];

/// A steady one-bar pattern using only kick, snare and cymbal lanes.
pub fn random_groove(r: &mut Rng) -> Bar {
    const KICKS: [&[usize]; 4] = [&[0, 16], &[0, 12, 16], &[0, 6, 16, 22], &[0, 10, 20]];
    let kick = KICKS.choose(r).expect("non-empty");
    let cymbal = if r.gen_bool(0.5) { Lane::ClosedHiHat } else { Lane::Ride };
    let cymbal_every = *[2usize, 4, 8].choose(r).expect("non-empty");
    let ghost = r.gen_bool(0.3);
    let pedal = r.gen_bool(0.3);
    let mut bar = Bar::empty();
    for &t in kick.iter() {
        bar.set(t, Lane::Kick.index(), true);
    }
    for t in [8, 24] {
        bar.set(t, Lane::Snare.index(), true);
    }
    if ghost {
        bar.set(30, Lane::Snare.index(), true);
    }
    for t in (0..STEPS_PER_BAR).step_by(cymbal_every) {
        bar.set(t, cymbal.index(), true);
    }
    if pedal {
        for t in [8, 24] {
            bar.set(t, Lane::PedalHiHat.index(), true);
        }
    }
    debug_assert!((0..STEPS_PER_BAR).all(|t| (0..LANES).all(|l| !bar.get(t, l) || GROOVE_LANES.iter().any(|g| g.index() == l))));
    bar
}

/// A tom run on lanes the groove never uses, so fills and grooves are
/// disjoint.
pub fn random_fill(r: &mut Rng) -> Bar {
    let mut bar = Bar::empty();
    let start = *[0usize, 8, 16].choose(r).expect("non-empty");
    let every = *[2usize, 4].choose(r).expect("non-empty");
    let toms = &FILL_LANES[1..];
    for (k, t) in (start..STEPS_PER_BAR).step_by(every).enumerate() {
        bar.set(t, toms[(k * toms.len() * every) / (STEPS_PER_BAR - start)].index(), true);
    }
    bar.set(0, Lane::Crash.index(), true);
    bar
}

/// Bars `SECTION_BARS - 1`, `2 · SECTION_BARS - 1`, ... below `bars`.
pub fn section_fill_bars(bars: usize) -> Vec<usize> {
    (SECTION_BARS - 1..bars).step_by(SECTION_BARS).collect()
}

/// A track repeating `groove` with `fill` at each listed bar.
pub fn drum_track(bars: usize, groove: &Bar, fill: &Bar, fills: &[usize]) -> DrumTrack {
    let all: Vec<Bar> = (0..bars).map(|b| if fills.contains(&b) { *fill } else { *groove }).collect();
    DrumTrack::from_bars(&all)
}

#[derive(Clone, Debug)]
pub struct SynthSong {
    pub song_id: String,
    pub song: MultiTrackPianoroll,
    pub fill_bars: Vec<usize>,
}

/// Chord roots (MIDI) for the sections; bass sits an octave lower.
const ROOTS: [u8; 6] = [48, 50, 52, 53, 55, 57];

fn put(roll: &mut Roll, bar: usize, step: usize, len: usize, pitch: u8) {
    let start = (bar * STEPS_PER_BAR + step) * RAW_PER_STEP;
    for t in start..start + len * RAW_PER_STEP {
        roll.set_velocity(t, pitch, VELOCITY);
    }
}

/// Song `index` of the corpus for `seed`, at the raw resolution.
pub fn synth_song(index: usize, bars: usize, seed: u64) -> SynthSong {
    let mut r = rng::stream(seed, &[0x5e7, index as u64]);
    let groove = random_groove(&mut r);
    let fill = random_fill(&mut r);
    let fills = section_fill_bars(bars);
    let sections = bars.div_ceil(SECTION_BARS);
    let mut roots: Vec<u8> = Vec::with_capacity(sections);
    for s in 0..sections {
        let mut root = *ROOTS.choose(&mut r).expect("non-empty");
        while s > 0 && root == roots[s - 1] {
            root = *ROOTS.choose(&mut r).expect("non-empty");
        }
        roots.push(root);
    }
    let minor = r.gen_bool(0.5);
    let strum_every = 8;

    let steps = bars * STEPS_PER_BAR * RAW_PER_STEP;
    let mut song = MultiTrackPianoroll::silent(steps, RAW_RESOLUTION);
    let map = PercussionMergeMap::general_midi();
    for b in 0..bars {
        let root = roots[b / SECTION_BARS];
        let third = root + if minor { 3 } else { 4 };
        let chord = [root, third, root + 7];
        let [piano, guitar, bass, strings] = song.melodic_mut();
        if fills.contains(&b) {
            // Break figure: one stab, a rising bass run and a high string.
            for &p in &chord {
                put(piano, b, 0, 2, p + 12);
            }
            for k in 0..8 {
                put(bass, b, 16 + 2 * k, 2, root - 12 + [0, 2, 4, 5, 7, 9, 11, 12][k]);
            }
            put(strings, b, 0, STEPS_PER_BAR, root + 24);
        } else {
            for beat in 0..BEATS_PER_BAR {
                for &p in &chord {
                    put(piano, b, beat * 8, 6, p);
                }
            }
            for t in (0..STEPS_PER_BAR).step_by(strum_every) {
                for &p in &chord {
                    put(guitar, b, t, strum_every / 2, p - 12);
                }
            }
            put(bass, b, 0, 14, root - 12);
            put(bass, b, 16, 14, root - 12);
            for &p in &chord {
                put(strings, b, 0, STEPS_PER_BAR, p + 12);
            }
        }
        let bar = if fills.contains(&b) { &fill } else { &groove };
        for t in 0..STEPS_PER_BAR {
            for lane in Lane::ALL {
                if bar.get(t, lane.index()) {
                    let start = (b * STEPS_PER_BAR + t) * RAW_PER_STEP;
                    song.percussion_mut().set_velocity(start, map.representative_pitch(lane), VELOCITY);
                }
            }
        }
    }
    SynthSong {
        song_id: format!("synth{index:04}"),
        song,
        fill_bars: fills,
    }
}

pub fn synth_corpus(songs: usize, bars: usize, seed: u64) -> Vec<SynthSong> {
    (0..songs).map(|i| synth_song(i, bars, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::novelty::novelty_profile;
    use crate::preprocess::prepare;

    #[test]
    fn grooves_and_fills_are_disjoint() {
        let mut r = rng::stream(3, &[]);
        for _ in 0..50 {
            let g = random_groove(&mut r);
            let f = random_fill(&mut r);
            assert!(!g.is_silent() && !f.is_silent());
            assert!(g.cells().iter().zip(f.cells()).all(|(&a, &b)| a & b == 0));
        }
    }

    #[test]
    fn prepared_song_keeps_structure_and_peaks_match_fills() {
        for i in 0..5 {
            let s = synth_song(i, 32, 11);
            let (prep, report) = prepare(&s.song_id, &s.song, &PercussionMergeMap::general_midi()).unwrap();
            assert_eq!(prep.bars(), 32);
            assert_eq!(report.trimmed_leading_bars, 0);
            let fill = prep.drums.bar(15).unwrap();
            assert_eq!(prep.drums.bar(31).unwrap(), fill);
            assert_ne!(prep.drums.bar(14).unwrap(), fill);
            let profile = novelty_profile(&s.song_id, &prep.drums, 0.1).unwrap();
            let expected: Vec<usize> = s.fill_bars.iter().copied().filter(|&b| (6..=32 - 7).contains(&b)).collect();
            assert_eq!(profile.peaks, expected);
        }
    }

    #[test]
    fn corpus_is_reproducible() {
        let a = synth_corpus(3, 16, 5);
        let b = synth_corpus(3, 16, 5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.song, y.song);
        }
        assert_ne!(a[0].song, a[1].song);
    }
}
