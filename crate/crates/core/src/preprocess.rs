//! Raw song → aligned (MA, PA) training pairs.
//!
//! The steps run in order: pad to whole bars, trim silent edge bars,
//! resample 24 → 8 steps per beat, crop melodic pitches to 21–83, merge
//! percussion pitches into 16 lanes, binarize, and cut 11-bar windows.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pianoroll::{
    DrumTrack, Lane, MaSample, MaTrack, MultiTrackPianoroll, PaSample, Roll, BARS_PER_SAMPLE, BEATS_PER_BAR,
    CROPPED_PITCHES, LANES, LOWEST_PITCH, PITCHES, RAW_RESOLUTION, RESOLUTION, STEPS_PER_BAR,
};

/// Assignment of MIDI percussion pitches to lanes. Unlisted pitches are
/// discarded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PercussionMergeMap {
    table: [Option<Lane>; PITCHES],
}

impl Default for PercussionMergeMap {
    fn default() -> Self {
        Self::general_midi()
    }
}

impl PercussionMergeMap {
    /// General-MIDI families for the sixteen lanes.
    pub fn general_midi() -> Self {
        use Lane::*;
        let lanes: [(Lane, &[u8]); LANES] = [
            (Snare, &[38, 40]),
            (OpenHiHat, &[46]),
            (ClosedHiHat, &[42]),
            (Kick, &[35, 36]),
            (Ride, &[51, 59]),
            (Crash, &[49, 57]),
            (LowFloorTom, &[41]),
            (HighFloorTom, &[43]),
            (HighTom, &[50]),
            (HiMidTom, &[48, 47]),
            (LowTom, &[45]),
            (Cowbell, &[56]),
            (PedalHiHat, &[44]),
            (Tambourine, &[54]),
            (Cabasa, &[69]),
            (Maracas, &[70]),
        ];
        Self::from_lanes(lanes.iter().map(|(l, p)| (*l, p.to_vec()))).expect("default map is valid")
    }

    /// Every lane needs at least one pitch and no pitch may feed two lanes.
    pub fn from_lanes(lanes: impl IntoIterator<Item = (Lane, Vec<u8>)>) -> Result<Self> {
        let mut table = [None; PITCHES];
        for (lane, pitches) in lanes {
            for p in pitches {
                let slot = table
                    .get_mut(p as usize)
                    .ok_or_else(|| Error::InvalidMergeMap(format!("pitch {p} is not a MIDI pitch")))?;
                if let Some(prev) = *slot {
                    return Err(Error::InvalidMergeMap(format!(
                        "pitch {p} assigned to both {} and {}",
                        Lane::name(prev),
                        lane.name()
                    )));
                }
                *slot = Some(lane);
            }
        }
        let map = Self { table };
        for lane in Lane::ALL {
            if map.sources(lane).is_empty() {
                return Err(Error::InvalidMergeMap(format!("lane {} has no source pitch", lane.name())));
            }
        }
        Ok(map)
    }

    pub fn lane_of(&self, pitch: u8) -> Option<Lane> {
        self.table.get(pitch as usize).copied().flatten()
    }

    /// Source pitches of a lane, in ascending order.
    pub fn sources(&self, lane: Lane) -> Vec<u8> {
        (0..PITCHES as u8).filter(|&p| self.table[p as usize] == Some(lane)).collect()
    }

    /// Pitch used when writing a lane back to a MIDI-style roll.
    pub fn representative_pitch(&self, lane: Lane) -> u8 {
        let general = Self::general_midi();
        let preferred = general.sources(lane);
        preferred
            .into_iter()
            .find(|&p| self.lane_of(p) == Some(lane))
            .unwrap_or_else(|| self.sources(lane)[0])
    }

    pub fn to_json(&self) -> serde_json::Value {
        let map: BTreeMap<&str, Vec<u8>> = Lane::ALL.iter().map(|&l| (l.name(), self.sources(l))).collect();
        serde_json::to_value(map).expect("map serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let raw: BTreeMap<String, Vec<u8>> = serde_json::from_value(value.clone())?;
        let mut lanes = Vec::with_capacity(raw.len());
        for (name, pitches) in raw {
            let lane = Lane::from_name(&name).ok_or_else(|| Error::InvalidMergeMap(format!("unknown lane {name:?}")))?;
            lanes.push((lane, pitches));
        }
        Self::from_lanes(lanes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Zero-pads a trailing partial bar.
pub fn pad_to_whole_bars(song: &MultiTrackPianoroll) -> MultiTrackPianoroll {
    let spb = song.steps_per_bar();
    let target = song.steps().next_multiple_of(spb);
    if target == song.steps() {
        return song.clone();
    }
    song.map_tracks(song.resolution(), |r| r.slice_steps(0, target))
}

/// Removes leading and trailing bars in which every track is silent.
pub fn trim_silence(song: &MultiTrackPianoroll) -> Result<MultiTrackPianoroll> {
    let song = pad_to_whole_bars(song);
    let spb = song.steps_per_bar();
    let bars = song.bars();
    let silent = |b: usize| song.tracks().all(|r| r.is_silent(b * spb, (b + 1) * spb));
    let first = (0..bars).find(|&b| !silent(b)).ok_or(Error::EmptySong)?;
    let last = (0..bars).rev().find(|&b| !silent(b)).expect("a non-silent bar exists");
    Ok(song.map_tracks(song.resolution(), |r| r.slice_steps(first * spb, (last + 1) * spb)))
}

/// 24 → 8 steps per beat; each output cell is the max of its three source
/// cells, so no onset is lost.
pub fn resample_to_8(song: &MultiTrackPianoroll) -> Result<MultiTrackPianoroll> {
    if song.resolution() != RAW_RESOLUTION {
        return Err(Error::BadResolution {
            expected: RAW_RESOLUTION,
            found: song.resolution(),
        });
    }
    let factor = (RAW_RESOLUTION / RESOLUTION) as usize;
    Ok(song.map_tracks(RESOLUTION, |r| {
        let steps = r.steps().div_ceil(factor);
        let mut out = Roll::silent(steps, r.lowest_pitch(), r.pitches());
        for t in 0..r.steps() {
            let dst = out.row_mut(t / factor);
            for (d, &s) in dst.iter_mut().zip(r.row(t)) {
                *d = (*d).max(s);
            }
        }
        out
    }))
}

/// Keeps melodic pitches 21–83; percussion is untouched.
pub fn crop_pitches(song: &MultiTrackPianoroll) -> MultiTrackPianoroll {
    song.map_melodic(|r| {
        let mut out = Roll::silent(r.steps(), LOWEST_PITCH, CROPPED_PITCHES);
        for t in 0..r.steps() {
            for c in 0..CROPPED_PITCHES {
                let p = LOWEST_PITCH + c as u8;
                out.set_velocity(t, p, r.velocity(t, p));
            }
        }
        out
    })
}

/// Percussion velocities folded into `steps × 16` lanes by max.
pub fn merge_percussion(song: &MultiTrackPianoroll, map: &PercussionMergeMap) -> Vec<u8> {
    let perc = song.percussion();
    let mut out = vec![0u8; perc.steps() * LANES];
    for t in 0..perc.steps() {
        for (c, &v) in perc.row(t).iter().enumerate() {
            if v == 0 {
                continue;
            }
            if let Some(lane) = map.lane_of(perc.lowest_pitch() + c as u8) {
                let cell = &mut out[t * LANES + lane.index()];
                *cell = (*cell).max(v);
            }
        }
    }
    out
}

pub fn binarize(cells: &[u8]) -> Vec<u8> {
    cells.iter().map(|&v| (v > 0) as u8).collect()
}

/// A song after every step except segmentation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedSong {
    pub song_id: String,
    pub ma: MaTrack,
    pub drums: DrumTrack,
}

impl PreparedSong {
    pub fn bars(&self) -> usize {
        self.drums.bars()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub song_id: String,
    pub raw_steps: usize,
    pub raw_bars: usize,
    pub trimmed_leading_bars: usize,
    pub trimmed_trailing_bars: usize,
    pub kept_bars: usize,
    pub segments: usize,
    pub discarded_tail_bars: usize,
}

/// Runs every step up to binarization.
pub fn prepare(song_id: &str, song: &MultiTrackPianoroll, map: &PercussionMergeMap) -> Result<(PreparedSong, PreprocessReport)> {
    let padded = pad_to_whole_bars(song);
    let trimmed = trim_silence(&padded)?;
    let spb = padded.steps_per_bar();
    let leading = {
        let silent = |b: usize| padded.tracks().all(|r| r.is_silent(b * spb, (b + 1) * spb));
        (0..padded.bars()).take_while(|&b| silent(b)).count()
    };
    let resampled = if trimmed.resolution() == RESOLUTION {
        trimmed
    } else {
        resample_to_8(&trimmed)?
    };
    let cropped = crop_pitches(&resampled);
    let lanes = binarize(&merge_percussion(&cropped, map));
    let drums = DrumTrack::from_cells(cropped.steps(), &lanes)?;
    let ma = MaTrack::from_rolls(cropped.melodic())?;
    let kept = drums.bars();
    let report = PreprocessReport {
        song_id: song_id.to_string(),
        raw_steps: song.steps(),
        raw_bars: padded.bars(),
        trimmed_leading_bars: leading,
        trimmed_trailing_bars: padded.bars() - kept - leading,
        kept_bars: kept,
        segments: kept / BARS_PER_SAMPLE,
        discarded_tail_bars: kept % BARS_PER_SAMPLE,
    };
    debug_assert_eq!(STEPS_PER_BAR, RESOLUTION as usize * BEATS_PER_BAR);
    Ok((
        PreparedSong {
            song_id: song_id.to_string(),
            ma,
            drums,
        },
        report,
    ))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplePair {
    pub ma: MaSample,
    pub pa: PaSample,
    pub song_id: String,
    pub segment_index: usize,
}

/// Non-overlapping 11-bar windows; remainder bars are dropped.
pub fn segment_11_bars(song: &PreparedSong) -> Vec<SamplePair> {
    (0..song.bars() / BARS_PER_SAMPLE)
        .map(|i| SamplePair {
            ma: song.ma.window(i * BARS_PER_SAMPLE).expect("window in range"),
            pa: song.drums.window(i * BARS_PER_SAMPLE).expect("window in range"),
            song_id: song.song_id.clone(),
            segment_index: i,
        })
        .collect()
}
