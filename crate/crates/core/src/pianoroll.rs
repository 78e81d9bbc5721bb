//! Pianoroll data types and bar arithmetic.
//!
//! Raw songs are [`MultiTrackPianoroll`] values: four melodic velocity
//! matrices and one percussion matrix on a shared time grid. Preprocessing
//! turns them into a binary 16-lane [`DrumTrack`] plus a melodic
//! [`MaTrack`], from which fixed 11-bar [`PaSample`] / [`MaSample`] windows
//! are cut.

use drumsmith_nn::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BEATS_PER_BAR: usize = 4;
pub const RAW_RESOLUTION: u32 = 24;
pub const RESOLUTION: u32 = 8;
pub const STEPS_PER_BAR: usize = 32;
pub const BARS_PER_SAMPLE: usize = 11;
/// Index of the middle bar of an 11-bar window.
pub const CENTER_BAR: usize = 5;
pub const SAMPLE_STEPS: usize = BARS_PER_SAMPLE * STEPS_PER_BAR;
pub const LANES: usize = 16;
pub const BAR_CELLS: usize = STEPS_PER_BAR * LANES;
pub const SAMPLE_CELLS: usize = SAMPLE_STEPS * LANES;
pub const PITCHES: usize = 128;
pub const LOWEST_PITCH: u8 = 21;
pub const HIGHEST_PITCH: u8 = 83;
pub const CROPPED_PITCHES: usize = (HIGHEST_PITCH - LOWEST_PITCH + 1) as usize;
pub const MELODIC_TRACKS: usize = 4;
/// Feature width of one instrument block: a silence bit plus 63 pitches.
pub const INSTRUMENT_BLOCK: usize = 1 + CROPPED_PITCHES;
pub const MA_FEATURES: usize = MELODIC_TRACKS * INSTRUMENT_BLOCK;
pub const MAX_VELOCITY: u8 = 127;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instrument {
    Piano,
    Guitar,
    Bass,
    Strings,
}

impl Instrument {
    pub const ALL: [Instrument; MELODIC_TRACKS] =
        [Instrument::Piano, Instrument::Guitar, Instrument::Bass, Instrument::Strings];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Instrument::Piano => "piano",
            Instrument::Guitar => "guitar",
            Instrument::Bass => "bass",
            Instrument::Strings => "strings",
        }
    }
}

/// The sixteen percussion lanes, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lane {
    Snare,
    OpenHiHat,
    ClosedHiHat,
    Kick,
    Ride,
    Crash,
    LowFloorTom,
    HighFloorTom,
    HighTom,
    HiMidTom,
    LowTom,
    Cowbell,
    PedalHiHat,
    Tambourine,
    Cabasa,
    Maracas,
}

impl Lane {
    pub const ALL: [Lane; LANES] = [
        Lane::Snare,
        Lane::OpenHiHat,
        Lane::ClosedHiHat,
        Lane::Kick,
        Lane::Ride,
        Lane::Crash,
        Lane::LowFloorTom,
        Lane::HighFloorTom,
        Lane::HighTom,
        Lane::HiMidTom,
        Lane::LowTom,
        Lane::Cowbell,
        Lane::PedalHiHat,
        Lane::Tambourine,
        Lane::Cabasa,
        Lane::Maracas,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Lane> {
        Lane::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Lane::Snare => "snare",
            Lane::OpenHiHat => "open_hi_hat",
            Lane::ClosedHiHat => "closed_hi_hat",
            Lane::Kick => "kick",
            Lane::Ride => "ride",
            Lane::Crash => "crash",
            Lane::LowFloorTom => "low_floor_tom",
            Lane::HighFloorTom => "high_floor_tom",
            Lane::HighTom => "high_tom",
            Lane::HiMidTom => "hi_mid_tom",
            Lane::LowTom => "low_tom",
            Lane::Cowbell => "cowbell",
            Lane::PedalHiHat => "pedal_hi_hat",
            Lane::Tambourine => "tambourine",
            Lane::Cabasa => "cabasa",
            Lane::Maracas => "maracas",
        }
    }

    pub fn from_name(name: &str) -> Option<Lane> {
        Lane::ALL.iter().copied().find(|l| l.name() == name)
    }
}

/// Velocity matrix of one track. Row `t` is a timestep; column `c` is MIDI
/// pitch `lowest_pitch + c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Roll {
    steps: usize,
    lowest_pitch: u8,
    pitches: usize,
    data: Vec<u8>,
}

impl Roll {
    pub fn silent(steps: usize, lowest_pitch: u8, pitches: usize) -> Self {
        Self {
            steps,
            lowest_pitch,
            pitches,
            data: vec![0; steps * pitches],
        }
    }

    /// Full 128-pitch roll.
    pub fn full_range(steps: usize) -> Self {
        Self::silent(steps, 0, PITCHES)
    }

    pub fn from_data(steps: usize, lowest_pitch: u8, pitches: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != steps * pitches {
            return Err(Error::TrackLengthMismatch {
                track: "roll".into(),
                what: "cells",
                found: data.len(),
                expected: steps * pitches,
            });
        }
        Ok(Self {
            steps,
            lowest_pitch,
            pitches,
            data,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn pitches(&self) -> usize {
        self.pitches
    }

    pub fn lowest_pitch(&self) -> u8 {
        self.lowest_pitch
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[u8] {
        &self.data[t * self.pitches..(t + 1) * self.pitches]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [u8] {
        &mut self.data[t * self.pitches..(t + 1) * self.pitches]
    }

    /// Velocity of MIDI `pitch` at step `t`; 0 for pitches outside the roll.
    pub fn velocity(&self, t: usize, pitch: u8) -> u8 {
        match self.column(pitch) {
            Some(c) => self.data[t * self.pitches + c],
            None => 0,
        }
    }

    /// Sets the velocity of MIDI `pitch`; pitches outside the roll are ignored.
    pub fn set_velocity(&mut self, t: usize, pitch: u8, velocity: u8) {
        if let Some(c) = self.column(pitch) {
            self.data[t * self.pitches + c] = velocity;
        }
    }

    fn column(&self, pitch: u8) -> Option<usize> {
        let c = pitch.checked_sub(self.lowest_pitch)? as usize;
        (c < self.pitches).then_some(c)
    }

    pub fn is_silent(&self, from: usize, to: usize) -> bool {
        self.data[from * self.pitches..to * self.pitches].iter().all(|&v| v == 0)
    }

    /// Rows `from..to`, zero-filled past the end of the roll.
    pub fn slice_steps(&self, from: usize, to: usize) -> Roll {
        let mut out = Roll::silent(to - from, self.lowest_pitch, self.pitches);
        let avail = self.steps.min(to);
        if avail > from {
            out.data[..(avail - from) * self.pitches]
                .copy_from_slice(&self.data[from * self.pitches..avail * self.pitches]);
        }
        out
    }
}

/// A song: four melodic tracks and one percussion track on one time grid,
/// always in 4/4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiTrackPianoroll {
    melodic: [Roll; MELODIC_TRACKS],
    percussion: Roll,
    resolution: u32,
}

pub(crate) const TRACK_NAMES: [&str; 5] = ["piano", "guitar", "bass", "strings", "percussion"];

impl MultiTrackPianoroll {
    /// Validates shared length and velocity range.
    pub fn new(melodic: [Roll; MELODIC_TRACKS], percussion: Roll, resolution: u32) -> Result<Self> {
        let steps = percussion.steps;
        for (i, roll) in melodic.iter().chain(std::iter::once(&percussion)).enumerate() {
            if roll.steps != steps {
                return Err(Error::TrackLengthMismatch {
                    track: TRACK_NAMES[i].into(),
                    what: "timesteps",
                    found: roll.steps,
                    expected: steps,
                });
            }
            if let Some(offset) = roll.data.iter().position(|&v| v > MAX_VELOCITY) {
                return Err(Error::VelocityOutOfRange {
                    track: TRACK_NAMES[i].into(),
                    offset,
                    value: roll.data[offset],
                });
            }
        }
        if resolution == 0 {
            return Err(Error::BadResolution {
                expected: RAW_RESOLUTION,
                found: 0,
            });
        }
        Ok(Self {
            melodic,
            percussion,
            resolution,
        })
    }

    pub fn silent(steps: usize, resolution: u32) -> Self {
        Self {
            melodic: std::array::from_fn(|_| Roll::full_range(steps)),
            percussion: Roll::full_range(steps),
            resolution,
        }
    }

    pub fn melodic(&self) -> &[Roll; MELODIC_TRACKS] {
        &self.melodic
    }

    pub fn melodic_mut(&mut self) -> &mut [Roll; MELODIC_TRACKS] {
        &mut self.melodic
    }

    pub fn track(&self, instrument: Instrument) -> &Roll {
        &self.melodic[instrument.index()]
    }

    pub fn percussion(&self) -> &Roll {
        &self.percussion
    }

    pub fn percussion_mut(&mut self) -> &mut Roll {
        &mut self.percussion
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn beats_per_bar(&self) -> usize {
        BEATS_PER_BAR
    }

    pub fn steps(&self) -> usize {
        self.percussion.steps
    }

    pub fn steps_per_bar(&self) -> usize {
        self.resolution as usize * BEATS_PER_BAR
    }

    /// Number of bars, counting a trailing partial bar as one.
    pub fn bars(&self) -> usize {
        self.steps().div_ceil(self.steps_per_bar())
    }

    pub fn tracks(&self) -> impl Iterator<Item = &Roll> {
        self.melodic.iter().chain(std::iter::once(&self.percussion))
    }

    pub(crate) fn map_tracks(&self, resolution: u32, f: impl Fn(&Roll) -> Roll) -> Self {
        Self {
            melodic: std::array::from_fn(|i| f(&self.melodic[i])),
            percussion: f(&self.percussion),
            resolution,
        }
    }

    pub(crate) fn map_melodic(&self, f: impl Fn(&Roll) -> Roll) -> Self {
        Self {
            melodic: std::array::from_fn(|i| f(&self.melodic[i])),
            percussion: self.percussion.clone(),
            resolution: self.resolution,
        }
    }
}

/// One bar of drums: 32 timesteps × 16 binary lanes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bar {
    grid: [u8; BAR_CELLS],
}

impl std::fmt::Debug for Bar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Bar [")?;
        for t in 0..STEPS_PER_BAR {
            let row: String = self.row(t).iter().map(|&v| if v == 1 { 'x' } else { '.' }).collect();
            writeln!(f, "  {row}")?;
        }
        write!(f, "]")
    }
}

impl Default for Bar {
    fn default() -> Self {
        Self::empty()
    }
}

impl Bar {
    pub fn empty() -> Self {
        Self { grid: [0; BAR_CELLS] }
    }

    pub fn full() -> Self {
        Self { grid: [1; BAR_CELLS] }
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bar = Self::empty();
        for t in 0..STEPS_PER_BAR {
            for l in 0..LANES {
                bar.grid[t * LANES + l] = f(t, l) as u8;
            }
        }
        bar
    }

    /// Builds a bar from 512 cells; any nonzero value counts as an onset.
    pub fn from_cells(cells: &[u8]) -> Result<Self> {
        if cells.len() != BAR_CELLS {
            return Err(Error::LengthMismatch {
                left: cells.len(),
                right: BAR_CELLS,
            });
        }
        let mut bar = Self::empty();
        for (dst, &src) in bar.grid.iter_mut().zip(cells) {
            *dst = (src != 0) as u8;
        }
        Ok(bar)
    }

    pub fn cells(&self) -> &[u8; BAR_CELLS] {
        &self.grid
    }

    pub fn get(&self, t: usize, lane: usize) -> bool {
        self.grid[t * LANES + lane] == 1
    }

    pub fn set(&mut self, t: usize, lane: usize, on: bool) {
        self.grid[t * LANES + lane] = on as u8;
    }

    pub fn row(&self, t: usize) -> &[u8] {
        &self.grid[t * LANES..(t + 1) * LANES]
    }

    pub fn onsets(&self) -> usize {
        bar_l1_norm(self)
    }

    pub fn is_silent(&self) -> bool {
        self.grid.iter().all(|&v| v == 0)
    }

    pub fn density(&self) -> f64 {
        self.onsets() as f64 / BAR_CELLS as f64
    }
}

/// Number of onsets in a bar.
pub fn bar_l1_norm(bar: &Bar) -> usize {
    bar.grid.iter().map(|&v| v as usize).sum()
}

/// Binary `steps × 16` drum grid for a whole song.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DrumTrack {
    steps: usize,
    grid: Vec<u8>,
}

impl DrumTrack {
    pub fn silent(bars: usize) -> Self {
        Self {
            steps: bars * STEPS_PER_BAR,
            grid: vec![0; bars * BAR_CELLS],
        }
    }

    /// Builds a track from `steps × 16` cells, treating nonzero as an onset.
    /// Steps must be a whole number of bars.
    pub fn from_cells(steps: usize, cells: &[u8]) -> Result<Self> {
        if cells.len() != steps * LANES || steps % STEPS_PER_BAR != 0 {
            return Err(Error::LengthMismatch {
                left: cells.len(),
                right: steps.next_multiple_of(STEPS_PER_BAR) * LANES,
            });
        }
        Ok(Self {
            steps,
            grid: cells.iter().map(|&v| (v != 0) as u8).collect(),
        })
    }

    pub fn from_bars(bars: &[Bar]) -> Self {
        let mut grid = Vec::with_capacity(bars.len() * BAR_CELLS);
        for b in bars {
            grid.extend_from_slice(&b.grid);
        }
        Self {
            steps: bars.len() * STEPS_PER_BAR,
            grid,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn bars(&self) -> usize {
        self.steps / STEPS_PER_BAR
    }

    pub fn cells(&self) -> &[u8] {
        &self.grid
    }

    pub fn get(&self, t: usize, lane: usize) -> bool {
        self.grid[t * LANES + lane] == 1
    }

    pub fn bar(&self, i: usize) -> Result<Bar> {
        if i >= self.bars() {
            return Err(Error::IndexOutOfRange {
                what: "bar",
                index: i,
                size: self.bars(),
            });
        }
        Ok(Bar {
            grid: self.grid[i * BAR_CELLS..(i + 1) * BAR_CELLS]
                .try_into()
                .expect("bar slice has 512 cells"),
        })
    }

    pub fn all_bars(&self) -> Vec<Bar> {
        (0..self.bars()).map(|i| self.bar(i).expect("in range")).collect()
    }

    pub fn set_bar(&mut self, i: usize, bar: &Bar) -> Result<()> {
        if i >= self.bars() {
            return Err(Error::IndexOutOfRange {
                what: "bar",
                index: i,
                size: self.bars(),
            });
        }
        self.grid[i * BAR_CELLS..(i + 1) * BAR_CELLS].copy_from_slice(&bar.grid);
        Ok(())
    }

    /// The 11-bar window starting at `first_bar`.
    pub fn window(&self, first_bar: usize) -> Result<PaSample> {
        let end = first_bar + BARS_PER_SAMPLE;
        if end > self.bars() {
            return Err(Error::IndexOutOfRange {
                what: "window end bar",
                index: end,
                size: self.bars(),
            });
        }
        Ok(PaSample {
            grid: self.grid[first_bar * BAR_CELLS..end * BAR_CELLS].to_vec(),
        })
    }

    /// Overwrites 11 bars starting at `first_bar` with `sample`.
    pub fn write_window(&mut self, first_bar: usize, sample: &PaSample) -> Result<()> {
        let end = first_bar + BARS_PER_SAMPLE;
        if end > self.bars() {
            return Err(Error::IndexOutOfRange {
                what: "window end bar",
                index: end,
                size: self.bars(),
            });
        }
        self.grid[first_bar * BAR_CELLS..end * BAR_CELLS].copy_from_slice(&sample.grid);
        Ok(())
    }
}

/// 11 bars of drums: a binary `352 × 16` grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PaSample {
    grid: Vec<u8>,
}

impl Default for PaSample {
    fn default() -> Self {
        Self::silent()
    }
}

impl PaSample {
    pub fn silent() -> Self {
        Self {
            grid: vec![0; SAMPLE_CELLS],
        }
    }

    /// Accepts exactly 5632 cells, each 0 or 1.
    pub fn from_grid(grid: Vec<u8>) -> Result<Self> {
        if grid.len() != SAMPLE_CELLS {
            return Err(Error::LengthMismatch {
                left: grid.len(),
                right: SAMPLE_CELLS,
            });
        }
        if let Some(offset) = grid.iter().position(|&v| v > 1) {
            return Err(Error::VelocityOutOfRange {
                track: "pa".into(),
                offset,
                value: grid[offset],
            });
        }
        Ok(Self { grid })
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut s = Self::silent();
        for t in 0..SAMPLE_STEPS {
            for l in 0..LANES {
                s.grid[t * LANES + l] = f(t, l) as u8;
            }
        }
        s
    }

    pub fn from_bars(bars: &[Bar; BARS_PER_SAMPLE]) -> Self {
        let mut grid = Vec::with_capacity(SAMPLE_CELLS);
        for b in bars {
            grid.extend_from_slice(&b.grid);
        }
        Self { grid }
    }

    pub fn cells(&self) -> &[u8] {
        &self.grid
    }

    pub fn get(&self, t: usize, lane: usize) -> bool {
        self.grid[t * LANES + lane] == 1
    }

    pub fn set(&mut self, t: usize, lane: usize, on: bool) {
        self.grid[t * LANES + lane] = on as u8;
    }

    pub fn toggle(&mut self, cell: usize) {
        self.grid[cell] ^= 1;
    }

    pub fn row(&self, t: usize) -> &[u8] {
        &self.grid[t * LANES..(t + 1) * LANES]
    }

    pub fn bar(&self, i: usize) -> Result<Bar> {
        slice_bar(self, i)
    }

    pub fn bars(&self) -> [Bar; BARS_PER_SAMPLE] {
        std::array::from_fn(|i| slice_bar(self, i).expect("in range"))
    }

    pub fn set_bar(&mut self, i: usize, bar: &Bar) -> Result<()> {
        if i >= BARS_PER_SAMPLE {
            return Err(Error::IndexOutOfRange {
                what: "bar",
                index: i,
                size: BARS_PER_SAMPLE,
            });
        }
        self.grid[i * BAR_CELLS..(i + 1) * BAR_CELLS].copy_from_slice(&bar.grid);
        Ok(())
    }

    pub fn onsets(&self) -> usize {
        self.grid.iter().map(|&v| v as usize).sum()
    }

    pub fn density(&self) -> f64 {
        self.onsets() as f64 / SAMPLE_CELLS as f64
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(SAMPLE_STEPS, LANES, |t, l| {
            if self.grid[t * LANES + l] == 1 {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}

/// Rows `32·i .. 32·i + 32` of a sample.
pub fn slice_bar(sample: &PaSample, bar_index: usize) -> Result<Bar> {
    if bar_index >= BARS_PER_SAMPLE {
        return Err(Error::IndexOutOfRange {
            what: "bar",
            index: bar_index,
            size: BARS_PER_SAMPLE,
        });
    }
    Ok(Bar {
        grid: sample.grid[bar_index * BAR_CELLS..(bar_index + 1) * BAR_CELLS]
            .try_into()
            .expect("bar slice has 512 cells"),
    })
}

/// Melodic frames stored as raw velocities for pitches 21–83, laid out
/// `steps × 4 instruments × 63 pitches`. Feature vectors are derived on
/// demand, so the silence-bit invariant holds by construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaTrack {
    steps: usize,
    vel: Vec<u8>,
}

const FRAME: usize = MELODIC_TRACKS * CROPPED_PITCHES;

impl MaTrack {
    pub fn silent(steps: usize) -> Self {
        Self {
            steps,
            vel: vec![0; steps * FRAME],
        }
    }

    /// Builds frames from four melodic rolls; notes outside 21–83 are
    /// ignored.
    pub fn from_rolls(rolls: &[Roll; MELODIC_TRACKS]) -> Result<Self> {
        let steps = rolls[0].steps();
        let mut out = Self::silent(steps);
        for (i, roll) in rolls.iter().enumerate() {
            if roll.steps() != steps {
                return Err(Error::TrackLengthMismatch {
                    track: TRACK_NAMES[i].into(),
                    what: "timesteps",
                    found: roll.steps(),
                    expected: steps,
                });
            }
            for t in 0..steps {
                for p in 0..CROPPED_PITCHES {
                    out.vel[t * FRAME + i * CROPPED_PITCHES + p] = roll.velocity(t, LOWEST_PITCH + p as u8);
                }
            }
        }
        Ok(out)
    }

    pub fn from_velocities(steps: usize, vel: Vec<u8>) -> Result<Self> {
        if vel.len() != steps * FRAME {
            return Err(Error::LengthMismatch {
                left: vel.len(),
                right: steps * FRAME,
            });
        }
        if let Some(offset) = vel.iter().position(|&v| v > MAX_VELOCITY) {
            return Err(Error::VelocityOutOfRange {
                track: "ma".into(),
                offset,
                value: vel[offset],
            });
        }
        Ok(Self { steps, vel })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn bars(&self) -> usize {
        self.steps / STEPS_PER_BAR
    }

    pub fn velocities(&self) -> &[u8] {
        &self.vel
    }

    /// The 11-bar window starting at `first_bar`.
    pub fn window(&self, first_bar: usize) -> Result<MaSample> {
        let end = first_bar + BARS_PER_SAMPLE;
        if end > self.bars() {
            return Err(Error::IndexOutOfRange {
                what: "window end bar",
                index: end,
                size: self.bars(),
            });
        }
        let from = first_bar * STEPS_PER_BAR * FRAME;
        Ok(MaSample {
            vel: self.vel[from..from + SAMPLE_STEPS * FRAME].to_vec(),
        })
    }
}

/// 11 bars of melodic accompaniment: 352 timesteps × 256 features.
///
/// Each timestep holds four 64-wide blocks (piano, guitar, bass, strings).
/// Feature 0 of a block is 1 when the instrument is silent; features 1–63
/// are velocities of MIDI 21–83 divided by 127.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaSample {
    vel: Vec<u8>,
}

impl Default for MaSample {
    fn default() -> Self {
        Self::silent()
    }
}

impl MaSample {
    pub fn silent() -> Self {
        Self {
            vel: vec![0; SAMPLE_STEPS * FRAME],
        }
    }

    pub fn from_velocities(vel: Vec<u8>) -> Result<Self> {
        MaTrack::from_velocities(SAMPLE_STEPS, vel).map(|t| Self { vel: t.vel })
    }

    pub fn velocities(&self) -> &[u8] {
        &self.vel
    }

    pub fn velocity(&self, t: usize, instrument: usize, pitch_offset: usize) -> u8 {
        self.vel[t * FRAME + instrument * CROPPED_PITCHES + pitch_offset]
    }

    pub fn set_velocity(&mut self, t: usize, instrument: usize, pitch_offset: usize, v: u8) {
        self.vel[t * FRAME + instrument * CROPPED_PITCHES + pitch_offset] = v.min(MAX_VELOCITY);
    }

    pub fn is_instrument_silent(&self, t: usize, instrument: usize) -> bool {
        let from = t * FRAME + instrument * CROPPED_PITCHES;
        self.vel[from..from + CROPPED_PITCHES].iter().all(|&v| v == 0)
    }

    /// Silence-encodes one instrument block at step `t`.
    pub fn silence(&mut self, t: usize, instrument: usize) {
        let from = t * FRAME + instrument * CROPPED_PITCHES;
        self.vel[from..from + CROPPED_PITCHES].fill(0);
    }

    /// Silence-encodes all four blocks at step `t`.
    pub fn silence_step(&mut self, t: usize) {
        self.vel[t * FRAME..(t + 1) * FRAME].fill(0);
    }

    /// Feature `k ∈ 0..256` at step `t`.
    pub fn feature(&self, t: usize, k: usize) -> f64 {
        let (inst, d) = (k / INSTRUMENT_BLOCK, k % INSTRUMENT_BLOCK);
        if d == 0 {
            self.is_instrument_silent(t, inst) as u8 as f64
        } else {
            self.velocity(t, inst, d - 1) as f64 / MAX_VELOCITY as f64
        }
    }

    /// Dense `352 × 256` feature matrix.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let mut out = Tensor::zeros(SAMPLE_STEPS, MA_FEATURES);
        let scale = T::from_f64_lossy(1.0 / MAX_VELOCITY as f64);
        for t in 0..SAMPLE_STEPS {
            let row = out.row_mut(t);
            for inst in 0..MELODIC_TRACKS {
                let src = &self.vel[t * FRAME + inst * CROPPED_PITCHES..][..CROPPED_PITCHES];
                let dst = &mut row[inst * INSTRUMENT_BLOCK..(inst + 1) * INSTRUMENT_BLOCK];
                let mut silent = true;
                for (d, &v) in dst[1..].iter_mut().zip(src) {
                    if v != 0 {
                        silent = false;
                        *d = T::from_f64_lossy(v as f64) * scale;
                    }
                }
                if silent {
                    dst[0] = T::one();
                }
            }
        }
        out
    }
}
