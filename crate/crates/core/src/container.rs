//! The DRPR song container and a CSV dump for inspection.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       4 bytes  "DRPR"
//! version     u16      1
//! resolution  u32      timesteps per beat
//! steps       u32      T
//! 5 × track   u32 byte length L, then L bytes of row-major u8 velocities
//! ```
//!
//! Tracks appear as piano, guitar, bass, strings, percussion. Each track is
//! `T × W` with `W = L / T`. Melodic tracks may be full range (`W = 128`,
//! column = MIDI pitch) or cropped (`W = 63`, column 0 = MIDI 21); the
//! percussion track is always full range.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pianoroll::{
    MultiTrackPianoroll, Roll, CROPPED_PITCHES, LOWEST_PITCH, MELODIC_TRACKS, PITCHES, TRACK_NAMES,
};

pub const MAGIC: &[u8; 4] = b"DRPR";
pub const VERSION: u16 = 1;

pub fn encode_song(song: &MultiTrackPianoroll) -> Vec<u8> {
    let steps = song.steps();
    let mut out = Vec::with_capacity(14 + 5 * (4 + steps * PITCHES));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&song.resolution().to_le_bytes());
    out.extend_from_slice(&(steps as u32).to_le_bytes());
    for track in song.tracks() {
        out.extend_from_slice(&(track.data().len() as u32).to_le_bytes());
        out.extend_from_slice(track.data());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::MalformedData {
                path: self.path.to_path_buf(),
                reason: format!("truncated while reading {what} at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_song(bytes: &[u8], path: &Path) -> Result<MultiTrackPianoroll> {
    let header = |reason: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 14 {
        return Err(header(format!("file is {} bytes, header needs 14", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(header(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(header(format!("unsupported version {version}")));
    }
    let mut cur = Cursor { bytes, pos: 6, path };
    let resolution = cur.u32("resolution")?;
    let steps = cur.u32("step count")? as usize;
    if resolution == 0 {
        return Err(header("resolution is zero".into()));
    }

    let mut rolls = Vec::with_capacity(5);
    for (i, name) in TRACK_NAMES.iter().enumerate() {
        let len = cur.u32("track length")? as usize;
        let data = cur.take(len, name)?.to_vec();
        let melodic = i < MELODIC_TRACKS;
        let (lowest, width) = if steps == 0 && len == 0 {
            (0, PITCHES)
        } else if len == steps * PITCHES {
            (0, PITCHES)
        } else if melodic && len == steps * CROPPED_PITCHES {
            (LOWEST_PITCH, CROPPED_PITCHES)
        } else {
            return Err(Error::TrackLengthMismatch {
                track: (*name).into(),
                what: "bytes",
                found: len,
                expected: steps * PITCHES,
            });
        };
        rolls.push(Roll::from_data(steps, lowest, width, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::MalformedData {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    let percussion = rolls.pop().expect("five tracks");
    let melodic: [Roll; MELODIC_TRACKS] = rolls.try_into().expect("four melodic tracks");
    MultiTrackPianoroll::new(melodic, percussion, resolution)
}

pub fn load_song(path: &Path) -> Result<MultiTrackPianoroll> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_song(&bytes, path)
}

pub fn save_song(song: &MultiTrackPianoroll, path: &Path) -> Result<()> {
    fs::write(path, encode_song(song)).map_err(|e| Error::io(path, e))
}

/// Writes one CSV per track next to `stem` (`stem.piano.csv`, ...). Each
/// row is a timestep; the header names the MIDI pitch of every column.
pub fn dump_csv(song: &MultiTrackPianoroll, stem: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, track) in TRACK_NAMES.iter().zip(song.tracks()) {
        let path = PathBuf::from(format!("{}.{name}.csv", stem.display()));
        let mut buf = Vec::new();
        let header: Vec<String> = (0..track.pitches())
            .map(|c| format!("p{}", track.lowest_pitch() as usize + c))
            .collect();
        writeln!(buf, "step,{}", header.join(",")).expect("vec write");
        for t in 0..track.steps() {
            let row: Vec<String> = track.row(t).iter().map(u8::to_string).collect();
            writeln!(buf, "{t},{}", row.join(",")).expect("vec write");
        }
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
