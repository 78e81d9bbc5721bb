//! On-disk formats for prepared songs, sample pairs and location windows.
//!
//! Prepared songs reuse the DRPR container at 8 steps per beat with cropped
//! melodic tracks; drum lanes are written at their General MIDI
//! representative pitch, so loading with the GM merge map restores them
//! exactly.
//!
//! Sample-pair (`DSPP`) and location (`DSLD`) files share one layout, all
//! integers little-endian:
//!
//! ```text
//! magic    4 bytes
//! version  u16  1
//! count    u32
//! record × count:
//!   id length u16, id bytes (UTF-8)
//!   index     u32   segment index or center bar
//!   label     u8    DSLD only: 1 for a fill window
//!   ma        352 × 4 × 63 velocities
//!   pa        352 × 16 cells, each 0 or 1
//! ```

use std::path::{Path, PathBuf};

use crate::container::{load_song, save_song};
use crate::error::{Error, Result};
use crate::novelty::LocationEntry;
use crate::pianoroll::{
    DrumTrack, Lane, MaSample, MultiTrackPianoroll, PaSample, Roll, CROPPED_PITCHES, LOWEST_PITCH, MELODIC_TRACKS,
    RESOLUTION, SAMPLE_CELLS, SAMPLE_STEPS,
};
use crate::preprocess::{prepare, PercussionMergeMap, PreparedSong, SamplePair};

pub const PAIRS_MAGIC: &[u8; 4] = b"DSPP";
pub const LOCATIONS_MAGIC: &[u8; 4] = b"DSLD";
pub const FORMAT_VERSION: u16 = 1;
const MA_BYTES: usize = SAMPLE_STEPS * MELODIC_TRACKS * CROPPED_PITCHES;
const STROKE_VELOCITY: u8 = 100;

/// Drum lanes as a full-range percussion roll at GM pitches.
pub fn drums_to_roll(drums: &DrumTrack) -> Roll {
    let map = PercussionMergeMap::general_midi();
    let mut roll = Roll::full_range(drums.steps());
    for t in 0..drums.steps() {
        for lane in Lane::ALL {
            if drums.get(t, lane.index()) {
                roll.set_velocity(t, map.representative_pitch(lane), STROKE_VELOCITY);
            }
        }
    }
    roll
}

/// A DRPR song holding only `drums`.
pub fn drums_to_song(drums: &DrumTrack) -> MultiTrackPianoroll {
    let steps = drums.steps();
    let melodic = std::array::from_fn(|_| Roll::silent(steps, LOWEST_PITCH, CROPPED_PITCHES));
    MultiTrackPianoroll::new(melodic, drums_to_roll(drums), RESOLUTION).expect("consistent shapes")
}

pub fn prepared_to_song(song: &PreparedSong) -> MultiTrackPianoroll {
    let steps = song.ma.steps();
    let frame = MELODIC_TRACKS * CROPPED_PITCHES;
    let vel = song.ma.velocities();
    let melodic = std::array::from_fn(|i| {
        let mut data = Vec::with_capacity(steps * CROPPED_PITCHES);
        for t in 0..steps {
            let at = t * frame + i * CROPPED_PITCHES;
            data.extend_from_slice(&vel[at..at + CROPPED_PITCHES]);
        }
        Roll::from_data(steps, LOWEST_PITCH, CROPPED_PITCHES, data).expect("cropped roll")
    });
    MultiTrackPianoroll::new(melodic, drums_to_roll(&song.drums), RESOLUTION).expect("consistent shapes")
}

pub fn save_prepared(song: &PreparedSong, path: &Path) -> Result<()> {
    save_song(&prepared_to_song(song), path)
}

/// Reads a song and prepares it with the GM map. For files written by
/// [`save_prepared`] this is the exact inverse.
pub fn load_prepared(path: &Path) -> Result<PreparedSong> {
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let song = load_song(path)?;
    Ok(prepare(&id, &song, &PercussionMergeMap::general_midi())?.0)
}

struct Record<'a> {
    id: &'a str,
    index: usize,
    label: Option<bool>,
    ma: &'a MaSample,
    pa: &'a PaSample,
}

fn encode<'a>(magic: &[u8; 4], records: impl ExactSizeIterator<Item = Record<'a>>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.id.len() as u16).to_le_bytes());
        out.extend_from_slice(r.id.as_bytes());
        out.extend_from_slice(&(r.index as u32).to_le_bytes());
        if let Some(l) = r.label {
            out.push(l as u8);
        }
        out.extend_from_slice(r.ma.velocities());
        out.extend_from_slice(r.pa.cells());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn bad(&self, reason: String) -> Error {
        Error::MalformedData {
            path: self.path.to_path_buf(),
            reason,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.bad(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

struct Owned {
    id: String,
    index: usize,
    label: Option<bool>,
    ma: MaSample,
    pa: PaSample,
}

fn decode(bytes: &[u8], path: &Path, magic: &[u8; 4], labelled: bool) -> Result<Vec<Owned>> {
    let mut r = Reader { bytes, pos: 0, path };
    let m = r.take(4, "magic")?;
    if m != magic {
        return Err(r.bad(format!("bad magic {m:?}, expected {magic:?}")));
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(r.bad(format!("unsupported version {version}")));
    }
    let count = r.u32("record count")? as usize;
    let mut out = Vec::with_capacity(count.min(bytes.len() / (MA_BYTES + SAMPLE_CELLS)));
    for k in 0..count {
        let len = r.u16("id length")? as usize;
        let id = std::str::from_utf8(r.take(len, "id")?)
            .map_err(|_| r.bad(format!("record {k}: id is not UTF-8")))?
            .to_string();
        let index = r.u32("index")? as usize;
        let label = if labelled {
            match r.take(1, "label")?[0] {
                0 => Some(false),
                1 => Some(true),
                v => return Err(r.bad(format!("record {k}: label {v} is not 0 or 1"))),
            }
        } else {
            None
        };
        let ma = MaSample::from_velocities(r.take(MA_BYTES, "ma")?.to_vec())
            .map_err(|e| r.bad(format!("record {k}: {e}")))?;
        let pa = PaSample::from_grid(r.take(SAMPLE_CELLS, "pa")?.to_vec())
            .map_err(|e| r.bad(format!("record {k}: {e}")))?;
        out.push(Owned { id, index, label, ma, pa });
    }
    if r.pos != bytes.len() {
        return Err(r.bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_pairs(pairs: &[SamplePair]) -> Vec<u8> {
    encode(
        PAIRS_MAGIC,
        pairs.iter().map(|p| Record {
            id: &p.song_id,
            index: p.segment_index,
            label: None,
            ma: &p.ma,
            pa: &p.pa,
        }),
    )
}

pub fn decode_pairs(bytes: &[u8], path: &Path) -> Result<Vec<SamplePair>> {
    Ok(decode(bytes, path, PAIRS_MAGIC, false)?
        .into_iter()
        .map(|o| SamplePair {
            ma: o.ma,
            pa: o.pa,
            song_id: o.id,
            segment_index: o.index,
        })
        .collect())
}

pub fn save_pairs(pairs: &[SamplePair], path: &Path) -> Result<()> {
    write(path, &encode_pairs(pairs))
}

pub fn load_pairs(path: &Path) -> Result<Vec<SamplePair>> {
    decode_pairs(&read(path)?, path)
}

pub fn encode_locations(entries: &[LocationEntry]) -> Vec<u8> {
    encode(
        LOCATIONS_MAGIC,
        entries.iter().map(|e| Record {
            id: &e.song_id,
            index: e.bar,
            label: Some(e.positive),
            ma: &e.ma,
            pa: &e.pa,
        }),
    )
}

pub fn decode_locations(bytes: &[u8], path: &Path) -> Result<Vec<LocationEntry>> {
    Ok(decode(bytes, path, LOCATIONS_MAGIC, true)?
        .into_iter()
        .map(|o| LocationEntry {
            song_id: o.id,
            bar: o.index,
            positive: o.label.expect("labelled format"),
            ma: o.ma,
            pa: o.pa,
        })
        .collect())
}

pub fn save_locations(entries: &[LocationEntry], path: &Path) -> Result<()> {
    write(path, &encode_locations(entries))
}

pub fn load_locations(path: &Path) -> Result<Vec<LocationEntry>> {
    decode_locations(&read(path)?, path)
}

/// Files in `dir` with extension `ext`, sorted by name.
pub fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

/// Loads every `*.pairs` file in `dir`, in file-name order.
pub fn load_pairs_dir(dir: &Path) -> Result<Vec<SamplePair>> {
    let mut all = Vec::new();
    for f in files_with_extension(dir, "pairs")? {
        all.extend(load_pairs(&f)?);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::segment_11_bars;
    use crate::synth::synth_song;

    fn prepared() -> PreparedSong {
        let s = synth_song(1, 24, 3);
        prepare(&s.song_id, &s.song, &PercussionMergeMap::general_midi()).unwrap().0
    }

    #[test]
    fn prepared_song_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let song = prepared();
        let path = dir.path().join(format!("{}.drpr", song.song_id));
        save_prepared(&song, &path).unwrap();
        assert_eq!(load_prepared(&path).unwrap(), song);
    }

    #[test]
    fn pairs_and_locations_round_trip() {
        let song = prepared();
        let pairs = segment_11_bars(&song);
        let path = Path::new("mem");
        assert_eq!(decode_pairs(&encode_pairs(&pairs), path).unwrap(), pairs);
        let entries: Vec<LocationEntry> = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| LocationEntry {
                song_id: p.song_id.clone(),
                bar: 5 + i,
                positive: i % 2 == 0,
                ma: p.ma.clone(),
                pa: p.pa.clone(),
            })
            .collect();
        let back = decode_locations(&encode_locations(&entries), path).unwrap();
        assert_eq!(back.len(), entries.len());
        for (a, b) in back.iter().zip(&entries) {
            assert_eq!((a.bar, a.positive, &a.ma, &a.pa, &a.song_id), (b.bar, b.positive, &b.ma, &b.pa, &b.song_id));
        }
    }

    #[test]
    fn rejects_damaged_files() {
        let pairs = segment_11_bars(&prepared());
        let bytes = encode_pairs(&pairs);
        let path = Path::new("x.pairs");
        let malformed = |b: &[u8]| matches!(decode_pairs(b, path), Err(Error::MalformedData { .. }));
        assert!(malformed(&bytes[..bytes.len() - 1]));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(malformed(&extra));
        let mut bad_cell = bytes.clone();
        *bad_cell.last_mut().unwrap() = 2;
        assert!(malformed(&bad_cell));
        assert!(malformed(&encode_locations(&[])));
        assert!(malformed(b"DSPP"));
    }
}
