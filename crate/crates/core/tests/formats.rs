use std::path::Path;

use drumsmith::container::{decode_song, encode_song, load_song, save_song};
use drumsmith::dataset::{decode_locations, decode_pairs, encode_locations, encode_pairs};
use drumsmith::novelty::LocationEntry;
use drumsmith::pianoroll::{MaSample, MultiTrackPianoroll, PaSample, Roll, SAMPLE_CELLS, SAMPLE_STEPS};
use drumsmith::preprocess::SamplePair;
use drumsmith::tokenizer::{decode, encode, SHIFT};
use drumsmith::Error;
use proptest::prelude::*;

fn song_strategy() -> impl Strategy<Value = MultiTrackPianoroll> {
    (1usize..40, 1u32..30, any::<u64>()).prop_map(|(steps, resolution, seed)| {
        let mut x = seed | 1;
        let mut next = move || {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            x
        };
        let mut roll = || {
            let data = (0..steps * 128)
                .map(|_| if next() % 9 == 0 { (next() % 128) as u8 } else { 0 })
                .collect();
            Roll::from_data(steps, 0, 128, data).unwrap()
        };
        let melodic = [roll(), roll(), roll(), roll()];
        MultiTrackPianoroll::new(melodic, roll(), resolution).unwrap()
    })
}

fn pa_strategy() -> impl Strategy<Value = PaSample> {
    proptest::collection::vec(prop::bool::weighted(0.1), SAMPLE_CELLS)
        .prop_map(|cells| PaSample::from_grid(cells.into_iter().map(u8::from).collect()).unwrap())
}

fn ma_from(seed: u8) -> MaSample {
    let mut ma = MaSample::silent();
    for t in (seed as usize % 7..SAMPLE_STEPS).step_by(5) {
        ma.set_velocity(t, t % 4, (t + seed as usize) % 63, 1 + (t % 127) as u8);
    }
    ma
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn container_round_trips(song in song_strategy()) {
        let bytes = encode_song(&song);
        prop_assert_eq!(decode_song(&bytes, Path::new("mem")).unwrap(), song);
    }

    #[test]
    fn tokens_round_trip_with_one_shift_per_step(pa in pa_strategy()) {
        let seq = encode(&pa);
        prop_assert_eq!(seq.ids().iter().filter(|&&t| t == SHIFT).count(), SAMPLE_STEPS);
        prop_assert!(seq.is_canonical());
        prop_assert_eq!(decode(seq.ids()).unwrap(), pa);
    }

    #[test]
    fn arbitrary_token_streams_never_panic(ids in proptest::collection::vec(any::<u8>(), 0..1200)) {
        let _ = decode(&ids);
    }

    #[test]
    fn sample_pairs_round_trip(pas in proptest::collection::vec(pa_strategy(), 0..4)) {
        let pairs: Vec<SamplePair> = pas
            .into_iter()
            .enumerate()
            .map(|(i, pa)| SamplePair { ma: ma_from(i as u8), pa, song_id: format!("song-{i}"), segment_index: i * 3 })
            .collect();
        let bytes = encode_pairs(&pairs);
        prop_assert_eq!(decode_pairs(&bytes, Path::new("mem")).unwrap(), pairs);
    }
}

#[test]
fn location_entries_round_trip_and_reject_truncation() {
    let entries: Vec<LocationEntry> = (0..3)
        .map(|i| LocationEntry {
            song_id: format!("s{i}"),
            bar: 5 + i,
            positive: i % 2 == 0,
            ma: ma_from(i as u8),
            pa: PaSample::from_fn(|t, l| (t + l + i) % 11 == 0),
        })
        .collect();
    let bytes = encode_locations(&entries);
    assert_eq!(decode_locations(&bytes, Path::new("mem")).unwrap(), entries);
    for cut in [0, 5, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(
            decode_locations(&bytes[..cut], Path::new("mem")),
            Err(Error::MalformedData { .. })
        ));
    }
}

#[test]
fn container_files_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("song.drpr");
    let mut song = MultiTrackPianoroll::silent(96, 24);
    song.melodic_mut()[2].set_velocity(10, 40, 77);
    song.percussion_mut().set_velocity(0, 36, 100);
    save_song(&song, &path).unwrap();
    assert_eq!(load_song(&path).unwrap(), song);
    assert!(matches!(
        load_song(&dir.path().join("missing.drpr")),
        Err(Error::IoFailure { .. })
    ));
}
