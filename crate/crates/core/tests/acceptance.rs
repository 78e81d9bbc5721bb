//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit status
//! when any criterion fails.
//!
//! Set `DRUMSMITH_ACCEPTANCE=1,3,6` to run a subset.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use drumsmith::augment::AugmentConfig;
use drumsmith::decode::{differing_bars, filter_samples, run_pipeline, DecodeConfig, FilterConfig, PipelineModels};
use drumsmith::metrics::{
    classification_report, ic_change, ic_deviation_bars, instrument_count, overlap_area, pattern_consistency,
};
use drumsmith::models::infill::BarDecoder;
use drumsmith::models::train::{
    basic_nll, evaluate_infill, evaluate_locator, split_by_song, train_basic, train_infill, train_locator, EpochRecord,
    TrainConfig,
};
use drumsmith::models::{
    BasicDrumGen, BasicDrumGenConfig, Checkpointed, DecoderVariant, EncoderDims, InfillConfig, LocatorConfig,
    SequenceEncoder,
};
use drumsmith::novelty::{build_location_dataset, novelty_profile, LocationEntry, NoveltyConfig};
use drumsmith::pianoroll::{
    Bar, DrumTrack, MaSample, PaSample, BARS_PER_SAMPLE, LANES, SAMPLE_STEPS, STEPS_PER_BAR,
};
use drumsmith::preprocess::{prepare, segment_11_bars, PercussionMergeMap, SamplePair};
use drumsmith::rng;
use drumsmith::synth::synth_corpus;
use drumsmith::tokenizer::{decode, encode};
use drumsmith_nn::gradcheck::{check_with_params, op_cases, DEFAULT_STEP};
use drumsmith_nn::{ParamBuilder, ParamStore, Tensor};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    ensure(start.elapsed() < limit, || format!("took {:.1?}, limit {limit:?}", start.elapsed()))
}

fn random_pa(r: &mut impl Rng) -> PaSample {
    let density: f64 = r.gen_range(0.0..0.3);
    PaSample::from_fn(|_, _| r.gen_bool(density))
}

fn random_bar(r: &mut impl Rng, density: f64) -> Bar {
    Bar::from_fn(|_, _| r.gen_bool(density))
}

// ---------------------------------------------------------------- 1

/// Checks a module after jittering every parameter, so zero-initialized
/// biases cannot park a ReLU exactly on its kink.
fn gradcheck_module<F>(store: &ParamStore<f64>, input: Tensor<f64>, rng: &mut StdRng, f: F) -> Result<f64, String>
where
    F: Fn(&mut drumsmith_nn::Graph<f64>, &ParamStore<f64>, drumsmith_nn::Var) -> drumsmith_nn::Var,
{
    let mut store = store.clone();
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    check_with_params(&store, &[input], rng, DEFAULT_STEP, |g, p, v| Ok(f(g, p, v[0])))
        .map(|r| r.max_rel_error)
        .map_err(|e| e.to_string())
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x6ead);
    let mut ops = 0;
    let mut worst = 0.0f64;
    for case in op_cases() {
        for shape in 0..20 {
            let e = (case.run)(&mut rng).map_err(|e| format!("{}: {e}", case.name))?.max_rel_error;
            ensure(e < 1e-4, || format!("{} shape #{shape}: relative error {e:.3e}", case.name))?;
            worst = worst.max(e);
        }
        ops += 1;
    }

    // Position-encoded MA embedding on 20 random geometries.
    for i in 0..20 {
        let dims = EncoderDims {
            input: rng.gen_range(2..6),
            embed_hidden: rng.gen_range(2..6),
            embed_dim: 2 * rng.gen_range(1..3),
            model_dim: 4,
            heads: 2,
            layers: 1,
            ff_hidden: 4,
        };
        let mut store = ParamStore::new();
        let mut init = StdRng::seed_from_u64(i);
        let enc = SequenceEncoder::new(&mut ParamBuilder::new(&mut store, &mut init), "enc", dims, false)
            .map_err(|e| e.to_string())?;
        let rows = rng.gen_range(1..6);
        let x = Tensor::from_fn(rows, dims.input, |_, _| rng.gen_range(0.0..1.0));
        let e = gradcheck_module(&store, x, &mut rng, |g, p, v| enc.embed(g, p, v).expect("embed"))?;
        ensure(e < 1e-4, || format!("embed_ma geometry #{i}: relative error {e:.3e}"))?;
        worst = worst.max(e);
    }

    // Each infill decoder on 20 random codes and small geometries.
    for variant in [DecoderVariant::Mlp, DecoderVariant::MlpMixer, DecoderVariant::Conv1d] {
        for i in 0..20 {
            let model_dim = 2 * rng.gen_range(1..3);
            let cfg = InfillConfig {
                variant,
                model_dim,
                mlp_hidden: vec![rng.gen_range(2..5)],
                mixer_blocks: 1,
                mixer_token_hidden: rng.gen_range(2..4),
                mixer_channel_hidden: rng.gen_range(2..4),
                conv_channels: 2 * model_dim / 4,
                conv_layers_per_block: 1,
                ..InfillConfig::default()
            };
            let mut store = ParamStore::new();
            let mut init = StdRng::seed_from_u64(100 + i);
            let dec = BarDecoder::new(&mut ParamBuilder::new(&mut store, &mut init), &cfg).map_err(|e| e.to_string())?;
            let code = Tensor::from_fn(1, cfg.latent_dim(), |_, _| rng.gen_range(-1.0..1.0));
            let e = gradcheck_module(&store, code, &mut rng, |g, p, v| dec.forward(g, p, v).expect("decoder"))?;
            ensure(e < 1e-4, || format!("{variant} decoder #{i}: relative error {e:.3e}"))?;
            worst = worst.max(e);
        }
    }
    within(Duration::from_secs(120), start)?;
    Ok(format!(
        "{ops} ops x 20 shapes, embed_ma x 20, 3 decoders x 20; worst rel err {worst:.2e}; {:.1?}",
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- 2

fn criterion_tokenizer() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(2, &[]);
    for i in 0..1000 {
        let pa = random_pa(&mut r);
        let back = decode(encode(&pa).ids()).map_err(|e| format!("sample {i}: {e}"))?;
        ensure(back == pa, || format!("sample {i} did not round-trip"))?;
    }
    let mut fuzzed = 0;
    for _ in 0..20_000 {
        let len = r.gen_range(0..2 * SAMPLE_STEPS + 200);
        let ids: Vec<u8> = (0..len)
            .map(|_| if r.gen_bool(0.3) { 17 } else if r.gen_bool(0.9) { r.gen_range(0..24) } else { r.gen() })
            .collect();
        let outcome = std::panic::catch_unwind(|| decode(&ids).is_ok());
        ensure(outcome.is_ok(), || format!("decode panicked on {ids:?}"))?;
        fuzzed += 1;
    }
    within(Duration::from_secs(10), start)?;
    Ok(format!("1000 round trips, {fuzzed} fuzzed decodes; {:.1?}", start.elapsed()))
}

// ---------------------------------------------------------------- 3

/// Direct transcription of the weighted bar dissimilarity, without any
/// shared helpers.
fn naive_novelty(bars: &[Bar], b: usize) -> f64 {
    let mut raw = Vec::new();
    for d in -5i64..=5 {
        if d != 0 {
            raw.push((d, 0.5 * (1.0 + (std::f64::consts::PI * d as f64 / 6.0).cos())));
        }
    }
    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    let mut acc = 0.0;
    for (d, w) in raw {
        let other = &bars[(b as i64 + d) as usize];
        let (mut diff, mut na, mut nb) = (0usize, 0usize, 0usize);
        for t in 0..STEPS_PER_BAR {
            for l in 0..LANES {
                let (x, y) = (bars[b].get(t, l), other.get(t, l));
                diff += (x != y) as usize;
                na += x as usize;
                nb += y as usize;
            }
        }
        if na + nb > 0 {
            acc += (w / total) * diff as f64 / (na + nb) as f64;
        }
    }
    acc
}

fn criterion_novelty() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(3, &[]);
    for track in 0..50 {
        let n = r.gen_range(20..40);
        let groove = Bar::from_fn(|t, l| l < 6 && (t * 7 + l * 3) % 5 == 0 || (l == 3 && t % 8 == 0));
        let mut fills: Vec<usize> = Vec::new();
        let want = r.gen_range(1..=3);
        while fills.len() < want {
            let b = r.gen_range(6..=n - 7);
            if fills.iter().all(|&f| f.abs_diff(b) >= 3) {
                fills.push(b);
            }
        }
        fills.sort_unstable();
        let bars: Vec<Bar> = (0..n)
            .map(|b| {
                if fills.contains(&b) {
                    // Lanes 6.. are never used by the groove.
                    let mut f = Bar::from_fn(|t, l| l >= 6 && r.gen_bool(0.15) && t % 2 == 0);
                    f.set(0, 6, true);
                    f
                } else {
                    groove
                }
            })
            .collect();
        let drums = DrumTrack::from_bars(&bars);
        let profile = novelty_profile("t", &drums, 0.1).map_err(|e| e.to_string())?;
        ensure(profile.peaks == fills, || format!("track {track}: peaks {:?}, fills {fills:?}", profile.peaks))?;
        for b in 5..n - 5 {
            let got = profile.values[b].ok_or("undefined value")?;
            let want = naive_novelty(&bars, b);
            ensure((got - want).abs() < 1e-12, || format!("track {track} bar {b}: {got} vs naive {want}"))?;
        }
    }
    let flat = DrumTrack::from_bars(&vec![random_bar(&mut r, 0.2); 30]);
    let profile = novelty_profile("flat", &flat, 0.1).map_err(|e| e.to_string())?;
    ensure(profile.values.iter().flatten().all(|&v| v == 0.0), || "identical bars gave non-zero novelty".into())?;
    ensure(profile.peaks.is_empty(), || "identical bars gave peaks".into())?;
    within(Duration::from_secs(30), start)?;
    Ok(format!("50 tracks exact, flat track zero, naive match 1e-12; {:.1?}", start.elapsed()))
}

// ---------------------------------------------------------------- 4

fn smoke_ma() -> MaSample {
    let mut ma = MaSample::silent();
    for t in 0..SAMPLE_STEPS {
        if t % 8 < 6 {
            ma.set_velocity(t, 0, (t / 32) % 12 + 20, 90);
            ma.set_velocity(t, 2, (t / 32) % 5, 100);
        }
    }
    ma
}

fn smoke_pa() -> PaSample {
    PaSample::from_fn(|t, l| (l == 3 && t % 16 == 0) || (l == 0 && t % 16 == 8) || (l == 2 && t % 4 == 0))
}

fn quiet(_: &EpochRecord) {}

fn criterion_overfit() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();

    // Basic generator on one pair.
    let pair = SamplePair {
        ma: smoke_ma(),
        pa: smoke_pa(),
        song_id: "a".into(),
        segment_index: 0,
    };
    let bcfg = BasicDrumGenConfig::default();
    let (m0, p0) = BasicDrumGen::init::<f32>(&bcfg, 1).map_err(|e| e.to_string())?;
    let initial = basic_nll(&m0, &p0, &pair).map_err(|e| e.to_string())?;
    let ln18 = 18f64.ln();
    ensure(((initial - ln18) / ln18).abs() < 0.01, || format!("initial NLL {initial} vs ln 18"))?;
    notes.push(format!("initial NLL {initial:.4}"));
    let t = TrainConfig {
        epochs: 600,
        batch_size: 1,
        lr_start: 1e-3,
        lr_end: 1e-3,
        val_fraction: 0.0,
        augment: false,
        stop_below: Some(0.009),
    };
    let trained = train_basic(&[pair.clone()], &[], &bcfg, &t, &AugmentConfig::off(), 1, &mut quiet)
        .map_err(|e| e.to_string())?;
    let nll = basic_nll(&trained.model, &trained.params, &pair).map_err(|e| e.to_string())?;
    ensure(nll < 0.01, || format!("basic NLL {nll} after {} epochs", trained.history.len()))?;
    notes.push(format!("basic NLL {nll:.4} ({} ep)", trained.history.len()));

    // Locator on 8 windows.
    let entries: Vec<LocationEntry> = (0..8)
        .map(|i| {
            let mut m = MaSample::silent();
            for t in 0..SAMPLE_STEPS {
                if (t + i) % 8 < 4 {
                    m.set_velocity(t, i % 4, (t / 32 + i) % 30, 80);
                }
            }
            if i % 2 == 1 {
                for t in 160..192 {
                    m.set_velocity(t, 3, 50, 120);
                }
            }
            LocationEntry {
                song_id: format!("s{i}"),
                bar: 5,
                positive: i % 2 == 1,
                ma: m,
                pa: smoke_pa(),
            }
        })
        .collect();
    let t = TrainConfig {
        epochs: 400,
        batch_size: 8,
        lr_start: 1e-4,
        lr_end: 1e-4,
        val_fraction: 0.0,
        augment: false,
        stop_below: Some(0.005),
    };
    let loc = train_locator(&entries, &[], &LocatorConfig::default(), &t, &AugmentConfig::off(), 1, &mut quiet)
        .map_err(|e| e.to_string())?;
    let (_, report) = evaluate_locator(&loc.model, &loc.params, &entries).map_err(|e| e.to_string())?;
    ensure(report.accuracy == 1.0, || format!("locator accuracy {}", report.accuracy))?;
    notes.push(format!("locator acc 1.0 ({} ep)", loc.history.len()));

    // Infill MLP on 4 samples with distinct contexts.
    let entries: Vec<LocationEntry> = (0..4)
        .map(|i| {
            let mut m = MaSample::silent();
            for t in 0..SAMPLE_STEPS {
                if (t / (4 << (i % 2))) % 2 == 0 {
                    m.set_velocity(t, i, 10 + 7 * i + (t / 32) % 5, 100);
                }
            }
            let groove = [2usize, 4, 2, 4][i];
            let pa = PaSample::from_fn(|t, l| {
                if (160..192).contains(&t) {
                    (l == 3 && t % 16 == 0) || (l == 5 + i && t % 4 == i % 4)
                } else {
                    (l == 3 && t % (8 << (i / 2)) == 0) || (l == 0 && t % 16 == 8) || (l == groove && t % 4 == 0)
                }
            });
            LocationEntry {
                song_id: format!("s{i}"),
                bar: 5,
                positive: true,
                ma: m,
                pa,
            }
        })
        .collect();
    let t = TrainConfig {
        epochs: 400,
        batch_size: 1,
        lr_start: 3e-4,
        lr_end: 3e-4,
        val_fraction: 0.0,
        augment: false,
        stop_below: Some(1e-3),
    };
    let icfg = InfillConfig::default();
    let inf = train_infill(&entries, &[], &icfg, &t, &AugmentConfig::off(), 0.5, 1, &mut quiet)
        .map_err(|e| e.to_string())?;
    let (_, report) = evaluate_infill(&inf.model, &inf.params, &entries, 0.5).map_err(|e| e.to_string())?;
    let f1 = report.f1.unwrap_or(0.0);
    ensure(f1 > 0.99, || format!("infill F1 {f1}"))?;
    notes.push(format!("infill F1 {f1:.4} ({} ep)", inf.history.len()));

    within(Duration::from_secs(15 * 60), start)?;
    Ok(format!("{}; {:.1?}", notes.join(", "), start.elapsed()))
}

// ---------------------------------------------------------------- 5

fn criterion_synthetic() -> Outcome {
    let start = Instant::now();
    let seed = 7;
    let map = PercussionMergeMap::general_midi();
    let songs: Vec<_> = synth_corpus(200, 24, seed)
        .iter()
        .map(|s| prepare(&s.song_id, &s.song, &map).map(|p| p.0))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let ds = build_location_dataset(&songs, &NoveltyConfig::default(), seed).map_err(|e| e.to_string())?;
    let (tr, va) = split_by_song(&ds.entries, |e| e.song_id.as_str(), 0.2, seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| ds.entries[i].clone()).collect::<Vec<_>>();
    let (train, val) = (pick(&tr), pick(&va));

    let t = TrainConfig {
        epochs: 30,
        batch_size: 4,
        lr_start: 3e-4,
        lr_end: 3e-6,
        val_fraction: 0.2,
        augment: true,
        stop_below: None,
    };
    let locator = train_locator(&train, &val, &LocatorConfig::default(), &t, &AugmentConfig::default(), seed, &mut quiet)
        .map_err(|e| e.to_string())?;
    let last = locator.history.last().ok_or("no epochs")?;
    let val_acc = last.val.ok_or("no validation report")?.accuracy;
    ensure(val_acc > 0.85, || format!("locator val accuracy {val_acc:.3} after 30 epochs"))?;

    // The exact-diff property does not depend on model quality, so the
    // other two networks get a short budget.
    let brief = TrainConfig {
        epochs: 1,
        batch_size: 8,
        lr_start: 1e-3,
        lr_end: 1e-3,
        val_fraction: 0.0,
        augment: false,
        stop_below: None,
    };
    let pairs: Vec<SamplePair> = songs.iter().take(16).flat_map(segment_11_bars).collect();
    let basic = train_basic(&pairs, &[], &BasicDrumGenConfig::default(), &brief, &AugmentConfig::off(), seed, &mut quiet)
        .map_err(|e| e.to_string())?;
    let fills: Vec<LocationEntry> = train.iter().filter(|e| e.positive).take(32).cloned().collect();
    let infill = train_infill(&fills, &[], &InfillConfig::default(), &brief, &AugmentConfig::off(), 0.5, seed, &mut quiet)
        .map_err(|e| e.to_string())?;
    let models = PipelineModels {
        basic: basic.model,
        basic_params: basic.params,
        locator: locator.model,
        locator_params: locator.params,
        infill: infill.model,
        infill_params: infill.params,
    };
    let cfg = DecodeConfig::default();
    let mut flagged_total = 0;
    let mut changed_total = 0;
    for song in &songs {
        let out = run_pipeline(&song.ma, &models, &cfg, seed).map_err(|e| e.to_string())?;
        let changed = differing_bars(&out.basic, &out.drums);
        ensure(changed.iter().all(|b| out.flagged.contains(b)), || {
            format!("{}: bars {changed:?} changed, flagged {:?}", song.song_id, out.flagged)
        })?;
        flagged_total += out.flagged.len();
        changed_total += changed.len();
    }
    within(Duration::from_secs(3600), start)?;
    Ok(format!(
        "locator val acc {val_acc:.3}; exact-diff on {} songs ({flagged_total} flagged, {changed_total} changed); {:.1?}",
        songs.len(),
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- 6

fn criterion_metrics() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(6, &[]);
    for i in 0..1000 {
        // classification_report
        let n = r.gen_range(1..60);
        let preds: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        let labels: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        let rep = classification_report(&preds, &labels).map_err(|e| e.to_string())?;
        let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..n {
            match (preds[k], labels[k]) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, false) => tn += 1.0,
                (false, true) => fn_ += 1.0,
            }
        }
        let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => (x - y).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        let prec = if tp + fp > 0.0 { Some(tp / (tp + fp)) } else { None };
        let rec = if tp + fn_ > 0.0 { Some(tp / (tp + fn_)) } else { None };
        let f1 = match (prec, rec) {
            (Some(p), Some(q)) if p + q > 0.0 => Some(2.0 * p * q / (p + q)),
            _ => None,
        };
        ensure(
            (rep.accuracy - (tp + tn) / n as f64).abs() < 1e-12
                && close(rep.precision, prec)
                && close(rep.recall, rec)
                && close(rep.f1, f1),
            || format!("classification_report mismatch on input {i}: {rep:?}"),
        )?;

        // overlap_area
        let bins = r.gen_range(1..60);
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let p = norm((0..bins).map(|_| r.gen_range(0.001..1.0)).collect());
        let q = norm((0..bins).map(|_| r.gen_range(0.001..1.0)).collect());
        let mut brute = 0.0;
        for b in 0..bins {
            brute += if p[b] < q[b] { p[b] } else { q[b] };
        }
        let got = overlap_area(&p, &q).map_err(|e| e.to_string())?;
        ensure((got - brute).abs() < 1e-12, || format!("overlap_area mismatch on input {i}"))?;

        // pattern_consistency
        let pa = random_pa(&mut r);
        let pc = pattern_consistency(&pa);
        for b in 0..BARS_PER_SAMPLE - 1 {
            let (mut diff, mut na, mut nb) = (0usize, 0usize, 0usize);
            for t in 0..STEPS_PER_BAR {
                for l in 0..LANES {
                    let x = pa.get(b * STEPS_PER_BAR + t, l);
                    let y = pa.get((b + 1) * STEPS_PER_BAR + t, l);
                    diff += (x != y) as usize;
                    na += x as usize;
                    nb += y as usize;
                }
            }
            let want = if na + nb == 0 { 0.0 } else { diff as f64 / (na + nb) as f64 };
            ensure((pc[b] - want).abs() < 1e-12, || format!("pattern_consistency mismatch on input {i}"))?;
            ensure((0.0..=1.0).contains(&pc[b]), || format!("pattern_consistency {} outside [0, 1]", pc[b]))?;
        }

        // Instrument count, its change and deviation.
        let ic = |bar: usize| {
            let mut used = [false; LANES];
            for t in 0..STEPS_PER_BAR {
                for (l, u) in used.iter_mut().enumerate() {
                    *u |= pa.get(bar * STEPS_PER_BAR + t, l);
                }
            }
            used.iter().filter(|&&u| u).count()
        };
        for b in 0..BARS_PER_SAMPLE {
            ensure(instrument_count(&pa.bar(b).unwrap()) == ic(b), || format!("IC mismatch on input {i}"))?;
        }
        let b = r.gen_range(1..BARS_PER_SAMPLE);
        let change = ic_change(&pa, b).map_err(|e| e.to_string())?;
        ensure(change == ic(b) as i64 - ic(b - 1) as i64, || format!("IC change mismatch on input {i}"))?;
        let other = random_pa(&mut r);
        let (ga, ra) = (pa.bars(), other.bars());
        let dev = ic_deviation_bars(&ga, &ra).map_err(|e| e.to_string())?;
        let (mut exact, mut near) = (0.0, 0.0);
        for k in 0..BARS_PER_SAMPLE {
            let d = (instrument_count(&ga[k]) as i64 - instrument_count(&ra[k]) as i64).abs();
            exact += (d == 0) as u8 as f64;
            near += (d <= 1) as u8 as f64;
        }
        ensure(
            (dev.exact_match_frac - exact / 11.0).abs() < 1e-12 && (dev.within_1_frac - near / 11.0).abs() < 1e-12,
            || format!("IC deviation mismatch on input {i}"),
        )?;
    }
    within(Duration::from_secs(30), start)?;
    Ok(format!("1000 random inputs per metric; {:.1?}", start.elapsed()))
}

// ---------------------------------------------------------------- 7

fn hash_tree(dir: &Path) -> BTreeMap<String, String> {
    use sha2::{Digest, Sha256};
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).expect("readable file");
                let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
                out.insert(path.strip_prefix(dir).unwrap().display().to_string(), digest);
            }
        }
    }
    out
}

const TINY_CONFIG: &str = r#"{
  "basic": {"model_dim": 8, "heads": 2, "token_embed_dim": 8, "embed_hidden": 16, "embed_dim": 8, "ff_hidden": 16, "enc_layers": 1, "dec_layers": 1},
  "locator": {"model_dim": 8, "heads": 2, "hidden": 16, "embed_hidden": 16, "embed_dim": 8, "ff_hidden": 16, "enc_layers": 1},
  "infill": {"model_dim": 8, "heads": 2, "embed_hidden": 16, "embed_dim": 8, "ff_hidden": 16, "enc_layers": 1, "mlp_hidden": [16]},
  "train_basic": {"batch_size": 4},
  "train_locator": {"batch_size": 4},
  "train_infill": {"batch_size": 4},
  "decode": {"strategy": "sample", "max_tokens": 2000}
}"#;

fn criterion_determinism() -> Outcome {
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_drumsmith");
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = root.path().join("tiny.json");
    std::fs::write(&config, TINY_CONFIG).map_err(|e| e.to_string())?;
    let songs = root.path().join("songs");
    let run = |args: &[&str]| -> Result<(), String> {
        let status = Command::new(bin).args(args).status().map_err(|e| e.to_string())?;
        ensure(status.success(), || format!("drumsmith {args:?} exited with {status}"))
    };
    run(&["--seed", "5", "synth", "--songs", "4", "--bars", "24", "--out", songs.to_str().unwrap()])?;
    let mut hashes = Vec::new();
    for i in 0..3 {
        let out = root.path().join(format!("run{i}"));
        let o = out.to_str().unwrap();
        let c = config.to_str().unwrap();
        let s = songs.to_str().unwrap();
        run(&["--seed", "9", "--config", c, "pipeline", "--in", s, "--out", o, "--epochs", "1"])?;
        run(&["--seed", "9", "--config", c, "novelty", "--in", &format!("{s}/synth0000.drpr"), "--csv", &format!("{o}/novelty.csv")])?;
        run(&[
            "--seed", "9", "--config", c, "evaluate",
            "--generated", &format!("{o}/generated"),
            "--reference", &format!("{o}/prepared"),
            "--report", &format!("{o}/report.json"),
            "--plots", &format!("{o}/plots"),
        ])?;
        run(&["--seed", "9", "tokens", "--dump", "--out", &format!("{o}/vocab.json")])?;
        hashes.push(hash_tree(&out));
    }
    ensure(hashes[0].len() > 10, || format!("only {} output files", hashes[0].len()))?;
    ensure(hashes[0] == hashes[1] && hashes[1] == hashes[2], || {
        let diff: Vec<_> = hashes[0].iter().filter(|(k, v)| hashes[1].get(*k) != Some(v) || hashes[2].get(*k) != Some(v)).map(|(k, _)| k.clone()).collect();
        format!("outputs differ between runs: {diff:?}")
    })?;
    Ok(format!("{} files identical across 3 runs; {:.1?}", hashes[0].len(), start.elapsed()))
}

// ---------------------------------------------------------------- 8

fn criterion_filter() -> Outcome {
    let cfg = FilterConfig::default();
    let one_stroke = Bar::from_fn(|t, l| t == 0 && l == 3);
    let with_silent = |silent: usize| {
        let bars: [Bar; BARS_PER_SAMPLE] = std::array::from_fn(|i| if i < silent { Bar::empty() } else { one_stroke });
        PaSample::from_bars(&bars)
    };
    let (kept, report) = filter_samples(&[with_silent(4)], &cfg);
    ensure(kept.len() == 1, || format!("4 silent bars dropped: {report:?}"))?;
    let (kept, report) = filter_samples(&[with_silent(5)], &cfg);
    ensure(kept.is_empty() && report.dropped_silent == 1, || format!("5 silent bars kept: {report:?}"))?;
    let dense = Bar::from_fn(|t, l| (t + l) % 3 == 0);
    let (kept, _) = filter_samples(&[PaSample::from_bars(&[dense; BARS_PER_SAMPLE])], &cfg);
    ensure(kept.len() == 1, || "std-0 sample dropped".into())?;

    let mut r = rng::stream(8, &[]);
    for batch in 0..200 {
        let samples: Vec<PaSample> = (0..r.gen_range(0..20))
            .map(|_| {
                let bars: [Bar; BARS_PER_SAMPLE] = std::array::from_fn(|_| {
                    if r.gen_bool(0.4) {
                        Bar::empty()
                    } else {
                        let density = r.gen_range(0.0..0.15);
                        random_bar(&mut r, density)
                    }
                });
                PaSample::from_bars(&bars)
            })
            .collect();
        let (once, _) = filter_samples(&samples, &cfg);
        let (twice, report) = filter_samples(&once, &cfg);
        ensure(once == twice && report.kept == once.len(), || format!("filter not idempotent on batch {batch}"))?;
    }
    Ok("4 silent kept, 5 dropped, std-0 kept, idempotent on 200 batches".into())
}

fn main() {
    let selected: Option<Vec<usize>> = std::env::var("DRUMSMITH_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "gradient oracle", criterion_gradients),
        (2, "tokenizer round trip", criterion_tokenizer),
        (3, "novelty oracle", criterion_novelty),
        (4, "overfit smoke tests", criterion_overfit),
        (5, "synthetic end to end", criterion_synthetic),
        (6, "metric oracles", criterion_metrics),
        (7, "cli determinism", criterion_determinism),
        (8, "filter rules", criterion_filter),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        match run() {
            Ok(detail) => println!("PASS  {id} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {id} {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
