//! The `drumsmith` command line.
//!
//! Settings come from three layers: built-in defaults, then the JSON file
//! given with `--config`, then explicit flags such as `--seed` or
//! `--epochs`. Every command writes a manifest next to its outputs that
//! records the command, seed, a hash of the effective config and the crate
//! version.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Config;
use crate::container::load_song;
use crate::dataset::{
    drums_to_song, files_with_extension, load_locations, load_pairs_dir, load_prepared, save_locations, save_pairs,
    save_prepared,
};
use crate::decode::{filter_samples, run_pipeline, PipelineModels, Strategy};
use crate::error::{Error, Result};
use crate::metrics::{
    ic_change, ic_deviation_report, instrument_count, onset_position_histogram, overlap_area, pattern_consistency,
    shared_histograms,
};
use crate::models::train::{split_by_song, train_basic, train_infill, train_locator, EpochRecord, TrainConfig};
use crate::models::{save_model, DecoderVariant};
use crate::novelty::{build_location_dataset, novelty_profile, LocationEntry};
use crate::pianoroll::{PaSample, BARS_PER_SAMPLE, CENTER_BAR};
use crate::preprocess::{prepare, segment_11_bars, PercussionMergeMap, PreparedSong};
use crate::synth::synth_corpus;
use crate::tokenizer::vocabulary;

#[derive(Parser, Debug)]
#[command(name = "drumsmith", version, about = "Drum accompaniment generation for multi-track pianorolls")]
pub struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Progress on stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Turn raw songs into prepared songs and 11-bar sample pairs.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON lane → pitches table (default: General MIDI).
        #[arg(long)]
        merge_map: Option<PathBuf>,
    },
    /// Token vocabulary utilities.
    Tokens {
        /// Print the vocabulary as JSON.
        #[arg(long)]
        dump: bool,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-bar novelty and peaks of one song.
    Novelty {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Build the fill-location dataset from prepared songs.
    Dataset {
        #[arg(long, required = true)]
        locations: bool,
        /// Directory of prepared songs.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the basic generator on sample pairs.
    TrainBasic(TrainArgs),
    /// Train the fill locator on a location dataset.
    TrainLocator(TrainArgs),
    /// Train the infill model on the fill windows of a location dataset.
    TrainInfill {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        variant: Option<DecoderVariant>,
    },
    /// Generate drums for one song with the full pipeline.
    Generate {
        #[arg(long)]
        ma: PathBuf,
        #[arg(long)]
        ckpt_dir: PathBuf,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare generated drums against reference songs.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Preprocess, build datasets, train all three models and generate
    /// drums for every song of a directory.
    Pipeline {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Epoch count for all three models.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write a corpus of synthetic songs with known fill bars.
    Synth {
        #[arg(long, default_value_t = 200)]
        songs: usize,
        #[arg(long, default_value_t = 24)]
        bars: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Sample-pair directory (basic) or location dataset file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Checkpoint stem; writes STEM.ckpt, STEM.json and STEM.metrics.json.
    #[arg(long)]
    pub out: PathBuf,
}

struct Ctx {
    config: Config,
    verbose: u8,
    command: &'static str,
}

impl Ctx {
    fn log(&self, level: u8, msg: impl AsRef<str>) {
        if self.verbose >= level {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn manifest(&self, path: &Path, extra: Value) -> Result<()> {
        let m = json!({
            "command": self.command,
            "seed": self.config.seed,
            "config_hash": self.config.hash(),
            "version": env!("CARGO_PKG_VERSION"),
            "details": extra,
        });
        write_json(path, &m)
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `STEM.suffix` without replacing an existing extension in `STEM`.
fn sibling(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn song_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Parses arguments and runs the command. Returns the process exit code:
/// 0 on success, 1 on an operational error and 2 on a usage error.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Preprocess { .. } => "preprocess",
        Command::Tokens { .. } => "tokens",
        Command::Novelty { .. } => "novelty",
        Command::Dataset { .. } => "dataset",
        Command::TrainBasic(_) => "train-basic",
        Command::TrainLocator(_) => "train-locator",
        Command::TrainInfill { .. } => "train-infill",
        Command::Generate { .. } => "generate",
        Command::Evaluate { .. } => "evaluate",
        Command::Pipeline { .. } => "pipeline",
        Command::Synth { .. } => "synth",
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let command = command_name(&cli.command);
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            if n == 0 {
                return Err(Error::InvalidConfig("--threads must be positive".into()));
            }
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
    };
    let mut ctx = Ctx {
        config,
        verbose: cli.verbose,
        command,
    };
    pool.install(|| dispatch(&mut ctx, cli.command))
}

fn dispatch(ctx: &mut Ctx, command: Command) -> Result<()> {
    match command {
        Command::Preprocess { input, out, merge_map } => {
            let map = match merge_map {
                Some(p) => PercussionMergeMap::load(&p)?,
                None => PercussionMergeMap::general_midi(),
            };
            preprocess_dir(ctx, &input, &out, &map).map(|_| ())
        }
        Command::Tokens { dump, out } => {
            if !dump {
                return Err(Error::InvalidConfig("tokens: nothing to do without --dump".into()));
            }
            let text = serde_json::to_string_pretty(&vocabulary())? + "\n";
            match out {
                Some(p) => {
                    write_text(&p, &text)?;
                    ctx.manifest(&sibling(&p, ".manifest.json"), json!({ "tokens": vocabulary().len() }))
                }
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Novelty { input, csv } => {
            let song = prepare(&song_id(&input), &load_song(&input)?, &PercussionMergeMap::general_midi())?.0;
            let profile = novelty_profile(&song.song_id, &song.drums, ctx.config.novelty.peak_margin)?;
            let mut text = String::from("bar,value,is_peak\n");
            for (bar, v) in profile.values.iter().enumerate() {
                let value = v.map(|x| format!("{x:.12}")).unwrap_or_default();
                writeln!(text, "{bar},{value},{}", profile.is_peak(bar) as u8).expect("string write");
            }
            write_text(&csv, &text)?;
            ctx.manifest(
                &sibling(&csv, ".manifest.json"),
                json!({ "song_id": song.song_id, "bars": song.bars(), "peaks": profile.peaks }),
            )
        }
        Command::Dataset { input, out, .. } => {
            let songs = load_prepared_dir(&input)?;
            build_locations(ctx, &songs, &out).map(|_| ())
        }
        Command::TrainBasic(a) => {
            if let Some(e) = a.epochs {
                ctx.config.train_basic.epochs = e;
            }
            let pairs = load_pairs_dir(&a.data)?;
            run_train_basic(ctx, &pairs, &a.out)
        }
        Command::TrainLocator(a) => {
            if let Some(e) = a.epochs {
                ctx.config.train_locator.epochs = e;
            }
            let entries = load_locations(&a.data)?;
            run_train_locator(ctx, &entries, &a.out)
        }
        Command::TrainInfill { train: a, variant } => {
            if let Some(e) = a.epochs {
                ctx.config.train_infill.epochs = e;
            }
            if let Some(v) = variant {
                ctx.config.infill.variant = v;
            }
            let entries = load_locations(&a.data)?;
            run_train_infill(ctx, &entries, &a.out)
        }
        Command::Generate {
            ma,
            ckpt_dir,
            strategy,
            out,
        } => {
            if let Some(s) = strategy {
                ctx.config.decode.strategy = s;
            }
            let models = PipelineModels::load(&ckpt_dir)?;
            let song = prepare(&song_id(&ma), &load_song(&ma)?, &PercussionMergeMap::general_midi())?.0;
            generate_one(ctx, &models, &song, &out)
        }
        Command::Evaluate {
            generated,
            reference,
            report,
            plots,
        } => evaluate(ctx, &generated, &reference, &report, plots.as_deref()),
        Command::Pipeline { input, out, epochs } => {
            if let Some(e) = epochs {
                for t in [
                    &mut ctx.config.train_basic,
                    &mut ctx.config.train_locator,
                    &mut ctx.config.train_infill,
                ] {
                    t.epochs = e;
                }
            }
            pipeline(ctx, &input, &out)
        }
        Command::Synth { songs, bars, out } => {
            create_dir(&out)?;
            let corpus = synth_corpus(songs, bars, ctx.config.seed);
            let mut fills = BTreeMap::new();
            for s in &corpus {
                crate::container::save_song(&s.song, &out.join(format!("{}.drpr", s.song_id)))?;
                fills.insert(s.song_id.clone(), s.fill_bars.clone());
            }
            ctx.manifest(&out.join("manifest.json"), json!({ "songs": songs, "bars": bars, "fill_bars": fills }))
        }
    }
}

fn load_prepared_dir(dir: &Path) -> Result<Vec<PreparedSong>> {
    let files = files_with_extension(dir, "drpr")?;
    if files.is_empty() {
        return Err(Error::EmptyDataset);
    }
    files.iter().map(|f| load_prepared(f)).collect()
}

fn preprocess_dir(ctx: &Ctx, input: &Path, out: &Path, map: &PercussionMergeMap) -> Result<Vec<PreparedSong>> {
    let files = files_with_extension(input, "drpr")?;
    if files.is_empty() {
        return Err(Error::EmptyDataset);
    }
    create_dir(out)?;
    let mut reports = Vec::new();
    let mut prepared = Vec::new();
    for f in &files {
        let id = song_id(f);
        let (song, report) = prepare(&id, &load_song(f)?, map)?;
        let pairs = segment_11_bars(&song);
        save_prepared(&song, &out.join(format!("{id}.drpr")))?;
        save_pairs(&pairs, &out.join(format!("{id}.pairs")))?;
        ctx.log(1, format!("{id}: {} bars, {} sample pairs", song.bars(), pairs.len()));
        reports.push(report);
        prepared.push(song);
    }
    let total_pairs: usize = reports.iter().map(|r| r.segments).sum();
    ctx.manifest(
        &out.join("manifest.json"),
        json!({ "songs": files.len(), "sample_pairs": total_pairs, "reports": reports }),
    )?;
    Ok(prepared)
}

fn build_locations(ctx: &Ctx, songs: &[PreparedSong], out: &Path) -> Result<Vec<LocationEntry>> {
    let ds = build_location_dataset(songs, &ctx.config.novelty, ctx.config.seed)?;
    save_locations(&ds.entries, out)?;
    ctx.log(1, format!("{} windows, {} fills", ds.entries.len(), ds.count(true)));
    ctx.manifest(
        &sibling(out, ".manifest.json"),
        json!({
            "entries": ds.entries.len(),
            "positives": ds.count(true),
            "negatives": ds.count(false),
            "per_song": ds.per_song,
        }),
    )?;
    Ok(ds.entries)
}

fn split<S: Clone>(items: &[S], song: impl Fn(&S) -> &str, t: &TrainConfig, seed: u64) -> (Vec<S>, Vec<S>) {
    let (tr, va) = split_by_song(items, song, t.val_fraction, seed);
    (
        tr.into_iter().map(|i| items[i].clone()).collect(),
        va.into_iter().map(|i| items[i].clone()).collect(),
    )
}

fn epoch_logger<'a>(ctx: &'a Ctx, name: &'a str) -> impl FnMut(&EpochRecord) + 'a {
    move |r: &EpochRecord| {
        let acc = |x: Option<crate::metrics::ClassificationReport>| x.map(|c| format!("{:.4}", c.accuracy));
        ctx.log(
            1,
            format!(
                "{name} epoch {} lr {:.2e} loss {:.5} val {:?} acc {:?}/{:?}",
                r.epoch,
                r.lr,
                r.train_loss,
                r.val_loss,
                acc(r.train),
                acc(r.val)
            ),
        );
    }
}

fn finish_training<M: crate::models::Checkpointed>(
    ctx: &Ctx,
    out: &Path,
    trained: &crate::models::train::Trained<M>,
    tcfg: &TrainConfig,
    counts: Value,
) -> Result<()> {
    let last_lr = trained.history.last().map(|r| r.lr).unwrap_or(tcfg.lr_start);
    save_model(
        out,
        &trained.model,
        &trained.params,
        trained.steps,
        trained.history.len(),
        last_lr,
        ctx.config.seed,
    )?;
    write_json(&sibling(out, ".metrics.json"), &trained.history)?;
    ctx.manifest(&sibling(out, ".manifest.json"), counts)
}

fn run_train_basic(ctx: &Ctx, pairs: &[crate::preprocess::SamplePair], out: &Path) -> Result<()> {
    let t = &ctx.config.train_basic;
    let (train, val) = split(pairs, |p| p.song_id.as_str(), t, ctx.config.seed);
    let mut log = epoch_logger(ctx, "basic");
    let trained = train_basic(&train, &val, &ctx.config.basic, t, &ctx.config.augment, ctx.config.seed, &mut log)?;
    finish_training(ctx, out, &trained, t, json!({ "train": train.len(), "val": val.len() }))
}

fn run_train_locator(ctx: &Ctx, entries: &[LocationEntry], out: &Path) -> Result<()> {
    let t = &ctx.config.train_locator;
    let (train, val) = split(entries, |e| e.song_id.as_str(), t, ctx.config.seed);
    let mut log = epoch_logger(ctx, "locator");
    let trained = train_locator(&train, &val, &ctx.config.locator, t, &ctx.config.augment, ctx.config.seed, &mut log)?;
    finish_training(ctx, out, &trained, t, json!({ "train": train.len(), "val": val.len() }))
}

fn run_train_infill(ctx: &Ctx, entries: &[LocationEntry], out: &Path) -> Result<()> {
    let t = &ctx.config.train_infill;
    let fills: Vec<LocationEntry> = entries.iter().filter(|e| e.positive).cloned().collect();
    let (train, val) = split(&fills, |e| e.song_id.as_str(), t, ctx.config.seed);
    let mut log = epoch_logger(ctx, "infill");
    let trained = train_infill(
        &train,
        &val,
        &ctx.config.infill,
        t,
        &ctx.config.augment,
        ctx.config.decode.infill_threshold,
        ctx.config.seed,
        &mut log,
    )?;
    finish_training(ctx, out, &trained, t, json!({ "train": train.len(), "val": val.len() }))
}

fn generate_one(ctx: &Ctx, models: &PipelineModels, song: &PreparedSong, out: &Path) -> Result<()> {
    let result = run_pipeline(&song.ma, models, &ctx.config.decode, ctx.config.seed)?;
    ensure_parent(out)?;
    crate::container::save_song(&drums_to_song(&result.drums), out)?;
    write_json(
        &sibling(out, ".json"),
        &json!({
            "song_id": song.song_id,
            "bars": result.drums.bars(),
            "strategy": ctx.config.decode.strategy,
            "flagged_bars": result.flagged,
            "infilled_bars": result.flagged,
            "locator": result.probabilities,
        }),
    )?;
    ctx.log(1, format!("{}: flagged {:?}", song.song_id, result.flagged));
    ctx.manifest(&sibling(out, ".manifest.json"), json!({ "song_id": song.song_id }))
}

fn pipeline(ctx: &Ctx, input: &Path, out: &Path) -> Result<()> {
    let prepared_dir = out.join("prepared");
    let songs = preprocess_dir(ctx, input, &prepared_dir, &PercussionMergeMap::general_midi())?;
    let pairs: Vec<_> = songs.iter().flat_map(segment_11_bars).collect();
    let entries = build_locations(ctx, &songs, &out.join("locations.dsld"))?;
    let ckpt = out.join("checkpoints");
    run_train_basic(ctx, &pairs, &ckpt.join("basic"))?;
    run_train_locator(ctx, &entries, &ckpt.join("locator"))?;
    run_train_infill(ctx, &entries, &ckpt.join("infill"))?;
    let models = PipelineModels::load(&ckpt)?;
    let gen_dir = out.join("generated");
    for song in &songs {
        generate_one(ctx, &models, song, &gen_dir.join(format!("{}.drpr", song.song_id)))?;
    }
    ctx.manifest(
        &out.join("manifest.json"),
        json!({ "songs": songs.len(), "sample_pairs": pairs.len(), "windows": entries.len() }),
    )
}

/// Every non-overlapping 11-bar window of every song in `dir`, keyed by
/// song id.
fn windows_by_song(dir: &Path) -> Result<BTreeMap<String, Vec<PaSample>>> {
    let mut out = BTreeMap::new();
    for f in files_with_extension(dir, "drpr")? {
        let id = song_id(&f);
        let drums = prepare(&id, &load_song(&f)?, &PercussionMergeMap::general_midi())?.0.drums;
        let windows = (0..drums.bars() / BARS_PER_SAMPLE)
            .map(|i| drums.window(i * BARS_PER_SAMPLE))
            .collect::<Result<Vec<_>>>()?;
        out.insert(id, windows);
    }
    Ok(out)
}

#[derive(Serialize)]
struct SetSummary {
    songs: usize,
    samples: usize,
    onset_histogram: Vec<f64>,
    mean_instrument_count: f64,
    mean_pattern_consistency: f64,
    mean_center_ic_change: f64,
}

fn summarize(samples: &[PaSample], songs: usize) -> Result<(SetSummary, Vec<f64>, Vec<f64>, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let bars: Vec<_> = samples.iter().flat_map(|s| s.bars()).collect();
    let ic: Vec<f64> = bars.iter().map(|b| instrument_count(b) as f64).collect();
    let pc: Vec<f64> = samples.iter().flat_map(pattern_consistency).collect();
    let icc: Vec<f64> = samples
        .iter()
        .map(|s| ic_change(s, CENTER_BAR).map(|v| v as f64))
        .collect::<Result<_>>()?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let summary = SetSummary {
        songs,
        samples: samples.len(),
        onset_histogram: onset_position_histogram(&bars).map(|h| h.to_vec()).unwrap_or_default(),
        mean_instrument_count: mean(&ic),
        mean_pattern_consistency: mean(&pc),
        mean_center_ic_change: mean(&icc),
    };
    Ok((summary, ic, pc, icc))
}

fn evaluate(ctx: &Ctx, generated: &Path, reference: &Path, report: &Path, plots: Option<&Path>) -> Result<()> {
    let gen = windows_by_song(generated)?;
    let refs = windows_by_song(reference)?;
    let gen_all: Vec<PaSample> = gen.values().flatten().cloned().collect();
    let ref_all: Vec<PaSample> = refs.values().flatten().cloned().collect();
    let (gs, g_ic, g_pc, g_icc) = summarize(&gen_all, gen.len())?;
    let (rs, r_ic, r_pc, r_icc) = summarize(&ref_all, refs.len())?;

    // Aligned windows of songs present in both sets.
    let (mut ga, mut ra) = (Vec::new(), Vec::new());
    for (id, g) in &gen {
        if let Some(r) = refs.get(id) {
            let n = g.len().min(r.len());
            ga.extend_from_slice(&g[..n]);
            ra.extend_from_slice(&r[..n]);
        }
    }
    let deviation = if ga.is_empty() {
        None
    } else {
        Some(ic_deviation_report(&ga, &ra)?)
    };

    let bins = ctx.config.metrics.bins;
    let mut hists: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    if !gs.onset_histogram.is_empty() && !rs.onset_histogram.is_empty() {
        hists.insert("onset_position", (gs.onset_histogram.clone(), rs.onset_histogram.clone()));
    }
    hists.insert("instrument_count", shared_histograms(&g_ic, &r_ic, bins)?);
    hists.insert("pattern_consistency", shared_histograms(&g_pc, &r_pc, bins)?);
    hists.insert("center_ic_change", shared_histograms(&g_icc, &r_icc, bins)?);
    let mut overlaps = BTreeMap::new();
    for (name, (p, q)) in &hists {
        overlaps.insert(*name, overlap_area(p, q)?);
    }
    let (_, filter) = filter_samples(&gen_all, &ctx.config.decode.filter);

    write_json(
        report,
        &json!({
            "generated": gs,
            "reference": rs,
            "overlap": overlaps,
            "ic_deviation": deviation,
            "filter": filter,
            "bins": bins,
        }),
    )?;
    if let Some(dir) = plots {
        create_dir(dir)?;
        for (name, (p, q)) in &hists {
            let mut csv = String::from("bin,generated,reference\n");
            for (i, (a, b)) in p.iter().zip(q).enumerate() {
                writeln!(csv, "{i},{a:.12},{b:.12}").expect("string write");
            }
            write_text(&dir.join(format!("{name}.csv")), &csv)?;
            write_text(&dir.join(format!("{name}.svg")), &bar_plot_svg(name, p, q))?;
        }
    }
    ctx.manifest(
        &sibling(report, ".manifest.json"),
        json!({ "generated_samples": gen_all.len(), "reference_samples": ref_all.len() }),
    )
}

/// Paired bar chart of two histograms over the same bins.
pub fn bar_plot_svg(title: &str, generated: &[f64], reference: &[f64]) -> String {
    let (w, h, pad) = (640.0, 320.0, 30.0);
    let n = generated.len().max(1) as f64;
    let top = generated.iter().chain(reference).copied().fold(0.0, f64::max).max(1e-12);
    let slot = (w - 2.0 * pad) / n;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <text x=\"{pad}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n"
    );
    for (i, (g, r)) in generated.iter().zip(reference).enumerate() {
        for (k, (v, colour)) in [(g, "#d95f02"), (r, "#1b9e77")].into_iter().enumerate() {
            let bh = v / top * (h - 2.0 * pad);
            let x = pad + i as f64 * slot + k as f64 * slot / 2.0;
            writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{bh:.2}\" fill=\"{colour}\"/>",
                h - pad - bh,
                slot / 2.0
            )
            .expect("string write");
        }
    }
    writeln!(
        s,
        "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n</svg>",
        h - pad,
        w - pad
    )
    .expect("string write");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_with_2() {
        assert_eq!(main_with_args(["drumsmith", "frobnicate"]), 2);
        assert_eq!(main_with_args(["drumsmith", "novelty"]), 2);
    }

    #[test]
    fn operational_errors_exit_with_1() {
        assert_eq!(
            main_with_args(["drumsmith", "novelty", "--in", "/nonexistent/x.drpr", "--csv", "/tmp/unused.csv"]),
            1
        );
    }

    #[test]
    fn svg_has_two_bars_per_bin() {
        let svg = bar_plot_svg("t", &[0.5, 0.5], &[1.0, 0.0]);
        assert_eq!(svg.matches("<rect").count(), 4);
    }
}
