//! Mini-batch Adam training shared by the three models.
//!
//! Per-sample gradients may be computed on several threads, but they are
//! always summed in sample order, so results are bit-identical for any
//! thread count.

use std::collections::BTreeSet;

use drumsmith_nn::{Adam, AdamConfig, Graph, LrSchedule, ParamId, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BasicDrumGen, Checkpointed, Infill, Locator};
use crate::augment::{augment_ma, drop_input, drum_noise, AugmentConfig};
use crate::error::{Error, Result};
use crate::metrics::{classification_report, ClassificationReport};
use crate::models::infill::{bar_tensor, mask_center, threshold_bar};
use crate::novelty::LocationEntry;
use crate::pianoroll::CENTER_BAR;
use crate::preprocess::SamplePair;
use crate::rng::{self, Rng};
use crate::tokenizer::encode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Fraction of songs held out for validation.
    pub val_fraction: f64,
    pub augment: bool,
    /// Stop once an epoch's mean training loss falls below this value.
    pub stop_below: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 16,
            lr_start: 1e-4,
            lr_end: 1e-6,
            val_fraction: 0.2,
            augment: true,
            stop_below: None,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(self.lr_start, self.lr_end, self.epochs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub train: Option<ClassificationReport>,
    pub val: Option<ClassificationReport>,
}

pub struct Trained<M> {
    pub model: M,
    pub params: ParamStore<f32>,
    pub history: Vec<EpochRecord>,
    pub steps: u64,
}

type Grads = Vec<(ParamId, Tensor<f32>)>;

struct Outcome {
    loss: f64,
    grads: Grads,
    preds: Vec<bool>,
    labels: Vec<bool>,
}

/// Splits item indices into (train, validation) by song, so no song
/// contributes to both sides.
pub fn split_by_song<S>(items: &[S], song: impl Fn(&S) -> &str, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let songs: BTreeSet<&str> = items.iter().map(&song).collect();
    let mut songs: Vec<&str> = songs.into_iter().collect();
    songs.shuffle(&mut rng::stream(seed, &[0x5b11]));
    let n_val = if songs.len() < 2 || val_fraction <= 0.0 {
        0
    } else {
        ((val_fraction * songs.len() as f64).round() as usize).clamp(1, songs.len() - 1)
    };
    let val: BTreeSet<&str> = songs[..n_val].iter().copied().collect();
    (0..items.len()).partition(|&i| !val.contains(song(&items[i])))
}

fn accumulate(acc: &mut [Option<Tensor<f32>>], grads: Grads) {
    for (id, g) in grads {
        match &mut acc[id.index()] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Runs the optimizer and returns the per-epoch (lr, mean loss, train
/// predictions, train labels) after calling `after_epoch`.
fn fit<S, F>(
    params: &mut ParamStore<f32>,
    data: &[S],
    cfg: &TrainConfig,
    seed: u64,
    sample_loss: F,
    mut after_epoch: impl FnMut(usize, f64, f64, Option<ClassificationReport>, &ParamStore<f32>) -> Result<()>,
) -> Result<u64>
where
    S: Sync,
    F: Fn(&ParamStore<f32>, &S, &mut Rng) -> Result<Outcome> + Sync,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let schedule = cfg.schedule();
    let mut adam = Adam::new(params, AdamConfig::default());
    let batch = cfg.batch_size.max(1);
    let group = rayon::current_num_threads().max(1);
    let ids: Vec<ParamId> = params.ids().collect();
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(seed, &[0xe90c, epoch as u64]));
        let (mut loss_sum, mut preds, mut labels) = (0.0, Vec::new(), Vec::new());
        for chunk in order.chunks(batch) {
            let mut acc: Vec<Option<Tensor<f32>>> = vec![None; params.len()];
            for sub in chunk.chunks(group) {
                let snapshot = &*params;
                let outcomes: Vec<Result<Outcome>> = sub
                    .par_iter()
                    .map(|&i| {
                        let mut r = rng::stream(seed, &[0xa06, epoch as u64, i as u64]);
                        sample_loss(snapshot, &data[i], &mut r)
                    })
                    .collect();
                for o in outcomes {
                    let o = o?;
                    loss_sum += o.loss;
                    preds.extend(o.preds);
                    labels.extend(o.labels);
                    accumulate(&mut acc, o.grads);
                }
            }
            let scale = 1.0 / chunk.len() as f32;
            let grads: Grads = acc
                .into_iter()
                .enumerate()
                .filter_map(|(i, g)| g.map(|mut t| {
                    t.scale_assign(scale);
                    (ids[i], t)
                }))
                .collect();
            adam.step(params, &grads, lr);
        }
        let report = if preds.is_empty() {
            None
        } else {
            Some(classification_report(&preds, &labels)?)
        };
        let mean = loss_sum / data.len() as f64;
        after_epoch(epoch, lr, mean, report, params)?;
        if cfg.stop_below.is_some_and(|t| mean < t) {
            break;
        }
    }
    Ok(adam.steps())
}

fn grads_of(g: &mut Graph<f32>, loss: drumsmith_nn::Var) -> Result<(f64, Grads)> {
    let value = g.value(loss).data()[0] as f64;
    g.backward(loss)?;
    Ok((value, g.take_param_grads()))
}

/// Mean over items of `f`, evaluated in parallel but reduced in order.
fn mean_over<S: Sync>(data: &[S], f: impl Fn(&S) -> Result<f64> + Sync + Send) -> Result<f64> {
    let values: Vec<Result<f64>> = data.par_iter().map(f).collect();
    let mut sum = 0.0;
    for v in values {
        sum += v?;
    }
    Ok(sum / data.len().max(1) as f64)
}

pub fn basic_nll(model: &BasicDrumGen, params: &ParamStore<f32>, pair: &SamplePair) -> Result<f64> {
    let mut g = Graph::inference();
    let ma = g.constant(pair.ma.to_tensor());
    let loss = model.loss(&mut g, params, ma, &encode(&pair.pa).as_usize())?;
    Ok(g.value(loss).data()[0] as f64)
}

pub fn train_basic(
    train: &[SamplePair],
    val: &[SamplePair],
    model_cfg: &<BasicDrumGen as Checkpointed>::Config,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    seed: u64,
    log: &mut dyn FnMut(&EpochRecord),
) -> Result<Trained<BasicDrumGen>> {
    let (model, mut params) = BasicDrumGen::init::<f32>(model_cfg, seed)?;
    let mut history = Vec::new();
    let steps = fit(
        &mut params,
        train,
        cfg,
        seed,
        |p, pair, r| {
            let ma = if cfg.augment { augment_ma(&pair.ma, aug, r) } else { pair.ma.clone() };
            let mut g = Graph::new();
            let x = g.constant(ma.to_tensor());
            let loss = model.loss(&mut g, p, x, &encode(&pair.pa).as_usize())?;
            let (loss, grads) = grads_of(&mut g, loss)?;
            Ok(Outcome {
                loss,
                grads,
                preds: Vec::new(),
                labels: Vec::new(),
            })
        },
        |epoch, lr, train_loss, _, p| {
            let val_loss = if val.is_empty() {
                None
            } else {
                Some(mean_over(val, |s| basic_nll(&model, p, s))?)
            };
            let rec = EpochRecord {
                epoch,
                lr,
                train_loss,
                val_loss,
                train: None,
                val: None,
            };
            log(&rec);
            history.push(rec);
            Ok(())
        },
    )?;
    Ok(Trained {
        model,
        params,
        history,
        steps,
    })
}

/// Predictions (`p(fill) > 0.5`) and Huber losses of the locator.
pub fn evaluate_locator(model: &Locator, params: &ParamStore<f32>, data: &[LocationEntry]) -> Result<(f64, ClassificationReport)> {
    let outs: Vec<Result<(f64, bool)>> = data
        .par_iter()
        .map(|e| {
            let mut g = Graph::inference();
            let x = g.constant(e.ma.to_tensor());
            let probs = model.forward(&mut g, params, x)?;
            let p1 = g.value(probs).data()[1];
            let loss = model.loss_from_probs(&mut g, probs, e.positive)?;
            Ok((g.value(loss).data()[0] as f64, p1 > 0.5))
        })
        .collect();
    let (mut loss, mut preds) = (0.0, Vec::with_capacity(data.len()));
    for o in outs {
        let (l, p) = o?;
        loss += l;
        preds.push(p);
    }
    let labels: Vec<bool> = data.iter().map(|e| e.positive).collect();
    Ok((loss / data.len().max(1) as f64, classification_report(&preds, &labels)?))
}

pub fn train_locator(
    train: &[LocationEntry],
    val: &[LocationEntry],
    model_cfg: &<Locator as Checkpointed>::Config,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    seed: u64,
    log: &mut dyn FnMut(&EpochRecord),
) -> Result<Trained<Locator>> {
    let (model, mut params) = Locator::init::<f32>(model_cfg, seed)?;
    let mut history = Vec::new();
    let steps = fit(
        &mut params,
        train,
        cfg,
        seed,
        |p, e, r| {
            let ma = if cfg.augment { augment_ma(&e.ma, aug, r) } else { e.ma.clone() };
            let mut g = Graph::new();
            let x = g.constant(ma.to_tensor());
            let probs = model.forward(&mut g, p, x)?;
            let pred = g.value(probs).data()[1] > 0.5;
            let loss = model.loss_from_probs(&mut g, probs, e.positive)?;
            let (loss, grads) = grads_of(&mut g, loss)?;
            Ok(Outcome {
                loss,
                grads,
                preds: vec![pred],
                labels: vec![e.positive],
            })
        },
        |epoch, lr, train_loss, train_report, p| {
            let (val_loss, val_report) = if val.is_empty() {
                (None, None)
            } else {
                let (l, r) = evaluate_locator(&model, p, val)?;
                (Some(l), Some(r))
            };
            let rec = EpochRecord {
                epoch,
                lr,
                train_loss,
                val_loss,
                train: train_report,
                val: val_report,
            };
            log(&rec);
            history.push(rec);
            Ok(())
        },
    )?;
    Ok(Trained {
        model,
        params,
        history,
        steps,
    })
}

/// Huber loss and cell-level predictions at `threshold` for each entry.
pub fn evaluate_infill(
    model: &Infill,
    params: &ParamStore<f32>,
    data: &[LocationEntry],
    threshold: f64,
) -> Result<(f64, ClassificationReport)> {
    let outs: Vec<Result<(f64, Vec<bool>, Vec<bool>)>> = data
        .par_iter()
        .map(|e| {
            let target = e.pa.bar(CENTER_BAR)?;
            let probs = model.predict(params, &e.ma.to_tensor(), &e.pa)?;
            let mut g = Graph::inference();
            let pv = g.constant(probs.clone());
            let l = g.huber(pv, &bar_tensor::<f32>(&target), model.config().huber_delta as f32)?;
            let pred = threshold_bar(&probs, threshold);
            Ok((
                g.value(l).data()[0] as f64,
                pred.cells().iter().map(|&v| v == 1).collect(),
                target.cells().iter().map(|&v| v == 1).collect(),
            ))
        })
        .collect();
    let (mut loss, mut preds, mut labels) = (0.0, Vec::new(), Vec::new());
    for o in outs {
        let (l, p, t) = o?;
        loss += l;
        preds.extend(p);
        labels.extend(t);
    }
    Ok((loss / data.len().max(1) as f64, classification_report(&preds, &labels)?))
}

#[allow(clippy::too_many_arguments)]
pub fn train_infill(
    train: &[LocationEntry],
    val: &[LocationEntry],
    model_cfg: &<Infill as Checkpointed>::Config,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    threshold: f64,
    seed: u64,
    log: &mut dyn FnMut(&EpochRecord),
) -> Result<Trained<Infill>> {
    let (model, mut params) = Infill::init::<f32>(model_cfg, seed)?;
    let mut history = Vec::new();
    let steps = fit(
        &mut params,
        train,
        cfg,
        seed,
        |p, e, r| {
            let target = e.pa.bar(CENTER_BAR)?;
            let (ma, pa) = if cfg.augment {
                let ma = augment_ma(&e.ma, aug, r);
                let pa = drum_noise(&e.pa, aug.max_drum_flips(), r);
                let (ma, pa, _) = drop_input(&ma, &pa, aug.input_drop_frac, r);
                (ma, pa)
            } else {
                (e.ma.clone(), e.pa.clone())
            };
            let mut g = Graph::new();
            let x = g.constant(ma.to_tensor());
            let d = g.constant(mask_center(&pa).to_tensor());
            let probs = model.forward(&mut g, p, x, d)?;
            let pred = threshold_bar(g.value(probs), threshold);
            let loss = g.huber(probs, &bar_tensor(&target), model.config().huber_delta as f32)?;
            let (loss, grads) = grads_of(&mut g, loss)?;
            Ok(Outcome {
                loss,
                grads,
                preds: pred.cells().iter().map(|&v| v == 1).collect(),
                labels: target.cells().iter().map(|&v| v == 1).collect(),
            })
        },
        |epoch, lr, train_loss, train_report, p| {
            let (val_loss, val_report) = if val.is_empty() {
                (None, None)
            } else {
                let (l, r) = evaluate_infill(&model, p, val, threshold)?;
                (Some(l), Some(r))
            };
            let rec = EpochRecord {
                epoch,
                lr,
                train_loss,
                val_loss,
                train: train_report,
                val: val_report,
            };
            log(&rec);
            history.push(rec);
            Ok(())
        },
    )?;
    Ok(Trained {
        model,
        params,
        history,
        steps,
    })
}
