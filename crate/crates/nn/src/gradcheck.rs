//! Central finite-difference gradient checks.
//!
//! The check builds a scalar `L = Σ f(x) ∘ R` with a fixed random `R` so
//! every output element contributes with a distinct weight, then compares
//! the tape gradient of each input against `(L(x + h) - L(x - h)) / 2h`.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::Result;
use crate::graph::{Graph, Mask, Var};
use crate::layers::{
    DecoderBlock, Dense, Embedding, EmbeddingModule, EncoderBlock, FeedForward, HeadGeometry, LayerNorm,
    MultiHeadAttention, PositionEncoder,
};
use crate::params::{ParamBuilder, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-6;
const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst `‖analytic − numeric‖₂ / max(‖analytic‖₂ + ‖numeric‖₂, floor)`
    /// across inputs.
    pub max_rel_error: f64,
    pub checked_inputs: usize,
}

/// Relative error used throughout: norm of the difference over the sum of
/// norms. The floor sits well above central-difference roundoff (~1e-10 at
/// h = 1e-6), so parameters whose true gradient is exactly zero, such as
/// attention key biases, compare as equal instead of dividing noise by noise.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / (na + nn).max(RELATIVE_FLOOR)
}

/// Checks `f` with respect to every tensor in `inputs`.
///
/// `f` receives a fresh graph and the input vars and returns the output
/// var; it must be deterministic.
pub fn check<F, R>(inputs: &[Tensor<f64>], rng: &mut R, step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    R: Rng,
{
    let store = ParamStore::new();
    check_with_params(&store, inputs, rng, step, |g, _, vars| f(g, vars))
}

/// Like [`check`], additionally perturbing every parameter in `store`.
pub fn check_with_params<F, R>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    rng: &mut R,
    step: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
    R: Rng,
{
    // Output shape is needed for the projection weights.
    let out_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = f(&mut g, store, &vars)?;
        g.shape(y)
    };
    let weights = Tensor::from_fn(out_shape[0], out_shape[1], |_, _| rng.gen_range(-1.0..1.0));

    type Grads = (Vec<Option<Tensor<f64>>>, Vec<(ParamId, Tensor<f64>)>);
    let loss = |p: &ParamStore<f64>, xs: &[Tensor<f64>], track: bool| -> Result<(f64, Grads)> {
        let mut g = if track { Graph::new() } else { Graph::inference() };
        let vars: Vec<Var> = xs
            .iter()
            .map(|t| if track { g.input(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        let y = f(&mut g, p, &vars)?;
        let w = g.constant(weights.clone());
        let prod = g.mul(y, w)?;
        let l = g.sum_all(prod);
        let value = g.value(l).data()[0];
        if !track {
            return Ok((value, (Vec::new(), Vec::new())));
        }
        g.backward(l)?;
        let input_grads = vars.iter().map(|&v| g.grad(v).cloned()).collect();
        Ok((value, (input_grads, g.take_param_grads())))
    };

    let (_, (input_grads, param_grads)) = loss(store, inputs, true)?;
    let mut worst = 0.0f64;
    let mut checked = 0;

    let mut xs = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = input.data()[j];
            xs[i].data_mut()[j] = orig + step;
            let plus = loss(store, &xs, false)?.0;
            xs[i].data_mut()[j] = orig - step;
            let minus = loss(store, &xs, false)?.0;
            xs[i].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        let a = input_grads[i]
            .as_ref()
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        worst = worst.max(relative_error(&a, &numeric));
        checked += 1;
    }

    let mut perturbed = store.clone();
    for id in store.ids() {
        let n = store.get(id).len();
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = store.get(id).data()[j];
            perturbed.get_mut(id).data_mut()[j] = orig + step;
            let plus = loss(&perturbed, inputs, false)?.0;
            perturbed.get_mut(id).data_mut()[j] = orig - step;
            let minus = loss(&perturbed, inputs, false)?.0;
            perturbed.get_mut(id).data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        let a = param_grads
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, t)| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        worst = worst.max(relative_error(&a, &numeric));
        checked += 1;
    }

    Ok(GradCheckReport {
        max_rel_error: worst,
        checked_inputs: checked,
    })
}

/// One differentiable operation exercised on a random shape.
pub struct OpCase {
    pub name: &'static str,
    pub run: fn(&mut StdRng) -> Result<GradCheckReport>,
}

fn dim(rng: &mut StdRng) -> usize {
    rng.gen_range(1..=5)
}

fn rand_t(rng: &mut StdRng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn rand_any(rng: &mut StdRng) -> Tensor<f64> {
    let (m, n) = (dim(rng), dim(rng));
    rand_t(rng, m, n)
}

fn rand_with_rows(rng: &mut StdRng, m: usize) -> Tensor<f64> {
    let n = dim(rng);
    rand_t(rng, m, n)
}

fn rand_with_cols(rng: &mut StdRng, n: usize) -> Tensor<f64> {
    let m = dim(rng);
    rand_t(rng, m, n)
}

/// Random values bounded away from zero, for ops with a kink there.
fn rand_off_zero(rng: &mut StdRng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn with_params(
    rng: &mut StdRng,
    build: impl FnOnce(&mut ParamBuilder<'_, f64>),
) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    let mut init = StdRng::seed_from_u64(rng.gen());
    build(&mut ParamBuilder::new(&mut store, &mut init));
    // perturb the deterministic constants (zero biases, unit gains) so every
    // parameter sits at a generic point
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    store
}

fn geometry(rng: &mut StdRng) -> HeadGeometry {
    let heads = rng.gen_range(1..=3);
    let model_dim = rng.gen_range(heads.max(2)..=8);
    HeadGeometry::new(model_dim, heads).expect("heads <= model_dim")
}

/// Every primitive op and layer in the crate.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            run: |rng| {
                let (m, k, n) = (dim(rng), dim(rng), dim(rng));
                let xs = [rand_t(rng, m, k), rand_t(rng, k, n)];
                check(&xs, rng, DEFAULT_STEP, |g, v| g.matmul(v[0], v[1]))
            },
        },
        OpCase {
            name: "matmul_nt",
            run: |rng| {
                let (m, k, n) = (dim(rng), dim(rng), dim(rng));
                let xs = [rand_t(rng, m, k), rand_t(rng, n, k)];
                check(&xs, rng, DEFAULT_STEP, |g, v| g.matmul_nt(v[0], v[1]))
            },
        },
        OpCase {
            name: "add",
            run: |rng| {
                let (m, n) = (dim(rng), dim(rng));
                let xs = [rand_t(rng, m, n), rand_t(rng, m, n)];
                check(&xs, rng, DEFAULT_STEP, |g, v| g.add(v[0], v[1]))
            },
        },
        OpCase {
            name: "add_row",
            run: |rng| {
                let (m, n) = (dim(rng), dim(rng));
                let xs = [rand_t(rng, m, n), rand_t(rng, 1, n)];
                check(&xs, rng, DEFAULT_STEP, |g, v| g.add_row(v[0], v[1]))
            },
        },
        OpCase {
            name: "mul",
            run: |rng| {
                let (m, n) = (dim(rng), dim(rng));
                let xs = [rand_t(rng, m, n), rand_t(rng, m, n)];
                check(&xs, rng, DEFAULT_STEP, |g, v| g.mul(v[0], v[1]))
            },
        },
        OpCase {
            name: "scale",
            run: |rng| {
                let (m, n) = (dim(rng), dim(rng));
                let s = rng.gen_range(-2.0..2.0);
                let xs = [rand_t(rng, m, n)];
                check(&xs, rng, DEFAULT_STEP, move |g, v| Ok(g.scale(v[0], s)))
            },
        },
        OpCase {
            name: "relu",
            run: |rng| {
                let (m, n) = (dim(rng), dim(rng));
                let xs = [rand_off_zero(rng, m, n)];
                check(&xs, rng, DEFAULT_STEP, |g, v| Ok(g.relu(v[0])))
            },
        },
        OpCase {
            name: "sigmoid",
            run: |rng| {
                let (m, n) = (dim(rng), dim(rng));
                let xs = [rand_t(rng, m, n).map(|v| 3.0 * v)];
                check(&xs, rng, DEFAULT_STEP, |g, v| Ok(g.sigmoid(v[0])))
            },
        },
        OpCase {
            name: "softmax",
            run: |rng| {
                let (m, n) = (dim(rng), dim(rng));
                let xs = [rand_t(rng, m, n).map(|v| 2.0 * v)];
                check(&xs, rng, DEFAULT_STEP, |g, v| Ok(g.softmax_rows(v[0], Mask::None)))
            },
        },
        OpCase {
            name: "softmax_causal",
            run: |rng| {
                let n = dim(rng);
                let xs = [rand_t(rng, n, n).map(|v| 2.0 * v)];
                check(&xs, rng, DEFAULT_STEP, |g, v| Ok(g.softmax_rows(v[0], Mask::Causal)))
            },
        },
        OpCase {
            name: "layer_norm",
            run: |rng| {
                let (m, n) = (dim(rng), rng.gen_range(2..=6));
                let xs = [rand_t(rng, m, n), rand_t(rng, 1, n), rand_t(rng, 1, n)];
                check(&xs, rng, DEFAULT_STEP, |g, v| g.layer_norm(v[0], v[1], v[2]))
            },
        },
        OpCase {
            name: "concat_cols",
            run: |rng| {
                let m = dim(rng);
                let xs = [rand_with_rows(rng, m), rand_with_rows(rng, m), rand_with_rows(rng, m)];
                check(&xs, rng, DEFAULT_STEP, |g, v| g.concat_cols(v))
            },
        },
        OpCase {
            name: "slice_cols",
            run: |rng| {
                let (m, n) = (dim(rng), dim(rng) + 1);
                let start = rng.gen_range(0..n);
                let len = rng.gen_range(1..=n - start);
                let xs = [rand_t(rng, m, n)];
                check(&xs, rng, DEFAULT_STEP, move |g, v| g.slice_cols(v[0], start, len))
            },
        },
        OpCase {
            name: "concat_rows",
            run: |rng| {
                let n = dim(rng);
                let xs = [rand_with_cols(rng, n), rand_with_cols(rng, n)];
                check(&xs, rng, DEFAULT_STEP, |g, v| g.concat_rows(v))
            },
        },
        OpCase {
            name: "slice_rows",
            run: |rng| {
                let (m, n) = (dim(rng) + 1, dim(rng));
                let start = rng.gen_range(0..m);
                let len = rng.gen_range(1..=m - start);
                let xs = [rand_t(rng, m, n)];
                check(&xs, rng, DEFAULT_STEP, move |g, v| g.slice_rows(v[0], start, len))
            },
        },
        OpCase {
            name: "mean_rows",
            run: |rng| {
                let xs = [rand_any(rng)];
                check(&xs, rng, DEFAULT_STEP, |g, v| Ok(g.mean_rows(v[0])))
            },
        },
        OpCase {
            name: "transpose",
            run: |rng| {
                let xs = [rand_any(rng)];
                check(&xs, rng, DEFAULT_STEP, |g, v| Ok(g.transpose(v[0])))
            },
        },
        OpCase {
            name: "reshape",
            run: |rng| {
                let (a, b, c) = (dim(rng), dim(rng), dim(rng));
                let xs = [rand_t(rng, a * b, c)];
                check(&xs, rng, DEFAULT_STEP, move |g, v| g.reshape(v[0], a, b * c))
            },
        },
        OpCase {
            name: "gather_rows",
            run: |rng| {
                let (vocab, d) = (dim(rng), dim(rng));
                let ids: Vec<usize> = (0..dim(rng) + 2).map(|_| rng.gen_range(0..vocab)).collect();
                let xs = [rand_t(rng, vocab, d)];
                check(&xs, rng, DEFAULT_STEP, move |g, v| g.gather_rows(v[0], &ids))
            },
        },
        OpCase {
            name: "unfold_rows",
            run: |rng| {
                let k = [1, 3, 5][rng.gen_range(0..3)];
                let xs = [rand_any(rng)];
                check(&xs, rng, DEFAULT_STEP, move |g, v| Ok(g.unfold_rows(v[0], k)))
            },
        },
        OpCase {
            name: "repeat_rows",
            run: |rng| {
                let f = rng.gen_range(1..=3);
                let xs = [rand_any(rng)];
                check(&xs, rng, DEFAULT_STEP, move |g, v| Ok(g.repeat_rows(v[0], f)))
            },
        },
        OpCase {
            name: "sum_all",
            run: |rng| {
                let xs = [rand_any(rng)];
                check(&xs, rng, DEFAULT_STEP, |g, v| Ok(g.sum_all(v[0])))
            },
        },
        OpCase {
            name: "cross_entropy",
            run: |rng| {
                let (m, n) = (dim(rng), dim(rng) + 1);
                let targets: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();
                let xs = [rand_t(rng, m, n).map(|v| 2.0 * v)];
                check(&xs, rng, DEFAULT_STEP, move |g, v| g.cross_entropy(v[0], &targets))
            },
        },
        OpCase {
            name: "huber",
            run: |rng| {
                let (m, n) = (dim(rng), dim(rng));
                let delta = rng.gen_range(0.3..1.0);
                let pred = rand_t(rng, m, n).map(|v| 2.0 * v);
                // keep every residual away from the ±delta seam
                let target = Tensor::from_fn(m, n, |r, c| {
                    let e = pred.get(r, c);
                    if (e.abs() - delta).abs() < 0.05 {
                        e - 0.1
                    } else {
                        0.0
                    }
                });
                let xs = [pred];
                check(&xs, rng, DEFAULT_STEP, move |g, v| g.huber(v[0], &target, delta))
            },
        },
        OpCase {
            name: "dense",
            run: |rng| {
                let (m, i, o) = (dim(rng), dim(rng), dim(rng));
                let mut layer = None;
                let store = with_params(rng, |pb| layer = Some(Dense::new(pb, "d", i, o)));
                let layer = layer.expect("built");
                let xs = [rand_t(rng, m, i)];
                check_with_params(&store, &xs, rng, DEFAULT_STEP, |g, p, v| layer.forward(g, p, v[0]))
            },
        },
        OpCase {
            name: "layer_norm_layer",
            run: |rng| {
                let (m, n) = (dim(rng), rng.gen_range(2..=6));
                let mut layer = None;
                let store = with_params(rng, |pb| layer = Some(LayerNorm::new(pb, "ln", n)));
                let layer = layer.expect("built");
                let xs = [rand_t(rng, m, n)];
                check_with_params(&store, &xs, rng, DEFAULT_STEP, |g, p, v| layer.forward(g, p, v[0]))
            },
        },
        OpCase {
            name: "embedding",
            run: |rng| {
                let (vocab, d) = (dim(rng) + 1, dim(rng));
                let ids: Vec<usize> = (0..dim(rng)).map(|_| rng.gen_range(0..vocab)).collect();
                let mut layer = None;
                let store = with_params(rng, |pb| layer = Some(Embedding::new(pb, "e", vocab, d)));
                let layer = layer.expect("built");
                check_with_params(&store, &[], rng, DEFAULT_STEP, |g, p, _| layer.forward(g, p, &ids))
            },
        },
        OpCase {
            name: "position_encoder",
            run: |rng| {
                let (m, d, o) = (dim(rng), 2 * dim(rng), dim(rng));
                let mut layer = None;
                let store = with_params(rng, |pb| layer = Some(PositionEncoder::new(pb, "pos", d, o)));
                let layer = layer.expect("built");
                let xs = [rand_t(rng, m, d)];
                check_with_params(&store, &xs, rng, DEFAULT_STEP, |g, p, v| layer.forward(g, p, v[0]))
            },
        },
        OpCase {
            name: "embedding_module",
            run: |rng| {
                let (m, i, h, o) = (dim(rng), dim(rng), dim(rng) + 2, dim(rng));
                let mut layer = None;
                let store = with_params(rng, |pb| layer = Some(EmbeddingModule::new(pb, "emb", i, h, o)));
                let layer = layer.expect("built");
                let xs = [rand_t(rng, m, i)];
                check_with_params(&store, &xs, rng, DEFAULT_STEP, |g, p, v| layer.forward(g, p, v[0]))
            },
        },
        OpCase {
            name: "multi_head_attention",
            run: |rng| {
                let geom = geometry(rng);
                let (tq, tk) = (dim(rng), dim(rng));
                let mut layer = None;
                let store = with_params(rng, |pb| layer = Some(MultiHeadAttention::new(pb, "mha", geom)));
                let layer = layer.expect("built");
                let xs = [rand_t(rng, tq, geom.model_dim), rand_t(rng, tk, geom.model_dim)];
                check_with_params(&store, &xs, rng, DEFAULT_STEP, |g, p, v| {
                    layer.forward(g, p, v[0], v[1], Mask::None)
                })
            },
        },
        OpCase {
            name: "multi_head_attention_causal",
            run: |rng| {
                let geom = geometry(rng);
                let t = dim(rng);
                let mut layer = None;
                let store = with_params(rng, |pb| layer = Some(MultiHeadAttention::new(pb, "mha", geom)));
                let layer = layer.expect("built");
                let xs = [rand_t(rng, t, geom.model_dim)];
                check_with_params(&store, &xs, rng, DEFAULT_STEP, |g, p, v| {
                    layer.forward(g, p, v[0], v[0], Mask::Causal)
                })
            },
        },
        OpCase {
            name: "feed_forward",
            run: |rng| {
                let (m, d, h) = (dim(rng), dim(rng), dim(rng) + 2);
                let mut layer = None;
                let store = with_params(rng, |pb| layer = Some(FeedForward::new(pb, "ff", d, h)));
                let layer = layer.expect("built");
                let xs = [rand_t(rng, m, d)];
                check_with_params(&store, &xs, rng, DEFAULT_STEP, |g, p, v| layer.forward(g, p, v[0]))
            },
        },
        OpCase {
            name: "encoder_block",
            run: |rng| {
                let geom = geometry(rng);
                let t = dim(rng);
                let mut layer = None;
                let store = with_params(rng, |pb| {
                    layer = Some(EncoderBlock::new(pb, "enc", geom, 2 * geom.model_dim))
                });
                let layer = layer.expect("built");
                let xs = [rand_t(rng, t, geom.model_dim)];
                check_with_params(&store, &xs, rng, DEFAULT_STEP, |g, p, v| layer.forward(g, p, v[0]))
            },
        },
        OpCase {
            name: "decoder_block",
            run: |rng| {
                let geom = geometry(rng);
                let (t, s) = (dim(rng), dim(rng));
                let mut layer = None;
                let store = with_params(rng, |pb| {
                    layer = Some(DecoderBlock::new(pb, "dec", geom, 2 * geom.model_dim))
                });
                let layer = layer.expect("built");
                let xs = [rand_t(rng, t, geom.model_dim), rand_t(rng, s, geom.model_dim)];
                check_with_params(&store, &xs, rng, DEFAULT_STEP, |g, p, v| layer.forward(g, p, v[0], v[1]))
            },
        },
    ]
}
