//! Shared test helpers: finite-difference gradient checks, random inputs
//! and brute-force feature oracles.
#![allow(dead_code, clippy::needless_range_loop)]

use aqisense_core::ground::{GcLstm, GcLstmConfig, Station, StationGraph};
use aqisense_core::haze::{bin256, BinaryMask, GrayImage, RgbImage};
use aqisense_core::mobilenet::{build_model, BlockSpec, DenseMobileNetConfig};
use aqisense_core::nn::{lstm_cell, Activation, Bound, Graph, LstmVars, ParamSet, Tensor, Var};
use aqisense_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Values bounded away from zero, so ReLU kinks stay out of reach of the
/// finite-difference stencil.
pub fn rand_nonzero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||a - n|| / max(||a||, ||n||)`, or the absolute gap when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn eval(params: &ParamSet, build: &dyn Fn(&mut Graph, &Bound) -> Result<Var>) -> f64 {
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let loss = build(&mut g, &b).unwrap();
    g.value(loss).item()
}

/// Largest per-tensor relative error between backpropagated gradients and
/// central differences with step [`FD_STEP`].
pub fn grad_check(params: &ParamSet, build: &dyn Fn(&mut Graph, &Bound) -> Result<Var>) -> f64 {
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let loss = build(&mut g, &b).unwrap();
    let mut grads = g.backward(loss).unwrap();
    let analytic = b.gradients(&mut grads).unwrap();

    let mut worst = 0.0f64;
    for (name, t) in params.iter() {
        let mut numeric = vec![0.0; t.len()];
        for i in 0..t.len() {
            let shifted = |delta: f64| -> f64 {
                let p: ParamSet = params
                    .iter()
                    .map(|(k, v)| {
                        let mut v = v.clone();
                        if k == name {
                            v.data_mut()[i] += delta;
                        }
                        (k.to_string(), v)
                    })
                    .collect();
                eval(&p, build)
            };
            numeric[i] = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
        }
        let a = analytic.get(name).unwrap().data();
        worst = worst.max(rel_error(a, &numeric));
    }
    worst
}

fn set(entries: Vec<(&str, Tensor)>) -> ParamSet {
    entries
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

type LossFn = dyn Fn(&mut Graph, &Bound) -> Result<Var>;
type Case = (ParamSet, Box<LossFn>);

/// Scalar loss `mse(y, target)` around an op output `y`.
fn wrap(target: Tensor, op: impl Fn(&mut Graph, &Bound) -> Result<Var> + 'static) -> Box<LossFn> {
    Box::new(move |g, b| {
        let y = op(g, b)?;
        g.mse(y, &target)
    })
}

/// One random instance of every differentiable primitive.
pub fn primitive_cases(seed: u64) -> Vec<(&'static str, Case)> {
    let r = &mut rng(seed);
    let mut out: Vec<(&'static str, Case)> = Vec::new();

    let p = set(vec![
        ("a", rand_tensor(&[2, 3], r)),
        ("b", rand_tensor(&[3, 4], r)),
    ]);
    out.push((
        "matmul",
        (
            p,
            wrap(rand_tensor(&[2, 4], r), |g, b| {
                g.matmul(b.var("a"), b.var("b"))
            }),
        ),
    ));

    let p = set(vec![("a", rand_tensor(&[2, 3], r))]);
    out.push((
        "transpose",
        (
            p,
            wrap(rand_tensor(&[3, 2], r), |g, b| g.transpose(b.var("a"))),
        ),
    ));

    let p = set(vec![
        ("a", rand_tensor(&[2, 3], r)),
        ("b", rand_tensor(&[2, 3], r)),
    ]);
    out.push((
        "add",
        (
            p.clone(),
            wrap(rand_tensor(&[2, 3], r), |g, b| {
                g.add(b.var("a"), b.var("b"))
            }),
        ),
    ));
    out.push((
        "sub",
        (
            p.clone(),
            wrap(rand_tensor(&[2, 3], r), |g, b| {
                g.sub(b.var("a"), b.var("b"))
            }),
        ),
    ));
    out.push((
        "mul",
        (
            p,
            wrap(rand_tensor(&[2, 3], r), |g, b| {
                g.mul(b.var("a"), b.var("b"))
            }),
        ),
    ));

    let p = set(vec![
        ("x", rand_tensor(&[3, 4], r)),
        ("b", rand_tensor(&[4], r)),
    ]);
    out.push((
        "add_row_bias",
        (
            p,
            wrap(rand_tensor(&[3, 4], r), |g, b| {
                g.add_row_bias(b.var("x"), b.var("b"))
            }),
        ),
    ));

    let p = set(vec![("a", rand_tensor(&[2, 3], r))]);
    out.push((
        "scale",
        (
            p.clone(),
            wrap(
                rand_tensor(&[2, 3], r),
                |g, b| Ok(g.scale(b.var("a"), -1.7)),
            ),
        ),
    ));
    out.push((
        "sigmoid",
        (
            p.clone(),
            wrap(rand_tensor(&[2, 3], r), |g, b| Ok(g.sigmoid(b.var("a")))),
        ),
    ));
    out.push((
        "tanh",
        (
            p.clone(),
            wrap(rand_tensor(&[2, 3], r), |g, b| Ok(g.tanh(b.var("a")))),
        ),
    ));
    out.push((
        "reshape",
        (
            p,
            wrap(rand_tensor(&[3, 2], r), |g, b| {
                g.reshape(b.var("a"), &[3, 2])
            }),
        ),
    ));

    let p = set(vec![("a", rand_nonzero(&[2, 3], r))]);
    out.push((
        "relu",
        (
            p,
            wrap(rand_tensor(&[2, 3], r), |g, b| Ok(g.relu(b.var("a")))),
        ),
    ));

    let p = set(vec![
        ("x", rand_tensor(&[2, 5, 5], r)),
        ("k", rand_tensor(&[2, 3, 3], r)),
    ]);
    out.push((
        "depthwise_conv_pad",
        (
            p.clone(),
            wrap(rand_tensor(&[2, 5, 5], r), |g, b| {
                g.depthwise_conv(b.var("x"), b.var("k"), 1, 1)
            }),
        ),
    ));
    out.push((
        "depthwise_conv_stride",
        (
            p,
            wrap(rand_tensor(&[2, 2, 2], r), |g, b| {
                g.depthwise_conv(b.var("x"), b.var("k"), 2, 0)
            }),
        ),
    ));

    let p = set(vec![
        ("x", rand_tensor(&[3, 4, 4], r)),
        ("w", rand_tensor(&[2, 3], r)),
    ]);
    out.push((
        "pointwise_conv",
        (
            p,
            wrap(rand_tensor(&[2, 4, 4], r), |g, b| {
                g.pointwise_conv(b.var("x"), b.var("w"))
            }),
        ),
    ));

    let p = set(vec![("x", rand_tensor(&[3, 2, 3], r))]);
    out.push((
        "global_avg_pool",
        (
            p,
            wrap(rand_tensor(&[3], r), |g, b| g.global_avg_pool(b.var("x"))),
        ),
    ));

    let p = set(vec![
        ("a", rand_tensor(&[2, 3, 3], r)),
        ("b", rand_tensor(&[1, 3, 3], r)),
    ]);
    out.push((
        "concat_leading",
        (
            p,
            wrap(rand_tensor(&[3, 3, 3], r), |g, b| {
                g.concat_leading(&[b.var("a"), b.var("b")])
            }),
        ),
    ));

    let p = set(vec![
        ("a", rand_tensor(&[4], r)),
        ("b", rand_tensor(&[4], r)),
    ]);
    out.push((
        "stack_rows",
        (
            p,
            wrap(rand_tensor(&[2, 4], r), |g, b| {
                g.stack_rows(&[b.var("a"), b.var("b")])
            }),
        ),
    ));

    let p = set(vec![
        ("a", rand_tensor(&[3, 2], r)),
        ("b", rand_tensor(&[3, 1], r)),
    ]);
    out.push((
        "concat_cols",
        (
            p,
            wrap(rand_tensor(&[3, 3], r), |g, b| {
                g.concat_cols(&[b.var("a"), b.var("b")])
            }),
        ),
    ));

    let p = set(vec![("z", Tensor::uniform(&[3, 4], 2.0, r))]);
    let labels: Vec<usize> = (0..3).map(|_| r.gen_range(0..4)).collect();
    out.push((
        "softmax_cross_entropy",
        (
            p,
            Box::new(move |g, b| g.softmax_cross_entropy(b.var("z"), &labels)),
        ),
    ));

    let p = set(vec![("y", rand_tensor(&[2, 3], r))]);
    let target = rand_tensor(&[2, 3], r);
    out.push(("mse", (p, Box::new(move |g, b| g.mse(b.var("y"), &target)))));

    let (hidden, input, batch) = (3, 2, 2);
    let mut p = set(vec![
        ("x", rand_tensor(&[batch, input], r)),
        ("h0", rand_tensor(&[batch, hidden], r)),
        ("c0", rand_tensor(&[batch, hidden], r)),
    ]);
    aqisense_core::nn::LstmWeights::init(hidden, input, r)
        .insert_into("cell", &mut p)
        .unwrap();
    let t_h = rand_tensor(&[batch, hidden], r);
    let t_c = rand_tensor(&[batch, hidden], r);
    out.push((
        "lstm_cell",
        (
            p,
            Box::new(move |g, b| {
                let cell = LstmVars::from_bound(g, "cell", b)?;
                let (h, c) = lstm_cell(g, b.var("x"), b.var("h0"), b.var("c0"), &cell)?;
                let lh = g.mse(h, &t_h)?;
                let lc = g.mse(c, &t_c)?;
                g.add(lh, lc)
            }),
        ),
    ));

    let prop = StationGraph::new(vec![
        Station::new("a", 23.10, 113.20).unwrap(),
        Station::new("b", 23.13, 113.24).unwrap(),
        Station::new("c", 23.07, 113.27).unwrap(),
    ])
    .unwrap()
    .propagation;
    let p = set(vec![
        ("j", rand_nonzero(&[3, 2], r)),
        ("w", rand_tensor(&[2, 4], r)),
    ]);
    out.push((
        "gc_forward",
        (
            p,
            wrap(rand_tensor(&[3, 4], r), move |g, b| {
                let pv = g.input(prop.clone());
                aqisense_core::ground::gc_forward(g, pv, b.var("j"), b.var("w"), Activation::Tanh)
            }),
        ),
    ));
    out
}

/// Worst relative error per primitive over `cases` random instances.
pub fn primitive_grad_errors(cases: u64) -> Vec<(&'static str, f64)> {
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for seed in 0..cases {
        for (name, (params, build)) in primitive_cases(seed) {
            let e = grad_check(&params, build.as_ref());
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some(slot) => slot.1 = slot.1.max(e),
                None => worst.push((name, e)),
            }
        }
    }
    worst
}

/// Tiny densely connected classifier on 8x8 inputs.
pub fn tiny_mobilenet_grad_error(seed: u64) -> f64 {
    let cfg = DenseMobileNetConfig {
        input_size: 8,
        input_channels: 6,
        blocks: vec![
            BlockSpec {
                layers: 2,
                growth: 3,
            },
            BlockSpec {
                layers: 1,
                growth: 2,
            },
        ],
        kernel: 3,
        classes: 3,
        seed,
    };
    let (model, params) = build_model(&cfg).unwrap();
    let r = &mut rng(seed + 100);
    let xs = [rand_tensor(&[6, 8, 8], r), rand_tensor(&[6, 8, 8], r)];
    let labels = [0usize, 2];
    grad_check(&params, &move |g, b| {
        let inputs: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let logits = model.forward(g, b, &inputs)?;
        g.softmax_cross_entropy(logits, &labels)
    })
}

/// GC-LSTM with 3 stations and 2 input steps.
pub fn tiny_gclstm_grad_error(seed: u64) -> f64 {
    let cfg = GcLstmConfig {
        window: 2,
        horizon: 2,
        gc_out: 3,
        hidden: 4,
        gc_activation: Activation::Tanh,
        ..Default::default()
    };
    let model = GcLstm::new(cfg, 3, 2).unwrap();
    let params = model.init_params(seed);
    let prop = StationGraph::new(vec![
        Station::new("a", 23.10, 113.20).unwrap(),
        Station::new("b", 23.13, 113.24).unwrap(),
        Station::new("c", 23.07, 113.27).unwrap(),
    ])
    .unwrap()
    .propagation;
    let r = &mut rng(seed + 200);
    let steps = [rand_tensor(&[3, 2], r), rand_tensor(&[3, 2], r)];
    let target = rand_tensor(&[3, 2], r);
    grad_check(&params, &move |g, b| {
        let p = g.input(prop.clone());
        let xs: Vec<Var> = steps.iter().map(|x| g.input(x.clone())).collect();
        let out = model.forward(g, b, p, &xs)?;
        g.mse(out, &target)
    })
}

pub fn random_image(w: usize, h: usize, r: &mut ChaCha8Rng) -> RgbImage {
    let px: Vec<[f64; 3]> = (0..w * h)
        .map(|_| {
            [
                r.gen_range(0.0..1.0),
                r.gen_range(0.0..1.0),
                r.gen_range(0.0..1.0),
            ]
        })
        .collect();
    RgbImage::new(w, h, px).unwrap()
}

fn neighbours(x: usize, y: usize, w: usize, h: usize, win: usize) -> Vec<(usize, usize)> {
    let r = (win / 2) as isize;
    let mut v = Vec::new();
    for yy in 0..h {
        for xx in 0..w {
            if (xx as isize - x as isize).abs() <= r && (yy as isize - y as isize).abs() <= r {
                v.push((xx, yy));
            }
        }
    }
    v
}

pub fn oracle_dark_channel(img: &RgbImage, patch: usize) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut m = f64::INFINITY;
            for (xx, yy) in neighbours(x, y, w, h, patch) {
                for c in 0..3 {
                    m = m.min(img.get(xx, yy)[c]);
                }
            }
            out.push(m);
        }
    }
    out
}

pub fn oracle_transmission(img: &RgbImage, a: [f64; 3], patch: usize) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut m = f64::INFINITY;
            for (xx, yy) in neighbours(x, y, w, h, patch) {
                for c in 0..3 {
                    m = m.min(img.get(xx, yy)[c] / a[c]);
                }
            }
            out.push((1.0 - m).clamp(0.0, 1.0));
        }
    }
    out
}

fn std_of(v: &[f64]) -> f64 {
    if v.iter().all(|&a| a == v[0]) {
        return 0.0;
    }
    let n = v.len() as f64;
    let mut s = 0.0;
    for a in v {
        s += a;
    }
    let mean = s / n;
    let mut ss = 0.0;
    for a in v {
        ss += (a - mean) * (a - mean);
    }
    (ss / n).sqrt()
}

fn entropy_of(v: &[f64]) -> f64 {
    let mut hist = [0usize; 256];
    for &a in v {
        hist[bin256(a)] += 1;
    }
    let n = v.len() as f64;
    let mut e = 0.0;
    for &c in hist.iter() {
        if c > 0 {
            let p = c as f64 / n;
            e -= p * p.log2();
        }
    }
    e
}

fn local(gray: &GrayImage, win: usize, f: fn(&[f64]) -> f64) -> Vec<f64> {
    let (w, h) = (gray.width(), gray.height());
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let vals: Vec<f64> = neighbours(x, y, w, h, win)
                .into_iter()
                .map(|(xx, yy)| gray.get(xx, yy))
                .collect();
            out.push(f(&vals));
        }
    }
    out
}

pub fn oracle_rms(gray: &GrayImage, win: usize) -> (Vec<f64>, f64) {
    (local(gray, win, std_of), std_of(gray.data()))
}

pub fn oracle_entropy(gray: &GrayImage, win: usize) -> (Vec<f64>, f64) {
    (local(gray, win, entropy_of), entropy_of(gray.data()))
}

/// Central differences inside, one-sided at the border; mean over the mask.
pub fn oracle_smoothness(gray: &GrayImage, mask: &BinaryMask) -> (Vec<f64>, f64) {
    let (w, h) = (gray.width(), gray.height());
    let at = |x: usize, y: usize| gray.get(x, y);
    let mut map = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let gx = if x == 0 {
                at(1, y) - at(0, y)
            } else if x == w - 1 {
                at(w - 1, y) - at(w - 2, y)
            } else {
                0.5 * (at(x + 1, y) - at(x - 1, y))
            };
            let gy = if y == 0 {
                at(x, 1) - at(x, 0)
            } else if y == h - 1 {
                at(x, h - 1) - at(x, h - 2)
            } else {
                0.5 * (at(x, y + 1) - at(x, y - 1))
            };
            map.push((gx * gx + gy * gy).sqrt());
        }
    }
    let (mut s, mut n) = (0.0, 0usize);
    for (v, &m) in map.iter().zip(mask.data()) {
        if m {
            s += v;
            n += 1;
        }
    }
    let avg = if n == 0 {
        map.iter().sum::<f64>() / map.len() as f64
    } else {
        s / n as f64
    };
    (map, avg)
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn tiny_net_config(seed: u64) -> DenseMobileNetConfig {
    DenseMobileNetConfig {
        input_size: 8,
        input_channels: 6,
        blocks: vec![BlockSpec {
            layers: 2,
            growth: 3,
        }],
        kernel: 3,
        classes: 3,
        seed,
    }
}

pub fn random_examples(
    n: usize,
    cfg: &DenseMobileNetConfig,
    seed: u64,
) -> Vec<aqisense_core::mobilenet::Example> {
    let r = &mut rng(seed);
    (0..n)
        .map(|i| aqisense_core::mobilenet::Example {
            input: rand_tensor(&[cfg.input_channels, cfg.input_size, cfg.input_size], r),
            label: i % cfg.classes,
        })
        .collect()
}

/// Max absolute gap between one FedAvg round over `k` clients that all hold
/// the same data (full batch, one local step) and one centralized step on
/// the pooled data.
pub fn fedavg_one_step_gap(k: usize, seed: u64) -> f64 {
    use aqisense_core::fed::{run_federation, ClientState, Loopback, RoundConfig, Swarm};
    use aqisense_core::mobilenet::loss_and_grad;
    use aqisense_core::nn::sgd_step;

    let cfg = tiny_net_config(seed);
    let (model, init) = build_model(&cfg).unwrap();
    let data = random_examples(12, &cfg, seed + 1);
    let clients: Vec<ClientState> = (0..k)
        .map(|i| {
            let swarm = if i % 2 == 0 { Swarm::A } else { Swarm::B };
            ClientState::from_examples(format!("c{i}"), swarm, data.clone(), i as u64).unwrap()
        })
        .collect();
    let round = RoundConfig {
        rounds: 1,
        local_epochs: 1,
        batch: data.len(),
        lr: 0.1,
        convergence_tol: 0.0,
        ..Default::default()
    };
    let (fed, _) = run_federation(&model, &clients, &init, &round, None, &Loopback).unwrap();

    let pooled: Vec<&aqisense_core::mobilenet::Example> =
        (0..k).flat_map(|_| data.iter()).collect();
    let (_, grads) = loss_and_grad(&model, &init, &pooled).unwrap();
    let central = sgd_step(&init, &grads, round.lr, 0.0).unwrap();
    fed.iter()
        .zip(central.iter())
        .map(|((_, a), (_, b))| a.max_abs_diff(b))
        .fold(0.0, f64::max)
}

/// Per-horizon test RMSE of persistence, GC-LSTM and the same network
/// without graph convolution, on synthetic diffusion data.
pub struct ForecastComparison {
    pub persistence: Vec<f64>,
    pub gclstm: Vec<f64>,
    pub no_graph: Vec<f64>,
}

pub fn diffusion_comparison(
    spec: &aqisense_core::ground::DiffusionSpec,
    cfg: &GcLstmConfig,
) -> ForecastComparison {
    use aqisense_core::data::SeriesGrid;
    use aqisense_core::ground::{
        horizon_rmse, persistence_forecast, synthesize_diffusion, train_gclstm, Standardizer,
    };
    let (graph, obs) = synthesize_diffusion(spec).unwrap();
    let grid = SeriesGrid::from_observations(&obs, &obs.met_columns).unwrap();
    let graph = graph.reordered(&grid.stations).unwrap();
    let (train, test) = grid.split_chronological(5.0 / 6.0);
    let scaler = Standardizer::fit(&train).unwrap();
    let train_w = train.windows(cfg.window, cfg.horizon, 1).unwrap();
    let test_w = test.windows(cfg.window, cfg.horizon, 1).unwrap();
    let pers: Vec<Tensor> = test_w
        .iter()
        .map(|w| persistence_forecast(&w.x, cfg.horizon))
        .collect();
    let run = |c: &GcLstmConfig| {
        let (f, _) = train_gclstm(&graph, &train_w, &scaler, c).unwrap();
        horizon_rmse(&f.forecast_all(&test_w).unwrap(), &test_w).unwrap()
    };
    ForecastComparison {
        persistence: horizon_rmse(&pers, &test_w).unwrap(),
        gclstm: run(cfg),
        no_graph: run(&cfg.without_graph()),
    }
}

/// Largest deviation of every per-pixel feature and global statistic from
/// its brute-force oracle over `images` random 8x8 images.
pub fn feature_oracle_error(images: u64) -> f64 {
    use aqisense_core::haze::{dark_channel, entropy, rms_contrast, smoothness, transmission};
    let mut worst: f64 = 0.0;
    for seed in 0..images {
        let r = &mut rng(1000 + seed);
        let img = random_image(8, 8, r);
        let patch = [1, 3, 5, 7][seed as usize % 4];
        let win = [3, 5][seed as usize % 2];

        let dark = dark_channel(&img, patch);
        worst = worst.max(max_diff(dark.data(), &oracle_dark_channel(&img, patch)));

        let a = [
            r.gen_range(0.5..1.0),
            r.gen_range(0.5..1.0),
            r.gen_range(0.5..1.0),
        ];
        let t = transmission(&img, a, patch).unwrap();
        worst = worst.max(max_diff(t.data(), &oracle_transmission(&img, a, patch)));

        let gray = img.to_gray();
        let (map, global) = rms_contrast(&gray, win);
        let (omap, oglobal) = oracle_rms(&gray, win);
        worst = worst
            .max(max_diff(map.data(), &omap))
            .max((global - oglobal).abs());

        let (map, global) = entropy(&gray, win);
        let (omap, oglobal) = oracle_entropy(&gray, win);
        worst = worst
            .max(max_diff(map.data(), &omap))
            .max((global - oglobal).abs());

        let mask = BinaryMask::new(8, 8, (0..64).map(|_| r.gen_bool(0.4)).collect()).unwrap();
        let s = smoothness(&gray, &mask).unwrap();
        let (omap, oavg) = oracle_smoothness(&gray, &mask);
        worst = worst
            .max(max_diff(s.map.data(), &omap))
            .max((s.avg - oavg).abs());
    }
    worst
}

/// Random colours with a black pixel on every even lattice point, so each
/// 3x3 patch holds a dark pixel.
pub fn dark_lattice_image(size: usize, r: &mut ChaCha8Rng) -> RgbImage {
    let px: Vec<[f64; 3]> = (0..size * size)
        .map(|i| {
            let (x, y) = (i % size, i / size);
            if x % 2 == 0 && y % 2 == 0 {
                [0.0; 3]
            } else {
                [
                    r.gen_range(0.0..1.0),
                    r.gen_range(0.0..1.0),
                    r.gen_range(0.0..1.0),
                ]
            }
        })
        .collect();
    RgbImage::new(size, size, px).unwrap()
}

/// Largest `|t - beta|` when hazing images that satisfy the dark-channel
/// prior at constant depth and recovering the transmission: dark-lattice
/// images over every pixel, synthetic ground scenes over interior ground
/// pixels.
pub fn beta_round_trip_error() -> f64 {
    use aqisense_core::data::{base_scene, synthesize_haze_image};
    use aqisense_core::haze::transmission;
    let mut worst: f64 = 0.0;
    for seed in 0..40 {
        let r = &mut rng(4000 + seed);
        let base = dark_lattice_image(12, r);
        let a = [
            r.gen_range(0.7..1.0),
            r.gen_range(0.7..1.0),
            r.gen_range(0.7..1.0),
        ];
        let beta: f64 = r.gen_range(0.05..0.95);
        let depth = GrayImage::filled(12, 12, 1.0);
        let hazy = synthesize_haze_image(&base, -beta.ln(), a, &depth).unwrap();
        let t = transmission(&hazy, a, 3).unwrap();
        for &v in t.data() {
            worst = worst.max((v - beta).abs());
        }
    }
    let size = 48;
    for seed in 0..10 {
        let base = base_scene(size, seed);
        let a = [0.9, 0.9, 0.9];
        for lambda in [0.2, 0.8, 1.6, 2.8] {
            let depth = GrayImage::filled(size, size, 0.5);
            let beta = (-lambda * 0.5f64).exp();
            let hazy = synthesize_haze_image(&base, lambda, a, &depth).unwrap();
            let t = transmission(&hazy, a, 3).unwrap();
            // interior ground pixels: every full 3x3 patch holds a shadow pixel
            for y in size / 2..size - 1 {
                for x in 1..size - 1 {
                    worst = worst.max((t.get(x, y) - beta).abs());
                }
            }
        }
    }
    worst
}
