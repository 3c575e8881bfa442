//! Graph-convolutional LSTM forecaster.
//!
//! Per time step the station features `X_t [N, M]` pass through the graph
//! convolutions, the result is concatenated with `X_t` and fed to one LSTM
//! shared by all stations. The final hidden state of each station maps to
//! `T'` outputs through a linear head.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{rmse, SeriesGrid, SeriesWindow};
use crate::error::{Error, Result};
use crate::ground::graph::{gc_forward, StationGraph};
use crate::nn::{
    clip_grad_norm, lstm_cell, Activation, Bound, Graph, LstmVars, LstmWeights, ParamSet, Tensor,
    Var,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcLstmConfig {
    /// Input steps `T`.
    pub window: usize,
    /// Forecast steps `T'`.
    pub horizon: usize,
    pub gc_out: usize,
    /// Stacked graph convolutions; 0 gives the plain LSTM baseline.
    pub gc_layers: usize,
    pub gc_activation: Activation,
    pub hidden: usize,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch: usize,
    pub clip: f64,
    pub seed: u64,
}

impl Default for GcLstmConfig {
    fn default() -> Self {
        Self {
            window: 8,
            horizon: 3,
            gc_out: 16,
            gc_layers: 1,
            gc_activation: Activation::Relu,
            hidden: 32,
            lr: 0.02,
            momentum: 0.9,
            epochs: 30,
            batch: 32,
            clip: 5.0,
            seed: 0,
        }
    }
}

impl GcLstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.horizon == 0 {
            return Err(Error::Config("window and horizon must be >= 1".into()));
        }
        if self.hidden == 0 || (self.gc_layers > 0 && self.gc_out == 0) {
            return Err(Error::Config("hidden and gc_out must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.batch == 0 {
            return Err(Error::Config(
                "need lr > 0, momentum in [0, 1), batch >= 1".into(),
            ));
        }
        Ok(())
    }

    /// The same configuration without graph convolutions.
    pub fn without_graph(&self) -> Self {
        Self {
            gc_layers: 0,
            ..self.clone()
        }
    }
}

/// Architecture for `nodes` stations with `features` inputs each.
#[derive(Debug, Clone, PartialEq)]
pub struct GcLstm {
    cfg: GcLstmConfig,
    nodes: usize,
    features: usize,
}

impl GcLstm {
    pub fn new(cfg: GcLstmConfig, nodes: usize, features: usize) -> Result<Self> {
        cfg.validate()?;
        if nodes == 0 || features == 0 {
            return Err(Error::Config("need >= 1 node and >= 1 feature".into()));
        }
        Ok(Self {
            cfg,
            nodes,
            features,
        })
    }

    pub fn config(&self) -> &GcLstmConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// LSTM input width: `M + gc_out`, or `M` without graph layers.
    pub fn lstm_input(&self) -> usize {
        if self.cfg.gc_layers == 0 {
            self.features
        } else {
            self.features + self.cfg.gc_out
        }
    }

    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let mut fan_in = self.features;
        for l in 0..self.cfg.gc_layers {
            let bound = (6.0 / (fan_in + self.cfg.gc_out) as f64).sqrt();
            p.insert(
                format!("gc{l}.weight"),
                Tensor::uniform(&[fan_in, self.cfg.gc_out], bound, &mut rng),
            )
            .expect("unique");
            fan_in = self.cfg.gc_out;
        }
        LstmWeights::init(self.cfg.hidden, self.lstm_input(), &mut rng)
            .insert_into("lstm", &mut p)
            .expect("unique");
        let bound = (1.0 / self.cfg.hidden as f64).sqrt();
        p.insert(
            "head.weight",
            Tensor::uniform(&[self.cfg.hidden, self.cfg.horizon], bound, &mut rng),
        )
        .expect("unique");
        p.insert("head.bias", Tensor::zeros(&[self.cfg.horizon]))
            .expect("unique");
        p
    }

    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        params.check_aligned(&self.init_params(0))
    }

    /// Rows are `(window, station)` pairs; `p` is the matching
    /// block-diagonal propagation matrix and `xs[t]` holds step `t`.
    /// Returns `[rows, T']`.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, p: Var, xs: &[Var]) -> Result<Var> {
        if xs.len() != self.cfg.window {
            return Err(Error::dim("gclstm window", &[xs.len()], &[self.cfg.window]));
        }
        let rows = g.shape(xs[0])[0];
        let gc_w: Vec<Var> = (0..self.cfg.gc_layers)
            .map(|l| bound.try_var(&format!("gc{l}.weight")))
            .collect::<Result<_>>()?;
        let cell = LstmVars::from_bound(g, "lstm", bound)?;
        let mut h = g.input(Tensor::zeros(&[rows, self.cfg.hidden]));
        let mut c = g.input(Tensor::zeros(&[rows, self.cfg.hidden]));
        for &x in xs {
            if g.shape(x) != [rows, self.features] {
                return Err(Error::dim(
                    "gclstm step",
                    g.shape(x),
                    &[rows, self.features],
                ));
            }
            let input = if gc_w.is_empty() {
                x
            } else {
                let mut j = x;
                for &w in &gc_w {
                    j = gc_forward(g, p, j, w, self.cfg.gc_activation)?;
                }
                g.concat_cols(&[x, j])?
            };
            (h, c) = lstm_cell(g, input, h, c, &cell)?;
        }
        let z = g.matmul(h, bound.try_var("head.weight")?)?;
        g.add_row_bias(z, bound.try_var("head.bias")?)
    }

    /// Model output for one already-scaled `[T, N, M]` window, as `[T', N]`.
    pub fn forward_window(&self, params: &ParamSet, prop: &Tensor, x: &Tensor) -> Result<Tensor> {
        let out = self.forward_batch(params, prop, &[x])?;
        Ok(out.transpose())
    }

    /// `[B * N, T']` outputs for a batch of scaled windows.
    fn forward_batch(&self, params: &ParamSet, prop: &Tensor, xs: &[&Tensor]) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let (p, steps) = self.batch_inputs(&mut g, prop, xs)?;
        let out = self.forward(&mut g, &bound, p, &steps)?;
        Ok(g.value(out).clone())
    }

    fn batch_inputs(
        &self,
        g: &mut Graph,
        prop: &Tensor,
        xs: &[&Tensor],
    ) -> Result<(Var, Vec<Var>)> {
        let (t, n, m) = (self.cfg.window, self.nodes, self.features);
        if prop.shape() != [n, n] {
            return Err(Error::dim("propagation", prop.shape(), &[n, n]));
        }
        for x in xs {
            if x.shape() != [t, n, m] {
                return Err(Error::dim("gclstm window", x.shape(), &[t, n, m]));
            }
        }
        let b = xs.len();
        let p = g.input(block_diagonal(prop, b));
        let steps = (0..t)
            .map(|s| {
                let mut data = Vec::with_capacity(b * n * m);
                for x in xs {
                    data.extend_from_slice(&x.data()[s * n * m..(s + 1) * n * m]);
                }
                Ok(g.input(Tensor::new(&[b * n, m], data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((p, steps))
    }

    /// Mean squared error over a batch and its gradients. `ys[k]` is `[T', N]`.
    pub fn loss_and_grad(
        &self,
        params: &ParamSet,
        prop: &Tensor,
        xs: &[&Tensor],
        ys: &[&Tensor],
    ) -> Result<(f64, ParamSet)> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let (p, steps) = self.batch_inputs(&mut g, prop, xs)?;
        let out = self.forward(&mut g, &bound, p, &steps)?;
        let mut target = Vec::with_capacity(ys.len() * self.nodes * self.cfg.horizon);
        for y in ys {
            target.extend_from_slice(y.transpose().data());
        }
        let target = Tensor::new(&[ys.len() * self.nodes, self.cfg.horizon], target)?;
        let loss = g.mse(out, &target)?;
        let value = g.value(loss).item();
        let mut grads = g.backward(loss)?;
        Ok((value, bound.gradients(&mut grads)?))
    }

    /// `gclstm <T> <T'> <M> <N> <hidden> <gc_out> <gc_layers>`.
    pub fn descriptor(&self) -> String {
        format!(
            "gclstm {} {} {} {} {} {} {}",
            self.cfg.window,
            self.cfg.horizon,
            self.features,
            self.nodes,
            self.cfg.hidden,
            self.cfg.gc_out,
            self.cfg.gc_layers
        )
    }
}

fn block_diagonal(p: &Tensor, blocks: usize) -> Tensor {
    let n = p.shape()[0];
    let size = n * blocks;
    let mut out = Tensor::zeros(&[size, size]);
    for b in 0..blocks {
        for i in 0..n {
            let row = (b * n + i) * size + b * n;
            out.data_mut()[row..row + n].copy_from_slice(p.row(i));
        }
    }
    out
}

/// Per-station AQI scaling and per-column scaling of the remaining
/// features, fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub aqi_mean: Vec<f64>,
    pub aqi_std: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-9 { std } else { 1.0 })
}

impl Standardizer {
    /// Fit on a training grid. The trailing two time-of-day columns are
    /// already bounded and pass through unchanged.
    pub fn fit(grid: &SeriesGrid) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Invalid("cannot fit scaling on an empty grid".into()));
        }
        let (n, m) = (grid.nodes(), grid.width());
        let (mut aqi_mean, mut aqi_std) = (Vec::new(), Vec::new());
        for j in 0..n {
            let (mu, sd) = mean_std((0..grid.len()).map(move |t| grid.aqi(t, j)));
            aqi_mean.push(mu);
            aqi_std.push(sd);
        }
        let mut feature_mean = vec![0.0; m];
        let mut feature_std = vec![1.0; m];
        for k in 1..m.saturating_sub(2) {
            let (mu, sd) = mean_std(
                (0..grid.len()).flat_map(move |t| (0..n).map(move |j| grid.value(t, j, k))),
            );
            feature_mean[k] = mu;
            feature_std[k] = sd;
        }
        Ok(Self {
            aqi_mean,
            aqi_std,
            feature_mean,
            feature_std,
        })
    }

    /// Scale a raw `[T, N, M]` window.
    pub fn scale_input(&self, x: &Tensor) -> Tensor {
        let (n, m) = (x.shape()[1], x.shape()[2]);
        Tensor::from_fn(x.shape(), |i| {
            let (j, k) = ((i / m) % n, i % m);
            let v = x.data()[i];
            if k == 0 {
                (v - self.aqi_mean[j]) / self.aqi_std[j]
            } else {
                (v - self.feature_mean[k]) / self.feature_std[k]
            }
        })
    }

    /// Scale raw `[T', N]` AQI targets.
    pub fn scale_target(&self, y: &Tensor) -> Tensor {
        let n = y.shape()[1];
        Tensor::from_fn(y.shape(), |i| {
            let j = i % n;
            (y.data()[i] - self.aqi_mean[j]) / self.aqi_std[j]
        })
    }

    pub fn unscale_target(&self, y: &Tensor) -> Tensor {
        let n = y.shape()[1];
        Tensor::from_fn(y.shape(), |i| {
            let j = i % n;
            y.data()[i] * self.aqi_std[j] + self.aqi_mean[j]
        })
    }
}

/// A trained forecaster with its graph and scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub model: GcLstm,
    pub params: ParamSet,
    pub scaler: Standardizer,
    pub propagation: Tensor,
}

impl Forecaster {
    /// AQI for steps `t+1 .. t+T'` per station, as `[T', N]`.
    pub fn forecast(&self, window: &Tensor) -> Result<Tensor> {
        let c = self.model.config();
        if window.shape() != [c.window, self.model.nodes, self.model.features] {
            return Err(Error::dim(
                "forecast window",
                window.shape(),
                &[c.window, self.model.nodes, self.model.features],
            ));
        }
        let out = self.model.forward_window(
            &self.params,
            &self.propagation,
            &self.scaler.scale_input(window),
        )?;
        if !out.is_finite() {
            return Err(Error::NonFinite("forecast".into()));
        }
        Ok(self.scaler.unscale_target(&out))
    }

    pub fn forecast_all(&self, windows: &[SeriesWindow]) -> Result<Vec<Tensor>> {
        windows.iter().map(|w| self.forecast(&w.x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD with momentum on the scaled mean squared error.
pub fn train_gclstm(
    graph: &StationGraph,
    train: &[SeriesWindow],
    scaler: &Standardizer,
    cfg: &GcLstmConfig,
) -> Result<(Forecaster, TrainingTrace)> {
    let first = train
        .first()
        .ok_or_else(|| Error::Invalid("no training windows".into()))?;
    let (n, m) = (first.x.shape()[1], first.x.shape()[2]);
    if n != graph.len() {
        return Err(Error::dim("stations", &[n], &[graph.len()]));
    }
    let model = GcLstm::new(cfg.clone(), n, m)?;
    let xs: Vec<Tensor> = train.iter().map(|w| scaler.scale_input(&w.x)).collect();
    let ys: Vec<Tensor> = train.iter().map(|w| scaler.scale_target(&w.y)).collect();
    let mut params = model.init_params(cfg.seed);
    let mut velocity = params.map(|t| Tensor::zeros(t.shape()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6C57_0000);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = TrainingTrace {
        epoch_losses: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let bx: Vec<&Tensor> = chunk.iter().map(|&i| &xs[i]).collect();
            let by: Vec<&Tensor> = chunk.iter().map(|&i| &ys[i]).collect();
            let (loss, grads) = model.loss_and_grad(&params, &graph.propagation, &bx, &by)?;
            total += loss * chunk.len() as f64;
            let grads = clip_grad_norm(&grads, cfg.clip);
            let mut next = ParamSet::new();
            let mut next_v = ParamSet::new();
            for (name, w) in params.iter() {
                let g = grads
                    .get(name)
                    .ok_or_else(|| Error::MissingGradient(name.into()))?;
                let v = velocity.get(name).expect("aligned");
                let v = v.zip_map(g, |v, g| cfg.momentum * v + g)?;
                next.insert(name, w.zip_map(&v, |w, v| w - cfg.lr * v)?)?;
                next_v.insert(name, v)?;
            }
            params = next;
            velocity = next_v;
        }
        let mean = total / train.len() as f64;
        debug!("epoch {epoch}: loss {mean:.5}");
        trace.epoch_losses.push(mean);
    }
    info!(
        "trained {} for {} epochs; final loss {:.5}",
        model.descriptor(),
        cfg.epochs,
        trace.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok((
        Forecaster {
            model,
            params,
            scaler: scaler.clone(),
            propagation: graph.propagation.clone(),
        },
        trace,
    ))
}

/// Repeat the last observed AQI for every horizon.
pub fn persistence_forecast(window: &Tensor, horizon: usize) -> Tensor {
    let (t, n, m) = (window.shape()[0], window.shape()[1], window.shape()[2]);
    Tensor::from_fn(&[horizon, n], |i| window.data()[((t - 1) * n + i % n) * m])
}

/// RMSE per horizon over all windows and stations.
pub fn horizon_rmse(preds: &[Tensor], targets: &[SeriesWindow]) -> Result<Vec<f64>> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::dim("horizon_rmse", &[preds.len()], &[targets.len()]));
    }
    let horizon = targets[0].y.shape()[0];
    (0..horizon)
        .map(|h| {
            let (mut y, mut y_hat) = (Vec::new(), Vec::new());
            for (p, w) in preds.iter().zip(targets) {
                y.extend_from_slice(w.y.row(h));
                y_hat.extend_from_slice(p.row(h));
            }
            rmse(&y, &y_hat)
        })
        .collect()
}
