use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobilenet::model::DenseMobileNet;
use crate::mobilenet::scale::argmax;
use crate::nn::{sgd_step, Graph, ParamSet, Tensor};

/// A model-ready input with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// `[C, S, S]`, already normalized.
    pub input: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdOptions {
    pub batch: usize,
    pub lr: f64,
    /// Weight of the `0.5 * ||w||^2` regularizer.
    pub reg: f64,
}

impl Default for SgdOptions {
    fn default() -> Self {
        Self {
            batch: 16,
            lr: 0.05,
            reg: 0.0,
        }
    }
}

/// Mean cross-entropy over `batch` and its parameter gradients.
pub fn loss_and_grad(
    model: &DenseMobileNet,
    params: &ParamSet,
    batch: &[&Example],
) -> Result<(f64, ParamSet)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let xs: Vec<_> = batch.iter().map(|e| g.input(e.input.clone())).collect();
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let logits = model.forward(&mut g, &bound, &xs)?;
    let loss = g.softmax_cross_entropy(logits, &labels)?;
    let value = g.value(loss).item();
    let mut grads = g.backward(loss)?;
    Ok((value, bound.gradients(&mut grads)?))
}

/// One shuffled pass of mini-batch SGD. Returns the new parameters and the
/// sample-weighted mean of the batch losses.
pub fn train_epoch(
    model: &DenseMobileNet,
    params: &ParamSet,
    data: &[Example],
    opts: &SgdOptions,
    seed: u64,
) -> Result<(ParamSet, f64)> {
    if data.is_empty() {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    let mut batch = opts.batch.max(1);
    if batch > data.len() {
        debug!(
            "batch size {batch} exceeds dataset size {}; using one full batch",
            data.len()
        );
        batch = data.len();
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut params = params.clone();
    let mut total = 0.0;
    for chunk in order.chunks(batch) {
        let examples: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
        let (loss, grads) = loss_and_grad(model, &params, &examples)?;
        total += loss * chunk.len() as f64;
        params = sgd_step(&params, &grads, opts.lr, opts.reg)?;
    }
    Ok((params, total / data.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy, mean loss and confusion matrix over `data`.
pub fn evaluate(model: &DenseMobileNet, params: &ParamSet, data: &[Example]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty dataset".into()));
    }
    let classes = model.config().classes;
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut loss = 0.0;
    for chunk in data.chunks(64) {
        let inputs: Vec<&Tensor> = chunk.iter().map(|e| &e.input).collect();
        let logits = model.logits(params, &inputs)?;
        for (i, e) in chunk.iter().enumerate() {
            if e.label >= classes {
                return Err(Error::Label {
                    label: e.label,
                    classes,
                });
            }
            let row = logits.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            loss += lse - row[e.label];
            confusion[e.label][argmax(row)] += 1;
        }
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        loss: loss / data.len() as f64,
        confusion,
    })
}
