use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{Bound, ParamSet};
use crate::nn::tensor::Tensor;

const GATES: [&str; 4] = ["f", "i", "c", "o"];

/// Gate weights over the concatenation `[h_{t-1}, x_t]`.
///
/// Every `w_*` is `[hidden, hidden + input]` and every `b_*` is `[hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub w_f: Tensor,
    pub w_i: Tensor,
    pub w_c: Tensor,
    pub w_o: Tensor,
    pub b_f: Tensor,
    pub b_i: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
    pub hidden: usize,
}

impl LstmWeights {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = Tensor::zeros(&[hidden, hidden + input]);
        let b = Tensor::zeros(&[hidden]);
        Self {
            w_f: w.clone(),
            w_i: w.clone(),
            w_c: w.clone(),
            w_o: w,
            b_f: b.clone(),
            b_i: b.clone(),
            b_c: b.clone(),
            b_o: b,
            hidden,
        }
    }

    /// Uniform in `±1/sqrt(hidden)`, forget bias 1.
    pub fn init<R: Rng + ?Sized>(hidden: usize, input: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let shape = [hidden, hidden + input];
        Self {
            w_f: Tensor::uniform(&shape, bound, rng),
            w_i: Tensor::uniform(&shape, bound, rng),
            w_c: Tensor::uniform(&shape, bound, rng),
            w_o: Tensor::uniform(&shape, bound, rng),
            b_f: Tensor::full(&[hidden], 1.0),
            b_i: Tensor::zeros(&[hidden]),
            b_c: Tensor::zeros(&[hidden]),
            b_o: Tensor::zeros(&[hidden]),
            hidden,
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_f.shape()[1] - self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [&self.w_f, &self.w_i, &self.w_c, &self.w_o];
        let bs = [&self.b_f, &self.b_i, &self.b_c, &self.b_o];
        let wshape = self.w_f.shape();
        if wshape.len() != 2 || wshape[0] != self.hidden || wshape[1] < self.hidden {
            return Err(Error::dim("lstm weights", wshape, &[self.hidden]));
        }
        for w in ws {
            if w.shape() != wshape {
                return Err(Error::dim("lstm weights", w.shape(), wshape));
            }
        }
        for b in bs {
            if b.shape() != [self.hidden] {
                return Err(Error::dim("lstm bias", b.shape(), &[self.hidden]));
            }
        }
        Ok(())
    }

    fn parts(&self) -> [(&'static str, &Tensor, &Tensor); 4] {
        [
            (GATES[0], &self.w_f, &self.b_f),
            (GATES[1], &self.w_i, &self.b_i),
            (GATES[2], &self.w_c, &self.b_c),
            (GATES[3], &self.w_o, &self.b_o),
        ]
    }

    /// Store as `{prefix}.w_f`, `{prefix}.b_f`, ... entries.
    pub fn insert_into(&self, prefix: &str, set: &mut ParamSet) -> Result<()> {
        for (gate, w, b) in self.parts() {
            set.insert(format!("{prefix}.w_{gate}"), w.clone())?;
            set.insert(format!("{prefix}.b_{gate}"), b.clone())?;
        }
        Ok(())
    }

    pub fn from_params(prefix: &str, set: &ParamSet) -> Result<Self> {
        let get = |n: String| {
            set.get(&n)
                .cloned()
                .ok_or_else(|| Error::Misaligned(n.clone()))
        };
        let w_f = get(format!("{prefix}.w_f"))?;
        let hidden = w_f.shape()[0];
        let w = Self {
            w_f,
            w_i: get(format!("{prefix}.w_i"))?,
            w_c: get(format!("{prefix}.w_c"))?,
            w_o: get(format!("{prefix}.w_o"))?,
            b_f: get(format!("{prefix}.b_f"))?,
            b_i: get(format!("{prefix}.b_i"))?,
            b_c: get(format!("{prefix}.b_c"))?,
            b_o: get(format!("{prefix}.b_o"))?,
            hidden,
        };
        w.validate()?;
        Ok(w)
    }
}

/// LSTM weights inside a graph, with the gate matrices pre-transposed.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    wt: [Var; 4],
    b: [Var; 4],
    hidden: usize,
}

impl LstmVars {
    pub fn from_bound(graph: &mut Graph, prefix: &str, bound: &Bound) -> Result<Self> {
        let mut wt = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for gate in GATES {
            let w = bound.try_var(&format!("{prefix}.w_{gate}"))?;
            wt.push(graph.transpose(w)?);
            b.push(bound.try_var(&format!("{prefix}.b_{gate}"))?);
        }
        let hidden = graph.shape(b[0])[0];
        Ok(Self {
            wt: [wt[0], wt[1], wt[2], wt[3]],
            b: [b[0], b[1], b[2], b[3]],
            hidden,
        })
    }

    /// Bind standalone weights as trainable leaves.
    pub fn bind(graph: &mut Graph, w: &LstmWeights) -> Result<Self> {
        w.validate()?;
        let mut set = ParamSet::new();
        w.insert_into("lstm", &mut set)?;
        let bound = set.bind(graph);
        Self::from_bound(graph, "lstm", &bound)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }
}

/// One LSTM step over a batch of rows.
///
/// `x` is `[B, input]`, `h_prev` and `c_prev` are `[B, hidden]`. Returns
/// `(h_t, c_t)`.
pub fn lstm_cell(
    graph: &mut Graph,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    w: &LstmVars,
) -> Result<(Var, Var)> {
    let (sx, sh, sc) = (graph.shape(x), graph.shape(h_prev), graph.shape(c_prev));
    let expect_in = graph.shape(w.wt[0])[0] - w.hidden;
    if sx.len() != 2 || sx[1] != expect_in || sh != [sx[0], w.hidden] || sc != sh {
        return Err(Error::dim("lstm_cell", sx, sh));
    }
    let hx = graph.concat_cols(&[h_prev, x])?;
    let mut pre = [hx; 4];
    for (slot, (wt, b)) in pre.iter_mut().zip(w.wt.iter().zip(&w.b)) {
        let z = graph.matmul(hx, *wt)?;
        *slot = graph.add_row_bias(z, *b)?;
    }
    let f = graph.sigmoid(pre[0]);
    let i = graph.sigmoid(pre[1]);
    let candidate = graph.tanh(pre[2]);
    let o = graph.sigmoid(pre[3]);
    let keep = graph.mul(f, c_prev)?;
    let write = graph.mul(i, candidate)?;
    let c = graph.add(keep, write)?;
    let squashed = graph.tanh(c);
    let h = graph.mul(o, squashed)?;
    Ok((h, c))
}
