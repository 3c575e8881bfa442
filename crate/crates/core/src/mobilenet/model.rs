use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haze::CHANNELS;
use crate::mobilenet::cost::{
    separable_conv_cost, standard_conv_cost, Cost, LayerCost, ModelSummary,
};
use crate::nn::{Bound, Graph, ParamSet, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub layers: usize,
    pub growth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenseMobileNetConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub blocks: Vec<BlockSpec>,
    pub kernel: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for DenseMobileNetConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            input_channels: CHANNELS,
            blocks: vec![BlockSpec {
                layers: 3,
                growth: 16,
            }],
            kernel: 3,
            classes: 6,
            seed: 0,
        }
    }
}

impl DenseMobileNetConfig {
    /// 32x32 input, otherwise the defaults.
    pub fn desk_scale() -> Self {
        Self {
            input_size: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("at least one block is required".into()));
        }
        if self.blocks.iter().any(|b| b.layers == 0 || b.growth == 0) {
            return Err(Error::Config(
                "blocks need >= 1 layer and growth >= 1".into(),
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel {} must be odd", self.kernel)));
        }
        if self.classes < 2 {
            return Err(Error::Config("at least 2 classes are required".into()));
        }
        if self.input_size == 0 || self.input_channels == 0 {
            return Err(Error::Config("input extents must be positive".into()));
        }
        Ok(())
    }

    /// Input channels of layer `layer` in block `block` (both 0-based).
    pub fn layer_in_channels(&self, block: usize, layer: usize) -> usize {
        self.block_in_channels(block) + layer * self.blocks[block].growth
    }

    pub fn block_in_channels(&self, block: usize) -> usize {
        self.input_channels
            + self.blocks[..block]
                .iter()
                .map(|b| b.layers * b.growth)
                .sum::<usize>()
    }

    pub fn final_channels(&self) -> usize {
        self.block_in_channels(self.blocks.len())
    }
}

/// Densely connected depthwise-separable classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMobileNet {
    cfg: DenseMobileNetConfig,
}

fn dw_name(b: usize, l: usize) -> String {
    format!("block{b}.layer{l}.dw")
}

fn pw_name(b: usize, l: usize) -> String {
    format!("block{b}.layer{l}.pw")
}

const DESCRIPTOR_HEADER: &str = "dense-mobilenet 1";

/// Validate `cfg` and draw He-uniform initial parameters from its seed.
pub fn build_model(cfg: &DenseMobileNetConfig) -> Result<(DenseMobileNet, ParamSet)> {
    let model = DenseMobileNet::new(cfg.clone())?;
    let params = model.init_params(cfg.seed);
    Ok((model, params))
}

impl DenseMobileNet {
    pub fn new(cfg: DenseMobileNetConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &DenseMobileNetConfig {
        &self.cfg
    }

    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.cfg.kernel;
        let mut p = ParamSet::new();
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        for (b, spec) in self.cfg.blocks.iter().enumerate() {
            for l in 0..spec.layers {
                let c = self.cfg.layer_in_channels(b, l);
                let dw = Tensor::uniform(&[c, k, k], he(k * k), &mut rng);
                let pw = Tensor::uniform(&[spec.growth, c], he(c), &mut rng);
                p.insert(dw_name(b, l), dw).expect("unique");
                p.insert(pw_name(b, l), pw).expect("unique");
            }
        }
        let cf = self.cfg.final_channels();
        p.insert(
            "head.weight",
            Tensor::uniform(&[cf, self.cfg.classes], he(cf), &mut rng),
        )
        .expect("unique");
        p.insert("head.bias", Tensor::zeros(&[self.cfg.classes]))
            .expect("unique");
        p
    }

    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        params.check_aligned(&self.init_params(0))
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = self.cfg.input_size;
        let expect = [self.cfg.input_channels, s, s];
        if shape != expect {
            return Err(Error::dim("dense-mobilenet input", shape, &expect));
        }
        Ok(())
    }

    /// Run the convolution blocks on one `[C, S, S]` input.
    /// `ablate` zeroes the output of one `(block, layer)`. Returns the pooled
    /// features and the input var of every layer.
    fn features(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: Var,
        ablate: Option<(usize, usize)>,
    ) -> Result<(Var, Vec<Var>)> {
        self.check_input(g.shape(x))?;
        let pad = self.cfg.kernel / 2;
        let mut current = x;
        let mut layer_inputs = Vec::new();
        for (b, spec) in self.cfg.blocks.iter().enumerate() {
            let mut maps = vec![current];
            for l in 0..spec.layers {
                let input = if maps.len() == 1 {
                    maps[0]
                } else {
                    g.concat_leading(&maps)?
                };
                layer_inputs.push(input);
                let dw = g.depthwise_conv(input, bound.var(&dw_name(b, l)), 1, pad)?;
                let pw = g.pointwise_conv(dw, bound.var(&pw_name(b, l)))?;
                let mut out = g.relu(pw);
                if ablate == Some((b, l)) {
                    out = g.scale(out, 0.0);
                }
                maps.push(out);
            }
            current = g.concat_leading(&maps)?;
        }
        Ok((g.global_avg_pool(current)?, layer_inputs))
    }

    /// Logits `[B, classes]` for a batch of `[C, S, S]` inputs.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let pooled = inputs
            .iter()
            .map(|&x| self.features(g, bound, x, None).map(|(p, _)| p))
            .collect::<Result<Vec<_>>>()?;
        let rows = g.stack_rows(&pooled)?;
        let z = g.matmul(rows, bound.var("head.weight"))?;
        g.add_row_bias(z, bound.var("head.bias"))
    }

    /// Gradient-free logits.
    pub fn logits(&self, params: &ParamSet, inputs: &[&Tensor]) -> Result<Tensor> {
        self.check_params(params)?;
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let xs: Vec<Var> = inputs.iter().map(|&t| g.input(t.clone())).collect();
        let out = self.forward(&mut g, &bound, &xs)?;
        Ok(g.value(out).clone())
    }

    /// Input tensors of every layer for one sample, optionally zeroing one
    /// layer's output first.
    pub fn layer_inputs(
        &self,
        params: &ParamSet,
        x: &Tensor,
        ablate: Option<(usize, usize)>,
    ) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let xv = g.input(x.clone());
        let (_, vars) = self.features(&mut g, &bound, xv, ablate)?;
        Ok(vars.into_iter().map(|v| g.value(v).clone()).collect())
    }

    /// Exact counts by layer enumeration.
    pub fn summary(&self) -> ModelSummary {
        let k = self.cfg.kernel;
        let s = self.cfg.input_size;
        let mut layers = Vec::new();
        for (b, spec) in self.cfg.blocks.iter().enumerate() {
            for l in 0..spec.layers {
                let m = self.cfg.layer_in_channels(b, l);
                // "same" padding, stride 1
                let (oh, ow) = (s, s);
                let (m64, n64, k64) = (m as u64, spec.growth as u64, k as u64);
                layers.push(LayerCost {
                    name: format!("block{b}.layer{l}"),
                    in_channels: m,
                    out_channels: spec.growth,
                    kernel: k,
                    out_h: oh,
                    out_w: ow,
                    separable: separable_conv_cost(m64, n64, k64, oh as u64, ow as u64),
                    standard: standard_conv_cost(m64, n64, k64, oh as u64, ow as u64),
                });
            }
        }
        let cf = self.cfg.final_channels() as u64;
        let classes = self.cfg.classes as u64;
        let head = Cost {
            params: cf * classes + classes,
            macs: cf * classes,
        };
        let conv_params: u64 = layers.iter().map(|l| l.separable.params).sum();
        let conv_std: u64 = layers.iter().map(|l| l.standard.params).sum();
        ModelSummary {
            params: conv_params + head.params,
            macs: layers.iter().map(|l| l.separable.macs).sum::<u64>() + head.macs,
            dsc_ratio: conv_params as f64 / conv_std as f64,
            standard_params: conv_std + head.params,
            standard_macs: layers.iter().map(|l| l.standard.macs).sum::<u64>() + head.macs,
            layers,
            head,
        }
    }

    /// Versioned plain-text architecture descriptor.
    pub fn descriptor(&self) -> String {
        let c = &self.cfg;
        let mut s = format!(
            "{DESCRIPTOR_HEADER}\ninput_size {}\ninput_channels {}\nkernel {}\nclasses {}\nseed {}\n",
            c.input_size, c.input_channels, c.kernel, c.classes, c.seed
        );
        for b in &c.blocks {
            s.push_str(&format!("block {} {}\n", b.layers, b.growth));
        }
        s
    }

    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == DESCRIPTOR_HEADER => {}
            _ => return Err(Error::Format("not a dense-mobilenet v1 descriptor".into())),
        }
        let mut cfg = DenseMobileNetConfig {
            blocks: Vec::new(),
            ..Default::default()
        };
        for (i, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let num = |k: usize| -> Result<u64> {
                parts
                    .get(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line: i + 1,
                        msg: format!("bad descriptor line `{line}`"),
                    })
            };
            match parts.first().copied() {
                None => continue,
                Some("input_size") => cfg.input_size = num(1)? as usize,
                Some("input_channels") => cfg.input_channels = num(1)? as usize,
                Some("kernel") => cfg.kernel = num(1)? as usize,
                Some("classes") => cfg.classes = num(1)? as usize,
                Some("seed") => cfg.seed = num(1)?,
                Some("block") => cfg.blocks.push(BlockSpec {
                    layers: num(1)? as usize,
                    growth: num(2)? as usize,
                }),
                Some(other) => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        Self::new(cfg)
    }
}
