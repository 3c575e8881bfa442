use serde::{Deserialize, Serialize};

/// Parameter and multiply-accumulate counts of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub params: u64,
    pub macs: u64,
}

/// `M x K x K x N` convolution producing an `out_h x out_w` map.
pub fn standard_conv_cost(m: u64, n: u64, k: u64, out_h: u64, out_w: u64) -> Cost {
    let params = m * k * k * n;
    Cost {
        params,
        macs: params * out_h * out_w,
    }
}

/// Depthwise `M x K x K` followed by pointwise `M x N`.
pub fn separable_conv_cost(m: u64, n: u64, k: u64, out_h: u64, out_w: u64) -> Cost {
    let params = m * k * k + m * n;
    Cost {
        params,
        macs: params * out_h * out_w,
    }
}

/// Cost of a depthwise-separable layer relative to the standard convolution
/// of the same shape: `1/N + 1/K²`.
pub fn dsc_reduction_ratio(k: u64, n: u64) -> f64 {
    1.0 / n as f64 + 1.0 / (k * k) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub separable: Cost,
    pub standard: Cost,
}

impl LayerCost {
    /// `separable / standard == 1/N + 1/K²`, checked by cross-multiplication.
    pub fn ratio_identity_holds(&self) -> bool {
        let k2 = (self.kernel * self.kernel) as u64;
        let n = self.out_channels as u64;
        self.separable.params * k2 * n == self.standard.params * (k2 + n)
            && self.separable.macs * k2 * n == self.standard.macs * (k2 + n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub params: u64,
    pub macs: u64,
    /// Convolution parameters relative to the standard-convolution network.
    pub dsc_ratio: f64,
    pub standard_params: u64,
    pub standard_macs: u64,
    pub layers: Vec<LayerCost>,
    pub head: Cost,
}

impl ModelSummary {
    pub fn mac_ratio(&self) -> f64 {
        self.macs as f64 / self.standard_macs as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_examples() {
        let std = standard_conv_cost(3, 8, 3, 4, 4);
        assert_eq!(
            std,
            Cost {
                params: 216,
                macs: 3456
            }
        );
        let sep = separable_conv_cost(3, 8, 3, 4, 4);
        assert_eq!(sep.params, 51);
        assert_eq!(sep.params as f64 / std.params as f64, 51.0 / 216.0);
        assert!((51.0 / 216.0 - dsc_reduction_ratio(3, 8)).abs() < 1e-15);
    }

    #[test]
    fn ratio_values() {
        assert!((dsc_reduction_ratio(3, 64) - 0.126_736_111_111_111_1).abs() < 1e-15);
        assert_eq!(dsc_reduction_ratio(5, 1), 1.0 + 1.0 / 25.0);
        assert_eq!(dsc_reduction_ratio(1, 4), 1.25);
    }
}
