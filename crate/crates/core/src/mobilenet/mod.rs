//! Densely connected depthwise-separable classifier over haze feature
//! stacks, with exact parameter and MAC accounting.

mod cost;
mod model;
mod scale;
mod train;

pub use cost::{
    dsc_reduction_ratio, separable_conv_cost, standard_conv_cost, Cost, LayerCost, ModelSummary,
};
pub use model::{build_model, BlockSpec, DenseMobileNet, DenseMobileNetConfig};
pub use scale::{predict_scale, AqiBand, AqiScaleTable, ScalePrediction};
pub use train::{evaluate, loss_and_grad, train_epoch, Evaluation, Example, SgdOptions};
