//! Aerial-ground air quality sensing.
//!
//! * [`haze`] turns RGB images into six-channel haze feature stacks.
//! * [`mobilenet`] classifies feature stacks into AQI scales with a densely
//!   connected depthwise-separable CNN.
//! * [`fed`] trains that classifier by federated averaging over simulated
//!   UAV clients.
//! * [`ground`] forecasts station AQI with a graph-convolutional LSTM.
//! * [`data`] holds ingestion, synthesis, splitting and metrics.
//!
//! Everything is built on the small autodiff library in [`nn`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the tensor formulas they implement.
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod fed;
pub mod ground;
pub mod haze;
pub mod mobilenet;
pub mod nn;

pub use error::{Error, Result};
pub use nn::{ParamSet, Tensor};
