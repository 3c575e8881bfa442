//! Station graph and the graph-convolutional LSTM forecaster.

mod gclstm;
mod graph;
mod synthetic;

pub use gclstm::{
    horizon_rmse, persistence_forecast, train_gclstm, Forecaster, GcLstm, GcLstmConfig,
    Standardizer, TrainingTrace,
};
pub use graph::{
    build_adjacency, gc_forward, haversine_km, load_stations, normalize_propagation, read_stations,
    write_stations, Station, StationGraph, EARTH_RADIUS_KM, MIN_DISTANCE_KM,
};
pub use synthetic::{synthesize_diffusion, DiffusionSpec};
