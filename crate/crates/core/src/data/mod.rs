//! Ingestion, synthesis, splitting and metrics.

mod dataset;
mod haze_synth;
mod metrics;
mod observations;
mod split;
mod windows;

pub use dataset::{
    dataset_digest, load_dataset, read_manifest, write_dataset, Manifest, ManifestEntry,
    MANIFEST_FILE, MANIFEST_FORMAT,
};
pub use haze_synth::{
    base_scene, depth_map, digest_hex, generate_haze_dataset, scene_depth, synthesize_haze_image,
    ClassMap, DepthField, HazeSynthesisSpec, Sample,
};
pub use metrics::rmse;
pub use observations::{format_timestamp, parse_timestamp, ObservationRecord, ObservationSet};
pub use split::{split_8_2, Labeled, SplitSpec};
pub use windows::{make_windows, SeriesGrid, SeriesWindow};
