//! On-disk haze datasets: PNG images, per-sample feature stacks in the
//! parameter binary format, and a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::haze_synth::{digest_hex, HazeSynthesisSpec, Sample};
use crate::error::{Error, Result};
use crate::haze::{Diagnostics, FeatureConfig, FeatureStack, RgbImage};
use crate::nn::{ParamSet, Precision};

pub const MANIFEST_FORMAT: &str = "haze-dataset 1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Image path relative to the dataset directory.
    pub image: String,
    /// Feature-stack path relative to the dataset directory.
    pub stack: String,
    pub label: usize,
    pub lambda: f64,
    pub image_digest: String,
    pub stack_digest: String,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub classes: usize,
    pub synthesis: Option<HazeSynthesisSpec>,
    pub features: FeatureConfig,
    /// Digest over `(id, label, image digest)` of every sample.
    pub dataset_digest: String,
    pub samples: Vec<ManifestEntry>,
}

fn io_err(path: &Path, e: impl ToString) -> Error {
    Error::Input {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

pub fn dataset_digest(samples: &[Sample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.id.as_bytes());
        h.update([0]);
        h.update((s.label as u64).to_le_bytes());
        h.update(s.image_digest.as_bytes());
    }
    hex::encode(h.finalize())
}

fn stack_bytes(stack: &FeatureStack) -> Vec<u8> {
    stack.to_param_set().to_bytes(Precision::F64)
}

/// Write images, stacks and `manifest.json` under `dir`.
pub fn write_dataset(
    dir: &Path,
    samples: &[Sample],
    classes: usize,
    synthesis: Option<&HazeSynthesisSpec>,
    features: &FeatureConfig,
) -> Result<Manifest> {
    for sub in ["images", "stacks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
    }
    let mut sorted: Vec<&Sample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let entries = sorted
        .par_iter()
        .map(|s| {
            let image = format!("images/{}.png", s.id);
            let stack = format!("stacks/{}.bin", s.id);
            s.image().save(&dir.join(&image))?;
            let bytes = stack_bytes(&s.stack);
            let p = dir.join(&stack);
            fs::write(&p, &bytes).map_err(|e| io_err(&p, e))?;
            Ok(ManifestEntry {
                id: s.id.clone(),
                image,
                stack,
                label: s.label,
                lambda: s.lambda,
                image_digest: s.image_digest.clone(),
                stack_digest: digest_hex(&bytes),
                diagnostics: s.stack.diagnostics.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let owned: Vec<Sample> = sorted.into_iter().cloned().collect();
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        classes,
        synthesis: synthesis.cloned(),
        features: features.clone(),
        dataset_digest: dataset_digest(&owned),
        samples: entries,
    };
    let p = dir.join(MANIFEST_FILE);
    fs::write(&p, serde_json::to_vec_pretty(&manifest)?).map_err(|e| io_err(&p, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join(MANIFEST_FILE);
    let text = fs::read(&p).map_err(|e| io_err(&p, e))?;
    let m: Manifest = serde_json::from_slice(&text)?;
    if m.format != MANIFEST_FORMAT {
        return Err(io_err(
            &p,
            format!("unsupported manifest format `{}`", m.format),
        ));
    }
    Ok(m)
}

/// Load every sample and verify its digests.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<Sample>)> {
    let m = read_manifest(dir)?;
    let samples = m
        .samples
        .par_iter()
        .map(|e| {
            let sp: PathBuf = dir.join(&e.stack);
            let bytes = fs::read(&sp).map_err(|err| io_err(&sp, err))?;
            if digest_hex(&bytes) != e.stack_digest {
                return Err(io_err(&sp, "feature stack digest mismatch"));
            }
            let mut stack = FeatureStack::from_param_set(&ParamSet::from_bytes(&bytes)?)?;
            stack.diagnostics = e.diagnostics.clone();
            let ip = dir.join(&e.image);
            let img = RgbImage::load(&ip)?;
            let raw = img.to_rgb8();
            if digest_hex(&raw) != e.image_digest {
                return Err(io_err(&ip, "image digest mismatch"));
            }
            Ok(Sample {
                id: e.id.clone(),
                label: e.label,
                lambda: e.lambda,
                stack,
                width: img.width(),
                height: img.height(),
                image_digest: e.image_digest.clone(),
                raw,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, samples))
}
