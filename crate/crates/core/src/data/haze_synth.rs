//! Synthetic hazy scenes from the Beer-Lambert imaging model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::haze::{build_feature_stack, FeatureConfig, FeatureStack, GrayImage, RgbImage};

/// Scene depth generator; all produce values in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthField {
    /// 1 at the top row, 0 at the bottom.
    LinearRamp,
    /// Distance from the bottom-centre, normalized.
    Radial,
    /// Seeded sum of low-frequency waves.
    RandomSmooth,
}

pub fn depth_map(field: DepthField, width: usize, height: usize, seed: u64) -> GrayImage {
    let hm = (height.max(2) - 1) as f64;
    let wm = (width.max(2) - 1) as f64;
    match field {
        DepthField::LinearRamp => GrayImage::from_fn(width, height, |_, y| 1.0 - y as f64 / hm),
        DepthField::Radial => {
            let cx = wm / 2.0;
            let max = (cx * cx + hm * hm).sqrt();
            GrayImage::from_fn(width, height, |x, y| {
                let dx = x as f64 - cx;
                let dy = hm - y as f64;
                (dx * dx + dy * dy).sqrt() / max
            })
        }
        DepthField::RandomSmooth => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let waves: Vec<[f64; 4]> = (0..3)
                .map(|_| {
                    [
                        rng.gen_range(0.5..2.0),
                        rng.gen_range(0.5..2.0),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                        rng.gen_range(0.5..1.0),
                    ]
                })
                .collect();
            let raw = GrayImage::from_fn(width, height, |x, y| {
                let (u, v) = (x as f64 / wm, y as f64 / hm);
                waves
                    .iter()
                    .map(|w| w[3] * (std::f64::consts::PI * (w[0] * u + w[1] * v) + w[2]).cos())
                    .sum()
            });
            raw.min_max_scaled()
        }
    }
}

/// `base * beta + airlight * (1 - beta)` with `beta = exp(-extinction * depth)`,
/// clamped to `[0, 1]`.
pub fn synthesize_haze_image(
    base: &RgbImage,
    extinction: f64,
    airlight: [f64; 3],
    depth: &GrayImage,
) -> Result<RgbImage> {
    if !(extinction >= 0.0) {
        return Err(Error::Invalid(format!("extinction {extinction} < 0")));
    }
    if depth.width() != base.width() || depth.height() != base.height() {
        return Err(Error::dim(
            "synthesize_haze_image",
            &[base.height(), base.width()],
            &[depth.height(), depth.width()],
        ));
    }
    if depth.data().iter().any(|&d| !(d >= 0.0)) {
        return Err(Error::Invalid("depth must be non-negative".into()));
    }
    Ok(RgbImage::from_fn(base.width(), base.height(), |x, y| {
        let beta = (-extinction * depth.get(x, y)).exp();
        let p = base.get(x, y);
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = (p[c] * beta + airlight[c] * (1.0 - beta)).clamp(0.0, 1.0);
        }
        out
    }))
}

/// Procedural outdoor scene: blue sky band over saturated, shadowed ground.
/// Every 3x3 neighbourhood of the ground holds a near-black pixel.
pub fn base_scene(size: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.gen_range(0.25..0.45) * size as f64;
    let sky_top = [
        rng.gen_range(0.15..0.35),
        rng.gen_range(0.35..0.55),
        rng.gen_range(0.75..0.95),
    ];
    let sky_low = [
        rng.gen_range(0.45..0.6),
        rng.gen_range(0.6..0.75),
        rng.gen_range(0.85..1.0),
    ];
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            let mut col = [
                rng.gen_range(0.2..0.9),
                rng.gen_range(0.2..0.9),
                rng.gen_range(0.1..0.7),
            ];
            col[rng.gen_range(0..3)] = rng.gen_range(0.0..0.08);
            (
                rng.gen_range(0.0..size as f64),
                rng.gen_range(horizon..size as f64),
                rng.gen_range(0.1..0.35) * size as f64,
                col,
            )
        })
        .collect();
    let noise: Vec<f64> = (0..size * size)
        .map(|_| rng.gen_range(-0.06..0.06))
        .collect();
    let shadow_phase = (rng.gen_range(0..3), rng.gen_range(0..3));
    RgbImage::from_fn(size, size, |x, y| {
        let yf = y as f64;
        if yf < horizon {
            let t = yf / horizon;
            let mut p = [0.0; 3];
            for c in 0..3 {
                p[c] = sky_top[c] * (1.0 - t) + sky_low[c] * t + noise[y * size + x] * 0.3;
            }
            return p;
        }
        if (x + shadow_phase.0) % 3 == 0 && (y + shadow_phase.1) % 3 == 0 {
            return [0.01, 0.01, 0.01];
        }
        let mut p = [0.35, 0.3, 0.2];
        let mut weight = 0.2;
        for &(bx, by, r, col) in &blobs {
            let d2 = ((x as f64 - bx).powi(2) + (yf - by).powi(2)) / (r * r);
            let w = (-d2).exp();
            for c in 0..3 {
                p[c] = p[c] * weight / (weight + w) + col[c] * w / (weight + w);
            }
            weight += w;
        }
        p.map(|v| v + noise[y * size + x])
    })
}

/// Depth for [`base_scene`]-like images: the sky is far, the ground ramps up
/// towards the horizon.
pub fn scene_depth(field: DepthField, size: usize, seed: u64) -> GrayImage {
    depth_map(field, size, size, seed)
}

/// Map from extinction level to class label by intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    /// Ascending interval edges; class `i` covers `[edges[i], edges[i+1])`,
    /// the last interval is closed.
    pub edges: Vec<f64>,
}

impl ClassMap {
    /// `classes` equal-width intervals over `[lo, hi]`.
    pub fn equal_width(lo: f64, hi: f64, classes: usize) -> Result<Self> {
        if classes == 0 || !(hi > lo) {
            return Err(Error::Config(format!(
                "cannot split [{lo}, {hi}] into {classes} classes"
            )));
        }
        let w = (hi - lo) / classes as f64;
        let mut edges: Vec<f64> = (0..classes).map(|i| lo + w * i as f64).collect();
        edges.push(hi);
        Ok(Self { edges })
    }

    pub fn classes(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn classify(&self, lambda: f64) -> Option<usize> {
        let n = self.classes();
        if lambda < self.edges[0] || lambda > self.edges[n] {
            return None;
        }
        Some(
            (0..n)
                .find(|&i| lambda < self.edges[i + 1])
                .unwrap_or(n - 1),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HazeSynthesisSpec {
    pub base_count: usize,
    pub base_size: usize,
    pub lambdas: Vec<f64>,
    pub airlight: [f64; 3],
    pub depth_field: DepthField,
    /// Defaults to one class per equal-width interval, as many as `lambdas`.
    pub class_map: Option<ClassMap>,
    pub seed: u64,
}

impl Default for HazeSynthesisSpec {
    fn default() -> Self {
        Self {
            base_count: 200,
            base_size: 48,
            lambdas: vec![0.4, 1.6, 2.8],
            airlight: [0.88, 0.9, 0.92],
            depth_field: DepthField::LinearRamp,
            class_map: None,
            seed: 0,
        }
    }
}

impl HazeSynthesisSpec {
    pub fn resolved_class_map(&self) -> Result<ClassMap> {
        if let Some(m) = &self.class_map {
            return Ok(m.clone());
        }
        let lo = self.lambdas.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self
            .lambdas
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        ClassMap::equal_width(lo, hi, self.lambdas.len())
    }

    pub fn validate(&self) -> Result<ClassMap> {
        if self.lambdas.is_empty() || self.lambdas.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Config("extinction levels must be positive".into()));
        }
        if self.lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "extinction levels must be strictly increasing".into(),
            ));
        }
        if self.base_count == 0 || self.base_size < 8 {
            return Err(Error::Config("need >= 1 base image of size >= 8".into()));
        }
        let map = self.resolved_class_map()?;
        let mut seen = vec![false; map.classes()];
        for &l in &self.lambdas {
            let c = map
                .classify(l)
                .ok_or_else(|| Error::Config(format!("extinction {l} is outside the class map")))?;
            seen[c] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("class {empty} receives no samples")));
        }
        Ok(map)
    }
}

/// One labelled haze image, reduced to its feature stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub lambda: f64,
    pub stack: FeatureStack,
    /// Interleaved 8-bit RGB of the hazy image.
    pub raw: Vec<u8>,
    pub width: usize,
    pub height: usize,
    pub image_digest: String,
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Sample {
    pub fn from_image(
        id: impl Into<String>,
        label: usize,
        lambda: f64,
        img: &RgbImage,
        cfg: &FeatureConfig,
    ) -> Result<Self> {
        let raw = img.to_rgb8();
        // Features come from the quantized image so files on disk reproduce them.
        let quantized = RgbImage::from_rgb8(img.width(), img.height(), &raw)?;
        Ok(Self {
            id: id.into(),
            label,
            lambda,
            stack: build_feature_stack(&quantized, cfg)?,
            image_digest: digest_hex(&raw),
            raw,
            width: img.width(),
            height: img.height(),
        })
    }

    pub fn image(&self) -> RgbImage {
        RgbImage::from_rgb8(self.width, self.height, &self.raw).expect("valid buffer")
    }
}

/// Synthesize every (base, level) pair, extract features and label by the
/// class map. Samples come back sorted by id.
pub fn generate_haze_dataset(spec: &HazeSynthesisSpec, cfg: &FeatureConfig) -> Result<Vec<Sample>> {
    let map = spec.validate()?;
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.base_count)
        .flat_map(|b| (0..spec.lambdas.len()).map(move |l| (b, l)))
        .collect();
    let mut samples = jobs
        .par_iter()
        .map(|&(b, l)| {
            let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(b as u64);
            let base = base_scene(spec.base_size, seed);
            let depth = scene_depth(spec.depth_field, spec.base_size, seed ^ 0x5eed);
            let lambda = spec.lambdas[l];
            let img = synthesize_haze_image(&base, lambda, spec.airlight, &depth)?;
            let label = map.classify(lambda).expect("validated");
            Sample::from_image(format!("b{b:05}_l{l:02}"), label, lambda, &img, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(samples)
}
