use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haze::features::{
    blueness_map, dark_channel, depth_proxy, entropy, estimate_airlight, otsu_threshold,
    rms_contrast, smoothness, transmission,
};
use crate::haze::image::{GrayImage, RgbImage};
use crate::nn::{ParamSet, Tensor};

pub const CHANNELS: usize = 6;

pub const CHANNEL_NAMES: [&str; CHANNELS] = [
    "dark_channel",
    "depth_proxy",
    "blueness",
    "local_rms_contrast",
    "local_entropy",
    "gradient_magnitude",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Airlight {
    Estimate,
    Fixed([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub target_size: usize,
    pub dark_patch: usize,
    pub local_window: usize,
    pub sky_fraction: f64,
    pub airlight: Airlight,
    pub extinction: f64,
    pub epsilon: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            target_size: 128,
            dark_patch: 15,
            local_window: 7,
            sky_fraction: 1.0 / 3.0,
            airlight: Airlight::Estimate,
            extinction: 1.0,
            epsilon: 1e-3,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let odd = |v: usize| v >= 1 && v % 2 == 1;
        if !odd(self.dark_patch) || !odd(self.local_window) {
            return Err(Error::Config(format!(
                "dark_patch ({}) and local_window ({}) must be odd and >= 1",
                self.dark_patch, self.local_window
            )));
        }
        if self.target_size < 8 {
            return Err(Error::Config(format!(
                "target_size {} is below 8",
                self.target_size
            )));
        }
        if !(self.sky_fraction > 0.0 && self.sky_fraction <= 1.0) {
            return Err(Error::Config("sky_fraction must lie in (0, 1]".into()));
        }
        if !(self.extinction > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config(
                "extinction and epsilon must be positive".into(),
            ));
        }
        if let Airlight::Fixed(a) = self.airlight {
            if a.iter().any(|&c| !(c > 0.0)) {
                return Err(Error::Config("fixed airlight must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub rms_global: f64,
    pub entropy_global: f64,
    pub smoothness_avg: f64,
    pub otsu_threshold: usize,
    pub otsu_degenerate: bool,
    pub sky_degenerate: bool,
    pub airlight: [f64; 3],
}

/// Six haze feature maps, laid out `[S, S, 6]`, each scaled onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    tensor: Tensor,
    pub diagnostics: Diagnostics,
}

impl FeatureStack {
    pub fn size(&self) -> usize {
        self.tensor.shape()[0]
    }

    /// The `[S, S, 6]` tensor.
    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn channel(&self, c: usize) -> GrayImage {
        let s = self.size();
        GrayImage::from_fn(s, s, |x, y| self.tensor.data()[(y * s + x) * CHANNELS + c])
    }

    /// Channel-major `[6, S, S]` copy, the classifier's input layout.
    pub fn to_chw(&self) -> Tensor {
        let s = self.size();
        let d = self.tensor.data();
        Tensor::from_fn(&[CHANNELS, s, s], |i| {
            let (c, p) = (i / (s * s), i % (s * s));
            d[p * CHANNELS + c]
        })
    }

    /// Rebuild from an `[S, S, 6]` tensor; diagnostics are not recoverable
    /// from the tensor and are zeroed.
    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        let s = tensor.shape();
        if s.len() != 3 || s[0] != s[1] || s[2] != CHANNELS {
            return Err(Error::dim("feature stack", s, &[s[0], s[0], CHANNELS]));
        }
        Ok(Self {
            tensor,
            diagnostics: Diagnostics {
                rms_global: 0.0,
                entropy_global: 0.0,
                smoothness_avg: 0.0,
                otsu_threshold: 0,
                otsu_degenerate: false,
                sky_degenerate: false,
                airlight: [0.0; 3],
            },
        })
    }

    /// Single-entry [`ParamSet`] named `features`.
    pub fn to_param_set(&self) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("features", self.tensor.clone())
            .expect("single entry");
        p
    }

    pub fn from_param_set(p: &ParamSet) -> Result<Self> {
        let t = p
            .get("features")
            .ok_or_else(|| Error::Format("missing `features` entry".into()))?;
        Self::from_tensor(t.clone())
    }

    /// `y,x,<channel names...>` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["y".to_string(), "x".to_string()];
        header.extend(CHANNEL_NAMES.iter().map(|s| s.to_string()));
        out.write_record(&header)?;
        let s = self.size();
        for y in 0..s {
            for x in 0..s {
                let base = (y * s + x) * CHANNELS;
                let mut row = vec![y.to_string(), x.to_string()];
                row.extend(
                    self.tensor.data()[base..base + CHANNELS]
                        .iter()
                        .map(|v| v.to_string()),
                );
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Resize, extract all six features, and scale each onto `[0, 1]`.
pub fn build_feature_stack(img: &RgbImage, cfg: &FeatureConfig) -> Result<FeatureStack> {
    cfg.validate()?;
    let s = cfg.target_size;
    let img = img.resize(s, s);
    let gray = img.to_gray();

    let dark = dark_channel(&img, cfg.dark_patch);
    let airlight = match cfg.airlight {
        Airlight::Fixed(a) => a,
        Airlight::Estimate => estimate_airlight(&img, &dark).map(|c| c.max(cfg.epsilon)),
    };
    let trans = transmission(&img, airlight, cfg.dark_patch)?;
    let depth = depth_proxy(&trans, cfg.extinction, cfg.epsilon);
    let blue = blueness_map(&img);
    let (rms_map, rms_global) = rms_contrast(&gray, cfg.local_window);
    let (ent_map, entropy_global) = entropy(&gray, cfg.local_window);

    let sky_rows = ((s as f64 * cfg.sky_fraction).round() as usize).clamp(1, s);
    let otsu = otsu_threshold(&gray.top_rows(sky_rows));
    let sky = otsu.mask.extend_to_height(s);
    let smooth = smoothness(&gray, &sky)?;

    let maps =
        [dark, depth, blue, rms_map, ent_map, smooth.map.clone()].map(|m| m.min_max_scaled());
    let mut data = vec![0.0; s * s * CHANNELS];
    for (c, m) in maps.iter().enumerate() {
        for (p, &v) in m.data().iter().enumerate() {
            data[p * CHANNELS + c] = v;
        }
    }
    let tensor = Tensor::new(&[s, s, CHANNELS], data)?;
    if !tensor.is_finite() {
        return Err(Error::NonFinite("feature stack".into()));
    }
    Ok(FeatureStack {
        tensor,
        diagnostics: Diagnostics {
            rms_global,
            entropy_global,
            smoothness_avg: smooth.avg,
            otsu_threshold: otsu.threshold,
            otsu_degenerate: otsu.degenerate,
            sky_degenerate: smooth.degenerate,
            airlight,
        },
    })
}

/// Per-channel means of a training set, subtracted from every model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; CHANNELS],
}

impl ChannelStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; CHANNELS],
        }
    }

    pub fn fit<'a>(stacks: impl IntoIterator<Item = &'a FeatureStack>) -> Self {
        let mut sum = [0.0; CHANNELS];
        let mut count = 0usize;
        for st in stacks {
            for px in st.tensor.data().chunks_exact(CHANNELS) {
                for c in 0..CHANNELS {
                    sum[c] += px[c];
                }
            }
            count += st.size() * st.size();
        }
        if count == 0 {
            return Self::identity();
        }
        Self {
            mean: sum.map(|v| v / count as f64),
        }
    }

    /// `[6, S, S]` model input with the channel means removed.
    pub fn normalize(&self, stack: &FeatureStack) -> Tensor {
        let mut t = stack.to_chw();
        let plane = stack.size() * stack.size();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v -= self.mean[i / plane];
        }
        t
    }
}
