use std::path::Path;

use crate::error::{Error, Result};

/// RGB image with components in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

/// Single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Boolean per-pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Invalid(format!(
                "{width}x{height} image with {} pixels",
                pixels.len()
            )));
        }
        if let Some(p) = pixels
            .iter()
            .find(|p| p.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::Invalid(format!("pixel {p:?} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    /// Luminosity grayscale with weights (0.299, 0.587, 0.114).
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .pixels
                .iter()
                .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
                .collect(),
        }
    }

    /// Bilinear resample with half-pixel centres.
    pub fn resize(&self, width: usize, height: usize) -> RgbImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let sample = |pos: f64, extent: usize| {
            let p = pos.clamp(0.0, (extent - 1) as f64);
            let lo = p.floor() as usize;
            let hi = (lo + 1).min(extent - 1);
            (lo, hi, p - lo as f64)
        };
        Self::from_fn(width, height, |x, y| {
            let (x0, x1, fx) = sample((x as f64 + 0.5) * sx - 0.5, self.width);
            let (y0, y1, fy) = sample((y as f64 + 0.5) * sy - 0.5, self.height);
            let mut out = [0.0; 3];
            for (c, o) in out.iter_mut().enumerate() {
                let top = self.get(x0, y0)[c] * (1.0 - fx) + self.get(x1, y0)[c] * fx;
                let bottom = self.get(x0, y1)[c] * (1.0 - fx) + self.get(x1, y1)[c] * fx;
                *o = top * (1.0 - fy) + bottom * fy;
            }
            out
        })
    }

    /// 8-bit interleaved RGB buffer, as a decoder would hand it out.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(|v| (v * 255.0).round() as u8))
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, buf: &[u8]) -> Result<Self> {
        if buf.len() != width * height * 3 {
            return Err(Error::Invalid("rgb8 buffer length".into()));
        }
        let pixels = buf
            .chunks_exact(3)
            .map(|c| {
                [
                    c[0] as f64 / 255.0,
                    c[1] as f64 / 255.0,
                    c[2] as f64 / 255.0,
                ]
            })
            .collect();
        Self::new(width, height, pixels)
    }

    /// Decode a PNG or binary PPM/PGM file.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Input {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::from_rgb8(w as usize, h as usize, rgb.as_raw())
    }

    /// Encode by file extension (`.png`, `.ppm`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer length matches dimensions");
        buf.save(path).map_err(|e| Error::Input {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Invalid(format!(
                "{width}x{height} gray image with {} values",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self::from_fn(width, height, |_, _| v)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Rows `0..rows`, as a new image.
    pub fn top_rows(&self, rows: usize) -> GrayImage {
        let rows = rows.clamp(1, self.height);
        GrayImage {
            width: self.width,
            height: rows,
            data: self.data[..rows * self.width].to_vec(),
        }
    }

    /// Affine rescale onto `[0, 1]`; a constant image maps to zeros.
    pub fn min_max_scaled(&self) -> GrayImage {
        let (lo, hi) = (self.min(), self.max());
        let span = hi - lo;
        if span <= 0.0 || !span.is_finite() {
            self.map(|_| 0.0)
        } else {
            self.map(|v| ((v - lo) / span).clamp(0.0, 1.0))
        }
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Invalid("mask length".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, v: bool) -> Self {
        Self {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Place this mask over the top rows of a taller canvas; the rest is false.
    pub fn extend_to_height(&self, height: usize) -> BinaryMask {
        let mut data = self.data.clone();
        data.resize(self.width * height, false);
        data.truncate(self.width * height);
        BinaryMask {
            width: self.width,
            height,
            data,
        }
    }
}

/// 256-bin histogram index of a value in `[0, 1]`.
pub fn bin256(v: f64) -> usize {
    ((v * 256.0).floor().max(0.0) as usize).min(255)
}

/// Inclusive index range of a window of odd `size` centred on `i`, clamped to `0..n`.
pub(crate) fn window(i: usize, size: usize, n: usize) -> std::ops::RangeInclusive<usize> {
    let r = size / 2;
    i.saturating_sub(r)..=(i + r).min(n - 1)
}
