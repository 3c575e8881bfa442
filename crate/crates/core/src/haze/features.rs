//! The per-pixel haze operators.

use crate::error::{Error, Result};
use crate::haze::image::{bin256, window, BinaryMask, GrayImage, RgbImage};

#[derive(Debug, Clone, PartialEq)]
pub struct Otsu {
    /// Histogram bin; class 0 is `bin <= threshold`.
    pub threshold: usize,
    /// `true` where the pixel's bin exceeds the threshold.
    pub mask: BinaryMask,
    /// Fewer than two populated bins: no split exists, mask is all foreground.
    pub degenerate: bool,
}

/// Otsu's threshold over a 256-bin histogram of `[0, 1]` intensities.
///
/// Scores are compared exactly in integer arithmetic so ties resolve to the
/// smallest bin deterministically.
pub fn otsu_threshold(gray: &GrayImage) -> Otsu {
    let mut hist = [0u64; 256];
    for &v in gray.data() {
        hist[bin256(v)] += 1;
    }
    let total: u64 = hist.iter().sum();
    let total_sum: u64 = hist.iter().enumerate().map(|(b, &h)| b as u64 * h).sum();

    // score(t) = (S0*n1 - S1*n0)^2 / (n0*n1), proportional to the between-class variance.
    let mut best: Option<(usize, u128, u128)> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for (t, &h) in hist.iter().enumerate().take(255) {
        n0 += h;
        s0 += t as u64 * h;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total_sum - s0;
        let diff = (s0 as i128 * n1 as i128 - s1 as i128 * n0 as i128).unsigned_abs();
        let num = diff * diff;
        let den = n0 as u128 * n1 as u128;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => match (num.checked_mul(bd), bn.checked_mul(den)) {
                (Some(a), Some(b)) => a > b,
                _ => num as f64 / den as f64 > bn as f64 / bd as f64,
            },
        };
        if better {
            best = Some((t, num, den));
        }
    }

    let (w, h) = (gray.width(), gray.height());
    match best {
        Some((t, _, _)) => Otsu {
            threshold: t,
            mask: BinaryMask::new(w, h, gray.data().iter().map(|&v| bin256(v) > t).collect())
                .expect("same size"),
            degenerate: false,
        },
        None => Otsu {
            threshold: 0,
            mask: BinaryMask::filled(w, h, true),
            degenerate: true,
        },
    }
}

/// Minimum over an odd square window clamped to the image. Computed
/// separably, which is exact for `min`.
fn min_filter(src: &GrayImage, patch: usize) -> GrayImage {
    let (w, h) = (src.width(), src.height());
    let horiz = GrayImage::from_fn(w, h, |x, y| {
        window(x, patch, w)
            .map(|xx| src.get(xx, y))
            .fold(f64::INFINITY, f64::min)
    });
    GrayImage::from_fn(w, h, |x, y| {
        window(y, patch, h)
            .map(|yy| horiz.get(x, yy))
            .fold(f64::INFINITY, f64::min)
    })
}

/// Per-pixel minimum over the colour channels and the surrounding patch.
pub fn dark_channel(img: &RgbImage, patch: usize) -> GrayImage {
    let per_pixel = GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get(x, y);
        p[0].min(p[1]).min(p[2])
    });
    min_filter(&per_pixel, patch)
}

/// Transmission estimate `1 - min_patch min_c I_c / airlight_c`, clamped to `[0, 1]`.
pub fn transmission(img: &RgbImage, airlight: [f64; 3], patch: usize) -> Result<GrayImage> {
    if airlight.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
        return Err(Error::Invalid(format!(
            "airlight components must be positive, got {airlight:?}"
        )));
    }
    let normalized = GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get(x, y);
        (p[0] / airlight[0])
            .min(p[1] / airlight[1])
            .min(p[2] / airlight[2])
    });
    Ok(min_filter(&normalized, patch).map(|v| (1.0 - v).clamp(0.0, 1.0)))
}

/// Beer-Lambert inversion `-ln(max(t, eps)) / extinction`, before rescaling.
pub fn depth_proxy_raw(transmission: &GrayImage, extinction: f64, eps: f64) -> GrayImage {
    transmission.map(|t| (-(t.max(eps)).ln() / extinction).max(0.0))
}

/// [`depth_proxy_raw`] rescaled by its maximum onto `[0, 1]`.
pub fn depth_proxy(transmission: &GrayImage, extinction: f64, eps: f64) -> GrayImage {
    let raw = depth_proxy_raw(transmission, extinction, eps);
    let max = raw.max();
    if max > 0.0 {
        raw.map(|d| d / max)
    } else {
        raw.map(|_| 0.0)
    }
}

/// Hexcone HSV: hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
/// Hue is 0 for achromatic pixels.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return (0.0, s, v);
    }
    let h = if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (if h >= 360.0 { h - 360.0 } else { h }, s, v)
}

/// Saturation-weighted triangular membership around the blue hue (240°).
pub fn blueness(rgb: [f64; 3]) -> f64 {
    let (h, s, _) = rgb_to_hsv(rgb);
    s * (1.0 - (h - 240.0).abs() / 60.0).max(0.0)
}

pub fn blueness_map(img: &RgbImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| blueness(img.get(x, y)))
}

fn rms_of(values: &[f64]) -> f64 {
    if values.iter().all(|&v| v == values[0]) {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn entropy_of_bins(bins: &mut [usize]) -> f64 {
    bins.sort_unstable();
    let n = bins.len() as f64;
    let mut h = 0.0;
    let mut i = 0;
    while i < bins.len() {
        let j = bins[i..]
            .iter()
            .position(|&b| b != bins[i])
            .map_or(bins.len(), |k| i + k);
        let p = (j - i) as f64 / n;
        h -= p * p.log2();
        i = j;
    }
    h
}

fn local_map(gray: &GrayImage, win: usize, f: impl Fn(&[f64]) -> f64) -> GrayImage {
    let (w, h) = (gray.width(), gray.height());
    let mut buf = Vec::with_capacity(win * win);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            buf.clear();
            for yy in window(y, win, h) {
                for xx in window(x, win, w) {
                    buf.push(gray.get(xx, yy));
                }
            }
            out.push(f(&buf));
        }
    }
    GrayImage::new(w, h, out).expect("same size")
}

/// Root-mean-square contrast (intensity standard deviation): per clamped
/// window and over the whole image.
pub fn rms_contrast(gray: &GrayImage, win: usize) -> (GrayImage, f64) {
    (local_map(gray, win, rms_of), rms_of(gray.data()))
}

/// Shannon entropy in bits of the 256-bin histogram, per window and global.
pub fn entropy(gray: &GrayImage, win: usize) -> (GrayImage, f64) {
    let of = |vals: &[f64]| {
        let mut bins: Vec<usize> = vals.iter().map(|&v| bin256(v)).collect();
        entropy_of_bins(&mut bins)
    };
    (local_map(gray, win, of), of(gray.data()))
}

fn derivative(at: usize, n: usize, f: impl Fn(usize) -> f64) -> f64 {
    if n < 2 {
        0.0
    } else if at == 0 {
        f(1) - f(0)
    } else if at == n - 1 {
        f(n - 1) - f(n - 2)
    } else {
        (f(at + 1) - f(at - 1)) / 2.0
    }
}

/// Gradient magnitude `|∇I|`: central differences inside, one-sided at the border.
pub fn gradient_magnitude(gray: &GrayImage) -> GrayImage {
    let (w, h) = (gray.width(), gray.height());
    GrayImage::from_fn(w, h, |x, y| {
        let gx = derivative(x, w, |i| gray.get(i, y));
        let gy = derivative(y, h, |j| gray.get(x, j));
        (gx * gx + gy * gy).sqrt()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Smoothness {
    pub map: GrayImage,
    /// Mean gradient magnitude over the sky mask.
    pub avg: f64,
    /// The mask was empty and the whole image was averaged instead.
    pub degenerate: bool,
}

pub fn smoothness(gray: &GrayImage, sky: &BinaryMask) -> Result<Smoothness> {
    if sky.width() != gray.width() || sky.height() != gray.height() {
        return Err(Error::dim(
            "smoothness",
            &[gray.height(), gray.width()],
            &[sky.height(), sky.width()],
        ));
    }
    let map = gradient_magnitude(gray);
    let selected: Vec<f64> = map
        .data()
        .iter()
        .zip(sky.data())
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .collect();
    let (avg, degenerate) = if selected.is_empty() {
        (map.mean(), true)
    } else {
        (selected.iter().sum::<f64>() / selected.len() as f64, false)
    };
    Ok(Smoothness {
        map,
        avg,
        degenerate,
    })
}

/// Mean colour of the brightest 0.1% (at least one) dark-channel pixels.
pub fn estimate_airlight(img: &RgbImage, dark: &GrayImage) -> [f64; 3] {
    let n = dark.data().len();
    let take = ((n as f64 * 0.001).ceil() as usize).max(1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| dark.data()[b].total_cmp(&dark.data()[a]).then(a.cmp(&b)));
    let mut acc = [0.0; 3];
    for &i in &idx[..take] {
        let p = img.pixels()[i];
        for c in 0..3 {
            acc[c] += p[c];
        }
    }
    acc.map(|v| v / take as f64)
}
