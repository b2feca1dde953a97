use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ImageDims, ImageSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bound applied to normalized values.
pub const VALUE_BOUND: f64 = 3.0;

/// Per-sample training-time transformations.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    /// Crop side as a fraction of the image side, drawn uniformly from `[lo, hi]`.
    pub crop_fraction_range: (f64, f64),
    /// Brightness offset and contrast deviation are drawn from `[-s, s]`.
    pub color_jitter_strength: f64,
    pub noise_std: f64,
    pub enabled: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            crop_fraction_range: (0.8, 1.0),
            color_jitter_strength: 0.2,
            noise_std: 0.05,
            enabled: true,
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        AugmentPolicy {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_fraction_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::param(
                "crop_fraction_range",
                format!("[{lo}, {hi}] not within (0, 1]"),
            ));
        }
        for (name, v) in [
            ("color_jitter_strength", self.color_jitter_strength),
            ("noise_std", self.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(name, format!("{v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Full image, normalized to `pixel / 255 - 0.5`, laid out `[c, h, w]`.
pub(super) fn normalize_plain(sample: &ImageSample, dims: ImageDims) -> Tensor {
    let planes = to_planes(sample, dims);
    let data = planes.into_iter().map(|v| v - 0.5).collect();
    Tensor::from_parts(alloc::vec![dims.channels, dims.height, dims.width], data)
}

/// `h x w x c` bytes to `[c, h, w]` reals in `[0, 1]`.
fn to_planes(sample: &ImageSample, dims: ImageDims) -> Vec<f64> {
    let ImageDims {
        height: h,
        width: w,
        channels: c,
    } = dims;
    let mut out = alloc::vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(ch * h + y) * w + x] = f64::from(sample.pixels[(y * w + x) * c + ch]) / 255.0;
            }
        }
    }
    out
}

/// Random crop resized back to full size, per-channel brightness/contrast
/// jitter, additive Gaussian noise, then normalization. A disabled policy
/// gives the deterministic full-image normalization.
pub fn augment<R: Rng + ?Sized>(sample: &ImageSample, dims: ImageDims, policy: &AugmentPolicy, rng: &mut R) -> Tensor {
    if !policy.enabled {
        return normalize_plain(sample, dims);
    }
    let ImageDims {
        height: h, width: w, ..
    } = dims;
    let src: Vec<f64> = to_planes(sample, dims).into_iter().map(|v| v - 0.5).collect();
    let (lo, hi) = policy.crop_fraction_range;
    let frac = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let ch_ = (libm::round(frac * h as f64) as usize).clamp(1, h);
    let cw = (libm::round(frac * w as f64) as usize).clamp(1, w);
    let oy = rng.random_range(0..=h - ch_);
    let ox = rng.random_range(0..=w - cw);

    let mut out = if ch_ == h && cw == w {
        src
    } else {
        resize_crop(&src, dims, (oy, ox, ch_, cw))
    };

    let s = policy.color_jitter_strength;
    for plane in out.chunks_exact_mut(h * w) {
        let (contrast, brightness) = if s > 0.0 {
            (1.0 + rng.random_range(-s..=s), rng.random_range(-s..=s))
        } else {
            (1.0, 0.0)
        };
        for v in plane.iter_mut() {
            *v = *v * contrast + brightness;
        }
    }
    if policy.noise_std > 0.0 {
        for v in out.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *v += policy.noise_std * n;
        }
    }
    let data = out.into_iter().map(|v| v.clamp(-VALUE_BOUND, VALUE_BOUND)).collect();
    Tensor::from_parts(alloc::vec![dims.channels, h, w], data)
}

/// Bilinear resize of the crop `(top, left, height, width)` to full size.
fn resize_crop(src: &[f64], dims: ImageDims, crop: (usize, usize, usize, usize)) -> Vec<f64> {
    let ImageDims {
        height: h,
        width: w,
        channels: c,
    } = dims;
    let (top, left, chh, cww) = crop;
    let mut out = alloc::vec![0.0; c * h * w];
    // align-corners mapping of the output grid onto the crop
    let sy = if h > 1 { (chh - 1) as f64 / (h - 1) as f64 } else { 0.0 };
    let sx = if w > 1 { (cww - 1) as f64 / (w - 1) as f64 } else { 0.0 };
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let fy = top as f64 + y as f64 * sy;
            let y0 = libm::floor(fy) as usize;
            let y1 = (y0 + 1).min(top + chh - 1);
            let ty = fy - y0 as f64;
            for x in 0..w {
                let fx = left as f64 + x as f64 * sx;
                let x0 = libm::floor(fx) as usize;
                let x1 = (x0 + 1).min(left + cww - 1);
                let tx = fx - x0 as f64;
                let top_v = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
                let bot_v = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
                out[(ch * h + y) * w + x] = top_v * (1.0 - ty) + bot_v * ty;
            }
        }
    }
    out
}
