//! Procedural image corpus standing in for a natural-image few-shot benchmark.
//!
//! Each class is a shape/texture family: a signed-distance shape (disk, ring,
//! box, triangle, cross, ...) with class-level scale, aspect, stroke,
//! orientation, stripe texture and intensities. Instances perturb position,
//! scale, rotation, intensities, background gradient and pixel noise, so
//! classes overlap enough that few-shot accuracy is far from both chance and
//! perfect.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{atan2, cos, fabs, sin, sqrt};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, ImageDims, ImageSample};
use crate::error::{Error, Result};
use crate::rng;

/// Generator family. `Shifted` draws from a visibly different distribution
/// (inverted polarity, checker textures, heavier noise) for domain-shift runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Domain {
    #[default]
    Standard,
    Shifted,
}

impl Domain {
    pub fn token(self) -> &'static str {
        match self {
            Domain::Standard => "standard",
            Domain::Shifted => "shifted",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "standard" => Some(Domain::Standard),
            "shifted" => Some(Domain::Shifted),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub domain: Domain,
}

impl SynthConfig {
    pub fn new(seed: u64, n_classes: usize, per_class: usize, image_size: usize) -> Self {
        SynthConfig {
            seed,
            n_classes,
            per_class,
            image_size,
            domain: Domain::Standard,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 10 {
            return Err(Error::param("n_classes", format!("{} < 10", self.n_classes)));
        }
        if self.per_class < 30 {
            return Err(Error::param("per_class", format!("{} < 30", self.per_class)));
        }
        ImageDims::new(self.image_size, self.image_size, 1).map(|_| ())
    }
}

const N_KINDS: u32 = 10;

#[derive(Clone, Debug)]
struct ClassStyle {
    kind: u32,
    radius: f64,
    aspect: f64,
    stroke: f64,
    rotation: f64,
    lobes: f64,
    tex_freq: f64,
    tex_angle: f64,
    tex_amp: f64,
    fg: f64,
    bg: f64,
}

impl ClassStyle {
    fn draw<R: Rng + ?Sized>(rng: &mut R, side: f64) -> Self {
        ClassStyle {
            kind: rng.random_range(0..N_KINDS),
            radius: side * rng.random_range(0.22..0.40),
            aspect: rng.random_range(0.55..1.0),
            stroke: side * rng.random_range(0.06..0.14),
            rotation: rng.random_range(0.0..2.0 * PI),
            lobes: f64::from(rng.random_range(3u32..7)),
            tex_freq: rng.random_range(0.0..0.30),
            tex_angle: rng.random_range(0.0..PI),
            tex_amp: rng.random_range(0.0..0.8),
            fg: rng.random_range(0.55..1.0),
            bg: rng.random_range(0.0..0.35),
        }
    }
}

fn sq(x: f64) -> f64 {
    x * x
}

fn box_sdf(u: f64, v: f64, a: f64, b: f64) -> f64 {
    let dx = fabs(u) - a;
    let dy = fabs(v) - b;
    let outside = sqrt(sq(dx.max(0.0)) + sq(dy.max(0.0)));
    outside + dx.max(dy).min(0.0)
}

fn shape_sdf(style: &ClassStyle, u: f64, v: f64, r: f64) -> f64 {
    let len = sqrt(u * u + v * v);
    let stroke = style.stroke;
    match style.kind {
        0 => len - r,
        1 => fabs(len - r) - stroke / 2.0,
        2 => box_sdf(u, v, r, r * style.aspect),
        3 => fabs(box_sdf(u, v, r, r * style.aspect)) - stroke / 2.0,
        4 => (0..3)
            .map(|k| {
                let a = PI / 2.0 + 2.0 * PI * f64::from(k) / 3.0;
                u * cos(a) + v * sin(a) - r / 2.0
            })
            .fold(f64::NEG_INFINITY, f64::max),
        5 => box_sdf(u, v, r, stroke).min(box_sdf(u, v, stroke, r)),
        6 => {
            let b = r * style.aspect;
            (sqrt(sq(u / r) + sq(v / b)) - 1.0) * b
        }
        7 => len - r * (0.72 + 0.28 * cos(style.lobes * atan2(v, u))),
        8 => box_sdf(u, v - r / 2.0, r, stroke / 2.0).min(box_sdf(u, v + r / 2.0, r, stroke / 2.0)),
        _ => (len - r).max(-(sqrt(sq(u - r * 0.5) + v * v) - r * 0.85)),
    }
}

fn render<R: Rng + ?Sized>(style: &ClassStyle, side: usize, domain: Domain, rng: &mut R) -> Vec<u8> {
    let s = side as f64;
    let cx = s / 2.0 + rng.random_range(-0.08..0.08) * s;
    let cy = s / 2.0 + rng.random_range(-0.08..0.08) * s;
    let r = style.radius * rng.random_range(0.85..1.15);
    let rot = style.rotation + rng.random_range(-0.35..0.35);
    let (cr, sr) = (cos(rot), sin(rot));
    let fg = (style.fg + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0);
    let bg = (style.bg + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0);
    let grad_amp = rng.random_range(0.0..0.10);
    let grad_dir = rng.random_range(0.0..2.0 * PI);
    let phase = rng.random_range(0.0..2.0 * PI);
    let (noise, invert) = match domain {
        Domain::Standard => (0.06, false),
        Domain::Shifted => (0.10, true),
    };
    let (tc, ts) = (cos(style.tex_angle), sin(style.tex_angle));

    let mut px = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let u = cr * dx + sr * dy;
            let v = -sr * dx + cr * dy;
            let mask = (0.5 - shape_sdf(style, u, v, r)).clamp(0.0, 1.0);
            let t = 2.0 * PI * style.tex_freq * (u * tc + v * ts) + phase;
            let texture = match domain {
                Domain::Standard => sin(t),
                Domain::Shifted => {
                    let t2 = 2.0 * PI * style.tex_freq * (-u * ts + v * tc) + phase;
                    if sin(t) * sin(t2) >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            let fill = fg * (1.0 - style.tex_amp / 2.0 + style.tex_amp / 2.0 * texture);
            let back = bg + grad_amp * ((dx * cos(grad_dir) + dy * sin(grad_dir)) / s);
            let n: f64 = StandardNormal.sample(rng);
            let mut val = back + mask * (fill - back) + noise * n;
            if invert {
                val = 1.0 - val;
            }
            px.push((val.clamp(0.0, 1.0) * 255.0 + 0.5) as u8);
        }
    }
    px
}

/// Deterministic procedural dataset; a pure function of the configuration.
pub fn synth_generate_with(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let dims = ImageDims::new(cfg.image_size, cfg.image_size, 1)?;
    let domain_label = match cfg.domain {
        Domain::Standard => "synth-class",
        Domain::Shifted => "synth-class-shifted",
    };
    let mut samples = Vec::with_capacity(cfg.n_classes * cfg.per_class);
    for class in 0..cfg.n_classes {
        let mut class_rng = rng::stream(cfg.seed, domain_label, class as u64);
        let style = ClassStyle::draw(&mut class_rng, cfg.image_size as f64);
        for i in 0..cfg.per_class {
            let id = (class * cfg.per_class + i) as u64;
            let mut inst_rng = rng::stream(cfg.seed, "synth-instance", id);
            samples.push(ImageSample {
                pixels: render(&style, cfg.image_size, cfg.domain, &mut inst_rng),
                label: class,
                source_id: id,
            });
        }
    }
    Dataset::new(dims, cfg.n_classes, samples)
}

/// Standard-domain corpus of `n_classes x per_class` square grayscale images.
pub fn synth_generate(seed: u64, n_classes: usize, per_class: usize, image_size: usize) -> Result<Dataset> {
    synth_generate_with(&SynthConfig::new(seed, n_classes, per_class, image_size))
}
