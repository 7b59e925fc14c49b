//! Image transforms applied to pages and word crops before detection and
//! recognition.

mod deslant;
mod gray;
mod iam;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use deslant::{deslant, estimate_slope, shear_exact, shear_score, Deslanted, SHEAR_GRID};
pub use gray::{luma, GrayImage};
pub use iam::{ink_fraction, median, otsu_threshold, to_iam_style};

use crate::recognizer::Tensor;

/// Longest side targets for page resizing (720p landscape frame).
pub const PAGE_MAX_WIDTH: u32 = 1280;
pub const PAGE_MAX_HEIGHT: u32 = 720;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocError {
    #[error("image contains no ink")]
    NoInk,
    #[error("invalid image dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanvasSpec {
    pub width: u32,
    pub height: u32,
    pub fill: u8,
}

impl Default for CanvasSpec {
    fn default() -> Self {
        CanvasSpec {
            width: 128,
            height: 32,
            fill: 255,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Width scale factors `(low, high)`.
    pub stretch_range: (f64, f64),
    pub max_shift: u32,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            stretch_range: (0.75, 1.25),
            max_shift: 3,
            noise_sigma: 10.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn identity(seed: u64) -> Self {
        AugmentConfig {
            stretch_range: (1.0, 1.0),
            max_shift: 0,
            noise_sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PreprocError> {
        let (lo, hi) = self.stretch_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(PreprocError::InvalidConfig(format!(
                "stretch_range {lo}..{hi} must satisfy 0 < low <= high"
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(PreprocError::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// A page scaled to fit the 1280×720 frame, with the factor that maps page
/// coordinates back to the source (`source = resized / scale`).
#[derive(Debug, Clone, PartialEq)]
pub struct ResizedPage {
    pub image: GrayImage,
    pub scale: f64,
}

pub fn resize_page(img: &GrayImage) -> ResizedPage {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let scale = (PAGE_MAX_WIDTH as f64 / w).min(PAGE_MAX_HEIGHT as f64 / h);
    let nw = ((w * scale).round() as u32).clamp(1, PAGE_MAX_WIDTH);
    let nh = ((h * scale).round() as u32).clamp(1, PAGE_MAX_HEIGHT);
    ResizedPage {
        image: img.resize_bilinear(nw, nh),
        scale,
    }
}

/// Dimensions after scaling `(w, h)` by `min(cw / w, ch / h)`, floored and
/// clamped to at least one pixel. Integer arithmetic keeps exact fits exact.
fn scaled_dims(w: u32, h: u32, cw: u32, ch: u32) -> (u32, u32) {
    let (w, h, cw, ch) = (w as u64, h as u64, cw as u64, ch as u64);
    if cw * h <= ch * w {
        (cw as u32, ((h * cw) / w).max(1) as u32)
    } else {
        (((w * ch) / h).max(1) as u32, ch as u32)
    }
}

fn paste(canvas: &mut GrayImage, img: &GrayImage, ox: u32, oy: u32) {
    for y in 0..img.height() {
        let cy = y + oy;
        if cy >= canvas.height() {
            break;
        }
        for x in 0..img.width() {
            let cx = x + ox;
            if cx >= canvas.width() {
                break;
            }
            canvas.set(cx, cy, img.get(x, y));
        }
    }
}

pub fn fit_to_canvas(img: &GrayImage, spec: &CanvasSpec) -> GrayImage {
    fit_with_offset(img, spec, 0, 0)
}

fn fit_with_offset(img: &GrayImage, spec: &CanvasSpec, ox: u32, oy: u32) -> GrayImage {
    let (nw, nh) = scaled_dims(img.width(), img.height(), spec.width, spec.height);
    let scaled = img.resize_bilinear(nw, nh);
    let mut canvas = GrayImage::filled(spec.width, spec.height, spec.fill);
    paste(&mut canvas, &scaled, ox, oy);
    canvas
}

/// Per-image standardisation into a `[height, width]` tensor. Constant
/// images map to all zeros.
pub fn normalize(img: &GrayImage) -> Tensor<f32> {
    let n = img.data().len() as f64;
    let mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = img
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let data = if std == 0.0 {
        vec![0.0; img.data().len()]
    } else {
        img.data()
            .iter()
            .map(|&v| ((v as f64 - mean) / std) as f32)
            .collect()
    };
    Tensor::from_vec(&[img.height() as usize, img.width() as usize], data)
        .expect("image dimensions are positive")
}

/// Random width stretch, canvas fit with random paste offset, and additive
/// Gaussian noise. Deterministic in `cfg.seed`.
pub fn augment(img: &GrayImage, cfg: &AugmentConfig, canvas: &CanvasSpec) -> Result<GrayImage, PreprocError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.stretch_range;
    let factor = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let stretched = if factor == 1.0 {
        img.clone()
    } else {
        let nw = ((img.width() as f64 * factor).round() as u32).max(1);
        img.resize_bilinear(nw, img.height())
    };
    let (dx, dy) = if cfg.max_shift == 0 {
        (0, 0)
    } else {
        (
            rng.random_range(0..=cfg.max_shift),
            rng.random_range(0..=cfg.max_shift),
        )
    };
    let mut out = fit_with_offset(&stretched, canvas, dx, dy);
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
        let data: Vec<u8> = out
            .data()
            .iter()
            .map(|&v| (v as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
            .collect();
        out = GrayImage::new(out.width(), out.height(), data)?;
    }
    Ok(out)
}

/// Stand-in for unreadable training files: an all-black canvas.
pub fn damaged_placeholder(spec: &CanvasSpec) -> GrayImage {
    GrayImage::filled(spec.width.max(1), spec.height.max(1), 0)
}
