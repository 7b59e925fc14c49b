//! Slope and slant removal for word images.
//!
//! Slope: a least-squares line through the lowest ink pixel of the columns
//! that sit at local minima of the lower contour (the points a word rests on),
//! clamped to ±10°. Slant: each shear factor of [`SHEAR_GRID`] is scored by
//! summing the squared run length of every sheared column whose ink forms a
//! single vertical run; the best shear is applied with white fill.

use super::{otsu_threshold, GrayImage};

/// Candidate shear factors, −1.0 to +1.0 in steps of 0.2.
pub const SHEAR_GRID: [f64; 11] = [-1.0, -0.8, -0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

const MAX_SLOPE_DEG: f64 = 10.0;
/// Rotations smaller than this are not worth a resampling pass.
const MIN_SLOPE_DEG: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Deslanted {
    pub image: GrayImage,
    /// Shear factor applied: `x' = x + shear * (y - y_bottom)`.
    pub shear: f64,
    /// Rotation removed before shearing, in degrees.
    pub slope_deg: f64,
}

struct Mask {
    width: usize,
    height: usize,
    on: Vec<bool>,
}

impl Mask {
    fn new(img: &GrayImage, threshold: u8) -> Self {
        Mask {
            width: img.width() as usize,
            height: img.height() as usize,
            on: img.data().iter().map(|&v| v < threshold).collect(),
        }
    }

    fn at(&self, x: usize, y: usize) -> bool {
        self.on[y * self.width + x]
    }

    fn bottom_row(&self) -> Option<usize> {
        (0..self.height).rev().find(|&y| (0..self.width).any(|x| self.at(x, y)))
    }
}

#[inline]
fn shift(alpha: f64, dy: f64) -> f64 {
    alpha * dy
}

/// Sum over sheared columns with a single contiguous ink run of run length².
fn score(mask: &Mask, alpha: f64, y_ref: usize) -> f64 {
    let extra = (alpha.abs() * mask.height as f64).ceil() as usize + 2;
    let offset = extra as i64;
    let cols = mask.width + 2 * extra;
    let mut min_y = vec![usize::MAX; cols];
    let mut max_y = vec![0usize; cols];
    let mut count = vec![0usize; cols];
    for y in 0..mask.height {
        let s = shift(alpha, y as f64 - y_ref as f64).round() as i64;
        for x in 0..mask.width {
            if mask.at(x, y) {
                let c = (x as i64 + s + offset) as usize;
                min_y[c] = min_y[c].min(y);
                max_y[c] = max_y[c].max(y);
                count[c] += 1;
            }
        }
    }
    (0..cols)
        .filter(|&c| count[c] > 0 && max_y[c] - min_y[c] + 1 == count[c])
        .map(|c| (count[c] * count[c]) as f64)
        .sum()
}

/// Contiguous-run score of `img` sheared by `alpha` (ink = below Otsu threshold).
pub fn shear_score(img: &GrayImage, alpha: f64) -> f64 {
    let Some(t) = otsu_threshold(img) else {
        return 0.0;
    };
    let mask = Mask::new(img, t);
    match mask.bottom_row() {
        Some(y_ref) => score(&mask, alpha, y_ref),
        None => 0.0,
    }
}

/// Baseline slope in degrees (positive when the baseline descends to the right
/// in image coordinates), before clamping.
pub fn estimate_slope(img: &GrayImage) -> f64 {
    let Some(t) = otsu_threshold(img) else {
        return 0.0;
    };
    let mask = Mask::new(img, t);
    slope_of(&mask)
}

fn slope_of(mask: &Mask) -> f64 {
    let lowest: Vec<Option<usize>> = (0..mask.width)
        .map(|x| (0..mask.height).rev().find(|&y| mask.at(x, y)))
        .collect();
    let mut pts = Vec::new();
    for x in 0..mask.width {
        let Some(y) = lowest[x] else { continue };
        let left_ok = x == 0 || lowest[x - 1].is_none_or(|l| y >= l);
        let right_ok = x + 1 == mask.width || lowest[x + 1].is_none_or(|r| y >= r);
        if left_ok && right_ok {
            pts.push((x as f64, y as f64));
        }
    }
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxy / sxx).atan().to_degrees()
}

/// Bilinear sample with white outside the image.
fn sample(img: &GrayImage, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (wx, wy) = (x - x0, y - y0);
    let px = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= img.width() as f64 || yi >= img.height() as f64 {
            255.0
        } else {
            img.get(xi as u32, yi as u32) as f64
        }
    };
    let top = px(x0, y0) * (1.0 - wx) + px(x0 + 1.0, y0) * wx;
    let bot = px(x0, y0 + 1.0) * (1.0 - wx) + px(x0 + 1.0, y0 + 1.0) * wx;
    top * (1.0 - wy) + bot * wy
}

/// Rotates by `-deg` about the centre on an enlarged white canvas.
fn rotate(img: &GrayImage, deg: f64) -> GrayImage {
    let th = -deg.to_radians();
    let (c, s) = (th.cos(), th.sin());
    let (w, h) = (img.width() as f64, img.height() as f64);
    let nw = (w * c.abs() + h * s.abs()).ceil().max(1.0);
    let nh = (w * s.abs() + h * c.abs()).ceil().max(1.0);
    let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let (ncx, ncy) = ((nw - 1.0) / 2.0, (nh - 1.0) / 2.0);
    GrayImage::from_fn(nw as u32, nh as u32, |x, y| {
        let dx = x as f64 - ncx;
        let dy = y as f64 - ncy;
        // inverse rotation
        let sx = c * dx + s * dy + cx;
        let sy = -s * dx + c * dy + cy;
        sample(img, sx, sy).round() as u8
    })
}

fn apply_shear(img: &GrayImage, alpha: f64, y_ref: usize) -> GrayImage {
    if alpha == 0.0 {
        return img.clone();
    }
    let h = img.height();
    let shifts: Vec<f64> = (0..h).map(|y| shift(alpha, y as f64 - y_ref as f64)).collect();
    let min_s = shifts.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_s = shifts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let offset = -min_s;
    let nw = img.width() + (max_s - min_s).ceil() as u32;
    GrayImage::from_fn(nw, h, |x, y| {
        let sx = x as f64 - offset - shifts[y as usize];
        let x0 = sx.floor();
        let wx = sx - x0;
        let px = |xi: f64| -> f64 {
            if xi < 0.0 || xi >= img.width() as f64 {
                255.0
            } else {
                img.get(xi as u32, y) as f64
            }
        };
        (px(x0) * (1.0 - wx) + px(x0 + 1.0) * wx).round() as u8
    })
}

pub fn deslant(img: &GrayImage) -> Deslanted {
    let unchanged = || Deslanted {
        image: img.clone(),
        shear: 0.0,
        slope_deg: 0.0,
    };
    let Some(t) = otsu_threshold(img) else {
        return unchanged();
    };
    let mask = Mask::new(img, t);
    if mask.bottom_row().is_none() {
        return unchanged();
    }

    let slope = slope_of(&mask).clamp(-MAX_SLOPE_DEG, MAX_SLOPE_DEG);
    let (leveled, slope_deg) = if slope.abs() < MIN_SLOPE_DEG {
        (img.clone(), 0.0)
    } else {
        (rotate(img, slope), slope)
    };

    let mask = Mask::new(&leveled, t);
    let Some(y_ref) = mask.bottom_row() else {
        return unchanged();
    };
    let mut best = (f64::NEG_INFINITY, 0.0f64);
    for &alpha in &SHEAR_GRID {
        let s = score(&mask, alpha, y_ref);
        let better = s > best.0
            || (s == best.0
                && (alpha.abs() < best.1.abs() || (alpha.abs() == best.1.abs() && alpha > best.1)));
        if better {
            best = (s, alpha);
        }
    }
    Deslanted {
        image: apply_shear(&leveled, best.1, y_ref),
        shear: best.1,
        slope_deg,
    }
}

/// Draws `x' = x + round(alpha * (y - y_ref))` with white fill; used to build
/// slanted fixtures.
pub fn shear_exact(img: &GrayImage, alpha: f64, y_ref: usize) -> GrayImage {
    let h = img.height();
    let shifts: Vec<i64> = (0..h)
        .map(|y| shift(alpha, y as f64 - y_ref as f64).round() as i64)
        .collect();
    let min_s = *shifts.iter().min().unwrap();
    let max_s = *shifts.iter().max().unwrap();
    let nw = img.width() + (max_s - min_s) as u32;
    let mut out = GrayImage::filled(nw, h, 255);
    for y in 0..h {
        for x in 0..img.width() {
            let nx = (x as i64 + shifts[y as usize] - min_s) as u32;
            out.set(nx, y, img.get(x, y));
        }
    }
    out
}
