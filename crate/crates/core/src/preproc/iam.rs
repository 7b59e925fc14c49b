use super::{GrayImage, PreprocError};

/// Otsu's threshold. Returns `t` such that ink pixels are those with value
/// `< t`; `None` for uniform images. On a plateau of equally good splits the
/// middle of the plateau is used.
pub fn otsu_threshold(img: &GrayImage) -> Option<u8> {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    let total = img.data().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let mut best = -1.0f64;
    let (mut first, mut last) = (0usize, 0usize);
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    for k in 0..255 {
        w0 += hist[k] as f64;
        sum0 += k as f64 * hist[k] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        // relative tolerance so plateaus are detected despite rounding
        if between > best * (1.0 + 1e-12) {
            best = between;
            first = k;
            last = k;
        } else if (between - best).abs() <= best * 1e-12 {
            last = k;
        }
    }
    if best <= 0.0 {
        return None;
    }
    Some(((first + last) / 2 + 1) as u8)
}

pub fn median(img: &GrayImage) -> u8 {
    let mut hist = [0usize; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    let half = img.data().len().div_ceil(2);
    let mut acc = 0;
    for (v, &c) in hist.iter().enumerate() {
        acc += c;
        if acc >= half {
            return v as u8;
        }
    }
    255
}

/// Fraction of pixels below the Otsu threshold; 0 for uniform images.
pub fn ink_fraction(img: &GrayImage) -> f64 {
    match otsu_threshold(img) {
        Some(t) => img.data().iter().filter(|&&v| v < t).count() as f64 / img.data().len() as f64,
        None => 0.0,
    }
}

fn stretch_contrast(img: &GrayImage) -> Result<GrayImage, PreprocError> {
    let lo = *img.data().iter().min().expect("non-empty");
    let hi = *img.data().iter().max().expect("non-empty");
    if lo == hi {
        return Err(PreprocError::NoInk);
    }
    let span = (hi - lo) as f64;
    let data = img
        .data()
        .iter()
        .map(|&v| ((v - lo) as f64 * 255.0 / span).round() as u8)
        .collect();
    GrayImage::new(img.width(), img.height(), data)
}

fn ink_bbox(img: &GrayImage, threshold: u8) -> Option<(u32, u32, u32, u32)> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) < threshold {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0 != u32::MAX).then_some((x0, y0, x1, y1))
}

/// One pass of a 3×3 minimum filter, which thickens dark strokes.
fn thicken(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let mut m = 255u8;
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && nx < w && ny < h {
                    m = m.min(img.get(nx as u32, ny as u32));
                }
            }
        }
        m
    })
}

const CROP_MARGIN: u32 = 2;

/// Converts an arbitrary word crop towards the look of the training corpus:
/// full-range contrast stretch, tight crop around the ink with a 2 pixel
/// margin, then one thickening pass.
pub fn to_iam_style(img: &GrayImage) -> Result<GrayImage, PreprocError> {
    let stretched = stretch_contrast(img)?;
    let t = otsu_threshold(&stretched).ok_or(PreprocError::NoInk)?;
    let (x0, y0, x1, y1) = ink_bbox(&stretched, t).ok_or(PreprocError::NoInk)?;
    let cx0 = x0.saturating_sub(CROP_MARGIN);
    let cy0 = y0.saturating_sub(CROP_MARGIN);
    let cx1 = (x1 + CROP_MARGIN).min(stretched.width() - 1);
    let cy1 = (y1 + CROP_MARGIN).min(stretched.height() - 1);
    let cropped = stretched
        .crop(cx0 as i64, cy0 as i64, (cx1 - cx0 + 1) as i64, (cy1 - cy0 + 1) as i64)
        .expect("bbox lies inside the image");
    Ok(thicken(&cropped))
}
