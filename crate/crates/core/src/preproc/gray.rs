use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use super::PreprocError;

/// 8-bit single-channel raster, row-major. 0 is black ink, 255 white paper.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, PreprocError> {
        if width == 0 || height == 0 {
            return Err(PreprocError::InvalidDimensions { width, height });
        }
        if data.len() != width as usize * height as usize {
            return Err(PreprocError::DataLength {
                expected: width as usize * height as usize,
                actual: data.len(),
            });
        }
        Ok(GrayImage { width, height, data })
    }

    /// Panics on zero dimensions.
    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        GrayImage {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut img = Self::filled(width, height, 0);
        for y in 0..height {
            for x in 0..width {
                img.data[(y * width + x) as usize] = f(x, y);
            }
        }
        img
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.data[(y * self.width + x) as usize] = v;
    }

    /// Region `(x, y, w, h)` intersected with the image. `None` when the
    /// intersection is empty.
    pub fn crop(&self, x: i64, y: i64, w: i64, h: i64) -> Option<GrayImage> {
        let x0 = x.max(0);
        let y0 = y.max(0);
        let x1 = (x + w).min(self.width as i64);
        let y1 = (y + h).min(self.height as i64);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        let (cw, ch) = ((x1 - x0) as u32, (y1 - y0) as u32);
        let mut out = Vec::with_capacity(cw as usize * ch as usize);
        for yy in y0 as u32..y1 as u32 {
            let row = (yy * self.width) as usize;
            out.extend_from_slice(&self.data[row + x0 as usize..row + x1 as usize]);
        }
        Some(GrayImage {
            width: cw,
            height: ch,
            data: out,
        })
    }

    /// Bilinear resampling with pixel-center alignment. Equal dimensions
    /// return an exact copy.
    pub fn resize_bilinear(&self, new_w: u32, new_h: u32) -> GrayImage {
        let new_w = new_w.max(1);
        let new_h = new_h.max(1);
        if new_w == self.width && new_h == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / new_w as f64;
        let sy = self.height as f64 / new_h as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let mut out = vec![0u8; new_w as usize * new_h as usize];
        for oy in 0..new_h {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y0 = fy.floor() as u32;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for ox in 0..new_w {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x0 = fx.floor() as u32;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let top = self.get(x0, y0) as f64 * (1.0 - wx) + self.get(x1, y0) as f64 * wx;
                let bot = self.get(x0, y1) as f64 * (1.0 - wx) + self.get(x1, y1) as f64 * wx;
                out[(oy * new_w + ox) as usize] = (top * (1.0 - wy) + bot * wy).round().clamp(0.0, 255.0) as u8;
            }
        }
        GrayImage {
            width: new_w,
            height: new_h,
            data: out,
        }
    }

    /// Decodes PNG or JPEG bytes. Colour inputs become grayscale through
    /// `0.299 R + 0.587 G + 0.114 B`, rounded to nearest.
    pub fn decode(bytes: &[u8]) -> Result<Self, PreprocError> {
        let format = image::guess_format(bytes).map_err(|e| PreprocError::Decode(e.to_string()))?;
        if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
            return Err(PreprocError::Decode(format!("unsupported image format {format:?}")));
        }
        let dynimg = image::load_from_memory_with_format(bytes, format)
            .map_err(|e| PreprocError::Decode(e.to_string()))?;
        Ok(Self::from_dynamic(&dynimg))
    }

    pub fn open(path: &Path) -> Result<Self, PreprocError> {
        let bytes = std::fs::read(path).map_err(|e| PreprocError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::decode(&bytes)
    }

    fn from_dynamic(img: &DynamicImage) -> Self {
        match img {
            DynamicImage::ImageLuma8(g) => GrayImage {
                width: g.width(),
                height: g.height(),
                data: g.as_raw().clone(),
            },
            other => {
                let rgb = other.to_rgb8();
                let data = rgb
                    .pixels()
                    .map(|p| luma(p.0[0], p.0[1], p.0[2]))
                    .collect();
                GrayImage {
                    width: rgb.width(),
                    height: rgb.height(),
                    data,
                }
            }
        }
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let buf = image::GrayImage::from_raw(self.width, self.height, self.data.clone())
            .expect("dimensions match buffer");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png)
            .expect("PNG encoding into memory cannot fail");
        out.into_inner()
    }

    pub fn save_png(&self, path: &Path) -> Result<(), PreprocError> {
        std::fs::write(path, self.encode_png()).map_err(|e| PreprocError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}
