use serde::{Deserialize, Serialize};

use super::DetectError;
use crate::archive::Archive;
use crate::recognizer::Tensor;

/// Output stride of the detector maps in page pixels.
pub const STRIDE: usize = 4;

/// Per-cell text probability and RBOX geometry on the stride-4 grid.
///
/// `geometry` is laid out channel-major: `[5][rows][cols]` holding
/// `d_top, d_right, d_bottom, d_left, theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGeoMaps {
    rows: usize,
    cols: usize,
    score: Vec<f32>,
    geometry: Vec<f32>,
}

impl ScoreGeoMaps {
    pub fn new(rows: usize, cols: usize, score: Vec<f32>, geometry: Vec<f32>) -> Result<Self, DetectError> {
        if rows == 0 || cols == 0 {
            return Err(DetectError::InvalidMaps("empty grid".into()));
        }
        if score.len() != rows * cols || geometry.len() != 5 * rows * cols {
            return Err(DetectError::InvalidMaps(format!(
                "grid {rows}x{cols} needs {} scores and {} geometry values, got {} and {}",
                rows * cols,
                5 * rows * cols,
                score.len(),
                geometry.len()
            )));
        }
        if let Some(s) = score.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(DetectError::InvalidMaps(format!("score {s} outside [0, 1]")));
        }
        let n = rows * cols;
        if let Some(d) = geometry[..4 * n].iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return Err(DetectError::InvalidMaps(format!("negative or non-finite distance {d}")));
        }
        if geometry[4 * n..].iter().any(|t| !t.is_finite()) {
            return Err(DetectError::InvalidMaps("non-finite angle".into()));
        }
        Ok(ScoreGeoMaps {
            rows,
            cols,
            score,
            geometry,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ScoreGeoMaps {
            rows,
            cols,
            score: vec![0.0; rows * cols],
            geometry: vec![0.0; 5 * rows * cols],
        }
    }

    /// Sets one cell; distances are `(top, right, bottom, left)`.
    pub fn set_cell(&mut self, row: usize, col: usize, score: f32, d: [f32; 4], theta: f32) {
        let n = self.rows * self.cols;
        let i = row * self.cols + col;
        self.score[i] = score;
        for (c, v) in d.iter().enumerate() {
            self.geometry[c * n + i] = *v;
        }
        self.geometry[4 * n + i] = theta;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn score(&self, row: usize, col: usize) -> f32 {
        self.score[row * self.cols + col]
    }

    /// `([top, right, bottom, left], theta)` at a cell.
    pub fn geometry(&self, row: usize, col: usize) -> ([f32; 4], f32) {
        let n = self.rows * self.cols;
        let i = row * self.cols + col;
        (
            [
                self.geometry[i],
                self.geometry[n + i],
                self.geometry[2 * n + i],
                self.geometry[3 * n + i],
            ],
            self.geometry[4 * n + i],
        )
    }

    /// Reads the `score` (`[rows, cols]` or `[1, rows, cols]`) and `geometry`
    /// (`[5, rows, cols]`) tensors from an archive.
    pub fn from_archive(archive: &Archive) -> Result<Self, DetectError> {
        let score = archive.require("score")?;
        let geometry = archive.require("geometry")?;
        let (rows, cols) = match score.dims() {
            [r, c] | [1, r, c] => (*r, *c),
            d => return Err(DetectError::InvalidMaps(format!("score dims {d:?}"))),
        };
        if geometry.dims() != [5, rows, cols] {
            return Err(DetectError::InvalidMaps(format!(
                "geometry dims {:?}, expected [5, {rows}, {cols}]",
                geometry.dims()
            )));
        }
        Self::new(rows, cols, score.data().to_vec(), geometry.data().to_vec())
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        a.push(
            "score",
            Tensor::from_vec(&[self.rows, self.cols], self.score.clone()).expect("consistent"),
        );
        a.push(
            "geometry",
            Tensor::from_vec(&[5, self.rows, self.cols], self.geometry.clone()).expect("consistent"),
        );
        a
    }
}

/// A scored, possibly rotated word box in page pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    /// Radians; positive rotates the box's x axis towards +y (image down).
    pub angle: f64,
    pub score: f64,
}

impl RotatedBox {
    pub fn axis_aligned(x: f64, y: f64, w: f64, h: f64, score: f64) -> Self {
        RotatedBox {
            cx: x + w / 2.0,
            cy: y + h / 2.0,
            w,
            h,
            angle: 0.0,
            score,
        }
    }

    /// Corners in order top-left, top-right, bottom-right, bottom-left of the
    /// unrotated frame.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)].map(|(u, v)| (self.cx + c * u - s * v, self.cy + s * u + c * v))
    }

    /// Axis-aligned envelope `(x_min, y_min, x_max, y_max)`.
    pub fn envelope(&self) -> (f64, f64, f64, f64) {
        if self.angle == 0.0 {
            let (hw, hh) = (self.w / 2.0, self.h / 2.0);
            return (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh);
        }
        let cs = self.corners();
        let xs = cs.iter().map(|p| p.0);
        let ys = cs.iter().map(|p| p.1);
        (
            xs.clone().fold(f64::INFINITY, f64::min),
            ys.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
            ys.fold(f64::NEG_INFINITY, f64::max),
        )
    }

    pub fn scaled(&self, factor: f64) -> Self {
        RotatedBox {
            cx: self.cx * factor,
            cy: self.cy * factor,
            w: self.w * factor,
            h: self.h * factor,
            ..*self
        }
    }
}

/// Reconstructs one box per cell whose score reaches `score_threshold`.
///
/// The cell at `(row, col)` anchors at page point `(4·col, 4·row)`. The four
/// distances are measured along the box axes rotated by `theta` about that
/// anchor. Degenerate cells (zero width or height) are skipped.
pub fn decode_geometry(maps: &ScoreGeoMaps, score_threshold: f32) -> Vec<RotatedBox> {
    let mut out = Vec::new();
    for row in 0..maps.rows() {
        for col in 0..maps.cols() {
            let score = maps.score(row, col);
            if score < score_threshold {
                continue;
            }
            let ([top, right, bottom, left], theta) = maps.geometry(row, col);
            let [top, right, bottom, left] = [top, right, bottom, left].map(f64::from);
            let (w, h) = (left + right, top + bottom);
            if w <= 0.0 || h <= 0.0 {
                continue;
            }
            let (px, py) = ((STRIDE * col) as f64, (STRIDE * row) as f64);
            // box centre relative to the anchor in the box frame
            let u = (right - left) / 2.0;
            let v = (bottom - top) / 2.0;
            let (c, s) = ((theta as f64).cos(), (theta as f64).sin());
            out.push(RotatedBox {
                cx: px + c * u - s * v,
                cy: py + s * u + c * v,
                w,
                h,
                angle: theta as f64,
                score: score as f64,
            });
        }
    }
    out
}
