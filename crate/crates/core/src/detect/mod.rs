//! Word detection post-processing: RBOX geometry decoding and non-maximum
//! suppression over maps produced by a pluggable detector backend.

mod geometry;
mod nms;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{Archive, ArchiveError};
use crate::preproc::{GrayImage, ResizedPage};

pub use geometry::{decode_geometry, RotatedBox, ScoreGeoMaps, STRIDE};
pub use nms::{iou, nms};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("invalid detector maps: {0}")]
    InvalidMaps(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("detector backend failed: {context}")]
    BackendFailure {
        context: String,
        #[source]
        source: Option<Box<dyn std::error::Error + Send + Sync>>,
    },
    #[error("invalid detection config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub score_threshold: f32,
    pub iou_threshold: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            score_threshold: 0.5,
            iou_threshold: 0.4,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if !(0.0..=1.0).contains(&self.score_threshold) || !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(DetectError::InvalidConfig(format!(
                "thresholds must lie in [0, 1], got score {} and iou {}",
                self.score_threshold, self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// Source of score/geometry maps for a resized page.
pub trait DetectorBackend: Send + Sync {
    fn infer(&self, page: &GrayImage) -> Result<ScoreGeoMaps, DetectError>;
}

/// Reads pre-computed maps from an `SGM1` archive on disk.
#[derive(Debug, Clone)]
pub struct ArchiveBackend {
    path: PathBuf,
}

impl ArchiveBackend {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        ArchiveBackend { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl DetectorBackend for ArchiveBackend {
    fn infer(&self, _page: &GrayImage) -> Result<ScoreGeoMaps, DetectError> {
        let archive = Archive::read(&self.path).map_err(|e| DetectError::BackendFailure {
            context: format!("reading maps from {}", self.path.display()),
            source: Some(Box::new(e)),
        })?;
        ScoreGeoMaps::from_archive(&archive)
    }
}

/// Returns fixed maps; for tests and offline tooling.
#[derive(Debug, Clone)]
pub struct StubBackend {
    pub maps: Option<ScoreGeoMaps>,
}

impl DetectorBackend for StubBackend {
    fn infer(&self, _page: &GrayImage) -> Result<ScoreGeoMaps, DetectError> {
        self.maps.clone().ok_or_else(|| DetectError::BackendFailure {
            context: "stub backend has no maps".into(),
            source: None,
        })
    }
}

/// Decode + NMS on a resized page, with boxes mapped back to the source
/// resolution (`source = resized / scale`).
pub fn run_detection(
    page: &ResizedPage,
    backend: &dyn DetectorBackend,
    cfg: &DetectConfig,
) -> Result<Vec<RotatedBox>, DetectError> {
    cfg.validate()?;
    let maps = backend.infer(&page.image)?;
    let boxes = decode_geometry(&maps, cfg.score_threshold);
    let kept = nms(&boxes, cfg.iou_threshold);
    Ok(kept.into_iter().map(|b| b.scaled(1.0 / page.scale)).collect())
}
