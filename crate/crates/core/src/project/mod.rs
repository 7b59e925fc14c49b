//! Annotation sessions: the page, its boxes and order, workflow status,
//! canonical project files and the final exports.

mod export;
mod json;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::detect::RotatedBox;
use crate::lexicon::Dictionary;
use crate::order::{line_runs, BoxId, BoxRecord, OrderConfig, OrderError, OrderedLayout, Page, Rect};
use crate::preproc::{GrayImage, PreprocError};
use crate::recognizer::{recognize_word, CharSet, Decoder, ModelParams, RecognizerError};

pub use export::{DatasetManifest, ManifestEntry, ANNOTATIONS_FILE, MANIFEST_FILE, TRANSCRIPT_FILE};
pub use json::{canonical_f64, to_canonical_string};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse project: {0}")]
    Parse(String),
    #[error("invalid project: {0}")]
    Validation(String),
    #[error("unsupported project version {0}")]
    UnsupportedVersion(String),
    #[error("boxes without text: {}", format_ids(.0))]
    MissingText(Vec<BoxId>),
    #[error("cannot {phase} a project in status {status}")]
    PhaseOrder { phase: &'static str, status: Status },
    #[error(transparent)]
    Order(#[from] OrderError),
    #[error(transparent)]
    Recognizer(#[from] RecognizerError),
    #[error(transparent)]
    Image(#[from] PreprocError),
}

fn format_ids(ids: &[BoxId]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
}

pub(crate) fn io_err(path: &Path, e: impl fmt::Display) -> ProjectError {
    ProjectError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Workflow position. Geometric edits send a project back to `Edited`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Detected,
    Edited,
    Serialized,
    Recognized,
    Finalized,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Detected => "detected",
            Status::Edited => "edited",
            Status::Serialized => "serialized",
            Status::Recognized => "recognized",
            Status::Finalized => "finalized",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            Status::Detected,
            Status::Edited,
            Status::Serialized,
            Status::Recognized,
            Status::Finalized,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageInfo {
    /// Path of the page image as given by the user.
    pub source: String,
    /// Original dimensions; box coordinates live in this frame.
    pub width: u32,
    pub height: u32,
    /// Factor from original to the resized detection frame.
    pub scale: f64,
}

/// A user edit, tagged by `op` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Edit {
    Add { x: i64, y: i64, w: i64, h: i64 },
    Delete { id: BoxId },
    Update { id: BoxId, x: i64, y: i64, w: i64, h: i64 },
    Swap { a: BoxId, b: BoxId },
    SetText { id: BoxId, text: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum EditOutcome {
    Added(BoxRecord),
    Updated(BoxRecord),
    Done,
}

/// Result of recognising one ordered box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordResult {
    pub id: BoxId,
    pub text: String,
    /// Model log-probability of the raw decoding; absent for human-edited boxes.
    pub log_prob: Option<f64>,
    pub no_ink: bool,
    /// The box kept its human transcript.
    pub kept_edit: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct RecognizeOptions<'a> {
    pub decoder: Decoder,
    pub dictionary: Option<&'a Dictionary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Project {
    pub info: PageInfo,
    page: Page,
    status: Status,
}

/// An empty page whose reading order has not been computed; matches what a
/// saved project below `serialized` loads back as.
fn unordered_page(info: &PageInfo) -> Page {
    Page::from_parts(info.width, info.height, Vec::new(), OrderedLayout::default(), true)
}

impl Project {
    /// Empty project; status `edited` since no detector ran.
    pub fn new(info: PageInfo) -> Self {
        Project {
            page: unordered_page(&info),
            info,
            status: Status::Edited,
        }
    }

    /// Project seeded with detector boxes (in original page coordinates),
    /// in the order given.
    pub fn from_detections(info: PageInfo, boxes: &[RotatedBox]) -> Self {
        let mut page = unordered_page(&info);
        for b in boxes {
            let (x0, y0, x1, y1) = b.envelope();
            let (x, y) = (x0.round() as i64, y0.round() as i64);
            let rect = Rect::new(x, y, x1.round() as i64 - x, y1.round() as i64 - y);
            // boxes that clamp to nothing are dropped
            let _ = page.insert_detected(rect, b.angle, b.score);
        }
        Project {
            info,
            page,
            status: Status::Detected,
        }
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn page(&self) -> &Page {
        &self.page
    }

    pub fn boxes(&self) -> &[BoxRecord] {
        self.page.boxes()
    }

    pub fn layout(&self) -> &OrderedLayout {
        self.page.layout()
    }

    pub fn apply_edit(&mut self, edit: &Edit) -> Result<EditOutcome, ProjectError> {
        let geometric = matches!(edit, Edit::Add { .. } | Edit::Delete { .. } | Edit::Update { .. });
        let out = match edit {
            Edit::Add { x, y, w, h } => EditOutcome::Added(self.page.add_box(Rect::new(*x, *y, *w, *h))?),
            Edit::Delete { id } => {
                self.page.delete_box(*id)?;
                EditOutcome::Done
            }
            Edit::Update { id, x, y, w, h } => {
                EditOutcome::Updated(self.page.update_box(*id, Rect::new(*x, *y, *w, *h))?)
            }
            Edit::Swap { a, b } => {
                self.page.swap(*a, *b)?;
                EditOutcome::Done
            }
            Edit::SetText { id, text } => {
                self.page.set_text(*id, text.clone())?;
                EditOutcome::Done
            }
        };
        if geometric {
            self.status = Status::Edited;
        } else if self.status == Status::Finalized {
            self.status = Status::Recognized;
        }
        Ok(out)
    }

    /// Recomputes the reading order and returns it split into lines.
    pub fn serialize(&mut self, cfg: &OrderConfig) -> Result<Vec<Vec<BoxId>>, ProjectError> {
        cfg.validate()?;
        self.page.serialize(cfg);
        self.status = Status::Serialized;
        Ok(self.lines(cfg))
    }

    /// The current order split at line-cluster boundaries.
    pub fn lines(&self, cfg: &OrderConfig) -> Vec<Vec<BoxId>> {
        line_runs(self.page.boxes(), self.page.layout(), cfg)
    }

    fn require_serialized(&self, phase: &'static str) -> Result<(), ProjectError> {
        if self.status < Status::Serialized || self.page.layout_stale() {
            return Err(ProjectError::PhaseOrder {
                phase,
                status: self.status,
            });
        }
        Ok(())
    }

    /// Recognises every ordered box from the original page image. Human
    /// edited transcripts are kept; machine output is spell-corrected when a
    /// dictionary is given.
    pub fn recognize(
        &mut self,
        image: &GrayImage,
        params: &ModelParams<f32>,
        charset: &CharSet,
        opts: RecognizeOptions<'_>,
    ) -> Result<Vec<WordResult>, ProjectError> {
        self.require_serialized("recognize")?;
        self.check_image(image)?;
        let ordered: Vec<BoxRecord> = self.page.ordered().into_iter().cloned().collect();
        let mut results = Vec::with_capacity(ordered.len());
        for b in ordered {
            if b.text_edited {
                results.push(WordResult {
                    id: b.id,
                    text: b.text.clone().unwrap_or_default(),
                    log_prob: None,
                    no_ink: false,
                    kept_edit: true,
                });
                continue;
            }
            let crop = image
                .crop(b.rect.x, b.rect.y, b.rect.w, b.rect.h)
                .ok_or_else(|| ProjectError::Validation(format!("box {} lies outside the page", b.id)))?;
            let r = recognize_word(&crop, params, charset, opts.decoder)?;
            let text = match opts.dictionary {
                Some(d) if !d.is_empty() => d.correct(&r.text),
                _ => r.text.clone(),
            };
            self.page.set_recognized(b.id, text.clone())?;
            results.push(WordResult {
                id: b.id,
                text,
                log_prob: Some(r.log_prob),
                no_ink: r.no_ink,
                kept_edit: false,
            });
        }
        self.status = Status::Recognized;
        Ok(results)
    }

    fn check_image(&self, image: &GrayImage) -> Result<(), ProjectError> {
        if (image.width(), image.height()) != (self.info.width, self.info.height) {
            return Err(ProjectError::Validation(format!(
                "page image is {}x{} but the project expects {}x{}",
                image.width(),
                image.height(),
                self.info.width,
                self.info.height
            )));
        }
        Ok(())
    }

    /// Ordered boxes whose text is absent or empty.
    pub fn missing_text(&self) -> Vec<BoxId> {
        self.page
            .ordered()
            .iter()
            .filter(|b| b.text.as_deref().is_none_or(str::is_empty))
            .map(|b| b.id)
            .collect()
    }

    /// Writes the transcript files into `out_dir` and the word dataset into
    /// `out_dir/dataset`, then marks the project finalized. Re-running on an
    /// unchanged project rewrites identical bytes.
    pub fn finalize(&mut self, image: &GrayImage, out_dir: &Path, cfg: &OrderConfig) -> Result<Finalized, ProjectError> {
        if self.status < Status::Recognized || self.page.layout_stale() {
            return Err(ProjectError::PhaseOrder {
                phase: "finalize",
                status: self.status,
            });
        }
        let missing = self.missing_text();
        if !missing.is_empty() {
            return Err(ProjectError::MissingText(missing));
        }
        self.check_image(image)?;
        self.export_transcript(out_dir, cfg)?;
        let prev = self.status;
        self.status = Status::Finalized;
        let dataset_dir = out_dir.join("dataset");
        match self.export_dataset(image, &dataset_dir) {
            Ok(manifest) => Ok(Finalized {
                transcript_path: out_dir.join(TRANSCRIPT_FILE),
                dataset_dir,
                manifest,
            }),
            Err(e) => {
                self.status = prev;
                Err(e)
            }
        }
    }

    pub fn to_json(&self) -> Value {
        let boxes: Vec<Value> = self
            .page
            .boxes()
            .iter()
            .map(|b| {
                let mut m = Map::new();
                m.insert("id".into(), json!(b.id.0));
                m.insert("x".into(), json!(b.rect.x));
                m.insert("y".into(), json!(b.rect.y));
                m.insert("w".into(), json!(b.rect.w));
                m.insert("h".into(), json!(b.rect.h));
                m.insert("angle".into(), json!(b.angle));
                if let Some(s) = b.score {
                    m.insert("score".into(), json!(s));
                }
                if let Some(t) = &b.text {
                    m.insert("text".into(), json!(t));
                }
                m.insert("text_edited".into(), json!(b.text_edited));
                Value::Object(m)
            })
            .collect();
        json!({
            "version": FORMAT_VERSION,
            "page": {
                "source": self.info.source,
                "width": self.info.width,
                "height": self.info.height,
                "scale": self.info.scale,
            },
            "boxes": boxes,
            "order": self.page.layout().sequence().iter().map(|id| id.0).collect::<Vec<_>>(),
            "status": self.status.as_str(),
        })
    }

    pub fn to_canonical_string(&self) -> String {
        to_canonical_string(&self.to_json())
    }

    /// The project as it reads back from its canonical file (floats rounded
    /// to six decimals).
    pub fn canonicalized(&self) -> Project {
        let mut p = self.clone();
        let boxes = p
            .page
            .boxes()
            .iter()
            .map(|b| BoxRecord {
                angle: canonical_f64(b.angle),
                score: b.score.map(canonical_f64),
                ..b.clone()
            })
            .collect();
        p.info.scale = canonical_f64(p.info.scale);
        p.page = Page::from_parts(
            p.info.width,
            p.info.height,
            boxes,
            p.page.layout().clone(),
            p.page.layout_stale(),
        );
        p
    }

    pub fn from_json(v: &Value) -> Result<Project, ProjectError> {
        let obj = v
            .as_object()
            .ok_or_else(|| ProjectError::Parse("top level must be an object".into()))?;
        let version = obj
            .get("version")
            .ok_or_else(|| ProjectError::Parse("missing field `version`".into()))?;
        let version_ok = match version {
            Value::Number(n) => n.as_u64() == Some(FORMAT_VERSION),
            Value::String(s) => s == &FORMAT_VERSION.to_string(),
            _ => false,
        };
        if !version_ok {
            let shown = match version {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            return Err(ProjectError::UnsupportedVersion(shown));
        }
        let file: ProjectFile =
            serde_json::from_value(v.clone()).map_err(|e| ProjectError::Parse(e.to_string()))?;
        file.into_project()
    }

    pub fn from_str(text: &str) -> Result<Project, ProjectError> {
        let v: Value = serde_json::from_str(text).map_err(|e| ProjectError::Parse(e.to_string()))?;
        Self::from_json(&v)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProjectError> {
        std::fs::write(path, self.to_canonical_string()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Project, ProjectError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_str(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finalized {
    pub transcript_path: std::path::PathBuf,
    pub dataset_dir: std::path::PathBuf,
    pub manifest: DatasetManifest,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxFile {
    id: u64,
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    angle: f64,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    text: Option<String>,
    text_edited: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectFile {
    #[allow(dead_code)]
    version: Value,
    page: PageInfo,
    boxes: Vec<BoxFile>,
    order: Vec<u64>,
    status: String,
}

impl ProjectFile {
    fn into_project(self) -> Result<Project, ProjectError> {
        let invalid = |m: String| Err(ProjectError::Validation(m));
        let status = Status::parse(&self.status).ok_or_else(|| ProjectError::Validation(format!("unknown status {:?}", self.status)))?;
        if self.page.width == 0 || self.page.height == 0 {
            return invalid("page dimensions must be positive".into());
        }
        if !(self.page.scale.is_finite() && self.page.scale > 0.0) {
            return invalid(format!("page scale {} must be positive", self.page.scale));
        }
        let mut boxes = Vec::with_capacity(self.boxes.len());
        for b in self.boxes {
            if b.w <= 0 || b.h <= 0 {
                return invalid(format!("box {} has non-positive size", b.id));
            }
            if !b.angle.is_finite() {
                return invalid(format!("box {} has a non-finite angle", b.id));
            }
            if let Some(s) = b.score {
                if !(0.0..=1.0).contains(&s) {
                    return invalid(format!("box {} score {s} outside [0, 1]", b.id));
                }
            }
            boxes.push(BoxRecord {
                id: BoxId(b.id),
                rect: Rect::new(b.x, b.y, b.w, b.h),
                angle: b.angle,
                score: b.score,
                text: b.text,
                text_edited: b.text_edited,
            });
        }
        let mut ids: Vec<BoxId> = boxes.iter().map(|b| b.id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return invalid("duplicate box ids".into());
        }
        let layout = OrderedLayout::new(self.order.into_iter().map(BoxId).collect());
        if !layout.is_permutation_of(&ids) {
            return invalid("order is not a permutation of the box ids".into());
        }
        let stale = status < Status::Serialized;
        Ok(Project {
            page: Page::from_parts(self.page.width, self.page.height, boxes, layout, stale),
            info: self.page,
            status,
        })
    }
}
