//! Transcript, annotation table and word-crop dataset exports.

use std::fs;
use std::path::{Path, PathBuf};

use super::{io_err, Project, ProjectError, Status};
use crate::order::OrderConfig;
use crate::preproc::GrayImage;

pub const TRANSCRIPT_FILE: &str = "transcript.txt";
pub const ANNOTATIONS_FILE: &str = "annotations.tsv";
pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub filename: String,
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\t{}\t{}\t{}\n", e.filename, e.x, e.y, e.w, e.h, tsv_field(&e.text)))
            .collect()
    }

    /// Parses the manifest format written by [`Project::export_dataset`].
    pub fn parse(text: &str) -> Result<Self, ProjectError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.splitn(6, '\t').collect();
            let num = |s: &str| {
                s.parse::<i64>()
                    .map_err(|_| ProjectError::Parse(format!("manifest line {}: bad number {s:?}", n + 1)))
            };
            if f.len() != 6 {
                return Err(ProjectError::Parse(format!("manifest line {} needs 6 fields", n + 1)));
            }
            entries.push(ManifestEntry {
                filename: f[0].to_string(),
                x: num(f[1])?,
                y: num(f[2])?,
                w: num(f[3])?,
                h: num(f[4])?,
                text: f[5].to_string(),
            });
        }
        Ok(DatasetManifest { entries })
    }
}

/// Tabs and line breaks would split a row; they become spaces.
fn tsv_field(s: &str) -> String {
    s.chars()
        .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
        .collect()
}

impl Project {
    /// Writes `transcript.txt` (one line per line cluster, words joined by
    /// single spaces) and `annotations.tsv` into `dir`.
    pub fn export_transcript(&self, dir: &Path, cfg: &OrderConfig) -> Result<(PathBuf, PathBuf), ProjectError> {
        if self.status < Status::Recognized {
            return Err(ProjectError::PhaseOrder {
                phase: "export",
                status: self.status,
            });
        }
        let missing: Vec<_> = self
            .page
            .ordered()
            .iter()
            .filter(|b| b.text.is_none())
            .map(|b| b.id)
            .collect();
        if !missing.is_empty() {
            return Err(ProjectError::MissingText(missing));
        }
        let text_of = |id| {
            self.page
                .get(id)
                .ok()
                .and_then(|b| b.text.as_deref())
                .unwrap_or_default()
        };
        let mut transcript = String::new();
        for line in self.lines(cfg) {
            let words: Vec<&str> = line.iter().map(|&id| text_of(id)).collect();
            transcript.push_str(&words.join(" "));
            transcript.push('\n');
        }
        let mut table = String::new();
        for (i, b) in self.page.ordered().iter().enumerate() {
            table.push_str(&format!(
                "{i}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                b.id,
                b.rect.x,
                b.rect.y,
                b.rect.w,
                b.rect.h,
                tsv_field(b.text.as_deref().unwrap_or_default())
            ));
        }
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let tp = dir.join(TRANSCRIPT_FILE);
        let ap = dir.join(ANNOTATIONS_FILE);
        fs::write(&tp, transcript).map_err(|e| io_err(&tp, e))?;
        fs::write(&ap, table).map_err(|e| io_err(&ap, e))?;
        Ok((tp, ap))
    }

    /// Writes `word_<i>.png` crops of the ordered boxes from the original
    /// page image plus `manifest.tsv` into `dir`.
    pub fn export_dataset(&self, image: &GrayImage, dir: &Path) -> Result<DatasetManifest, ProjectError> {
        if self.status != Status::Finalized {
            return Err(ProjectError::PhaseOrder {
                phase: "export a dataset from",
                status: self.status,
            });
        }
        let missing = self.missing_text();
        if !missing.is_empty() {
            return Err(ProjectError::MissingText(missing));
        }
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut manifest = DatasetManifest::default();
        for (i, b) in self.page.ordered().iter().enumerate() {
            let r = b.rect.clamped(image.width(), image.height());
            let crop = image
                .crop(r.x, r.y, r.w, r.h)
                .ok_or_else(|| ProjectError::Validation(format!("box {} lies outside the page", b.id)))?;
            let filename = format!("word_{i}.png");
            crop.save_png(&dir.join(&filename))?;
            manifest.entries.push(ManifestEntry {
                filename,
                x: r.x,
                y: r.y,
                w: r.w,
                h: r.h,
                text: b.text.clone().unwrap_or_default(),
            });
        }
        let mp = dir.join(MANIFEST_FILE);
        fs::write(&mp, manifest.to_tsv()).map_err(|e| io_err(&mp, e))?;
        Ok(manifest)
    }
}
