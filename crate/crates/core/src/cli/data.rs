//! File formats read by the batch commands.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::CliError;
use crate::preproc::{damaged_placeholder, fit_to_canvas, normalize, CanvasSpec, GrayImage, PreprocError};
use crate::recognizer::{prepare_word, Tensor};

#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub input: Tensor<f32>,
    pub text: String,
    /// The file could not be decoded and was replaced by the placeholder.
    pub damaged: bool,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

/// Reads a training manifest: either `filename<TAB>text` rows or the six
/// column dataset manifest (`filename, x, y, w, h, text`). Image paths are
/// relative to the manifest's directory.
pub fn load_training_set(manifest: &Path, canvas: &CanvasSpec) -> Result<Vec<LabeledImage>, CliError> {
    let text = read(manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let (file, label) = match fields.len() {
            2 => (fields[0], fields[1]),
            6 => (fields[0], fields[5]),
            k => {
                return Err(CliError::Input(format!(
                    "{} line {}: expected 2 or 6 tab-separated fields, found {k}",
                    manifest.display(),
                    n + 1
                )))
            }
        };
        let path = dir.join(file);
        let (img, damaged) = match GrayImage::open(&path) {
            Ok(img) => (img, false),
            Err(PreprocError::Io { .. }) => {
                return Err(CliError::Input(format!("image not found: {}", path.display())));
            }
            Err(e) => {
                log::warn!("{}: {e}; using placeholder", path.display());
                (damaged_placeholder(canvas), true)
            }
        };
        out.push(LabeledImage {
            input: word_input(&img, canvas)?,
            text: label.to_string(),
            damaged,
        });
    }
    Ok(out)
}

/// Network input for a training image; inkless images are fitted and
/// standardised without the ink-dependent steps.
pub fn word_input(img: &GrayImage, canvas: &CanvasSpec) -> Result<Tensor<f32>, CliError> {
    match prepare_word(img, canvas) {
        Ok(p) => Ok(p.input),
        Err(PreprocError::NoInk) => Ok(normalize(&fit_to_canvas(img, canvas))),
        Err(e) => Err(CliError::Input(e.to_string())),
    }
}

/// Seeded shuffle then a 95:5 split; at least one validation item once there
/// are two or more.
pub fn split_train_val<T>(mut items: Vec<T>, seed: u64) -> (Vec<T>, Vec<T>) {
    let n = items.len();
    let n_val = if n >= 2 {
        ((n as f64 * 0.05).round() as usize).max(1)
    } else {
        0
    };
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = items.split_off(n - n_val);
    (items, val)
}

/// Reads `(id, text)` rows from a two column file, a dataset manifest (id =
/// filename) or an annotation table (id = box id).
pub fn read_eval_tsv(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = read(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let row = match f.len() {
            2 => (f[0], f[1]),
            6 => (f[0], f[5]),
            7 => (f[1], f[6]),
            k => {
                return Err(CliError::Input(format!(
                    "{} line {}: expected 2, 6 or 7 tab-separated fields, found {k}",
                    path.display(),
                    n + 1
                )))
            }
        };
        rows.push((row.0.to_string(), row.1.to_string()));
    }
    Ok(rows)
}
