//! C ABI over the inkscribe engine.
//!
//! Every function returns an [`IscrStatus`]; on failure a message for the
//! calling thread is available from [`iscr_last_error`]. Handles are opaque
//! and must be released with their `_free` function. Strings returned to the
//! caller are owned by the caller and released with [`iscr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use inkscribe::archive::ArchiveError;
use inkscribe::detect::{nms, RotatedBox};
use inkscribe::lexicon::levenshtein;
use inkscribe::order::{BoxId, OrderConfig};
use inkscribe::preproc::GrayImage;
use inkscribe::project::{Edit, EditOutcome, PageInfo, Project, ProjectError};
use inkscribe::recognizer::{
    beam_decode, ctc_loss, recognize_word, CharSet, Decoder, ModelParams, RecognizerError, Tensor,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IscrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    /// The project is not in a state that allows the operation.
    PhaseOrder = 5,
    MissingText = 6,
    UnknownBox = 7,
    /// Model or charset file is malformed or inconsistent.
    Model = 8,
    /// Label cannot be aligned to the available timesteps.
    InfeasibleLabel = 9,
    BufferTooSmall = 10,
    /// A Rust panic was caught at the boundary.
    Internal = 99,
}

/// Rotated detection box; `angle` in radians.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IscrBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub angle: f64,
    pub score: f64,
}

impl From<IscrBox> for RotatedBox {
    fn from(b: IscrBox) -> Self {
        RotatedBox {
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
            angle: b.angle,
            score: b.score,
        }
    }
}

impl From<RotatedBox> for IscrBox {
    fn from(b: RotatedBox) -> Self {
        IscrBox {
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
            angle: b.angle,
            score: b.score,
        }
    }
}

/// A loaded recognition model with its character set.
pub struct IscrRecognizer {
    params: ModelParams<f32>,
    charset: CharSet,
}

/// An annotation project.
pub struct IscrProject {
    project: Project,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

struct Fail(IscrStatus, String);

impl Fail {
    fn new(status: IscrStatus, msg: impl Into<String>) -> Self {
        Fail(status, msg.into())
    }
}

impl From<RecognizerError> for Fail {
    fn from(e: RecognizerError) -> Self {
        let status = match e {
            RecognizerError::InfeasibleLabel { .. } => IscrStatus::InfeasibleLabel,
            RecognizerError::Io { .. } | RecognizerError::Archive(ArchiveError::Io { .. }) => IscrStatus::Io,
            RecognizerError::ModelFile(_) | RecognizerError::Charset(_) | RecognizerError::Archive(_) => {
                IscrStatus::Model
            }
            _ => IscrStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

impl From<ProjectError> for Fail {
    fn from(e: ProjectError) -> Self {
        let status = match &e {
            ProjectError::Io { .. } => IscrStatus::Io,
            ProjectError::PhaseOrder { .. } => IscrStatus::PhaseOrder,
            ProjectError::MissingText(_) => IscrStatus::MissingText,
            ProjectError::Order(inkscribe::order::OrderError::UnknownId(_)) => IscrStatus::UnknownBox,
            ProjectError::Recognizer(_) => IscrStatus::Model,
            _ => IscrStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

/// Runs `f`, recording any error or panic for [`iscr_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IscrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IscrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            IscrStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail::new(IscrStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::new(IscrStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn project_mut<'a>(p: *mut IscrProject) -> Result<&'a mut Project, Fail> {
    non_null(p, "project")?;
    Ok(&mut (*p).project)
}

unsafe fn logits_arg(logits: *const f32, timesteps: usize, classes: usize) -> Result<Tensor<f32>, Fail> {
    non_null(logits, "logits")?;
    if timesteps == 0 || classes < 2 {
        return Err(Fail::new(IscrStatus::InvalidArgument, "need timesteps >= 1 and classes >= 2"));
    }
    let data = std::slice::from_raw_parts(logits, timesteps * classes).to_vec();
    Ok(Tensor::from_vec(&[timesteps, classes], data)?)
}

/// Message for the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn iscr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn iscr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a model file. `charset_path` may be null for the built-in 79
/// character set.
///
/// # Safety
/// Path arguments must be null or NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn iscr_recognizer_open(
    model_path: *const c_char,
    charset_path: *const c_char,
    out: *mut *mut IscrRecognizer,
) -> IscrStatus {
    guard(|| {
        non_null(out, "out")?;
        let params = ModelParams::load(&PathBuf::from(str_arg(model_path, "model_path")?))?;
        let charset = if charset_path.is_null() {
            CharSet::iam()
        } else {
            CharSet::load(&PathBuf::from(str_arg(charset_path, "charset_path")?))?
        };
        if charset.classes() != params.config.classes {
            return Err(Fail::new(
                IscrStatus::Model,
                format!(
                    "charset defines {} classes, model outputs {}",
                    charset.classes(),
                    params.config.classes
                ),
            ));
        }
        *out = Box::into_raw(Box::new(IscrRecognizer { params, charset }));
        Ok(())
    })
}

/// # Safety
/// `rec` must be null or a handle from [`iscr_recognizer_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn iscr_recognizer_free(rec: *mut IscrRecognizer) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// Recognises one 8-bit grayscale word crop (row-major, `width * height`
/// bytes). `beam_width` 0 selects greedy decoding. On success `*out_text`
/// receives a string to release with [`iscr_string_free`].
///
/// # Safety
/// `pixels` must hold `width * height` bytes; the out pointers must be
/// writable (`out_log_prob` may be null).
#[no_mangle]
pub unsafe extern "C" fn iscr_recognizer_recognize_gray(
    rec: *const IscrRecognizer,
    pixels: *const u8,
    width: u32,
    height: u32,
    beam_width: u32,
    out_text: *mut *mut c_char,
    out_log_prob: *mut f64,
) -> IscrStatus {
    guard(|| {
        non_null(rec, "recognizer")?;
        non_null(pixels, "pixels")?;
        non_null(out_text, "out_text")?;
        let rec = &*rec;
        let n = width as usize * height as usize;
        let data = std::slice::from_raw_parts(pixels, n).to_vec();
        let img = GrayImage::new(width, height, data)
            .map_err(|e| Fail::new(IscrStatus::InvalidArgument, e.to_string()))?;
        let decoder = match beam_width {
            0 => Decoder::Greedy,
            w => Decoder::Beam(w as usize),
        };
        let r = recognize_word(&img, &rec.params, &rec.charset, decoder)?;
        if !out_log_prob.is_null() {
            *out_log_prob = r.log_prob;
        }
        *out_text = CString::new(r.text)
            .map_err(|_| Fail::new(IscrStatus::Internal, "decoded text contains NUL"))?
            .into_raw();
        Ok(())
    })
}

/// CTC negative log-likelihood of `labels` under row-major
/// `timesteps × classes` logits; the blank is the last class.
///
/// # Safety
/// `logits` must hold `timesteps * classes` floats and `labels` `label_len`
/// entries (may be null when `label_len` is 0).
#[no_mangle]
pub unsafe extern "C" fn iscr_ctc_loss(
    logits: *const f32,
    timesteps: usize,
    classes: usize,
    labels: *const u32,
    label_len: usize,
    out_loss: *mut f64,
) -> IscrStatus {
    guard(|| {
        non_null(out_loss, "out_loss")?;
        let t = logits_arg(logits, timesteps, classes)?;
        let label: Vec<usize> = if label_len == 0 {
            Vec::new()
        } else {
            non_null(labels, "labels")?;
            std::slice::from_raw_parts(labels, label_len).iter().map(|&l| l as usize).collect()
        };
        *out_loss = ctc_loss(&t, &label, classes - 1)?.loss;
        Ok(())
    })
}

/// Prefix beam search over row-major logits (blank last). Writes at most
/// `capacity` labels; `*out_len` always receives the full length, and
/// `BufferTooSmall` is returned when it exceeds `capacity`.
///
/// # Safety
/// `logits` must hold `timesteps * classes` floats; `out_labels` must have
/// room for `capacity` entries; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iscr_beam_decode(
    logits: *const f32,
    timesteps: usize,
    classes: usize,
    beam_width: usize,
    out_labels: *mut u32,
    capacity: usize,
    out_len: *mut usize,
    out_log_prob: *mut f64,
) -> IscrStatus {
    guard(|| {
        non_null(out_len, "out_len")?;
        if beam_width == 0 {
            return Err(Fail::new(IscrStatus::InvalidArgument, "beam_width must be >= 1"));
        }
        let t = logits_arg(logits, timesteps, classes)?;
        let r = beam_decode(&t, classes - 1, beam_width);
        *out_len = r.labels.len();
        if !out_log_prob.is_null() {
            *out_log_prob = r.log_prob;
        }
        if r.labels.len() > capacity {
            return Err(Fail::new(IscrStatus::BufferTooSmall, format!("need {} labels", r.labels.len())));
        }
        if !r.labels.is_empty() {
            non_null(out_labels, "out_labels")?;
            for (i, &l) in r.labels.iter().enumerate() {
                *out_labels.add(i) = l as u32;
            }
        }
        Ok(())
    })
}

/// Edit distance in Unicode scalar values.
///
/// # Safety
/// `a` and `b` must be NUL-terminated UTF-8; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iscr_levenshtein(a: *const c_char, b: *const c_char, out: *mut usize) -> IscrStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = levenshtein(str_arg(a, "a")?, str_arg(b, "b")?);
        Ok(())
    })
}

/// Greedy non-maximum suppression. `out` needs room for `n` boxes; the kept
/// count goes to `*out_len`.
///
/// # Safety
/// `boxes` must hold `n` entries (may be null when `n` is 0) and `out` room
/// for `n`.
#[no_mangle]
pub unsafe extern "C" fn iscr_nms(
    boxes: *const IscrBox,
    n: usize,
    iou_threshold: f64,
    out: *mut IscrBox,
    out_len: *mut usize,
) -> IscrStatus {
    guard(|| {
        non_null(out_len, "out_len")?;
        if !(0.0..=1.0).contains(&iou_threshold) {
            return Err(Fail::new(IscrStatus::InvalidArgument, "iou_threshold must lie in [0, 1]"));
        }
        if n == 0 {
            *out_len = 0;
            return Ok(());
        }
        non_null(boxes, "boxes")?;
        non_null(out, "out")?;
        let input: Vec<RotatedBox> = std::slice::from_raw_parts(boxes, n).iter().map(|&b| b.into()).collect();
        let kept = nms(&input, iou_threshold);
        for (i, b) in kept.iter().enumerate() {
            *out.add(i) = (*b).into();
        }
        *out_len = kept.len();
        Ok(())
    })
}

/// Creates an empty project for a page of the given size.
///
/// # Safety
/// `source` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iscr_project_new(
    source: *const c_char,
    width: u32,
    height: u32,
    out: *mut *mut IscrProject,
) -> IscrStatus {
    guard(|| {
        non_null(out, "out")?;
        if width == 0 || height == 0 {
            return Err(Fail::new(IscrStatus::InvalidArgument, "page dimensions must be positive"));
        }
        let project = Project::new(PageInfo {
            source: str_arg(source, "source")?.to_string(),
            width,
            height,
            scale: 1.0,
        });
        *out = Box::into_raw(Box::new(IscrProject { project }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iscr_project_load(path: *const c_char, out: *mut *mut IscrProject) -> IscrStatus {
    guard(|| {
        non_null(out, "out")?;
        let project = Project::load(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(IscrProject { project }));
        Ok(())
    })
}

/// # Safety
/// `project` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn iscr_project_save(project: *const IscrProject, path: *const c_char) -> IscrStatus {
    guard(|| {
        non_null(project, "project")?;
        (*project).project.save(&PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `project` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn iscr_project_free(project: *mut IscrProject) {
    if !project.is_null() {
        drop(Box::from_raw(project));
    }
}

/// Number of boxes on the page.
///
/// # Safety
/// `project` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn iscr_project_box_count(project: *const IscrProject, out: *mut usize) -> IscrStatus {
    guard(|| {
        non_null(project, "project")?;
        non_null(out, "out")?;
        *out = (*project).project.boxes().len();
        Ok(())
    })
}

/// Workflow status as a static lowercase name ("detected" … "finalized").
///
/// # Safety
/// `project` must be a live handle; `out` writable. The string is static.
#[no_mangle]
pub unsafe extern "C" fn iscr_project_status(project: *const IscrProject, out: *mut *const c_char) -> IscrStatus {
    guard(|| {
        non_null(project, "project")?;
        non_null(out, "out")?;
        let name: &'static CStr = match (*project).project.status().as_str() {
            "detected" => c"detected",
            "edited" => c"edited",
            "serialized" => c"serialized",
            "recognized" => c"recognized",
            _ => c"finalized",
        };
        *out = name.as_ptr();
        Ok(())
    })
}

unsafe fn apply(project: *mut IscrProject, edit: Edit) -> Result<EditOutcome, Fail> {
    Ok(project_mut(project)?.apply_edit(&edit)?)
}

/// Adds an axis-aligned box; the new id goes to `*out_id`.
///
/// # Safety
/// `project` must be a live handle; `out_id` writable.
#[no_mangle]
pub unsafe extern "C" fn iscr_project_add_box(
    project: *mut IscrProject,
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    out_id: *mut u64,
) -> IscrStatus {
    guard(|| {
        non_null(out_id, "out_id")?;
        match apply(project, Edit::Add { x, y, w, h })? {
            EditOutcome::Added(b) => {
                *out_id = b.id.0;
                Ok(())
            }
            _ => Err(Fail::new(IscrStatus::Internal, "add did not return a box")),
        }
    })
}

/// # Safety
/// `project` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn iscr_project_delete_box(project: *mut IscrProject, id: u64) -> IscrStatus {
    guard(|| apply(project, Edit::Delete { id: BoxId(id) }).map(drop))
}

/// # Safety
/// `project` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn iscr_project_update_box(
    project: *mut IscrProject,
    id: u64,
    x: i64,
    y: i64,
    w: i64,
    h: i64,
) -> IscrStatus {
    guard(|| apply(project, Edit::Update { id: BoxId(id), x, y, w, h }).map(drop))
}

/// Exchanges two boxes in the reading order.
///
/// # Safety
/// `project` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn iscr_project_swap(project: *mut IscrProject, a: u64, b: u64) -> IscrStatus {
    guard(|| apply(project, Edit::Swap { a: BoxId(a), b: BoxId(b) }).map(drop))
}

/// # Safety
/// `project` must be a live handle; `text` NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn iscr_project_set_text(project: *mut IscrProject, id: u64, text: *const c_char) -> IscrStatus {
    guard(|| {
        let text = str_arg(text, "text")?.to_string();
        apply(project, Edit::SetText { id: BoxId(id), text }).map(drop)
    })
}

/// Computes the reading order with default line clustering and writes the
/// ordered ids to `out_ids` (room for `capacity`). `*out_len` always gets
/// the box count; `BufferTooSmall` is returned when it exceeds `capacity`,
/// though the project is serialized either way.
///
/// # Safety
/// `project` must be a live handle; `out_ids` must have room for `capacity`
/// ids; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn iscr_project_serialize(
    project: *mut IscrProject,
    out_ids: *mut u64,
    capacity: usize,
    out_len: *mut usize,
) -> IscrStatus {
    guard(|| {
        non_null(out_len, "out_len")?;
        let p = project_mut(project)?;
        p.serialize(&OrderConfig::default())?;
        let seq = p.layout().sequence();
        *out_len = seq.len();
        if seq.len() > capacity {
            return Err(Fail::new(IscrStatus::BufferTooSmall, format!("need {} ids", seq.len())));
        }
        if !seq.is_empty() {
            non_null(out_ids, "out_ids")?;
            for (i, id) in seq.iter().enumerate() {
                *out_ids.add(i) = id.0;
            }
        }
        Ok(())
    })
}
