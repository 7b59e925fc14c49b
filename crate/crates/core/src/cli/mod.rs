//! Command-line entry points. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code (0 success, 2 input error,
//! 3 phase/state error, 1 anything else).

mod data;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::detect::{run_detection, ArchiveBackend, DetectConfig};
use crate::lexicon::{cer_report, Dictionary, EvalPair};
use crate::order::OrderConfig;
use crate::preproc::{resize_page, GrayImage};
use crate::project::{Edit, PageInfo, Project, ProjectError, RecognizeOptions};
use crate::recognizer::{fit, CharSet, Decoder, ModelConfig, ModelParams, RecognizerError, TrainConfig};
use crate::service::{LoadedModel, ServiceConfig};

pub use data::{load_training_set, read_eval_tsv, split_train_val, LabeledImage};

#[derive(Debug)]
pub enum CliError {
    /// Bad or missing input; exit 2.
    Input(String),
    /// Workflow state does not allow the command; exit 3.
    Phase(String),
    /// Anything else; exit 1.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Phase(_) => 3,
            CliError::Failed(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Phase(m) | CliError::Failed(m) => m,
        }
    }
}

impl From<ProjectError> for CliError {
    fn from(e: ProjectError) -> Self {
        match e {
            ProjectError::PhaseOrder { .. } | ProjectError::MissingText(_) => CliError::Phase(e.to_string()),
            ProjectError::Recognizer(_) => CliError::Failed(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<RecognizerError> for CliError {
    fn from(e: RecognizerError) -> Self {
        CliError::Input(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

#[derive(Parser, Debug)]
#[command(name = "inkscribe", version, about = "Handwritten page annotation engine")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long = "score-thresh", global = true)]
    pub score_thresh: Option<f32>,
    #[arg(long = "iou-thresh", global = true)]
    pub iou_thresh: Option<f64>,
    /// Beam width for CTC decoding; 0 selects greedy best-path decoding.
    #[arg(long, global = true)]
    pub beam: Option<usize>,
    /// Word-frequency dictionary for spell correction.
    #[arg(long, global = true)]
    pub dict: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Decode detector maps for a page into a new project file.
    Detect {
        page: PathBuf,
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a JSON array of edits to a project.
    Edit {
        project: PathBuf,
        #[arg(long)]
        edits: PathBuf,
    },
    /// Compute the reading order of a project.
    Serialize { project: PathBuf },
    /// Recognise every ordered box and save the project in place.
    Recognize {
        project: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        charset: Option<PathBuf>,
        /// Page image; defaults to the project's source path.
        #[arg(long)]
        page: Option<PathBuf>,
    },
    /// Train a recognizer on a manifest of word images.
    Train(TrainArgs),
    /// Character error rate of predictions against ground truth.
    Eval { pred: PathBuf, gt: PathBuf },
    /// Write transcript, annotation table and word dataset; marks the project finalized.
    Export {
        project: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        page: Option<PathBuf>,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        /// Detector maps archive applied to every uploaded page.
        #[arg(long)]
        maps: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        charset: Option<PathBuf>,
        #[arg(long, default_value = "sessions")]
        out_dir: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub charset: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Base channel width of the conv stack (64 is the full model).
    #[arg(long)]
    pub conv_width: Option<usize>,
    #[arg(long)]
    pub fc_features: Option<usize>,
    #[arg(long)]
    pub lstm_hidden: Option<usize>,
}

/// Defaults read from `--config`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub score_thresh: Option<f32>,
    pub iou_thresh: Option<f64>,
    pub beam: Option<usize>,
    pub dict: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub charset: Option<PathBuf>,
    pub line_overlap_ratio: Option<f64>,
    pub train: TrainFileConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFileConfig {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_decay: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub conv_width: Option<usize>,
    pub fc_features: Option<usize>,
    pub lstm_hidden: Option<usize>,
}

struct Settings {
    seed: u64,
    detect: DetectConfig,
    order: OrderConfig,
    decoder: Decoder,
    dict: Option<PathBuf>,
    model: Option<PathBuf>,
    charset: Option<PathBuf>,
    train: TrainFileConfig,
}

fn settings(common: &Common) -> Result<Settings, CliError> {
    let file = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str::<FileConfig>(&text)
                .map_err(|e| CliError::Input(format!("invalid config {}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    let defaults = DetectConfig::default();
    let detect = DetectConfig {
        score_threshold: common.score_thresh.or(file.score_thresh).unwrap_or(defaults.score_threshold),
        iou_threshold: common.iou_thresh.or(file.iou_thresh).unwrap_or(defaults.iou_threshold),
    };
    detect.validate().map_err(|e| CliError::Input(e.to_string()))?;
    let order = OrderConfig {
        line_overlap_ratio: file.line_overlap_ratio.unwrap_or(OrderConfig::default().line_overlap_ratio),
    };
    order.validate().map_err(|e| CliError::Input(e.to_string()))?;
    let decoder = match common.beam.or(file.beam).unwrap_or(25) {
        0 => Decoder::Greedy,
        w => Decoder::Beam(w),
    };
    Ok(Settings {
        seed: common.seed.or(file.seed).unwrap_or(0),
        detect,
        order,
        decoder,
        dict: common.dict.clone().or(file.dict),
        model: file.model,
        charset: file.charset,
        train: file.train,
    })
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult {
    let s = settings(&cli.common)?;
    match &cli.command {
        Command::Detect { page, maps, out: dest } => cmd_detect(page, maps, dest, &s, out),
        Command::Edit { project, edits } => cmd_edit(project, edits, out),
        Command::Serialize { project } => cmd_serialize(project, &s, out),
        Command::Recognize {
            project,
            model,
            charset,
            page,
        } => cmd_recognize(project, model.as_deref(), charset.as_deref(), page.as_deref(), &s, out),
        Command::Train(args) => cmd_train(args, &s, out),
        Command::Eval { pred, gt } => cmd_eval(pred, gt, out),
        Command::Export { project, out: dir, page } => cmd_export(project, dir, page.as_deref(), &s, out),
        Command::Serve {
            addr,
            maps,
            model,
            charset,
            out_dir,
        } => cmd_serve(*addr, maps.as_deref(), model.as_deref(), charset.as_deref(), out_dir, &s),
    }
}

fn emit(out: &mut dyn Write, line: impl std::fmt::Display) -> CliResult {
    writeln!(out, "{line}").map_err(|e| CliError::Failed(format!("cannot write output: {e}")))
}

fn open_image(path: &Path) -> Result<GrayImage, CliError> {
    GrayImage::open(path).map_err(|e| CliError::Input(e.to_string()))
}

fn load_project(path: &Path) -> Result<Project, CliError> {
    Project::load(path).map_err(|e| CliError::Input(e.to_string()))
}

/// The page image named by `--page`, else the project's source path
/// (resolved against the project file's directory when relative).
fn project_page(project: &Project, project_path: &Path, page: Option<&Path>) -> Result<GrayImage, CliError> {
    let path = match page {
        Some(p) => p.to_path_buf(),
        None => {
            let src = PathBuf::from(&project.info.source);
            if src.is_absolute() || src.exists() {
                src
            } else {
                project_path.parent().unwrap_or(Path::new(".")).join(src)
            }
        }
    };
    open_image(&path)
}

fn load_charset(path: Option<&Path>) -> Result<CharSet, CliError> {
    match path {
        Some(p) => Ok(CharSet::load(p)?),
        None => Ok(CharSet::iam()),
    }
}

fn load_model(path: Option<&Path>, charset: Option<&Path>) -> Result<LoadedModel, CliError> {
    let path = path.ok_or_else(|| CliError::Input("a model file is required (--model)".into()))?;
    let params = ModelParams::load(path).map_err(|e| CliError::Input(format!("cannot load model: {e}")))?;
    let charset = load_charset(charset)?;
    if charset.classes() != params.config.classes {
        return Err(CliError::Input(format!(
            "model has {} classes but the charset defines {}",
            params.config.classes,
            charset.classes()
        )));
    }
    Ok(LoadedModel { params, charset })
}

fn load_dict(path: Option<&Path>) -> Result<Option<Dictionary>, CliError> {
    path.map(|p| Dictionary::load(p, false).map_err(|e| CliError::Input(e.to_string())))
        .transpose()
}

fn cmd_detect(page: &Path, maps: &Path, dest: &Path, s: &Settings, out: &mut dyn Write) -> CliResult {
    if !maps.exists() {
        return Err(CliError::Input(format!("maps not found: {}", maps.display())));
    }
    let img = open_image(page)?;
    let resized = resize_page(&img);
    let boxes = run_detection(&resized, &ArchiveBackend::new(maps), &s.detect)
        .map_err(|e| CliError::Input(format!("detection failed: {e}")))?;
    let info = PageInfo {
        source: page.display().to_string(),
        width: img.width(),
        height: img.height(),
        scale: resized.scale,
    };
    let project = Project::from_detections(info, &boxes);
    project.save(dest)?;
    emit(out, format!("detected {} boxes", project.boxes().len()))
}

fn cmd_edit(path: &Path, edits: &Path, out: &mut dyn Write) -> CliResult {
    let mut project = load_project(path)?;
    let text = std::fs::read_to_string(edits)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", edits.display())))?;
    let edits: Vec<Edit> =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("invalid edits file: {e}")))?;
    for e in &edits {
        project.apply_edit(e)?;
    }
    project.save(path)?;
    emit(out, format!("applied {} edits", edits.len()))
}

fn cmd_serialize(path: &Path, s: &Settings, out: &mut dyn Write) -> CliResult {
    let mut project = load_project(path)?;
    let lines = project.serialize(&s.order)?;
    project.save(path)?;
    for line in lines {
        emit(out, line.iter().map(|id| id.to_string()).collect::<Vec<_>>().join(" "))?;
    }
    Ok(())
}

fn cmd_recognize(
    path: &Path,
    model: Option<&Path>,
    charset: Option<&Path>,
    page: Option<&Path>,
    s: &Settings,
    out: &mut dyn Write,
) -> CliResult {
    let mut project = load_project(path)?;
    if project.status() < crate::project::Status::Serialized || project.page().layout_stale() {
        return Err(CliError::Phase(format!(
            "project must be serialized before recognition (status {})",
            project.status()
        )));
    }
    let model = load_model(model.or(s.model.as_deref()), charset.or(s.charset.as_deref()))?;
    let dict = load_dict(s.dict.as_deref())?;
    let image = project_page(&project, path, page)?;
    let results = project.recognize(
        &image,
        &model.params,
        &model.charset,
        RecognizeOptions {
            decoder: s.decoder,
            dictionary: dict.as_ref(),
        },
    )?;
    project.save(path)?;
    for r in results {
        let score = r.log_prob.map_or_else(|| "-".to_string(), |p| format!("{p:.6}"));
        emit(out, format!("{}\t{}\t{}", r.id, r.text, score))?;
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs, s: &Settings, out: &mut dyn Write) -> CliResult {
    let charset = load_charset(args.charset.as_deref().or(s.charset.as_deref()))?;
    let t = &s.train;
    let conv_width = args.conv_width.or(t.conv_width).unwrap_or(64);
    let fc = args.fc_features.or(t.fc_features).unwrap_or(512);
    let hidden = args.lstm_hidden.or(t.lstm_hidden).unwrap_or(256);
    let model_cfg = ModelConfig::compact(conv_width, fc, hidden, charset.classes());
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: args.learning_rate.or(t.learning_rate).unwrap_or(defaults.learning_rate),
        lr_decay: t.lr_decay.unwrap_or(defaults.lr_decay),
        batch_size: args.batch_size.or(t.batch_size).unwrap_or(defaults.batch_size),
        noise_sigma: args.noise_sigma.or(t.noise_sigma).unwrap_or(defaults.noise_sigma),
        epochs: args.epochs.or(t.epochs).unwrap_or(defaults.epochs),
        max_label_len: model_cfg.timesteps(),
        seed: s.seed,
        ..defaults
    };

    let canvas = crate::preproc::CanvasSpec {
        width: model_cfg.input_width as u32,
        height: model_cfg.input_height as u32,
        fill: 255,
    };
    let set = load_training_set(&args.manifest, &canvas)?;
    if set.is_empty() {
        return Err(CliError::Input(format!("manifest {} has no items", args.manifest.display())));
    }
    let mut items = Vec::with_capacity(set.len());
    for (i, li) in set.into_iter().enumerate() {
        match crate::recognizer::TrainItem::new(li.input, &li.text, &charset) {
            Ok(item) => items.push(item),
            Err(e) => emit(out, format!("skip item {i}: {e}"))?,
        }
    }
    let (train, val) = split_train_val(items, s.seed);
    emit(out, format!("train {} val {}", train.len(), val.len()))?;
    let mut params = ModelParams::init(model_cfg, s.seed)?;
    let mut write_err = None;
    let report = fit(&train, &val, &mut params, &cfg, &charset, |log| {
        if let Err(e) = writeln!(out, "{log}") {
            write_err.get_or_insert(e);
        }
    })
    .map_err(|e| match e {
        RecognizerError::InvalidConfig(m) => CliError::Input(m),
        other => CliError::from(other),
    })?;
    if let Some(e) = write_err {
        return Err(CliError::Failed(format!("cannot write output: {e}")));
    }
    for (i, reason) in &report.skipped {
        emit(out, format!("skipped training item {i}: {reason}"))?;
    }
    report
        .best
        .save(&args.out)
        .map_err(|e| CliError::Failed(format!("cannot save model: {e}")))?;
    let train_cer = crate::recognizer::corpus_cer(&report.best, &train, &charset)?;
    emit(out, format!("best_epoch {}", report.best_epoch))?;
    emit(out, format!("train_cer {train_cer:.4}"))
}

fn cmd_eval(pred: &Path, gt: &Path, out: &mut dyn Write) -> CliResult {
    let p = read_eval_tsv(pred)?;
    let g = read_eval_tsv(gt)?;
    let pred_ids: Vec<&String> = p.iter().map(|(id, _)| id).collect();
    let gt_ids: Vec<&String> = g.iter().map(|(id, _)| id).collect();
    if pred_ids != gt_ids {
        let first = pred_ids
            .iter()
            .zip(&gt_ids)
            .position(|(a, b)| a != b)
            .unwrap_or(pred_ids.len().min(gt_ids.len()));
        return Err(CliError::Input(format!(
            "prediction and ground-truth ids are not aligned (first difference at row {}, {} vs {} rows)",
            first + 1,
            pred_ids.len(),
            gt_ids.len()
        )));
    }
    let pairs: Vec<EvalPair> = g.iter().zip(&p).map(|((_, gt), (_, rec))| EvalPair::new(gt.as_str(), rec.as_str())).collect();
    let report = cer_report(&pairs).map_err(|e| CliError::Input(e.to_string()))?;
    emit(out, report)
}

fn cmd_export(path: &Path, dir: &Path, page: Option<&Path>, s: &Settings, out: &mut dyn Write) -> CliResult {
    let mut project = load_project(path)?;
    let image = project_page(&project, path, page)?;
    let done = project.finalize(&image, dir, &s.order)?;
    project.save(path)?;
    emit(out, format!("transcript {}", done.transcript_path.display()))?;
    emit(out, format!("dataset {}", done.dataset_dir.display()))
}

fn cmd_serve(
    addr: std::net::SocketAddr,
    maps: Option<&Path>,
    model: Option<&Path>,
    charset: Option<&Path>,
    out_dir: &Path,
    s: &Settings,
) -> CliResult {
    let mut config = ServiceConfig::new(out_dir);
    config.detect = s.detect;
    config.order = s.order;
    config.decoder = s.decoder;
    if let Some(m) = maps {
        if !m.exists() {
            return Err(CliError::Input(format!("maps not found: {}", m.display())));
        }
        config.backend = Some(Arc::new(ArchiveBackend::new(m)));
    }
    let model_path = model.or(s.model.as_deref());
    if model_path.is_some() {
        config.model = Some(Arc::new(load_model(model_path, charset.or(s.charset.as_deref()))?));
    }
    config.dictionary = load_dict(s.dict.as_deref())?.map(Arc::new);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Failed(e.to_string()))?;
    rt.block_on(crate::service::serve(config, addr))
        .map_err(|e| CliError::Failed(format!("service stopped: {e}")))
}
