//! Acceptance suite: one check per headline criterion, each with its own
//! independent oracle and runtime budget. Runs as a plain binary so every
//! result line is printed; positional arguments filter criteria by name.

mod common;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::gradcheck;
use inkscribe::detect::{decode_geometry, iou, nms, ArchiveBackend, RotatedBox, ScoreGeoMaps};
use inkscribe::lexicon::{cer, levenshtein, EvalPair};
use inkscribe::order::{serialize_boxes, BoxId, BoxRecord, OrderConfig, OrderedLayout, Rect};
use inkscribe::preproc::{deslant, resize_page, shear_exact, GrayImage, SHEAR_GRID};
use inkscribe::project::{Edit, PageInfo, Project, ANNOTATIONS_FILE, MANIFEST_FILE, TRANSCRIPT_FILE};
use inkscribe::recognizer::{
    beam_decode, cnn_forward, ctc_loss, ctc_required_steps, greedy_decode, mdlstm_forward, CharSet, Decoder,
    ModelConfig, ModelParams, RecognizerError, Tensor,
};
use inkscribe::service::{router, LoadedModel, ServiceConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let criteria: [(&str, u64, Check); 11] = [
        ("ctc_brute_force", 10, ctc_brute_force),
        ("gradient_checks", 120, gradient_checks),
        ("shape_contract", 1, shape_contract),
        ("learning_check", 900, learning_check),
        ("beam_vs_greedy", 30, beam_vs_greedy),
        ("nms_and_decode", 30, nms_and_decode),
        ("serialization", 10, serialization),
        ("deslant_recovery", 60, deslant_recovery),
        ("metrics", 60, metrics),
        ("persistence", 60, persistence),
        ("service_contract", 120, service_contract),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, budget, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let result = std::panic::catch_unwind(check);
        let secs = t0.elapsed().as_secs_f64();
        let outcome = match result {
            Ok(Ok(detail)) if t0.elapsed() <= Duration::from_secs(budget) => Ok(detail),
            Ok(Ok(detail)) => Err(format!("{detail}; over the {budget} s budget")),
            Ok(Err(e)) => Err(e),
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(d) => println!("[PASS] {name}: {d} ({secs:.2} s)"),
            Err(e) => {
                failed += 1;
                println!("[FAIL] {name}: {e} ({secs:.2} s)");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- CTC

fn softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    logits
        .chunks(k)
        .flat_map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            row.iter().map(move |v| (v - m).exp() / z).collect::<Vec<_>>()
        })
        .collect()
}

/// Probability of every labelling, summed over all `k^t` frame paths.
fn path_sums(probs: &[f64], t: usize, k: usize, blank: usize) -> HashMap<Vec<usize>, f64> {
    let mut out = HashMap::new();
    for code in 0..k.pow(t as u32) {
        let mut path = Vec::with_capacity(t);
        let mut c = code;
        for _ in 0..t {
            path.push(c % k);
            c /= k;
        }
        let p: f64 = path.iter().enumerate().map(|(i, &s)| probs[i * k + s]).product();
        let mut label = Vec::new();
        let mut prev = None;
        for &s in &path {
            if s != blank && Some(s) != prev {
                label.push(s);
            }
            prev = Some(s);
        }
        *out.entry(label).or_insert(0.0) += p;
    }
    out
}

/// Every sequence over `0..symbols` of length at most `max_len`.
fn all_labels(symbols: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for l in &frontier {
            for s in 0..symbols {
                let mut m: Vec<usize> = l.clone();
                m.push(s);
                next.push(m);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn random_logits(rng: &mut ChaCha8Rng, t: usize, k: usize, spread: f64) -> Vec<f64> {
    (0..t * k).map(|_| rng.random_range(-spread..spread)).collect()
}

fn ctc_brute_force() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_loss = 0.0f64;
    let mut worst_total = 0.0f64;
    let mut cases = 0;
    for t in 1..=4 {
        for k in 2..=3 {
            for _ in 0..25 {
                let logits = random_logits(&mut rng, t, k, 3.0);
                let blank = k - 1;
                let brute = path_sums(&softmax_rows(&logits, k), t, k, blank);
                let tensor = Tensor::from_vec(&[t, k], logits.clone()).unwrap();
                let mut total = 0.0;
                for label in all_labels(k - 1, t) {
                    let p = brute.get(&label).copied().unwrap_or(0.0);
                    match ctc_loss(&tensor, &label, blank) {
                        Ok(out) => {
                            let err = (out.loss - -p.ln()).abs();
                            worst_loss = worst_loss.max(err);
                            ensure(err <= 1e-6, || format!("T={t} K={k} label {label:?}: {} vs {}", out.loss, -p.ln()))?;
                            total += (-out.loss).exp();
                        }
                        Err(RecognizerError::InfeasibleLabel { .. }) => ensure(p == 0.0 && ctc_required_steps(&label) > t, || {
                            format!("label {label:?} rejected but has mass {p}")
                        })?,
                        Err(e) => return Err(e.to_string()),
                    }
                }
                worst_total = worst_total.max((total - 1.0).abs());
                ensure((total - 1.0).abs() <= 1e-6, || format!("T={t} K={k}: labellings sum to {total}"))?;
                cases += 1;
            }
        }
    }
    Ok(format!(
        "{cases} logit sets, max |loss - brute| {worst_loss:.1e}, max |sum - 1| {worst_total:.1e}"
    ))
}

// ---------------------------------------------------------------- gradients

fn gradient_checks() -> Result<String, String> {
    let ctc = gradcheck::ctc_check()?;
    let lstm = gradcheck::mdlstm_check()?;
    let cnn = gradcheck::cnn_check()?;
    let e2e = gradcheck::end_to_end_check()?;
    ensure(ctc < gradcheck::CTC_TOL, || format!("ctc {ctc:.2e}"))?;
    for (n, v) in [("mdlstm", lstm), ("cnn", cnn), ("end to end", e2e)] {
        ensure(v < gradcheck::LAYER_TOL, || format!("{n} {v:.2e}"))?;
    }
    Ok(format!(
        "{} seeds; worst relative error ctc {ctc:.1e}, mdlstm {lstm:.1e}, cnn {cnn:.1e}, end to end {e2e:.1e}",
        gradcheck::SEEDS
    ))
}

// ---------------------------------------------------------------- shapes

fn shape_contract() -> Result<String, String> {
    let params = ModelParams::<f32>::init(ModelConfig::default(), 5).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let input = Tensor::from_vec(&[32, 128], (0..32 * 128).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
    let (features, _) = cnn_forward::<f32, ChaCha8Rng>(&input, &params, None).map_err(|e| e.to_string())?;
    ensure(features.dims() == [32, 512], || format!("features {:?}", features.dims()))?;
    let (logits, _) = mdlstm_forward(&features, &params).map_err(|e| e.to_string())?;
    ensure(logits.dims() == [32, 80], || format!("logits {:?}", logits.dims()))?;
    ensure(logits.all_finite(), || "non-finite logits".into())?;
    Ok("128x32 input -> features [32, 512] -> logits [32, 80]".into())
}

// ---------------------------------------------------------------- learning

fn run_cli(args: &[&str]) -> Result<String, String> {
    let mut out = Vec::new();
    let code = inkscribe::cli::run(std::iter::once("inkscribe").chain(args.iter().copied()), &mut out);
    let text = String::from_utf8_lossy(&out).into_owned();
    ensure(code == 0, || format!("`inkscribe {}` exited {code}: {text}", args.join(" ")))?;
    Ok(text)
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn learning_check() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixtures = common::learning_fixtures();
    let mut manifest = String::new();
    for (i, (img, label)) in fixtures.iter().enumerate() {
        let name = format!("w{i:02}.png");
        img.save_png(&dir.path().join(&name)).map_err(|e| e.to_string())?;
        manifest.push_str(&format!("{name}\t{label}\n"));
    }
    let manifest_path = dir.path().join("train.tsv");
    std::fs::write(&manifest_path, manifest).map_err(|e| e.to_string())?;
    let model = dir.path().join("model.sgm");
    let log = run_cli(&[
        "--seed",
        "0",
        "train",
        p(&manifest_path),
        "--out",
        p(&model),
        "--epochs",
        "300",
        "--batch-size",
        "4",
        "--learning-rate",
        "0.001",
        "--conv-width",
        "16",
        "--fc-features",
        "64",
        "--lstm-hidden",
        "32",
    ])?;
    let train_cer: f64 = log
        .lines()
        .find_map(|l| l.strip_prefix("train_cer "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or("no train_cer line")?;
    let best = log.lines().find_map(|l| l.strip_prefix("best_epoch ")).unwrap_or("?").to_string();
    ensure(train_cer < 0.02, || format!("train CER {train_cer} after 300 epochs"))?;

    // recognise the same words laid out on a page through the project workflow
    let images: Vec<GrayImage> = fixtures.iter().map(|(img, _)| img.clone()).collect();
    let (page, rects) = common::compose_page(&images, 4);
    let page_path = dir.path().join("page.png");
    page.save_png(&page_path).map_err(|e| e.to_string())?;
    let project_path = dir.path().join("page.json");
    Project::new(PageInfo {
        source: "page.png".into(),
        width: page.width(),
        height: page.height(),
        scale: 1.0,
    })
    .save(&project_path)
    .map_err(|e| e.to_string())?;
    let edits: Vec<Edit> = rects.iter().map(|&(x, y, w, h)| Edit::Add { x, y, w, h }).collect();
    let edits_path = dir.path().join("edits.json");
    std::fs::write(&edits_path, serde_json::to_string(&edits).unwrap()).map_err(|e| e.to_string())?;
    run_cli(&["edit", p(&project_path), "--edits", p(&edits_path)])?;
    run_cli(&["serialize", p(&project_path)])?;
    let out = run_cli(&["--beam", "25", "recognize", p(&project_path), "--model", p(&model)])?;
    let texts: Vec<&str> = out.lines().map(|l| l.split('\t').nth(1).unwrap_or("")).collect();
    let labels: Vec<&str> = fixtures.iter().map(|(_, l)| l.as_str()).collect();
    let wrong: Vec<String> = labels
        .iter()
        .zip(texts.iter().chain(std::iter::repeat(&"<none>")))
        .filter(|(a, b)| a != b)
        .map(|(a, b)| format!("{a}->{b}"))
        .collect();
    ensure(texts.len() == labels.len() && wrong.is_empty(), || {
        format!("train CER {train_cer:.4} but recognition differs on {} of {}: {}", wrong.len(), labels.len(), wrong.join(", "))
    })?;
    Ok(format!(
        "train CER {train_cer:.4} (best epoch {best}); beam 25 reproduced all {} labels",
        labels.len()
    ))
}

// ---------------------------------------------------------------- decoding

fn beam_vs_greedy() -> Result<String, String> {
    // p(a) = 0.4, p(blank) = 0.6 at both steps
    let fixture = Tensor::from_vec(&[2, 2], vec![0.4f64.ln(), 0.6f64.ln(), 0.4f64.ln(), 0.6f64.ln()]).unwrap();
    let brute = path_sums(&softmax_rows(fixture.data(), 2), 2, 2, 1);
    let map = brute.iter().max_by(|a, b| a.1.total_cmp(b.1)).map(|(l, _)| l.clone()).unwrap();
    ensure(map == vec![0], || format!("enumeration MAP {map:?}"))?;
    let greedy = greedy_decode(&fixture, 1);
    let beam = beam_decode(&fixture, 1, 4);
    ensure(greedy.is_empty(), || format!("greedy gave {greedy:?}"))?;
    ensure(beam.labels == vec![0], || format!("beam gave {:?}", beam.labels))?;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut cases = 0;
    let mut differs = 0;
    for _ in 0..300 {
        let t = rng.random_range(1..=5usize);
        let k = rng.random_range(2..=3usize);
        let logits = random_logits(&mut rng, t, k, 2.0);
        let brute = path_sums(&softmax_rows(&logits, k), t, k, k - 1);
        let (best, best_p) = brute
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(l, p)| (l.clone(), *p))
            .unwrap();
        let prefixes = all_labels(k - 1, t).len();
        let tensor = Tensor::from_vec(&[t, k], logits).unwrap();
        let r = beam_decode(&tensor, k - 1, prefixes);
        ensure(r.labels == best, || format!("T={t} K={k}: beam {:?}, MAP {best:?}", r.labels))?;
        ensure((r.log_prob - best_p.ln()).abs() < 1e-9, || format!("log prob {} vs {}", r.log_prob, best_p.ln()))?;
        if greedy_decode(&tensor, k - 1) != best {
            differs += 1;
        }
        cases += 1;
    }
    Ok(format!(
        "fixture: greedy \"\" vs beam \"a\"; beam = MAP on {cases} random cases (greedy wrong on {differs})"
    ))
}

// ---------------------------------------------------------------- detection

fn envelope_of(b: &RotatedBox) -> (f64, f64, f64, f64) {
    let (c, s) = (b.angle.cos(), b.angle.sin());
    let pts: Vec<(f64, f64)> = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        .iter()
        .map(|(u, v)| {
            let (u, v) = (u * b.w / 2.0, v * b.h / 2.0);
            (b.cx + c * u - s * v, b.cy + s * u + c * v)
        })
        .collect();
    let xs = pts.iter().map(|p| p.0);
    let ys = pts.iter().map(|p| p.1);
    (
        xs.clone().fold(f64::INFINITY, f64::min),
        ys.clone().fold(f64::INFINITY, f64::min),
        xs.fold(f64::NEG_INFINITY, f64::max),
        ys.fold(f64::NEG_INFINITY, f64::max),
    )
}

fn reference_iou(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let (a0, a1, a2, a3) = envelope_of(a);
    let (b0, b1, b2, b3) = envelope_of(b);
    let inter = (a2.min(b2) - a0.max(b0)).max(0.0) * (a3.min(b3) - a1.max(b1)).max(0.0);
    let union = (a2 - a0) * (a3 - a1) + (b2 - b0) * (b3 - b1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Quadratic reference: take the best remaining box, drop it and everything
/// overlapping it at or above the threshold, repeat.
fn reference_nms(boxes: &[RotatedBox], thr: f64) -> Vec<RotatedBox> {
    let mut left: Vec<RotatedBox> = boxes.to_vec();
    let mut keep = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            let (a, b) = (&left[i], &left[best]);
            let better = a.score > b.score
                || (a.score == b.score && (a.cx < b.cx || (a.cx == b.cx && a.cy < b.cy)));
            if better {
                best = i;
            }
        }
        let chosen = left.swap_remove(best);
        left.retain(|b| reference_iou(&chosen, b) < thr);
        keep.push(chosen);
    }
    keep
}

fn nms_and_decode() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut total_in = 0;
    let mut total_kept = 0;
    for set in 0..1000 {
        let n = rng.random_range(0..40usize);
        let boxes: Vec<RotatedBox> = (0..n)
            .map(|_| RotatedBox {
                cx: rng.random_range(0.0..200.0),
                cy: rng.random_range(0.0..200.0),
                w: rng.random_range(5.0..80.0),
                h: rng.random_range(5.0..40.0),
                angle: if rng.random_bool(0.3) { rng.random_range(-0.5..0.5) } else { 0.0 },
                // a coarse score grid forces ties onto the positional tie-break
                score: (rng.random_range(1..=20) as f64) / 20.0,
            })
            .collect();
        let thr = rng.random_range(0.05..0.95);
        let got = nms(&boxes, thr);
        let want = reference_nms(&boxes, thr);
        ensure(got == want, || format!("set {set}: nms kept {} boxes, reference {}", got.len(), want.len()))?;
        for a in &boxes {
            for b in &boxes {
                ensure((iou(a, b) - reference_iou(a, b)).abs() < 1e-12, || "iou disagrees with reference".into())?;
            }
        }
        total_in += n;
        total_kept += got.len();
    }

    let mut cells = 0;
    for _ in 0..20 {
        let (rows, cols) = (rng.random_range(1..16usize), rng.random_range(1..16usize));
        let mut maps = ScoreGeoMaps::zeros(rows, cols);
        let mut expected = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                let score = rng.random_range(0.0f32..1.0);
                let d = [0; 4].map(|_| rng.random_range(0.5f32..30.0));
                maps.set_cell(i, j, score, d, 0.0);
                if score >= 0.5 {
                    let (px, py) = ((4 * j) as f64, (4 * i) as f64);
                    let [top, right, bottom, left] = d.map(f64::from);
                    expected.push((px - left, py - top, px + right, py + bottom, score as f64));
                }
            }
        }
        let got = decode_geometry(&maps, 0.5);
        ensure(got.len() == expected.len(), || format!("{} boxes decoded, {} expected", got.len(), expected.len()))?;
        for (b, e) in got.iter().zip(&expected) {
            let (x0, y0, x1, y1) = b.envelope();
            let close = [(x0, e.0), (y0, e.1), (x1, e.2), (y1, e.3)].iter().all(|(a, b)| (a - b).abs() < 1e-9);
            ensure(close && b.angle == 0.0 && b.score == e.4, || format!("box {:?} vs closed form {e:?}", b.envelope()))?;
        }
        cells += rows * cols;
    }
    Ok(format!(
        "nms = reference on 1000 sets ({total_kept} of {total_in} boxes kept); closed-form decode on {cells} cells"
    ))
}

// ---------------------------------------------------------------- order

fn serialization() -> Result<String, String> {
    let cfg = OrderConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut boxes_total = 0;
    for page in 0..1000 {
        let k = rng.random_range(1..=8usize);
        let m = rng.random_range(1..=8usize);
        let line_h = rng.random_range(16.0..60.0f64);
        let pitch = line_h * rng.random_range(1.5..2.0);
        let mut rects = Vec::new();
        for line in 0..k {
            let base = 20.0 + line as f64 * pitch;
            let mut x = rng.random_range(0.0..40.0f64);
            for _ in 0..m {
                // total vertical jitter spread stays below 40% of the line height
                let dy = rng.random_range(-0.195..0.195) * line_h;
                let w = rng.random_range(10.0..90.0f64);
                rects.push(Rect::new(x.round() as i64, (base + dy).round() as i64, w.round() as i64, line_h.round() as i64));
                x += w + rng.random_range(4.0..30.0);
            }
        }
        // ids are assigned in a shuffled order so they carry no hint
        let mut ids: Vec<u64> = (0..rects.len() as u64).collect();
        ids.shuffle(&mut rng);
        let boxes: Vec<BoxRecord> = rects.iter().zip(&ids).map(|(r, &id)| BoxRecord::new(BoxId(id), *r)).collect();
        let mut shuffled = boxes.clone();
        shuffled.shuffle(&mut rng);
        let got: Vec<u64> = serialize_boxes(&shuffled, &cfg).sequence().iter().map(|b| b.0).collect();
        ensure(got == ids, || format!("page {page} ({k}x{m}): order {got:?}, expected {ids:?}"))?;
        boxes_total += rects.len();
    }

    use proptest::prelude::*;
    use proptest::test_runner::{Config, TestRunner};
    let mut runner = TestRunner::new(Config::with_cases(512));
    let strategy = (2usize..40).prop_flat_map(|n| (Just(n), 0..n, 0..n, any::<u64>()));
    runner
        .run(&strategy, |(n, i, j, seed)| {
            let mut seq: Vec<BoxId> = (0..n as u64).map(BoxId).collect();
            seq.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let layout = OrderedLayout::new(seq.clone());
            let (a, b) = (seq[i], seq[j]);
            let once = layout.swap(a, b).unwrap();
            prop_assert!(once.is_permutation_of(&seq));
            prop_assert_eq!(once.position(a), layout.position(b));
            prop_assert_eq!(once.swap(a, b).unwrap(), layout);
            Ok(())
        })
        .map_err(|e| format!("swap involution: {e}"))?;
    Ok(format!(
        "row-major order on 1000 jittered pages ({boxes_total} boxes); swap involution over 512 cases"
    ))
}

// ---------------------------------------------------------------- deslant

fn deslant_recovery() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let cases = 500;
    let mut ok = 0;
    let mut misses = Vec::new();
    for case in 0..cases {
        let alpha = SHEAR_GRID[case % SHEAR_GRID.len()];
        let (w, h) = (rng.random_range(50..90u32), rng.random_range(36..48u32));
        let baseline = h - rng.random_range(3..6u32);
        let strokes = rng.random_range(1..=3u32);
        let mut spans = Vec::new();
        let mut x = rng.random_range(4..10u32);
        for _ in 0..strokes {
            let sw = rng.random_range(4..8u32);
            let top = rng.random_range(3..baseline - 18);
            spans.push((x, x + sw, top));
            x += sw + rng.random_range(8..16u32);
        }
        let img = GrayImage::from_fn(w.max(x + 4), h, |px, py| {
            let ink = spans.iter().any(|&(x0, x1, top)| (x0..x1).contains(&px) && (top..=baseline).contains(&py));
            if ink {
                ink_shade(px, py)
            } else {
                255
            }
        });
        let slanted = shear_exact(&img, alpha, baseline as usize);
        let got = deslant(&slanted).shear;
        if (got + alpha).abs() <= 0.2 + 1e-9 {
            ok += 1;
        } else if misses.len() < 5 {
            misses.push(format!("{alpha:+.1}->{got:+.1}"));
        }
    }
    let rate = ok as f64 / cases as f64;
    ensure(rate >= 0.95, || format!("recovered {ok}/{cases}; misses {}", misses.join(" ")))?;
    Ok(format!("{ok}/{cases} shears recovered within one grid step ({:.1}%)", 100.0 * rate))
}

/// Slightly uneven ink so the strokes are not perfectly flat.
fn ink_shade(x: u32, y: u32) -> u8 {
    ((x * 7 + y * 13) % 40) as u8
}

// ---------------------------------------------------------------- metrics

fn dp_table(a: &[char], b: &[char]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

fn metrics() -> Result<String, String> {
    const ALPHABET: [char; 6] = ['a', 'b', 'c', 'é', 'ß', '中'];
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let word = |rng: &mut ChaCha8Rng| -> Vec<char> {
        let n = rng.random_range(0..=12);
        (0..n).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
    };
    for i in 0..10_000 {
        let (a, b) = (word(&mut rng), word(&mut rng));
        let (sa, sb): (String, String) = (a.iter().collect(), b.iter().collect());
        let want = dp_table(&a, &b);
        ensure(levenshtein(&sa, &sb) == want, || format!("pair {i} {sa:?}/{sb:?}: want {want}"))?;
    }

    let mut pairs = Vec::new();
    let mut chars = 0;
    for _ in 0..200 {
        let len = 10 * rng.random_range(1..=5);
        let gt: Vec<char> = (0..len).map(|_| ALPHABET[rng.random_range(0..3)]).collect();
        let mut rec = gt.clone();
        for block in 0..len / 10 {
            let at = block * 10 + rng.random_range(0..10);
            rec[at] = ALPHABET[3 + rng.random_range(0..3)];
        }
        chars += len;
        pairs.push(EvalPair::new(gt.iter().collect::<String>(), rec.iter().collect::<String>()));
    }
    let value = cer(&pairs).map_err(|e| e.to_string())?;
    ensure(value == 0.1, || format!("cer {value}"))?;
    Ok(format!("levenshtein = DP table on 10000 pairs; cer = 0.1 exactly over {chars} characters"))
}

// ---------------------------------------------------------------- persistence

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const POOL: [&str; 12] = ["a", "Z", " ", "\t", "\n", "\"", "\\", "é", "中", "🙂", "{", "0"];
    let n = rng.random_range(0..8);
    (0..n).map(|_| POOL[rng.random_range(0..POOL.len())]).collect()
}

fn random_project(rng: &mut ChaCha8Rng) -> Project {
    let info = PageInfo {
        source: format!("pages/{}.png", random_text(rng)),
        width: rng.random_range(50..2000),
        height: rng.random_range(50..2000),
        scale: rng.random_range(0.1..4.0),
    };
    let detections: Vec<RotatedBox> = (0..rng.random_range(0..12))
        .map(|_| RotatedBox {
            cx: rng.random_range(0.0..info.width as f64),
            cy: rng.random_range(0.0..info.height as f64),
            w: rng.random_range(2.0..200.0),
            h: rng.random_range(2.0..80.0),
            angle: rng.random_range(-0.3..0.3),
            score: rng.random(),
        })
        .collect();
    let mut p = if rng.random_bool(0.5) {
        Project::from_detections(info.clone(), &detections)
    } else {
        Project::new(info.clone())
    };
    for _ in 0..rng.random_range(0..10) {
        let (w, h) = (info.width as i64, info.height as i64);
        let _ = p.apply_edit(&Edit::Add {
            x: rng.random_range(-20..w),
            y: rng.random_range(-20..h),
            w: rng.random_range(1..120),
            h: rng.random_range(1..60),
        });
    }
    if rng.random_bool(0.6) {
        p.serialize(&OrderConfig::default()).unwrap();
    }
    let ids: Vec<BoxId> = p.boxes().iter().map(|b| b.id).collect();
    for id in ids {
        if rng.random_bool(0.5) {
            p.apply_edit(&Edit::SetText { id, text: random_text(rng) }).unwrap();
        }
    }
    p
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/export")
}

/// Two lines of rendered words, boxes added out of reading order, every word
/// transcribed by hand.
fn golden_project() -> (Project, GrayImage) {
    let words = ["the", "ink", "crown", "lake", "mist"];
    let images: Vec<GrayImage> = words.iter().map(|w| common::render_word(w, 4)).collect();
    let (page, rects) = common::compose_page(&images, 3);
    let mut p = Project::new(PageInfo {
        source: "golden.png".into(),
        width: page.width(),
        height: page.height(),
        scale: 1.0,
    });
    let mut ids = vec![BoxId(0); words.len()];
    for i in (0..words.len()).rev() {
        let (x, y, w, h) = rects[i];
        match p.apply_edit(&Edit::Add { x, y, w, h }).unwrap() {
            inkscribe::project::EditOutcome::Added(b) => ids[i] = b.id,
            other => panic!("unexpected {other:?}"),
        }
    }
    p.serialize(&OrderConfig::default()).unwrap();
    let texts = ["the", "ink", "crown\tjewel", "lake", "mist"];
    for (id, text) in ids.iter().zip(texts) {
        p.apply_edit(&Edit::SetText { id: *id, text: text.into() }).unwrap();
    }
    (p, page)
}

fn persistence() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for i in 0..100 {
        let p = random_project(&mut rng);
        let (a, b) = (dir.path().join(format!("{i}a.json")), dir.path().join(format!("{i}b.json")));
        p.save(&a).map_err(|e| e.to_string())?;
        let q = Project::load(&a).map_err(|e| e.to_string())?;
        ensure(q == p.canonicalized(), || format!("project {i} changed on round trip: {:?} vs {:?}", q, p.canonicalized()))?;
        q.save(&b).map_err(|e| e.to_string())?;
        ensure(read(&a)? == read(&b)?, || format!("project {i}: re-save is not byte-identical"))?;
        p.save(&b).map_err(|e| e.to_string())?;
        ensure(read(&a)? == read(&b)?, || format!("project {i}: repeated save differs"))?;
    }

    let (mut p, page) = golden_project();
    let params = ModelParams::<f32>::init(ModelConfig::compact(8, 32, 8, 80), 1).map_err(|e| e.to_string())?;
    let opts = inkscribe::project::RecognizeOptions {
        decoder: Decoder::Greedy,
        dictionary: None,
    };
    p.recognize(&page, &params, &CharSet::iam(), opts).map_err(|e| e.to_string())?;
    let out = dir.path().join("export");
    p.finalize(&page, &out, &OrderConfig::default()).map_err(|e| e.to_string())?;
    let golden = golden_dir();
    let files = [
        (out.join(TRANSCRIPT_FILE), golden.join(TRANSCRIPT_FILE)),
        (out.join(ANNOTATIONS_FILE), golden.join(ANNOTATIONS_FILE)),
        (out.join("dataset").join(MANIFEST_FILE), golden.join(MANIFEST_FILE)),
    ];
    if std::env::var_os("INKSCRIBE_BLESS").is_some() {
        std::fs::create_dir_all(&golden).map_err(|e| e.to_string())?;
        for (got, want) in &files {
            std::fs::copy(got, want).map_err(|e| e.to_string())?;
        }
    }
    for (got, want) in &files {
        ensure(read(got)? == read(want)?, || format!("{} differs from its golden file", want.display()))?;
    }
    let manifest = String::from_utf8(read(&out.join("dataset").join(MANIFEST_FILE))?).unwrap();
    for line in manifest.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        let n: Vec<i64> = f[1..5].iter().map(|v| v.parse().unwrap()).collect();
        let crop = GrayImage::open(&out.join("dataset").join(f[0])).map_err(|e| e.to_string())?;
        let want = page.crop(n[0], n[1], n[2], n[3]).ok_or("manifest box off the page")?;
        ensure(crop == want, || format!("{} does not match the page pixels", f[0]))?;
    }
    Ok("100 random projects round-trip byte-identically; transcript, annotations and manifest match golden files".into())
}

// ---------------------------------------------------------------- service

struct Scene {
    page: GrayImage,
    /// Word rectangles in page coordinates; the last is left for the user to add.
    words: Vec<(i64, i64, i64, i64)>,
}

fn scene() -> Scene {
    let names = ["the", "ink", "crown", "lake", "mist"];
    let images: Vec<GrayImage> = names.iter().map(|w| common::render_word(w, 4)).collect();
    let (page, words) = common::compose_page(&images, 3);
    Scene { page, words }
}

/// Detector maps on the resized page: one strong and one weaker duplicate
/// cell per detected word, plus a spurious box in the bottom margin.
fn scene_maps(scene: &Scene) -> ScoreGeoMaps {
    let resized = resize_page(&scene.page);
    let s = resized.scale;
    let (rows, cols) = (
        resized.image.height().div_ceil(4) as usize,
        resized.image.width().div_ceil(4) as usize,
    );
    let mut maps = ScoreGeoMaps::zeros(rows, cols);
    let mut put = |x: f64, y: f64, w: f64, h: f64, score: f32, nudge: f64| {
        let (x, y, w, h) = (x * s, y * s, w * s, h * s);
        let col = ((x + w / 2.0 + nudge) / 4.0).round() as usize;
        let row = ((y + h / 2.0) / 4.0).round() as usize;
        let (px, py) = ((4 * col) as f64, (4 * row) as f64);
        let d = [py - y, x + w - px, y + h - py, px - x].map(|v| v as f32);
        maps.set_cell(row, col, score, d, 0.0);
    };
    for &(x, y, w, h) in &scene.words[..scene.words.len() - 1] {
        put(x as f64, y as f64, w as f64, h as f64, 0.9, 0.0);
        put(x as f64, y as f64, w as f64, h as f64, 0.7, 8.0);
    }
    let (pw, ph) = (scene.page.width() as f64, scene.page.height() as f64);
    put(pw - 60.0, ph - 18.0, 40.0, 12.0, 0.8, 0.0);
    maps
}

/// Random weights with the output bias tilted towards 'a' so every box
/// decodes to a non-empty string.
fn toy_model(path: &Path) -> Result<(), String> {
    let charset = CharSet::iam();
    let mut params = ModelParams::<f32>::init(ModelConfig::compact(8, 32, 8, charset.classes()), 9).map_err(|e| e.to_string())?;
    let a = charset.encode("a").map_err(|e| e.to_string())?[0];
    params.out.b.data_mut()[a] += 8.0;
    params.save(path).map_err(|e| e.to_string())
}

fn box_rect(b: &Value) -> (i64, i64, i64, i64) {
    let g = |k: &str| b[k].as_i64().expect("integer box field");
    (g("x"), g("y"), g("w"), g("h"))
}

fn box_id(b: &Value) -> u64 {
    b["id"].as_u64().expect("box id")
}

/// Edits applied after detection, derived from the detected boxes.
fn first_edits(boxes: &[Value], scene: &Scene) -> Vec<Edit> {
    let spurious = boxes
        .iter()
        .max_by_key(|b| box_rect(b).1)
        .map(box_id)
        .expect("boxes detected");
    let first = boxes.iter().min_by_key(|b| (box_rect(b).1, box_rect(b).0)).map(box_id).unwrap();
    let (x, y, w, h) = scene.words[0];
    let (ax, ay, aw, ah) = *scene.words.last().unwrap();
    vec![
        Edit::Delete { id: BoxId(spurious) },
        Edit::Update { id: BoxId(first), x, y, w, h },
        Edit::Add { x: ax, y: ay, w: aw, h: ah },
    ]
}

/// Swap the first two boxes of the reading order and retype the third.
fn second_edits(order: &[u64]) -> Vec<Edit> {
    vec![
        Edit::Swap {
            a: BoxId(order[0]),
            b: BoxId(order[1]),
        },
        Edit::SetText {
            id: BoxId(order[2]),
            text: "crown".into(),
        },
    ]
}

fn exported_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = vec![
        (TRANSCRIPT_FILE.to_string(), read(&dir.join(TRANSCRIPT_FILE))?),
        (ANNOTATIONS_FILE.to_string(), read(&dir.join(ANNOTATIONS_FILE))?),
    ];
    let mut names: Vec<String> = std::fs::read_dir(dir.join("dataset"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for n in names {
        let bytes = read(&dir.join("dataset").join(&n))?;
        out.push((format!("dataset/{n}"), bytes));
    }
    Ok(out)
}

fn cli_workflow(work: &Path, page: &Path, maps: &Path, model: &Path, scene: &Scene) -> Result<(Vec<Value>, String, PathBuf), String> {
    let project = work.join("cli.json");
    run_cli(&["detect", p(page), "--maps", p(maps), "--out", p(&project)])?;
    let detected = Project::load(&project).map_err(|e| e.to_string())?.to_json()["boxes"]
        .as_array()
        .cloned()
        .unwrap();
    let edits_path = work.join("edits1.json");
    std::fs::write(&edits_path, serde_json::to_string(&first_edits(&detected, scene)).unwrap()).unwrap();
    run_cli(&["edit", p(&project), "--edits", p(&edits_path)])?;
    let order: Vec<u64> = run_cli(&["serialize", p(&project)])?
        .split_whitespace()
        .map(|v| v.parse().unwrap())
        .collect();
    std::fs::write(&edits_path, serde_json::to_string(&second_edits(&order)).unwrap()).unwrap();
    run_cli(&["edit", p(&project), "--edits", p(&edits_path)])?;
    let recognized = run_cli(&["recognize", p(&project), "--model", p(model), "--page", p(page)])?;
    let out = work.join("cli_out");
    run_cli(&["export", p(&project), "--out", p(&out), "--page", p(page)])?;
    Ok((detected, recognized, out))
}

async fn http_workflow(
    base: &str,
    png: Vec<u8>,
    scene: &Scene,
    out_root: &Path,
) -> Result<(Vec<Value>, Value, PathBuf, Value), String> {
    let client = reqwest::Client::new();
    let err = |e: reqwest::Error| e.to_string();
    let part = reqwest::multipart::Part::bytes(png).file_name("page.png");
    let created = client
        .post(format!("{base}/sessions"))
        .multipart(reqwest::multipart::Form::new().part("page", part))
        .send()
        .await
        .map_err(err)?;
    ensure(created.status() == 201, || format!("create returned {}", created.status()))?;
    let created: Value = created.json().await.map_err(err)?;
    let id = created["id"].as_str().ok_or("no session id")?.to_string();
    let boxes = created["boxes"].as_array().cloned().ok_or("no boxes")?;
    let mut revision = created["revision"].as_u64().ok_or("no revision")?;

    let post = |path: String, body: Value| {
        let client = client.clone();
        async move {
            let r = client.post(path).json(&body).send().await.map_err(|e| e.to_string())?;
            let status = r.status().as_u16();
            let v: Value = r.json().await.map_err(|e| e.to_string())?;
            Ok::<_, String>((status, v))
        }
    };
    let edit_url = format!("{base}/sessions/{id}/edits");
    for e in first_edits(&boxes, scene) {
        let (status, v) = post(edit_url.clone(), json!({"revision": revision, "edit": e})).await?;
        ensure(status == 200, || format!("edit {e:?} returned {status}: {v}"))?;
        revision = v["revision"].as_u64().unwrap();
    }
    let (status, v) = post(format!("{base}/sessions/{id}/serialize"), json!({})).await?;
    ensure(status == 200, || format!("serialize returned {status}: {v}"))?;
    revision = v["revision"].as_u64().unwrap();
    let order: Vec<u64> = v["order"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    for e in second_edits(&order) {
        let (status, v) = post(edit_url.clone(), json!({"revision": revision, "edit": e})).await?;
        ensure(status == 200, || format!("edit {e:?} returned {status}: {v}"))?;
        revision = v["revision"].as_u64().unwrap();
    }
    let (status, recognized) = post(format!("{base}/sessions/{id}/recognize"), json!({})).await?;
    ensure(status == 200, || format!("recognize returned {status}: {recognized}"))?;
    let (status, v) = post(format!("{base}/sessions/{id}/finalize"), json!({})).await?;
    ensure(status == 200, || format!("finalize returned {status}: {v}"))?;

    let (status, stale) = post(edit_url, json!({"revision": 0, "edit": {"op": "delete", "id": order[0]}})).await?;
    ensure(status == 409, || format!("stale edit returned {status}: {stale}"))?;
    Ok((boxes, recognized, out_root.join(&id), stale))
}

fn service_contract() -> Result<String, String> {
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scene = scene();
    let page = work.path().join("page.png");
    scene.page.save_png(&page).map_err(|e| e.to_string())?;
    let maps = work.path().join("maps.sgm");
    scene_maps(&scene).to_archive().write(&maps).map_err(|e| e.to_string())?;
    let model = work.path().join("toy.sgm");
    toy_model(&model)?;

    let (cli_boxes, cli_recognized, cli_out) = cli_workflow(work.path(), &page, &maps, &model, &scene)?;

    let out_root = work.path().join("sessions");
    let mut config = ServiceConfig::new(&out_root);
    config.backend = Some(std::sync::Arc::new(ArchiveBackend::new(&maps)));
    config.model = Some(std::sync::Arc::new(LoadedModel {
        params: ModelParams::load(&model).map_err(|e| e.to_string())?,
        charset: CharSet::iam(),
    }));
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let png = read(&page)?;
    let (http_boxes, recognized, http_out, stale) = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let addr = listener.local_addr().map_err(|e| e.to_string())?;
        tokio::spawn(async move { axum::serve(listener, router(config)).await });
        http_workflow(&format!("http://{addr}"), png, &scene, &out_root).await
    })?;

    let geometry = |bs: &[Value]| bs.iter().map(|b| (box_id(b), box_rect(b))).collect::<Vec<_>>();
    ensure(geometry(&http_boxes) == geometry(&cli_boxes), || "detected boxes differ between CLI and HTTP".into())?;
    ensure(http_boxes.len() == scene.words.len(), || format!("{} boxes detected", http_boxes.len()))?;
    for line in cli_recognized.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        ensure(recognized["texts"][f[0]] == json!(f[1]), || format!("box {} text differs: {}", f[0], recognized["texts"]))?;
    }
    let (cli_files, http_files) = (exported_files(&cli_out)?, exported_files(&http_out)?);
    ensure(cli_files.len() == scene.words.len() + 3, || format!("{} files exported", cli_files.len()))?;
    for ((cn, cb), (hn, hb)) in cli_files.iter().zip(&http_files) {
        ensure(cn == hn && cb == hb, || format!("{cn} (CLI) and {hn} (HTTP) differ"))?;
    }
    ensure(cli_files.len() == http_files.len(), || "different file sets".into())?;
    ensure(stale["code"] == "stale_revision", || format!("stale edit body {stale}"))?;
    Ok(format!(
        "HTTP and CLI wrote {} identical files; stale revision rejected with 409",
        cli_files.len()
    ))
}
