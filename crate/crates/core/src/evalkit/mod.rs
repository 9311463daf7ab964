//! Detection evaluation at a 0.5 IoU gate and the incremental-catalog
//! benchmark.
//!
//! Matching is greedy in descending confidence: each prediction takes the
//! highest-IoU unmatched ground truth of its image and label. AP uses
//! all-point interpolation, i.e. the area under the precision envelope.

mod bench;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::iou;
use crate::labelio::{parse_lines, to_pixels, PixelBox};

pub use bench::{
    incremental_benchmark, tau_sweep, BenchmarkConfig, BenchmarkReport, BenchmarkStage, LabeledQuery, TauRow,
};

pub const DEFAULT_IOU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no class has ground truth or predictions")]
    NoClasses,
    #[error("I/O failure at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Registry(#[from] crate::registry::RegistryError),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthItem {
    pub image_id: String,
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionItem {
    pub image_id: String,
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    /// Position of the prediction in the input slice.
    pub pred_index: usize,
    pub confidence: f64,
    pub tp: bool,
    pub gt_index: Option<usize>,
}

/// Labels every prediction TP or FP. The result is in matching order:
/// confidence descending, ties in input order.
pub fn greedy_match(preds: &[PredictionItem], gts: &[GroundTruthItem], iou_threshold: f64) -> Vec<MatchOutcome> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|pi| {
            let p = &preds[pi];
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if taken[gi] || g.image_id != p.image_id || g.label != p.label {
                    continue;
                }
                let o = iou(&p.bbox, &g.bbox);
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((gi, o));
                }
            }
            let hit = best.filter(|&(_, o)| o >= iou_threshold);
            if let Some((gi, _)) = hit {
                taken[gi] = true;
            }
            MatchOutcome {
                pred_index: pi,
                confidence: p.confidence,
                tp: hit.is_some(),
                gt_index: hit.map(|(gi, _)| gi),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub label: String,
    pub ap: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub tp: usize,
    pub fp: usize,
    pub n_gt: usize,
}

/// AP of a TP/FP sequence already sorted by descending confidence.
pub fn average_precision(label: impl Into<String>, tp_sequence: &[bool], n_gt: usize) -> ApResult {
    let mut precision = Vec::with_capacity(tp_sequence.len());
    let mut recall = Vec::with_capacity(tp_sequence.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in tp_sequence {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 });
    }
    // Recall moves by exactly 1/n_gt at each TP, so the envelope area is the
    // sum of envelope precisions at TPs over n_gt.
    let mut envelope = precision.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let area: f64 = tp_sequence
        .iter()
        .zip(&envelope)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| p)
        .sum();
    let ap = if n_gt == 0 { 0.0 } else { (area / n_gt as f64).clamp(0.0, 1.0) };
    ApResult {
        label: label.into(),
        ap,
        precision,
        recall,
        tp,
        fp,
        n_gt,
    }
}

/// Per-class AP. Classes with neither ground truth nor predictions are
/// left out; ground-truth-free classes with predictions score 0.
pub fn evaluate(preds: &[PredictionItem], gts: &[GroundTruthItem], iou_threshold: f64) -> Vec<ApResult> {
    let outcomes = greedy_match(preds, gts, iou_threshold);
    let labels: BTreeSet<&str> = preds
        .iter()
        .map(|p| p.label.as_str())
        .chain(gts.iter().map(|g| g.label.as_str()))
        .collect();
    labels
        .into_iter()
        .map(|label| {
            let seq: Vec<bool> = outcomes
                .iter()
                .filter(|o| preds[o.pred_index].label == label)
                .map(|o| o.tp)
                .collect();
            let n_gt = gts.iter().filter(|g| g.label == label).count();
            average_precision(label, &seq, n_gt)
        })
        .collect()
}

pub fn map50(results: &[ApResult]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::NoClasses);
    }
    Ok(results.iter().map(|r| r.ap).sum::<f64>() / results.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub images: usize,
    pub iou_threshold: f64,
    pub map: f64,
    pub classes: Vec<ApResult>,
}

fn read(path: &Path) -> Result<String, EvalError> {
    fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn label_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, EvalError> {
    let io = |source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.insert(stem, path);
        }
    }
    Ok(out)
}

/// Parses prediction lines `class x_c y_c w h confidence`.
pub fn parse_predictions(image_id: &str, text: &str, path: &Path) -> Result<Vec<PredictionItem>, EvalError> {
    let malformed = |line, reason: String| EvalError::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 6 {
            return Err(malformed(idx + 1, format!("expected 6 fields, found {}", tokens.len())));
        }
        let conf: f64 = tokens[5]
            .parse()
            .map_err(|_| malformed(idx + 1, format!("'{}' is not a number", tokens[5])))?;
        if !(0.0..=1.0).contains(&conf) {
            return Err(malformed(idx + 1, format!("confidence {conf} outside [0, 1]")));
        }
        let b = parse_lines(&tokens[..5].join(" "))
            .next()
            .expect("non-empty line")
            .map_err(|e| malformed(idx + 1, e.to_string()))?;
        out.push(PredictionItem {
            image_id: image_id.to_string(),
            label: b.class_id.to_string(),
            bbox: to_pixels(&b, 1.0, 1.0).map_err(|e| malformed(idx + 1, e.to_string()))?,
            confidence: conf,
        });
    }
    Ok(out)
}

/// Ground-truth files and 6-column prediction files matched by file name.
/// Boxes stay in normalized units; IoU does not depend on the image size.
pub fn evaluate_dirs(gt_dir: &Path, pred_dir: &Path, iou_threshold: f64) -> Result<EvalSummary, EvalError> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(EvalError::InvalidConfig(format!("IoU threshold {iou_threshold} outside (0, 1]")));
    }
    let gt_files = label_files(gt_dir)?;
    let pred_files = label_files(pred_dir)?;
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for (id, path) in &gt_files {
        for r in parse_lines(&read(path)?) {
            let b = r.map_err(|e| EvalError::Malformed {
                path: path.clone(),
                line: 0,
                reason: e.to_string(),
            })?;
            gts.push(GroundTruthItem {
                image_id: id.clone(),
                label: b.class_id.to_string(),
                bbox: to_pixels(&b, 1.0, 1.0).expect("unit size is valid"),
            });
        }
    }
    for (id, path) in &pred_files {
        preds.extend(parse_predictions(id, &read(path)?, path)?);
    }
    let classes = evaluate(&preds, &gts, iou_threshold);
    let map = map50(&classes)?;
    let images = gt_files.keys().chain(pred_files.keys()).collect::<BTreeSet<_>>().len();
    Ok(EvalSummary {
        images,
        iou_threshold,
        map,
        classes,
    })
}
