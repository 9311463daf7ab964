//! Rotated-copy dataset generation and dataset verification.
//!
//! Every image with a same-stem `.txt` annotation is rotated by each
//! configured angle; the rotated image is written as `{stem}_rot{angle:03}.png`
//! next to its adjusted annotation. Images without annotations are skipped
//! and counted.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{ImageFormat, Rgb};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotate_image, rotate_tight_box, RotationSpec, DEFAULT_FILL, DEFAULT_TIGHTNESS};
use crate::labelio::{parse_annotation, parse_lines, serialize_annotation, LabelError, MIN_SERIALIZED_SIZE};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
pub const LABEL_EXTENSION: &str = "txt";

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O failure at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot decode or encode image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("annotation {path} is invalid: {source}")]
    Label { path: PathBuf, source: LabelError },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AugmentError + '_ {
    move |source| AugmentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Angles `step, 2*step, ...` strictly below 360.
pub fn angle_schedule(step: u32) -> Vec<u32> {
    if step == 0 {
        return Vec::new();
    }
    (1..).map(|i| i * step).take_while(|&a| a < 360).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Whole degrees, each in 1..=359.
    pub angles: Vec<u32>,
    pub tightness: f64,
    pub fill: Rgb<u8>,
    pub keep_originals: bool,
}

impl AugmentConfig {
    pub fn new(input_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            input_dir: input_dir.into(),
            output_dir: output_dir.into(),
            angles: angle_schedule(10),
            tightness: DEFAULT_TIGHTNESS,
            fill: DEFAULT_FILL,
            keep_originals: true,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.angles.is_empty() {
            return Err(AugmentError::InvalidConfig("no angles".into()));
        }
        if let Some(a) = self.angles.iter().find(|&&a| a == 0 || a >= 360) {
            return Err(AugmentError::InvalidConfig(format!("angle {a} outside (0, 360)")));
        }
        let distinct: BTreeSet<_> = self.angles.iter().collect();
        if distinct.len() != self.angles.len() {
            return Err(AugmentError::InvalidConfig("duplicate angles".into()));
        }
        RotationSpec::new(0.0, self.tightness).map_err(|e| AugmentError::InvalidConfig(e.to_string()))?;
        if self.input_dir == self.output_dir {
            return Err(AugmentError::InvalidConfig("output directory must differ from input".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub images_in: usize,
    pub images_out: usize,
    pub boxes_in: usize,
    pub boxes_out: usize,
    pub boxes_dropped: usize,
    pub missing_annotations: usize,
    pub elapsed_s: f64,
}

impl AugmentReport {
    fn merge(mut self, o: Self) -> Self {
        self.images_in += o.images_in;
        self.images_out += o.images_out;
        self.boxes_in += o.boxes_in;
        self.boxes_out += o.boxes_out;
        self.boxes_dropped += o.boxes_dropped;
        self.missing_annotations += o.missing_annotations;
        self
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase())
}

fn is_image(path: &Path) -> bool {
    extension(path).is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str()))
}

fn is_label(path: &Path) -> bool {
    extension(path).is_some_and(|e| e == LABEL_EXTENSION)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Regular files directly under `dir`, sorted by name.
fn list_files(dir: &Path) -> Result<Vec<PathBuf>, AugmentError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.file_type().map_err(io_err(dir))?.is_file() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

fn process_one(image_path: &Path, label_path: &Path, cfg: &AugmentConfig) -> Result<AugmentReport, AugmentError> {
    let text = fs::read_to_string(label_path).map_err(io_err(label_path))?;
    let boxes = parse_annotation(&text).map_err(|source| AugmentError::Label {
        path: label_path.to_path_buf(),
        source,
    })?;
    let img = image::open(image_path)
        .map_err(|e| AugmentError::Image {
            path: image_path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as f64, img.height() as f64);
    let name = stem(image_path);
    let mut report = AugmentReport {
        images_in: 1,
        boxes_in: boxes.len(),
        ..Default::default()
    };

    if cfg.keep_originals {
        let file = image_path.file_name().expect("listed files have names");
        let dst = cfg.output_dir.join(file);
        fs::copy(image_path, &dst).map_err(io_err(&dst))?;
        let dst = cfg.output_dir.join(format!("{name}.{LABEL_EXTENSION}"));
        fs::write(&dst, &text).map_err(io_err(&dst))?;
        report.images_out += 1;
        report.boxes_out += boxes.len();
    }

    for &angle in &cfg.angles {
        let spec = RotationSpec::new(angle as f64, cfg.tightness)
            .map_err(|e| AugmentError::InvalidConfig(e.to_string()))?;
        let mut kept = Vec::with_capacity(boxes.len());
        for b in &boxes {
            match rotate_tight_box(b, w, h, &spec) {
                Ok(Some(r)) if r.w >= MIN_SERIALIZED_SIZE && r.h >= MIN_SERIALIZED_SIZE => kept.push(r),
                Ok(_) => report.boxes_dropped += 1,
                Err(e) => return Err(AugmentError::InvalidConfig(e.to_string())),
            }
        }
        let out_stem = format!("{name}_rot{angle:03}");
        let rotated = rotate_image(&img, angle as f64, cfg.fill);
        let dst = cfg.output_dir.join(format!("{out_stem}.png"));
        rotated
            .save_with_format(&dst, ImageFormat::Png)
            .map_err(|e| AugmentError::Image {
                path: dst.clone(),
                message: e.to_string(),
            })?;
        let dst = cfg.output_dir.join(format!("{out_stem}.{LABEL_EXTENSION}"));
        let body = serialize_annotation(&kept).map_err(|source| AugmentError::Label {
            path: dst.clone(),
            source,
        })?;
        fs::write(&dst, body).map_err(io_err(&dst))?;
        report.images_out += 1;
        report.boxes_out += kept.len();
    }
    Ok(report)
}

pub fn generate_rotated_dataset(cfg: &AugmentConfig) -> Result<AugmentReport, AugmentError> {
    cfg.validate()?;
    let start = Instant::now();
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let files = list_files(&cfg.input_dir)?;
    let labels: BTreeMap<String, &PathBuf> = files.iter().filter(|p| is_label(p)).map(|p| (stem(p), p)).collect();

    let mut missing = 0;
    let mut work = Vec::new();
    for img in files.iter().filter(|p| is_image(p)) {
        match labels.get(&stem(img)) {
            Some(label) => work.push((img, *label)),
            None => missing += 1,
        }
    }

    let report = work
        .par_iter()
        .map(|(img, label)| process_one(img, label, cfg))
        .try_reduce(AugmentReport::default, |a, b| Ok(a.merge(b)))?;
    Ok(AugmentReport {
        missing_annotations: missing,
        elapsed_s: start.elapsed().as_secs_f64(),
        ..report
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineDefect {
    pub file: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub images: usize,
    pub labels: usize,
    pub pairs: usize,
    pub boxes: usize,
    pub unpaired_images: Vec<String>,
    pub unpaired_labels: Vec<String>,
    pub malformed_lines: Vec<LineDefect>,
    pub out_of_range: Vec<LineDefect>,
}

impl VerifyReport {
    pub fn defect_count(&self) -> usize {
        self.unpaired_images.len() + self.unpaired_labels.len() + self.malformed_lines.len() + self.out_of_range.len()
    }

    pub fn is_clean(&self) -> bool {
        self.defect_count() == 0
    }
}

/// Checks image/annotation pairing and every annotation line.
pub fn verify_dataset(dir: &Path) -> Result<VerifyReport, AugmentError> {
    let files = list_files(dir)?;
    let images: BTreeSet<String> = files.iter().filter(|p| is_image(p)).map(|p| stem(p)).collect();
    let labels: Vec<&PathBuf> = files.iter().filter(|p| is_label(p)).collect();
    let label_stems: BTreeSet<String> = labels.iter().map(|p| stem(p)).collect();

    let per_file: Vec<(usize, Vec<LineDefect>, Vec<LineDefect>)> = labels
        .par_iter()
        .map(|path| {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            let (mut boxes, mut malformed, mut range) = (0, Vec::new(), Vec::new());
            for r in parse_lines(&text) {
                match r {
                    Ok(_) => boxes += 1,
                    Err(LabelError::RangeViolation { line, field, value }) => range.push(LineDefect {
                        file: file.clone(),
                        line,
                        reason: format!("{field} = {value} out of range"),
                    }),
                    Err(LabelError::MalformedLine { line, reason }) => malformed.push(LineDefect {
                        file: file.clone(),
                        line,
                        reason,
                    }),
                    Err(other) => malformed.push(LineDefect {
                        file: file.clone(),
                        line: 0,
                        reason: other.to_string(),
                    }),
                }
            }
            Ok((boxes, malformed, range))
        })
        .collect::<Result<_, AugmentError>>()?;

    let mut report = VerifyReport {
        images: images.len(),
        labels: label_stems.len(),
        pairs: images.intersection(&label_stems).count(),
        unpaired_images: images.difference(&label_stems).cloned().collect(),
        unpaired_labels: label_stems.difference(&images).cloned().collect(),
        ..Default::default()
    };
    for (boxes, malformed, range) in per_file {
        report.boxes += boxes;
        report.malformed_lines.extend(malformed);
        report.out_of_range.extend(range);
    }
    Ok(report)
}
