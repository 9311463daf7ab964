//! Detector seam: a fixture detector that replays annotation files and an
//! adapter for an external detection service.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CheckoutImage;
use crate::labelio::{parse_annotation, to_pixels, LabelError, PixelBox};
use crate::remote::{RemoteClient, RemoteError};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("no annotation for image '{0}'")]
    MissingAnnotation(String),
    #[error("annotation for '{image}' is invalid: {source}")]
    Label { image: String, source: LabelError },
    #[error("detector I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("detector unreachable: {0}")]
    Unreachable(String),
    #[error("detector timed out")]
    Timeout,
    #[error("malformed detector response: {0}")]
    MalformedResponse(String),
}

impl From<RemoteError> for DetectorError {
    fn from(e: RemoteError) -> Self {
        match e {
            RemoteError::Timeout => DetectorError::Timeout,
            RemoteError::Unreachable(m) => DetectorError::Unreachable(m),
            RemoteError::Status(s) => DetectorError::Unreachable(format!("status {s}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub detector_confidence: f64,
}

pub trait Detector: Send + Sync {
    fn detect(&self, image: &CheckoutImage) -> Result<Vec<Detection>, DetectorError>;
}

#[derive(Debug, Clone)]
enum FixtureSource {
    Dir(PathBuf),
    Memory(HashMap<String, String>),
}

/// Returns the annotated boxes of an image with confidence 1.0. Annotations
/// come from `{dir}/{image_id}.txt` or from an in-memory table.
#[derive(Debug, Clone)]
pub struct FixtureDetector {
    source: FixtureSource,
}

impl FixtureDetector {
    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            source: FixtureSource::Dir(dir.into()),
        }
    }

    /// `labels` maps image ids to annotation text.
    pub fn from_map(labels: HashMap<String, String>) -> Self {
        Self {
            source: FixtureSource::Memory(labels),
        }
    }

    fn text(&self, image_id: &str) -> Result<String, DetectorError> {
        match &self.source {
            FixtureSource::Dir(dir) => {
                let path = dir.join(format!("{image_id}.txt"));
                match std::fs::read_to_string(&path) {
                    Ok(t) => Ok(t),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                        Err(DetectorError::MissingAnnotation(image_id.to_string()))
                    }
                    Err(e) => Err(e.into()),
                }
            }
            FixtureSource::Memory(map) => map
                .get(image_id)
                .cloned()
                .ok_or_else(|| DetectorError::MissingAnnotation(image_id.to_string())),
        }
    }
}

impl Detector for FixtureDetector {
    fn detect(&self, image: &CheckoutImage) -> Result<Vec<Detection>, DetectorError> {
        let label = |source| DetectorError::Label {
            image: image.id.clone(),
            source,
        };
        let boxes = parse_annotation(&self.text(&image.id)?).map_err(label)?;
        let (w, h) = (image.pixels.width() as f64, image.pixels.height() as f64);
        boxes
            .iter()
            .map(|b| {
                Ok(Detection {
                    bbox: to_pixels(b, w, h).map_err(label)?,
                    detector_confidence: 1.0,
                })
            })
            .collect()
    }
}

#[derive(Deserialize)]
struct WireBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    confidence: f64,
}

/// Posts the image to a detection service and validates its boxes.
#[derive(Debug, Clone)]
pub struct RemoteDetector {
    client: RemoteClient,
}

impl RemoteDetector {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            client: RemoteClient::new(endpoint, timeout),
        }
    }
}

/// Parses and validates a detection response for an image of the given size.
pub fn parse_detections(body: &str, img_w: f64, img_h: f64) -> Result<Vec<Detection>, DetectorError> {
    let wire: Vec<WireBox> =
        serde_json::from_str(body).map_err(|e| DetectorError::MalformedResponse(e.to_string()))?;
    wire.into_iter()
        .enumerate()
        .map(|(i, w)| {
            let bbox = PixelBox::new(w.x_min, w.y_min, w.x_max, w.y_max);
            if !bbox.is_valid() {
                return Err(DetectorError::MalformedResponse(format!("box {i} is degenerate: {bbox:?}")));
            }
            if !(0.0..=1.0).contains(&w.confidence) {
                return Err(DetectorError::MalformedResponse(format!(
                    "box {i} confidence {} outside [0, 1]",
                    w.confidence
                )));
            }
            if bbox.x_max <= 0.0 || bbox.y_max <= 0.0 || bbox.x_min >= img_w || bbox.y_min >= img_h {
                return Err(DetectorError::MalformedResponse(format!("box {i} lies outside the image")));
            }
            Ok(Detection {
                bbox,
                detector_confidence: w.confidence,
            })
        })
        .collect()
}

impl Detector for RemoteDetector {
    fn detect(&self, image: &CheckoutImage) -> Result<Vec<Detection>, DetectorError> {
        let body = self.client.post_image(&image.pixels)?;
        parse_detections(&body, image.pixels.width() as f64, image.pixels.height() as f64)
    }
}
