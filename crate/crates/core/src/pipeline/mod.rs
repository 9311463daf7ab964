//! Checkout inference: detect, crop, embed, classify, receipt.
//!
//! Per-box crops and embeddings run in parallel and are merged in detection
//! order. Classification happens under one read view of the catalog; the
//! flags for unknown items are committed afterwards in a single write, and
//! only if every earlier stage succeeded.

mod detector;
mod store;

use std::sync::Arc;
use std::time::Instant;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{embed, Embedding, EmbeddingProvider, ProviderError};
use crate::geometry::{crop_and_pad, CropSpec, GeometryError, Patch};
use crate::labelio::PixelBox;
use crate::registry::{ClassifyParams, Decision, Registry, RegistryError};

pub use detector::{parse_detections, Detection, Detector, DetectorError, FixtureDetector, RemoteDetector};
pub use store::{DiskPatchStore, MemoryPatchStore, PatchStore};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckoutImage {
    pub id: String,
    pub pixels: RgbImage,
}

impl CheckoutImage {
    pub fn new(id: impl Into<String>, pixels: RgbImage) -> Self {
        Self { id: id.into(), pixels }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("checkout image is empty")]
    EmptyImage,
    #[error("provider dimension {provider} does not match catalog dimension {catalog}")]
    DimMismatch { provider: usize, catalog: usize },
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("crop failed: {0}")]
    Crop(#[from] GeometryError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("patch store failed: {0}")]
    PatchStore(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineItem {
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub detector_confidence: f64,
    pub decision: Decision,
    /// Set for unknown items.
    pub flag_id: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub detect_ms: f64,
    pub crop_ms: f64,
    pub embed_ms: f64,
    pub search_ms: f64,
    pub total_ms: f64,
}

impl Timings {
    /// Time spent outside the detector and the embedder.
    pub fn overhead_ms(&self) -> f64 {
        self.total_ms - self.detect_ms - self.embed_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Receipt {
    pub image_id: String,
    pub items: Vec<LineItem>,
    pub subtotal_cents: u64,
    pub unknown_count: usize,
    pub flag_ids: Vec<String>,
    pub timings: Timings,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

pub struct CheckoutEngine {
    registry: Arc<Registry>,
    detector: Arc<dyn Detector>,
    provider: Arc<dyn EmbeddingProvider>,
    patches: Arc<dyn PatchStore>,
    crop: CropSpec,
}

impl CheckoutEngine {
    pub fn new(
        registry: Arc<Registry>,
        detector: Arc<dyn Detector>,
        provider: Arc<dyn EmbeddingProvider>,
        patches: Arc<dyn PatchStore>,
    ) -> Self {
        Self {
            registry,
            detector,
            provider,
            patches,
            crop: CropSpec::default(),
        }
    }

    pub fn with_crop(mut self, crop: CropSpec) -> Self {
        self.crop = crop;
        self
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider {
        &*self.provider
    }

    pub fn patches(&self) -> &dyn PatchStore {
        &*self.patches
    }

    pub fn crop_spec(&self) -> CropSpec {
        self.crop
    }

    pub fn process_checkout(&self, image: &CheckoutImage, params: &ClassifyParams) -> Result<Receipt, PipelineError> {
        let start = Instant::now();
        params.validate()?;
        if image.pixels.width() == 0 || image.pixels.height() == 0 {
            return Err(PipelineError::EmptyImage);
        }
        let catalog_dim = self.registry.read().dim();
        if self.provider.dim() != catalog_dim {
            return Err(PipelineError::DimMismatch {
                provider: self.provider.dim(),
                catalog: catalog_dim,
            });
        }

        let t = Instant::now();
        let detections = self.detector.detect(image)?;
        let detect_ms = ms(t);

        let t = Instant::now();
        let patches: Vec<Patch> = detections
            .par_iter()
            .map(|d| crop_and_pad(&image.pixels, &image.id, &d.bbox, self.crop))
            .collect::<Result<_, _>>()?;
        let crop_ms = ms(t);

        let t = Instant::now();
        let embeddings: Vec<Embedding> = patches
            .par_iter()
            .map(|p| embed(&*self.provider, p))
            .collect::<Result<_, _>>()?;
        let embed_ms = ms(t);

        let t = Instant::now();
        let decisions: Vec<Decision> = {
            let catalog = self.registry.read();
            embeddings
                .iter()
                .map(|e| catalog.classify(e, params))
                .collect::<Result<_, _>>()?
        };
        let search_ms = ms(t);

        let unknown: Vec<usize> = (0..decisions.len()).filter(|&i| !decisions[i].is_match()).collect();
        let patch_refs: Vec<String> = unknown
            .iter()
            .map(|&i| self.patches.put(&patches[i]))
            .collect::<Result<_, _>>()?;
        let mut flag_for = vec![None; decisions.len()];
        if !unknown.is_empty() {
            let mut catalog = self.registry.write();
            for (&i, patch_ref) in unknown.iter().zip(patch_refs) {
                let best = decisions[i].best().map(|(id, s)| (id.to_string(), s));
                let flag = catalog.create_flag(embeddings[i].clone(), patch_ref, best);
                flag_for[i] = Some(flag.flag_id);
            }
        }

        let mut subtotal_cents = 0u64;
        let items: Vec<LineItem> = detections
            .iter()
            .zip(decisions)
            .zip(flag_for)
            .map(|((d, decision), flag_id)| {
                if let Decision::Match { price_cents, .. } = decision {
                    subtotal_cents += price_cents;
                }
                LineItem {
                    bbox: d.bbox,
                    detector_confidence: d.detector_confidence,
                    decision,
                    flag_id,
                }
            })
            .collect();
        let flag_ids: Vec<String> = items.iter().filter_map(|i| i.flag_id.clone()).collect();
        Ok(Receipt {
            image_id: image.id.clone(),
            unknown_count: flag_ids.len(),
            items,
            subtotal_cents,
            flag_ids,
            timings: Timings {
                detect_ms,
                crop_ms,
                embed_ms,
                search_ms,
                total_ms: ms(start),
            },
        })
    }
}
