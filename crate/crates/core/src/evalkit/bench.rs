//! Incremental-catalog benchmark and threshold sweep on synthetic,
//! class-separable embeddings.
//!
//! Stage 0 registers the base classes; every later stage registers one
//! batch. After each stage the benchmark measures top-1 accuracy on held-out
//! samples of all registered classes, the unknown rate on classes that are
//! never registered, and the wall-clock time of the registration itself.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EvalError;
use crate::embedding::{Embedding, LabelOracleEmbedder, DEFAULT_DIM};
use crate::labelio::{serialize_annotation, NormalizedBox};
use crate::pipeline::{CheckoutEngine, CheckoutImage, FixtureDetector, MemoryPatchStore};
use crate::registry::{decide, Catalog, ClassifyParams, Decision, NewSku, Registry, SearchMode};
use crate::vindex::HnswParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub base_class_count: usize,
    pub batch_size: usize,
    pub batch_count: usize,
    pub dim: usize,
    pub noise: f64,
    pub references_per_class: usize,
    pub eval_samples_per_class: usize,
    pub unknown_class_count: usize,
    pub tau: f64,
    pub k: usize,
    pub search: SearchMode,
    pub seed: u64,
    /// Route evaluation through rendered checkout images, the fixture
    /// detector and the oracle provider instead of embedding directly.
    pub through_pipeline: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            base_class_count: 100,
            batch_size: 10,
            batch_count: 4,
            dim: DEFAULT_DIM,
            noise: 0.1,
            references_per_class: 5,
            eval_samples_per_class: 10,
            unknown_class_count: 100,
            tau: 0.75,
            k: 5,
            search: SearchMode::Ann,
            seed: 42,
            through_pipeline: false,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let counts = [
            ("base_class_count", self.base_class_count),
            ("batch_size", self.batch_size),
            ("batch_count", self.batch_count),
            ("dim", self.dim),
            ("references_per_class", self.references_per_class),
            ("eval_samples_per_class", self.eval_samples_per_class),
            ("unknown_class_count", self.unknown_class_count),
            ("k", self.k),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(EvalError::InvalidConfig(format!("{name} must be >= 1")));
        }
        if self.total_classes() > u16::MAX as usize {
            return Err(EvalError::InvalidConfig("too many classes".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(EvalError::InvalidConfig(format!("noise {} must be finite and >= 0", self.noise)));
        }
        self.params().validate()?;
        Ok(())
    }

    fn registered_total(&self) -> usize {
        self.base_class_count + self.batch_size * self.batch_count
    }

    fn total_classes(&self) -> usize {
        self.registered_total() + self.unknown_class_count
    }

    /// Classes registered once `stage` has completed.
    pub fn categories_at(&self, stage: usize) -> usize {
        self.base_class_count + stage * self.batch_size
    }

    fn params(&self) -> ClassifyParams {
        ClassifyParams {
            tau: self.tau,
            k: self.k,
            search: self.search,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkStage {
    pub stage: usize,
    pub categories: usize,
    pub top1_accuracy: f64,
    pub unknown_recall: f64,
    pub update_duration_ms: f64,
    pub index_size: usize,
    /// Accuracy on the base classes with exact search.
    pub base_accuracy_exact: f64,
    /// SHA-256 of the serialized exact-search decisions on base-class samples.
    pub base_decisions_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub stages: Vec<BenchmarkStage>,
    pub elapsed_s: f64,
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "stage,categories,top1_accuracy,unknown_recall,update_duration_ms,index_size,base_accuracy_exact\n",
        );
        for s in &self.stages {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.3},{},{:.6}\n",
                s.stage,
                s.categories,
                s.top1_accuracy,
                s.unknown_recall,
                s.update_duration_ms,
                s.index_size,
                s.base_accuracy_exact
            ));
        }
        out
    }
}

fn sku_id(class: usize) -> String {
    format!("class-{class:05}")
}

fn eval_draw(sample: usize) -> u64 {
    1_000_000 + sample as u64
}

fn new_sku(oracle: &LabelOracleEmbedder, class: usize, refs: usize) -> NewSku {
    NewSku {
        sku_id: sku_id(class),
        name: format!("Synthetic {class}"),
        price_cents: 100 + class as u64,
        category: "synthetic".into(),
        references: (0..refs).map(|d| oracle.sample(class as u32, d as u64)).collect(),
    }
}

const SLOT: u32 = 64;
const PER_ROW: usize = 8;

/// One checkout image per chunk of classes: a row of solid class-colored
/// squares, each with a speckle unique to (class, sample) so the oracle's
/// draw differs per sample.
fn render(classes: &[usize], sample: usize) -> (RgbImage, String) {
    let w = SLOT * classes.len() as u32;
    let mut img = RgbImage::from_pixel(w, SLOT, Rgb([255, 255, 255]));
    let mut boxes = Vec::with_capacity(classes.len());
    for (i, &c) in classes.iter().enumerate() {
        let x0 = SLOT * i as u32 + 4;
        let color = LabelOracleEmbedder::class_color(c as u16);
        for y in 4..SLOT - 4 {
            for x in x0..x0 + SLOT - 8 {
                img.put_pixel(x, y, color);
            }
        }
        let [a, b] = (sample as u16).to_le_bytes();
        img.put_pixel(x0 + 1, 5, Rgb([a, b, 1]));
        boxes.push(
            NormalizedBox::new(
                c as u32,
                (x0 as f64 + (SLOT - 8) as f64 / 2.0) / w as f64,
                0.5,
                (SLOT - 8) as f64 / w as f64,
                (SLOT - 8) as f64 / SLOT as f64,
            )
            .expect("slot boxes are inside the image"),
        );
    }
    (img, serialize_annotation(&boxes).expect("valid boxes"))
}

/// Decisions for `samples_per_class` held-out samples of each class, in
/// (class, sample) order.
fn decisions(
    cfg: &BenchmarkConfig,
    oracle: &LabelOracleEmbedder,
    registry: &Arc<Registry>,
    classes: &[usize],
    params: &ClassifyParams,
    through_pipeline: bool,
) -> Result<Vec<(usize, Decision)>, EvalError> {
    if !through_pipeline {
        let catalog = registry.read();
        return classes
            .par_iter()
            .flat_map_iter(|&c| (0..cfg.eval_samples_per_class).map(move |s| (c, s)))
            .map(|(c, s)| Ok((c, catalog.classify(&oracle.sample(c as u32, eval_draw(s)), params)?)))
            .collect();
    }

    let mut images = Vec::new();
    let mut labels = HashMap::new();
    for s in 0..cfg.eval_samples_per_class {
        for (j, chunk) in classes.chunks(PER_ROW).enumerate() {
            let id = format!("s{s}-r{j}");
            let (img, text) = render(chunk, s);
            labels.insert(id.clone(), text);
            images.push((CheckoutImage::new(id, img), chunk.to_vec()));
        }
    }
    let engine = CheckoutEngine::new(
        registry.clone(),
        Arc::new(FixtureDetector::from_map(labels)),
        Arc::new(oracle.clone()),
        Arc::new(MemoryPatchStore::new()),
    );
    let receipts = images
        .par_iter()
        .map(|(img, chunk)| Ok((chunk, engine.process_checkout(img, params)?)))
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(receipts
        .into_iter()
        .flat_map(|(chunk, r)| chunk.iter().copied().zip(r.items.into_iter().map(|i| i.decision)))
        .collect())
}

fn correct(class: usize, d: &Decision) -> bool {
    matches!(d, Decision::Match { sku_id: id, .. } if *id == sku_id(class))
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

pub fn incremental_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport, EvalError> {
    cfg.validate()?;
    let start = Instant::now();
    let oracle = LabelOracleEmbedder::new(cfg.seed, cfg.dim, cfg.noise);
    let hnsw = HnswParams {
        rng_seed: cfg.seed,
        ..HnswParams::default()
    };
    let registry = Arc::new(Registry::new(Catalog::new(cfg.dim, hnsw)?));
    let params = cfg.params();
    let exact = ClassifyParams {
        search: SearchMode::Exact,
        ..params
    };
    let base: Vec<usize> = (0..cfg.base_class_count).collect();
    let unknown: Vec<usize> = (cfg.registered_total()..cfg.total_classes()).collect();

    let mut stages = Vec::with_capacity(cfg.batch_count + 1);
    for stage in 0..=cfg.batch_count {
        let range = if stage == 0 {
            0..cfg.base_class_count
        } else {
            cfg.categories_at(stage - 1)..cfg.categories_at(stage)
        };
        let batch: Vec<NewSku> = range.map(|c| new_sku(&oracle, c, cfg.references_per_class)).collect();
        let t = Instant::now();
        registry.write().register_batch(batch)?;
        let update_duration_ms = t.elapsed().as_secs_f64() * 1e3;

        let registered: Vec<usize> = (0..cfg.categories_at(stage)).collect();
        let known = decisions(cfg, &oracle, &registry, &registered, &params, cfg.through_pipeline)?;
        let unk = decisions(cfg, &oracle, &registry, &unknown, &params, cfg.through_pipeline)?;
        let base_exact = decisions(cfg, &oracle, &registry, &base, &exact, false)?;

        let base_only: Vec<&Decision> = base_exact.iter().map(|(_, d)| d).collect();
        let digest = Sha256::digest(serde_json::to_vec(&base_only).expect("decisions serialize"));
        stages.push(BenchmarkStage {
            stage,
            categories: cfg.categories_at(stage),
            top1_accuracy: ratio(known.iter().filter(|(c, d)| correct(*c, d)).count(), known.len()),
            unknown_recall: ratio(unk.iter().filter(|(_, d)| !d.is_match()).count(), unk.len()),
            update_duration_ms,
            index_size: registry.read().index().len(),
            base_accuracy_exact: ratio(base_exact.iter().filter(|(c, d)| correct(*c, d)).count(), base_exact.len()),
            base_decisions_sha256: hex::encode(digest),
        });
    }
    Ok(BenchmarkReport {
        config: cfg.clone(),
        stages,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// A validation query; `truth` is `None` for products not in the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub embedding: Embedding,
    pub truth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub tau: f64,
    pub correct_match: usize,
    pub wrong_match: usize,
    pub false_unknown: usize,
    pub correct_unknown: usize,
    /// Correct matches over all matches; 1 when nothing matched.
    pub precision: f64,
    /// Correct matches over queries of registered products.
    pub recall: f64,
}

/// Evaluates every threshold against one exact top-k search per query.
pub fn tau_sweep(
    catalog: &Catalog,
    queries: &[LabeledQuery],
    taus: &[f64],
    k: usize,
) -> Result<Vec<TauRow>, EvalError> {
    if taus.is_empty() {
        return Err(EvalError::InvalidConfig("empty tau grid".into()));
    }
    let search = ClassifyParams {
        tau: 0.0,
        k: k.max(1),
        search: SearchMode::Exact,
    };
    let hits = queries
        .par_iter()
        .map(|q| catalog.search(&q.embedding, &search))
        .collect::<Result<Vec<_>, _>>()?;
    let registered = queries.iter().filter(|q| q.truth.is_some()).count();
    Ok(taus
        .iter()
        .map(|&tau| {
            let mut row = TauRow {
                tau,
                correct_match: 0,
                wrong_match: 0,
                false_unknown: 0,
                correct_unknown: 0,
                precision: 1.0,
                recall: 0.0,
            };
            for (q, h) in queries.iter().zip(&hits) {
                match (decide(h, tau), &q.truth) {
                    (Decision::Match { sku_id, .. }, Some(t)) if sku_id == *t => row.correct_match += 1,
                    (Decision::Match { .. }, _) => row.wrong_match += 1,
                    (Decision::Unknown { .. }, Some(_)) => row.false_unknown += 1,
                    (Decision::Unknown { .. }, None) => row.correct_unknown += 1,
                }
            }
            let matched = row.correct_match + row.wrong_match;
            if matched > 0 {
                row.precision = row.correct_match as f64 / matched as f64;
            }
            row.recall = ratio(row.correct_match, registered);
            row
        })
        .collect())
}
