//! Payload-carrying vector index over unit vectors.
//!
//! Scores are cosine similarities computed as dot products of stored unit
//! vectors (`f32` storage, `f64` accumulation). [`VectorIndex::search_exact`]
//! is a full scan and serves as the oracle for the HNSW graph behind
//! [`VectorIndex::search_ann`]. Removal tombstones a record; once 20% of the
//! slots are tombstones the graph is rebuilt from the survivors.

mod hnsw;
mod snapshot;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{normalize, Embedding, EmbeddingError};
use hnsw::Graph;

pub use snapshot::{SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("invalid HNSW parameters: {0}")]
    InvalidParams(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("snapshot I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported snapshot version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("snapshot checksum mismatch")]
    ChecksumMismatch,
    #[error("not a snapshot file: {0}")]
    Corrupt(String),
}

impl From<EmbeddingError> for IndexError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::DimMismatch { expected, got } => Self::DimMismatch { expected, got },
            _ => Self::ZeroVector,
        }
    }
}

/// Catalog metadata stored with every vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub sku_id: String,
    pub name: String,
    pub price_cents: u64,
    pub category: String,
    /// Free-form extra metadata, empty by default.
    #[serde(default)]
    pub meta: String,
}

impl Payload {
    pub fn new(
        sku_id: impl Into<String>,
        name: impl Into<String>,
        price_cents: u64,
        category: impl Into<String>,
    ) -> Self {
        Self {
            sku_id: sku_id.into(),
            name: name.into(),
            price_cents,
            category: category.into(),
            meta: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub rng_seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 64,
            rng_seed: 42,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.m < 2 {
            return Err(IndexError::InvalidParams(format!("M = {} < 2", self.m)));
        }
        if self.ef_construction < self.m {
            return Err(IndexError::InvalidParams(format!(
                "ef_construction = {} < M = {}",
                self.ef_construction, self.m
            )));
        }
        if self.ef_search < 1 {
            return Err(IndexError::InvalidParams("ef_search must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub record_id: u64,
    pub score: f64,
    pub payload: Payload,
}

/// Borrowed view of one live record.
#[derive(Debug, Clone, Copy)]
pub struct RecordRef<'a> {
    pub record_id: u64,
    pub vector: &'a [f32],
    pub payload: &'a Payload,
}

#[derive(Debug, Clone)]
struct Slot {
    record_id: u64,
    payload: Payload,
    deleted: bool,
}

/// Fraction of tombstoned slots that triggers a rebuild.
const COMPACT_RATIO: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    params: HnswParams,
    slots: Vec<Slot>,
    vectors: Vec<f32>,
    by_id: HashMap<u64, u32>,
    graph: Graph,
    next_id: u64,
    deleted: usize,
}

/// Dot product of a query with a stored row, accumulated in `f64` with a
/// fixed lane order so every caller gets bit-identical scores.
#[inline]
pub(crate) fn dot(q: &[f64], v: &[f32]) -> f64 {
    let mut acc = [0.0f64; 8];
    let qc = q.chunks_exact(8);
    let vc = v.chunks_exact(8);
    let (qr, vr) = (qc.remainder(), vc.remainder());
    for (a, b) in qc.zip(vc) {
        for i in 0..8 {
            acc[i] += a[i] * b[i] as f64;
        }
    }
    let mut tail = 0.0;
    for (a, b) in qr.iter().zip(vr) {
        tail += a * *b as f64;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

impl VectorIndex {
    pub fn new(dim: usize, params: HnswParams) -> Result<Self, IndexError> {
        params.validate()?;
        if dim == 0 || dim > u16::MAX as usize {
            return Err(IndexError::InvalidParams(format!("dimension {dim} out of range")));
        }
        Ok(Self {
            dim,
            params,
            slots: Vec::new(),
            vectors: Vec::new(),
            by_id: HashMap::new(),
            graph: Graph::new(&params),
            next_id: 1,
            deleted: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    /// Changes the query beam width; the graph is unaffected.
    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef.max(1);
    }

    pub fn len(&self) -> usize {
        self.slots.len() - self.deleted
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn row(&self, slot: u32) -> &[f32] {
        let start = slot as usize * self.dim;
        &self.vectors[start..start + self.dim]
    }

    /// Normalizes `vector` and stores it with `payload`; returns the new id.
    pub fn insert(&mut self, vector: &Embedding, payload: Payload) -> Result<u64, IndexError> {
        if vector.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: vector.dim(),
            });
        }
        if payload.sku_id.is_empty() {
            return Err(IndexError::InvalidPayload("sku_id must not be empty".into()));
        }
        let unit = normalize(vector)?;
        let id = self.next_id;
        self.insert_raw(id, unit.to_f32(), payload);
        Ok(id)
    }

    fn insert_raw(&mut self, record_id: u64, vector: Vec<f32>, payload: Payload) {
        debug_assert_eq!(vector.len(), self.dim);
        let slot = self.slots.len() as u32;
        self.vectors.extend_from_slice(&vector);
        self.slots.push(Slot {
            record_id,
            payload,
            deleted: false,
        });
        self.by_id.insert(record_id, slot);
        self.next_id = self.next_id.max(record_id + 1);
        self.graph.insert(slot, self.dim, &self.vectors);
    }

    pub fn get(&self, record_id: u64) -> Option<RecordRef<'_>> {
        let &slot = self.by_id.get(&record_id)?;
        let s = &self.slots[slot as usize];
        Some(RecordRef {
            record_id,
            vector: self.row(slot),
            payload: &s.payload,
        })
    }

    pub fn contains(&self, record_id: u64) -> bool {
        self.by_id.contains_key(&record_id)
    }

    /// Live records in insertion order.
    pub fn records(&self) -> impl Iterator<Item = RecordRef<'_>> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.deleted)
            .map(|(i, s)| RecordRef {
                record_id: s.record_id,
                vector: self.row(i as u32),
                payload: &s.payload,
            })
    }

    pub fn update_payload(&mut self, record_id: u64, payload: Payload) -> bool {
        match self.by_id.get(&record_id) {
            Some(&slot) => {
                self.slots[slot as usize].payload = payload;
                true
            }
            None => false,
        }
    }

    pub fn remove(&mut self, record_id: u64) -> bool {
        let Some(slot) = self.by_id.remove(&record_id) else {
            return false;
        };
        self.slots[slot as usize].deleted = true;
        self.deleted += 1;
        if self.deleted as f64 >= COMPACT_RATIO * self.slots.len() as f64 {
            self.compact();
        }
        true
    }

    /// Rebuilds the graph from live records in insertion order with the
    /// original seed, so the result depends only on the survivors.
    fn compact(&mut self) {
        let live: Vec<(u64, Vec<f32>, Payload)> = self
            .records()
            .map(|r| (r.record_id, r.vector.to_vec(), r.payload.clone()))
            .collect();
        let next_id = self.next_id;
        self.slots.clear();
        self.vectors.clear();
        self.by_id.clear();
        self.deleted = 0;
        self.graph = Graph::new(&self.params);
        for (id, v, p) in live {
            self.insert_raw(id, v, p);
        }
        self.next_id = next_id;
    }

    fn prepare_query(&self, query: &Embedding) -> Result<Vec<f64>, IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        Ok(normalize(query)?.values().to_vec())
    }

    fn hit(&self, slot: u32, score: f64) -> SearchHit {
        let s = &self.slots[slot as usize];
        SearchHit {
            record_id: s.record_id,
            score: score.clamp(-1.0, 1.0),
            payload: s.payload.clone(),
        }
    }

    fn sort_hits(hits: &mut [SearchHit]) {
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.record_id.cmp(&b.record_id)));
    }

    /// True top-`k` by cosine similarity; ties go to the smaller record id.
    pub fn search_exact(&self, query: &Embedding, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        let q = self.prepare_query(query)?;
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(f64, u64, u32)> = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.deleted)
            .map(|(i, s)| (dot(&q, self.row(i as u32)), s.record_id, i as u32))
            .collect();
        let cmp = |a: &(f64, u64, u32), b: &(f64, u64, u32)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored.into_iter().map(|(s, _, slot)| self.hit(slot, s)).collect())
    }

    /// Approximate top-`k` through the HNSW graph.
    pub fn search_ann(&self, query: &Embedding, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        let q = self.prepare_query(query)?;
        let want = k.min(self.len());
        if want == 0 {
            return Ok(Vec::new());
        }
        let mut ef = self.params.ef_search.max(k);
        loop {
            let found = self.graph.search(&q, ef, self.dim, &self.vectors);
            let mut hits: Vec<SearchHit> = found
                .into_iter()
                .filter(|&(_, slot)| !self.slots[slot as usize].deleted)
                .map(|(s, slot)| self.hit(slot, s))
                .collect();
            // Tombstones can crowd out live results; widen the beam until
            // enough survivors are found or the whole graph was in reach.
            if hits.len() >= want || ef >= self.slots.len() {
                Self::sort_hits(&mut hits);
                hits.truncate(k);
                return Ok(hits);
            }
            ef = (ef * 2).min(self.slots.len());
        }
    }
}
