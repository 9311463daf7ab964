//! SKU catalog and open-set classifier.
//!
//! Each SKU is indexed as a single centroid record, the normalized mean of
//! its reference embeddings. The references themselves are retained so the
//! centroid can be recomputed when an operator files an unknown detection
//! under an existing SKU. Adding a SKU inserts one record and touches no
//! other record.
//!
//! A query is a match when its best score reaches `tau`; otherwise it is
//! unknown and may be queued as a [`UnknownFlag`] for an operator.

mod persist;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use parking_lot::{RwLock, RwLockReadGuard, RwLockWriteGuard};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{centroid, Embedding, EmbeddingError};
use crate::vindex::{HnswParams, IndexError, Payload, SearchHit, VectorIndex};

pub use persist::{CatalogDocument, CATALOG_FILE, CATALOG_VERSION, INDEX_FILE};

pub const DEFAULT_TAU: f64 = 0.75;
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("SKU '{0}' is already registered")]
    DuplicateSku(String),
    #[error("SKU '{0}' has no reference embeddings")]
    EmptyReferences(String),
    #[error("unknown SKU '{0}'")]
    UnknownSku(String),
    #[error("unknown flag '{0}'")]
    UnknownFlagId(String),
    #[error("flag '{0}' is not open")]
    FlagNotOpen(String),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("catalog I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog document is invalid: {0}")]
    Document(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkuRecord {
    pub sku_id: String,
    pub name: String,
    pub price_cents: u64,
    pub category: String,
    /// The indexed centroid, exactly as stored (f32-rounded).
    pub centroid: Embedding,
    pub reference_count: usize,
    pub registered_at: DateTime<Utc>,
}

/// Registration request for one SKU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSku {
    pub sku_id: String,
    pub name: String,
    pub price_cents: u64,
    #[serde(default)]
    pub category: String,
    pub references: Vec<Embedding>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Ann,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyParams {
    pub tau: f64,
    pub k: usize,
    #[serde(default)]
    pub search: SearchMode,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            k: DEFAULT_K,
            search: SearchMode::Ann,
        }
    }
}

impl ClassifyParams {
    pub fn validate(&self) -> Result<(), RegistryError> {
        if !(self.tau > -1.0 && self.tau < 1.0) {
            return Err(RegistryError::Validation(format!("tau {} outside (-1, 1)", self.tau)));
        }
        if self.k == 0 {
            return Err(RegistryError::Validation("k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Match {
        sku_id: String,
        name: String,
        price_cents: u64,
        score: f64,
    },
    Unknown {
        best_sku_id: Option<String>,
        best_score: Option<f64>,
    },
}

impl Decision {
    pub fn is_match(&self) -> bool {
        matches!(self, Decision::Match { .. })
    }

    pub fn best(&self) -> Option<(&str, f64)> {
        match self {
            Decision::Match { sku_id, score, .. } => Some((sku_id, *score)),
            Decision::Unknown {
                best_sku_id: Some(id),
                best_score: Some(s),
            } => Some((id, *s)),
            Decision::Unknown { .. } => None,
        }
    }
}

/// Picks the winning hit (highest score, then smallest SKU id) and applies
/// the threshold. `hits` must be sorted best first.
pub fn decide(hits: &[SearchHit], tau: f64) -> Decision {
    let Some(top) = hits.first() else {
        return Decision::Unknown {
            best_sku_id: None,
            best_score: None,
        };
    };
    let best = hits
        .iter()
        .take_while(|h| h.score == top.score)
        .min_by(|a, b| a.payload.sku_id.cmp(&b.payload.sku_id))
        .expect("at least the top hit");
    if best.score >= tau {
        Decision::Match {
            sku_id: best.payload.sku_id.clone(),
            name: best.payload.name.clone(),
            price_cents: best.payload.price_cents,
            score: best.score,
        }
    } else {
        Decision::Unknown {
            best_sku_id: Some(best.payload.sku_id.clone()),
            best_score: Some(best.score),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagStatus {
    Open,
    Resolved,
    Dismissed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownFlag {
    pub flag_id: String,
    pub embedding: Embedding,
    pub patch_ref: String,
    pub best_sku_id: Option<String>,
    pub best_score: Option<f64>,
    pub created_at: DateTime<Utc>,
    pub status: FlagStatus,
    #[serde(default)]
    pub resolved_sku_id: Option<String>,
}

/// Operator input for resolving a flag. `name` and `price_cents` are
/// required when `sku_id` is new; for an existing SKU any given field
/// replaces the stored one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResolveRequest {
    pub sku_id: String,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub price_cents: Option<u64>,
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub extra_references: Vec<Embedding>,
}

/// Mutable payload fields of a SKU.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkuPatch {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub price_cents: Option<u64>,
    #[serde(default)]
    pub category: Option<String>,
}

#[derive(Debug, Clone)]
struct SkuEntry {
    record: SkuRecord,
    record_id: u64,
    references: Vec<Embedding>,
}

impl SkuEntry {
    fn payload(&self) -> Payload {
        Payload::new(
            self.record.sku_id.clone(),
            self.record.name.clone(),
            self.record.price_cents,
            self.record.category.clone(),
        )
    }
}

/// The catalog state: index, SKU table, and flag queue.
#[derive(Debug, Clone)]
pub struct Catalog {
    index: VectorIndex,
    skus: BTreeMap<String, SkuEntry>,
    flags: BTreeMap<String, UnknownFlag>,
    next_flag: u64,
    tau_default: f64,
}

impl Catalog {
    pub fn new(dim: usize, params: HnswParams) -> Result<Self, RegistryError> {
        Ok(Self {
            index: VectorIndex::new(dim, params)?,
            skus: BTreeMap::new(),
            flags: BTreeMap::new(),
            next_flag: 1,
            tau_default: DEFAULT_TAU,
        })
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.skus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skus.is_empty()
    }

    pub fn tau_default(&self) -> f64 {
        self.tau_default
    }

    pub fn set_tau_default(&mut self, tau: f64) {
        self.tau_default = tau;
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.index.set_ef_search(ef);
    }

    fn check_dim(&self, e: &Embedding) -> Result<(), RegistryError> {
        if e.dim() == self.dim() {
            Ok(())
        } else {
            Err(EmbeddingError::DimMismatch {
                expected: self.dim(),
                got: e.dim(),
            }
            .into())
        }
    }

    /// Validates a registration and computes its centroid without mutating.
    fn prepare(&self, sku: &NewSku) -> Result<Embedding, RegistryError> {
        if sku.sku_id.is_empty() {
            return Err(RegistryError::Validation("sku_id must not be empty".into()));
        }
        if self.skus.contains_key(&sku.sku_id) {
            return Err(RegistryError::DuplicateSku(sku.sku_id.clone()));
        }
        if sku.references.is_empty() {
            return Err(RegistryError::EmptyReferences(sku.sku_id.clone()));
        }
        for r in &sku.references {
            self.check_dim(r)?;
        }
        Ok(centroid(&sku.references)?)
    }

    fn commit(&mut self, sku: NewSku, center: &Embedding, now: DateTime<Utc>) -> SkuRecord {
        let payload = Payload::new(sku.sku_id.clone(), sku.name.clone(), sku.price_cents, sku.category.clone());
        let record_id = self
            .index
            .insert(center, payload)
            .expect("registration validated before commit");
        let stored = self.index.get(record_id).expect("just inserted");
        let record = SkuRecord {
            sku_id: sku.sku_id.clone(),
            name: sku.name,
            price_cents: sku.price_cents,
            category: sku.category,
            centroid: Embedding::from_f32(stored.vector).expect("index vectors are finite"),
            reference_count: sku.references.len(),
            registered_at: now,
        };
        self.skus.insert(
            sku.sku_id,
            SkuEntry {
                record: record.clone(),
                record_id,
                references: sku.references,
            },
        );
        record
    }

    pub fn register_sku(&mut self, sku: NewSku) -> Result<SkuRecord, RegistryError> {
        let center = self.prepare(&sku)?;
        Ok(self.commit(sku, &center, Utc::now()))
    }

    /// Registers all SKUs or none.
    pub fn register_batch(&mut self, batch: Vec<NewSku>) -> Result<Vec<SkuRecord>, RegistryError> {
        let mut seen = std::collections::BTreeSet::new();
        let mut centers = Vec::with_capacity(batch.len());
        for sku in &batch {
            if !seen.insert(sku.sku_id.as_str()) {
                return Err(RegistryError::DuplicateSku(sku.sku_id.clone()));
            }
            centers.push(self.prepare(sku)?);
        }
        let now = Utc::now();
        Ok(batch
            .into_iter()
            .zip(&centers)
            .map(|(sku, c)| self.commit(sku, c, now))
            .collect())
    }

    pub fn search(&self, query: &Embedding, params: &ClassifyParams) -> Result<Vec<SearchHit>, RegistryError> {
        self.check_dim(query)?;
        Ok(match params.search {
            SearchMode::Ann => self.index.search_ann(query, params.k)?,
            SearchMode::Exact => self.index.search_exact(query, params.k)?,
        })
    }

    pub fn classify(&self, query: &Embedding, params: &ClassifyParams) -> Result<Decision, RegistryError> {
        params.validate()?;
        let hits = self.search(query, params)?;
        Ok(decide(&hits, params.tau))
    }

    pub fn create_flag(
        &mut self,
        embedding: Embedding,
        patch_ref: impl Into<String>,
        best: Option<(String, f64)>,
    ) -> UnknownFlag {
        let flag_id = format!("flag-{:06}", self.next_flag);
        self.next_flag += 1;
        let (best_sku_id, best_score) = match best {
            Some((id, s)) => (Some(id), Some(s)),
            None => (None, None),
        };
        let flag = UnknownFlag {
            flag_id: flag_id.clone(),
            embedding,
            patch_ref: patch_ref.into(),
            best_sku_id,
            best_score,
            created_at: Utc::now(),
            status: FlagStatus::Open,
            resolved_sku_id: None,
        };
        self.flags.insert(flag_id, flag.clone());
        flag
    }

    fn open_flag(&self, flag_id: &str) -> Result<&UnknownFlag, RegistryError> {
        let flag = self
            .flags
            .get(flag_id)
            .ok_or_else(|| RegistryError::UnknownFlagId(flag_id.to_string()))?;
        if flag.status != FlagStatus::Open {
            return Err(RegistryError::FlagNotOpen(flag_id.to_string()));
        }
        Ok(flag)
    }

    /// Files an open flag under a new or existing SKU. A flag can be
    /// resolved once; later attempts fail with `FlagNotOpen`.
    pub fn resolve_flag(&mut self, flag_id: &str, req: ResolveRequest) -> Result<SkuRecord, RegistryError> {
        let flag = self.open_flag(flag_id)?;
        for r in &req.extra_references {
            self.check_dim(r)?;
        }
        let mut refs = vec![flag.embedding.clone()];
        refs.extend(req.extra_references.iter().cloned());

        let record = if let Some(entry) = self.skus.get(&req.sku_id) {
            let mut all = entry.references.clone();
            all.extend(refs);
            let center = centroid(&all)?;
            let entry = self.skus.get_mut(&req.sku_id).expect("checked above");
            if let Some(name) = req.name {
                entry.record.name = name;
            }
            if let Some(price) = req.price_cents {
                entry.record.price_cents = price;
            }
            if let Some(category) = req.category {
                entry.record.category = category;
            }
            let payload = entry.payload();
            let old_id = entry.record_id;
            let new_id = self.index.insert(&center, payload).expect("validated centroid");
            self.index.remove(old_id);
            let stored = Embedding::from_f32(self.index.get(new_id).expect("just inserted").vector)
                .expect("index vectors are finite");
            let entry = self.skus.get_mut(&req.sku_id).expect("checked above");
            entry.record_id = new_id;
            entry.record.centroid = stored;
            entry.record.reference_count = all.len();
            entry.references = all;
            entry.record.clone()
        } else {
            let name = req
                .name
                .ok_or_else(|| RegistryError::Validation("name is required for a new SKU".into()))?;
            let price_cents = req
                .price_cents
                .ok_or_else(|| RegistryError::Validation("price_cents is required for a new SKU".into()))?;
            self.register_sku(NewSku {
                sku_id: req.sku_id.clone(),
                name,
                price_cents,
                category: req.category.unwrap_or_default(),
                references: refs,
            })?
        };

        let flag = self.flags.get_mut(flag_id).expect("checked open");
        flag.status = FlagStatus::Resolved;
        flag.resolved_sku_id = Some(record.sku_id.clone());
        Ok(record)
    }

    pub fn dismiss_flag(&mut self, flag_id: &str) -> Result<UnknownFlag, RegistryError> {
        self.open_flag(flag_id)?;
        let flag = self.flags.get_mut(flag_id).expect("checked open");
        flag.status = FlagStatus::Dismissed;
        Ok(flag.clone())
    }

    pub fn list_skus(&self) -> Vec<SkuRecord> {
        self.skus.values().map(|e| e.record.clone()).collect()
    }

    pub fn get_sku(&self, sku_id: &str) -> Option<&SkuRecord> {
        self.skus.get(sku_id).map(|e| &e.record)
    }

    pub fn references(&self, sku_id: &str) -> Option<&[Embedding]> {
        self.skus.get(sku_id).map(|e| e.references.as_slice())
    }

    pub fn remove_sku(&mut self, sku_id: &str) -> Result<SkuRecord, RegistryError> {
        let entry = self
            .skus
            .remove(sku_id)
            .ok_or_else(|| RegistryError::UnknownSku(sku_id.to_string()))?;
        self.index.remove(entry.record_id);
        Ok(entry.record)
    }

    pub fn update_sku(&mut self, sku_id: &str, patch: SkuPatch) -> Result<SkuRecord, RegistryError> {
        let entry = self
            .skus
            .get_mut(sku_id)
            .ok_or_else(|| RegistryError::UnknownSku(sku_id.to_string()))?;
        if let Some(name) = patch.name {
            entry.record.name = name;
        }
        if let Some(price) = patch.price_cents {
            entry.record.price_cents = price;
        }
        if let Some(category) = patch.category {
            entry.record.category = category;
        }
        let payload = entry.payload();
        self.index.update_payload(entry.record_id, payload);
        Ok(entry.record.clone())
    }

    pub fn update_price(&mut self, sku_id: &str, price_cents: u64) -> Result<SkuRecord, RegistryError> {
        self.update_sku(
            sku_id,
            SkuPatch {
                price_cents: Some(price_cents),
                ..Default::default()
            },
        )
    }

    pub fn list_flags(&self, status: Option<FlagStatus>) -> Vec<UnknownFlag> {
        self.flags
            .values()
            .filter(|f| status.is_none_or(|s| f.status == s))
            .cloned()
            .collect()
    }

    pub fn get_flag(&self, flag_id: &str) -> Option<&UnknownFlag> {
        self.flags.get(flag_id)
    }
}

/// A catalog behind a reader-writer lock: classification takes read views,
/// mutations serialize through the single writer.
#[derive(Debug)]
pub struct Registry {
    inner: RwLock<Catalog>,
}

impl Registry {
    pub fn new(catalog: Catalog) -> Self {
        Self {
            inner: RwLock::new(catalog),
        }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Catalog> {
        self.inner.read()
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, Catalog> {
        self.inner.write()
    }

    /// Swaps in a whole catalog, e.g. after loading a snapshot.
    pub fn replace(&self, catalog: Catalog) {
        *self.inner.write() = catalog;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::normalize;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn basis(dim: usize, i: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Embedding::new(v).unwrap()
    }

    fn sku(id: &str, price: u64, refs: Vec<Embedding>) -> NewSku {
        NewSku {
            sku_id: id.into(),
            name: format!("Product {id}"),
            price_cents: price,
            category: "grocery".into(),
            references: refs,
        }
    }

    fn catalog(dim: usize) -> Catalog {
        Catalog::new(dim, HnswParams::default()).unwrap()
    }

    fn exact() -> ClassifyParams {
        ClassifyParams {
            search: SearchMode::Exact,
            ..Default::default()
        }
    }

    /// Unit vector at cosine `s` from `basis(dim, 0)`, tilted towards axis `j`.
    fn at_cos(dim: usize, s: f64, j: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[0] = s;
        v[j] = (1.0 - s * s).sqrt();
        Embedding::new(v).unwrap()
    }

    #[test]
    fn centroid_of_three_is_indexed() {
        let mut c = catalog(4);
        let refs = vec![e(&[1.0, 0.0, 0.0, 0.0]), e(&[0.0, 1.0, 0.0, 0.0]), e(&[1.0, 1.0, 0.0, 0.0])];
        let rec = c.register_sku(sku("a", 100, refs.clone())).unwrap();
        assert_eq!(rec.reference_count, 3);
        assert_eq!(c.index().len(), 1);
        let want = centroid(&refs).unwrap();
        for (g, w) in rec.centroid.values().iter().zip(want.values()) {
            assert!((g - w).abs() < 1e-7);
        }
        let stored = c.index().records().next().unwrap();
        assert_eq!(stored.vector, &rec.centroid.to_f32()[..]);
        assert_eq!(c.get_sku("a"), Some(&rec));
    }

    #[test]
    fn registration_errors() {
        let mut c = catalog(3);
        c.register_sku(sku("a", 1, vec![basis(3, 0)])).unwrap();
        assert!(matches!(c.register_sku(sku("a", 1, vec![basis(3, 1)])), Err(RegistryError::DuplicateSku(_))));
        assert!(matches!(c.register_sku(sku("b", 1, vec![])), Err(RegistryError::EmptyReferences(_))));
        assert!(matches!(
            c.register_sku(sku("b", 1, vec![e(&[1.0, 0.0])])),
            Err(RegistryError::Embedding(EmbeddingError::DimMismatch { .. }))
        ));
        assert!(matches!(
            c.register_sku(sku("b", 1, vec![basis(3, 0), e(&[-1.0, 0.0, 0.0])])),
            Err(RegistryError::Embedding(EmbeddingError::ZeroVector))
        ));
        assert!(matches!(c.register_sku(sku("", 1, vec![basis(3, 0)])), Err(RegistryError::Validation(_))));
        assert_eq!(c.len(), 1);
        assert_eq!(c.index().len(), 1);
    }

    #[test]
    fn batch_is_all_or_nothing() {
        let mut c = catalog(3);
        let err = c.register_batch(vec![sku("a", 1, vec![basis(3, 0)]), sku("b", 1, vec![])]);
        assert!(err.is_err());
        assert!(c.is_empty() && c.index().is_empty());
        let err = c.register_batch(vec![sku("a", 1, vec![basis(3, 0)]), sku("a", 2, vec![basis(3, 1)])]);
        assert!(matches!(err, Err(RegistryError::DuplicateSku(_))));
        let ok = c
            .register_batch(vec![sku("a", 1, vec![basis(3, 0)]), sku("b", 2, vec![basis(3, 1)])])
            .unwrap();
        assert_eq!(ok.len(), 2);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn threshold_decisions() {
        let dim = 8;
        let mut c = catalog(dim);
        c.register_sku(sku("a", 250, vec![basis(dim, 0)])).unwrap();

        let d = c.classify(&at_cos(dim, 0.80, 3), &exact()).unwrap();
        match d {
            Decision::Match { ref sku_id, price_cents, score, .. } => {
                assert_eq!(sku_id, "a");
                assert_eq!(price_cents, 250);
                assert!((score - 0.80).abs() < 1e-6);
            }
            other => panic!("expected match, got {other:?}"),
        }
        let d = c.classify(&at_cos(dim, 0.60, 3), &exact()).unwrap();
        match d {
            Decision::Unknown { best_sku_id, best_score } => {
                assert_eq!(best_sku_id.as_deref(), Some("a"));
                assert!((best_score.unwrap() - 0.60).abs() < 1e-6);
            }
            other => panic!("expected unknown, got {other:?}"),
        }
        let ann = c.classify(&at_cos(dim, 0.80, 3), &ClassifyParams::default()).unwrap();
        assert!(ann.is_match());
    }

    #[test]
    fn empty_catalog_is_unknown() {
        let c = catalog(4);
        assert_eq!(
            c.classify(&basis(4, 0), &ClassifyParams::default()).unwrap(),
            Decision::Unknown { best_sku_id: None, best_score: None }
        );
        assert!(c.classify(&basis(3, 0), &ClassifyParams::default()).is_err());
        let bad = ClassifyParams { tau: 1.0, ..Default::default() };
        assert!(c.classify(&basis(4, 0), &bad).is_err());
        let bad = ClassifyParams { k: 0, ..Default::default() };
        assert!(c.classify(&basis(4, 0), &bad).is_err());
    }

    #[test]
    fn ties_go_to_smallest_sku_id() {
        let mut c = catalog(4);
        c.register_sku(sku("zeta", 1, vec![basis(4, 0)])).unwrap();
        c.register_sku(sku("alpha", 2, vec![basis(4, 0)])).unwrap();
        c.register_sku(sku("mid", 3, vec![basis(4, 0)])).unwrap();
        for params in [exact(), ClassifyParams::default()] {
            match c.classify(&basis(4, 0), &params).unwrap() {
                Decision::Match { sku_id, .. } => assert_eq!(sku_id, "alpha"),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn flags_are_unique_and_verbatim() {
        let mut c = catalog(4);
        let q = normalize(&e(&[0.1, 0.2, 0.3, 0.4])).unwrap();
        let f1 = c.create_flag(q.clone(), "patch-1", None);
        let f2 = c.create_flag(q.clone(), "patch-2", Some(("a".into(), 0.5)));
        assert_ne!(f1.flag_id, f2.flag_id);
        assert_eq!(f1.embedding.values(), q.values());
        assert_eq!(f2.best_score, Some(0.5));
        assert_eq!(c.list_flags(Some(FlagStatus::Open)).len(), 2);
        assert_eq!(c.list_flags(None).len(), 2);
        assert_eq!(c.get_flag(&f1.flag_id).unwrap().patch_ref, "patch-1");
    }

    #[test]
    fn resolve_to_new_sku_self_matches() {
        let mut c = catalog(6);
        c.register_sku(sku("a", 100, vec![basis(6, 0)])).unwrap();
        let q = normalize(&e(&[0.1, 0.5, -0.3, 0.2, 0.7, 0.0])).unwrap();
        assert!(!c.classify(&q, &exact()).unwrap().is_match());
        let flag = c.create_flag(q.clone(), "p", None);
        let rec = c
            .resolve_flag(
                &flag.flag_id,
                ResolveRequest {
                    sku_id: "new".into(),
                    name: Some("New thing".into()),
                    price_cents: Some(499),
                    ..Default::default()
                },
            )
            .unwrap();
        assert_eq!(rec.reference_count, 1);
        match c.classify(&q, &ClassifyParams::default()).unwrap() {
            Decision::Match { sku_id, score, price_cents, name } => {
                assert_eq!(sku_id, "new");
                assert_eq!(name, "New thing");
                assert_eq!(price_cents, 499);
                assert!((score - 1.0).abs() < 1e-6);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(c.get_flag(&flag.flag_id).unwrap().status, FlagStatus::Resolved);
        assert!(c.list_flags(Some(FlagStatus::Open)).is_empty());

        let again = c.resolve_flag(&flag.flag_id, ResolveRequest { sku_id: "x".into(), ..Default::default() });
        assert!(matches!(again, Err(RegistryError::FlagNotOpen(_))));
        let absent = c.resolve_flag("flag-999999", ResolveRequest::default());
        assert!(matches!(absent, Err(RegistryError::UnknownFlagId(_))));
    }

    #[test]
    fn resolve_new_sku_requires_details() {
        let mut c = catalog(3);
        let flag = c.create_flag(basis(3, 0), "p", None);
        let r = c.resolve_flag(&flag.flag_id, ResolveRequest { sku_id: "n".into(), ..Default::default() });
        assert!(matches!(r, Err(RegistryError::Validation(_))));
        assert_eq!(c.get_flag(&flag.flag_id).unwrap().status, FlagStatus::Open);
        assert!(c.is_empty());
    }

    #[test]
    fn resolve_into_existing_recomputes_centroid() {
        let mut c = catalog(3);
        let r1 = e(&[1.0, 0.0, 0.0]);
        let r2 = e(&[0.0, 1.0, 0.0]);
        let before = c.register_sku(sku("a", 10, vec![r1, r2])).unwrap();
        let old_record = c.index().records().next().unwrap().record_id;

        let q = e(&[0.0, 0.0, 1.0]);
        let flag = c.create_flag(q, "p", None);
        let after = c
            .resolve_flag(&flag.flag_id, ResolveRequest { sku_id: "a".into(), ..Default::default() })
            .unwrap();
        // Hand computation: mean (1/3, 1/3, 1/3) normalizes to 1/sqrt(3) per axis.
        let w = 1.0 / 3f64.sqrt();
        for g in after.centroid.values() {
            assert!((g - w).abs() < 1e-7);
        }
        assert_eq!(after.reference_count, 3);
        assert_eq!(after.price_cents, before.price_cents);
        assert_eq!(c.index().len(), 1);
        assert!(!c.index().contains(old_record));
        assert_eq!(c.references("a").unwrap().len(), 3);
    }

    #[test]
    fn dismiss_closes_without_registration() {
        let mut c = catalog(3);
        let flag = c.create_flag(basis(3, 1), "p", None);
        let d = c.dismiss_flag(&flag.flag_id).unwrap();
        assert_eq!(d.status, FlagStatus::Dismissed);
        assert!(c.is_empty());
        assert!(matches!(c.dismiss_flag(&flag.flag_id), Err(RegistryError::FlagNotOpen(_))));
        assert!(matches!(c.dismiss_flag("nope"), Err(RegistryError::UnknownFlagId(_))));
    }

    #[test]
    fn crud_operations() {
        let mut c = catalog(4);
        c.register_sku(sku("a", 100, vec![basis(4, 0)])).unwrap();
        c.register_sku(sku("b", 200, vec![basis(4, 1)])).unwrap();
        let listed: Vec<String> = c.list_skus().into_iter().map(|r| r.sku_id).collect();
        assert_eq!(listed, vec!["a", "b"]);

        let b_before = c.get_sku("b").cloned().unwrap();
        c.update_price("a", 150).unwrap();
        match c.classify(&basis(4, 0), &ClassifyParams::default()).unwrap() {
            Decision::Match { price_cents, .. } => assert_eq!(price_cents, 150),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.get_sku("b"), Some(&b_before));

        c.remove_sku("a").unwrap();
        assert!(c.get_sku("a").is_none());
        let d = c.classify(&basis(4, 0), &exact()).unwrap();
        assert!(!d.is_match());
        assert_eq!(c.get_sku("b"), Some(&b_before));
        assert!(matches!(c.remove_sku("a"), Err(RegistryError::UnknownSku(_))));
        assert!(matches!(c.update_price("zzz", 1), Err(RegistryError::UnknownSku(_))));
    }

    #[test]
    fn registration_leaves_other_records_untouched() {
        let mut c = catalog(8);
        for i in 0..5 {
            c.register_sku(sku(&format!("s{i}"), i, vec![basis(8, i as usize)])).unwrap();
        }
        let before: Vec<(u64, Vec<f32>, Payload)> =
            c.index().records().map(|r| (r.record_id, r.vector.to_vec(), r.payload.clone())).collect();
        c.register_sku(sku("s9", 9, vec![basis(8, 7)])).unwrap();
        let after: Vec<(u64, Vec<f32>, Payload)> =
            c.index().records().map(|r| (r.record_id, r.vector.to_vec(), r.payload.clone())).collect();
        assert_eq!(&after[..5], &before[..]);
    }

    #[test]
    fn registry_guards_share_state() {
        let reg = Registry::new(catalog(2));
        reg.write().register_sku(sku("a", 1, vec![basis(2, 0)])).unwrap();
        assert_eq!(reg.read().len(), 1);
        reg.replace(catalog(2));
        assert!(reg.read().is_empty());
    }
}
