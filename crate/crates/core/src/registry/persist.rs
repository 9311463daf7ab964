//! Catalog persistence: `index.zbrd` (binary index snapshot) plus
//! `catalog.json` (SKU references, timestamps and the flag queue).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Catalog, RegistryError, SkuEntry, SkuRecord, UnknownFlag};
use crate::embedding::Embedding;
use crate::vindex::{HnswParams, VectorIndex};

pub const INDEX_FILE: &str = "index.zbrd";
pub const CATALOG_FILE: &str = "catalog.json";
pub const CATALOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HnswSettings {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkuDocument {
    pub sku_id: String,
    pub name: String,
    pub price_cents: u64,
    pub category: String,
    pub references: Vec<Embedding>,
    pub registered_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogDocument {
    pub version: u32,
    pub tau_default: f64,
    pub hnsw: HnswSettings,
    pub next_flag: u64,
    pub skus: Vec<SkuDocument>,
    pub flags: Vec<UnknownFlag>,
}

impl Catalog {
    pub fn to_document(&self) -> CatalogDocument {
        let p = self.index.params();
        CatalogDocument {
            version: CATALOG_VERSION,
            tau_default: self.tau_default,
            hnsw: HnswSettings {
                m: p.m,
                ef_construction: p.ef_construction,
                ef_search: p.ef_search,
            },
            next_flag: self.next_flag,
            skus: self
                .skus
                .values()
                .map(|e| SkuDocument {
                    sku_id: e.record.sku_id.clone(),
                    name: e.record.name.clone(),
                    price_cents: e.record.price_cents,
                    category: e.record.category.clone(),
                    references: e.references.clone(),
                    registered_at: e.record.registered_at,
                })
                .collect(),
            flags: self.flags.values().cloned().collect(),
        }
    }

    /// Writes both files into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<(), RegistryError> {
        fs::create_dir_all(dir)?;
        self.index.save_snapshot(&dir.join(INDEX_FILE))?;
        let json = serde_json::to_vec_pretty(&self.to_document())
            .map_err(|e| RegistryError::Document(e.to_string()))?;
        let tmp = dir.join(format!("{CATALOG_FILE}.tmp"));
        fs::write(&tmp, json)?;
        fs::rename(&tmp, dir.join(CATALOG_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RegistryError> {
        let raw = fs::read(dir.join(CATALOG_FILE))?;
        let doc: CatalogDocument =
            serde_json::from_slice(&raw).map_err(|e| RegistryError::Document(e.to_string()))?;
        if doc.version != CATALOG_VERSION {
            return Err(RegistryError::Document(format!(
                "catalog version {} (expected {CATALOG_VERSION})",
                doc.version
            )));
        }
        let params = HnswParams {
            m: doc.hnsw.m,
            ef_construction: doc.hnsw.ef_construction,
            ef_search: doc.hnsw.ef_search,
            ..HnswParams::default()
        };
        let index = VectorIndex::load_snapshot(&dir.join(INDEX_FILE), params)?;

        let mut by_sku: BTreeMap<String, (u64, Vec<f32>)> = BTreeMap::new();
        for r in index.records() {
            if by_sku
                .insert(r.payload.sku_id.clone(), (r.record_id, r.vector.to_vec()))
                .is_some()
            {
                return Err(RegistryError::Document(format!(
                    "SKU '{}' has more than one index record",
                    r.payload.sku_id
                )));
            }
        }
        if by_sku.len() != doc.skus.len() {
            return Err(RegistryError::Document(format!(
                "index holds {} SKUs but catalog lists {}",
                by_sku.len(),
                doc.skus.len()
            )));
        }

        let mut skus = BTreeMap::new();
        for s in doc.skus {
            let (record_id, vector) = by_sku
                .remove(&s.sku_id)
                .ok_or_else(|| RegistryError::Document(format!("SKU '{}' missing from index", s.sku_id)))?;
            if s.references.iter().any(|r| r.dim() != index.dim()) {
                return Err(RegistryError::Document(format!("SKU '{}' has a reference of wrong dimension", s.sku_id)));
            }
            let record = SkuRecord {
                sku_id: s.sku_id.clone(),
                name: s.name,
                price_cents: s.price_cents,
                category: s.category,
                centroid: Embedding::from_f32(&vector)?,
                reference_count: s.references.len(),
                registered_at: s.registered_at,
            };
            skus.insert(
                s.sku_id,
                SkuEntry {
                    record,
                    record_id,
                    references: s.references,
                },
            );
        }
        let flags = doc.flags.into_iter().map(|f| (f.flag_id.clone(), f)).collect();
        Ok(Self {
            index,
            skus,
            flags,
            next_flag: doc.next_flag,
            tau_default: doc.tau_default,
        })
    }
}
