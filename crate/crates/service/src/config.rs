use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use shelfid_core::embedding::{EmbeddingProvider, LabelOracleEmbedder, PatchHashEmbedder, RemoteEmbedder};
use shelfid_core::pipeline::{Detector, FixtureDetector, RemoteDetector};
use shelfid_core::registry::{DEFAULT_K, DEFAULT_TAU};
use shelfid_core::HnswParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for {var}: {reason}")]
    Env { var: &'static str, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DetectorConfig {
    /// Ground-truth boxes from `{dir}/{image_id}.txt`.
    Fixture { dir: PathBuf },
    Remote {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProviderConfig {
    PatchHash {
        #[serde(default = "default_seed")]
        seed: u64,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    LabelOracle {
        #[serde(default = "default_seed")]
        seed: u64,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Remote {
        endpoint: String,
        dim: usize,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HnswConfig {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswConfig {
    fn default() -> Self {
        let p = HnswParams::default();
        Self {
            m: p.m,
            ef_construction: p.ef_construction,
            ef_search: p.ef_search,
            seed: p.rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_tau")]
    pub tau_default: f64,
    #[serde(default = "default_k")]
    pub k_default: usize,
    /// Directory holding the index snapshot and catalog document.
    #[serde(default = "default_snapshot")]
    pub snapshot_path: PathBuf,
    /// Where flag patches are written, named by content hash.
    #[serde(default = "default_patches")]
    pub patch_dir: PathBuf,
    /// Checkout images addressable by `{"fixture_id": ...}` as `{dir}/{id}.png`.
    #[serde(default)]
    pub fixture_dir: Option<PathBuf>,
    pub detector: DetectorConfig,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub hnsw: HnswConfig,
    #[serde(default)]
    pub auth_token: Option<String>,
    /// Allowed CORS origins; empty allows any.
    #[serde(default)]
    pub cors_origins: Vec<String>,
    #[serde(default = "default_body_limit")]
    pub max_body_bytes: usize,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_k() -> usize {
    DEFAULT_K
}
fn default_snapshot() -> PathBuf {
    "data/snapshot".into()
}
fn default_patches() -> PathBuf {
    "data/patches".into()
}
fn default_timeout_ms() -> u64 {
    5_000
}
fn default_seed() -> u64 {
    42
}
fn default_dim() -> usize {
    384
}
fn default_noise() -> f64 {
    0.1
}
fn default_body_limit() -> usize {
    32 << 20
}

impl ApiConfig {
    /// Config with defaults everywhere except the two mode selections.
    pub fn new(detector: DetectorConfig, provider: ProviderConfig) -> Self {
        Self {
            bind: default_bind(),
            tau_default: default_tau(),
            k_default: default_k(),
            snapshot_path: default_snapshot(),
            patch_dir: default_patches(),
            fixture_dir: None,
            detector,
            provider,
            hnsw: HnswConfig::default(),
            auth_token: None,
            cors_origins: Vec::new(),
            max_body_bytes: default_body_limit(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, then applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg: Self = toml::from_str(&text)?;
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies BIND_ADDR, TAU_DEFAULT, SNAPSHOT_PATH and AUTH_TOKEN from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup("BIND_ADDR") {
            self.bind = v;
        }
        if let Some(v) = lookup("TAU_DEFAULT") {
            self.tau_default = v.trim().parse().map_err(|e: std::num::ParseFloatError| ConfigError::Env {
                var: "TAU_DEFAULT",
                reason: e.to_string(),
            })?;
        }
        if let Some(v) = lookup("SNAPSHOT_PATH") {
            self.snapshot_path = v.into();
        }
        if let Some(v) = lookup("AUTH_TOKEN") {
            self.auth_token = (!v.is_empty()).then_some(v);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tau_default > -1.0 && self.tau_default < 1.0) {
            return Err(ConfigError::Invalid(format!("tau_default {} outside (-1, 1)", self.tau_default)));
        }
        if self.k_default == 0 {
            return Err(ConfigError::Invalid("k_default must be >= 1".into()));
        }
        if self.provider_dim() == 0 {
            return Err(ConfigError::Invalid("provider dim must be >= 1".into()));
        }
        if let ProviderConfig::LabelOracle { noise, .. } = self.provider {
            if !(noise.is_finite() && noise >= 0.0) {
                return Err(ConfigError::Invalid(format!("noise {noise} must be finite and >= 0")));
            }
        }
        self.hnsw_params()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn provider_dim(&self) -> usize {
        match self.provider {
            ProviderConfig::PatchHash { dim, .. }
            | ProviderConfig::LabelOracle { dim, .. }
            | ProviderConfig::Remote { dim, .. } => dim,
        }
    }

    pub fn hnsw_params(&self) -> HnswParams {
        HnswParams {
            m: self.hnsw.m,
            ef_construction: self.hnsw.ef_construction,
            ef_search: self.hnsw.ef_search,
            rng_seed: self.hnsw.seed,
        }
    }

    pub fn build_detector(&self) -> Arc<dyn Detector> {
        match &self.detector {
            DetectorConfig::Fixture { dir } => Arc::new(FixtureDetector::from_dir(dir)),
            DetectorConfig::Remote { endpoint, timeout_ms } => {
                Arc::new(RemoteDetector::new(endpoint.clone(), Duration::from_millis(*timeout_ms)))
            }
        }
    }

    pub fn build_provider(&self) -> Arc<dyn EmbeddingProvider> {
        match &self.provider {
            ProviderConfig::PatchHash { seed, dim } => Arc::new(PatchHashEmbedder::new(*seed, *dim)),
            ProviderConfig::LabelOracle { seed, dim, noise } => Arc::new(LabelOracleEmbedder::new(*seed, *dim, *noise)),
            ProviderConfig::Remote {
                endpoint,
                dim,
                timeout_ms,
            } => Arc::new(RemoteEmbedder::new(endpoint.clone(), *dim, Duration::from_millis(*timeout_ms))),
        }
    }
}
