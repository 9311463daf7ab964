//! Shelf product identification: label I/O, rotation-aware geometry,
//! embeddings, a vector index, the SKU registry, the checkout pipeline,
//! dataset augmentation and evaluation tools.

pub mod augment;
pub mod embedding;
pub mod evalkit;
pub mod geometry;
pub mod labelio;
pub mod pipeline;
pub mod registry;
pub mod remote;
pub mod vindex;

pub use embedding::{Embedding, EmbeddingError, EmbeddingProvider};
pub use geometry::{Patch, RotationSpec};
pub use labelio::{NormalizedBox, PixelBox};
pub use pipeline::{CheckoutEngine, CheckoutImage, Receipt};
pub use registry::{Catalog, ClassifyParams, Decision, Registry, SkuRecord, UnknownFlag};
pub use vindex::{HnswParams, Payload, SearchHit, VectorIndex};
