//! Datasets: MNIST IDX ingestion, the synthetic generator, and the
//! versioned registry.

pub mod dataset;
pub mod idx;
pub mod registry;
pub mod synthetic;

pub use dataset::{quantize_toward, DatasetRef, LabeledDataset, Provenance};
pub use idx::load_idx;
pub use registry::{DatasetRegistry, RegistryEntry};
pub use synthetic::make_synthetic;
