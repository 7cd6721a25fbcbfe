//! Ingestion: manifests, pretext label tables and the assembled dataset.

mod dataset;
mod manifest;
mod table;

pub use dataset::{CiDataset, TaskColumn};
pub use manifest::{parse_manifest, parse_manifest_reader, Manifest, ManifestEntry};
pub use table::{build_label_table, summarize_file, PretextLabelTable, Standardization};
