//! Dataset layer: clip metadata, frame embeddings, and ground-truth positives.

mod dataset;
mod embedding;
mod manifest;

pub use dataset::{
    Dataset, RetrievalTask, EGO_EMBEDDING_FILE, EXO_EMBEDDING_FILE, MANIFEST_FILE,
};
pub use embedding::EmbeddingTable;
pub use manifest::{
    read_manifest, write_manifest, Age, Attribute, ClipRecord, Gender, Race, Split, View,
};
