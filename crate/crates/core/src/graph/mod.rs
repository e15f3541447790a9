//! Property-graph store, payload cleansing and keyed stream ingestion.

pub mod cleanse;
pub mod ingest;
pub mod store;

pub use cleanse::{CleanseConfig, CleanseError, RawPayload};
pub use ingest::{read_messages, IngestMessage, IngestStats, Ingestor, Quarantine, QuarantineEntry, TOPICS};
pub use store::{GraphError, GraphSnapshot, GraphStore, PropertyEdge, PropertyNode, WriteBatch, WriteOp};
