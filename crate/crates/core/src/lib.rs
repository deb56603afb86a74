//! Automated ICD coding pipeline.
//!
//! The crate turns semi-structured clinical notes into ranked ICD code
//! candidates in five steps:
//!
//! 1. [`corpus`] loads notes and extracts the diagnosis-list queries.
//! 2. [`nel`] recognizes entity mentions and links them to a [`kb`] concept.
//! 3. [`ctxgraph`] builds one contextual graph per query from linked
//!    entities, knowledge-base paths, and external keywords.
//! 4. [`model`] scores graph nodes with a small graph neural network and
//!    assembles the contextual query from the nodes predicted relevant;
//!    [`supervision`] produces the training labels for that network by
//!    distant supervision against ICD code descriptions.
//! 5. [`ir`] retrieves codes from a BM25 index over code descriptions,
//!    and [`eval`] hosts the experiment harnesses and metrics.
//!
//! All stages are deterministic given their inputs and a seed.

pub mod corpus;
pub mod ctxgraph;
pub mod eval;
pub mod ir;
pub mod kb;
pub mod model;
pub mod nel;
pub mod supervision;
pub mod text;

pub use corpus::{ClinicalNote, DiagnosisQuery, Sentence};
pub use ctxgraph::{ContextualGraph, GraphNode, NodeOrigin};
pub use ir::{IcdCode, IcdIndex, IcdVersion, RetrievalResult};
pub use kb::{Concept, KnowledgeBase};
pub use model::{EmbeddingTable, ModelParams, QueryGraph, TrainConfig};
pub use nel::{EntityMention, LinkedEntity};
pub use supervision::LabeledGraphSet;
