//! Relevant-node detection network and contextual-query assembly.
//!
//! A node's representation comes from a message-passing network that keeps
//! the central node's own features separate from the neighbor sum
//! (`X W1 + A X W2` per layer). Each node representation, concatenated with
//! a dense encoding of the query, feeds a sigmoid classifier; nodes scoring
//! at or above the threshold contribute their words to the contextual
//! query.

mod embedding;
mod forward;
mod params;
mod train;

use thiserror::Error;

pub use embedding::EmbeddingTable;
pub use forward::{
    adjacency_matrix, contextual_query, encode_query, gnn_forward, node_features,
    predict_relevant, score_graph, score_nodes,
};
pub use params::{GnnLayer, InitScheme, ModelParams, TrainConfig, CHECKPOINT_FORMAT};
pub use train::{flat_gradients, graph_loss, train, EpochStats, TrainOutcome};

use crate::ctxgraph::ContextualGraph;

/// A contextual graph paired with its query's tokens: the unit the network
/// trains and predicts on.
#[derive(Debug, Clone)]
pub struct QueryGraph {
    pub query_tokens: Vec<String>,
    pub graph: ContextualGraph,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("graph `{0}` has no nodes")]
    EmptyGraph(String),
    #[error("empty token list")]
    EmptyTokenList,
    #[error("graph `{0}` has no labels")]
    UnlabeledGraph(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("invalid embedding file at line {line}")]
    BadEmbedding { line: usize },
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
