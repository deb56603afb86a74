//! Inference path: node features, message passing, query encoding, node
//! scoring, thresholding, and contextual-query assembly.

use ndarray::{Array1, Array2, Axis};

use super::{EmbeddingTable, ModelError, ModelParams};
use crate::ctxgraph::ContextualGraph;
use crate::text::tokenize;

/// Initial feature matrix: one row per node, the mean of the node's word
/// embeddings.
pub fn node_features(
    graph: &ContextualGraph,
    emb: &EmbeddingTable,
) -> Result<Array2<f64>, ModelError> {
    if graph.is_degenerate() {
        return Err(ModelError::EmptyGraph(graph.query_id.clone()));
    }
    let mut x = Array2::zeros((graph.node_count(), emb.dimension()));
    for (i, node) in graph.nodes.iter().enumerate() {
        let row = emb.mean_vector(&node.words)?;
        x.row_mut(i).assign(&row);
    }
    Ok(x)
}

/// The graph's adjacency as a dense float matrix.
pub fn adjacency_matrix(graph: &ContextualGraph) -> Array2<f64> {
    let n = graph.node_count();
    Array2::from_shape_fn((n, n), |(i, j)| f64::from(graph.adjacency()[i][j]))
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Forward pass through all layers: `X <- sigma(X W1 + A X W2)` with ReLU
/// between layers and identity after the last.
pub fn gnn_forward(
    x0: &Array2<f64>,
    adjacency: &Array2<f64>,
    params: &ModelParams,
) -> Result<Array2<f64>, ModelError> {
    check_shapes(x0, adjacency, params)?;
    let mut x = x0.clone();
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        let z = x.dot(&layer.w1) + adjacency.dot(&x).dot(&layer.w2);
        x = if i == last { z } else { relu(&z) };
    }
    Ok(x)
}

fn check_shapes(
    x0: &Array2<f64>,
    adjacency: &Array2<f64>,
    params: &ModelParams,
) -> Result<(), ModelError> {
    let n = x0.nrows();
    if adjacency.nrows() != n || adjacency.ncols() != n {
        return Err(ModelError::ShapeMismatch(format!(
            "adjacency {}x{} does not match {n} nodes",
            adjacency.nrows(),
            adjacency.ncols()
        )));
    }
    let mut width = x0.ncols();
    for (i, layer) in params.layers.iter().enumerate() {
        if layer.w1.nrows() != width || layer.w2.nrows() != width {
            return Err(ModelError::ShapeMismatch(format!(
                "layer {i} expects input width {}, got {width}",
                layer.w1.nrows()
            )));
        }
        if layer.w1.ncols() != layer.w2.ncols() {
            return Err(ModelError::ShapeMismatch(format!("layer {i} w1/w2 widths differ")));
        }
        width = layer.w1.ncols();
    }
    Ok(())
}

/// Query representation: dense layer over the mean of the query's word
/// embeddings.
pub fn encode_query(
    query_tokens: &[String],
    emb: &EmbeddingTable,
    params: &ModelParams,
) -> Result<Array1<f64>, ModelError> {
    if query_tokens.is_empty() {
        return Err(ModelError::EmptyTokenList);
    }
    let mean = emb.mean_vector(query_tokens)?;
    if mean.len() != params.wq.nrows() {
        return Err(ModelError::ShapeMismatch(format!(
            "query encoder expects width {}, got {}",
            params.wq.nrows(),
            mean.len()
        )));
    }
    Ok(mean.dot(&params.wq) + &params.bq)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-node relevance probabilities: sigmoid over the classifier applied to
/// `[node_repr; query_repr]`.
pub fn score_nodes(
    node_repr: &Array2<f64>,
    query_repr: &Array1<f64>,
    params: &ModelParams,
) -> Result<Array1<f64>, ModelError> {
    let width = node_repr.ncols() + query_repr.len();
    if params.wc.len() != width {
        return Err(ModelError::ShapeMismatch(format!(
            "classifier expects width {}, got {width}",
            params.wc.len()
        )));
    }
    let (wc_node, wc_query) = params.wc.view().split_at(Axis(0), node_repr.ncols());
    let query_term = query_repr.dot(&wc_query);
    let logits = node_repr.dot(&wc_node) + query_term + params.bc;
    Ok(logits.mapv(sigmoid))
}

/// Threshold probabilities into binary decisions: relevant iff p >= tau.
pub fn predict_relevant(probabilities: &Array1<f64>, tau: f64) -> Vec<u8> {
    probabilities.iter().map(|&p| u8::from(p >= tau)).collect()
}

/// Full inference for one graph: features, message passing, scoring.
pub fn score_graph(
    graph: &ContextualGraph,
    query_tokens: &[String],
    emb: &EmbeddingTable,
    params: &ModelParams,
) -> Result<Array1<f64>, ModelError> {
    let x0 = node_features(graph, emb)?;
    let adjacency = adjacency_matrix(graph);
    let node_repr = gnn_forward(&x0, &adjacency, params)?;
    let query_repr = encode_query(query_tokens, emb, params)?;
    score_nodes(&node_repr, &query_repr, params)
}

/// Assemble the contextual query: the query text followed by the words of
/// every relevant node in node-id order, skipping tokens already present
/// (set-union semantics), single-space separated.
pub fn contextual_query(query_text: &str, graph: &ContextualGraph, decisions: &[u8]) -> String {
    debug_assert_eq!(decisions.len(), graph.node_count());
    let mut seen: std::collections::HashSet<String> = tokenize(query_text).into_iter().collect();
    let mut out = query_text.trim().to_string();
    for (node, &keep) in graph.nodes.iter().zip(decisions) {
        if keep == 0 {
            continue;
        }
        for word in &node.words {
            if seen.insert(word.clone()) {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(word);
            }
        }
    }
    out
}
