//! Layer sizing shared by every architecture: the first hidden layer is ten
//! times the numeric feature count, then each layer halves (floor) down to a
//! floor of five neurons.

use crate::{Error, Result};

pub fn build_layer_plan(n_features: usize) -> Result<Vec<usize>> {
    if n_features == 0 {
        return Err(Error::usage("layer plan needs at least one input feature".to_string()));
    }
    let mut widths = vec![10 * n_features];
    while *widths.last().unwrap() > 5 {
        let next = (widths.last().unwrap() / 2).max(5);
        widths.push(next);
    }
    Ok(widths)
}

/// Width heuristic for categorical embeddings: half the cardinality,
/// rounded up, capped at 50.
pub fn embedding_dim(cardinality: usize) -> usize {
    (cardinality.div_ceil(2)).min(50)
}
