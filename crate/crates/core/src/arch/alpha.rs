//! Mixing units for soft parameter sharing. All three kinds share one
//! mechanism — a square matrix that linearly recombines chunks of the
//! stacked per-task activations — and differ only in chunk granularity:
//! whole layers (cross-stitch), equal subspaces (sluice), or single
//! neurons (ern).

use crate::autodiff::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaKind {
    CrossStitch,
    Sluice,
    Ern,
}

/// Side length of the mixing matrix for one hidden layer, given each
/// task's width at that layer.
pub fn alpha_dim(kind: AlphaKind, widths: &[usize], subspaces: usize) -> usize {
    match kind {
        AlphaKind::CrossStitch => widths.len(),
        AlphaKind::Sluice => widths.len() * subspaces,
        AlphaKind::Ern => widths.iter().sum(),
    }
}

/// Number of consecutive activations each matrix entry scales as a unit,
/// for the usual case where every task has the same `width`.
pub fn chunk_width(kind: AlphaKind, width: usize, subspaces: usize) -> usize {
    match kind {
        AlphaKind::CrossStitch => width,
        AlphaKind::Sluice => width / subspaces,
        AlphaKind::Ern => 1,
    }
}

/// Balanced initialization: 0.9 on the diagonal and the remaining 0.1
/// spread evenly over the off-diagonal entries (0.1/n with n = dim²−dim),
/// so each chunk starts dominated by itself.
pub fn init_alpha(kind: AlphaKind, widths: &[usize], subspaces: usize) -> Result<Tensor> {
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::usage(
            "mixing unit needs at least one task with width ≥ 1".to_string(),
        ));
    }
    if kind == AlphaKind::Sluice {
        if subspaces == 0 {
            return Err(Error::usage("subspace count must be at least 1".to_string()));
        }
        if let Some(w) = widths.iter().find(|w| *w % subspaces != 0) {
            return Err(Error::usage(format!(
                "layer width {w} is not divisible into {subspaces} subspaces"
            )));
        }
    }
    let dim = alpha_dim(kind, widths, subspaces);
    let mut data = vec![0.0; dim * dim];
    if dim == 1 {
        data[0] = 0.9;
    } else {
        let off = 0.1 / (dim * dim - dim) as f64;
        for i in 0..dim {
            for j in 0..dim {
                data[i * dim + j] = if i == j { 0.9 } else { off };
            }
        }
    }
    Ok(Tensor::from_vec(&[dim, dim], data))
}

/// Per-task skip read-out vector over the concatenation of every hidden
/// layer's activations: a constant 1/Σwidths so all layers start with
/// equal weight. Shaped [Σwidths, 1] for a bias-free linear read-out.
pub fn init_beta(layer_widths: &[usize]) -> Tensor {
    let total: usize = layer_widths.iter().sum();
    Tensor::from_vec(&[total, 1], vec![1.0 / total as f64; total])
}
