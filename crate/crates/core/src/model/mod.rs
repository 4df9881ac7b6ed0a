//! Diffusion convolution, the DCGRU cell and the stacked encoder-decoder.

mod cell;
mod params;
mod seq2seq;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::graph::SensorGraph;
use crate::numcore::{NumError, SparseMatrix};

pub use cell::{dcgru_cell, diffusion_conv, diffusion_features};
pub use params::{CellParams, CellVars, DcgruParams, GateParams, GateVars, ParamVars};
pub use seq2seq::{
    decode, encode, loss_mae, loss_multi, mae, mae_multi, sampling_probability, seq2seq_forward, DEFAULT_TAU,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),
    #[error("targets required when sampling probability > 0")]
    TargetsRequired,
    #[error("expected sequence length {expected}, got {got}")]
    SequenceLength { expected: usize, got: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterType {
    /// Forward transition `D_O⁻¹A` only.
    #[default]
    RandomWalk,
    /// Forward and reverse (`D_I⁻¹Aᵀ`) transitions.
    DualRandomWalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seq2SeqConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub look_back: usize,
    pub horizon: usize,
    pub layers: usize,
    pub units: usize,
    /// Maximum diffusion steps `K`; `d` runs over `0..K`.
    pub max_diffusion_step: usize,
    pub filter_type: FilterType,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            output_dim: 1,
            look_back: 12,
            horizon: 12,
            layers: 2,
            units: 16,
            max_diffusion_step: 2,
            filter_type: FilterType::RandomWalk,
        }
    }
}

impl Seq2SeqConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.look_back == 0 || self.horizon == 0 {
            return bad("look_back and horizon must be at least 1");
        }
        if !(1..=2).contains(&self.input_dim) || !(1..=2).contains(&self.output_dim) {
            return bad("input_dim and output_dim must be 1 or 2");
        }
        if self.layers == 0 || self.units == 0 || self.max_diffusion_step == 0 {
            return bad("layers, units and max_diffusion_step must be positive");
        }
        Ok(())
    }

    pub fn n_directions(&self) -> usize {
        match self.filter_type {
            FilterType::RandomWalk => 1,
            FilterType::DualRandomWalk => 2,
        }
    }

    /// Number of `(direction, step)` filter blocks per gate.
    pub fn n_blocks(&self) -> usize {
        self.n_directions() * self.max_diffusion_step
    }
}

/// How the reverse transition is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReverseTransition {
    /// `D_I⁻¹Aᵀ`, a true random walk on the reversed edges.
    #[default]
    Transpose,
    /// `D_I⁻¹A`: rows of `A` scaled by in-degree.
    InDegreeScaled,
}

/// Transition matrices of the forward and reverse random walks.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSupports {
    pub forward: SparseMatrix,
    pub reverse: SparseMatrix,
    pub max_diffusion_step: usize,
    pub filter_type: FilterType,
}

/// `forward = D_O⁻¹A`, `reverse = D_I⁻¹Aᵀ`; zero-degree rows stay zero.
pub fn build_supports(graph: &SensorGraph, filter_type: FilterType, max_diffusion_step: usize) -> DiffusionSupports {
    build_supports_with(graph, filter_type, max_diffusion_step, ReverseTransition::Transpose)
}

pub fn build_supports_with(
    graph: &SensorGraph,
    filter_type: FilterType,
    max_diffusion_step: usize,
    reverse: ReverseTransition,
) -> DiffusionSupports {
    let a = graph.adjacency();
    let reverse = match reverse {
        ReverseTransition::Transpose => a.transpose().row_normalized(),
        ReverseTransition::InDegreeScaled => {
            let din = a.transpose().row_sums();
            let triples = a
                .triples()
                .filter(|&(i, _, _)| din[i] > 0.0)
                .map(|(i, j, w)| (i, j, w / din[i]));
            SparseMatrix::from_triples(a.rows(), a.cols(), triples).expect("same shape as the adjacency")
        }
    };
    DiffusionSupports {
        forward: a.row_normalized(),
        reverse,
        max_diffusion_step,
        filter_type,
    }
}

impl DiffusionSupports {
    pub fn n_nodes(&self) -> usize {
        self.forward.rows()
    }

    /// Transitions in block order: forward, then reverse when dual.
    pub fn transitions(&self) -> Vec<&SparseMatrix> {
        match self.filter_type {
            FilterType::RandomWalk => vec![&self.forward],
            FilterType::DualRandomWalk => vec![&self.forward, &self.reverse],
        }
    }

    /// Block-diagonal copies acting on `batch` stacked node blocks.
    pub fn batched(&self, batch: usize) -> Vec<Arc<SparseMatrix>> {
        self.transitions().into_iter().map(|s| Arc::new(s.block_diagonal(batch))).collect()
    }

    /// Same walk on relabeled nodes (`i → perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            forward: self.forward.permuted(perm),
            reverse: self.reverse.permuted(perm),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_supports_by_hand() {
        let g = SensorGraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        let s = build_supports(&g, FilterType::DualRandomWalk, 2);
        assert_eq!(s.forward.to_dense().values(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.reverse.to_dense().values(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn star_rows_are_stochastic_and_isolated_rows_zero() {
        let mut edges = Vec::new();
        for leaf in 1..4 {
            edges.push((0, leaf, 1.0));
            edges.push((leaf, 0, 1.0));
        }
        let g = SensorGraph::from_edges(5, &edges).unwrap();
        let s = build_supports(&g, FilterType::DualRandomWalk, 2);
        let fs = s.forward.row_sums();
        let rs = s.reverse.row_sums();
        for i in 0..4 {
            assert!((fs[i] - 1.0).abs() < 1e-15);
            assert!((rs[i] - 1.0).abs() < 1e-15);
        }
        assert_eq!(fs[4], 0.0);
        assert_eq!(rs[4], 0.0);
    }

    #[test]
    fn weighted_rows_normalize_by_out_and_in_degree() {
        let g = SensorGraph::from_edges(3, &[(0, 1, 0.5), (0, 2, 1.5), (2, 1, 1.0)]).unwrap();
        let s = build_supports(&g, FilterType::DualRandomWalk, 1);
        assert_eq!(s.forward.get(0, 1), 0.25);
        assert_eq!(s.forward.get(0, 2), 0.75);
        // node 1 in-degree 1.5 from {0: 0.5, 2: 1.0}
        assert!((s.reverse.get(1, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.reverse.get(1, 2) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn in_degree_scaled_reverse() {
        let g = SensorGraph::from_edges(2, &[(0, 1, 2.0), (1, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let s = build_supports_with(&g, FilterType::DualRandomWalk, 1, ReverseTransition::InDegreeScaled);
        // in-degrees: node 0 ← 1.0, node 1 ← 3.0
        assert_eq!(s.reverse.get(0, 1), 2.0);
        assert!((s.reverse.get(1, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(Seq2SeqConfig::default().validate().is_ok());
        let bad = Seq2SeqConfig {
            input_dim: 3,
            ..Seq2SeqConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(
            Seq2SeqConfig {
                filter_type: FilterType::DualRandomWalk,
                ..Seq2SeqConfig::default()
            }
            .n_blocks(),
            4
        );
    }
}
