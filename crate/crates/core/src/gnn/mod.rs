//! Patched GraphSAGE/DiffPool grade regressor.
//!
//! Each patch runs through three convolution blocks. A block concatenates
//! three one-hop mean-aggregation convolutions, re-embeds the result back to
//! the embedding width, normalizes it over the patch, pools it with a learned
//! soft assignment and renormalizes the pooled adjacency. The input adjacency
//! gets the same renormalization before the first block. The last block pools
//! to a single node, which feeds a 50-25-3 head; a shared 3-3-1 merge layer
//! maps every patch to a scalar and the patch scalars are averaged.

mod layers;
mod model;
mod params;

pub use layers::{
    conv_block, diffpool, diffpool_with_assignment, patch_norm, propagation_matrix,
    renormalize_adjacency, sage_conv, GraphState, NORM_EPS,
};
pub use model::{
    canonical_order, forward, forward_on_tape, forward_single, Evaluation, FeatureScaler,
    GraphModel, PatchPolicy,
};
pub use params::{BlockVars, HeadVars, ModelParams, ParamVars};

use cellgraph_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("expected 4 patches, got {0}")]
    PatchCount(usize),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("feature width {got} does not match the model's {expected}")]
    FeatureWidth { expected: usize, got: usize },
    #[error("checkpoint does not describe this model: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, GnnError>;

/// How the renormalization spreads `p` over a node's neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RenormMode {
    /// `p·A[i][j] / Σ_{m≠i} A[i][m]`.
    #[default]
    Weighted,
    /// `p / Σ_{m≠i} A[i][m]` for every off-diagonal entry.
    Literal,
}

impl std::fmt::Display for RenormMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RenormMode::Weighted => "weighted",
            RenormMode::Literal => "literal",
        })
    }
}

impl std::str::FromStr for RenormMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "weighted" => Ok(RenormMode::Weighted),
            "literal" => Ok(RenormMode::Literal),
            other => Err(format!("unknown renormalization mode {other:?}")),
        }
    }
}

pub const HEAD_DIMS: [usize; 3] = [50, 25, 3];
pub const MERGE_DIMS: [usize; 2] = [3, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Node embedding width `e`.
    pub embed_dim: usize,
    /// Renormalization constant; the self-weight becomes `1 − p`.
    pub p: f64,
    /// Cluster count after each block; strictly decreasing, ending at 1.
    pub pool_sizes: Vec<usize>,
    pub renorm: RenormMode,
    /// Also renormalize the input adjacency before the first block.
    pub renorm_input: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            embed_dim: 100,
            p: 0.4,
            pool_sizes: vec![64, 16, 1],
            renorm: RenormMode::Weighted,
            renorm_input: true,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(GnnError::InvalidHyper(
                "embedding width must be positive".into(),
            ));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(GnnError::InvalidHyper(format!(
                "p = {} must lie in (0, 1)",
                self.p
            )));
        }
        if self.pool_sizes.is_empty() || self.pool_sizes.last() != Some(&1) {
            return Err(GnnError::InvalidHyper("pool sizes must end with 1".into()));
        }
        if self.pool_sizes.windows(2).any(|w| w[0] <= w[1]) {
            return Err(GnnError::InvalidHyper(format!(
                "pool sizes {:?} must be strictly decreasing",
                self.pool_sizes
            )));
        }
        Ok(())
    }

    pub fn blocks(&self) -> usize {
        self.pool_sizes.len()
    }
}
