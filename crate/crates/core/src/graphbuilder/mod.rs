//! Dense density-weighted cell graphs and their quadrant patches.
//!
//! Every pair of selected cells is connected. The weight of edge `(k, m)` is
//! `α(ρ_k + ρ_m) + β|ρ_k − ρ_m|`, where `ρ` is the rescaled distribution map
//! evaluated at the cell's box, so within-box pixel positions never matter.

mod io;

pub use io::{read_graph, read_graph_file, write_graph, write_graph_file, GraphFormat};

use thiserror::Error;

use crate::featureio::CellFeatureSet;
use crate::sampler::{downsample, DistributionMap, SamplerError};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot build a graph from zero cells")]
    EmptyGraph,
    #[error("invalid augmentation parameters: {0}")]
    InvalidParams(String),
    #[error("graph file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub alpha: f64,
    pub beta: f64,
    /// Boxes per axis of the distribution grid.
    pub d: usize,
    /// Node budget per image.
    pub m: usize,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            alpha: 0.5,
            beta: 0.5,
            d: 32,
            m: 200,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(GraphError::InvalidParams(format!(
                "alpha={} beta={} must lie in [0, 1]",
                self.alpha, self.beta
            )));
        }
        if self.d == 0 || self.m == 0 {
            return Err(GraphError::InvalidParams("d and M must be positive".into()));
        }
        Ok(())
    }
}

/// Complete weighted graph over one image's selected cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGraph {
    pub image_dims: (usize, usize),
    pub params: AugmentParams,
    /// Feature width.
    pub f: usize,
    pub ids: Vec<u32>,
    pub coords: Vec<(f64, f64)>,
    /// `n×f`, row-major.
    pub features: Vec<f64>,
    /// `n×n`, row-major, symmetric.
    pub adjacency: Vec<f64>,
    pub label: Option<u8>,
}

impl CellGraph {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn adj(&self, k: usize, m: usize) -> f64 {
        self.adjacency[k * self.n() + m]
    }

    pub fn feature_row(&self, k: usize) -> &[f64] {
        &self.features[k * self.f..(k + 1) * self.f]
    }

    /// Subgraph induced by `nodes`, in the given order.
    pub fn induced(&self, nodes: &[usize]) -> CellGraph {
        let mut adjacency = Vec::with_capacity(nodes.len() * nodes.len());
        for &k in nodes {
            adjacency.extend(nodes.iter().map(|&m| self.adj(k, m)));
        }
        CellGraph {
            ids: nodes.iter().map(|&k| self.ids[k]).collect(),
            coords: nodes.iter().map(|&k| self.coords[k]).collect(),
            features: nodes
                .iter()
                .flat_map(|&k| self.feature_row(k).iter().copied())
                .collect(),
            adjacency,
            ..self.clone()
        }
    }
}

/// Four quadrant subgraphs, ordered top-left, top-right, bottom-left,
/// bottom-right.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchedGraph {
    pub patches: Vec<CellGraph>,
    pub label: Option<u8>,
    pub image_dims: (usize, usize),
}

pub fn edge_weight(dk: f64, dm: f64, alpha: f64, beta: f64) -> f64 {
    alpha * (dk + dm) + beta * (dk - dm).abs()
}

/// Builds the complete graph over `set` with weights from `scaled`.
pub fn build_graph(
    set: &CellFeatureSet,
    scaled: &DistributionMap,
    params: &AugmentParams,
) -> Result<CellGraph> {
    params.validate()?;
    if set.is_empty() {
        return Err(GraphError::EmptyGraph);
    }
    if scaled.image_dims != set.image_dims {
        return Err(GraphError::InvalidParams(format!(
            "distribution map covers {:?}, cells cover {:?}",
            scaled.image_dims, set.image_dims
        )));
    }
    let n = set.len();
    let density: Vec<f64> = set
        .cells
        .iter()
        .map(|c| scaled.at_point(c.centroid.0, c.centroid.1))
        .collect();
    let mut adjacency = vec![0.0; n * n];
    for k in 0..n {
        for m in k..n {
            let w = edge_weight(density[k], density[m], params.alpha, params.beta);
            adjacency[k * n + m] = w;
            adjacency[m * n + k] = w;
        }
    }
    Ok(CellGraph {
        image_dims: set.image_dims,
        params: AugmentParams {
            d: scaled.d,
            ..*params
        },
        f: set.dim,
        ids: set.cells.iter().map(|c| c.id).collect(),
        coords: set.centroids(),
        features: set
            .cells
            .iter()
            .flat_map(|c| c.features.iter().copied())
            .collect(),
        adjacency,
        label: set.label,
    })
}

/// Downsamples `set` to `params.m` nodes and builds the graph.
pub fn augment(set: &CellFeatureSet, params: &AugmentParams, seed: u64) -> Result<CellGraph> {
    params.validate()?;
    if set.is_empty() {
        return Err(GraphError::EmptyGraph);
    }
    let (selected, scaled) = downsample(set, params.d, params.m, seed)?;
    build_graph(&selected, &scaled, params)
}

/// Quadrant index: `x ≥ w/2` is right, `y ≥ h/2` is bottom.
pub fn quadrant(x: f64, y: f64, image_dims: (usize, usize)) -> usize {
    let right = x >= image_dims.0 as f64 / 2.0;
    let bottom = y >= image_dims.1 as f64 / 2.0;
    usize::from(bottom) * 2 + usize::from(right)
}

/// Splits `graph` into its four quadrant subgraphs, dropping cross-quadrant
/// edges. Empty quadrants give zero-node patches.
pub fn split_patches(graph: &CellGraph) -> PatchedGraph {
    let mut members: [Vec<usize>; 4] = Default::default();
    for (k, &(x, y)) in graph.coords.iter().enumerate() {
        members[quadrant(x, y, graph.image_dims)].push(k);
    }
    PatchedGraph {
        patches: members.iter().map(|nodes| graph.induced(nodes)).collect(),
        label: graph.label,
        image_dims: graph.image_dims,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featureio::CellRecord;
    use crate::sampler::{build_distribution_map, scale_distribution};

    fn cells(points: &[(f64, f64)]) -> CellFeatureSet {
        CellFeatureSet {
            image_dims: (100, 100),
            dim: 8,
            cells: points
                .iter()
                .enumerate()
                .map(|(i, &c)| CellRecord {
                    id: i as u32 + 1,
                    centroid: c,
                    features: (0..8).map(|j| (i * 8 + j) as f64).collect(),
                })
                .collect(),
            label: Some(2),
        }
    }

    fn graph_for(points: &[(f64, f64)], params: &AugmentParams) -> (CellGraph, DistributionMap) {
        let set = cells(points);
        let raw = build_distribution_map(&set.centroids(), set.image_dims, params.d).unwrap();
        let scaled = scale_distribution(&raw, params.m).unwrap();
        (build_graph(&set, &scaled, params).unwrap(), scaled)
    }

    #[test]
    fn edge_weight_examples() {
        assert_eq!(edge_weight(0.0, 0.0, 0.3, 0.9), 0.0);
        assert_eq!(edge_weight(2.0, 1.0, 0.5, 0.5), 2.0);
        assert_eq!(
            edge_weight(0.7, 3.1, 0.2, 0.9),
            edge_weight(3.1, 0.7, 0.2, 0.9)
        );
    }

    #[test]
    fn single_node() {
        let p = AugmentParams {
            alpha: 0.3,
            beta: 0.8,
            d: 4,
            m: 5,
        };
        let (g, scaled) = graph_for(&[(10.0, 10.0)], &p);
        assert_eq!(g.adjacency, vec![2.0 * 0.3 * scaled.at_point(10.0, 10.0)]);
    }

    #[test]
    fn constant_density() {
        let p = AugmentParams {
            alpha: 0.4,
            beta: 0.9,
            d: 2,
            m: 8,
        };
        let pts = [(10.0, 10.0), (60.0, 10.0), (10.0, 60.0), (60.0, 60.0)];
        let (g, _) = graph_for(&pts, &p);
        let rho = 2.0;
        for k in 0..4 {
            for m in 0..4 {
                assert_eq!(g.adj(k, m), 2.0 * 0.4 * rho);
            }
        }
    }

    #[test]
    fn errors() {
        let set = cells(&[]);
        let raw = build_distribution_map(&[(1.0, 1.0)], (100, 100), 2).unwrap();
        assert!(matches!(
            build_graph(&set, &raw, &AugmentParams::default()),
            Err(GraphError::EmptyGraph)
        ));
        let bad = AugmentParams {
            alpha: 1.5,
            ..AugmentParams::default()
        };
        assert!(matches!(
            build_graph(&cells(&[(1.0, 1.0)]), &raw, &bad),
            Err(GraphError::InvalidParams(_))
        ));
    }

    #[test]
    fn patches_degenerate_and_separated() {
        let p = AugmentParams {
            d: 4,
            m: 10,
            ..AugmentParams::default()
        };
        let (g, _) = graph_for(&[(5.0, 5.0), (20.0, 30.0), (40.0, 1.0)], &p);
        let pg = split_patches(&g);
        assert_eq!(pg.patches[0], g);
        assert!(pg.patches[1..].iter().all(CellGraph::is_empty));

        let (g, _) = graph_for(
            &[(25.0, 25.0), (75.0, 25.0), (25.0, 75.0), (75.0, 75.0)],
            &p,
        );
        let pg = split_patches(&g);
        for (q, patch) in pg.patches.iter().enumerate() {
            assert_eq!(patch.n(), 1);
            assert_eq!(patch.ids, vec![q as u32 + 1]);
            assert_eq!(patch.adjacency, vec![g.adj(q, q)]);
        }
    }

    #[test]
    fn quadrant_boundaries_go_right_and_down() {
        assert_eq!(quadrant(50.0, 49.9, (100, 100)), 1);
        assert_eq!(quadrant(49.9, 50.0, (100, 100)), 2);
        assert_eq!(quadrant(50.0, 50.0, (100, 100)), 3);
        assert_eq!(quadrant(2.5, 3.5, (5, 7)), 3);
    }
}
