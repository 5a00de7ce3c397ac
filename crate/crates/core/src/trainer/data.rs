use rayon::prelude::*;

use super::{Result, TrainError};
use crate::featureio::{
    compute_features, extract_cells, generate_synthetic_tissue, CellFeatureSet, LabeledMask,
    SynthSpec,
};
use crate::graphbuilder::{augment, split_patches, AugmentParams, CellGraph};
use crate::rng::{derive_seed, named_seed};

/// One labeled image as the model sees it: four quadrant patches, or the
/// whole graph as a single patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: u8,
    pub patches: Vec<CellGraph>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub feature_dim: usize,
    pub patched: bool,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Node-selection seed of image `index` under run seed `seed`.
pub fn selection_seed(seed: u64, index: usize) -> u64 {
    derive_seed(named_seed(seed, "selection"), index as u64)
}

/// Graph of one image with only the leading `dim` features kept.
pub fn image_graph(
    set: &CellFeatureSet,
    params: &AugmentParams,
    dim: usize,
    seed: u64,
) -> Result<CellGraph> {
    let graph = if set.dim == dim {
        augment(set, params, seed)?
    } else {
        augment(&set.truncate_dim(dim)?, params, seed)?
    };
    Ok(graph)
}

/// Wraps labeled whole-image graphs as samples, split into quadrants when
/// `patched`.
pub fn dataset_from_graphs(graphs: Vec<CellGraph>, patched: bool) -> Result<Dataset> {
    let feature_dim = graphs
        .first()
        .ok_or_else(|| TrainError::DegenerateDataset("no images".into()))?
        .f;
    let samples = graphs
        .into_iter()
        .enumerate()
        .map(|(i, graph)| {
            let label = graph.label.ok_or_else(|| {
                TrainError::DegenerateDataset(format!("image {i} has no grade label"))
            })?;
            if graph.f != feature_dim {
                return Err(TrainError::DegenerateDataset(format!(
                    "image {i} has {} features, expected {feature_dim}",
                    graph.f
                )));
            }
            let patches = if patched {
                split_patches(&graph).patches
            } else {
                vec![graph]
            };
            Ok(Sample { label, patches })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        feature_dim,
        patched,
    })
}

/// Builds one graph per feature set. `dim` keeps only the leading features;
/// image `i` selects its nodes with [`selection_seed`]`(seed, i)`.
pub fn build_dataset(
    sets: &[CellFeatureSet],
    params: &AugmentParams,
    patched: bool,
    dim: Option<usize>,
    seed: u64,
) -> Result<Dataset> {
    let first = sets
        .first()
        .ok_or_else(|| TrainError::DegenerateDataset("no images".into()))?;
    let dim = dim.unwrap_or(first.dim);
    let graphs = sets
        .par_iter()
        .enumerate()
        .map(|(i, set)| {
            if set.label.is_none() {
                return Err(TrainError::DegenerateDataset(format!(
                    "image {i} has no grade label"
                )));
            }
            image_graph(set, params, dim, selection_seed(seed, i))
        })
        .collect::<Result<Vec<_>>>()?;
    dataset_from_graphs(graphs, patched)
}

/// Synthetic image `index` of a run: grade `index % 3`, drawn from the
/// `"dataset"` stream of `seed`. Returns the mask and its labeled features.
pub fn synthetic_image(
    spec: &SynthSpec,
    dim: usize,
    seed: u64,
    index: usize,
) -> Result<(LabeledMask, CellFeatureSet)> {
    let grade = (index % 3) as u8;
    let spec = SynthSpec {
        grade: Some(grade),
        ..spec.clone()
    };
    let (mask, _) = generate_synthetic_tissue(
        &spec,
        derive_seed(named_seed(seed, "dataset"), index as u64),
    )?;
    let cells = extract_cells(&mask)?;
    let mut set = compute_features(&mask, &cells, dim)?;
    set.label = Some(grade);
    Ok((mask, set))
}

/// `per_class` synthetic images of each grade, interleaved `0, 1, 2, 0, ...`,
/// with `dim` features per cell.
pub fn synthetic_feature_sets(
    per_class: usize,
    spec: &SynthSpec,
    dim: usize,
    seed: u64,
) -> Result<Vec<CellFeatureSet>> {
    (0..3 * per_class)
        .into_par_iter()
        .map(|i| synthetic_image(spec, dim, seed, i).map(|(_, set)| set))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            width: 128,
            height: 128,
            densities: [128.0, 224.0, 384.0],
            ..SynthSpec::default()
        }
    }

    #[test]
    fn synthetic_sets_are_labeled_and_deterministic() {
        let sets = synthetic_feature_sets(2, &small_spec(), 8, 3).unwrap();
        assert_eq!(sets.len(), 6);
        let labels: Vec<u8> = sets.iter().map(|s| s.label.unwrap()).collect();
        assert_eq!(labels, vec![0, 1, 2, 0, 1, 2]);
        assert!(sets.iter().all(|s| s.dim == 8));
        assert_eq!(
            sets,
            synthetic_feature_sets(2, &small_spec(), 8, 3).unwrap()
        );
    }

    #[test]
    fn dataset_shapes() {
        let sets = synthetic_feature_sets(1, &small_spec(), 16, 1).unwrap();
        let params = AugmentParams {
            d: 8,
            m: 20,
            ..AugmentParams::default()
        };
        let patched = build_dataset(&sets, &params, true, Some(12), 0).unwrap();
        assert_eq!(patched.feature_dim, 12);
        for s in &patched.samples {
            assert_eq!(s.patches.len(), 4);
            assert!(s.patches.iter().all(|p| p.f == 12));
            assert!(s.patches.iter().map(CellGraph::n).sum::<usize>() <= 20);
        }
        let single = build_dataset(&sets, &params, false, None, 0).unwrap();
        assert!(single
            .samples
            .iter()
            .all(|s| s.patches.len() == 1 && s.patches[0].f == 16));
    }
}
