//! Grid distribution maps and per-box random downsampling of cells.
//!
//! Box `(i, j)` covers columns `[j·w/d, (j+1)·w/d)` and rows
//! `[i·h/d, (i+1)·h/d)`; the last box along each axis also owns the far edge.
//! Maps are stored row-major with `i` as the row (y) index.

use rand::Rng;
use thiserror::Error;

use crate::featureio::CellFeatureSet;
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("point {index} at ({x}, {y}) lies outside the {w}x{h} image")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        w: usize,
        h: usize,
    },
    #[error("distribution map is empty")]
    EmptyDistribution,
    #[error("budget does not match the feature set: {0}")]
    BudgetMismatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

pub type Result<T> = std::result::Result<T, SamplerError>;

/// `d×d` per-box counts, raw or rescaled.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionMap {
    pub d: usize,
    pub image_dims: (usize, usize),
    pub counts: Vec<f64>,
    pub total: f64,
}

impl DistributionMap {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.counts[i * self.d + j]
    }

    /// Value of the box containing `(x, y)`.
    pub fn at_point(&self, x: f64, y: f64) -> f64 {
        let (i, j) = box_of(x, y, self.image_dims, self.d);
        self.get(i, j)
    }

    pub fn box_of(&self, x: f64, y: f64) -> (usize, usize) {
        box_of(x, y, self.image_dims, self.d)
    }
}

fn axis_box(v: f64, extent: usize, d: usize) -> usize {
    let edge = |k: usize| k as f64 * extent as f64 / d as f64;
    let mut k = ((v * d as f64 / extent as f64).floor().max(0.0) as usize).min(d - 1);
    while k > 0 && v < edge(k) {
        k -= 1;
    }
    while k + 1 < d && v >= edge(k + 1) {
        k += 1;
    }
    k
}

/// `(row, col)` of the box containing `(x, y)`; coordinates on an interior
/// boundary belong to the higher-index box.
pub fn box_of(x: f64, y: f64, image_dims: (usize, usize), d: usize) -> (usize, usize) {
    (axis_box(y, image_dims.1, d), axis_box(x, image_dims.0, d))
}

fn check_grid(image_dims: (usize, usize), d: usize) -> Result<()> {
    if d == 0 {
        return Err(SamplerError::InvalidGrid("d must be at least 1".into()));
    }
    if image_dims.0 == 0 || image_dims.1 == 0 {
        return Err(SamplerError::InvalidGrid("image has a zero extent".into()));
    }
    Ok(())
}

pub fn build_distribution_map(
    points: &[(f64, f64)],
    image_dims: (usize, usize),
    d: usize,
) -> Result<DistributionMap> {
    check_grid(image_dims, d)?;
    let (w, h) = image_dims;
    let mut counts = vec![0.0; d * d];
    for (index, &(x, y)) in points.iter().enumerate() {
        if !(x >= 0.0 && x <= w as f64 && y >= 0.0 && y <= h as f64) {
            return Err(SamplerError::OutOfBounds { index, x, y, w, h });
        }
        let (i, j) = box_of(x, y, image_dims, d);
        counts[i * d + j] += 1.0;
    }
    Ok(DistributionMap {
        d,
        image_dims,
        counts,
        total: points.len() as f64,
    })
}

/// Rescales `map` so its entries sum to `m`.
pub fn scale_distribution(map: &DistributionMap, m: usize) -> Result<DistributionMap> {
    if map.total <= 0.0 {
        return Err(SamplerError::EmptyDistribution);
    }
    if m == 0 {
        return Err(SamplerError::InvalidGrid(
            "node budget must be at least 1".into(),
        ));
    }
    let factor = m as f64 / map.total;
    let counts: Vec<f64> = map.counts.iter().map(|c| c * factor).collect();
    let total = counts.iter().sum();
    Ok(DistributionMap {
        counts,
        total,
        ..map.clone()
    })
}

/// Integer per-box node counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBudget {
    pub m: usize,
    pub d: usize,
    pub image_dims: (usize, usize),
    pub allocation: Vec<usize>,
}

impl SampleBudget {
    pub fn total(&self) -> usize {
        self.allocation.iter().sum()
    }
}

/// Largest-remainder rounding of `scaled`, capped by the raw counts, summing
/// to `min(M, raw.total)`.
pub fn allocate_counts(scaled: &DistributionMap, raw: &DistributionMap) -> SampleBudget {
    debug_assert_eq!(scaled.counts.len(), raw.counts.len());
    let m = scaled.total.round().max(0.0) as usize;
    let caps: Vec<usize> = raw.counts.iter().map(|&c| c as usize).collect();
    let target = m.min(caps.iter().sum());

    let mut allocation: Vec<usize> = scaled
        .counts
        .iter()
        .zip(&caps)
        .map(|(&v, &cap)| (v.floor().max(0.0) as usize).min(cap))
        .collect();
    let mut order: Vec<usize> = (0..allocation.len()).collect();
    let remainder = |k: usize| scaled.counts[k] - scaled.counts[k].floor();
    order.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)).then(a.cmp(&b)));

    let mut assigned: usize = allocation.iter().sum();
    // Floors of a map summing to M never exceed M; each pass below hands at
    // most one extra node to every box with spare capacity.
    while assigned < target {
        let before = assigned;
        for &k in &order {
            if assigned == target {
                break;
            }
            if allocation[k] < caps[k] {
                allocation[k] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    SampleBudget {
        m,
        d: raw.d,
        image_dims: raw.image_dims,
        allocation,
    }
}

/// Picks `allocation[box]` cells uniformly without replacement from each box.
/// Box `k` draws from its own stream derived from `(seed, k)`; the output keeps
/// the input order of the chosen cells.
pub fn select_features(
    set: &CellFeatureSet,
    budget: &SampleBudget,
    seed: u64,
) -> Result<CellFeatureSet> {
    if budget.image_dims != set.image_dims || budget.allocation.len() != budget.d * budget.d {
        return Err(SamplerError::BudgetMismatch(format!(
            "budget grid {}x{} over {:?}, set covers {:?}",
            budget.d, budget.d, budget.image_dims, set.image_dims
        )));
    }
    let d = budget.d;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); d * d];
    for (idx, cell) in set.cells.iter().enumerate() {
        let (x, y) = cell.centroid;
        let (i, j) = box_of(x, y, set.image_dims, d);
        members[i * d + j].push(idx);
    }
    let mut chosen = Vec::with_capacity(budget.total());
    for (k, (pool, &want)) in members.iter_mut().zip(&budget.allocation).enumerate() {
        if want > pool.len() {
            return Err(SamplerError::BudgetMismatch(format!(
                "box {k} allocates {want} of {} cells",
                pool.len()
            )));
        }
        if want == 0 {
            continue;
        }
        let mut rng = rng_from(derive_seed(seed, k as u64));
        // Partial Fisher-Yates: the first `want` slots are a uniform sample.
        for s in 0..want {
            let pick = rng.random_range(s..pool.len());
            pool.swap(s, pick);
        }
        chosen.extend_from_slice(&pool[..want]);
    }
    chosen.sort_unstable();
    Ok(CellFeatureSet {
        cells: chosen.iter().map(|&i| set.cells[i].clone()).collect(),
        ..set.clone()
    })
}

/// Full selection step: distribution map, rescale to `m`, allocate, select.
/// Returns the selected cells and the rescaled map used for edge weights.
pub fn downsample(
    set: &CellFeatureSet,
    d: usize,
    m: usize,
    seed: u64,
) -> Result<(CellFeatureSet, DistributionMap)> {
    let raw = build_distribution_map(&set.centroids(), set.image_dims, d)?;
    let scaled = scale_distribution(&raw, m)?;
    let budget = allocate_counts(&scaled, &raw);
    let selected = select_features(set, &budget, seed)?;
    Ok((selected, scaled))
}
