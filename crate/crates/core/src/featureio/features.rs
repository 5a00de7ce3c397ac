use super::{CellInstance, FeatureIoError, LabeledMask, Result};

/// Feature columns in output order. Dimension 12 keeps the first 12, 8 the
/// first 8 (bounding-box color statistics only).
pub const FEATURE_NAMES: [&str; 16] = [
    "bbox_mean_r",
    "bbox_mean_g",
    "bbox_mean_b",
    "bbox_mean_gray",
    "bbox_std_r",
    "bbox_std_g",
    "bbox_std_b",
    "bbox_std_gray",
    "area",
    "perimeter",
    "aspect_ratio",
    "extent",
    "mask_mean_gray",
    "mask_std_gray",
    "bbox_diagonal",
    "solidity",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub id: u32,
    pub centroid: (f64, f64),
    pub features: Vec<f64>,
}

/// Per-cell centroids and feature vectors for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFeatureSet {
    pub image_dims: (usize, usize),
    pub dim: usize,
    pub cells: Vec<CellRecord>,
    pub label: Option<u8>,
}

impl CellFeatureSet {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn centroids(&self) -> Vec<(f64, f64)> {
        self.cells.iter().map(|c| c.centroid).collect()
    }

    /// Checks the dimension, arity, finiteness and centroid bounds.
    pub fn validate(&self) -> Result<()> {
        check_dim(self.dim)?;
        let (w, h) = (self.image_dims.0 as f64, self.image_dims.1 as f64);
        for c in &self.cells {
            if c.features.len() != self.dim {
                return Err(FeatureIoError::DimMismatch(format!(
                    "cell {} has {} features, set dim is {}",
                    c.id,
                    c.features.len(),
                    self.dim
                )));
            }
            if c.features.iter().any(|v| !v.is_finite()) {
                return Err(FeatureIoError::DimMismatch(format!(
                    "cell {} has non-finite features",
                    c.id
                )));
            }
            let (x, y) = c.centroid;
            if !(x >= 0.0 && x < w && y >= 0.0 && y < h) {
                return Err(FeatureIoError::InvalidMask(format!(
                    "cell {} centroid ({x}, {y}) outside {w}x{h}",
                    c.id
                )));
            }
        }
        if let Some(l) = self.label {
            if l > 2 {
                return Err(FeatureIoError::DimMismatch(format!(
                    "grade {l} out of range"
                )));
            }
        }
        Ok(())
    }

    /// Keeps the leading `dim` features of every cell.
    pub fn truncate_dim(&self, dim: usize) -> Result<CellFeatureSet> {
        check_dim(dim)?;
        if dim > self.dim {
            return Err(FeatureIoError::DimMismatch(format!(
                "cannot widen {} features to {dim}",
                self.dim
            )));
        }
        Ok(CellFeatureSet {
            dim,
            cells: self
                .cells
                .iter()
                .map(|c| CellRecord {
                    id: c.id,
                    centroid: c.centroid,
                    features: c.features[..dim].to_vec(),
                })
                .collect(),
            ..self.clone()
        })
    }
}

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    match dim {
        8 | 12 | 16 => Ok(()),
        other => Err(FeatureIoError::DimMismatch(format!(
            "dimension {other} not in {{8, 12, 16}}"
        ))),
    }
}

fn gray(px: [u8; 3]) -> f64 {
    (f64::from(px[0]) + f64::from(px[1]) + f64::from(px[2])) / 3.0
}

/// Population mean and standard deviation.
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = values
        .clone()
        .fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Area of the convex hull of the cell's pixel squares, from the extreme
/// pixel corners of each occupied row.
fn convex_hull_area(rows: &[(usize, usize, usize)]) -> f64 {
    let mut pts: Vec<(i64, i64)> = Vec::with_capacity(rows.len() * 4);
    for &(y, x0, x1) in rows {
        let (y, x0, x1) = (y as i64, x0 as i64, x1 as i64 + 1);
        pts.extend([(x0, y), (x1, y), (x0, y + 1), (x1, y + 1)]);
    }
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let twice: i64 = (0..hull.len())
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    twice.abs() as f64 / 2.0
}

fn cell_features(mask: &LabeledMask, rgb: &[[u8; 3]], cell: &CellInstance) -> Vec<f64> {
    let (x0, y0, x1, y1) = cell.bbox;
    let w = mask.width;
    let bbox_pixels = || (y0..=y1).flat_map(move |y| (x0..=x1).map(move |x| rgb[y * w + x]));
    let (mean_r, std_r) = mean_std(bbox_pixels().map(|p| f64::from(p[0])));
    let (mean_g, std_g) = mean_std(bbox_pixels().map(|p| f64::from(p[1])));
    let (mean_b, std_b) = mean_std(bbox_pixels().map(|p| f64::from(p[2])));
    let (mean_gray, std_gray) = mean_std(bbox_pixels().map(gray));

    let label = cell.source_label;
    let mut mask_grays = Vec::with_capacity(cell.pixel_count);
    let mut perimeter = 0usize;
    let mut rows = Vec::new();
    for y in y0..=y1 {
        let mut span: Option<(usize, usize)> = None;
        for x in x0..=x1 {
            if mask.label(x, y) != label {
                continue;
            }
            mask_grays.push(gray(rgb[y * w + x]));
            span = Some(span.map_or((x, x), |(a, _)| (a, x)));
            let outside = |nx: Option<usize>, ny: Option<usize>| match (nx, ny) {
                (Some(nx), Some(ny)) if nx < mask.width && ny < mask.height => {
                    mask.label(nx, ny) != label
                }
                _ => true,
            };
            perimeter += [
                outside(x.checked_sub(1), Some(y)),
                outside(Some(x + 1), Some(y)),
                outside(Some(x), y.checked_sub(1)),
                outside(Some(x), Some(y + 1)),
            ]
            .iter()
            .filter(|&&b| b)
            .count();
        }
        if let Some((a, b)) = span {
            rows.push((y, a, b));
        }
    }
    let (mask_mean, mask_std) = mean_std(mask_grays.iter().copied());
    let (bw, bh) = (cell.bbox_width() as f64, cell.bbox_height() as f64);
    let area = cell.pixel_count as f64;
    let hull = convex_hull_area(&rows);

    vec![
        mean_r,
        mean_g,
        mean_b,
        mean_gray,
        std_r,
        std_g,
        std_b,
        std_gray,
        area,
        perimeter as f64,
        bw / bh,
        area / (bw * bh),
        mask_mean,
        mask_std,
        (bw * bw + bh * bh).sqrt(),
        if hull > 0.0 { area / hull } else { 1.0 },
    ]
}

/// Computes `dim` features for every cell of `mask`.
pub fn compute_features(
    mask: &LabeledMask,
    cells: &[CellInstance],
    dim: usize,
) -> Result<CellFeatureSet> {
    check_dim(dim)?;
    let rgb = mask.rgb.as_deref().ok_or(FeatureIoError::MissingColor)?;
    let records = cells
        .iter()
        .map(|cell| {
            let mut features = cell_features(mask, rgb, cell);
            features.truncate(dim);
            CellRecord {
                id: cell.id,
                centroid: cell.centroid,
                features,
            }
        })
        .collect();
    Ok(CellFeatureSet {
        image_dims: (mask.width, mask.height),
        dim,
        cells: records,
        label: None,
    })
}
