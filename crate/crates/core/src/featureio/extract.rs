use std::collections::BTreeMap;

use super::{FeatureIoError, LabeledMask, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CellInstance {
    /// 1-based, assigned in ascending order of the original mask label.
    pub id: u32,
    /// Label value in the source mask.
    pub source_label: u32,
    /// Mean pixel coordinate `(x, y)`.
    pub centroid: (f64, f64),
    /// Inclusive `(x0, y0, x1, y1)`.
    pub bbox: (usize, usize, usize, usize),
    pub pixel_count: usize,
}

impl CellInstance {
    pub fn bbox_width(&self) -> usize {
        self.bbox.2 - self.bbox.0 + 1
    }

    pub fn bbox_height(&self) -> usize {
        self.bbox.3 - self.bbox.1 + 1
    }
}

struct Accum {
    sum_x: u64,
    sum_y: u64,
    count: usize,
    bbox: (usize, usize, usize, usize),
}

/// One instance per distinct nonzero label.
pub fn extract_cells(mask: &LabeledMask) -> Result<Vec<CellInstance>> {
    let mut acc: BTreeMap<u32, Accum> = BTreeMap::new();
    for y in 0..mask.height {
        for x in 0..mask.width {
            let l = mask.label(x, y);
            if l == 0 {
                continue;
            }
            let a = acc.entry(l).or_insert(Accum {
                sum_x: 0,
                sum_y: 0,
                count: 0,
                bbox: (x, y, x, y),
            });
            a.sum_x += x as u64;
            a.sum_y += y as u64;
            a.count += 1;
            a.bbox.0 = a.bbox.0.min(x);
            a.bbox.1 = a.bbox.1.min(y);
            a.bbox.2 = a.bbox.2.max(x);
            a.bbox.3 = a.bbox.3.max(y);
        }
    }
    if acc.is_empty() {
        return Err(FeatureIoError::EmptyMask);
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(i, (label, a))| CellInstance {
            id: i as u32 + 1,
            source_label: label,
            centroid: (
                a.sum_x as f64 / a.count as f64,
                a.sum_y as f64 / a.count as f64,
            ),
            bbox: a.bbox,
            pixel_count: a.count,
        })
        .collect())
}
