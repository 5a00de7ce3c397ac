//! Deterministic synthetic tissue: non-overlapping elliptical nuclei on a
//! stained background. Higher grades get more cells, tighter clustering,
//! larger and darker nuclei and more cell-to-cell variation.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{FeatureIoError, LabeledMask, Result};
use crate::rng::rng_from;

/// Reference area for `densities`.
pub const DENSITY_AREA: f64 = 512.0 * 512.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    /// Mean cell count per 512×512 pixels, per grade.
    pub densities: [f64; 3],
    /// Relative spread of the per-image cell count around its mean.
    pub density_jitter: f64,
    /// Nucleus semi-axis range in pixels before grade scaling.
    pub radius_range: (f64, f64),
    /// Nucleus size multiplier per grade.
    pub size_scale: [f64; 3],
    /// Fraction of cells placed around cluster centres, per grade.
    pub clustering: [f64; 3],
    /// Spread of a cluster, in pixels.
    pub cluster_sigma: f64,
    /// Cells per cluster centre.
    pub cells_per_cluster: f64,
    /// Mean nucleus RGB per grade.
    pub stain: [[f64; 3]; 3],
    pub background: [f64; 3],
    /// Relative per-cell variation of size and stain, per grade.
    pub pleomorphism: [f64; 3],
    /// Fraction of atypical nuclei, per grade.
    pub atypical_fraction: [f64; 3],
    /// Size multiplier of atypical nuclei.
    pub atypical_scale: f64,
    /// RGB of atypical nuclei.
    pub atypical_stain: [f64; 3],
    /// Per-pixel color noise (standard deviation, 8-bit units).
    pub pixel_noise: f64,
    /// Fixed grade, or `None` to draw uniformly from the seed.
    pub grade: Option<u8>,
    /// Placement attempts per cell before giving up.
    pub max_attempts: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            width: 512,
            height: 512,
            densities: [60.0, 140.0, 260.0],
            density_jitter: 0.15,
            radius_range: (3.5, 6.0),
            size_scale: [1.0, 1.15, 1.3],
            clustering: [0.0, 0.4, 0.8],
            cluster_sigma: 45.0,
            cells_per_cluster: 40.0,
            stain: [
                [120.0, 70.0, 160.0],
                [95.0, 50.0, 140.0],
                [70.0, 30.0, 115.0],
            ],
            background: [235.0, 190.0, 215.0],
            pleomorphism: [0.05, 0.12, 0.25],
            atypical_fraction: [0.05, 0.2, 0.5],
            atypical_scale: 1.4,
            atypical_stain: [60.0, 20.0, 90.0],
            pixel_noise: 6.0,
            grade: None,
            max_attempts: 2000,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FeatureIoError::Spec(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be positive");
        }
        if self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return bad("image dimensions exceed 65535");
        }
        if self.densities.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return bad("densities must be finite and non-negative");
        }
        let (lo, hi) = self.radius_range;
        if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
            return bad("radius range must satisfy 1 <= min <= max");
        }
        if !(0.0..1.0).contains(&self.density_jitter) {
            return bad("density jitter must lie in [0, 1)");
        }
        if self.clustering.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("clustering fractions must lie in [0, 1]");
        }
        if self
            .atypical_fraction
            .iter()
            .any(|c| !(0.0..=1.0).contains(c))
        {
            return bad("atypical fractions must lie in [0, 1]");
        }
        if !(self.atypical_scale > 0.0) {
            return bad("atypical scale must be positive");
        }
        if self.grade.is_some_and(|g| g > 2) {
            return bad("grade must be 0, 1 or 2");
        }
        if self.cluster_sigma <= 0.0 || self.cells_per_cluster <= 0.0 {
            return bad("cluster parameters must be positive");
        }
        Ok(())
    }
}

struct Nucleus {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Nucleus {
    fn bbox(&self) -> (f64, f64, f64, f64) {
        let r = self.a.max(self.b);
        (self.cx - r, self.cy - r, self.cx + r, self.cy + r)
    }

    fn contains(&self, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as f64 - self.cx, y as f64 - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v <= 1.0
    }

    fn pixels(&self, width: usize, height: usize) -> Option<Vec<(usize, usize)>> {
        let (x0, y0, x1, y1) = self.bbox();
        // One-pixel margin keeps a gap to the image edge.
        if x0 < 1.0
            || y0 < 1.0
            || x1 > width.saturating_sub(2) as f64
            || y1 > height.saturating_sub(2) as f64
        {
            return None;
        }
        let mut px = Vec::new();
        for y in y0.floor() as usize..=y1.ceil() as usize {
            for x in x0.floor() as usize..=x1.ceil() as usize {
                if self.contains(x, y) {
                    px.push((x, y));
                }
            }
        }
        (!px.is_empty()).then_some(px)
    }
}

/// Generates one labeled tissue image and its grade. Identical
/// `(spec, seed)` pairs give identical output.
pub fn generate_synthetic_tissue(spec: &SynthSpec, seed: u64) -> Result<(LabeledMask, u8)> {
    spec.validate()?;
    let mut rng = rng_from(seed);
    let grade = spec.grade.unwrap_or_else(|| rng.random_range(0..3u8));
    let g = grade as usize;
    let (w, h) = (spec.width, spec.height);

    let expected = spec.densities[g] * (w * h) as f64 / DENSITY_AREA;
    let jitter = if spec.density_jitter > 0.0 {
        rng.random_range(1.0 - spec.density_jitter..1.0 + spec.density_jitter)
    } else {
        1.0
    };
    let count = (expected * jitter).round() as usize;

    let n_centers = ((count as f64 * spec.clustering[g]) / spec.cells_per_cluster)
        .ceil()
        .max(1.0) as usize;
    let centers: Vec<(f64, f64)> = (0..n_centers)
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
            )
        })
        .collect();
    let spread = Normal::new(0.0, spec.cluster_sigma).expect("positive sigma");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut labels = vec![0u32; w * h];
    let mut cell_colors = Vec::with_capacity(count);
    for k in 1..=count {
        let pleo = spec.pleomorphism[g];
        let atypical = rng.random_bool(spec.atypical_fraction[g]);
        let mut size = spec.size_scale[g] * (1.0 + pleo * unit.sample(&mut rng)).max(0.5);
        if atypical {
            size *= spec.atypical_scale;
        }
        let clustered = rng.random_bool(spec.clustering[g]);
        let center = centers[rng.random_range(0..centers.len())];
        let mut placed = None;
        for attempt in 0..spec.max_attempts {
            // Crowded clusters hand their overflow to the uniform background.
            let (cx, cy) = if clustered && attempt < spec.max_attempts / 2 {
                (
                    center.0 + spread.sample(&mut rng),
                    center.1 + spread.sample(&mut rng),
                )
            } else {
                (
                    rng.random_range(0.0..w as f64),
                    rng.random_range(0.0..h as f64),
                )
            };
            let a = rng.random_range(spec.radius_range.0..=spec.radius_range.1) * size;
            let b = rng.random_range(spec.radius_range.0..=spec.radius_range.1) * size;
            let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let nucleus = Nucleus {
                cx,
                cy,
                a: a.max(1.0),
                b: b.max(1.0),
                cos: theta.cos(),
                sin: theta.sin(),
            };
            let Some(px) = nucleus.pixels(w, h) else {
                continue;
            };
            let free = px.iter().all(|&(x, y)| {
                labels[y * w + x] == 0
                    && labels[y * w + x - 1] == 0
                    && labels[y * w + x + 1] == 0
                    && labels[(y - 1) * w + x] == 0
                    && labels[(y + 1) * w + x] == 0
            });
            if free {
                placed = Some(px);
                break;
            }
        }
        let px = placed.ok_or_else(|| {
            FeatureIoError::Spec(format!(
                "could not place cell {k} of {count} without overlap after {} attempts",
                spec.max_attempts
            ))
        })?;
        for (x, y) in px {
            labels[y * w + x] = k as u32;
        }
        let tint = 1.0 + pleo * unit.sample(&mut rng);
        let stain = if atypical {
            spec.atypical_stain
        } else {
            spec.stain[g]
        };
        cell_colors.push(stain.map(|c| c * tint));
    }

    let noise = Normal::new(0.0, spec.pixel_noise.max(f64::MIN_POSITIVE)).expect("noise sigma");
    let rgb = labels
        .iter()
        .map(|&l| {
            let base = if l == 0 {
                spec.background
            } else {
                cell_colors[l as usize - 1]
            };
            base.map(|c| (c + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
        })
        .collect();
    let mask = LabeledMask::new(w, h, labels, Some(rgb))?;
    Ok((mask, grade))
}
