use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;

use super::{build_dataset, cross_validate, evaluate_cv, ExperimentConfig, FoldReport, Result};
use crate::featureio::CellFeatureSet;
use crate::graphbuilder::AugmentParams;

pub const METRICS_HEADER: &str = "run_id,kind,grid_point,fold,epoch,train_loss,val_acc,lr";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    /// One graph per image versus four quadrant patches, over node budgets.
    Patching,
    /// Number of node features kept.
    FeatureDim,
    /// Node budget with the base patching mode.
    GraphSize,
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationKind::Patching => "patching",
            AblationKind::FeatureDim => "feature-dim",
            AblationKind::GraphSize => "graph-size",
        })
    }
}

impl FromStr for AblationKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.replace('_', "-").as_str() {
            "patching" => Ok(AblationKind::Patching),
            "feature-dim" => Ok(AblationKind::FeatureDim),
            "graph-size" => Ok(AblationKind::GraphSize),
            _ => Err(format!("unknown ablation kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridPoint {
    pub patched: bool,
    pub nodes: usize,
    pub feature_dim: usize,
}

impl GridPoint {
    pub fn label(&self) -> String {
        format!(
            "{}_m{}_f{}",
            if self.patched { "patched" } else { "single" },
            self.nodes,
            self.feature_dim
        )
    }
}

impl AblationKind {
    /// Grid for this sweep. `values` are node budgets for `Patching` and
    /// `GraphSize`, feature widths for `FeatureDim`; the remaining axes come
    /// from `base`.
    pub fn grid(self, values: &[usize], base: &ExperimentConfig) -> Vec<GridPoint> {
        let point = |patched, nodes, feature_dim| GridPoint {
            patched,
            nodes,
            feature_dim,
        };
        match self {
            AblationKind::Patching => [false, true]
                .iter()
                .flat_map(|&p| values.iter().map(move |&m| point(p, m, base.feature_dim)))
                .collect(),
            AblationKind::FeatureDim => values
                .iter()
                .map(|&f| point(base.patched, base.augment.m, f))
                .collect(),
            AblationKind::GraphSize => values
                .iter()
                .map(|&m| point(base.patched, m, base.feature_dim))
                .collect(),
        }
    }
}

/// Result of one grid cell: fold reports and `(mean, std)` in percent, or
/// the error message.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub point: GridPoint,
    pub result: std::result::Result<(Vec<FoldReport>, (f64, f64)), String>,
}

/// Serial writer for the metrics CSV.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(MetricsWriter { out })
    }

    pub fn fold(
        &mut self,
        run_id: &str,
        kind: &str,
        grid_point: &str,
        report: &FoldReport,
    ) -> io::Result<()> {
        for e in &report.epochs {
            writeln!(
                self.out,
                "{run_id},{kind},{grid_point},{},{},{},{},{}",
                report.fold, e.epoch, e.train_loss, e.val_acc, e.lr
            )?;
        }
        Ok(())
    }

    pub fn summary(
        &mut self,
        run_id: &str,
        kind: &str,
        grid_point: &str,
        (mean, std): (f64, f64),
    ) -> io::Result<()> {
        writeln!(
            self.out,
            "SUMMARY,{run_id},{kind},{grid_point},{mean},{std}"
        )
    }

    pub fn failed(
        &mut self,
        run_id: &str,
        kind: &str,
        grid_point: &str,
        message: &str,
    ) -> io::Result<()> {
        writeln!(
            self.out,
            "FAILED,{run_id},{kind},{grid_point},{}",
            message.replace([',', '\n'], ";")
        )
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

fn run_cell(
    point: GridPoint,
    sets: &[CellFeatureSet],
    base: &ExperimentConfig,
) -> Result<(Vec<FoldReport>, (f64, f64))> {
    let params = AugmentParams {
        m: point.nodes,
        ..base.augment
    };
    let data = build_dataset(
        sets,
        &params,
        point.patched,
        Some(point.feature_dim),
        base.train.seed,
    )?;
    let reports: Vec<FoldReport> = cross_validate(&data, &base.train)?
        .into_iter()
        .map(|o| o.report)
        .collect();
    let summary = evaluate_cv(&reports);
    Ok((reports, summary))
}

/// Runs full cross-validation at every grid point and writes fold rows plus
/// a `SUMMARY` (or `FAILED`) row per point, in grid order.
pub fn run_ablation<W: Write>(
    run_id: &str,
    kind: AblationKind,
    grid: &[GridPoint],
    sets: &[CellFeatureSet],
    base: &ExperimentConfig,
    writer: &mut MetricsWriter<W>,
) -> io::Result<Vec<CellOutcome>> {
    let outcomes: Vec<CellOutcome> = grid
        .par_iter()
        .map(|&point| CellOutcome {
            point,
            result: run_cell(point, sets, base).map_err(|e| e.to_string()),
        })
        .collect();
    let kind = kind.to_string();
    for o in &outcomes {
        let label = o.point.label();
        match &o.result {
            Ok((reports, summary)) => {
                for r in reports {
                    writer.fold(run_id, &kind, &label, r)?;
                }
                writer.summary(run_id, &kind, &label, *summary)?;
            }
            Err(message) => {
                log::warn!("grid point {label} failed: {message}");
                writer.failed(run_id, &kind, &label, message)?;
            }
        }
    }
    Ok(outcomes)
}
