//! Smooth-L1 grade regression with plateau scheduling, stratified k-fold
//! cross-validation and the ablation sweeps.

mod ablation;
mod config;
mod data;
mod train;

pub use ablation::{
    run_ablation, AblationKind, CellOutcome, GridPoint, MetricsWriter, METRICS_HEADER,
};
pub use config::{ExperimentConfig, KEYS as CONFIG_KEYS};
pub use data::{
    build_dataset, dataset_from_graphs, image_graph, selection_seed, synthetic_feature_sets,
    synthetic_image, Dataset, Sample,
};
pub use train::{
    accuracy, cross_validate, evaluate_cv, mean_std_percent, train_fold, EpochRecord, FoldOutcome,
    FoldReport,
};

use thiserror::Error;

use crate::gnn::{GnnError, HyperParams, PatchPolicy};
use crate::rng::rng_from;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] GnnError),
    #[error(transparent)]
    Graph(#[from] crate::graphbuilder::GraphError),
    #[error(transparent)]
    Features(#[from] crate::featureio::FeatureIoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Learning-rate reduction on a validation-accuracy plateau.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.5,
            patience: 10,
            min_lr: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub epochs: usize,
    pub folds: usize,
    pub seed: u64,
    pub plateau: PlateauConfig,
    pub huber_delta: f64,
    pub hyper: HyperParams,
    pub policy: PatchPolicy,
    /// Standardize node features with statistics of the training fold.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 5e-5,
            epochs: 100,
            folds: 3,
            seed: 0,
            plateau: PlateauConfig::default(),
            huber_delta: 1.0,
            hyper: HyperParams::default(),
            policy: PatchPolicy::PadEmpty,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor < 1.0) {
            return bad(format!("plateau factor {} must lie in (0, 1)", p.factor));
        }
        if p.patience == 0 {
            return bad("plateau patience must be at least 1".into());
        }
        if !(self.lr0 > p.min_lr) {
            return bad(format!("lr0 {} must exceed min_lr {}", self.lr0, p.min_lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.folds < 2 {
            return bad("at least 2 folds are needed".into());
        }
        if !(self.huber_delta > 0.0) {
            return bad("huber delta must be positive".into());
        }
        self.hyper.validate()?;
        Ok(())
    }
}

/// Huber loss: `0.5·r²/δ` for `|r| < δ`, else `|r| − 0.5·δ`.
pub fn smooth_l1(pred: f64, target: f64, delta: f64) -> f64 {
    cellgraph_autodiff::huber(pred - target, delta)
}

/// Nearest grade, ties rounding up, clamped to `0..=2`.
pub fn classify(pred: f64) -> u8 {
    (pred + 0.5).floor().clamp(0.0, 2.0) as u8
}

/// Stratified `k`-fold split of sample indices by label. Returns
/// `(train, val)` index lists, both sorted.
///
/// Each class is shuffled and dealt round-robin, continuing from where the
/// previous class stopped so overall fold sizes also differ by at most one.
pub fn make_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    use rand::seq::SliceRandom;
    if k < 2 || labels.len() < k {
        return Err(TrainError::DegenerateDataset(format!(
            "{} samples cannot form {k} folds",
            labels.len()
        )));
    }
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut rng = rng_from(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut next = 0usize;
    for &c in &classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.len() < k {
            return Err(TrainError::DegenerateDataset(format!(
                "class {c} has {} samples, fewer than {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = next % k;
            next += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| assignment[i] == f);
            (train, val)
        })
        .collect())
}

/// Plateau scheduler state.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub config: PlateauConfig,
    pub lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl Plateau {
    pub fn new(lr0: f64, config: PlateauConfig) -> Self {
        Plateau {
            config,
            lr: lr0,
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's accuracy and returns the learning rate to use next.
    pub fn step(&mut self, accuracy: f64) -> f64 {
        if accuracy > self.best {
            self.best = accuracy;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.config.patience {
                self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}
