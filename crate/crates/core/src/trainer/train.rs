use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{classify, make_folds, Dataset, Plateau, Result, TrainConfig, TrainError};
use crate::gnn::{FeatureScaler, GraphModel, ModelParams};
use crate::rng::{derive_seed, named_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample loss over the epoch, each taken before its step.
    pub train_loss: f64,
    pub val_acc: f64,
    /// Rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub epochs: Vec<EpochRecord>,
    pub final_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub report: FoldReport,
    pub model: GraphModel,
}

/// Fraction of `ids` whose rounded prediction equals the label.
pub fn accuracy(model: &GraphModel, data: &Dataset, ids: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for &i in ids {
        let s = &data.samples[i];
        if classify(model.predict(&s.patches)?) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ids.len() as f64)
}

/// Fresh starts allowed per fold after the model collapses.
pub const MAX_RESTARTS: u64 = 16;

/// Parameters for start `attempt` of a fold: seeded init, head calibration
/// on the training patches, output bias at the mean training target.
fn fresh_params(
    model: &mut GraphModel,
    data: &Dataset,
    train_ids: &[usize],
    model_seed: u64,
    attempt: u64,
    config: &TrainConfig,
) -> Result<()> {
    let seed = if attempt == 0 {
        model_seed
    } else {
        derive_seed(model_seed, attempt)
    };
    model.params = ModelParams::init(data.feature_dim, &config.hyper, seed)?;
    model.calibrate_head(
        train_ids
            .iter()
            .map(|&i| data.samples[i].patches.as_slice()),
    )?;
    let mean = train_ids
        .iter()
        .map(|&i| f64::from(data.samples[i].label))
        .sum::<f64>()
        / train_ids.len() as f64;
    if let Some(b) = model.params.tensors.last_mut() {
        b.data_mut().fill(mean);
    }
    Ok(())
}

/// Trains a fresh model on `train_ids` with per-sample gradient descent,
/// validating on `val_ids` after every epoch.
pub fn train_fold(
    data: &Dataset,
    train_ids: &[usize],
    val_ids: &[usize],
    fold: usize,
    model_seed: u64,
    config: &TrainConfig,
) -> Result<FoldOutcome> {
    config.validate()?;
    if train_ids.is_empty() || val_ids.is_empty() {
        return Err(TrainError::DegenerateDataset(
            "empty training or validation split".into(),
        ));
    }
    let scaler = if config.standardize {
        FeatureScaler::fit(
            train_ids
                .iter()
                .flat_map(|&i| data.samples[i].patches.iter()),
        )
    } else {
        None
    };
    let mut model = GraphModel {
        params: ModelParams::zeros(data.feature_dim, &config.hyper)?,
        scaler,
        policy: config.policy,
    };
    let mut restarts = 0;
    fresh_params(&mut model, data, train_ids, model_seed, restarts, config)?;
    let last = model.params.tensors.len() - 1;
    let shuffle_base = named_seed(model_seed, "shuffle");
    let mut plateau = Plateau::new(config.lr0, config.plateau);
    let mut order = train_ids.to_vec();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let lr = plateau.lr;
        order.copy_from_slice(train_ids);
        order.shuffle(&mut rng_from(derive_seed(shuffle_base, epoch as u64)));
        let mut total = 0.0;
        let mut live = false;
        for &i in &order {
            let s = &data.samples[i];
            let eval = model.evaluate(&s.patches, f64::from(s.label), config.huber_delta)?;
            let finite = eval.loss.is_finite()
                && eval
                    .grads
                    .iter()
                    .all(|g| g.data().iter().all(|v| v.is_finite()));
            if !finite {
                return Err(TrainError::Divergence {
                    epoch,
                    loss: eval.loss,
                });
            }
            total += eval.loss;
            live |= eval.grads[..last]
                .iter()
                .any(|g| g.data().iter().any(|&v| v != 0.0));
            model.step(&eval.grads, lr);
        }
        let val_acc = accuracy(&model, data, val_ids)?;
        let train_loss = total / order.len() as f64;
        log::debug!("fold {fold} epoch {epoch}: loss {train_loss:.5} val {val_acc:.4} lr {lr:e}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_acc,
            lr,
        });
        if live || restarts == MAX_RESTARTS {
            plateau.step(val_acc);
        } else {
            // No gradient got past the output bias all epoch: every merge
            // unit is silent and descent cannot leave this state.
            restarts += 1;
            log::debug!("fold {fold} epoch {epoch}: collapsed, restart {restarts}");
            fresh_params(&mut model, data, train_ids, model_seed, restarts, config)?;
            plateau = Plateau::new(plateau.lr, config.plateau);
        }
    }
    let final_accuracy = epochs.last().map_or(0.0, |e| e.val_acc);
    Ok(FoldOutcome {
        report: FoldReport {
            fold,
            epochs,
            final_accuracy,
        },
        model,
    })
}

/// Stratified k-fold cross-validation; fold assignment and model seeds come
/// from the `"folds"` and `"model"` streams of `config.seed`.
pub fn cross_validate(data: &Dataset, config: &TrainConfig) -> Result<Vec<FoldOutcome>> {
    config.validate()?;
    let folds = make_folds(
        &data.labels(),
        config.folds,
        named_seed(config.seed, "folds"),
    )?;
    let model_base = named_seed(config.seed, "model");
    folds
        .par_iter()
        .enumerate()
        .map(|(f, (train, val))| {
            train_fold(
                data,
                train,
                val,
                f,
                derive_seed(model_base, f as u64),
                config,
            )
        })
        .collect()
}

/// Mean and population standard deviation of the fold-final accuracies, in
/// percent.
pub fn evaluate_cv(reports: &[FoldReport]) -> (f64, f64) {
    let finals: Vec<f64> = reports.iter().map(|r| r.final_accuracy).collect();
    mean_std_percent(&finals)
}

pub fn mean_std_percent(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (100.0 * mean, 100.0 * var.sqrt())
}
