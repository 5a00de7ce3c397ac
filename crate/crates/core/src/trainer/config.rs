use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{Result, TrainConfig, TrainError};
use crate::gnn::PatchPolicy;
use crate::graphbuilder::AugmentParams;

/// Every tunable of a run, readable from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub augment: AugmentParams,
    pub patched: bool,
    /// Leading features kept per node.
    pub feature_dim: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            augment: AugmentParams::default(),
            patched: true,
            feature_dim: 16,
        }
    }
}

pub const KEYS: &[&str] = &[
    "lr0",
    "epochs",
    "folds",
    "seed",
    "plateau_factor",
    "plateau_patience",
    "min_lr",
    "huber_delta",
    "embed_dim",
    "p",
    "pool_sizes",
    "renorm",
    "renorm_input",
    "patch_policy",
    "standardize",
    "alpha",
    "beta",
    "grid_d",
    "nodes",
    "patched",
    "feature_dim",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| TrainError::InvalidConfig(format!("cannot parse {key} = {value:?}")))
}

impl ExperimentConfig {
    /// Parses a config file body. Blank lines and `#` comments are skipped;
    /// unspecified keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| TrainError::ConfigSyntax {
                    line: i + 1,
                    message: format!("expected key = value, got {line:?}"),
                })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| TrainError::ConfigSyntax {
                    line: i + 1,
                    message: e.to_string(),
                })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "lr0" => t.lr0 = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "folds" => t.folds = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "plateau_factor" => t.plateau.factor = parse(key, value)?,
            "plateau_patience" => t.plateau.patience = parse(key, value)?,
            "min_lr" => t.plateau.min_lr = parse(key, value)?,
            "huber_delta" => t.huber_delta = parse(key, value)?,
            "embed_dim" => t.hyper.embed_dim = parse(key, value)?,
            "p" => t.hyper.p = parse(key, value)?,
            "pool_sizes" => {
                t.hyper.pool_sizes = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "renorm" => t.hyper.renorm = value.parse().map_err(TrainError::InvalidConfig)?,
            "renorm_input" => t.hyper.renorm_input = parse(key, value)?,
            "patch_policy" => {
                t.policy = match value {
                    "pad" => PatchPolicy::PadEmpty,
                    "skip" => PatchPolicy::SkipEmpty,
                    _ => {
                        return Err(TrainError::InvalidConfig(format!(
                            "patch_policy must be pad or skip, got {value:?}"
                        )))
                    }
                }
            }
            "standardize" => t.standardize = parse(key, value)?,
            "alpha" => self.augment.alpha = parse(key, value)?,
            "beta" => self.augment.beta = parse(key, value)?,
            "grid_d" => self.augment.d = parse(key, value)?,
            "nodes" => self.augment.m = parse(key, value)?,
            "patched" => self.patched = parse(key, value)?,
            "feature_dim" => self.feature_dim = parse(key, value)?,
            _ => {
                return Err(TrainError::InvalidConfig(format!(
                    "unknown config key {key:?}"
                )))
            }
        }
        Ok(())
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let pools: Vec<String> = t.hyper.pool_sizes.iter().map(usize::to_string).collect();
        let values: Vec<String> = vec![
            t.lr0.to_string(),
            t.epochs.to_string(),
            t.folds.to_string(),
            t.seed.to_string(),
            t.plateau.factor.to_string(),
            t.plateau.patience.to_string(),
            t.plateau.min_lr.to_string(),
            t.huber_delta.to_string(),
            t.hyper.embed_dim.to_string(),
            t.hyper.p.to_string(),
            pools.join(","),
            t.hyper.renorm.to_string(),
            t.hyper.renorm_input.to_string(),
            match t.policy {
                PatchPolicy::PadEmpty => "pad".into(),
                PatchPolicy::SkipEmpty => "skip".into(),
            },
            t.standardize.to_string(),
            self.augment.alpha.to_string(),
            self.augment.beta.to_string(),
            self.augment.d.to_string(),
            self.augment.m.to_string(),
            self.patched.to_string(),
            self.feature_dim.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.augment.validate()?;
        if !(1..=16).contains(&self.feature_dim) {
            return Err(TrainError::InvalidConfig(format!(
                "feature_dim {} must lie in 1..=16",
                self.feature_dim
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::RenormMode;

    #[test]
    fn round_trip_every_key() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.lr0 = 3e-4;
        cfg.train.hyper.pool_sizes = vec![16, 4, 1];
        cfg.train.hyper.renorm = RenormMode::Literal;
        cfg.train.policy = PatchPolicy::SkipEmpty;
        cfg.train.hyper.renorm_input = false;
        cfg.augment.m = 123;
        cfg.patched = false;
        let text = cfg.to_text();
        assert_eq!(text.lines().count(), KEYS.len());
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn comments_defaults_and_errors() {
        let cfg = ExperimentConfig::parse("# base\n\nepochs = 7  # short\nnodes=50\n").unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.augment.m, 50);
        assert_eq!(cfg.train.lr0, TrainConfig::default().lr0);
        assert!(matches!(
            ExperimentConfig::parse("epochs = 3\nbogus = 1\n"),
            Err(TrainError::ConfigSyntax { line: 2, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("epochs\n"),
            Err(TrainError::ConfigSyntax { line: 1, .. })
        ));
        assert!(ExperimentConfig::parse("epochs = many\n").is_err());
    }
}
