use std::fmt;

use cellgraph::featureio::FeatureIoError;
use cellgraph::gnn::GnnError;
use cellgraph::graphbuilder::GraphError;
use cellgraph::trainer::TrainError;
use cellgraph_autodiff::AutodiffError;

/// Bad flags, missing inputs or inconsistent arguments.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

fn autodiff_code(e: &AutodiffError) -> Option<i32> {
    matches!(e, AutodiffError::CheckpointFormat(_)).then_some(EXIT_FORMAT)
}

fn gnn_code(e: &GnnError) -> Option<i32> {
    match e {
        GnnError::Autodiff(a) => autodiff_code(a),
        GnnError::Checkpoint(_) | GnnError::FeatureWidth { .. } => Some(EXIT_FORMAT),
        GnnError::InvalidHyper(_) => Some(EXIT_USAGE),
        _ => None,
    }
}

fn features_code(e: &FeatureIoError) -> Option<i32> {
    match e {
        FeatureIoError::Format { .. } | FeatureIoError::DimMismatch(_) | FeatureIoError::InvalidMask(_) => {
            Some(EXIT_FORMAT)
        }
        FeatureIoError::Spec(_) => Some(EXIT_USAGE),
        _ => None,
    }
}

fn graph_code(e: &GraphError) -> Option<i32> {
    match e {
        GraphError::Format(_) => Some(EXIT_FORMAT),
        GraphError::InvalidParams(_) => Some(EXIT_USAGE),
        _ => None,
    }
}

fn train_code(e: &TrainError) -> Option<i32> {
    match e {
        TrainError::Divergence { .. } => Some(EXIT_DIVERGENCE),
        TrainError::ConfigSyntax { .. } => Some(EXIT_FORMAT),
        TrainError::InvalidConfig(_) => Some(EXIT_USAGE),
        TrainError::Model(m) => gnn_code(m),
        TrainError::Graph(g) => graph_code(g),
        TrainError::Features(f) => features_code(f),
        _ => None,
    }
}

/// Process exit code for a failed command: the first classifiable error in
/// the chain decides.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        let code = if cause.is::<UsageError>() {
            Some(EXIT_USAGE)
        } else if let Some(e) = cause.downcast_ref::<TrainError>() {
            train_code(e)
        } else if let Some(e) = cause.downcast_ref::<GnnError>() {
            gnn_code(e)
        } else if let Some(e) = cause.downcast_ref::<GraphError>() {
            graph_code(e)
        } else if let Some(e) = cause.downcast_ref::<FeatureIoError>() {
            features_code(e)
        } else if let Some(e) = cause.downcast_ref::<AutodiffError>() {
            autodiff_code(e)
        } else {
            None
        };
        if let Some(code) = code {
            return code;
        }
    }
    EXIT_FAILURE
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes() {
        assert_eq!(exit_code(&usage("bad flag")), EXIT_USAGE);
        let diverged: anyhow::Error = TrainError::Divergence { epoch: 3, loss: f64::NAN }.into();
        assert_eq!(exit_code(&diverged.context("training run")), EXIT_DIVERGENCE);
        let format: anyhow::Error = TrainError::Features(FeatureIoError::Format {
            line: 2,
            message: "x".into(),
        })
        .into();
        assert_eq!(exit_code(&format), EXIT_FORMAT);
        let io = Err::<(), _>(std::io::Error::other("disk")).context("writing");
        assert_eq!(exit_code(&io.unwrap_err()), EXIT_FAILURE);
    }
}
