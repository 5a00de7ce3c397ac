//! Cell extraction, per-cell features, the feature table format and the
//! synthetic tissue generator.

mod extract;
mod features;
mod mask;
mod synth;
mod table;

pub use extract::{extract_cells, CellInstance};
pub use features::{compute_features, CellFeatureSet, CellRecord, FEATURE_NAMES};
pub use mask::LabeledMask;
pub use synth::{generate_synthetic_tissue, SynthSpec};
pub use table::{load_features, read_features, save_features, write_features};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureIoError {
    #[error("mask contains no labeled cells")]
    EmptyMask,

    #[error("mask has no color image; features need RGB values")]
    MissingColor,

    #[error("unsupported or inconsistent feature dimension: {0}")]
    DimMismatch(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("invalid synthetic tissue spec: {0}")]
    Spec(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FeatureIoError>;
