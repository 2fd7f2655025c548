//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AtlasError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("propagation produced non-finite amplitudes ({context})")]
    NonFinite { context: String },

    #[error("grid too small: wavefunction mass at edge {mass:.3e} exceeds 1e-6 without absorber")]
    EdgeMass { mass: f64 },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("propagator eigenvalue modulus {modulus} exceeds 1 + 1e-6; propagator is broken")]
    AmplifyingPropagator { modulus: f64 },

    #[error("{0}")]
    Dataset(String),

    #[error("manifest parse error at line {line}: {reason}")]
    ManifestParse { line: usize, reason: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: String },

    #[error("clustering error: {0}")]
    Cluster(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("missing stage artifact: {0}")]
    MissingArtifact(String),

    #[error("config hash mismatch: artifact {artifact} was produced by {found}, expected {expected} (rerun upstream stages or pass --force)")]
    HashMismatch {
        artifact: String,
        found: String,
        expected: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, AtlasError>;
