//! Command-line laboratory: configuration, artifact writers and subcommands.

pub mod commands;
pub mod config;
pub mod output;

use sipfield::coupling::CouplingError;
use sipfield::covariance::CovarianceError;
use sipfield::field::FieldError;
use sipfield::geometry::GeometryError;
use sipfield::lattice::LatticeError;
use sipfield::verify::VerifyError;
use thiserror::Error;

/// Exit status when every check passed.
pub const EXIT_PASS: i32 = 0;
/// Exit status when a check failed.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Exit status for configuration, input or output errors.
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}
