use thiserror::Error;

use crate::decomposition::DecompositionError;
use crate::diagnostics::DiagnosticsError;
use crate::diffusion::DiffusionError;
use crate::fokker_planck::FpError;
use crate::model_zoo::ModelError;
use crate::sde::SdeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error, one variant per module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    FokkerPlanck(#[from] FpError),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
