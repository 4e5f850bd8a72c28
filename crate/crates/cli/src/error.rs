use sgdlab::decomposition::DecompositionError;
use sgdlab::diagnostics::DiagnosticsError;
use sgdlab::diffusion::DiffusionError;
use sgdlab::fokker_planck::FpError;
use sgdlab::model_zoo::ModelError;
use sgdlab::sde::SdeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("did not converge: {0}")]
    NotConverged(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::NotConverged(_) => 4,
        }
    }

    /// Short status recorded in the manifest.
    pub fn status(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io_error",
            CliError::Config(_) => "config_error",
            CliError::Numeric(_) => "numeric_failure",
            CliError::NotConverged(_) => "not_converged",
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.into())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite(_) => CliError::Numeric(e.to_string()),
            ModelError::Io(e) => CliError::Io(e),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::Model(m) => m.into(),
            DiffusionError::DimensionMismatch { .. }
            | DiffusionError::TooFewSamples { .. }
            | DiffusionError::InvalidBatch { .. }
            | DiffusionError::InvalidArgument(_) => CliError::Config(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<SdeError> for CliError {
    fn from(e: SdeError) -> Self {
        match e {
            SdeError::Model(m) => m.into(),
            SdeError::Diffusion(d) => d.into(),
            SdeError::InvalidConfig(_) | SdeError::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<FpError> for CliError {
    fn from(e: FpError) -> Self {
        match e {
            FpError::NonFinite(_) => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<DecompositionError> for CliError {
    fn from(e: DecompositionError) -> Self {
        match e {
            DecompositionError::DimensionMismatch { .. }
            | DecompositionError::NotSymmetric(_)
            | DecompositionError::NotPositiveSemidefinite(_)
            | DecompositionError::InvalidArgument(_) => CliError::Config(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::ZeroVariance => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<sgdlab::Error> for CliError {
    fn from(e: sgdlab::Error) -> Self {
        match e {
            sgdlab::Error::Model(e) => e.into(),
            sgdlab::Error::Diffusion(e) => e.into(),
            sgdlab::Error::Sde(e) => e.into(),
            sgdlab::Error::FokkerPlanck(e) => e.into(),
            sgdlab::Error::Decomposition(e) => e.into(),
            sgdlab::Error::Diagnostics(e) => e.into(),
            sgdlab::Error::Io(e) => CliError::Io(e),
            sgdlab::Error::Json(e) => e.into(),
        }
    }
}
