use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sgdlab::decomposition::{check_hurwitz, decompose_linear, from_rows, ou_stationary_covariance, DecompositionReport};

use crate::config::CommandConfig;
use crate::error::CliError;
use crate::output::OutputDir;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeConfig {
    /// Drift Jacobian, row-major.
    pub f: Vec<Vec<f64>>,
    /// Diffusion matrix; the identity when absent.
    pub d: Option<Vec<Vec<f64>>>,
    pub beta_inv: f64,
}

impl CommandConfig for DecomposeConfig {
    fn defaults() -> Value {
        json!({ "f": [[1.0, -1.0], [1.0, 1.0]], "d": null, "beta_inv": 1.0 })
    }

    fn seed_paths(_: &Value) -> Vec<&'static str> {
        Vec::new()
    }

    fn seed(&self) -> Option<u64> {
        None
    }
}

pub fn run(cfg: &DecomposeConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let f = from_rows(&cfg.f)?;
    let d = match &cfg.d {
        Some(rows) => from_rows(rows)?,
        None => nalgebra::DMatrix::identity(f.nrows(), f.ncols()),
    };
    let dec = decompose_linear(&f, &d)?;
    // The stationary covariance exists only for a stable drift.
    let sigma = match check_hurwitz(&f) {
        Ok(()) => Some(ou_stationary_covariance(&f, &d, cfg.beta_inv)?),
        Err(_) => None,
    };
    out.write_json("decomposition.json", &DecompositionReport::new(&dec, sigma.as_ref(), Some(cfg.beta_inv)))
}
