use serde_json::Value;
use sgdlab::doublewell::{mode_invariance_check, run_double_well, write_field_csv, DoubleWellConfig};
use sgdlab::fokker_planck::{write_grid_csv, GridSidecar};

use crate::config::CommandConfig;
use crate::error::CliError;
use crate::output::OutputDir;

impl CommandConfig for DoubleWellConfig {
    fn defaults() -> Value {
        serde_json::to_value(DoubleWellConfig::default()).expect("default config serializes")
    }

    fn seed_paths(_: &Value) -> Vec<&'static str> {
        vec!["sde.seed"]
    }

    fn seed(&self) -> Option<u64> {
        Some(self.sde.seed)
    }
}

pub fn run(cfg: &DoubleWellConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let bundles = run_double_well(cfg)?;
    for b in &bundles {
        let dir = format!("lambda_{}", b.lambda);
        let rho = &b.steady.density;
        out.write(&format!("{dir}/field.csv"), |w| write_field_csv(w, b.lambda, rho))?;
        out.write(&format!("{dir}/rho_ss.csv"), |w| write_grid_csv(w, rho))?;
        out.write_json(&format!("{dir}/rho_ss.json"), &GridSidecar::new(rho, cfg.beta_inv, Some(&b.free_energy)))?;
        out.write_json(&format!("{dir}/summary.json"), &b.summary())?;
    }
    out.write_json("invariance.json", &mode_invariance_check(&bundles)?)?;
    let stuck: Vec<String> = bundles.iter().filter(|b| !b.steady.converged).map(|b| b.lambda.to_string()).collect();
    if !stuck.is_empty() {
        return Err(CliError::NotConverged(format!("steady state for lambda {}", stuck.join(", "))));
    }
    Ok(())
}
