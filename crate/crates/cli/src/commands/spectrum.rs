use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sgdlab::diffusion::{
    beta_scaling_constant, diffusion_at, temperatures, write_spectrum_csv, SamplingScheme, SpectrumSummary,
    TemperaturePair,
};
use sgdlab::model_zoo::{GradientModel, ModelSpec};
use sgdlab::sde::{sgd_run, SgdConfig};

use crate::config::CommandConfig;
use crate::error::CliError;
use crate::output::OutputDir;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub model: ModelSpec,
    pub train: SgdConfig,
    /// Fractions of the run in `[0, 1]` at which `D` is computed.
    pub checkpoints: Vec<f64>,
    pub schemes: Vec<SamplingScheme>,
}

impl CommandConfig for SpectrumConfig {
    fn defaults() -> Value {
        json!({
            "train": { "eta": 0.1, "batch": 16, "scheme": "with_replacement", "steps": 2000, "seed": 0 },
            "checkpoints": [0.2, 0.4, 1.0],
            "schemes": ["with_replacement"],
        })
    }

    fn seed_paths(_: &Value) -> Vec<&'static str> {
        vec!["model.seed", "train.seed"]
    }

    fn seed(&self) -> Option<u64> {
        Some(self.train.seed)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.checkpoints.is_empty() || self.checkpoints.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(CliError::Config("checkpoints must be a non-empty list of fractions in [0, 1]".into()));
        }
        if self.schemes.is_empty() {
            return Err(CliError::Config("schemes must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct SpectrumEntry {
    file: String,
    #[serde(flatten)]
    summary: SpectrumSummary,
    beta_scaling_constant: f64,
}

#[derive(Debug, Serialize)]
struct Checkpoint {
    fraction: f64,
    step: u64,
    loss: Option<f64>,
    spectra: Vec<SpectrumEntry>,
}

#[derive(Debug, Serialize)]
struct Summary {
    model: String,
    d: usize,
    #[serde(rename = "N")]
    n: usize,
    temperatures: TemperaturePair,
    checkpoints: Vec<Checkpoint>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

fn mean_loss(model: &dyn GradientModel, x: &[f64]) -> Option<f64> {
    let n = model.num_samples();
    (0..n).map(|k| model.sample_loss(x, k)).sum::<Option<f64>>().map(|s| s / n as f64)
}

pub fn run(cfg: &SpectrumConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let model = cfg.model.build()?;
    let x0 = model.initial_weights(cfg.model.seed);
    let steps = cfg.train.steps;
    if steps == 0 {
        return Err(CliError::Config("train.steps must be >= 1".into()));
    }
    let at: Vec<u64> = cfg.checkpoints.iter().map(|f| (f * steps as f64).round() as u64).collect();
    // Record exactly at every checkpoint and nowhere else that is avoidable.
    let record_every = at.iter().filter(|&&k| k > 0).fold(steps, |g, &k| gcd(g, k));
    let sgd = SgdConfig { record_every, burnin: 0, ..cfg.train.clone() };
    let traj = sgd_run(&model, x0.as_slice(), &sgd)?;
    let temps = temperatures(sgd.eta, sgd.batch, model.num_samples())?;

    let mut checkpoints = Vec::with_capacity(at.len());
    for (&fraction, &step) in cfg.checkpoints.iter().zip(&at) {
        let x = traj.snapshot((step / record_every) as usize);
        let mut spectra = Vec::with_capacity(cfg.schemes.len());
        for &scheme in &cfg.schemes {
            let est = diffusion_at(&model, x, scheme)?;
            let beta_inv = match scheme {
                SamplingScheme::WithReplacement => temps.beta_inv,
                SamplingScheme::WithoutReplacement => temps.beta_inv_without_replacement,
            };
            let file = format!("spectrum_{:03}_{scheme}.csv", (fraction * 100.0).round() as u64);
            out.write(&file, |w| write_spectrum_csv(w, est.eigenvalues()))?;
            spectra.push(SpectrumEntry {
                file,
                summary: SpectrumSummary::new(&est, beta_inv),
                beta_scaling_constant: beta_scaling_constant(sgd.eta, sgd.batch, est.eigenvalues()),
            });
        }
        checkpoints.push(Checkpoint { fraction, step, loss: mean_loss(&model, x), spectra });
    }
    let summary = Summary { model: model.name(), d: model.dim(), n: model.num_samples(), temperatures: temps, checkpoints };
    out.write_json("summary.json", &summary)
}
