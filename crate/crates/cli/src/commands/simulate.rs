use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sgdlab::diffusion::SamplingScheme;
use sgdlab::formats::{write_trajectory_bin, write_trajectory_csv};
use sgdlab::model_zoo::{GradientModel, Model, ModelSpec};
use sgdlab::sde::{gradient_norm_series, sde_run, sgd_run, ModelDrift, NoiseMode, SdeConfig, SdeError, SgdConfig, Trajectory};

use crate::config::CommandConfig;
use crate::error::CliError;
use crate::output::OutputDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Discrete mini-batch SGD.
    Sgd,
    /// Euler–Maruyama on the continuous-time SDE.
    Sde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// `D(x)` from the model's per-sample gradients under `scheme`.
    Full,
    /// `D = scale · I`.
    Isotropic { scale: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelSpec,
    pub method: Method,
    pub eta: f64,
    pub batch: usize,
    pub scheme: SamplingScheme,
    pub steps: u64,
    pub record_every: u64,
    /// Snapshots discarded by downstream diagnostics.
    pub burnin: usize,
    pub seed: u64,
    /// SDE step; `eta` when absent.
    pub dt: Option<f64>,
    /// SDE temperature; `eta / 2b` when absent.
    pub beta_inv: Option<f64>,
    pub noise: NoiseSpec,
    /// Starting point; the model's seeded initialization when absent.
    pub x0: Option<Vec<f64>>,
}

impl CommandConfig for SimulateConfig {
    fn defaults() -> Value {
        json!({
            "method": "sgd",
            "eta": 0.05,
            "batch": 8,
            "scheme": "with_replacement",
            "steps": 10000,
            "record_every": 10,
            "burnin": 0,
            "seed": 0,
            "dt": null,
            "beta_inv": null,
            "noise": { "kind": "full" },
            "x0": null,
        })
    }

    fn seed_paths(_: &Value) -> Vec<&'static str> {
        vec!["seed", "model.seed"]
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }
}

#[derive(Debug, Serialize)]
struct Summary {
    method: Method,
    model: String,
    d: usize,
    #[serde(rename = "N")]
    n: usize,
    snapshots: usize,
    dt: Option<f64>,
    beta_inv: Option<f64>,
    final_grad_norm: Option<f64>,
    final_loss: Option<f64>,
    factor_fallbacks: u64,
    failure: Option<String>,
}

fn simulate(cfg: &SimulateConfig, model: &Model, x0: &[f64]) -> Result<Trajectory, SdeError> {
    match cfg.method {
        Method::Sgd => {
            let sgd = SgdConfig {
                eta: cfg.eta,
                batch: cfg.batch,
                scheme: cfg.scheme,
                steps: cfg.steps,
                record_every: cfg.record_every,
                seed: cfg.seed,
                burnin: cfg.burnin,
            };
            sgd_run(model, x0, &sgd)
        }
        Method::Sde => {
            let sde = SdeConfig {
                beta_inv: cfg.beta_inv.unwrap_or(cfg.eta / (2.0 * cfg.batch as f64)),
                dt: cfg.dt.unwrap_or(cfg.eta),
                steps: cfg.steps,
                record_every: cfg.record_every,
                seed: cfg.seed,
                burnin: cfg.burnin,
            };
            let noise = match cfg.noise {
                NoiseSpec::Full => NoiseMode::FullModel { model, scheme: cfg.scheme },
                NoiseSpec::Isotropic { scale } => NoiseMode::Isotropic(scale),
            };
            sde_run(&ModelDrift(model), &noise, &sde, x0)
        }
    }
}

pub fn run(cfg: &SimulateConfig, out: &mut OutputDir) -> Result<(), CliError> {
    if cfg.batch == 0 {
        return Err(CliError::Config("batch must be >= 1".into()));
    }
    let model = cfg.model.build()?;
    let x0 = match &cfg.x0 {
        Some(x) => x.clone(),
        None => model.initial_weights(cfg.model.seed).into_inner(),
    };
    let (traj, failure) = match simulate(cfg, &model, &x0) {
        Ok(t) => (t, None),
        Err(e) => match e.partial() {
            Some(p) => (p.clone(), Some(e)),
            None => return Err(e.into()),
        },
    };

    out.write("trajectory.bin", |w| write_trajectory_bin(w, &traj))?;
    out.write("trajectory.csv", |w| write_trajectory_csv(w, &traj))?;
    let norms = if failure.is_none() { gradient_norm_series(&model, &traj)? } else { Vec::new() };
    out.write("gradient_norms.csv", |w| {
        writeln!(w, "index,t,grad_norm")?;
        for (i, (t, g)) in traj.times().iter().zip(&norms).enumerate() {
            writeln!(w, "{i},{t},{g:e}")?;
        }
        Ok(())
    })?;
    let final_loss = traj.last().and_then(|x| {
        let n = model.num_samples();
        (0..n).map(|k| model.sample_loss(x, k)).sum::<Option<f64>>().map(|s| s / n as f64)
    });
    let summary = Summary {
        method: cfg.method,
        model: model.name(),
        d: model.dim(),
        n: model.num_samples(),
        snapshots: traj.len(),
        dt: traj.meta.dt,
        beta_inv: traj.meta.beta_inv,
        final_grad_norm: norms.last().copied(),
        final_loss,
        factor_fallbacks: traj.meta.factor_fallbacks,
        failure: failure.as_ref().map(ToString::to_string),
    };
    out.write_json("summary.json", &summary)?;
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}
