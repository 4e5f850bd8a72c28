use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sgdlab::fokker_planck::{
    current_and_force, entropy_production_rate, free_energy, potential_from_density, steady_state, write_grid_csv,
    DensityGrid, FpOperator, FreeEnergyReport, GridSidecar, GridSpec, SteadyStateOptions,
};
use sgdlab::model_zoo::DoubleWellField;
use sgdlab::Mat2;

use crate::config::CommandConfig;
use crate::error::CliError;
use crate::output::OutputDir;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    /// The two-dimensional double well with rotation strength `lambda`.
    DoubleWell { lambda: f64 },
    /// `∇f(x) = F x`.
    Linear { f: Mat2 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Uniform,
    Gaussian { mean: [f64; 2], var: f64 },
    Random {
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpkConfig {
    pub drift: DriftSpec,
    /// Constant diffusion matrix.
    pub diffusion: Mat2,
    pub beta_inv: f64,
    pub grid: GridSpec,
    pub steady: SteadyStateOptions,
    pub init: InitSpec,
    /// Steps between rows of the free-energy trace.
    pub trace_every: u64,
}

impl CommandConfig for FpkConfig {
    fn defaults() -> Value {
        json!({
            "drift": { "kind": "double_well", "lambda": 1.0 },
            "diffusion": [[1.0, 0.0], [0.0, 1.0]],
            "beta_inv": 1.0,
            "grid": GridSpec::default(),
            "steady": SteadyStateOptions::default(),
            "init": { "kind": "uniform" },
            "trace_every": 1000,
        })
    }

    fn seed_paths(merged: &Value) -> Vec<&'static str> {
        if merged["init"]["kind"] == "random" { vec!["init.seed"] } else { Vec::new() }
    }

    fn seed(&self) -> Option<u64> {
        match self.init {
            InitSpec::Random { seed } => Some(seed),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.trace_every == 0 {
            return Err(CliError::Config("trace_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct Summary {
    converged: bool,
    rate: f64,
    time: f64,
    steps: u64,
    clamp_events: u64,
    mean: [f64; 2],
    covariance: Mat2,
    free_energy: FreeEnergyReport,
    entropy_production: f64,
    max_face_flux: f64,
    /// Distance to `e^{−f/β⁻¹}/Z`, for drifts with a known potential.
    l1_to_gibbs: Option<f64>,
}

type Potential = Box<dyn Fn([f64; 2]) -> f64>;

fn initial_density(init: &InitSpec, grid: GridSpec) -> Result<DensityGrid, CliError> {
    Ok(match *init {
        InitSpec::Uniform => DensityGrid::uniform(grid)?,
        InitSpec::Gaussian { mean, var } => DensityGrid::gaussian(grid, mean, var)?,
        InitSpec::Random { seed } => DensityGrid::random(grid, seed)?,
    })
}

pub fn run(cfg: &FpkConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let d = cfg.diffusion;
    let (op, potential): (FpOperator, Option<Potential>) = match cfg.drift {
        DriftSpec::DoubleWell { lambda } => {
            let field = DoubleWellField::new(lambda);
            let op = FpOperator::new(cfg.grid, move |p| field.gradient(p), |_| d, cfg.beta_inv)?;
            (op, Some(Box::new(move |p| field.potential(p))))
        }
        DriftSpec::Linear { f } => {
            let grad = move |p: [f64; 2]| [f[0][0] * p[0] + f[0][1] * p[1], f[1][0] * p[0] + f[1][1] * p[1]];
            (FpOperator::new(cfg.grid, grad, |_| d, cfg.beta_inv)?, None)
        }
    };
    let init = initial_density(&cfg.init, cfg.grid)?;
    let ss = steady_state(&op, init.clone(), &cfg.steady)?;
    let rho_ss = &ss.density;
    let phi = potential_from_density(rho_ss, cfg.beta_inv)?;
    let at_ss = free_energy(rho_ss, &phi, cfg.beta_inv, rho_ss)?;

    // Replays the relaxation from the same start to trace F(ρ_t).
    let dt = op.default_dt();
    let mut trace = Vec::new();
    let mut rho = init;
    loop {
        trace.push((rho.steps, rho.time, free_energy(&rho, &phi, cfg.beta_inv, rho_ss)?));
        if rho.steps >= rho_ss.steps || !dt.is_finite() {
            break;
        }
        let n = cfg.trace_every.min(rho_ss.steps - rho.steps);
        op.evolve(&mut rho, dt, n)?;
    }

    let current = current_and_force(rho_ss, &op)?;
    let l1_to_gibbs = match &potential {
        Some(f) => Some(rho_ss.l1_distance(&DensityGrid::gibbs(cfg.grid, f, cfg.beta_inv)?)?),
        None => None,
    };

    out.write("rho_ss.csv", |w| write_grid_csv(w, rho_ss))?;
    out.write_json("rho_ss.json", &GridSidecar::new(rho_ss, cfg.beta_inv, Some(&at_ss)))?;
    out.write("potential.csv", |w| {
        writeln!(w, "x,y,phi")?;
        for (p, v) in cfg.grid.centers().zip(&phi.values) {
            writeln!(w, "{},{},{v:e}", p[0], p[1])?;
        }
        Ok(())
    })?;
    out.write("current.csv", |w| {
        writeln!(w, "x,y,jx,jy,force_x,force_y")?;
        for ((p, c), f) in cfg.grid.centers().zip(&current.cell).zip(&current.force) {
            match f {
                Some(f) => writeln!(w, "{},{},{:e},{:e},{:e},{:e}", p[0], p[1], c[0], c[1], f[0], f[1])?,
                None => writeln!(w, "{},{},{:e},{:e},,", p[0], p[1], c[0], c[1])?,
            }
        }
        Ok(())
    })?;
    out.write("free_energy.csv", |w| {
        writeln!(w, "step,t,energetic,entropy,free_energy,kl")?;
        for (s, t, r) in &trace {
            writeln!(w, "{s},{t},{:e},{:e},{:e},{:e}", r.energetic, r.entropy, r.free_energy, r.kl_to_ss)?;
        }
        Ok(())
    })?;
    let summary = Summary {
        converged: ss.converged,
        rate: ss.rate,
        time: rho_ss.time,
        steps: rho_ss.steps,
        clamp_events: rho_ss.clamp_events,
        mean: rho_ss.mean(),
        covariance: rho_ss.covariance(),
        free_energy: at_ss,
        entropy_production: entropy_production_rate(rho_ss, &phi, |_| d, cfg.beta_inv)?,
        max_face_flux: current.max_face_flux(),
        l1_to_gibbs,
    };
    out.write_json("summary.json", &summary)?;
    if !ss.converged {
        return Err(CliError::NotConverged(format!(
            "steady state rate {:e} above tol {:e} after t = {}",
            ss.rate, cfg.steady.tol, rho_ss.time
        )));
    }
    Ok(())
}
