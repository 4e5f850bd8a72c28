//! The rotating double-well experiment: for each `λ`, the gradient field on
//! the grid, the Fokker–Planck steady state with its modes, the zeros of
//! `∇f`, and the rotation of a long SDE path about the origin.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{detect_limit_cycle, CycleReport, WindingAccumulator};
use crate::fokker_planck::{
    free_energy, potential_from_density, steady_state, DensityGrid, FpOperator, FreeEnergyReport, GridSpec,
    SteadyState, SteadyStateOptions,
};
use crate::model_zoo::DoubleWellField;
use crate::sde::{sde_integrate, sde_run, NoiseMode, SdeConfig, SdeError};
use crate::Result;

/// Everything needed to run the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoubleWellConfig {
    pub lambdas: Vec<f64>,
    pub grid: GridSpec,
    pub beta_inv: f64,
    pub steady: SteadyStateOptions,
    pub sde: SdeConfig,
    pub x0: [f64; 2],
    /// `‖∇f‖` below which a grid minimum seeds a Newton search.
    pub critical_threshold: f64,
    /// Independent paths of `sde.steps` steps each for the winding estimate;
    /// zero skips it.
    pub winding_paths: usize,
}

impl Default for DoubleWellConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 0.5, 1.5],
            grid: GridSpec::default(),
            beta_inv: 1.0,
            steady: SteadyStateOptions::default(),
            sde: SdeConfig { beta_inv: 1.0, dt: 1e-4, steps: 1_000_000, record_every: 10, seed: 0, burnin: 0 },
            x0: [1.0, 0.0],
            critical_threshold: 0.25,
            winding_paths: 200,
        }
    }
}

/// Most likely locations and critical points of `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub modes: Vec<[f64; 2]>,
    pub critical_points: Vec<[f64; 2]>,
}

/// Results for one `λ`.
#[derive(Debug, Clone)]
pub struct LambdaBundle {
    pub lambda: f64,
    pub steady: SteadyState,
    /// `L1` distance of the steady state to `e^{−Φ/β⁻¹}/Z` on the same grid.
    pub l1_to_gibbs: f64,
    pub free_energy: FreeEnergyReport,
    pub modes: ModeReport,
    pub cycle: CycleReport,
    pub winding: Option<WindingStats>,
}

/// Plain summary written per `λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub lambda: f64,
    pub converged: bool,
    pub rate: f64,
    pub time: f64,
    pub steps: u64,
    pub l1_to_gibbs: f64,
    pub free_energy: FreeEnergyReport,
    pub modes: Vec<[f64; 2]>,
    pub critical_points: Vec<[f64; 2]>,
    pub cycle: CycleReport,
    pub winding: Option<WindingStats>,
}

impl LambdaBundle {
    pub fn summary(&self) -> BundleSummary {
        BundleSummary {
            lambda: self.lambda,
            converged: self.steady.converged,
            rate: self.steady.rate,
            time: self.steady.density.time,
            steps: self.steady.density.steps,
            l1_to_gibbs: self.l1_to_gibbs,
            free_energy: self.free_energy,
            modes: self.modes.modes.clone(),
            critical_points: self.modes.critical_points.clone(),
            cycle: self.cycle.clone(),
            winding: self.winding.clone(),
        }
    }
}

/// Finite-volume operator of the double well with `D = I`.
pub fn double_well_operator(lambda: f64, grid: GridSpec, beta_inv: f64) -> Result<FpOperator> {
    let field = DoubleWellField::new(lambda);
    Ok(FpOperator::isotropic(grid, move |p| field.gradient(p), beta_inv)?)
}

/// Runs every `λ` in `cfg.lambdas`.
pub fn run_double_well(cfg: &DoubleWellConfig) -> Result<Vec<LambdaBundle>> {
    if cfg.lambdas.is_empty() {
        return Err(SdeError::InvalidConfig("lambda list must be non-empty".into()).into());
    }
    if let Some(l) = cfg.lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(SdeError::InvalidConfig(format!("lambda must be finite and >= 0, got {l}")).into());
    }
    cfg.lambdas.par_iter().map(|&lambda| run_one(cfg, lambda)).collect()
}

fn run_one(cfg: &DoubleWellConfig, lambda: f64) -> Result<LambdaBundle> {
    let field = DoubleWellField::new(lambda);
    let op = double_well_operator(lambda, cfg.grid, cfg.beta_inv)?;
    let steady = steady_state(&op, DensityGrid::uniform(cfg.grid)?, &cfg.steady)?;
    let gibbs = DensityGrid::gibbs(cfg.grid, |p| field.potential(p), cfg.beta_inv)?;
    let l1_to_gibbs = steady.density.l1_distance(&gibbs)?;
    let phi = potential_from_density(&steady.density, cfg.beta_inv)?;
    let free = free_energy(&steady.density, &phi, cfg.beta_inv, &steady.density)?;
    let modes = ModeReport {
        modes: find_modes(&steady.density),
        critical_points: critical_points(&field, &cfg.grid, cfg.critical_threshold),
    };
    let mut sde = cfg.sde.clone();
    sde.beta_inv = cfg.beta_inv;
    let traj = sde_run(&field, &NoiseMode::Isotropic(1.0), &sde, &cfg.x0)?;
    let cycle = detect_limit_cycle(&traj, [0.0, 0.0], traj.meta.burnin)?;
    let winding = match cfg.winding_paths {
        0 => None,
        paths => Some(ensemble_winding(lambda, &sde, cfg.x0, paths)?),
    };
    Ok(LambdaBundle { lambda, steady, l1_to_gibbs, free_energy: free, modes, cycle, winding })
}

/// Local maxima of a density over the 8-neighborhood that exceed 10% of the
/// global maximum.
///
/// Cells whose values agree within `1e-12 · max` form a cluster; a cluster
/// of at most 4 cells that exceeds every surrounding cell by at least
/// `1e-12` yields one mode at its centroid. Larger clusters are plateaus and
/// are dropped.
pub fn find_modes(rho: &DensityGrid) -> Vec<[f64; 2]> {
    let s = rho.spec;
    let (nx, ny) = (s.nx as isize, s.ny as isize);
    let max = rho.values().iter().cloned().fold(0.0, f64::max);
    let tie = 1e-12 * max;
    let at = |i: isize, j: isize| rho.at(i as usize, j as usize);
    let inside = |i: isize, j: isize| i >= 0 && j >= 0 && i < nx && j < ny;
    let neighbors = |i: isize, j: isize| {
        (-1..=1)
            .flat_map(move |a| (-1..=1).map(move |b| (i + a, j + b)))
            .filter(move |&(a, b)| (a, b) != (i, j) && inside(a, b))
    };
    let mut seen = vec![false; s.len()];
    let mut modes = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let v = at(i, j);
            if seen[s.index(i as usize, j as usize)] || v <= 0.1 * max {
                continue;
            }
            if neighbors(i, j).any(|(a, b)| at(a, b) > v + tie) {
                continue;
            }
            // Grow the tie cluster.
            let mut cluster = vec![(i, j)];
            let mut k = 0;
            while k < cluster.len() && cluster.len() <= 4 {
                let (ci, cj) = cluster[k];
                for (a, b) in neighbors(ci, cj) {
                    if (at(a, b) - v).abs() <= tie && !cluster.contains(&(a, b)) {
                        cluster.push((a, b));
                    }
                }
                k += 1;
            }
            for &(a, b) in &cluster {
                seen[s.index(a as usize, b as usize)] = true;
            }
            if cluster.len() > 4 {
                continue;
            }
            let lo = cluster.iter().map(|&(a, b)| at(a, b)).fold(f64::INFINITY, f64::min);
            let strict = cluster
                .iter()
                .flat_map(|&(a, b)| neighbors(a, b))
                .filter(|c| !cluster.contains(c))
                .all(|(a, b)| lo - at(a, b) >= 1e-12);
            if strict {
                let n = cluster.len() as f64;
                let c = cluster.iter().fold([0.0, 0.0], |acc, &(a, b)| {
                    let p = s.center(a as usize, b as usize);
                    [acc[0] + p[0] / n, acc[1] + p[1] / n]
                });
                modes.push(c);
            }
        }
    }
    modes.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    modes
}

/// Zeros of `∇f` seeded from interior grid minima of `‖∇f‖` below
/// `threshold` and refined by Newton's method.
pub fn critical_points(field: &DoubleWellField, grid: &GridSpec, threshold: f64) -> Vec<[f64; 2]> {
    let norm = |p: [f64; 2]| {
        let g = field.gradient(p);
        g[0].hypot(g[1])
    };
    let values: Vec<f64> = grid.centers().map(norm).collect();
    let mut found: Vec<[f64; 2]> = Vec::new();
    for j in 1..grid.ny - 1 {
        for i in 1..grid.nx - 1 {
            let v = values[grid.index(i, j)];
            if v >= threshold {
                continue;
            }
            let is_min = (-1isize..=1).all(|a| {
                (-1isize..=1).all(|b| {
                    let (ii, jj) = ((i as isize + a) as usize, (j as isize + b) as usize);
                    v <= values[grid.index(ii, jj)]
                })
            });
            if !is_min {
                continue;
            }
            if let Some(root) = newton_root(field, grid.center(i, j)) {
                let inside = root[0] > grid.x_min && root[0] < grid.x_max && root[1] > grid.y_min && root[1] < grid.y_max;
                if inside && !found.iter().any(|q| (q[0] - root[0]).hypot(q[1] - root[1]) < 1e-6) {
                    found.push(root);
                }
            }
        }
    }
    found.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    found
}

/// Newton's method on `∇f = 0` with a central-difference Jacobian.
pub fn newton_root(field: &DoubleWellField, start: [f64; 2]) -> Option<[f64; 2]> {
    let h = 1e-6;
    let mut x = start;
    for _ in 0..100 {
        let g = field.gradient(x);
        if g[0].hypot(g[1]) < 1e-12 {
            return Some(x);
        }
        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let (gp, gm) = (field.gradient(xp), field.gradient(xm));
            jac[0][k] = (gp[0] - gm[0]) / (2.0 * h);
            jac[1][k] = (gp[1] - gm[1]) / (2.0 * h);
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det.abs() < 1e-14 {
            return None;
        }
        let step = [
            (jac[1][1] * g[0] - jac[0][1] * g[1]) / det,
            (-jac[1][0] * g[0] + jac[0][0] * g[1]) / det,
        ];
        x = [x[0] - step[0], x[1] - step[1]];
        if !x[0].is_finite() || !x[1].is_finite() {
            return None;
        }
    }
    let g = field.gradient(x);
    (g[0].hypot(g[1]) < 1e-9).then_some(x)
}

/// Pairwise `L1` distances between steady states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub pairs: Vec<(f64, f64, f64)>,
    pub max_l1: f64,
}

pub fn mode_invariance_check(bundles: &[LambdaBundle]) -> Result<InvarianceReport> {
    let mut pairs = Vec::new();
    for (a, ba) in bundles.iter().enumerate() {
        for bb in &bundles[a + 1..] {
            pairs.push((ba.lambda, bb.lambda, ba.steady.density.l1_distance(&bb.steady.density)?));
        }
    }
    let max_l1 = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    Ok(InvarianceReport { pairs, max_l1 })
}

/// Net winding over many independent paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindingStats {
    pub lambda: f64,
    /// Turns per path, path order.
    pub turns: Vec<f64>,
    pub mean: f64,
    /// Standard error of the mean.
    pub std_error: f64,
}

/// Runs `paths` SDE paths of the double well (path `p` on stream
/// `(cfg.seed, p)`) and accumulates each one's winding about the origin.
pub fn ensemble_winding(lambda: f64, cfg: &SdeConfig, x0: [f64; 2], paths: usize) -> Result<WindingStats> {
    let field = DoubleWellField::new(lambda);
    let turns: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut acc = WindingAccumulator::new([0.0, 0.0]);
            sde_integrate(&field, &NoiseMode::Isotropic(1.0), cfg, &x0, p as u64, &mut |_, _, x| acc.push([x[0], x[1]]))?;
            Ok(acc.turns())
        })
        .collect::<std::result::Result<_, SdeError>>()?;
    let n = turns.len() as f64;
    let mean = turns.iter().sum::<f64>() / n;
    let var = if turns.len() > 1 { turns.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(WindingStats { lambda, turns, mean, std_error: (var / n).sqrt() })
}

/// `x,y,fx,fy,grad_norm,phi,rho_ss` rows over the grid cells.
pub fn write_field_csv<W: Write>(mut w: W, lambda: f64, rho_ss: &DensityGrid) -> std::io::Result<()> {
    let field = DoubleWellField::new(lambda);
    writeln!(w, "x,y,fx,fy,grad_norm,phi,rho_ss")?;
    for (p, r) in rho_ss.spec.centers().zip(rho_ss.values()) {
        let g = field.gradient(p);
        writeln!(w, "{},{},{},{},{},{},{:e}", p[0], p[1], g[0], g[1], g[0].hypot(g[1]), field.potential(p), r)?;
    }
    Ok(())
}
