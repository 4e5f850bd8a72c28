//! Finite-volume solver for the 2-D Fokker–Planck equation
//!
//! ```text
//! ∂ρ/∂t = ∇·(∇f ρ + β⁻¹ ∇·(D ρ))
//! ```
//!
//! on a uniform cell-centered grid with zero-flux boundaries.
//!
//! The drift and the diagonal part of `D` share one exponentially fitted
//! (Scharfetter–Gummel) flux per face. It reduces to central diffusion when
//! the drift vanishes and to upwinding when diffusion vanishes, and it keeps
//! discrete detailed balance for gradient drifts, so equilibrium steady
//! states carry no spurious current. The off-diagonal `D₁₂` term uses a
//! centered stencil.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::Mat2;

#[derive(Debug, Error)]
pub enum FpError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("time step {dt:e} exceeds the stability limit {max:e}")]
    CflViolation { dt: f64, max: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("densities live on different grids")]
    GridMismatch,
}

/// Uniform `nx × ny` cell grid on a rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for GridSpec {
    /// 128 × 128 on `[−2.5, 2.5]²`.
    fn default() -> Self {
        Self::square(128, 2.5)
    }
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, x: [f64; 2], y: [f64; 2]) -> Result<Self, FpError> {
        let spec = Self { nx, ny, x_min: x[0], x_max: x[1], y_min: y[0], y_max: y[1] };
        spec.validate()?;
        Ok(spec)
    }

    /// `n × n` cells on `[−h, h]²`.
    pub fn square(n: usize, half_width: f64) -> Self {
        Self { nx: n, ny: n, x_min: -half_width, x_max: half_width, y_min: -half_width, y_max: half_width }
    }

    pub fn validate(&self) -> Result<(), FpError> {
        if self.nx < 3 || self.ny < 3 {
            return Err(FpError::InvalidGrid(format!("need at least 3x3 cells, got {}x{}", self.nx, self.ny)));
        }
        let ok = |a: f64, b: f64| a.is_finite() && b.is_finite() && b > a;
        if !ok(self.x_min, self.x_max) || !ok(self.y_min, self.y_max) {
            return Err(FpError::InvalidGrid("domain bounds must be finite and increasing".into()));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of cell `(i, j)`; rows run along `x`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.x_min + (i as f64 + 0.5) * self.dx(),
            self.y_min + (j as f64 + 0.5) * self.dy(),
        ]
    }

    /// Cell containing `p`, if inside the domain.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let fi = (p[0] - self.x_min) / self.dx();
        let fj = (p[1] - self.y_min) / self.dy();
        if !(fi >= 0.0 && fj >= 0.0) {
            return None;
        }
        let (i, j) = (fi as usize, fj as usize);
        (i < self.nx && j < self.ny).then_some((i, j))
    }

    pub fn centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| self.center(i, j)))
    }

    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        i > 0 && j > 0 && i + 1 < self.nx && j + 1 < self.ny
    }
}

/// A probability density, constant on each cell, with `Σ ρ ΔA = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub spec: GridSpec,
    rho: Vec<f64>,
    pub time: f64,
    pub steps: u64,
    /// Cells clamped from below `−1e-12` back to zero.
    pub clamp_events: u64,
}

impl DensityGrid {
    /// Normalizes non-negative cell values into a density.
    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self, FpError> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(FpError::InvalidGrid(format!("{} values for {} cells", values.len(), spec.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FpError::NonFinite("density values"));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(FpError::InvalidArgument("density values must be non-negative".into()));
        }
        let mut g = Self { spec, rho: values, time: 0.0, steps: 0, clamp_events: 0 };
        let mass = g.mass();
        if !(mass > 0.0) {
            return Err(FpError::InvalidArgument("density has zero mass".into()));
        }
        g.rho.iter_mut().for_each(|v| *v /= mass);
        Ok(g)
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn([f64; 2]) -> f64) -> Result<Self, FpError> {
        let values = spec.centers().map(f).collect();
        Self::from_values(spec, values)
    }

    pub fn uniform(spec: GridSpec) -> Result<Self, FpError> {
        Self::from_values(spec, vec![1.0; spec.len()])
    }

    /// Isotropic Gaussian sampled at cell centers.
    pub fn gaussian(spec: GridSpec, mean: [f64; 2], var: f64) -> Result<Self, FpError> {
        Self::from_fn(spec, |p| {
            let r2 = (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2);
            (-0.5 * r2 / var).exp()
        })
    }

    /// `e^{−f/β⁻¹} / Z` sampled at cell centers.
    pub fn gibbs(spec: GridSpec, f: impl Fn([f64; 2]) -> f64, beta_inv: f64) -> Result<Self, FpError> {
        if !(beta_inv > 0.0) {
            return Err(FpError::InvalidArgument("Gibbs density needs beta_inv > 0".into()));
        }
        let energy: Vec<f64> = spec.centers().map(f).collect();
        let min = energy.iter().cloned().fold(f64::INFINITY, f64::min);
        Self::from_values(spec, energy.iter().map(|e| (-(e - min) / beta_inv).exp()).collect())
    }

    /// Independent uniform cell values in `[0.05, 1)`, normalized.
    pub fn random(spec: GridSpec, seed: u64) -> Result<Self, FpError> {
        let mut r = rng::seeded(seed);
        Self::from_values(spec, (0..spec.len()).map(|_| r.random_range(0.05..1.0)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.rho[self.spec.index(i, j)]
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.spec.cell_area()
    }

    /// `Σ |ρ − σ| ΔA`.
    pub fn l1_distance(&self, other: &DensityGrid) -> Result<f64, FpError> {
        if self.spec != other.spec {
            return Err(FpError::GridMismatch);
        }
        Ok(self.rho.iter().zip(&other.rho).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.spec.cell_area())
    }

    pub fn mean(&self) -> [f64; 2] {
        let a = self.spec.cell_area();
        let mut m = [0.0; 2];
        for (p, r) in self.spec.centers().zip(&self.rho) {
            m[0] += p[0] * r * a;
            m[1] += p[1] * r * a;
        }
        m
    }

    pub fn covariance(&self) -> Mat2 {
        let a = self.spec.cell_area();
        let m = self.mean();
        let mut c = [[0.0; 2]; 2];
        for (p, r) in self.spec.centers().zip(&self.rho) {
            let d = [p[0] - m[0], p[1] - m[1]];
            for k in 0..2 {
                for l in 0..2 {
                    c[k][l] += d[k] * d[l] * r * a;
                }
            }
        }
        c
    }

    /// Shannon entropy `−Σ ρ ln ρ ΔA` with `0 ln 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self.rho.iter().filter(|&&r| r > 0.0).map(|r| r * r.ln()).sum::<f64>() * self.spec.cell_area()
    }
}

/// `z / (e^z − 1)`, the Bernoulli function.
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Face flux `J = c_l ρ_l − c_r ρ_r` for one drift/diffusion pair.
fn face_coefficients(v: f64, d_l: f64, d_r: f64, beta_inv: f64, h: f64) -> (f64, f64) {
    let d_face = 0.5 * (d_l + d_r);
    let kappa = beta_inv * d_face;
    if kappa <= 1e-300 {
        return (v.max(0.0), (-v).max(0.0));
    }
    let z = v * h / kappa;
    // The fitted flux acts on u = D ρ.
    let scale = beta_inv / h;
    (scale * bernoulli(-z) * d_l, scale * bernoulli(z) * d_r)
}

/// The discretized Fokker–Planck operator for fixed fields.
#[derive(Debug, Clone)]
pub struct FpOperator {
    pub spec: GridSpec,
    pub beta_inv: f64,
    /// Interior x-faces, `(nx − 1) × ny`, index `j (nx − 1) + i` for the face
    /// between `(i, j)` and `(i + 1, j)`.
    xl: Vec<f64>,
    xr: Vec<f64>,
    /// Interior y-faces, `nx × (ny − 1)`, index `j nx + i` for the face
    /// between `(i, j)` and `(i, j + 1)`.
    yl: Vec<f64>,
    yr: Vec<f64>,
    /// Cell values of `D₁₂` when any is non-zero.
    d12: Option<Vec<f64>>,
    dt_max: f64,
}

impl FpOperator {
    /// Samples `∇f` at face centers and `D` at cell centers.
    pub fn new(
        spec: GridSpec,
        grad_f: impl Fn([f64; 2]) -> [f64; 2],
        diffusion: impl Fn([f64; 2]) -> Mat2,
        beta_inv: f64,
    ) -> Result<Self, FpError> {
        spec.validate()?;
        if !(beta_inv >= 0.0) || !beta_inv.is_finite() {
            return Err(FpError::InvalidArgument(format!("beta_inv must be >= 0, got {beta_inv}")));
        }
        let (nx, ny, dx, dy) = (spec.nx, spec.ny, spec.dx(), spec.dy());
        let dcell: Vec<Mat2> = spec.centers().map(&diffusion).collect();
        for m in &dcell {
            let sym = (m[0][1] - m[1][0]).abs() <= 1e-12 * (1.0 + m[0][1].abs());
            let psd = m[0][0] >= 0.0 && m[1][1] >= 0.0 && m[0][0] * m[1][1] - m[0][1] * m[1][0] >= -1e-12;
            if !sym || !psd || m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(FpError::InvalidArgument(format!("diffusion matrix {m:?} is not symmetric PSD")));
            }
        }

        let mut xl = vec![0.0; (nx - 1) * ny];
        let mut xr = vec![0.0; (nx - 1) * ny];
        for j in 0..ny {
            for i in 0..nx - 1 {
                let p = [spec.x_min + (i + 1) as f64 * dx, spec.center(i, j)[1]];
                let g = grad_f(p);
                if !g[0].is_finite() {
                    return Err(FpError::NonFinite("drift"));
                }
                let (l, r) = face_coefficients(
                    -g[0],
                    dcell[spec.index(i, j)][0][0],
                    dcell[spec.index(i + 1, j)][0][0],
                    beta_inv,
                    dx,
                );
                xl[j * (nx - 1) + i] = l;
                xr[j * (nx - 1) + i] = r;
            }
        }
        let mut yl = vec![0.0; nx * (ny - 1)];
        let mut yr = vec![0.0; nx * (ny - 1)];
        for j in 0..ny - 1 {
            for i in 0..nx {
                let p = [spec.center(i, j)[0], spec.y_min + (j + 1) as f64 * dy];
                let g = grad_f(p);
                if !g[1].is_finite() {
                    return Err(FpError::NonFinite("drift"));
                }
                let (l, r) = face_coefficients(
                    -g[1],
                    dcell[spec.index(i, j)][1][1],
                    dcell[spec.index(i, j + 1)][1][1],
                    beta_inv,
                    dy,
                );
                yl[j * nx + i] = l;
                yr[j * nx + i] = r;
            }
        }
        let d12: Vec<f64> = dcell.iter().map(|m| 0.5 * (m[0][1] + m[1][0])).collect();
        let has_cross = beta_inv > 0.0 && d12.iter().any(|&v| v != 0.0);

        // Positivity of the diagonal part: every cell's outflow rate times dt
        // stays below one. The cross term adds its own bound.
        let mut max_rate: f64 = 0.0;
        for j in 0..ny {
            for i in 0..nx {
                let mut rate = 0.0;
                if i + 1 < nx {
                    rate += xl[j * (nx - 1) + i] / dx;
                }
                if i > 0 {
                    rate += xr[j * (nx - 1) + i - 1] / dx;
                }
                if j + 1 < ny {
                    rate += yl[j * nx + i] / dy;
                }
                if j > 0 {
                    rate += yr[(j - 1) * nx + i] / dy;
                }
                if has_cross {
                    rate += 2.0 * beta_inv * d12[spec.index(i, j)].abs() / (dx * dy);
                }
                max_rate = max_rate.max(rate);
            }
        }
        let dt_max = if max_rate > 0.0 { 1.0 / max_rate } else { f64::INFINITY };
        Ok(Self { spec, beta_inv, xl, xr, yl, yr, d12: has_cross.then_some(d12), dt_max })
    }

    /// Isotropic `D = I`.
    pub fn isotropic(spec: GridSpec, grad_f: impl Fn([f64; 2]) -> [f64; 2], beta_inv: f64) -> Result<Self, FpError> {
        Self::new(spec, grad_f, |_| crate::IDENTITY2, beta_inv)
    }

    /// Largest stable explicit step.
    pub fn dt_max(&self) -> f64 {
        self.dt_max
    }

    /// `0.9 · dt_max`.
    pub fn default_dt(&self) -> f64 {
        0.9 * self.dt_max
    }

    /// Fluxes through interior faces; boundary faces carry none.
    pub fn fluxes(&self, rho: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = &self.spec;
        let (nx, ny) = (s.nx, s.ny);
        let mut jx = vec![0.0; (nx - 1) * ny];
        for j in 0..ny {
            let row = &rho[j * nx..(j + 1) * nx];
            let base = j * (nx - 1);
            for i in 0..nx - 1 {
                jx[base + i] = self.xl[base + i] * row[i] - self.xr[base + i] * row[i + 1];
            }
        }
        let mut jy = vec![0.0; nx * (ny - 1)];
        for j in 0..ny - 1 {
            for i in 0..nx {
                let k = j * nx + i;
                jy[k] = self.yl[k] * rho[k] - self.yr[k] * rho[k + nx];
            }
        }
        if let Some(d12) = &self.d12 {
            // −β⁻¹ ∂_y(D₁₂ρ) on x-faces and −β⁻¹ ∂_x(D₁₂ρ) on y-faces, each the
            // mean of the centered cell derivatives on both sides.
            let w: Vec<f64> = d12.iter().zip(rho).map(|(d, r)| d * r).collect();
            let (dx, dy) = (s.dx(), s.dy());
            let dwdy = |i: usize, j: usize| -> f64 {
                if j == 0 {
                    (w[s.index(i, 1)] - w[s.index(i, 0)]) / dy
                } else if j == ny - 1 {
                    (w[s.index(i, j)] - w[s.index(i, j - 1)]) / dy
                } else {
                    (w[s.index(i, j + 1)] - w[s.index(i, j - 1)]) / (2.0 * dy)
                }
            };
            let dwdx = |i: usize, j: usize| -> f64 {
                if i == 0 {
                    (w[s.index(1, j)] - w[s.index(0, j)]) / dx
                } else if i == nx - 1 {
                    (w[s.index(i, j)] - w[s.index(i - 1, j)]) / dx
                } else {
                    (w[s.index(i + 1, j)] - w[s.index(i - 1, j)]) / (2.0 * dx)
                }
            };
            let b = self.beta_inv;
            for j in 0..ny {
                for i in 0..nx - 1 {
                    jx[j * (nx - 1) + i] -= b * 0.5 * (dwdy(i, j) + dwdy(i + 1, j));
                }
            }
            for j in 0..ny - 1 {
                for i in 0..nx {
                    jy[j * nx + i] -= b * 0.5 * (dwdx(i, j) + dwdx(i, j + 1));
                }
            }
        }
        (jx, jy)
    }

    /// `−∇·J` per cell from face fluxes.
    fn rate_of_change(&self, jx: &[f64], jy: &[f64], out: &mut [f64]) {
        let s = &self.spec;
        let (nx, ny, dx, dy) = (s.nx, s.ny, s.dx(), s.dy());
        for j in 0..ny {
            for i in 0..nx {
                let right = if i + 1 < nx { jx[j * (nx - 1) + i] } else { 0.0 };
                let left = if i > 0 { jx[j * (nx - 1) + i - 1] } else { 0.0 };
                let top = if j + 1 < ny { jy[j * nx + i] } else { 0.0 };
                let bottom = if j > 0 { jy[(j - 1) * nx + i] } else { 0.0 };
                out[s.index(i, j)] = -(right - left) / dx - (top - bottom) / dy;
            }
        }
    }

    /// One explicit step of size `dt` in place.
    pub fn step(&self, grid: &mut DensityGrid, dt: f64) -> Result<(), FpError> {
        if grid.spec != self.spec {
            return Err(FpError::GridMismatch);
        }
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(FpError::InvalidArgument(format!("dt must be finite and >= 0, got {dt}")));
        }
        if dt > self.dt_max * (1.0 + 1e-12) {
            return Err(FpError::CflViolation { dt, max: self.dt_max });
        }
        if dt == 0.0 {
            return Ok(());
        }
        let (jx, jy) = self.fluxes(&grid.rho);
        let mut rate = vec![0.0; grid.rho.len()];
        self.rate_of_change(&jx, &jy, &mut rate);
        let mut clamped = 0;
        let mut total = 0.0;
        for (r, dr) in grid.rho.iter_mut().zip(&rate) {
            *r += dt * dr;
            if *r < 0.0 {
                if *r < -1e-12 {
                    clamped += 1;
                }
                *r = 0.0;
            }
            total += *r;
        }
        let mass = total * self.spec.cell_area();
        if !mass.is_finite() || mass <= 0.0 {
            return Err(FpError::NonFinite("density update"));
        }
        grid.rho.iter_mut().for_each(|r| *r /= mass);
        grid.clamp_events += clamped;
        grid.time += dt;
        grid.steps += 1;
        Ok(())
    }

    /// `n` steps of size `dt`.
    pub fn evolve(&self, grid: &mut DensityGrid, dt: f64, n: u64) -> Result<(), FpError> {
        for _ in 0..n {
            self.step(grid, dt)?;
        }
        Ok(())
    }
}

/// Functional form of [`FpOperator::step`].
pub fn fp_step(grid: &DensityGrid, op: &FpOperator, dt: f64) -> Result<DensityGrid, FpError> {
    let mut next = grid.clone();
    op.step(&mut next, dt)?;
    Ok(next)
}

/// Stopping rule for [`steady_state`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyStateOptions {
    /// Threshold on `‖ρ_{t+Δ} − ρ_t‖₁ / Δ`.
    pub tol: f64,
    /// Simulated time budget.
    pub max_time: f64,
    /// Steps between convergence checks.
    pub check_every: u64,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_time: 500.0, check_every: 200 }
    }
}

/// Outcome of a steady-state search.
#[derive(Debug, Clone)]
pub struct SteadyState {
    /// The final iterate when converged, otherwise the iterate with the
    /// smallest observed rate.
    pub density: DensityGrid,
    pub converged: bool,
    /// Last measured L1 rate.
    pub rate: f64,
}

/// Evolves `init` with the default step until the L1 rate drops below
/// `opts.tol` or the time budget runs out.
pub fn steady_state(op: &FpOperator, init: DensityGrid, opts: &SteadyStateOptions) -> Result<SteadyState, FpError> {
    if !(opts.tol > 0.0) || opts.check_every == 0 {
        return Err(FpError::InvalidArgument("tol must be > 0 and check_every >= 1".into()));
    }
    let dt = op.default_dt();
    if !dt.is_finite() {
        // No dynamics at all: every density is stationary.
        return Ok(SteadyState { density: init, converged: true, rate: 0.0 });
    }
    let mut grid = init;
    let mut best: Option<(f64, DensityGrid)> = None;
    let mut rate = f64::INFINITY;
    while grid.time < opts.max_time {
        let before = grid.clone();
        op.evolve(&mut grid, dt, opts.check_every)?;
        rate = before.l1_distance(&grid)? / (grid.time - before.time);
        if rate < opts.tol {
            return Ok(SteadyState { density: grid, converged: true, rate });
        }
        if best.as_ref().is_none_or(|(r, _)| rate < *r) {
            best = Some((rate, grid.clone()));
        }
    }
    let (best_rate, density) = best.unwrap_or((rate, grid));
    Ok(SteadyState { density, converged: false, rate: best_rate })
}

/// `Φ = −β⁻¹ ln ρ`, shifted so its minimum is zero. Cells with `ρ = 0` get
/// `+∞` and are counted in `masked`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub masked: usize,
}

pub fn potential_from_density(rho: &DensityGrid, beta_inv: f64) -> Result<PotentialField, FpError> {
    if !(beta_inv > 0.0) {
        return Err(FpError::InvalidArgument("potential needs beta_inv > 0".into()));
    }
    let mut values: Vec<f64> = rho
        .values()
        .iter()
        .map(|&r| if r > 0.0 { -beta_inv * r.ln() } else { f64::INFINITY })
        .collect();
    let masked = values.iter().filter(|v| v.is_infinite()).count();
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min.is_finite() {
        values.iter_mut().for_each(|v| *v -= min);
    }
    Ok(PotentialField { spec: rho.spec, values, masked })
}

/// Probability current on faces and cell centers, and the force `j = J/ρ`.
#[derive(Debug, Clone)]
pub struct CurrentField {
    pub spec: GridSpec,
    pub jx: Vec<f64>,
    pub jy: Vec<f64>,
    /// Face fluxes averaged to cell centers.
    pub cell: Vec<[f64; 2]>,
    /// `J/ρ` where `ρ ≥ 1e-12 · max ρ`.
    pub force: Vec<Option<[f64; 2]>>,
}

impl CurrentField {
    /// Largest `|J|` over all faces.
    pub fn max_face_flux(&self) -> f64 {
        self.jx.iter().chain(&self.jy).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `∇·J` per cell.
    pub fn divergence(&self, op: &FpOperator) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.len()];
        op.rate_of_change(&self.jx, &self.jy, &mut out);
        out.iter_mut().for_each(|v| *v = -*v);
        out
    }
}

pub fn current_and_force(rho: &DensityGrid, op: &FpOperator) -> Result<CurrentField, FpError> {
    if rho.spec != op.spec {
        return Err(FpError::GridMismatch);
    }
    let s = rho.spec;
    let (nx, ny) = (s.nx, s.ny);
    let (jx, jy) = op.fluxes(rho.values());
    let rmax = rho.values().iter().cloned().fold(0.0, f64::max);
    let mut cell = Vec::with_capacity(s.len());
    let mut force = Vec::with_capacity(s.len());
    for j in 0..ny {
        for i in 0..nx {
            let right = if i + 1 < nx { jx[j * (nx - 1) + i] } else { 0.0 };
            let left = if i > 0 { jx[j * (nx - 1) + i - 1] } else { 0.0 };
            let top = if j + 1 < ny { jy[j * nx + i] } else { 0.0 };
            let bottom = if j > 0 { jy[(j - 1) * nx + i] } else { 0.0 };
            let c = [0.5 * (left + right), 0.5 * (bottom + top)];
            let r = rho.at(i, j);
            cell.push(c);
            force.push((r >= 1e-12 * rmax && r > 0.0).then(|| [c[0] / r, c[1] / r]));
        }
    }
    Ok(CurrentField { spec: s, jx, jy, cell, force })
}

/// Energetic and entropic parts of `F(ρ) = E_ρ[Φ] − β⁻¹ H(ρ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyReport {
    pub energetic: f64,
    pub entropy: f64,
    pub free_energy: f64,
    pub kl_to_ss: f64,
}

/// `KL(ρ ‖ σ) = Σ ρ ln(ρ/σ) ΔA` with `0 ln 0 = 0`; infinite when `ρ` has
/// mass where `σ` has none.
pub fn kl_divergence(rho: &DensityGrid, sigma: &DensityGrid) -> Result<f64, FpError> {
    if rho.spec != sigma.spec {
        return Err(FpError::GridMismatch);
    }
    let mut kl = 0.0;
    for (&p, &q) in rho.values().iter().zip(sigma.values()) {
        if p > 0.0 {
            if q <= 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += p * (p / q).ln();
        }
    }
    Ok((kl * rho.spec.cell_area()).max(0.0))
}

pub fn free_energy(
    rho: &DensityGrid,
    phi: &PotentialField,
    beta_inv: f64,
    rho_ss: &DensityGrid,
) -> Result<FreeEnergyReport, FpError> {
    if rho.spec != phi.spec || rho.spec != rho_ss.spec {
        return Err(FpError::GridMismatch);
    }
    let a = rho.spec.cell_area();
    let mut energetic = 0.0;
    for (&r, &p) in rho.values().iter().zip(&phi.values) {
        if r > 0.0 {
            energetic += r * p * a;
        }
    }
    let entropy = rho.entropy();
    Ok(FreeEnergyReport {
        energetic,
        entropy,
        free_energy: energetic - beta_inv * entropy,
        kl_to_ss: kl_divergence(rho, rho_ss)?,
    })
}

/// Centered cell gradient of a field, one-sided on the boundary.
fn cell_gradient(spec: &GridSpec, v: &[f64], i: usize, j: usize) -> [f64; 2] {
    let (nx, ny, dx, dy) = (spec.nx, spec.ny, spec.dx(), spec.dy());
    let at = |i: usize, j: usize| v[spec.index(i, j)];
    let gx = if i == 0 {
        (at(1, j) - at(0, j)) / dx
    } else if i == nx - 1 {
        (at(i, j) - at(i - 1, j)) / dx
    } else {
        (at(i + 1, j) - at(i - 1, j)) / (2.0 * dx)
    };
    let gy = if j == 0 {
        (at(i, 1) - at(i, 0)) / dy
    } else if j == ny - 1 {
        (at(i, j) - at(i, j - 1)) / dy
    } else {
        (at(i, j + 1) - at(i, j - 1)) / (2.0 * dy)
    };
    [gx, gy]
}

/// `Σ ρ ∇μᵀ D ∇μ ΔA` with `μ = Φ + β⁻¹(ln ρ + 1)`, restricted to cells whose
/// stencil has positive density.
pub fn entropy_production_rate(
    rho: &DensityGrid,
    phi: &PotentialField,
    diffusion: impl Fn([f64; 2]) -> Mat2,
    beta_inv: f64,
) -> Result<f64, FpError> {
    if rho.spec != phi.spec {
        return Err(FpError::GridMismatch);
    }
    let s = rho.spec;
    let mu: Vec<f64> = rho
        .values()
        .iter()
        .zip(&phi.values)
        .map(|(&r, &p)| if r > 0.0 && p.is_finite() { p + beta_inv * (r.ln() + 1.0) } else { f64::NAN })
        .collect();
    let a = s.cell_area();
    let mut total = 0.0;
    for j in 0..s.ny {
        for i in 0..s.nx {
            let r = rho.at(i, j);
            if r <= 0.0 {
                continue;
            }
            let g = cell_gradient(&s, &mu, i, j);
            if !g[0].is_finite() || !g[1].is_finite() {
                continue;
            }
            let d = diffusion(s.center(i, j));
            let q = g[0] * (d[0][0] * g[0] + d[0][1] * g[1]) + g[1] * (d[1][0] * g[0] + d[1][1] * g[1]);
            total += r * q * a;
        }
    }
    Ok(total)
}

/// `x,y,rho` rows, one per cell.
pub fn write_grid_csv<W: Write>(mut w: W, grid: &DensityGrid) -> std::io::Result<()> {
    writeln!(w, "x,y,rho")?;
    for (p, r) in grid.spec.centers().zip(grid.values()) {
        writeln!(w, "{},{},{:e}", p[0], p[1], r)?;
    }
    Ok(())
}

/// JSON sidecar of a grid dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub nx: usize,
    pub ny: usize,
    pub domain: [[f64; 2]; 2],
    pub beta_inv: f64,
    pub step: u64,
    pub free_energy: Option<f64>,
    pub kl: Option<f64>,
}

impl GridSidecar {
    pub fn new(grid: &DensityGrid, beta_inv: f64, report: Option<&FreeEnergyReport>) -> Self {
        let s = grid.spec;
        Self {
            nx: s.nx,
            ny: s.ny,
            domain: [[s.x_min, s.x_max], [s.y_min, s.y_max]],
            beta_inv,
            step: grid.steps,
            free_energy: report.map(|r| r.free_energy),
            kl: report.map(|r| r.kl_to_ss),
        }
    }
}
