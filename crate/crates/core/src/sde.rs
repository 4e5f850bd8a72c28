//! Discrete SGD and the Euler–Maruyama integrator for
//!
//! ```text
//! dx = −∇f(x) dt + √(2β⁻¹ D(x)) dW(t).
//! ```

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{self, DiffusionError, SamplingScheme};
use crate::model_zoo::{batch_gradient, full_gradient, GradientModel, ModelError};
use crate::rng;
use crate::model_zoo::DoubleWellField;

/// States with `‖x‖∞` above this abort the run.
pub const ESCAPE_RADIUS: f64 = 1e6;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("domain escape at step {step} (|x|_inf > 1e6)")]
    DomainEscape { step: u64, partial: Box<Trajectory> },
    #[error("non-finite state at step {step}")]
    NonFinite { step: u64, partial: Box<Trajectory> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

impl SdeError {
    /// The snapshots recorded before a divergence, if any.
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            SdeError::DomainEscape { partial, .. } | SdeError::NonFinite { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

/// Provenance of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub model: String,
    pub seed: u64,
    /// Learning rate (SGD) or `None` for SDE runs.
    pub eta: Option<f64>,
    pub batch: Option<usize>,
    pub scheme: Option<SamplingScheme>,
    /// SDE time step, `None` for SGD runs.
    pub dt: Option<f64>,
    pub beta_inv: Option<f64>,
    /// Leading snapshots treated as burn-in by the diagnostics.
    pub burnin: usize,
    /// Noise factorizations that fell back from Cholesky to an eigenvalue
    /// square root.
    pub factor_fallbacks: u64,
}

impl TrajectoryMeta {
    pub fn new(model: impl Into<String>, seed: u64) -> Self {
        Self {
            model: model.into(),
            seed,
            eta: None,
            batch: None,
            scheme: None,
            dt: None,
            beta_inv: None,
            burnin: 0,
            factor_fallbacks: 0,
        }
    }
}

/// Time-ordered weight snapshots, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    data: Vec<f64>,
    times: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn new(dim: usize, meta: TrajectoryMeta) -> Self {
        Self { dim, data: Vec::new(), times: Vec::new(), meta }
    }

    /// Builds a trajectory from raw rows; times must increase strictly.
    pub fn from_rows(dim: usize, times: Vec<f64>, data: Vec<f64>, meta: TrajectoryMeta) -> Result<Self, SdeError> {
        if dim == 0 || data.len() != dim * times.len() {
            return Err(SdeError::InvalidConfig(format!(
                "{} values for {} snapshots of dimension {dim}",
                data.len(),
                times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SdeError::InvalidConfig("times must increase strictly".into()));
        }
        if meta.burnin > times.len() {
            return Err(SdeError::InvalidConfig("burn-in longer than trajectory".into()));
        }
        Ok(Self { dim, data, times, meta })
    }

    pub fn push(&mut self, t: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert!(self.times.last().is_none_or(|&last| t > last));
        self.times.push(t);
        self.data.extend_from_slice(x);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshot(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn last(&self) -> Option<&[f64]> {
        (!self.is_empty()).then(|| self.snapshot(self.len() - 1))
    }

    /// Row-major snapshot matrix.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Series of coordinate `i` from snapshot `start` on.
    pub fn coordinate(&self, i: usize, start: usize) -> Vec<f64> {
        self.data[start * self.dim..].iter().skip(i).step_by(self.dim).copied().collect()
    }
}

/// Parameters of a discrete SGD run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub eta: f64,
    pub batch: usize,
    #[serde(default = "default_scheme")]
    pub scheme: SamplingScheme,
    pub steps: u64,
    #[serde(default = "one")]
    pub record_every: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub burnin: usize,
}

fn default_scheme() -> SamplingScheme {
    SamplingScheme::WithReplacement
}

fn one() -> u64 {
    1
}

/// `x_{k+1} = x_k − η ∇f_b(x_k)` with mini-batches drawn from the main stream
/// of `cfg.seed`. Time is measured in epochs of `⌈N/b⌉` steps; snapshot 0 is
/// `x0`.
pub fn sgd_run(model: &dyn GradientModel, x0: &[f64], cfg: &SgdConfig) -> Result<Trajectory, SdeError> {
    let d = model.dim();
    let n = model.num_samples();
    if x0.len() != d {
        return Err(SdeError::DimensionMismatch { expected: d, got: x0.len() });
    }
    if cfg.steps == 0 || cfg.record_every == 0 {
        return Err(SdeError::InvalidConfig("steps and record_every must be >= 1".into()));
    }
    if !(cfg.eta >= 0.0) || !cfg.eta.is_finite() {
        return Err(SdeError::InvalidConfig(format!("learning rate {} is not a finite non-negative number", cfg.eta)));
    }
    if cfg.batch == 0 || (cfg.scheme == SamplingScheme::WithoutReplacement && cfg.batch > n) {
        return Err(DiffusionError::InvalidBatch { b: cfg.batch, n }.into());
    }
    let per_epoch = n.div_ceil(cfg.batch) as f64;
    let mut meta = TrajectoryMeta::new(model.name(), cfg.seed);
    meta.eta = Some(cfg.eta);
    meta.batch = Some(cfg.batch);
    meta.scheme = Some(cfg.scheme);
    let mut traj = Trajectory::new(d, meta);
    let mut x = x0.to_vec();
    traj.push(0.0, &x);

    let mut r = rng::seeded(cfg.seed);
    let mut idx = Vec::with_capacity(cfg.batch);
    let mut g = vec![0.0; d];
    for step in 1..=cfg.steps {
        draw_batch(&mut r, n, cfg.batch, cfg.scheme, &mut idx);
        if let Err(e) = batch_gradient(model, &x, &idx, &mut g) {
            return match e {
                ModelError::NonFinite(_) => Err(SdeError::NonFinite { step, partial: Box::new(traj) }),
                other => Err(other.into()),
            };
        }
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= cfg.eta * gi;
        }
        check_state(&x, step, &traj)?;
        if step % cfg.record_every == 0 {
            traj.push(step as f64 / per_epoch, &x);
        }
    }
    traj.meta.burnin = cfg.burnin.min(traj.len());
    Ok(traj)
}

fn draw_batch(r: &mut rng::LabRng, n: usize, b: usize, scheme: SamplingScheme, idx: &mut Vec<usize>) {
    idx.clear();
    match scheme {
        SamplingScheme::WithReplacement => idx.extend((0..b).map(|_| r.random_range(0..n))),
        SamplingScheme::WithoutReplacement => {
            idx.extend(rand::seq::index::sample(r, n, b));
            idx.sort_unstable();
        }
    }
}

fn check_state(x: &[f64], step: u64, traj: &Trajectory) -> Result<(), SdeError> {
    let mut max: f64 = 0.0;
    for v in x {
        if !v.is_finite() {
            return Err(SdeError::NonFinite { step, partial: Box::new(traj.clone()) });
        }
        max = max.max(v.abs());
    }
    if max > ESCAPE_RADIUS {
        return Err(SdeError::DomainEscape { step, partial: Box::new(traj.clone()) });
    }
    Ok(())
}

/// A gradient field `∇f`; the SDE drift is its negative.
pub trait Drift: Sync {
    fn dim(&self) -> usize;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn name(&self) -> String {
        "drift".into()
    }
}

/// Full-batch gradient of a model.
pub struct ModelDrift<'a>(pub &'a dyn GradientModel);

impl Drift for ModelDrift<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match full_gradient(self.0, x) {
            Ok(g) => out.copy_from_slice(&g),
            Err(_) => out.iter_mut().for_each(|v| *v = f64::NAN),
        }
    }
    fn name(&self) -> String {
        self.0.name()
    }
}

/// `∇f(x) = F x`.
#[derive(Debug, Clone)]
pub struct LinearDrift(pub DMatrix<f64>);

impl Drift for LinearDrift {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let f = &self.0;
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..x.len()).map(|j| f[(i, j)] * x[j]).sum();
        }
    }
    fn name(&self) -> String {
        format!("linear(d={})", self.0.nrows())
    }
}

/// `∇f = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroDrift(pub usize);

impl Drift for ZeroDrift {
    fn dim(&self) -> usize {
        self.0
    }
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn name(&self) -> String {
        "zero".into()
    }
}

impl Drift for DoubleWellField {
    fn dim(&self) -> usize {
        2
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let g = DoubleWellField::gradient(self, [x[0], x[1]]);
        out[0] = g[0];
        out[1] = g[1];
    }
    fn name(&self) -> String {
        format!("double_well(lambda={})", self.lambda)
    }
}

/// Closure-backed drift.
pub struct FnDrift<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> Drift for FnDrift<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

/// How the diffusion matrix is supplied.
pub enum NoiseMode<'a> {
    /// `D = c I`.
    Isotropic(f64),
    /// Constant `D`, factored once.
    Constant(DMatrix<f64>),
    /// `D(x)` from a user field, factored every step.
    Field(&'a (dyn Fn(&[f64]) -> DMatrix<f64> + Sync)),
    /// `D(x)` recomputed from the model's per-sample gradients every step.
    FullModel { model: &'a dyn GradientModel, scheme: SamplingScheme },
}

/// Lower-triangular (or symmetric) `σ` with `σσᵀ = D`, row-major.
#[derive(Debug, Clone)]
pub struct NoiseFactor {
    dim: usize,
    sigma: Vec<f64>,
    pub fell_back: bool,
}

impl NoiseFactor {
    /// Cholesky when `D` is positive definite, otherwise the symmetric
    /// square root `V √max(Λ, 0) Vᵀ`.
    pub fn new(d: &DMatrix<f64>) -> Self {
        let dim = d.nrows();
        let sym = (d + d.transpose()) * 0.5;
        let (m, fell_back) = match sym.clone().cholesky() {
            Some(c) => (c.l(), false),
            None => {
                let eig = SymmetricEigen::new(sym);
                let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
                let v = &eig.eigenvectors;
                (v * DMatrix::from_diagonal(&sqrt) * v.transpose(), true)
            }
        };
        let sigma = (0..dim * dim).map(|k| m[(k / dim, k % dim)]).collect();
        Self { dim, sigma, fell_back }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.sigma)
    }

    fn apply(&self, xi: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.sigma[i * self.dim..(i + 1) * self.dim];
            *o = row.iter().zip(xi).map(|(s, z)| s * z).sum();
        }
    }
}

/// Numerical parameters of an SDE run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    pub beta_inv: f64,
    pub dt: f64,
    pub steps: u64,
    #[serde(default = "one")]
    pub record_every: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub burnin: usize,
}

impl SdeConfig {
    fn validate(&self) -> Result<(), SdeError> {
        if !(self.beta_inv >= 0.0) || !self.beta_inv.is_finite() {
            return Err(SdeError::InvalidConfig(format!("beta_inv must be >= 0, got {}", self.beta_inv)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SdeError::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.steps == 0 || self.record_every == 0 {
            return Err(SdeError::InvalidConfig("steps and record_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Counters from one integration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub steps: u64,
    pub factor_fallbacks: u64,
}

enum Factor<'n> {
    Scalar(f64),
    Fixed(NoiseFactor),
    Varying(&'n NoiseMode<'n>),
}

/// Euler–Maruyama from `x0` on stream `(cfg.seed, path)`. `observe(step, t,
/// x)` sees the initial state (step 0) and every subsequent state. On
/// divergence the error carries a one-snapshot trajectory with the last
/// finite state.
pub fn sde_integrate(
    drift: &dyn Drift,
    noise: &NoiseMode<'_>,
    cfg: &SdeConfig,
    x0: &[f64],
    path: u64,
    observe: &mut dyn FnMut(u64, f64, &[f64]),
) -> Result<IntegrationStats, SdeError> {
    cfg.validate()?;
    let d = drift.dim();
    if x0.len() != d {
        return Err(SdeError::DimensionMismatch { expected: d, got: x0.len() });
    }
    let mut stats = IntegrationStats::default();
    let factor = match noise {
        NoiseMode::Isotropic(c) => {
            if !(*c >= 0.0) {
                return Err(SdeError::InvalidConfig(format!("isotropic noise scale must be >= 0, got {c}")));
            }
            Factor::Scalar(c.sqrt())
        }
        NoiseMode::Constant(m) => {
            if m.nrows() != d || m.ncols() != d {
                return Err(SdeError::DimensionMismatch { expected: d, got: m.nrows() });
            }
            let f = NoiseFactor::new(m);
            stats.factor_fallbacks += f.fell_back as u64;
            Factor::Fixed(f)
        }
        other => Factor::Varying(other),
    };

    let scale = (2.0 * cfg.beta_inv * cfg.dt).sqrt();
    let mut r = rng::stream(cfg.seed, path);
    let mut x = x0.to_vec();
    let mut g = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut kick = vec![0.0; d];
    let mut prev = vec![0.0; d];
    observe(0, 0.0, &x);
    for step in 1..=cfg.steps {
        drift.gradient(&x, &mut g);
        for z in xi.iter_mut() {
            *z = StandardNormal.sample(&mut r);
        }
        match &factor {
            Factor::Scalar(s) => {
                for (k, z) in kick.iter_mut().zip(&xi) {
                    *k = s * z;
                }
            }
            Factor::Fixed(f) => f.apply(&xi, &mut kick),
            Factor::Varying(mode) => {
                let dm = match mode {
                    NoiseMode::Field(field) => field(&x),
                    NoiseMode::FullModel { model, scheme } => diffusion::diffusion_at(*model, &x, *scheme)?.matrix,
                    _ => unreachable!("constant noise is factored once"),
                };
                let f = NoiseFactor::new(&dm);
                stats.factor_fallbacks += f.fell_back as u64;
                f.apply(&xi, &mut kick);
            }
        }
        prev.copy_from_slice(&x);
        for i in 0..d {
            x[i] += -g[i] * cfg.dt + scale * kick[i];
        }
        let bad = x.iter().any(|v| !v.is_finite());
        if bad || x.iter().any(|v| v.abs() > ESCAPE_RADIUS) {
            let mut partial = Trajectory::new(d, TrajectoryMeta::new(drift.name(), cfg.seed));
            partial.push((step - 1) as f64 * cfg.dt, &prev);
            let partial = Box::new(partial);
            return Err(if bad {
                SdeError::NonFinite { step, partial }
            } else {
                SdeError::DomainEscape { step, partial }
            });
        }
        stats.steps = step;
        observe(step, step as f64 * cfg.dt, &x);
    }
    Ok(stats)
}

/// Records every `cfg.record_every`-th state of one path.
pub fn sde_run(drift: &dyn Drift, noise: &NoiseMode<'_>, cfg: &SdeConfig, x0: &[f64]) -> Result<Trajectory, SdeError> {
    let mut meta = TrajectoryMeta::new(drift.name(), cfg.seed);
    meta.dt = Some(cfg.dt);
    meta.beta_inv = Some(cfg.beta_inv);
    let mut traj = Trajectory::new(drift.dim(), meta);
    let every = cfg.record_every;
    let result = sde_integrate(drift, noise, cfg, x0, 0, &mut |step, t, x| {
        if step % every == 0 {
            traj.push(t, x);
        }
    });
    match result {
        Ok(stats) => {
            traj.meta.factor_fallbacks = stats.factor_fallbacks;
            traj.meta.burnin = cfg.burnin.min(traj.len());
            Ok(traj)
        }
        Err(SdeError::DomainEscape { step, .. }) => Err(SdeError::DomainEscape { step, partial: Box::new(traj) }),
        Err(SdeError::NonFinite { step, .. }) => Err(SdeError::NonFinite { step, partial: Box::new(traj) }),
        Err(e) => Err(e),
    }
}

/// Final states of `paths` independent paths, path `p` on stream
/// `(cfg.seed, p)`, returned in path order.
pub fn ensemble_final_states(
    drift: &dyn Drift,
    noise: &NoiseMode<'_>,
    cfg: &SdeConfig,
    x0: &[f64],
    paths: usize,
) -> Result<Vec<Vec<f64>>, SdeError> {
    (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut last = x0.to_vec();
            sde_integrate(drift, noise, cfg, x0, p as u64, &mut |_, _, x| last.copy_from_slice(x))?;
            Ok(last)
        })
        .collect()
}

/// Sample covariance (divide by `n`) of a set of points about their mean.
pub fn empirical_covariance(points: &[Vec<f64>]) -> DMatrix<f64> {
    let d = points[0].len();
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (p[i] - mean[i]) * (p[j] - mean[j]) / n;
            }
        }
    }
    cov
}

/// `‖∇f(x_k)‖ / √d` for every snapshot.
pub fn gradient_norm_series(model: &dyn GradientModel, traj: &Trajectory) -> Result<Vec<f64>, SdeError> {
    if traj.dim() != model.dim() {
        return Err(SdeError::DimensionMismatch { expected: model.dim(), got: traj.dim() });
    }
    let root_d = (traj.dim() as f64).sqrt();
    traj.snapshots()
        .map(|x| {
            let g = full_gradient(model, x)?;
            Ok(g.iter().map(|v| v * v).sum::<f64>().sqrt() / root_d)
        })
        .collect()
}
