//! Diffusion matrix `D(x)` of mini-batch gradients, its eigenspectrum, and
//! the temperature bookkeeping that goes with it.
//!
//! With replacement, a batch of size `b` has gradient variance `D / b` with
//!
//! ```text
//! D = (1/N) Σ g_k g_kᵀ − g gᵀ = (1/N) Σ (g_k − g)(g_k − g)ᵀ.
//! ```
//!
//! Without replacement the variance is `(1/b)(1 − b/N) D'` with
//! `D' = (N/(N−1)) D`; see [`diffusion_without_replacement`].

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_zoo::{all_sample_gradients, GradientModel, ModelError, SampleGradientSet};
use crate::rng;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("without-replacement diffusion needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid batch size {b} for dataset of size {n}")]
    InvalidBatch { b: usize, n: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semi-definite (eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),
    #[error("symmetric eigen-solver did not converge")]
    EigenNonConvergence,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How mini-batches are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    /// `b` i.i.d. uniform indices.
    WithReplacement,
    /// A uniformly random subset of size `b`.
    WithoutReplacement,
}

impl std::fmt::Display for SamplingScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplingScheme::WithReplacement => "with_replacement",
            SamplingScheme::WithoutReplacement => "without_replacement",
        })
    }
}

/// Sorted eigenvalues and summary statistics of a symmetric PSD matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Non-increasing, clamped at zero.
    pub eigenvalues: Vec<f64>,
    pub rank: usize,
    pub rank_fraction: f64,
    pub mean: f64,
    /// Population standard deviation over all `d` eigenvalues.
    pub std: f64,
}

impl Spectrum {
    /// Population variance of the eigenvalues.
    pub fn variance(&self) -> f64 {
        self.std * self.std
    }
}

/// A diffusion matrix with its spectrum and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionEstimate {
    pub matrix: DMatrix<f64>,
    pub scheme: SamplingScheme,
    pub num_samples: usize,
    pub spectrum: Spectrum,
}

impl DiffusionEstimate {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.spectrum.eigenvalues
    }

    pub fn rank(&self) -> usize {
        self.spectrum.rank
    }
}

fn centered_second_moment(grads: &SampleGradientSet) -> DMatrix<f64> {
    let d = grads.dim();
    let n = grads.len();
    let g = grads.mean();
    let mut dev = DMatrix::zeros(d, n);
    for (k, s) in grads.samples().enumerate() {
        for i in 0..d {
            dev[(i, k)] = s[i] - g[i];
        }
    }
    let mut m = &dev * dev.transpose();
    m /= n as f64;
    symmetrize(&mut m);
    m
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `D = (1/N) Σ (g_k − g)(g_k − g)ᵀ`, the per-sample gradient covariance.
pub fn diffusion_with_replacement(grads: &SampleGradientSet) -> Result<DiffusionEstimate, DiffusionError> {
    let matrix = centered_second_moment(grads);
    let spectrum = eigenspectrum(&matrix)?;
    Ok(DiffusionEstimate {
        matrix,
        scheme: SamplingScheme::WithReplacement,
        num_samples: grads.len(),
        spectrum,
    })
}

/// `D' = (1/(N−1)) Σ g_k g_kᵀ − (N/(N−1)) g gᵀ = (N/(N−1)) D`.
///
/// A sometimes-quoted alternative writes the last coefficient as
/// `1 − 1/(N−1)`; exhaustive enumeration of all size-`b` subsets shows that
/// only `N/(N−1)` reproduces `var(∇f_b) = (1/b)(1 − b/N) D'`.
pub fn diffusion_without_replacement(grads: &SampleGradientSet) -> Result<DiffusionEstimate, DiffusionError> {
    let n = grads.len();
    if n < 2 {
        return Err(DiffusionError::TooFewSamples(n));
    }
    let matrix = centered_second_moment(grads) * (n as f64 / (n as f64 - 1.0));
    let spectrum = eigenspectrum(&matrix)?;
    Ok(DiffusionEstimate {
        matrix,
        scheme: SamplingScheme::WithoutReplacement,
        num_samples: n,
        spectrum,
    })
}

/// Diffusion matrix of `model` at `x` for the given scheme.
pub fn diffusion_at(
    model: &dyn GradientModel,
    x: &[f64],
    scheme: SamplingScheme,
) -> Result<DiffusionEstimate, DiffusionError> {
    let grads = all_sample_gradients(model, x)?;
    match scheme {
        SamplingScheme::WithReplacement => diffusion_with_replacement(&grads),
        SamplingScheme::WithoutReplacement => diffusion_without_replacement(&grads),
    }
}

/// Eigen-decomposition of a symmetric PSD matrix.
///
/// The input is symmetrized, negative eigenvalues down to
/// `−1e-10 · max(1, λ_max)` are clamped to zero, and the rank counts
/// eigenvalues above `λ_max · d · ε`.
pub fn eigenspectrum(matrix: &DMatrix<f64>) -> Result<Spectrum, DiffusionError> {
    let d = matrix.nrows();
    if d == 0 || matrix.ncols() != d {
        return Err(DiffusionError::DimensionMismatch { expected: d, got: matrix.ncols() });
    }
    let scale = matrix.amax().max(1.0);
    let mut asym: f64 = 0.0;
    for i in 0..d {
        for j in i + 1..d {
            asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    if asym > 1e-12 * scale {
        return Err(DiffusionError::NotSymmetric(asym));
    }
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0).ok_or(DiffusionError::EigenNonConvergence)?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DiffusionError::EigenNonConvergence);
    }
    values.sort_by(|a, b| b.total_cmp(a));
    let lmax = values[0];
    let floor = -1e-10 * lmax.max(1.0);
    if let Some(&worst) = values.last() {
        if worst < floor {
            return Err(DiffusionError::NotPositiveSemidefinite(worst));
        }
    }
    for v in &mut values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(summarize(values))
}

/// Rank and moments of an already sorted, clamped eigenvalue list.
pub fn summarize(eigenvalues: Vec<f64>) -> Spectrum {
    let d = eigenvalues.len();
    let lmax = eigenvalues.iter().cloned().fold(0.0, f64::max);
    let threshold = lmax * d as f64 * f64::EPSILON;
    let rank = if lmax > 0.0 {
        eigenvalues.iter().filter(|&&v| v > threshold).count()
    } else {
        0
    };
    let mean = eigenvalues.iter().sum::<f64>() / d as f64;
    let var = eigenvalues.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    Spectrum {
        eigenvalues,
        rank,
        rank_fraction: rank as f64 / d as f64,
        mean,
        std: var.sqrt(),
    }
}

/// Inverse temperatures for both sampling schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperaturePair {
    pub eta: f64,
    pub batch: usize,
    pub dataset_size: usize,
    /// `η / 2b`
    pub beta_inv: f64,
    /// `(η / 2b)(1 − b/N)`
    pub beta_inv_without_replacement: f64,
}

pub fn temperatures(eta: f64, batch: usize, dataset_size: usize) -> Result<TemperaturePair, DiffusionError> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(DiffusionError::InvalidArgument(format!("learning rate must be positive, got {eta}")));
    }
    if batch == 0 || batch > dataset_size {
        return Err(DiffusionError::InvalidBatch { b: batch, n: dataset_size });
    }
    let beta_inv = eta / (2.0 * batch as f64);
    let frac = 1.0 - batch as f64 / dataset_size as f64;
    Ok(TemperaturePair {
        eta,
        batch,
        dataset_size,
        beta_inv,
        beta_inv_without_replacement: beta_inv * frac,
    })
}

/// `(η / b) · mean(λ)`, the quantity held fixed when `η`, `b` or the
/// dataset change.
pub fn beta_scaling_constant(eta: f64, batch: usize, eigenvalues: &[f64]) -> f64 {
    let mean = eigenvalues.iter().sum::<f64>() / eigenvalues.len() as f64;
    eta / batch as f64 * mean
}

/// `rank(D)/d + var(λ(D))` with the population variance.
pub fn architecture_score(est: &DiffusionEstimate) -> f64 {
    est.spectrum.rank_fraction + est.spectrum.variance()
}

/// Monte-Carlo estimate of `var(∇f_b(x))` from the per-sample gradients.
///
/// Trial `t` draws its batch from stream `(seed, t)`; partial sums are
/// reduced in trial order, so the result is independent of thread count.
/// Deviations are taken about the full mean `g`, and batches drawn without
/// replacement are summed in sorted index order, so `b = N` gives exactly 0.
pub fn minibatch_variance_from_gradients(
    grads: &SampleGradientSet,
    scheme: SamplingScheme,
    batch: usize,
    trials: usize,
    seed: u64,
) -> Result<DMatrix<f64>, DiffusionError> {
    let n = grads.len();
    let d = grads.dim();
    if trials == 0 {
        return Err(DiffusionError::InvalidArgument("trials must be >= 1".into()));
    }
    if batch == 0 || (scheme == SamplingScheme::WithoutReplacement && batch > n) {
        return Err(DiffusionError::InvalidBatch { b: batch, n });
    }
    let g = grads.mean();
    const CHUNK: usize = 1024;
    let chunks = trials.div_ceil(CHUNK);
    let partials: Vec<DMatrix<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = DMatrix::<f64>::zeros(d, d);
            let mut mean = vec![0.0; d];
            let mut idx: Vec<usize> = Vec::with_capacity(batch);
            for t in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                let mut r = rng::stream(seed, t as u64);
                idx.clear();
                match scheme {
                    SamplingScheme::WithReplacement => {
                        use rand::Rng;
                        idx.extend((0..batch).map(|_| r.random_range(0..n)));
                    }
                    SamplingScheme::WithoutReplacement => {
                        idx.extend(rand::seq::index::sample(&mut r, n, batch));
                        idx.sort_unstable();
                    }
                }
                mean.iter_mut().for_each(|m| *m = 0.0);
                for &k in &idx {
                    for (m, v) in mean.iter_mut().zip(grads.sample(k)) {
                        *m += v;
                    }
                }
                for (m, gi) in mean.iter_mut().zip(g) {
                    *m = *m / batch as f64 - gi;
                }
                for j in 0..d {
                    for i in 0..d {
                        acc[(i, j)] += mean[i] * mean[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = DMatrix::<f64>::zeros(d, d);
    for p in &partials {
        total += p;
    }
    Ok(total / trials as f64)
}

/// Monte-Carlo mini-batch variance of `model` at `x`.
pub fn minibatch_variance_mc(
    model: &dyn GradientModel,
    x: &[f64],
    scheme: SamplingScheme,
    batch: usize,
    trials: usize,
    seed: u64,
) -> Result<DMatrix<f64>, DiffusionError> {
    let grads = all_sample_gradients(model, x)?;
    minibatch_variance_from_gradients(&grads, scheme, batch, trials, seed)
}

/// Closed-form mini-batch variance: `D/b` with replacement and
/// `(1/b)(1 − b/N) D'` without.
pub fn minibatch_variance_closed_form(
    grads: &SampleGradientSet,
    scheme: SamplingScheme,
    batch: usize,
) -> Result<DMatrix<f64>, DiffusionError> {
    let n = grads.len();
    if batch == 0 || (scheme == SamplingScheme::WithoutReplacement && batch > n) {
        return Err(DiffusionError::InvalidBatch { b: batch, n });
    }
    let b = batch as f64;
    Ok(match scheme {
        SamplingScheme::WithReplacement => centered_second_moment(grads) / b,
        SamplingScheme::WithoutReplacement => {
            if n < 2 {
                return Err(DiffusionError::TooFewSamples(n));
            }
            centered_second_moment(grads) * (n as f64 / (n as f64 - 1.0)) * ((1.0 - b / n as f64) / b)
        }
    })
}

/// Summary record written next to each spectrum CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub scheme: SamplingScheme,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub rank: usize,
    pub rank_fraction: f64,
    pub eig_mean: f64,
    pub eig_std: f64,
    pub score: f64,
    pub beta_inv: f64,
}

impl SpectrumSummary {
    pub fn new(est: &DiffusionEstimate, beta_inv: f64) -> Self {
        Self {
            scheme: est.scheme,
            d: est.dim(),
            n: est.num_samples,
            rank: est.spectrum.rank,
            rank_fraction: est.spectrum.rank_fraction,
            eig_mean: est.spectrum.mean,
            eig_std: est.spectrum.std,
            score: architecture_score(est),
            beta_inv,
        }
    }
}

/// `index,eigenvalue` rows in non-increasing order.
pub fn write_spectrum_csv<W: Write>(mut w: W, eigenvalues: &[f64]) -> std::io::Result<()> {
    writeln!(w, "index,eigenvalue")?;
    for (i, v) in eigenvalues.iter().enumerate() {
        writeln!(w, "{i},{v:e}")?;
    }
    Ok(())
}
