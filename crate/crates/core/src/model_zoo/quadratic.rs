use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use super::{GradientModel, ModelError};
use crate::rng;

/// Ensemble of quadratic bowls `f_k(x) = ½ (x − c_k)ᵀ A_k (x − c_k)`.
///
/// Curvatures are symmetrized on construction, so `∇f_k(x) = A_k (x − c_k)`.
#[derive(Debug, Clone)]
pub struct QuadraticEnsemble {
    dim: usize,
    centers: Vec<Vec<f64>>,
    /// `None` means every curvature is the identity.
    curvatures: Option<Vec<DMatrix<f64>>>,
}

impl QuadraticEnsemble {
    /// Identity curvature for every sample.
    pub fn isotropic(centers: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let dim = Self::check_centers(&centers)?;
        Ok(Self { dim, centers, curvatures: None })
    }

    pub fn new(centers: Vec<Vec<f64>>, curvatures: Vec<Vec<Vec<f64>>>) -> Result<Self, ModelError> {
        let dim = Self::check_centers(&centers)?;
        if curvatures.len() != centers.len() {
            return Err(ModelError::InvalidSpec(format!(
                "{} curvatures for {} centers",
                curvatures.len(),
                centers.len()
            )));
        }
        let mut mats = Vec::with_capacity(curvatures.len());
        for a in &curvatures {
            if a.len() != dim || a.iter().any(|row| row.len() != dim) {
                return Err(ModelError::InvalidSpec(format!("curvature must be {dim}x{dim}")));
            }
            let m = DMatrix::from_fn(dim, dim, |i, j| a[i][j]);
            if m.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite("curvature"));
            }
            mats.push((&m + m.transpose()) * 0.5);
        }
        Ok(Self { dim, centers, curvatures: Some(mats) })
    }

    /// `n` centers with standard normal entries, identity curvature.
    pub fn random(dim: usize, n: usize, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let centers = (0..n)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut r)).collect())
            .collect();
        Self { dim, centers, curvatures: None }
    }

    fn check_centers(centers: &[Vec<f64>]) -> Result<usize, ModelError> {
        let first = centers
            .first()
            .ok_or_else(|| ModelError::InvalidSpec("at least one center required".into()))?;
        let dim = first.len();
        if dim == 0 {
            return Err(ModelError::InvalidSpec("centers must be non-empty".into()));
        }
        for c in centers {
            if c.len() != dim {
                return Err(ModelError::DimensionMismatch { expected: dim, got: c.len() });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite("center"));
            }
        }
        Ok(dim)
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }
}

impl GradientModel for QuadraticEnsemble {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_samples(&self) -> usize {
        self.centers.len()
    }

    fn sample_gradient(&self, x: &[f64], k: usize, out: &mut [f64]) {
        let c = &self.centers[k];
        match &self.curvatures {
            None => {
                for i in 0..self.dim {
                    out[i] = x[i] - c[i];
                }
            }
            Some(a) => {
                let a = &a[k];
                for i in 0..self.dim {
                    out[i] = (0..self.dim).map(|j| a[(i, j)] * (x[j] - c[j])).sum();
                }
            }
        }
    }

    fn sample_loss(&self, x: &[f64], k: usize) -> Option<f64> {
        let mut g = vec![0.0; self.dim];
        self.sample_gradient(x, k, &mut g);
        let c = &self.centers[k];
        Some(0.5 * (0..self.dim).map(|i| (x[i] - c[i]) * g[i]).sum::<f64>())
    }

    fn name(&self) -> String {
        format!("quadratic_ensemble(d={}, n={})", self.dim, self.centers.len())
    }
}
