//! Linearized drift decomposition `F = (D + Q) U` around a critical point,
//! the Ornstein–Uhlenbeck stationary covariance, line-integral potentials,
//! and the residual of the A-type relation
//!
//! ```text
//! ∇f = (D + Q) ∇Φ − β⁻¹ ∇·(D + Q),    (∇·M)_i = Σ_j ∂_j M_ij.
//! ```
//!
//! The drift convention is `dx = −F x dt + √(2β⁻¹ D) dW`.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fokker_planck::GridSpec;
use crate::Mat2;

#[derive(Debug, Error)]
pub enum DecompositionError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0} is not symmetric")]
    NotSymmetric(&'static str),
    #[error("diffusion matrix is not positive semi-definite (eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),
    #[error("F is not Hurwitz (eigenvalue real part {0:e} <= 0)")]
    NotHurwitz(f64),
    #[error("linear system is singular")]
    Singular,
    #[error("G is singular at path point {0}")]
    SingularG(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Solvability of the antisymmetric equation for `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionStatus {
    Unique,
    /// Degenerate spectrum; `Q` is the minimum-norm least-squares solution.
    NonUnique,
    /// `G = D + Q` is singular; `U` comes from its pseudo-inverse.
    Irreducible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `‖FQ + QFᵀ − (FD − DFᵀ)‖_F`
    pub sylvester: f64,
    /// `‖U − Uᵀ‖_F`
    pub symmetry_u: f64,
    /// `‖F − (D + Q) U‖_F`
    pub recomposition: f64,
    /// `‖GFᵀ − FGᵀ‖_F`
    pub constraint: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.sylvester.max(self.symmetry_u).max(self.recomposition).max(self.constraint)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecomposition {
    pub f: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub status: DecompositionStatus,
    pub residuals: Residuals,
}

fn check_square(m: &DMatrix<f64>, d: usize) -> Result<(), DecompositionError> {
    if m.nrows() != d || m.ncols() != d {
        return Err(DecompositionError::DimensionMismatch { expected: d, got: m.nrows().max(m.ncols()) });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(DecompositionError::NonFinite("input matrix"));
    }
    Ok(())
}

fn check_psd(d: &DMatrix<f64>) -> Result<(), DecompositionError> {
    let scale = d.amax().max(1.0);
    if (d - d.transpose()).amax() > 1e-12 * scale {
        return Err(DecompositionError::NotSymmetric("D"));
    }
    let eig = d.clone().symmetric_eigenvalues();
    let min = eig.min();
    if min < -1e-10 * scale {
        return Err(DecompositionError::NotPositiveSemidefinite(min));
    }
    Ok(())
}

/// Antisymmetric basis matrix `E_ab − E_ba`, `a < b`.
fn antisym_basis(d: usize, a: usize, b: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(d, d);
    e[(a, b)] = 1.0;
    e[(b, a)] = -1.0;
    e
}

fn upper_pairs(d: usize, strict: bool) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for a in 0..d {
        for b in if strict { a + 1 } else { a }..d {
            v.push((a, b));
        }
    }
    v
}

/// Solves `FQ + QFᵀ = FD − DFᵀ` for antisymmetric `Q`, then `G = D + Q` and
/// `U = G⁻¹F`.
pub fn decompose_linear(f: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<LinearDecomposition, DecompositionError> {
    let n = f.nrows();
    if n == 0 {
        return Err(DecompositionError::InvalidArgument("empty matrix".into()));
    }
    check_square(f, n)?;
    check_square(d, n)?;
    check_psd(d)?;
    let d = (d + d.transpose()) * 0.5;

    let pairs = upper_pairs(n, true);
    let m = pairs.len();
    let rhs_full = f * &d - &d * f.transpose();
    let mut status = DecompositionStatus::Unique;
    let mut q = DMatrix::zeros(n, n);
    if m > 0 {
        let mut a = DMatrix::zeros(m, m);
        for (col, &(p, r)) in pairs.iter().enumerate() {
            let e = antisym_basis(n, p, r);
            let image = f * &e + &e * f.transpose();
            for (row, &(i, j)) in pairs.iter().enumerate() {
                a[(row, col)] = image[(i, j)];
            }
        }
        let rhs = DVector::from_iterator(m, pairs.iter().map(|&(i, j)| rhs_full[(i, j)]));
        let svd = SVD::new(a, true, true);
        let smax = svd.singular_values.max();
        let tol = 1e-10 * smax.max(f64::MIN_POSITIVE);
        if svd.singular_values.iter().any(|&s| s <= tol) {
            status = DecompositionStatus::NonUnique;
        }
        let coeffs = svd.solve(&rhs, tol).map_err(|_| DecompositionError::Singular)?;
        for (k, &(i, j)) in pairs.iter().enumerate() {
            q[(i, j)] = coeffs[k];
            q[(j, i)] = -coeffs[k];
        }
    }

    let g = &d + &q;
    let g_svd = SVD::new(g.clone(), true, true);
    let gmax = g_svd.singular_values.max();
    let gmin = g_svd.singular_values.min();
    let u = if gmin <= 1e-12 * gmax.max(f64::MIN_POSITIVE) {
        status = DecompositionStatus::Irreducible;
        g_svd.pseudo_inverse(1e-12 * gmax).map_err(|_| DecompositionError::Singular)? * f
    } else {
        g.clone().lu().solve(f).ok_or(DecompositionError::Singular)?
    };
    if u.iter().any(|v| !v.is_finite()) {
        return Err(DecompositionError::NonFinite("U"));
    }
    let residuals = Residuals {
        sylvester: (f * &q + &q * f.transpose() - &rhs_full).norm(),
        symmetry_u: (&u - u.transpose()).norm(),
        recomposition: (f - &g * &u).norm(),
        constraint: (&g * f.transpose() - f * g.transpose()).norm(),
    };
    Ok(LinearDecomposition { f: f.clone(), d, q, g, u, status, residuals })
}

/// Fails unless every eigenvalue of `F` has positive real part.
pub fn check_hurwitz(f: &DMatrix<f64>) -> Result<(), DecompositionError> {
    let eig = f.complex_eigenvalues();
    let min = eig.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(DecompositionError::NotHurwitz(min));
    }
    Ok(())
}

/// `Σ` with `FΣ + ΣFᵀ = 2β⁻¹D`, solved in the symmetric basis.
pub fn ou_stationary_covariance(
    f: &DMatrix<f64>,
    d: &DMatrix<f64>,
    beta_inv: f64,
) -> Result<DMatrix<f64>, DecompositionError> {
    let n = f.nrows();
    check_square(f, n)?;
    check_square(d, n)?;
    check_psd(d)?;
    if !(beta_inv >= 0.0) || !beta_inv.is_finite() {
        return Err(DecompositionError::InvalidArgument(format!("beta_inv must be >= 0, got {beta_inv}")));
    }
    check_hurwitz(f)?;
    let pairs = upper_pairs(n, false);
    let m = pairs.len();
    let mut a = DMatrix::zeros(m, m);
    for (col, &(p, r)) in pairs.iter().enumerate() {
        let mut e = DMatrix::zeros(n, n);
        e[(p, r)] = 1.0;
        e[(r, p)] = 1.0;
        let image = f * &e + &e * f.transpose();
        for (row, &(i, j)) in pairs.iter().enumerate() {
            a[(row, col)] = image[(i, j)];
        }
    }
    let rhs = DVector::from_iterator(m, pairs.iter().map(|&(i, j)| 2.0 * beta_inv * 0.5 * (d[(i, j)] + d[(j, i)])));
    let sol = a.lu().solve(&rhs).ok_or(DecompositionError::Singular)?;
    let mut sigma = DMatrix::zeros(n, n);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        sigma[(i, j)] = sol[k];
        sigma[(j, i)] = sol[k];
    }
    Ok(sigma)
}

/// `β⁻¹ U⁻¹`, the covariance of `e^{−β xᵀUx/2}`.
pub fn gibbs_covariance(dec: &LinearDecomposition, beta_inv: f64) -> Result<DMatrix<f64>, DecompositionError> {
    let inv = dec.u.clone().try_inverse().ok_or(DecompositionError::Singular)?;
    let mut s = inv * beta_inv;
    let st = s.transpose();
    s = (s + st) * 0.5;
    Ok(s)
}

/// `(j, ∇f, ∇Φ)` of the linear model at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearForce {
    pub j: DVector<f64>,
    pub grad_f: DVector<f64>,
    pub grad_phi: DVector<f64>,
}

/// `∇Φ = Ux`, `∇f = Fx`, `j = −QUx`.
pub fn linear_force_field(dec: &LinearDecomposition, x: &[f64]) -> Result<LinearForce, DecompositionError> {
    let n = dec.f.nrows();
    if x.len() != n {
        return Err(DecompositionError::DimensionMismatch { expected: n, got: x.len() });
    }
    let x = DVector::from_column_slice(x);
    let grad_phi = &dec.u * &x;
    Ok(LinearForce { j: -(&dec.q * &grad_phi), grad_f: &dec.f * &x, grad_phi })
}

/// `∫_Γ G⁻¹(x) ∇f(x) · dx` along a polyline, composite midpoint rule with
/// `steps` subintervals per segment.
pub fn potential_line_integral(
    g_field: &dyn Fn(&[f64]) -> DMatrix<f64>,
    grad_f: &dyn Fn(&[f64]) -> Vec<f64>,
    path: &[Vec<f64>],
    steps: usize,
) -> Result<f64, DecompositionError> {
    if path.len() < 2 || steps == 0 {
        return Err(DecompositionError::InvalidArgument("path needs two points and steps >= 1".into()));
    }
    let n = path[0].len();
    if let Some(bad) = path.iter().find(|p| p.len() != n) {
        return Err(DecompositionError::DimensionMismatch { expected: n, got: bad.len() });
    }
    let mut total = 0.0;
    let mut point = 0usize;
    for seg in path.windows(2) {
        let (a, b) = (&seg[0], &seg[1]);
        let delta: Vec<f64> = a.iter().zip(b).map(|(p, q)| (q - p) / steps as f64).collect();
        for k in 0..steps {
            let s = (k as f64 + 0.5) / steps as f64;
            let x: Vec<f64> = a.iter().zip(b).map(|(p, q)| p + s * (q - p)).collect();
            let g = g_field(&x);
            let grad = DVector::from_vec(grad_f(&x));
            let v = g.lu().solve(&grad).ok_or(DecompositionError::SingularG(point))?;
            total += v.iter().zip(&delta).map(|(vi, di)| vi * di).sum::<f64>();
            point += 1;
        }
    }
    if !total.is_finite() {
        return Err(DecompositionError::NonFinite("line integral"));
    }
    Ok(total)
}

/// Derivative of a cell field along x (`axis = 0`) or y: centered inside,
/// second-order one-sided on the edges.
fn partial(spec: &GridSpec, v: &[f64], i: usize, j: usize, axis: usize) -> f64 {
    let (n, h) = if axis == 0 { (spec.nx, spec.dx()) } else { (spec.ny, spec.dy()) };
    let k = if axis == 0 { i } else { j };
    let at = |k: usize| if axis == 0 { v[spec.index(k, j)] } else { v[spec.index(i, k)] };
    if k == 0 {
        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
    } else if k == n - 1 {
        (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
    } else {
        (at(k + 1) - at(k - 1)) / (2.0 * h)
    }
}

/// Pointwise `‖∇f − (D + Q)∇Φ + β⁻¹ ∇·(D + Q)‖` on the cells of `spec`.
/// All fields are sampled at cell centers.
pub fn atype_residual(
    spec: &GridSpec,
    phi: &[f64],
    d: &[Mat2],
    q: &[Mat2],
    grad_f: &[[f64; 2]],
    beta_inv: f64,
) -> Result<Vec<f64>, DecompositionError> {
    let n = spec.len();
    for len in [phi.len(), d.len(), q.len(), grad_f.len()] {
        if len != n {
            return Err(DecompositionError::DimensionMismatch { expected: n, got: len });
        }
    }
    let g: Vec<Mat2> = d
        .iter()
        .zip(q)
        .map(|(a, b)| [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]])
        .collect();
    let comp = |r: usize, c: usize| -> Vec<f64> { g.iter().map(|m| m[r][c]).collect() };
    let (g00, g01, g10, g11) = (comp(0, 0), comp(0, 1), comp(1, 0), comp(1, 1));
    let mut out = Vec::with_capacity(n);
    for j in 0..spec.ny {
        for i in 0..spec.nx {
            let k = spec.index(i, j);
            let grad_phi = [partial(spec, phi, i, j, 0), partial(spec, phi, i, j, 1)];
            let div = [
                partial(spec, &g00, i, j, 0) + partial(spec, &g01, i, j, 1),
                partial(spec, &g10, i, j, 0) + partial(spec, &g11, i, j, 1),
            ];
            let m = g[k];
            let r0 = grad_f[k][0] - (m[0][0] * grad_phi[0] + m[0][1] * grad_phi[1]) + beta_inv * div[0];
            let r1 = grad_f[k][1] - (m[1][0] * grad_phi[0] + m[1][1] * grad_phi[1]) + beta_inv * div[1];
            out.push(r0.hypot(r1));
        }
    }
    Ok(out)
}

/// JSON form of a decomposition with row-major matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub f: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub status: DecompositionStatus,
    pub residuals: Residuals,
    pub sigma: Option<Vec<Vec<f64>>>,
    pub beta_inv: Option<f64>,
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Matrix from row-major nested vectors.
pub fn from_rows(r: &[Vec<f64>]) -> Result<DMatrix<f64>, DecompositionError> {
    let n = r.len();
    let c = r.first().map_or(0, Vec::len);
    if n == 0 || c == 0 || r.iter().any(|row| row.len() != c) {
        return Err(DecompositionError::InvalidArgument("matrix rows must be non-empty and equally long".into()));
    }
    Ok(DMatrix::from_fn(n, c, |i, j| r[i][j]))
}

impl DecompositionReport {
    pub fn new(dec: &LinearDecomposition, sigma: Option<&DMatrix<f64>>, beta_inv: Option<f64>) -> Self {
        Self {
            f: rows(&dec.f),
            d: rows(&dec.d),
            q: rows(&dec.q),
            g: rows(&dec.g),
            u: rows(&dec.u),
            status: dec.status,
            residuals: dec.residuals,
            sigma: sigma.map(rows),
            beta_inv,
        }
    }
}
