use super::{GradientModel, ModelError, WeightVector};

/// Double-well potential `Φ(x) = (x₁² − 1)²/4 + x₂²/2` driven by
/// `∇f = ∇Φ − j`, where the rotational force `j = λ e^Φ J` uses the
/// divergence-free current `J(x) = e^{−(x₁² + x₂²)²/4} (−x₂, x₁)`.
///
/// Because `∇·(j e^{−Φ}) = λ ∇·J = 0`, every `λ` shares the steady state
/// `ρ ∝ e^{−Φ}` under unit noise, while the zeros of `∇f` move with `λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleWellField {
    pub lambda: f64,
}

/// All analytic quantities at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleWellEval {
    pub potential: f64,
    pub grad_potential: [f64; 2],
    pub current: [f64; 2],
    pub force: [f64; 2],
    pub gradient: [f64; 2],
}

impl DoubleWellField {
    pub fn new(lambda: f64) -> Self {
        Self { lambda }
    }

    pub fn potential(&self, x: [f64; 2]) -> f64 {
        let a = x[0] * x[0] - 1.0;
        0.25 * a * a + 0.5 * x[1] * x[1]
    }

    pub fn grad_potential(&self, x: [f64; 2]) -> [f64; 2] {
        [x[0] * (x[0] * x[0] - 1.0), x[1]]
    }

    /// Steady-state current `J(x)` (without the `λ` factor).
    pub fn current(&self, x: [f64; 2]) -> [f64; 2] {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let h = (-0.25 * r2 * r2).exp();
        [-h * x[1], h * x[0]]
    }

    /// `j(x) = λ e^{Φ(x)} J(x)`. The exponents are combined before `exp` so
    /// the product stays finite far from the origin.
    pub fn force(&self, x: [f64; 2]) -> [f64; 2] {
        if self.lambda == 0.0 {
            return [0.0, 0.0];
        }
        let r2 = x[0] * x[0] + x[1] * x[1];
        let s = self.lambda * (self.potential(x) - 0.25 * r2 * r2).exp();
        [-s * x[1], s * x[0]]
    }

    /// `∇f(x) = ∇Φ(x) − j(x)`.
    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let gp = self.grad_potential(x);
        let j = self.force(x);
        [gp[0] - j[0], gp[1] - j[1]]
    }

    pub fn evaluate(&self, x: [f64; 2]) -> DoubleWellEval {
        let grad_potential = self.grad_potential(x);
        let force = self.force(x);
        DoubleWellEval {
            potential: self.potential(x),
            grad_potential,
            current: self.current(x),
            force,
            gradient: [grad_potential[0] - force[0], grad_potential[1] - force[1]],
        }
    }
}

/// Evaluates `(Φ, ∇Φ, j, ∇f)` at a 2-D weight vector.
pub fn double_well_field(lambda: f64, x: &WeightVector) -> Result<DoubleWellEval, ModelError> {
    if x.dim() != 2 {
        return Err(ModelError::DimensionMismatch { expected: 2, got: x.dim() });
    }
    let p = [x.as_slice()[0], x.as_slice()[1]];
    let eval = DoubleWellField::new(lambda).evaluate(p);
    let all = [
        eval.potential,
        eval.force[0],
        eval.force[1],
        eval.gradient[0],
        eval.gradient[1],
    ];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("double-well field (domain escape)"));
    }
    Ok(eval)
}

impl GradientModel for DoubleWellField {
    fn dim(&self) -> usize {
        2
    }

    fn num_samples(&self) -> usize {
        1
    }

    fn sample_gradient(&self, x: &[f64], _k: usize, out: &mut [f64]) {
        let g = self.gradient([x[0], x[1]]);
        out[0] = g[0];
        out[1] = g[1];
    }

    /// Only the `λ = 0` field is a gradient; otherwise there is no scalar loss.
    fn sample_loss(&self, x: &[f64], _k: usize) -> Option<f64> {
        (self.lambda == 0.0).then(|| self.potential([x[0], x[1]]))
    }

    fn name(&self) -> String {
        format!("double_well(lambda={})", self.lambda)
    }
}
