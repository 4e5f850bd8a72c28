use rand::Rng;

use super::{Dataset, GradientModel, WeightVector};
use crate::rng;

/// Two-layer perceptron `input → affine → ReLU → affine → softmax CE`.
///
/// Parameters are flattened as `[W1 (hidden × input), b1, W2 (classes ×
/// hidden), b2]`, matrices row-major.
#[derive(Debug, Clone)]
pub struct TinyMlp {
    hidden: usize,
    classes: usize,
    data: Dataset,
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

impl TinyMlp {
    pub fn new(hidden: usize, classes: usize, data: Dataset) -> Self {
        Self { hidden, classes, data }
    }

    pub fn input_dim(&self) -> usize {
        self.data.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    fn layout(&self) -> Layout {
        let (i, h, c) = (self.data.input_dim, self.hidden, self.classes);
        let w1 = 0;
        let b1 = w1 + h * i;
        let w2 = b1 + h;
        let b2 = w2 + c * h;
        Layout { w1, b1, w2, b2, end: b2 + c }
    }

    /// Uniform in `[−a, a]` with `a = 1/√fan_in` per layer (biases included).
    pub fn init_weights(&self, seed: u64) -> WeightVector {
        let l = self.layout();
        let mut r = rng::seeded(seed);
        let a1 = 1.0 / (self.data.input_dim as f64).sqrt();
        let a2 = 1.0 / (self.hidden as f64).sqrt();
        let values = (0..l.end)
            .map(|p| {
                let a = if p < l.w2 { a1 } else { a2 };
                r.random_range(-a..=a)
            })
            .collect();
        WeightVector::new(values).expect("finite initialization")
    }

    /// Forward pass for one sample; fills `pre` (hidden pre-activations) and
    /// `logits`.
    fn forward(&self, x: &[f64], k: usize, pre: &mut [f64], logits: &mut [f64]) {
        let l = self.layout();
        let n_in = self.data.input_dim;
        let input = self.data.input(k);
        for (h, z) in pre.iter_mut().enumerate() {
            let row = &x[l.w1 + h * n_in..l.w1 + (h + 1) * n_in];
            *z = x[l.b1 + h] + row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
        }
        for (c, z) in logits.iter_mut().enumerate() {
            let row = &x[l.w2 + c * self.hidden..l.w2 + (c + 1) * self.hidden];
            *z = x[l.b2 + c] + row.iter().zip(pre.iter()).map(|(w, a)| w * a.max(0.0)).sum::<f64>();
        }
    }

    /// `log Σ exp(z)` shifted for stability.
    fn log_sum_exp(z: &[f64]) -> f64 {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }

    /// Fraction of samples whose arg-max logit matches the label.
    pub fn accuracy(&self, x: &[f64]) -> f64 {
        let mut pre = vec![0.0; self.hidden];
        let mut logits = vec![0.0; self.classes];
        let hits = (0..self.data.len())
            .filter(|&k| {
                self.forward(x, k, &mut pre, &mut logits);
                let best = logits
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                    .0;
                best == self.data.label(k)
            })
            .count();
        hits as f64 / self.data.len() as f64
    }
}

impl GradientModel for TinyMlp {
    fn dim(&self) -> usize {
        self.layout().end
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn sample_gradient(&self, x: &[f64], k: usize, out: &mut [f64]) {
        let l = self.layout();
        let n_in = self.data.input_dim;
        let mut pre = vec![0.0; self.hidden];
        let mut logits = vec![0.0; self.classes];
        self.forward(x, k, &mut pre, &mut logits);

        // dL/dz2 = softmax(z2) − onehot(y)
        let lse = Self::log_sum_exp(&logits);
        let y = self.data.label(k);
        let dz2: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(c, z)| (z - lse).exp() - if c == y { 1.0 } else { 0.0 })
            .collect();

        let mut dh = vec![0.0; self.hidden];
        for (c, &g) in dz2.iter().enumerate() {
            out[l.b2 + c] = g;
            let row = l.w2 + c * self.hidden;
            for h in 0..self.hidden {
                out[row + h] = g * pre[h].max(0.0);
                dh[h] += x[row + h] * g;
            }
        }
        let input = self.data.input(k);
        for h in 0..self.hidden {
            let dz1 = if pre[h] > 0.0 { dh[h] } else { 0.0 };
            out[l.b1 + h] = dz1;
            let row = &mut out[l.w1 + h * n_in..l.w1 + (h + 1) * n_in];
            for (o, v) in row.iter_mut().zip(input) {
                *o = dz1 * v;
            }
        }
    }

    fn sample_loss(&self, x: &[f64], k: usize) -> Option<f64> {
        let mut pre = vec![0.0; self.hidden];
        let mut logits = vec![0.0; self.classes];
        self.forward(x, k, &mut pre, &mut logits);
        Some(Self::log_sum_exp(&logits) - logits[self.data.label(k)])
    }

    fn name(&self) -> String {
        format!(
            "tiny_mlp({},{},{}; n={})",
            self.data.input_dim,
            self.hidden,
            self.classes,
            self.data.len()
        )
    }
}
