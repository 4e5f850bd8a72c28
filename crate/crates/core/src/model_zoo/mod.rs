//! Loss families with exact per-sample gradients.
//!
//! Three families are provided:
//!
//! * [`QuadraticEnsemble`]: `f_k(x) = ½ (x − c_k)ᵀ A_k (x − c_k)`, whose
//!   diffusion matrix has a closed form and serves as an oracle;
//! * [`DoubleWellField`]: the analytic two-dimensional vector field with a
//!   fixed steady state and a tunable rotational force;
//! * [`TinyMlp`]: input → affine → ReLU → affine → softmax cross-entropy,
//!   with hand-written backpropagation.

mod data;
mod double_well;
mod mlp;
mod quadratic;

pub use data::{
    average_pool, read_csv_dataset, read_idx_dataset, read_idx_images, read_idx_labels,
    synthetic_blobs, Dataset, IdxImages, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC,
};
pub use double_well::{double_well_field, DoubleWellEval, DoubleWellField};
pub use mlp::TinyMlp;
pub use quadratic::QuadraticEnsemble;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("sample index {index} out of range for dataset of size {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("empty index set")]
    EmptyIndexSet,
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A point in weight space. All entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::InvalidSpec("weight vector must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("weight vector"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = ModelError;
    fn try_from(v: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

impl AsRef<[f64]> for WeightVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-sample gradients `g_k` and their mean `g`, stored row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradientSet {
    dim: usize,
    rows: Vec<f64>,
    mean: Vec<f64>,
}

impl SampleGradientSet {
    /// Builds the set from explicit gradients; the mean is accumulated in
    /// index order.
    pub fn from_samples(samples: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let first = samples.first().ok_or(ModelError::EmptyIndexSet)?;
        let dim = first.len();
        let mut rows = Vec::with_capacity(dim * samples.len());
        for s in &samples {
            if s.len() != dim {
                return Err(ModelError::DimensionMismatch { expected: dim, got: s.len() });
            }
            rows.extend_from_slice(s);
        }
        Ok(Self::from_rows(dim, rows))
    }

    pub(crate) fn from_rows(dim: usize, rows: Vec<f64>) -> Self {
        let n = rows.len() / dim;
        let mut mean = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        Self { dim, rows, mean }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.rows[k * self.dim..(k + 1) * self.dim]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.dim)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

/// A loss `f = (1/N) Σ f_k` with per-sample gradients.
pub trait GradientModel: Sync {
    /// Number of parameters `d`.
    fn dim(&self) -> usize;

    /// Dataset size `N`.
    fn num_samples(&self) -> usize;

    /// Writes `∇f_k(x)` into `out`. Inputs are assumed validated.
    fn sample_gradient(&self, x: &[f64], k: usize, out: &mut [f64]);

    /// `f_k(x)`, when the family has a scalar loss.
    fn sample_loss(&self, x: &[f64], k: usize) -> Option<f64>;

    /// Short identifier recorded in trajectory metadata.
    fn name(&self) -> String;
}

fn check_dim(model: &dyn GradientModel, x: &[f64]) -> Result<(), ModelError> {
    if x.len() != model.dim() {
        return Err(ModelError::DimensionMismatch { expected: model.dim(), got: x.len() });
    }
    Ok(())
}

/// `∇f(x) = (1/N) Σ_k ∇f_k(x)`, reduced in index order.
pub fn full_gradient(model: &dyn GradientModel, x: &[f64]) -> Result<Vec<f64>, ModelError> {
    check_dim(model, x)?;
    let d = model.dim();
    let n = model.num_samples();
    let mut sum = vec![0.0; d];
    let mut g = vec![0.0; d];
    for k in 0..n {
        model.sample_gradient(x, k, &mut g);
        for (s, v) in sum.iter_mut().zip(&g) {
            *s += v;
        }
    }
    for s in &mut sum {
        *s /= n as f64;
    }
    if sum.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("full gradient"));
    }
    Ok(sum)
}

/// Mean gradient over `indices`, accumulated in the order given.
pub fn batch_gradient(
    model: &dyn GradientModel,
    x: &[f64],
    indices: &[usize],
    out: &mut [f64],
) -> Result<(), ModelError> {
    check_dim(model, x)?;
    if indices.is_empty() {
        return Err(ModelError::EmptyIndexSet);
    }
    let n = model.num_samples();
    let mut g = vec![0.0; model.dim()];
    out.iter_mut().for_each(|v| *v = 0.0);
    for &k in indices {
        if k >= n {
            return Err(ModelError::IndexOutOfRange { index: k, n });
        }
        model.sample_gradient(x, k, &mut g);
        for (s, v) in out.iter_mut().zip(&g) {
            *s += v;
        }
    }
    let b = indices.len() as f64;
    for s in out.iter_mut() {
        *s /= b;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("mini-batch gradient"));
    }
    Ok(())
}

/// Exact per-sample gradients for the (0-based) `indices`.
pub fn per_sample_gradients(
    model: &dyn GradientModel,
    x: &[f64],
    indices: &[usize],
) -> Result<SampleGradientSet, ModelError> {
    check_dim(model, x)?;
    if indices.is_empty() {
        return Err(ModelError::EmptyIndexSet);
    }
    let d = model.dim();
    let n = model.num_samples();
    let mut rows = vec![0.0; d * indices.len()];
    for (row, &k) in rows.chunks_exact_mut(d).zip(indices) {
        if k >= n {
            return Err(ModelError::IndexOutOfRange { index: k, n });
        }
        model.sample_gradient(x, k, row);
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("per-sample gradient"));
    }
    Ok(SampleGradientSet::from_rows(d, rows))
}

/// Per-sample gradients over the whole dataset.
pub fn all_sample_gradients(
    model: &dyn GradientModel,
    x: &[f64],
) -> Result<SampleGradientSet, ModelError> {
    let indices: Vec<usize> = (0..model.num_samples()).collect();
    per_sample_gradients(model, x, &indices)
}

/// Where the tiny MLP gets its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Isotropic Gaussian blobs generated from the model seed.
    Synthetic {
        #[serde(default = "default_separation")]
        separation: f64,
    },
    /// CSV with one sample per row and the label in the last column.
    Csv { path: String },
    /// IDX image/label pair; 28×28 images are pooled down to 7×7.
    Idx { images: String, labels: String },
}

fn default_separation() -> f64 {
    1.0
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { separation: default_separation() }
    }
}

/// Which loss family to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// With `centers` absent, `dataset_size` random centers of dimension
    /// `dim` are drawn from the seed, all with identity curvature.
    QuadraticEnsemble {
        #[serde(default)]
        dim: Option<usize>,
        #[serde(default)]
        centers: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        curvatures: Option<Vec<Vec<Vec<f64>>>>,
    },
    DoubleWell {
        lambda: f64,
        #[serde(default = "one")]
        beta: f64,
    },
    TinyMlp {
        input_dim: usize,
        hidden: usize,
        classes: usize,
        #[serde(default)]
        data: DataSource,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_dataset_size() -> usize {
    512
}

impl ModelSpec {
    pub fn tiny_mlp(input_dim: usize, hidden: usize, classes: usize, n: usize, seed: u64) -> Self {
        Self {
            kind: ModelKind::TinyMlp { input_dim, hidden, classes, data: DataSource::default() },
            dataset_size: n,
            seed,
        }
    }

    pub fn double_well(lambda: f64) -> Self {
        Self { kind: ModelKind::DoubleWell { lambda, beta: 1.0 }, dataset_size: 1, seed: 0 }
    }

    pub fn build(&self) -> Result<Model, ModelError> {
        match &self.kind {
            ModelKind::QuadraticEnsemble { dim, centers, curvatures } => {
                let ens = match centers {
                    Some(c) => match curvatures {
                        Some(a) => QuadraticEnsemble::new(c.clone(), a.clone())?,
                        None => QuadraticEnsemble::isotropic(c.clone())?,
                    },
                    None => {
                        let d = dim.ok_or_else(|| {
                            ModelError::InvalidSpec(
                                "quadratic_ensemble needs either `centers` or `dim`".into(),
                            )
                        })?;
                        if d == 0 || self.dataset_size == 0 {
                            return Err(ModelError::InvalidSpec(
                                "quadratic_ensemble dim and dataset_size must be positive".into(),
                            ));
                        }
                        QuadraticEnsemble::random(d, self.dataset_size, self.seed)
                    }
                };
                Ok(Model::Quadratic(ens))
            }
            ModelKind::DoubleWell { lambda, beta } => {
                if !(*lambda >= 0.0) || !(*beta > 0.0) {
                    return Err(ModelError::InvalidSpec(
                        "double_well requires lambda >= 0 and beta > 0".into(),
                    ));
                }
                Ok(Model::DoubleWell(DoubleWellField::new(*lambda)))
            }
            ModelKind::TinyMlp { input_dim, hidden, classes, data } => {
                if *input_dim == 0 || *hidden == 0 || *classes == 0 {
                    return Err(ModelError::InvalidSpec(
                        "tiny_mlp dimensions must be positive".into(),
                    ));
                }
                let dataset = match data {
                    DataSource::Synthetic { separation } => synthetic_blobs(
                        self.dataset_size,
                        *input_dim,
                        *classes,
                        *separation,
                        self.seed,
                    ),
                    DataSource::Csv { path } => {
                        let file = std::fs::File::open(path)?;
                        read_csv_dataset(std::io::BufReader::new(file), *classes)?
                            .truncated(self.dataset_size)
                    }
                    DataSource::Idx { images, labels } => {
                        let img = std::fs::File::open(images)?;
                        let lab = std::fs::File::open(labels)?;
                        read_idx_dataset(
                            std::io::BufReader::new(img),
                            std::io::BufReader::new(lab),
                            *classes,
                        )?
                        .truncated(self.dataset_size)
                    }
                };
                if dataset.input_dim != *input_dim {
                    return Err(ModelError::DimensionMismatch {
                        expected: *input_dim,
                        got: dataset.input_dim,
                    });
                }
                if dataset.is_empty() {
                    return Err(ModelError::InvalidSpec("dataset is empty".into()));
                }
                Ok(Model::Mlp(TinyMlp::new(*hidden, *classes, dataset)))
            }
        }
    }
}

/// A built model of any family.
#[derive(Debug, Clone)]
pub enum Model {
    Quadratic(QuadraticEnsemble),
    DoubleWell(DoubleWellField),
    Mlp(TinyMlp),
}

impl Model {
    fn inner(&self) -> &dyn GradientModel {
        match self {
            Model::Quadratic(m) => m,
            Model::DoubleWell(m) => m,
            Model::Mlp(m) => m,
        }
    }

    /// A deterministic starting point: the MLP's seeded initialization, the
    /// origin otherwise.
    pub fn initial_weights(&self, seed: u64) -> WeightVector {
        match self {
            Model::Mlp(m) => m.init_weights(seed),
            other => WeightVector::zeros(other.dim()),
        }
    }
}

impl GradientModel for Model {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn num_samples(&self) -> usize {
        self.inner().num_samples()
    }
    fn sample_gradient(&self, x: &[f64], k: usize, out: &mut [f64]) {
        self.inner().sample_gradient(x, k, out)
    }
    fn sample_loss(&self, x: &[f64], k: usize) -> Option<f64> {
        self.inner().sample_loss(x, k)
    }
    fn name(&self) -> String {
        self.inner().name()
    }
}
