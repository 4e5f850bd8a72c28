//! Datasets for the tiny MLP: synthetic blobs, CSV, and IDX images.

use std::io::{BufRead, Read};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ModelError;
use crate::rng;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Row-major inputs with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_dim: usize,
    pub classes: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(input_dim: usize, classes: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self, ModelError> {
        if input_dim == 0 || inputs.len() != input_dim * labels.len() {
            return Err(ModelError::Format(format!(
                "{} values for {} samples of dimension {input_dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(ModelError::Format(format!("label {bad} outside 0..{classes}")));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("dataset input"));
        }
        Ok(Self { input_dim, classes, inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, k: usize) -> &[f64] {
        &self.inputs[k * self.input_dim..(k + 1) * self.input_dim]
    }

    pub fn label(&self, k: usize) -> usize {
        self.labels[k]
    }

    /// Keeps the first `n` samples.
    pub fn truncated(mut self, n: usize) -> Self {
        if n < self.len() {
            self.labels.truncate(n);
            self.inputs.truncate(n * self.input_dim);
        }
        self
    }
}

/// `classes` isotropic Gaussian blobs in `input_dim` dimensions. Class means
/// are `separation · N(0, I)`; samples add unit-variance noise. Labels cycle
/// through the classes so every class is represented.
pub fn synthetic_blobs(n: usize, input_dim: usize, classes: usize, separation: f64, seed: u64) -> Dataset {
    let mut r = rng::seeded(seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..input_dim)
                .map(|_| separation * { let z: f64 = StandardNormal.sample(&mut r); z })
                .collect()
        })
        .collect();
    let mut inputs = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let label = k % classes;
        for m in &means[label] {
            let noise: f64 = StandardNormal.sample(&mut r);
            inputs.push(m + noise);
        }
        labels.push(label);
    }
    // Shuffle sample order so mini-batches are not class-periodic.
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = r.random_range(0..=i);
        order.swap(i, j);
    }
    let mut shuffled = Vec::with_capacity(inputs.len());
    let mut shuffled_labels = Vec::with_capacity(n);
    for &k in &order {
        shuffled.extend_from_slice(&inputs[k * input_dim..(k + 1) * input_dim]);
        shuffled_labels.push(labels[k]);
    }
    Dataset::new(input_dim, classes, shuffled, shuffled_labels).expect("valid synthetic data")
}

/// One sample per line, decimal values, label in the last column. Blank
/// lines and lines starting with `#` are skipped; a non-numeric first line
/// is treated as a header. Samples whose label is `>= classes` are dropped.
pub fn read_csv_dataset<R: BufRead>(reader: R, classes: usize) -> Result<Dataset, ModelError> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if width.is_none() && lineno == 0 => continue,
            Err(e) => {
                return Err(ModelError::Format(format!("line {}: {e}", lineno + 1)));
            }
        };
        if values.len() < 2 {
            return Err(ModelError::Format(format!("line {}: need features and a label", lineno + 1)));
        }
        let w = *width.get_or_insert(values.len());
        if values.len() != w {
            return Err(ModelError::Format(format!(
                "line {}: expected {w} columns, found {}",
                lineno + 1,
                values.len()
            )));
        }
        let label = values[w - 1];
        if label < 0.0 || label.fract() != 0.0 {
            return Err(ModelError::Format(format!("line {}: bad label {label}", lineno + 1)));
        }
        let label = label as usize;
        if label >= classes {
            continue;
        }
        inputs.extend_from_slice(&values[..w - 1]);
        labels.push(label);
    }
    let width = width.ok_or_else(|| ModelError::Format("no samples".into()))?;
    Dataset::new(width - 1, classes, inputs, labels)
}

fn read_u32_be<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

/// Raw IDX image block.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn read_idx_images<R: Read>(mut r: R) -> Result<IdxImages, ModelError> {
    let magic = read_u32_be(&mut r)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(ModelError::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let count = read_u32_be(&mut r)? as usize;
    let rows = read_u32_be(&mut r)? as usize;
    let cols = read_u32_be(&mut r)? as usize;
    let mut pixels = vec![0u8; count * rows * cols];
    r.read_exact(&mut pixels)?;
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn read_idx_labels<R: Read>(mut r: R) -> Result<Vec<u8>, ModelError> {
    let magic = read_u32_be(&mut r)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(ModelError::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let count = read_u32_be(&mut r)? as usize;
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels)?;
    Ok(labels)
}

/// Non-overlapping `block × block` average pooling of one image.
pub fn average_pool(pixels: &[f64], rows: usize, cols: usize, block: usize) -> Vec<f64> {
    let (out_r, out_c) = (rows / block, cols / block);
    let norm = (block * block) as f64;
    let mut out = vec![0.0; out_r * out_c];
    for (i, o) in out.iter_mut().enumerate() {
        let (br, bc) = (i / out_c, i % out_c);
        let mut s = 0.0;
        for r in br * block..(br + 1) * block {
            for c in bc * block..(bc + 1) * block {
                s += pixels[r * cols + c];
            }
        }
        *o = s / norm;
    }
    out
}

/// IDX images and labels; intensities scaled to `[0, 1]`, 28×28 images
/// pooled 4×4 down to 7×7. Samples with labels `>= classes` are dropped.
pub fn read_idx_dataset<R1: Read, R2: Read>(images: R1, labels: R2, classes: usize) -> Result<Dataset, ModelError> {
    let img = read_idx_images(images)?;
    let lab = read_idx_labels(labels)?;
    if lab.len() != img.count {
        return Err(ModelError::Format(format!(
            "{} images but {} labels",
            img.count,
            lab.len()
        )));
    }
    let pool = img.rows == 28 && img.cols == 28;
    let per = img.rows * img.cols;
    let mut inputs = Vec::new();
    let mut kept = Vec::new();
    let mut dim = per;
    for (k, &l) in lab.iter().enumerate() {
        if (l as usize) >= classes {
            continue;
        }
        let raw: Vec<f64> = img.pixels[k * per..(k + 1) * per].iter().map(|&p| p as f64 / 255.0).collect();
        let x = if pool { average_pool(&raw, 28, 28, 4) } else { raw };
        dim = x.len();
        inputs.extend(x);
        kept.push(l as usize);
    }
    Dataset::new(dim, classes, inputs, kept)
}
