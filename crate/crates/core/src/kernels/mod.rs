//! Sample similarity kernels and label distance matrices.
//!
//! Samples are compared through fixed-length Gaussian-downsampled Mel
//! spectrograms and the cosine (normalized Frobenius) similarity. Labels are
//! compared through squared distances fed to an RBF kernel.

mod cache;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

pub use cache::{index_path, read_embedding_cache, write_embedding_cache};

use crate::error::{Error, Result};
use crate::features::MelSpectrogram;

/// Gaussian downsampling settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DownsampleConfig {
    /// Output frame count `T`.
    pub frames: usize,
    /// Gaussian width as a multiple of the spacing between output centers.
    pub width_factor: f64,
}

impl DownsampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::InvalidParameter("output frame count must be positive".into()));
        }
        if !(self.width_factor >= 0.0 && self.width_factor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "width factor must be non-negative, got {}",
                self.width_factor
            )));
        }
        Ok(())
    }
}

impl Default for DownsampleConfig {
    fn default() -> Self {
        Self {
            frames: 32,
            width_factor: 0.5,
        }
    }
}

/// A fixed-size `bands × T` summary of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DownsampledEmbedding {
    pub id: String,
    pub values: Array2<f64>,
}

impl DownsampledEmbedding {
    pub fn frobenius_norm(&self) -> f64 {
        frobenius(self.values.view())
    }
}

fn frobenius(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Square, symmetric similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix(Array2<f64>);

impl KernelMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "kernel matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        Ok(Self(values))
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Pairwise squared distances of one label over a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SqDistMatrix {
    pub task_id: String,
    pub values: Array2<f64>,
}

impl SqDistMatrix {
    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    /// Strict upper-triangle entries, row-major.
    pub fn off_diagonal(&self) -> Vec<f64> {
        let n = self.size();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.values[[i, j]]);
            }
        }
        out
    }
}

/// Per-sample value of one label: a scalar, or a matrix-valued representation.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskValue {
    Scalar(f64),
    Matrix(Array2<f64>),
}

/// Gaussian-weighted time averaging of `mel` onto `config.frames` columns.
pub fn gaussian_downsample(
    mel: &MelSpectrogram,
    id: &str,
    config: &DownsampleConfig,
) -> Result<DownsampledEmbedding> {
    Ok(DownsampledEmbedding {
        id: id.to_string(),
        values: downsample_matrix(mel.values.view(), config)?,
    })
}

/// Column `t` of the output is `Σ_f w_t(f)·input[:, f]`, weights summing to one.
pub fn downsample_matrix(input: ArrayView2<f64>, config: &DownsampleConfig) -> Result<Array2<f64>> {
    let frames_in = input.ncols();
    config.validate()?;
    if frames_in == 0 {
        return Err(Error::InvalidParameter(
            "downsampling needs at least one input frame".into(),
        ));
    }
    let weights = downsample_weights(frames_in, config.frames, config.width_factor);
    Ok(input.dot(&weights))
}

/// `frames_in × frames_out` weight matrix with unit column sums.
fn downsample_weights(frames_in: usize, frames_out: usize, width_factor: f64) -> Array2<f64> {
    let spacing = frames_in as f64 / frames_out as f64;
    let sigma = width_factor * spacing;
    let mut w = Array2::zeros((frames_in, frames_out));
    for t in 0..frames_out {
        let center = (t as f64 + 0.5) * spacing - 0.5;
        let nearest = (0..frames_in)
            .map(|f| (f as f64 - center).abs())
            .fold(f64::INFINITY, f64::min);
        let mut col: Vec<f64> = (0..frames_in)
            .map(|f| {
                let d = (f as f64 - center).abs();
                if sigma > 0.0 {
                    // shifted by the nearest distance so the largest weight is exactly 1
                    (-(d * d - nearest * nearest) / (2.0 * sigma * sigma)).exp()
                } else if (d - nearest).abs() < 1e-12 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = col.iter().sum();
        col.iter_mut().for_each(|v| *v /= total);
        for (f, v) in col.into_iter().enumerate() {
            w[[f, t]] = v;
        }
    }
    w
}

/// Frobenius inner product over the product of Frobenius norms.
pub fn cosine_similarity(a: &DownsampledEmbedding, b: &DownsampledEmbedding) -> Result<f64> {
    if a.values.dim() != b.values.dim() {
        return Err(Error::ShapeMismatch(format!(
            "embeddings '{}' {:?} and '{}' {:?}",
            a.id,
            a.values.dim(),
            b.id,
            b.values.dim()
        )));
    }
    let (na, nb) = (a.frobenius_norm(), b.frobenius_norm());
    if na == 0.0 {
        return Err(Error::DegenerateEmbedding(a.id.clone()));
    }
    if nb == 0.0 {
        return Err(Error::DegenerateEmbedding(b.id.clone()));
    }
    let dot: f64 = a.values.iter().zip(b.values.iter()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine Gram matrix over the embeddings of one class.
pub fn sample_kernel_matrix(embeddings: &[&DownsampledEmbedding]) -> Result<KernelMatrix> {
    let n = embeddings.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty sample set".into()));
    }
    let shape = embeddings[0].values.dim();
    let mut unit = Vec::with_capacity(n);
    for e in embeddings {
        if e.values.dim() != shape {
            return Err(Error::ShapeMismatch(format!(
                "embedding '{}' has shape {:?}, expected {:?}",
                e.id,
                e.values.dim(),
                shape
            )));
        }
        let norm = e.frobenius_norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateEmbedding(e.id.clone()));
        }
        unit.push(e.values.iter().map(|v| v / norm).collect::<Vec<f64>>());
    }

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    let dot: f64 = unit[i].iter().zip(&unit[j]).map(|(x, y)| x * y).sum();
                    dot.clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();
    let mut k = Array2::from_elem((n, n), 1.0);
    for (i, row) in rows.into_iter().enumerate() {
        for (offset, v) in row.into_iter().enumerate() {
            let j = i + 1 + offset;
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    KernelMatrix::new(k)
}

/// Value kind shared by all samples of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Scalar,
    Matrix,
}

pub fn value_kind(task_id: &str, values: &[TaskValue]) -> Result<ValueKind> {
    let kind = |v: &TaskValue| match v {
        TaskValue::Scalar(_) => ValueKind::Scalar,
        TaskValue::Matrix(_) => ValueKind::Matrix,
    };
    let first = values
        .first()
        .map(kind)
        .ok_or_else(|| Error::InvalidParameter(format!("task '{task_id}' has no values")))?;
    if values.iter().any(|v| kind(v) != first) {
        return Err(Error::MixedKinds(task_id.to_string()));
    }
    Ok(first)
}

/// Normalizes matrix values to unit Frobenius norm; scalars pass through.
fn prepared(task_id: &str, values: &[&TaskValue]) -> Result<Vec<TaskValue>> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            TaskValue::Scalar(x) => Ok(TaskValue::Scalar(*x)),
            TaskValue::Matrix(m) => {
                let norm = frobenius(m.view());
                if norm == 0.0 || !norm.is_finite() {
                    return Err(Error::DegenerateEmbedding(format!("{task_id}[{i}]")));
                }
                Ok(TaskValue::Matrix(m / norm))
            }
        })
        .collect()
}

fn pair_distance(a: &TaskValue, b: &TaskValue) -> Result<f64> {
    match (a, b) {
        (TaskValue::Scalar(x), TaskValue::Scalar(y)) => Ok((x - y) * (x - y)),
        (TaskValue::Matrix(x), TaskValue::Matrix(y)) => {
            if x.dim() != y.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "matrix values {:?} vs {:?}",
                    x.dim(),
                    y.dim()
                )));
            }
            Ok(x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum())
        }
        _ => unreachable!("kinds checked by caller"),
    }
}

/// Squared distances between per-sample values of one task.
///
/// Scalars give `(z_i − z_j)²`; matrices are first scaled to unit Frobenius
/// norm and give the squared Frobenius distance.
pub fn sqdist_matrix(task_id: &str, values: &[TaskValue]) -> Result<SqDistMatrix> {
    let refs: Vec<&TaskValue> = values.iter().collect();
    sqdist_matrix_refs(task_id, &refs)
}

pub(crate) fn sqdist_matrix_refs(task_id: &str, values: &[&TaskValue]) -> Result<SqDistMatrix> {
    let n = values.len();
    if n == 0 {
        return Err(Error::InvalidParameter(format!("task '{task_id}' has no values")));
    }
    let kind = |v: &TaskValue| matches!(v, TaskValue::Scalar(_));
    if values.iter().any(|v| kind(v) != kind(values[0])) {
        return Err(Error::MixedKinds(task_id.to_string()));
    }
    let vals = prepared(task_id, values)?;
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = pair_distance(&vals[i], &vals[j])?;
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    Ok(SqDistMatrix {
        task_id: task_id.to_string(),
        values: d,
    })
}

/// `exp(−d_ij / (2σ²))`.
pub fn rbf_kernel_matrix(d: &SqDistMatrix, sigma: f64) -> Result<KernelMatrix> {
    check_sigma(sigma)?;
    let scale = -1.0 / (2.0 * sigma * sigma);
    KernelMatrix::new(d.values.mapv(|v| (v * scale).exp()))
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")))
    }
}

/// Median heuristic on the off-diagonal entries of `d`.
pub fn median_sigma(d: &SqDistMatrix) -> Result<f64> {
    median_sigma_pooled(&d.task_id, d.off_diagonal())
}

/// `σ = sqrt(lower median of the positive squared distances / 2)`.
pub fn median_sigma_pooled(task_id: &str, mut distances: Vec<f64>) -> Result<f64> {
    distances.retain(|&v| v > 0.0);
    if distances.is_empty() {
        return Err(Error::ConstantLabel(task_id.to_string()));
    }
    let mid = (distances.len() - 1) / 2;
    let (_, median, _) = distances.select_nth_unstable_by(mid, f64::total_cmp);
    Ok((*median / 2.0).sqrt())
}
