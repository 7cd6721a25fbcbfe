//! Per-class HSIC and the class-weighted conditional independence estimate.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::CiDataset;
use crate::error::{Error, Result};
use crate::kernels::{
    check_sigma, median_sigma_pooled, rbf_kernel_matrix, sample_kernel_matrix, sqdist_matrix_refs,
    KernelMatrix, SqDistMatrix, TaskValue,
};

/// Samples of one downstream class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassGroup {
    pub label: String,
    pub indices: Vec<usize>,
}

/// Disjoint cover of `0..total` by downstream class, classes in label order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPartition {
    classes: Vec<ClassGroup>,
    total: usize,
}

impl ClassPartition {
    /// Groups sample indices by label. Classes are sorted lexicographically.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            groups.entry(l.as_ref()).or_default().push(i);
        }
        Self {
            classes: groups
                .into_iter()
                .map(|(label, indices)| ClassGroup {
                    label: label.to_string(),
                    indices,
                })
                .collect(),
            total: labels.len(),
        }
    }

    pub fn new(classes: Vec<ClassGroup>, total: usize) -> Result<Self> {
        let mut seen = vec![false; total];
        for c in &classes {
            if c.indices.is_empty() {
                return Err(Error::EmptyClass(c.label.clone()));
            }
            for &i in &c.indices {
                if i >= total || seen[i] {
                    return Err(Error::Malformed(format!(
                        "class partition index {i} out of range or repeated"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Malformed("class partition does not cover every sample".into()));
        }
        Ok(Self { classes, total })
    }

    pub fn classes(&self) -> &[ClassGroup] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Total sample count `M`.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Class position of every sample.
    pub fn class_of_samples(&self) -> Vec<usize> {
        let mut out = vec![0; self.total];
        for (c, group) in self.classes.iter().enumerate() {
            for &i in &group.indices {
                out[i] = c;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ClassHsic {
    pub class_id: String,
    pub n: usize,
    pub hsic: f64,
}

/// Conditional independence estimate of one label (or a weighted group).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CiEstimate {
    pub subject: String,
    pub value: f64,
    pub per_class: Vec<ClassHsic>,
}

/// `H = I − (1/n)·11ᵀ`.
pub fn center_matrix(n: usize) -> Array2<f64> {
    let inv = 1.0 / n.max(1) as f64;
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 - inv } else { -inv })
}

/// `H K H`, computed by subtracting row, column and grand means.
pub fn double_center(k: &Array2<f64>) -> Array2<f64> {
    let n = k.nrows();
    let nf = n as f64;
    let row: Vec<f64> = k.rows().into_iter().map(|r| r.sum() / nf).collect();
    let col: Vec<f64> = k.columns().into_iter().map(|c| c.sum() / nf).collect();
    let grand = row.iter().sum::<f64>() / nf;
    Array2::from_shape_fn((n, n), |(i, j)| k[[i, j]] - row[i] - col[j] + grand)
}

/// Biased HSIC, `(1/n²)·trace(K H L H)`. Zero when `n = 1`.
pub fn hsic_class(k: &KernelMatrix, l: &KernelMatrix) -> Result<f64> {
    let n = k.size();
    if l.size() != n {
        return Err(Error::ShapeMismatch(format!(
            "HSIC kernels of size {n} and {}",
            l.size()
        )));
    }
    if n <= 1 {
        return Ok(0.0);
    }
    let kc = double_center(k.values());
    let trace: f64 = kc.iter().zip(l.values().iter()).map(|(a, b)| a * b).sum();
    Ok(trace / (n * n) as f64)
}

/// `(1/M)·Σ_c HSIC_c·n_c` over the classes of `partition`.
pub fn conditional_hsic(
    partition: &ClassPartition,
    ks: &[KernelMatrix],
    ls: &[KernelMatrix],
    subject: &str,
) -> Result<CiEstimate> {
    if ks.len() != partition.len() || ls.len() != partition.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} classes but {} K and {} L matrices",
            partition.len(),
            ks.len(),
            ls.len()
        )));
    }
    let per_class = partition
        .classes()
        .iter()
        .zip(ks.iter().zip(ls))
        .map(|(group, (k, l))| {
            let n = group.indices.len();
            if n == 0 {
                return Err(Error::EmptyClass(group.label.clone()));
            }
            if k.size() != n {
                return Err(Error::ShapeMismatch(format!(
                    "class '{}' has {n} samples but K is {}x{}",
                    group.label,
                    k.size(),
                    k.size()
                )));
            }
            Ok(ClassHsic {
                class_id: group.label.clone(),
                n,
                hsic: hsic_class(k, l)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(subject, partition.total(), per_class))
}

fn aggregate(subject: &str, total: usize, per_class: Vec<ClassHsic>) -> CiEstimate {
    let value = per_class.iter().map(|c| c.hsic * c.n as f64).sum::<f64>() / total as f64;
    CiEstimate {
        subject: subject.to_string(),
        value,
        per_class,
    }
}

/// How a weight scales its task's squared distance inside the group kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightExponent {
    /// `λ_h·D_h`.
    #[default]
    Linear,
    /// `λ_h²·D_h`, the scaled-concatenation reading.
    Squared,
}

impl WeightExponent {
    pub fn coefficient(self, lambda: f64) -> f64 {
        match self {
            WeightExponent::Linear => lambda,
            WeightExponent::Squared => lambda * lambda,
        }
    }

    /// Derivative of [`coefficient`](Self::coefficient) with respect to `lambda`.
    pub fn derivative(self, lambda: f64) -> f64 {
        match self {
            WeightExponent::Linear => 1.0,
            WeightExponent::Squared => 2.0 * lambda,
        }
    }
}

/// `exp(−Σ_h a(λ_h)·D_h / (2σ²))`.
pub fn weighted_label_kernel(
    dists: &[&SqDistMatrix],
    lambda: &[f64],
    sigma: f64,
    exponent: WeightExponent,
) -> Result<KernelMatrix> {
    check_sigma(sigma)?;
    if dists.len() != lambda.len() || dists.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} distance matrices for {} weights",
            dists.len(),
            lambda.len()
        )));
    }
    if let Some(l) = lambda.iter().find(|l| l.is_nan() || **l < 0.0) {
        return Err(Error::InvalidParameter(format!("negative weight {l}")));
    }
    let n = dists[0].size();
    if dists.iter().any(|d| d.size() != n) {
        return Err(Error::ShapeMismatch("distance matrices differ in size".into()));
    }
    let mut acc = Array2::<f64>::zeros((n, n));
    for (d, &l) in dists.iter().zip(lambda) {
        acc.scaled_add(exponent.coefficient(l), &d.values);
    }
    let scale = -1.0 / (2.0 * sigma * sigma);
    KernelMatrix::new(acc.mapv(|v| (v * scale).exp()))
}

/// Bandwidth policy for label kernels.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaChoice {
    /// Median heuristic over all sample pairs of the dataset.
    #[default]
    Median,
    Fixed(f64),
}

/// Squared distances of `task_id` between every pair of samples in `indices`.
pub fn task_sqdist(dataset: &CiDataset, task_id: &str, indices: &[usize]) -> Result<SqDistMatrix> {
    let column = dataset.task(task_id)?;
    let refs: Vec<&TaskValue> = indices.iter().map(|&i| &column.values[i]).collect();
    sqdist_matrix_refs(task_id, &refs)
}

/// Median-heuristic bandwidth of one task over all pairs of the dataset.
pub fn task_sigma(dataset: &CiDataset, task_id: &str) -> Result<f64> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    let d = task_sqdist(dataset, task_id, &all)?;
    median_sigma_pooled(task_id, d.off_diagonal())
}

/// Shared bandwidth for a task group: median heuristic on the uniform-weight
/// pooled distances `Σ_h a(1/k)·D_h` over all pairs of the dataset.
pub fn group_sigma(dataset: &CiDataset, task_ids: &[String], exponent: WeightExponent) -> Result<f64> {
    if task_ids.is_empty() {
        return Err(Error::InvalidParameter("empty task group".into()));
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let coef = exponent.coefficient(1.0 / task_ids.len() as f64);
    let mut pooled: Option<Vec<f64>> = None;
    for id in task_ids {
        let off = task_sqdist(dataset, id, &all)?.off_diagonal();
        if off.iter().all(|&v| v == 0.0) {
            return Err(Error::ConstantLabel(id.clone()));
        }
        match pooled.as_mut() {
            None => pooled = Some(off.into_iter().map(|v| coef * v).collect()),
            Some(p) => p.iter_mut().zip(off).for_each(|(p, v)| *p += coef * v),
        }
    }
    median_sigma_pooled(&task_ids.join("+"), pooled.unwrap_or_default())
}

/// Per-class cosine kernels of a dataset, built once and reused across tasks.
#[derive(Debug, Clone)]
pub struct ClassKernels {
    pub kernels: Vec<KernelMatrix>,
}

impl ClassKernels {
    pub fn build(dataset: &CiDataset) -> Result<Self> {
        let kernels = dataset
            .partition()
            .classes()
            .par_iter()
            .map(|group| {
                let es: Vec<_> = group.indices.iter().map(|&i| &dataset.embeddings[i]).collect();
                sample_kernel_matrix(&es)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kernels })
    }
}

/// Conditional independence estimate of a single task.
pub fn ci_single_task(dataset: &CiDataset, task_id: &str, sigma: SigmaChoice) -> Result<CiEstimate> {
    let kernels = ClassKernels::build(dataset)?;
    ci_single_task_with(dataset, &kernels, task_id, sigma)
}

/// Same as [`ci_single_task`] with precomputed sample kernels.
pub fn ci_single_task_with(
    dataset: &CiDataset,
    kernels: &ClassKernels,
    task_id: &str,
    sigma: SigmaChoice,
) -> Result<CiEstimate> {
    dataset.task(task_id)?;
    let sigma = match sigma {
        SigmaChoice::Median => task_sigma(dataset, task_id)?,
        SigmaChoice::Fixed(s) => {
            check_sigma(s)?;
            s
        }
    };
    let ls = dataset
        .partition()
        .classes()
        .par_iter()
        .map(|group| rbf_kernel_matrix(&task_sqdist(dataset, task_id, &group.indices)?, sigma))
        .collect::<Result<Vec<_>>>()?;
    conditional_hsic(dataset.partition(), &kernels.kernels, &ls, task_id)
}
