//! Rank correlations, subsample robustness and ternary weight sweeps.

use std::io::Write;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CiDataset;
use crate::error::{Error, Result};
use crate::hsic::{ci_single_task, SigmaChoice};
use crate::rng::{streams, substream};
use crate::weight_opt::GroupObjective;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("series of length {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidParameter("correlation needs at least two pairs".into()));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite value {v}")));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::UndefinedCorrelation("x"));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::UndefinedCorrelation("y"));
    }
    Ok(())
}

/// 1-based ranks; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

/// Number of tied pairs among runs of equal values in an already sorted slice.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort returning the number of inversions.
fn sort_counting_swaps(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_swaps(&mut v[..mid]) + sort_counting_swaps(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            merged.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

/// Kendall tau-b in `O(n log n)`.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let x_ties = tied_pairs(&xs);
    let joint_ties = tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = sort_counting_swaps(&mut ys);
    let y_ties = tied_pairs(&ys);
    let total = n * (n - 1) / 2;
    let numerator = total as f64 - x_ties as f64 - y_ties as f64 + joint_ties as f64 - 2.0 * swaps as f64;
    let denominator = ((total - x_ties) as f64 * (total - y_ties) as f64).sqrt();
    Ok((numerator / denominator).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub task_set: String,
    pub n: usize,
    pub spearman: f64,
    pub kendall: f64,
}

pub fn correlate(task_set: &str, x: &[f64], y: &[f64]) -> Result<CorrelationRow> {
    Ok(CorrelationRow {
        task_set: task_set.to_string(),
        n: x.len(),
        spearman: spearman(x, y)?,
        kendall: kendall_tau(x, y)?,
    })
}

pub fn write_correlations<W: Write>(writer: W, rows: &[CorrelationRow]) -> Result<()> {
    write_rows(writer, rows)
}

fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// What a subsample draws: whole classes, or a fixed number of samples from
/// every class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsampleMode {
    Classes,
    PerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub subset_size: usize,
    pub replicate_index: usize,
    pub seed: u64,
    pub task_id: String,
    pub ci_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub mode: SubsampleMode,
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(writer, &self.rows)
    }

    /// Population standard deviation of `ci_value` over replicates.
    pub fn std_of(&self, size: usize, task_id: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.subset_size == size && r.task_id == task_id)
            .map(|r| r.ci_value)
            .collect();
        if v.is_empty() {
            return None;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        Some((v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
    }
}

pub fn replicate_seed(seed: u64, size: usize, rep: usize) -> u64 {
    seed.wrapping_add((size as u64).wrapping_mul(10_000)).wrapping_add(rep as u64)
}

fn draw_subset(dataset: &CiDataset, mode: SubsampleMode, size: usize, seed: u64) -> Vec<usize> {
    let mut rng = substream(seed, streams::SUBSAMPLING);
    let classes = dataset.partition().classes();
    let mut idx: Vec<usize> = match mode {
        SubsampleMode::Classes => {
            let mut picked = sample(&mut rng, classes.len(), size).into_vec();
            picked.sort_unstable();
            picked
                .into_iter()
                .flat_map(|c| classes[c].indices.iter().copied())
                .collect()
        }
        SubsampleMode::PerClass => classes
            .iter()
            .flat_map(|g| {
                sample(&mut rng, g.indices.len(), size)
                    .into_iter()
                    .map(|i| g.indices[i])
                    .collect::<Vec<_>>()
            })
            .collect(),
    };
    idx.sort_unstable();
    idx
}

/// Recomputes each task's conditional estimate on `reps` random subsets per size.
pub fn subsample_robustness(
    dataset: &CiDataset,
    task_ids: &[String],
    sizes: &[usize],
    reps: usize,
    mode: SubsampleMode,
    seed: u64,
) -> Result<RobustnessReport> {
    let available = match mode {
        SubsampleMode::Classes => dataset.partition().len(),
        SubsampleMode::PerClass => dataset
            .partition()
            .classes()
            .iter()
            .map(|g| g.indices.len())
            .min()
            .unwrap_or(0),
    };
    for &size in sizes {
        if size == 0 || size > available {
            return Err(Error::SubsetTooLarge { size, available });
        }
    }
    for t in task_ids {
        dataset.task(t)?;
    }
    let jobs: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&s| (0..reps).map(move |r| (s, r)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(size, rep)| {
            let sub_seed = replicate_seed(seed, size, rep);
            let subset = dataset.subset(&draw_subset(dataset, mode, size, sub_seed))?;
            task_ids
                .iter()
                .map(|t| {
                    Ok(RobustnessRow {
                        subset_size: size,
                        replicate_index: rep,
                        seed: sub_seed,
                        task_id: t.clone(),
                        ci_value: ci_single_task(&subset, t, SigmaChoice::Median)?.value,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustnessReport {
        mode,
        rows: results.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TernaryRow {
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_3: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TernaryGrid {
    pub tasks: [String; 3],
    pub sigma: f64,
    pub rows: Vec<TernaryRow>,
}

impl TernaryGrid {
    pub fn file_name(&self) -> String {
        format!("ternary_{}_{}_{}.csv", self.tasks[0], self.tasks[1], self.tasks[2])
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(writer, &self.rows)
    }
}

/// Number of divisions for a grid step, which must divide 1 evenly.
pub fn divisions_for_step(step: f64) -> Result<usize> {
    if !(step.is_finite() && step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidParameter(format!("grid step must lie in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("grid step {step} does not divide 1 evenly")));
    }
    Ok(n as usize)
}

/// Evaluates a three-task objective on every point of the simplex lattice
/// with `divisions` steps per side, vertices included.
pub fn ternary_sweep(objective: &GroupObjective, divisions: usize) -> Result<TernaryGrid> {
    let tasks = objective.task_ids();
    if tasks.len() != 3 {
        return Err(Error::InvalidParameter(format!("ternary sweep needs 3 tasks, got {}", tasks.len())));
    }
    if tasks[0] == tasks[1] || tasks[0] == tasks[2] || tasks[1] == tasks[2] {
        return Err(Error::InvalidParameter("ternary sweep tasks must be distinct".into()));
    }
    if divisions == 0 {
        return Err(Error::InvalidParameter("grid needs at least one division".into()));
    }
    let n = divisions as f64;
    let points: Vec<(usize, usize)> = (0..=divisions)
        .flat_map(|i| (0..=divisions - i).map(move |j| (i, j)))
        .collect();
    let rows = points
        .par_iter()
        .map(|&(i, j)| {
            let lambda = [i as f64 / n, j as f64 / n, (divisions - i - j) as f64 / n];
            Ok(TernaryRow {
                lambda_1: lambda[0],
                lambda_2: lambda[1],
                lambda_3: lambda[2],
                objective: objective.value(&lambda)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TernaryGrid {
        tasks: [tasks[0].clone(), tasks[1].clone(), tasks[2].clone()],
        sigma: objective.sigma(),
        rows,
    })
}
