//! Subset-selection baselines: MRMR over conditional estimates and mutual
//! information, and recursive feature elimination with a linear classifier.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_json_atomic;

pub const DEFAULT_BINS: usize = 16;
pub const SUBSET_LIMIT: u128 = 1_000_000;
pub const RFE_EPOCHS: usize = 500;
const RFE_LEARNING_RATE: f64 = 0.5;
const RFE_L2: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepAction {
    Added,
    Removed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub step: usize,
    pub action: StepAction,
    pub task: String,
    /// Subset score after an addition, importance of a removed feature.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSelection {
    pub method: String,
    pub p: usize,
    pub selected: Vec<String>,
    pub score: f64,
    pub log: Vec<SelectionStep>,
}

impl SubsetSelection {
    /// 1 for selected candidates and 0 otherwise, in candidate order.
    pub fn indicator_weights(&self, candidates: &[String]) -> Vec<f64> {
        candidates
            .iter()
            .map(|c| if self.selected.contains(c) { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }
}

/// Equal-frequency bin of each value; ties share the bin of their average rank.
fn equal_frequency_bins(values: ArrayView1<f64>, bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end - 1) as f64 / 2.0;
        let bin = ((rank * bins as f64 / n as f64).floor() as usize).min(bins - 1);
        for &i in &order[start..end] {
            out[i] = bin;
        }
        start = end;
    }
    out
}

/// Plug-in mutual information (nats) on a `bins × bins` equal-frequency grid.
pub fn mutual_information(a: ArrayView1<f64>, b: ArrayView1<f64>, bins: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("series of length {} and {}", a.len(), b.len())));
    }
    if bins < 2 || a.len() < bins {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 bins and as many samples as bins, got {bins} bins for {} samples",
            a.len()
        )));
    }
    let n = a.len() as f64;
    let (ba, bb) = (equal_frequency_bins(a, bins), equal_frequency_bins(b, bins));
    let mut joint = Array2::<f64>::zeros((bins, bins));
    for (&i, &j) in ba.iter().zip(&bb) {
        joint[[i, j]] += 1.0;
    }
    let pa = joint.sum_axis(Axis(1));
    let pb = joint.sum_axis(Axis(0));
    let mut mi = 0.0;
    for ((i, j), &c) in joint.indexed_iter() {
        if c > 0.0 {
            mi += c / n * (c * n / (pa[i] * pb[j])).ln();
        }
    }
    Ok(mi.max(0.0))
}

/// Conditional estimates and pairwise mutual information for MRMR.
#[derive(Debug, Clone, PartialEq)]
pub struct MrmrInputs {
    pub task_ids: Vec<String>,
    pub ci: Vec<f64>,
    pub mi: Array2<f64>,
}

impl MrmrInputs {
    /// Pairs each column of `values` (samples × tasks) with its conditional estimate.
    pub fn new(task_ids: Vec<String>, ci: Vec<f64>, values: ArrayView2<f64>, bins: usize) -> Result<Self> {
        let k = task_ids.len();
        if ci.len() != k || values.ncols() != k {
            return Err(Error::ShapeMismatch(format!(
                "{k} tasks, {} estimates, {} columns",
                ci.len(),
                values.ncols()
            )));
        }
        let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
        let vals = pairs
            .par_iter()
            .map(|&(i, j)| mutual_information(values.column(i), values.column(j), bins))
            .collect::<Result<Vec<_>>>()?;
        let mut mi = Array2::zeros((k, k));
        for (&(i, j), v) in pairs.iter().zip(vals) {
            mi[[i, j]] = v;
            mi[[j, i]] = v;
        }
        Ok(Self { task_ids, ci, mi })
    }

    fn index(&self, id: &str) -> Result<usize> {
        self.task_ids
            .iter()
            .position(|t| t == id)
            .ok_or_else(|| Error::UnknownSubsetTask(id.to_string()))
    }

    fn score_indices(&self, subset: &[usize]) -> f64 {
        let p = subset.len() as f64;
        let relevance = subset.iter().map(|&i| self.ci[i]).sum::<f64>() / p;
        let mut redundancy = 0.0;
        let mut pairs = 0usize;
        for (a, &i) in subset.iter().enumerate() {
            for &j in &subset[a + 1..] {
                redundancy += self.mi[[i, j]];
                pairs += 1;
            }
        }
        let redundancy = if pairs == 0 { 0.0 } else { redundancy / pairs as f64 };
        -relevance - redundancy
    }
}

/// Negative mean conditional estimate minus mean pairwise mutual information.
pub fn mrmr_score(inputs: &MrmrInputs, subset: &[String]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::InvalidParameter("empty subset".into()));
    }
    let idx = subset.iter().map(|s| inputs.index(s)).collect::<Result<Vec<_>>>()?;
    Ok(inputs.score_indices(&idx))
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128) / (i as u128 + 1))
}

fn check_p(k: usize, p: usize) -> Result<()> {
    if p == 0 || p > k {
        return Err(Error::SubsetTooLarge { size: p, available: k });
    }
    Ok(())
}

/// Candidate indices sorted by task id.
fn lexicographic_order(inputs: &MrmrInputs) -> Vec<usize> {
    let mut order: Vec<usize> = (0..inputs.task_ids.len()).collect();
    order.sort_by(|&a, &b| inputs.task_ids[a].cmp(&inputs.task_ids[b]));
    order
}

fn combinations(order: &[usize], p: usize) -> Vec<Vec<usize>> {
    let k = order.len();
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..p).collect();
    loop {
        out.push(idx.iter().map(|&i| order[i]).collect());
        let Some(pos) = (0..p).rev().find(|&i| idx[i] != i + k - p) else {
            return out;
        };
        idx[pos] += 1;
        for i in pos + 1..p {
            idx[i] = idx[i - 1] + 1;
        }
    }
}

fn selection(inputs: &MrmrInputs, chosen: &[usize], score: f64, log: Vec<SelectionStep>) -> SubsetSelection {
    let set: BTreeSet<usize> = chosen.iter().copied().collect();
    SubsetSelection {
        method: "mrmr".into(),
        p: chosen.len(),
        selected: set.iter().map(|&i| inputs.task_ids[i].clone()).collect(),
        score,
        log,
    }
}

/// Exhaustive search for the best-scoring subset of size `p`. Ties go to the
/// subset that comes first in lexicographic task-id order.
pub fn mrmr_select(inputs: &MrmrInputs, p: usize) -> Result<SubsetSelection> {
    let k = inputs.task_ids.len();
    check_p(k, p)?;
    let count = binomial(k, p);
    if count > SUBSET_LIMIT {
        return Err(Error::SubsetGuard { count, limit: SUBSET_LIMIT });
    }
    let subsets = combinations(&lexicographic_order(inputs), p);
    let scores: Vec<f64> = subsets.par_iter().map(|s| inputs.score_indices(s)).collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(selection(inputs, &subsets[best], scores[best], Vec::new()))
}

/// Forward selection: repeatedly adds the candidate giving the best score.
pub fn mrmr_select_greedy(inputs: &MrmrInputs, p: usize) -> Result<SubsetSelection> {
    let k = inputs.task_ids.len();
    check_p(k, p)?;
    let order = lexicographic_order(inputs);
    let mut chosen: Vec<usize> = Vec::with_capacity(p);
    let mut log = Vec::with_capacity(p);
    let mut score = f64::NEG_INFINITY;
    for step in 0..p {
        let mut best: Option<(usize, f64)> = None;
        for &c in order.iter().filter(|c| !chosen.contains(c)) {
            let mut trial = chosen.clone();
            trial.push(c);
            let s = inputs.score_indices(&trial);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((c, s));
            }
        }
        let (c, s) = best.expect("p <= k leaves a candidate");
        chosen.push(c);
        score = s;
        log.push(SelectionStep {
            step,
            action: StepAction::Added,
            task: inputs.task_ids[c].clone(),
            value: s,
        });
    }
    Ok(selection(inputs, &chosen, score, log))
}

/// Dense class indices for string labels, in sorted label order.
pub fn encode_labels<S: AsRef<str>>(labels: &[S]) -> (Vec<usize>, usize) {
    let classes: BTreeSet<&str> = labels.iter().map(|l| l.as_ref()).collect();
    let classes: Vec<&str> = classes.into_iter().collect();
    let idx = labels
        .iter()
        .map(|l| classes.binary_search(&l.as_ref()).expect("label present"))
        .collect();
    (idx, classes.len())
}

struct LinearModel {
    weights: Array2<f64>,
}

fn train_linear(z: ArrayView2<f64>, y: &[usize], classes: usize) -> LinearModel {
    let (m, k) = z.dim();
    let mut w = Array2::<f64>::zeros((k, classes));
    let mut b = Array1::<f64>::zeros(classes);
    let mut onehot = Array2::<f64>::zeros((m, classes));
    for (i, &c) in y.iter().enumerate() {
        onehot[[i, c]] = 1.0;
    }
    for _ in 0..RFE_EPOCHS {
        let mut probs = z.dot(&w) + &b;
        for mut row in probs.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let s = row.sum();
            row /= s;
        }
        let resid = (probs - &onehot) / m as f64;
        let gw = z.t().dot(&resid) + RFE_L2 * &w;
        let gb = resid.sum_axis(Axis(0));
        w.scaled_add(-RFE_LEARNING_RATE, &gw);
        b.scaled_add(-RFE_LEARNING_RATE, &gb);
    }
    LinearModel { weights: w }
}

fn accuracy(z: ArrayView2<f64>, y: &[usize], model: &LinearModel) -> f64 {
    let logits = z.dot(&model.weights);
    let correct = logits
        .rows()
        .into_iter()
        .zip(y)
        .filter(|(row, &c)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            best.0 == c
        })
        .count();
    correct as f64 / y.len() as f64
}

fn check_classifier_inputs(z: ArrayView2<f64>, y: &[usize], classes: usize) -> Result<()> {
    if z.nrows() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} rows for {} labels", z.nrows(), y.len())));
    }
    if classes < 2 {
        return Err(Error::TooFewClasses(classes));
    }
    if z.nrows() <= z.ncols() {
        return Err(Error::InvalidParameter(format!(
            "need more samples than features, got {} for {}",
            z.nrows(),
            z.ncols()
        )));
    }
    Ok(())
}

/// Per-feature importance: Euclidean norm of the feature's coefficients in an
/// L2-regularized multinomial logistic model trained from zero.
pub fn linear_importance<S: AsRef<str>>(z: ArrayView2<f64>, labels: &[S]) -> Result<Vec<f64>> {
    let (y, classes) = encode_labels(labels);
    check_classifier_inputs(z, &y, classes)?;
    let model = train_linear(z, &y, classes);
    Ok(model.weights.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect())
}

/// Recursive feature elimination down to `p` features. `z` holds one
/// standardized column per candidate.
pub fn rfe_select<S: AsRef<str>>(
    candidates: &[String],
    z: ArrayView2<f64>,
    labels: &[S],
    p: usize,
) -> Result<SubsetSelection> {
    let k = candidates.len();
    if z.ncols() != k {
        return Err(Error::ShapeMismatch(format!("{k} candidates for {} columns", z.ncols())));
    }
    check_p(k, p)?;
    let (y, classes) = encode_labels(labels);
    check_classifier_inputs(z, &y, classes)?;
    let mut remaining: Vec<usize> = (0..k).collect();
    let mut log = Vec::with_capacity(k - p);
    loop {
        let sub = z.select(Axis(1), &remaining);
        let model = train_linear(sub.view(), &y, classes);
        if remaining.len() == p {
            return Ok(SubsetSelection {
                method: "rfe".into(),
                p,
                selected: remaining.iter().map(|&i| candidates[i].clone()).collect(),
                score: accuracy(sub.view(), &y, &model),
                log,
            });
        }
        let importances: Vec<f64> = model.weights.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let (pos, &imp) = importances
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, &f64)>, (i, v)| match acc {
                Some((_, b)) if b <= v => acc,
                _ => Some((i, v)),
            })
            .expect("at least one feature");
        log.push(SelectionStep {
            step: log.len(),
            action: StepAction::Removed,
            task: candidates[remaining[pos]].clone(),
            value: imp,
        });
        remaining.remove(pos);
    }
}
