//! Simplex-constrained weighting of a label group.
//!
//! Weights `λ = softmax(W)` or `λ = sparsemax(W)` are found by gradient
//! descent on the free parameters `W`, minimizing the conditional HSIC of the
//! weighted group kernel.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Zip};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CiDataset;
use crate::error::{Error, Result};
use crate::hsic::{double_center, group_sigma, task_sqdist, ClassKernels, WeightExponent};
use crate::io::write_json_atomic;
use crate::kernels::check_sigma;
use crate::rng::{streams, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Softmax,
    Sparsemax,
}

impl Method {
    pub fn weights(self, w: &[f64]) -> Vec<f64> {
        match self {
            Method::Softmax => softmax(w),
            Method::Sparsemax => sparsemax(w),
        }
    }

    /// Pulls a gradient with respect to `λ` back to `W`.
    pub fn pullback(self, w: &[f64], lambda: &[f64], grad: &[f64]) -> Vec<f64> {
        match self {
            Method::Softmax => {
                let dot: f64 = lambda.iter().zip(grad).map(|(l, g)| l * g).sum();
                lambda.iter().zip(grad).map(|(l, g)| l * (g - dot)).collect()
            }
            Method::Sparsemax => sparsemax_jacobian_vec(w, grad),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Softmax => "softmax",
            Method::Sparsemax => "sparsemax",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Method::Softmax),
            "sparsemax" => Ok(Method::Sparsemax),
            _ => Err(Error::InvalidParameter(format!("unknown method '{s}'"))),
        }
    }
}

pub fn softmax(w: &[f64]) -> Vec<f64> {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = w.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// Threshold `τ` and support of the Euclidean projection of `w` onto the simplex.
fn sparsemax_threshold(w: &[f64]) -> f64 {
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = sorted[0] - 1.0;
    for (j, &z) in sorted.iter().enumerate() {
        cumsum += z;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if z > candidate {
            tau = candidate;
        } else {
            break;
        }
    }
    tau
}

pub fn sparsemax(w: &[f64]) -> Vec<f64> {
    if w.is_empty() {
        return Vec::new();
    }
    let tau = sparsemax_threshold(w);
    let lambda: Vec<f64> = w.iter().map(|v| (v - tau).max(0.0)).collect();
    let sum: f64 = lambda.iter().sum();
    lambda.into_iter().map(|v| v / sum).collect()
}

/// Jacobian-vector product of sparsemax at `w`. Coordinates sitting exactly
/// at the threshold count as off-support.
pub fn sparsemax_jacobian_vec(w: &[f64], v: &[f64]) -> Vec<f64> {
    if w.is_empty() {
        return Vec::new();
    }
    let tau = sparsemax_threshold(w);
    let support: Vec<bool> = w.iter().map(|&x| x > tau).collect();
    let count = support.iter().filter(|&&s| s).count();
    if count == 0 {
        return vec![0.0; w.len()];
    }
    let mean = v
        .iter()
        .zip(&support)
        .filter(|(_, &s)| s)
        .map(|(x, _)| x)
        .sum::<f64>()
        / count as f64;
    v.iter()
        .zip(&support)
        .map(|(x, &s)| if s { x - mean } else { 0.0 })
        .collect()
}

struct ClassTerms {
    centered: Array2<f64>,
    dists: Vec<Array2<f64>>,
}

/// Conditional HSIC of a weighted label group as a function of `λ`, with
/// centered sample kernels and per-task distances precomputed per class.
pub struct GroupObjective {
    task_ids: Vec<String>,
    sigma: f64,
    exponent: WeightExponent,
    total: usize,
    classes: Vec<ClassTerms>,
}

impl GroupObjective {
    /// Builds the objective with `σ` from the median heuristic on the
    /// uniformly weighted group.
    pub fn new(dataset: &CiDataset, task_ids: &[String], exponent: WeightExponent) -> Result<Self> {
        let kernels = ClassKernels::build(dataset)?;
        Self::with_kernels(dataset, &kernels, task_ids, exponent, None)
    }

    pub fn with_kernels(
        dataset: &CiDataset,
        kernels: &ClassKernels,
        task_ids: &[String],
        exponent: WeightExponent,
        sigma: Option<f64>,
    ) -> Result<Self> {
        for id in task_ids {
            dataset.task(id)?;
        }
        let sigma = match sigma {
            Some(s) => {
                check_sigma(s)?;
                s
            }
            None => group_sigma(dataset, task_ids, exponent)?,
        };
        let classes = dataset
            .partition()
            .classes()
            .par_iter()
            .zip(kernels.kernels.par_iter())
            .map(|(group, k)| {
                let dists = task_ids
                    .iter()
                    .map(|id| Ok(task_sqdist(dataset, id, &group.indices)?.values))
                    .collect::<Result<Vec<_>>>()?;
                Ok(ClassTerms {
                    centered: double_center(k.values()),
                    dists,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            task_ids: task_ids.to_vec(),
            sigma,
            exponent,
            total: dataset.len(),
            classes,
        })
    }

    pub fn task_ids(&self) -> &[String] {
        &self.task_ids
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn exponent(&self) -> WeightExponent {
        self.exponent
    }

    fn check_lambda(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.task_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} tasks",
                lambda.len(),
                self.task_ids.len()
            )));
        }
        if let Some(l) = lambda.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::InvalidParameter(format!("invalid weight {l}")));
        }
        Ok(())
    }

    fn evaluate(&self, lambda: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>)> {
        self.check_lambda(lambda)?;
        let k = lambda.len();
        let coef: Vec<f64> = lambda.iter().map(|&l| self.exponent.coefficient(l)).collect();
        let scale = -1.0 / (2.0 * self.sigma * self.sigma);
        let terms: Vec<(f64, Vec<f64>)> = self
            .classes
            .par_iter()
            .map(|class| {
                let n = class.centered.nrows() as f64;
                let mut acc = Array2::<f64>::zeros(class.centered.raw_dim());
                for (d, &a) in class.dists.iter().zip(&coef) {
                    acc.scaled_add(a, d);
                }
                let mut prod = acc;
                Zip::from(&mut prod)
                    .and(&class.centered)
                    .for_each(|p, &kc| *p = kc * (*p * scale).exp());
                let value = prod.sum() / n;
                let grad = if with_grad {
                    class
                        .dists
                        .iter()
                        .map(|d| scale * Zip::from(&prod).and(d).fold(0.0, |s, &p, &d| s + p * d) / n)
                        .collect()
                } else {
                    Vec::new()
                };
                (value, grad)
            })
            .collect();
        let m = self.total as f64;
        let mut value = 0.0;
        let mut grad = vec![0.0; if with_grad { k } else { 0 }];
        for (v, g) in terms {
            value += v;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        for (g, &l) in grad.iter_mut().zip(lambda) {
            *g *= self.exponent.derivative(l) / m;
        }
        Ok((value / m, grad))
    }

    pub fn value(&self, lambda: &[f64]) -> Result<f64> {
        Ok(self.evaluate(lambda, false)?.0)
    }

    /// Objective and its gradient with respect to `λ`.
    pub fn value_and_grad_lambda(&self, lambda: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evaluate(lambda, true)
    }

    /// Objective at `λ(W)` and its gradient with respect to `W`.
    pub fn value_and_grad(&self, w: &[f64], method: Method) -> Result<(f64, Vec<f64>)> {
        let lambda = method.weights(w);
        let (value, g) = self.evaluate(&lambda, true)?;
        Ok((value, method.pullback(w, &lambda, &g)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    Uniform,
    SeededRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub init: Init,
    pub step: f64,
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            init: Init::Uniform,
            step: 1.0,
            tolerance: 1e-12,
            restarts: 5,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {}", self.step)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub tasks: Vec<String>,
    pub lambda: Vec<f64>,
    pub w: Vec<f64>,
    pub objective: f64,
    pub trajectory: Vec<(usize, f64)>,
    pub method: Method,
    pub sigma: f64,
    pub seed: u64,
}

const MAX_HALVINGS: usize = 60;
const MAX_STEP: f64 = 1e9;

struct Run {
    w: Vec<f64>,
    value: f64,
    trajectory: Vec<(usize, f64)>,
}

fn descend(objective: &GroupObjective, method: Method, w0: Vec<f64>, config: &OptimizerConfig) -> Result<Run> {
    let mut w = w0;
    let (mut value, mut grad) = objective.value_and_grad(&w, method)?;
    let mut trajectory = vec![(0, value)];
    let mut step = config.step;
    for iter in 1..=config.max_iters {
        if grad.iter().all(|&g| g == 0.0) {
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate: Vec<f64> = w.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
            let v = objective.value(&method.weights(&candidate))?;
            if v < value {
                accepted = Some((candidate, v));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_value)) = accepted else {
            break;
        };
        let decrease = value - next_value;
        w = next;
        (value, grad) = objective.value_and_grad(&w, method)?;
        trajectory.push((iter, value));
        step = (step * 2.0).min(MAX_STEP);
        if decrease < config.tolerance {
            break;
        }
    }
    Ok(Run { w, value, trajectory })
}

/// Minimizes `objective` from `W = 0` (or a random start) plus seeded random
/// restarts, keeping the best run.
pub fn optimize_objective(
    objective: &GroupObjective,
    method: Method,
    config: &OptimizerConfig,
) -> Result<WeightSolution> {
    config.validate()?;
    let k = objective.task_ids().len();
    if k == 0 {
        return Err(Error::InvalidParameter("empty task group".into()));
    }
    let solution = |run: Run| WeightSolution {
        tasks: objective.task_ids().to_vec(),
        lambda: method.weights(&run.w),
        w: run.w,
        objective: run.value,
        trajectory: run.trajectory,
        method,
        sigma: objective.sigma(),
        seed: config.seed,
    };
    if k == 1 {
        let value = objective.value(&[1.0])?;
        return Ok(solution(Run {
            w: vec![0.0],
            value,
            trajectory: vec![(0, value)],
        }));
    }
    let mut rng = substream(config.seed, streams::OPTIMIZER_RESTARTS);
    let mut random_start = || -> Vec<f64> { (0..k).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let first = match config.init {
        Init::Uniform => vec![0.0; k],
        Init::SeededRandom => random_start(),
    };
    let mut best = descend(objective, method, first, config)?;
    for _ in 0..config.restarts {
        let run = descend(objective, method, random_start(), config)?;
        if run.value < best.value - config.tolerance {
            best = run;
        }
    }
    Ok(solution(best))
}

pub fn optimize_weights(
    dataset: &CiDataset,
    task_ids: &[String],
    method: Method,
    exponent: WeightExponent,
    config: &OptimizerConfig,
) -> Result<WeightSolution> {
    let objective = GroupObjective::new(dataset, task_ids, exponent)?;
    optimize_objective(&objective, method, config)
}

/// Exported weights: one entry per task, zeros kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub tasks: Vec<String>,
    pub weights: Vec<f64>,
    pub method: String,
    pub objective: f64,
    pub sigma: f64,
    pub seed: u64,
    pub trajectory: Vec<(usize, f64)>,
    pub sum: f64,
}

impl From<&WeightSolution> for WeightsManifest {
    fn from(s: &WeightSolution) -> Self {
        Self {
            tasks: s.tasks.clone(),
            weights: s.lambda.clone(),
            method: s.method.to_string(),
            objective: s.objective,
            sigma: s.sigma,
            seed: s.seed,
            trajectory: s.trajectory.clone(),
            sum: s.lambda.iter().sum(),
        }
    }
}

impl WeightsManifest {
    /// A manifest for fixed weights (e.g. uniform, or a 1/0 selection), with
    /// the objective evaluated at the normalized weights.
    pub fn fixed(objective: &GroupObjective, weights: Vec<f64>, method: &str, seed: u64) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if sum.is_nan() || sum <= 0.0 {
            return Err(Error::InvalidParameter("weights must not all be zero".into()));
        }
        let normalized: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        let value = objective.value(&normalized)?;
        Ok(Self {
            tasks: objective.task_ids().to_vec(),
            weights,
            method: method.to_string(),
            objective: value,
            sigma: objective.sigma(),
            seed,
            trajectory: vec![(0, value)],
            sum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text)?;
        if manifest.tasks.len() != manifest.weights.len() {
            return Err(Error::Malformed(format!(
                "{} tasks but {} weights",
                manifest.tasks.len(),
                manifest.weights.len()
            )));
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskColumn;
    use crate::hsic::{ci_single_task, conditional_hsic, weighted_label_kernel, SigmaChoice};
    use crate::kernels::{DownsampledEmbedding, TaskValue};
    use crate::synthetic::{generate, SyntheticConfig, Z_CI, Z_DEP, Z_MIX};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn random_dataset(seed: u64, n: usize, k: usize) -> CiDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample_ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let labels: Vec<String> = (0..n).map(|i| format!("c{}", i % 3)).collect();
        let embeddings = sample_ids
            .iter()
            .map(|id| DownsampledEmbedding {
                id: id.clone(),
                values: Array2::from_shape_fn((2, 3), |_| rng.random_range(0.1..1.0)),
            })
            .collect();
        let tasks = (0..k)
            .map(|t| TaskColumn {
                id: format!("t{t}"),
                values: (0..n).map(|_| TaskValue::Scalar(rng.random_range(-1.0..1.0))).collect(),
            })
            .collect();
        CiDataset::new(sample_ids, labels, embeddings, tasks).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert!(close(&softmax(&[0.3, 0.3, 0.3]), &[1.0 / 3.0; 3], 1e-15));
        assert!(close(&softmax(&[2f64.ln(), 0.0]), &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
        assert!(close(&softmax(&[1.0, -2.0]), &softmax(&[101.0, 98.0]), 1e-15));
    }

    #[test]
    fn sparsemax_examples() {
        assert!(close(&sparsemax(&[2.0, 0.0]), &[1.0, 0.0], 1e-15));
        assert!(close(&sparsemax(&[1.1, 1.0, -5.0]), &[0.55, 0.45, 0.0], 1e-15));
        assert!(close(&sparsemax(&[0.5, 0.5]), &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn sparsemax_jacobian_examples() {
        assert!(close(&sparsemax_jacobian_vec(&[0.2, 0.1, 0.0], &[3.0; 3]), &[0.0; 3], 1e-15));
        assert!(close(&sparsemax_jacobian_vec(&[0.5, 0.5], &[1.0, 0.0]), &[0.5, -0.5], 1e-15));
        let off = sparsemax_jacobian_vec(&[1.1, 1.0, -5.0], &[0.3, -0.7, 9.0]);
        assert_eq!(off[2], 0.0);
        // W = (1, 0): τ = 0 exactly, so the second coordinate is off-support
        assert!(close(&sparsemax_jacobian_vec(&[1.0, 0.0], &[1.0, 0.0]), &[0.0, 0.0], 1e-15));
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Softmax, Method::Sparsemax] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("adam".parse::<Method>().is_err());
    }

    #[test]
    fn objective_matches_fresh_conditional_hsic() {
        let ds = random_dataset(11, 24, 3);
        let tasks = ids(&["t0", "t1", "t2"]);
        for exponent in [WeightExponent::Linear, WeightExponent::Squared] {
            let obj = GroupObjective::new(&ds, &tasks, exponent).unwrap();
            let kernels = ClassKernels::build(&ds).unwrap();
            for lambda in [[0.2, 0.5, 0.3], [1.0, 0.0, 0.0], [0.0, 0.4, 0.6]] {
                let ls = ds
                    .partition()
                    .classes()
                    .iter()
                    .map(|g| {
                        let d: Vec<_> = tasks
                            .iter()
                            .map(|t| task_sqdist(&ds, t, &g.indices).unwrap())
                            .collect();
                        let refs: Vec<_> = d.iter().collect();
                        weighted_label_kernel(&refs, &lambda, obj.sigma(), exponent).unwrap()
                    })
                    .collect::<Vec<_>>();
                let fresh = conditional_hsic(ds.partition(), &kernels.kernels, &ls, "g").unwrap();
                assert!((obj.value(&lambda).unwrap() - fresh.value).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vertex_equals_single_task_estimate() {
        let ds = random_dataset(12, 30, 3);
        let tasks = ids(&["t0", "t1", "t2"]);
        let obj = GroupObjective::new(&ds, &tasks, WeightExponent::Linear).unwrap();
        for (h, t) in tasks.iter().enumerate() {
            let mut lambda = vec![0.0; 3];
            lambda[h] = 1.0;
            let single = ci_single_task(&ds, t, SigmaChoice::Fixed(obj.sigma())).unwrap();
            assert!((obj.value(&lambda).unwrap() - single.value).abs() < 1e-12);
        }
    }

    fn finite_difference(obj: &GroupObjective, w: &[f64], method: Method) -> Vec<f64> {
        let h = 1e-5;
        (0..w.len())
            .map(|i| {
                let mut plus = w.to_vec();
                let mut minus = w.to_vec();
                plus[i] += h;
                minus[i] -= h;
                let fp = obj.value(&method.weights(&plus)).unwrap();
                let fm = obj.value(&method.weights(&minus)).unwrap();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ds = random_dataset(13, 27, 3);
        let tasks = ids(&["t0", "t1", "t2"]);
        let obj = GroupObjective::new(&ds, &tasks, WeightExponent::Linear).unwrap();
        for (method, w) in [
            (Method::Softmax, vec![0.3, -0.2, 0.8]),
            (Method::Sparsemax, vec![0.45, 0.2, 0.35]),
            (Method::Sparsemax, vec![0.9, 0.4, -2.0]),
        ] {
            let (_, g) = obj.value_and_grad(&w, method).unwrap();
            let fd = finite_difference(&obj, &w, method);
            let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * scale.max(1e-12), "{g:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn identical_tasks_have_equal_gradients() {
        let base = random_dataset(14, 21, 1);
        let col = base.task("t0").unwrap().values.clone();
        let ds = CiDataset::new(
            base.sample_ids().to_vec(),
            base.labels().to_vec(),
            base.embeddings.clone(),
            vec![
                TaskColumn { id: "a".into(), values: col.clone() },
                TaskColumn { id: "b".into(), values: col },
            ],
        )
        .unwrap();
        let tasks = ids(&["a", "b"]);
        let obj = GroupObjective::new(&ds, &tasks, WeightExponent::Linear).unwrap();
        let (_, g) = obj.value_and_grad_lambda(&[0.3, 0.7]).unwrap();
        assert!((g[0] - g[1]).abs() < 1e-15);

        let sol = optimize_weights(&ds, &tasks, Method::Softmax, WeightExponent::Linear, &Default::default())
            .unwrap();
        assert!(close(&sol.lambda, &[0.5, 0.5], 1e-12));
    }

    #[test]
    fn single_task_pins_weight() {
        let ds = random_dataset(15, 18, 2);
        let tasks = ids(&["t1"]);
        for method in [Method::Softmax, Method::Sparsemax] {
            let sol = optimize_weights(&ds, &tasks, method, WeightExponent::Linear, &Default::default())
                .unwrap();
            assert_eq!(sol.lambda, vec![1.0]);
            assert_eq!(sol.trajectory.len(), 1);
            let single = ci_single_task(&ds, "t1", SigmaChoice::Median).unwrap();
            assert!((sol.objective - single.value).abs() < 1e-12);
        }
        let obj = GroupObjective::new(&ds, &tasks, WeightExponent::Linear).unwrap();
        for method in [Method::Softmax, Method::Sparsemax] {
            assert_eq!(obj.value_and_grad(&[0.7], method).unwrap().1, vec![0.0]);
        }
    }

    #[test]
    fn constant_task_is_named() {
        let base = random_dataset(16, 12, 1);
        let ds = base
            .with_matrix_task("flat", vec![Array2::from_elem((2, 2), 1.0); 12])
            .unwrap();
        let err = optimize_weights(
            &ds,
            &ids(&["t0", "flat"]),
            Method::Sparsemax,
            WeightExponent::Linear,
            &Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ConstantLabel(ref t) if t == "flat"), "{err}");
    }

    #[test]
    fn optimizer_is_monotone_and_deterministic() {
        let set = generate(&SyntheticConfig::default(), 5).unwrap();
        let tasks = ids(&[Z_CI, Z_DEP, Z_MIX]);
        let cfg = OptimizerConfig { seed: 9, ..Default::default() };
        for method in [Method::Softmax, Method::Sparsemax] {
            let a = optimize_weights(&set.dataset, &tasks, method, WeightExponent::Linear, &cfg).unwrap();
            let b = optimize_weights(&set.dataset, &tasks, method, WeightExponent::Linear, &cfg).unwrap();
            assert_eq!(a, b);
            assert!(a.trajectory.windows(2).all(|p| p[1].1 <= p[0].1));
            assert!((a.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(a.lambda.iter().all(|&l| l >= 0.0));
        }
    }

    #[test]
    fn sparsemax_drops_dependent_label() {
        let set = generate(&SyntheticConfig::default(), 1).unwrap();
        let sol = optimize_weights(
            &set.dataset,
            &ids(&[Z_CI, Z_DEP]),
            Method::Sparsemax,
            WeightExponent::Linear,
            &OptimizerConfig { max_iters: 50, ..Default::default() },
        )
        .unwrap();
        assert_eq!(sol.lambda[1], 0.0, "{sol:?}");
    }

    #[test]
    fn manifest_round_trip_keeps_zeros() {
        let sol = WeightSolution {
            tasks: ids(&["f0", "zcr", "voicing"]),
            lambda: vec![0.6, 0.0, 0.4],
            w: vec![1.0, -3.0, 0.8],
            objective: 0.01,
            trajectory: vec![(0, 0.02), (1, 0.01)],
            method: Method::Sparsemax,
            sigma: 1.5,
            seed: 7,
        };
        let manifest = WeightsManifest::from(&sol);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.json");
        manifest.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(json["weights"][1], 0.0);
        assert_eq!(json["method"], "sparsemax");
        assert_eq!(json["trajectory"][1][0], 1);
        assert!((json["sum"].as_f64().unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(WeightsManifest::load(&path).unwrap(), manifest);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig { step: 0.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { max_iters: 0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { tolerance: -1.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn outputs_lie_on_simplex(w in prop::collection::vec(-50.0f64..50.0, 1..8)) {
            for lambda in [softmax(&w), sparsemax(&w)] {
                prop_assert!((lambda.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(lambda.iter().all(|&l| l >= 0.0));
            }
        }

        #[test]
        fn softmax_shift_invariant(w in prop::collection::vec(-20.0f64..20.0, 1..8), c in -30.0f64..30.0) {
            let shifted: Vec<f64> = w.iter().map(|v| v + c).collect();
            prop_assert!(close(&softmax(&w), &softmax(&shifted), 1e-12));
        }

        #[test]
        fn sparsemax_is_a_projection(raw in prop::collection::vec(0.0f64..1.0, 1..8)) {
            let sum: f64 = raw.iter().sum();
            prop_assume!(sum > 1e-6);
            let point: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            prop_assert!(close(&sparsemax(&point), &point, 1e-12));
        }

        #[test]
        fn sparsemax_minimizes_distance(
            w in prop::collection::vec(-3.0f64..3.0, 2..6),
            raw in prop::collection::vec(0.0f64..1.0, 6),
        ) {
            let lambda = sparsemax(&w);
            let other: Vec<f64> = raw[..w.len()].to_vec();
            let s: f64 = other.iter().sum();
            prop_assume!(s > 1e-6);
            let other: Vec<f64> = other.iter().map(|v| v / s).collect();
            let dist = |p: &[f64]| p.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            prop_assert!(dist(&lambda) <= dist(&other) + 1e-12);
        }

        #[test]
        fn sparsemax_jacobian_sums_to_zero(
            w in prop::collection::vec(-3.0f64..3.0, 1..8),
            v in prop::collection::vec(-3.0f64..3.0, 8),
        ) {
            let j = sparsemax_jacobian_vec(&w, &v[..w.len()]);
            prop_assert!(j.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
