//! Routing statistics and summaries over harness metric logs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MooreError, Result};
use crate::harness::{read_log, Metric, MetricLog, Phase, RunMeta, META_FILE, METRICS_FILE};
use crate::linalg::{norm2, Matrix};
use crate::moore::MooreLayer;

/// Per-expert mean and unbiased variance of routing weights over one task's samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingProfile {
    pub task: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub sample_count: usize,
    /// False for a single sample; `var` is then all zeros.
    pub variance_defined: bool,
}

/// Streams `g(x, task)` over `samples` (Welford updates).
pub fn routing_profile(layer: &MooreLayer, samples: &[Vec<f64>], task: usize) -> Result<RoutingProfile> {
    if samples.is_empty() {
        return Err(MooreError::EmptySampleSet);
    }
    let d = layer.dims().d;
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for (n, x) in samples.iter().enumerate() {
        let g = layer.route(x, task, None)?.g;
        let count = (n + 1) as f64;
        for i in 0..d {
            let delta = g[i] - mean[i];
            mean[i] += delta / count;
            m2[i] += delta * (g[i] - mean[i]);
        }
    }
    let n = samples.len();
    let var = if n >= 2 {
        m2.iter().map(|v| (v / (n - 1) as f64).max(0.0)).collect()
    } else {
        vec![0.0; d]
    };
    Ok(RoutingProfile {
        task,
        mean,
        var,
        sample_count: n,
        variance_defined: n >= 2,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskCorrelation {
    /// `‖ḡ_i − ḡ_j‖ / max_{k,k'} ‖ḡ_k − ḡ_k'‖`.
    pub matrix: Matrix,
    /// Set when every mean coincides; the matrix is then all zeros.
    pub degenerate: bool,
}

/// Pairwise distances between profile means, scaled so the largest is 1.
pub fn task_correlation(profiles: &[RoutingProfile]) -> Result<TaskCorrelation> {
    let n = profiles.len();
    if n < 2 {
        return Err(MooreError::InvalidSpec(format!("need at least two profiles, got {n}")));
    }
    let d = profiles[0].mean.len();
    if let Some(p) = profiles.iter().find(|p| p.mean.len() != d) {
        return Err(MooreError::shape("task_correlation", d, p.mean.len()));
    }
    let mut m = Matrix::zeros(n, n);
    let mut max: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let diff: Vec<f64> = profiles[i].mean.iter().zip(&profiles[j].mean).map(|(a, b)| a - b).collect();
            let dist = norm2(&diff);
            m.set(i, j, dist);
            m.set(j, i, dist);
            max = max.max(dist);
        }
    }
    if max == 0.0 {
        log::warn!("all routing means coincide; correlation matrix is degenerate");
        return Ok(TaskCorrelation {
            matrix: m,
            degenerate: true,
        });
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                // the maximizing pair divides to exactly 1
                m.set(i, j, m.get(i, j) / max);
            }
        }
    }
    Ok(TaskCorrelation {
        matrix: m,
        degenerate: false,
    })
}

/// `expert_index,mean,variance` rows.
pub fn profile_csv(p: &RoutingProfile) -> String {
    let mut s = String::from("expert_index,mean,variance\n");
    for (i, (m, v)) in p.mean.iter().zip(&p.var).enumerate() {
        writeln!(s, "{i},{m},{v}").expect("writing to a String");
    }
    s
}

/// Square matrix as CSV, one row per line.
pub fn matrix_csv(m: &Matrix) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// A metric log with its run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub meta: RunMeta,
    pub log: MetricLog,
}

impl RunLog {
    /// Reads `run.json` and `metrics.jsonl` from a pipeline output directory.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: RunMeta = serde_json::from_slice(&fs::read(dir.join(META_FILE))?)?;
        let log = read_log(fs::File::open(dir.join(METRICS_FILE))?)?;
        Ok(Self { meta, log })
    }

    /// Final adapt-phase test accuracy of each adapted task.
    pub fn final_accuracies(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for r in self.log.select(Phase::Adapt, Metric::Accuracy) {
            if self.meta.tasks.contains(&r.task) {
                out.insert(r.task.clone(), r.value);
            }
        }
        out
    }

    /// Mean of [`final_accuracies`](Self::final_accuracies).
    pub fn overall_accuracy(&self) -> Result<f64> {
        let acc = self.final_accuracies();
        if acc.len() != self.meta.tasks.len() {
            return Err(MooreError::MissingRuns(format!(
                "{} (K={}): {} of {} tasks have accuracy records",
                self.meta.adapter,
                self.meta.k,
                acc.len(),
                self.meta.tasks.len()
            )));
        }
        Ok(acc.values().sum::<f64>() / acc.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictCell {
    pub adapter: String,
    pub k: usize,
    pub overall_accuracy: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictSummary {
    /// Sorted by adapter, then K.
    pub cells: Vec<ConflictCell>,
    /// Tasks from easiest to hardest.
    pub task_order: Vec<String>,
    /// Mean accuracy across adapter kinds, aligned with `task_order`.
    pub task_accuracy: Vec<f64>,
}

impl ConflictSummary {
    /// `(K, overall accuracy)` points of one adapter, ascending K.
    pub fn curve(&self, adapter: &str) -> Vec<(usize, f64)> {
        self.cells
            .iter()
            .filter(|c| c.adapter == adapter)
            .map(|c| (c.k, c.overall_accuracy))
            .collect()
    }
}

/// Overall accuracy per (adapter, K) cell, averaging repeated runs, plus a
/// difficulty ordering of tasks. Every adapter must have a run at every K.
pub fn conflict_summary(runs: &[RunLog]) -> Result<ConflictSummary> {
    if runs.is_empty() {
        return Err(MooreError::MissingRuns("no runs given".into()));
    }
    let mut cells: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    let mut per_task: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for run in runs {
        cells
            .entry((run.meta.adapter.clone(), run.meta.k))
            .or_default()
            .push(run.overall_accuracy()?);
        for (task, acc) in run.final_accuracies() {
            per_task.entry((task, run.meta.adapter.clone())).or_default().push(acc);
        }
    }
    let adapters: BTreeSet<&String> = cells.keys().map(|(a, _)| a).collect();
    let ks: BTreeSet<usize> = cells.keys().map(|(_, k)| *k).collect();
    for a in &adapters {
        for k in &ks {
            if !cells.contains_key(&((*a).clone(), *k)) {
                return Err(MooreError::MissingRuns(format!("adapter {a} has no run at K={k}")));
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let cells = cells
        .iter()
        .map(|((adapter, k), v)| ConflictCell {
            adapter: adapter.clone(),
            k: *k,
            overall_accuracy: mean(v),
            runs: v.len(),
        })
        .collect();

    let mut by_task: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((task, _), v) in &per_task {
        by_task.entry(task.clone()).or_default().push(mean(v));
    }
    let mut order: Vec<(String, f64)> = by_task.into_iter().map(|(t, v)| (t, mean(&v))).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ConflictSummary {
        cells,
        task_accuracy: order.iter().map(|(_, a)| *a).collect(),
        task_order: order.into_iter().map(|(t, _)| t).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDegradation {
    pub task: String,
    pub before: f64,
    pub after: f64,
    pub degradation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OblivionSummary {
    pub tasks: Vec<TaskDegradation>,
    pub mean: f64,
    /// `mean / 100` when accuracies are percentages, else `mean`.
    pub mean_normalized: f64,
}

/// Accuracy lost on every pretrained task: the last pretrain-phase accuracy
/// minus the last eval-phase accuracy.
pub fn oblivion_summary(log: &MetricLog, percent: bool) -> Result<OblivionSummary> {
    let mut before: BTreeMap<&str, f64> = BTreeMap::new();
    for r in log.select(Phase::Pretrain, Metric::Accuracy) {
        before.insert(&r.task, r.value);
    }
    if before.is_empty() {
        return Err(MooreError::MissingBaseline("no pretrain accuracy records".into()));
    }
    let mut after: BTreeMap<&str, f64> = BTreeMap::new();
    for r in log.select(Phase::Eval, Metric::Accuracy) {
        after.insert(&r.task, r.value);
    }
    let mut tasks = Vec::new();
    for (task, b) in before {
        let a = *after
            .get(task)
            .ok_or_else(|| MooreError::MissingBaseline(format!("task {task} has no post-adaptation accuracy")))?;
        tasks.push(TaskDegradation {
            task: task.to_string(),
            before: b,
            after: a,
            degradation: b - a,
        });
    }
    let mean = tasks.iter().map(|t| t.degradation).sum::<f64>() / tasks.len() as f64;
    Ok(OblivionSummary {
        tasks,
        mean,
        mean_normalized: if percent { mean / 100.0 } else { mean },
    })
}
