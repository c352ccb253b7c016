//! Synthetic C-way classification tasks.
//!
//! Task `k` labels `x ~ N(0, I)` by `argmax((ρ G_shared + (1 − ρ) G_k) x)`.
//! `ρ = 1` makes every task the same labeler; `ρ = 0` makes them independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::error::{MooreError, Result};
use crate::linalg::Matrix;

/// Parameters of one suite. Everything regenerates from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    /// Task names are `{prefix}{index}`.
    pub prefix: String,
    pub k: usize,
    pub d_in: usize,
    pub c: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub rho: f64,
    pub seed: u64,
    /// Seed of `G_shared`; suites sharing it share structure.
    #[serde(default)]
    pub shared_seed: Option<u64>,
}

impl SuiteSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MooreError::InvalidSpec(format!("suite {}: {m}", self.prefix)));
        if self.k == 0 || self.d_in == 0 || self.n_train == 0 || self.n_test == 0 {
            return bad("K, D_in and sample counts must be at least 1");
        }
        if self.c < 2 {
            return bad("need at least two classes");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1]");
        }
        if self.prefix.is_empty() {
            return bad("empty task prefix");
        }
        Ok(())
    }

    pub fn task_name(&self, k: usize) -> String {
        format!("{}{k}", self.prefix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Test,
}

/// Samples of one task split, tagged with where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub tag: SplitTag,
    pub task: String,
    pub xs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fails unless this split may feed gradients.
    pub fn require_train(&self) -> Result<()> {
        if self.tag != SplitTag::Train {
            return Err(MooreError::Provenance(format!(
                "{:?} split of task {} used for gradients",
                self.tag, self.task
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    pub name: String,
    pub train: Split,
    pub test: Split,
    /// Labeling matrix `ρ G_shared + (1 − ρ) G_k` (`C × D_in`).
    pub labeler: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub spec: SuiteSpec,
    pub tasks: Vec<TaskData>,
}

impl Suite {
    pub fn names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn label(labeler: &Matrix, x: &[f64]) -> usize {
    let scores = labeler.matvec(x, None).expect("labeler shape");
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

fn sample_split(tag: SplitTag, task: &str, labeler: &Matrix, n: usize, seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_in = labeler.cols();
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d_in).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let labels = xs.iter().map(|x| label(labeler, x)).collect();
    Split {
        tag,
        task: task.to_string(),
        xs,
        labels,
    }
}

/// Materializes every task of `spec`. Train and test samples come from
/// separate random streams.
pub fn generate_suite(spec: &SuiteSpec) -> Result<Suite> {
    spec.validate()?;
    let shared_seed = spec.shared_seed.unwrap_or(spec.seed);
    let shared = gaussian_matrix(spec.c, spec.d_in, &mut ChaCha8Rng::seed_from_u64(derive_seed(shared_seed, "shared")));
    let mut tasks = Vec::with_capacity(spec.k);
    for k in 0..spec.k {
        let name = spec.task_name(k);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("labeler/{name}")));
        let private = gaussian_matrix(spec.c, spec.d_in, &mut rng);
        let mut labeler = shared.clone();
        labeler.scale(spec.rho);
        labeler.add_scaled(1.0 - spec.rho, &private);
        let train = sample_split(
            SplitTag::Train,
            &name,
            &labeler,
            spec.n_train,
            derive_seed(spec.seed, &format!("train/{name}")),
        );
        let test = sample_split(
            SplitTag::Test,
            &name,
            &labeler,
            spec.n_test,
            derive_seed(spec.seed, &format!("test/{name}")),
        );
        tasks.push(TaskData {
            name,
            train,
            test,
            labeler,
        });
    }
    Ok(Suite {
        spec: spec.clone(),
        tasks,
    })
}
