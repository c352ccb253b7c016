//! Analytic-vs-finite-difference sweep over a grid of layer shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{AdapterKind, AdapterSpec, BaselineLayer};
use crate::error::Result;
use crate::grad::{backward, fd_oracle_extrapolated, max_relative_error, Perturb, Trainable};
use crate::harness::derive_seed;
use crate::linalg::Matrix;
use crate::moore::{MooreConfig, MooreLayer};

pub const GRAD_TOL: f64 = 1e-5;
/// Gram–Schmidt makes OMoE gradients noisier under finite differences.
pub const OMOE_GRAD_TOL: f64 = 1e-4;
const TASKS: usize = 3;
const TASK: usize = 1;

/// Worst relative error of one tensor over every configuration checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub model: String,
    pub tensor: String,
    pub configs: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradcheckRow {
    pub fn pass(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// MoORE shapes `(D, D_out, D_t, D_s, L)`. Cells with `D_out < D` have no
/// orthonormal `U` and are left out.
pub fn moore_grid() -> Vec<(usize, usize, usize, usize, usize)> {
    let mut out = Vec::new();
    for d in [4, 8, 16] {
        for d_out in [4, 12] {
            if d_out < d {
                continue;
            }
            for d_t in [1, 3] {
                for d_s in [1, 3] {
                    for l in [0, 2, 4] {
                        out.push((d, d_out, d_t, d_s, l));
                    }
                }
            }
        }
    }
    out
}

/// Baseline shapes `(D, D_out, M, r)`.
pub fn baseline_grid(kind: AdapterKind) -> Vec<(usize, usize, usize, usize)> {
    let ms: &[usize] = if kind == AdapterKind::LoRA { &[1] } else { &[2, 3] };
    let mut out = Vec::new();
    for d in [4, 8] {
        for d_out in [4, 12] {
            for &m in ms {
                for r in [1, 2] {
                    out.push((d, d_out, m, r));
                }
            }
        }
    }
    out
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn perturb_all<M: Trainable>(model: &mut M, rng: &mut ChaCha8Rng) -> Result<()> {
    for t in model.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    model.sync()
}

/// A MoORE layer with every learnable tensor moved off its init.
pub fn seeded_moore(d: usize, d_out: usize, d_t: usize, d_s: usize, l: usize, seed: u64) -> Result<MooreLayer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Matrix::random_uniform(d_out, d, -1.0, 1.0, &mut rng);
    let mut layer = MooreLayer::moeize(&w, MooreConfig { d_t, d_s, l, k: TASKS }, seed)?;
    perturb_all(&mut layer, &mut rng)?;
    Ok(layer)
}

pub fn seeded_baseline(kind: AdapterKind, d: usize, d_out: usize, m: usize, r: usize, seed: u64) -> Result<BaselineLayer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Matrix::random_uniform(d_out, d, -1.0, 1.0, &mut rng);
    let spec = AdapterSpec::init(kind, m, r, TASKS, d, d_out, seed)?;
    let mut layer = BaselineLayer::new(w, spec)?;
    perturb_all(&mut layer, &mut rng)?;
    Ok(layer)
}

/// Worst error per tensor family (`A0`, `A1` fold into `A`), first-seen order.
#[derive(Default)]
struct Acc {
    names: Vec<String>,
    worst: Vec<f64>,
    configs: usize,
}

impl Acc {
    fn record(&mut self, names: Vec<String>, errs: Vec<f64>) {
        for (name, e) in names.into_iter().zip(errs) {
            let family = name.trim_end_matches(|c: char| c.is_ascii_digit()).to_string();
            match self.names.iter().position(|n| *n == family) {
                Some(i) => self.worst[i] = self.worst[i].max(e),
                None => {
                    self.names.push(family);
                    self.worst.push(e);
                }
            }
        }
        self.configs += 1;
    }

    fn rows(self, model: &str, tol: f64) -> Vec<GradcheckRow> {
        let configs = self.configs;
        self.names
            .into_iter()
            .zip(self.worst)
            .map(|(tensor, max_rel_error)| GradcheckRow {
                model: model.to_string(),
                tensor,
                configs,
                max_rel_error,
                tolerance: tol,
            })
            .collect()
    }
}

/// Per-tensor errors of one model, input gradient last.
fn compare<M: Trainable>(
    model: &M,
    analytic: &[&Matrix],
    d_x: &[f64],
    x: &[f64],
    upstream: &[f64],
    step: f64,
) -> Result<(Vec<String>, Vec<f64>)> {
    let mut errs = Vec::new();
    for (i, a) in analytic.iter().enumerate() {
        let num = fd_oracle_extrapolated(model, x, TASK, upstream, Perturb::Tensor(i), step)?;
        errs.push(max_relative_error(a.data(), num.data()));
    }
    let num = fd_oracle_extrapolated(model, x, TASK, upstream, Perturb::Input, step)?;
    errs.push(max_relative_error(d_x, num.data()));
    let mut names = model.tensor_names();
    names.push("x".into());
    Ok((names, errs))
}

/// Runs the full sweep: MoORE over [`moore_grid`], every baseline kind over
/// [`baseline_grid`].
pub fn gradcheck_default_grid(seed: u64, step: f64) -> Result<Vec<GradcheckRow>> {
    let mut rows = Vec::new();
    let mut acc = Acc::default();
    for (i, &(d, d_out, d_t, d_s, l)) in moore_grid().iter().enumerate() {
        let s = derive_seed(seed, &format!("moore/{i}"));
        let layer = seeded_moore(d, d_out, d_t, d_s, l, s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 1);
        let x = random_vec(d, &mut rng);
        let up = random_vec(d_out, &mut rng);
        let g = backward(&layer, &x, TASK, &up)?;
        let (names, errs) = compare(&layer, &g.tensors(), &g.d_x, &x, &up, step)?;
        acc.record(names, errs);
    }
    rows.extend(acc.rows("MoORE", GRAD_TOL));

    for kind in AdapterKind::ALL {
        let mut acc = Acc::default();
        for (i, &(d, d_out, m, r)) in baseline_grid(kind).iter().enumerate() {
            let s = derive_seed(seed, &format!("{}/{i}", kind.name()));
            let layer = seeded_baseline(kind, d, d_out, m, r, s)?;
            let mut rng = ChaCha8Rng::seed_from_u64(s ^ 1);
            let x = random_vec(d, &mut rng);
            let up = random_vec(d_out, &mut rng);
            let g = layer.backward(&x, TASK, &up)?;
            let refs: Vec<&Matrix> = g.tensors.iter().collect();
            let (names, errs) = compare(&layer, &refs, &g.d_x, &x, &up, step)?;
            acc.record(names, errs);
        }
        let tol = if kind == AdapterKind::OMoE { OMOE_GRAD_TOL } else { GRAD_TOL };
        rows.extend(acc.rows(kind.name(), tol));
    }
    Ok(rows)
}
