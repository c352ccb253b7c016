//! The MoORE layer.
//!
//! `W` is factorized once (`U`, `σ`, `V` frozen); training only touches the
//! router `(T, P, Q, Γ)` and the Householder vectors `R`. Evaluation follows
//! the three-step schedule
//!
//! 1. `z = Vᵀ (H x)`
//! 2. `g = Pᵀ t_k + Qᵀ (Γ x)`
//! 3. `y = U ((g + σ) ⊙ z)`
//!
//! so no `D_out × D` matrix is ever formed.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MooreError, Result};
use crate::linalg::{norm2, record, svd, FlopCounter, HouseholderChain, Matrix, SvdFactors};

pub use checkpoint::{load_layer, read_layer, save_layer, write_layer};

/// Scale of the uniform init for task embeddings and Householder vectors.
pub const EMBED_INIT_SCALE: f64 = 0.02;

/// Router and adapter sizes chosen by the user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MooreConfig {
    pub d_t: usize,
    pub d_s: usize,
    pub l: usize,
    pub k: usize,
}

/// Every size a layer depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MooreDims {
    pub d_out: usize,
    pub d: usize,
    pub d_t: usize,
    pub d_s: usize,
    pub l: usize,
    pub k: usize,
}

/// Learnable-parameter totals, router and experts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub router: u64,
    pub experts: u64,
}

impl ParamCount {
    pub fn total(&self) -> u64 {
        self.router + self.experts
    }
}

impl MooreDims {
    /// Router `D_t·K + (D_t + 2·D_s)·D`, experts `L·D`.
    pub fn paramcount(&self) -> ParamCount {
        let (d, d_t, d_s, l, k) = (
            self.d as u64,
            self.d_t as u64,
            self.d_s as u64,
            self.l as u64,
            self.k as u64,
        );
        ParamCount {
            router: d_t * k + (d_t + 2 * d_s) * d,
            experts: l * d,
        }
    }

    /// Closed-form MACs of one forward pass.
    ///
    /// Unmerged: `2LD + D² + (D_t + 2D_s)D + D + D·D_out`. Merging drops the `2LD` term.
    pub fn forward_macs(&self, merged: bool) -> u64 {
        let (d, d_out, d_t, d_s, l) = (
            self.d as u64,
            self.d_out as u64,
            self.d_t as u64,
            self.d_s as u64,
            self.l as u64,
        );
        let adapter = if merged { 0 } else { 2 * l * d };
        adapter + d * d + (d_t + 2 * d_s) * d + d + d * d_out
    }
}

/// Per-expert weights `g` produced for one sample of task `task_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingWeights {
    pub g: Vec<f64>,
    pub task_id: usize,
}

/// The hybrid router `g(x, k) = Pᵀ t_k + Qᵀ (Γ x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Router {
    /// `D_t × K`, column `k` is the task embedding `t_k`.
    pub t: Matrix,
    /// `D_t × D`.
    pub p: Matrix,
    /// `D_s × D`.
    pub q: Matrix,
    /// `D_s × D`.
    pub gamma: Matrix,
}

impl Router {
    fn validate(&self, d: usize) -> Result<()> {
        let d_t = self.t.rows();
        let d_s = self.q.rows();
        if self.p.shape() != (d_t, d)
            || self.q.shape() != (d_s, d)
            || self.gamma.shape() != (d_s, d)
            || self.t.cols() == 0
            || d_t == 0
            || d_s == 0
        {
            return Err(MooreError::shape(
                "Router",
                format!("T {d_t}xK, P {d_t}x{d}, Q/Γ {d_s}x{d}"),
                format!(
                    "T {:?}, P {:?}, Q {:?}, Γ {:?}",
                    self.t.shape(),
                    self.p.shape(),
                    self.q.shape(),
                    self.gamma.shape()
                ),
            ));
        }
        for m in [&self.t, &self.p, &self.q, &self.gamma] {
            if !m.all_finite() {
                return Err(MooreError::NonFinite("Router"));
            }
        }
        Ok(())
    }

    pub fn task_count(&self) -> usize {
        self.t.cols()
    }

    pub(crate) fn check_task(&self, task_id: usize) -> Result<()> {
        if task_id >= self.task_count() {
            return Err(MooreError::TaskIndexOutOfRange {
                task: task_id,
                count: self.task_count(),
            });
        }
        Ok(())
    }

    pub fn task_embedding(&self, task_id: usize) -> Result<Vec<f64>> {
        self.check_task(task_id)?;
        Ok(self.t.col(task_id))
    }

    /// MACs: `D_t·D + 2·D_s·D` (reading `t_k` is free).
    pub fn route(&self, x: &[f64], task_id: usize, counter: Option<&FlopCounter>) -> Result<RoutingWeights> {
        let t_k = self.task_embedding(task_id)?;
        let mut g = self.p.tr_matvec(&t_k, counter)?;
        let a = self.gamma.matvec(x, counter)?;
        let sample = self.q.tr_matvec(&a, counter)?;
        for (gi, si) in g.iter_mut().zip(&sample) {
            *gi += si;
        }
        Ok(RoutingWeights { g, task_id })
    }

    fn entry_count(&self) -> u64 {
        (self.t.len() + self.p.len() + self.q.len() + self.gamma.len()) as u64
    }
}

/// Initial router and Householder chain of a `d`-wide layer, drawn exactly
/// as [`MooreLayer::moeize`] draws them.
pub fn init_adapter(d: usize, config: MooreConfig, seed: u64) -> Result<(Router, HouseholderChain)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Matrix::random_uniform(config.d_t, config.k, -EMBED_INIT_SCALE, EMBED_INIT_SCALE, &mut rng);
    let bound = 1.0 / (d as f64).sqrt();
    let gamma = Matrix::random_uniform(config.d_s, d, -bound, bound, &mut rng);
    let chain = HouseholderChain::paired(d, config.l, EMBED_INIT_SCALE, &mut rng)?;
    let router = Router {
        t,
        p: Matrix::zeros(config.d_t, d),
        q: Matrix::zeros(config.d_s, d),
        gamma,
    };
    Ok((router, chain))
}

/// Entry totals of learnable tensors held in memory.
pub fn materialized_count(router: &Router, chain: &HouseholderChain) -> ParamCount {
    ParamCount {
        router: router.entry_count(),
        experts: chain.r().len() as u64,
    }
}

/// Frozen SVD factors of `W` plus the learnable router and Householder adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct MooreLayer {
    factors: SvdFactors,
    router: Router,
    chain: HouseholderChain,
}

impl MooreLayer {
    /// MoE-izes `w`: factorizes it and initializes the learnable parts so the
    /// layer computes `W x` for every task.
    ///
    /// `P = Q = 0` makes `g ≡ 0`; the reflection vectors come in equal pairs
    /// so `H = I`. `T` and `Γ` are random so gradients are non-trivial from
    /// the first step.
    pub fn moeize(w: &Matrix, config: MooreConfig, seed: u64) -> Result<Self> {
        if !config.l.is_multiple_of(2) {
            return Err(MooreError::OddL(config.l));
        }
        if config.d_t == 0 || config.d_s == 0 || config.k == 0 {
            return Err(MooreError::InvalidSpec(format!(
                "D_t, D_s and K must be at least 1 (got {config:?})"
            )));
        }
        let factors = svd(w)?;
        let (router, chain) = init_adapter(factors.dim(), config, seed)?;
        Ok(Self {
            factors,
            router,
            chain,
        })
    }

    /// Assembles a layer from explicit parts, validating every shape and the
    /// factor invariants.
    pub fn from_parts(factors: SvdFactors, router: Router, chain: HouseholderChain) -> Result<Self> {
        factors.validate()?;
        let d = factors.dim();
        router.validate(d)?;
        if chain.dim() != d {
            return Err(MooreError::shape("MooreLayer chain", d, chain.dim()));
        }
        if !chain.len().is_multiple_of(2) {
            return Err(MooreError::OddL(chain.len()));
        }
        Ok(Self {
            factors,
            router,
            chain,
        })
    }

    pub fn dims(&self) -> MooreDims {
        MooreDims {
            d_out: self.factors.out_dim(),
            d: self.factors.dim(),
            d_t: self.router.t.rows(),
            d_s: self.router.q.rows(),
            l: self.chain.len(),
            k: self.router.task_count(),
        }
    }

    pub fn factors(&self) -> &SvdFactors {
        &self.factors
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn chain(&self) -> &HouseholderChain {
        &self.chain
    }

    /// Mutable access to the learnable tensors in the order `[T, P, Q, Γ, R]`.
    ///
    /// Call [`sync`](Self::sync) afterwards so the chain's cached norms and
    /// the norm floor are re-checked.
    pub fn learnable_mut(&mut self) -> [&mut Matrix; 5] {
        let Router { t, p, q, gamma } = &mut self.router;
        [t, p, q, gamma, self.chain.r_mut()]
    }

    pub fn learnable(&self) -> [&Matrix; 5] {
        [
            &self.router.t,
            &self.router.p,
            &self.router.q,
            &self.router.gamma,
            self.chain.r(),
        ]
    }

    pub fn sync(&mut self) -> Result<()> {
        self.router.validate(self.factors.dim())?;
        self.chain.refresh()
    }

    pub fn route(&self, x: &[f64], task_id: usize, counter: Option<&FlopCounter>) -> Result<RoutingWeights> {
        self.check_input(x)?;
        self.router.route(x, task_id, counter)
    }

    /// Three-step evaluation; MAC count equals [`MooreDims::forward_macs`]`(false)`.
    pub fn forward(&self, x: &[f64], task_id: usize, counter: Option<&FlopCounter>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.router.check_task(task_id)?;
        let hx = self.chain.apply(x, counter)?;
        let z = self.factors.v.tr_matvec(&hx, counter)?;
        let g = self.router.route(x, task_id, counter)?.g;
        scale_and_expand(&self.factors, &g, &z, counter)
    }

    /// Reference evaluation of `W H x + Σ_d g_d (u_d v_dᵀ H) x` with every
    /// rank-one expert materialized. Slow; meant as an oracle.
    pub fn forward_expert_sum(&self, x: &[f64], task_id: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let g = self.router.route(x, task_id, None)?.g;
        let h = self.chain.matrix();
        let wh = self.factors.reconstruct().matmul(&h, None)?;
        let mut y = wh.matvec(x, None)?;
        for (d, gd) in g.iter().enumerate() {
            let e = self.expert_from(&h, d);
            let ex = e.matvec(x, None)?;
            for (yi, ei) in y.iter_mut().zip(&ex) {
                *yi += gd * ei;
            }
        }
        Ok(y)
    }

    /// The `d`-th expert `u_d v_dᵀ H` as a dense `D_out × D` matrix.
    pub fn expert(&self, d: usize) -> Result<Matrix> {
        let dim = self.factors.dim();
        if d >= dim {
            return Err(MooreError::IndexOutOfRange { index: d, len: dim });
        }
        let hv = self.chain.apply_transpose(&self.factors.v.col(d), None)?;
        Ok(Matrix::outer(&self.factors.u.col(d), &hv))
    }

    fn expert_from(&self, h: &Matrix, d: usize) -> Matrix {
        let v_d = self.factors.v.col(d);
        let vh = h.tr_matvec(&v_d, None).expect("square H");
        Matrix::outer(&self.factors.u.col(d), &vh)
    }

    /// Folds `H` into the right factor: `V' = Vᵀ H`.
    pub fn merge(&self) -> MergedLayer {
        let vt = self.factors.v.transpose();
        let vprime_t = if self.chain.is_empty() {
            vt
        } else {
            vt.matmul(&self.chain.matrix(), None).expect("square")
        };
        MergedLayer {
            u: self.factors.u.clone(),
            sigma: self.factors.sigma.clone(),
            vprime_t,
            router: self.router.clone(),
        }
    }

    pub fn paramcount(&self) -> ParamCount {
        self.dims().paramcount()
    }

    /// Entry totals of the tensors actually held, for auditing [`paramcount`](Self::paramcount).
    pub fn materialized_paramcount(&self) -> ParamCount {
        materialized_count(&self.router, &self.chain)
    }

    pub fn flopcount(&self, merged: bool) -> u64 {
        self.dims().forward_macs(merged)
    }

    /// `‖(I − U Uᵀ) y‖ / ‖y‖`, how far `y` leaves the column space of `W`.
    pub fn range_residual(&self, y: &[f64]) -> Result<f64> {
        range_residual(&self.factors.u, y)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.factors.dim() {
            return Err(MooreError::shape("MooreLayer input", self.factors.dim(), x.len()));
        }
        Ok(())
    }
}

/// Step 3: `y = U ((g + σ) ⊙ z)`; `D` MACs for the scale, `D_out·D` for `U`.
fn scale_and_expand(
    factors: &SvdFactors,
    g: &[f64],
    z: &[f64],
    counter: Option<&FlopCounter>,
) -> Result<Vec<f64>> {
    let w: Vec<f64> = g
        .iter()
        .zip(&factors.sigma)
        .zip(z)
        .map(|((gi, si), zi)| (gi + si) * zi)
        .collect();
    record(counter, w.len());
    factors.u.matvec(&w, counter)
}

pub(crate) fn range_residual(u: &Matrix, y: &[f64]) -> Result<f64> {
    let coeff = u.tr_matvec(y, None)?;
    let proj = u.matvec(&coeff, None)?;
    let resid: Vec<f64> = y.iter().zip(&proj).map(|(a, b)| a - b).collect();
    let ny = norm2(y);
    if ny == 0.0 {
        return Ok(0.0);
    }
    Ok(norm2(&resid) / ny)
}

/// A layer with `H` folded into the right factor for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedLayer {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    /// `Vᵀ H`.
    pub vprime_t: Matrix,
    pub router: Router,
}

impl MergedLayer {
    /// Same schedule with step 1 replaced by `V' x`; MACs equal
    /// [`MooreDims::forward_macs`]`(true)`.
    pub fn forward(&self, x: &[f64], task_id: usize, counter: Option<&FlopCounter>) -> Result<Vec<f64>> {
        if x.len() != self.vprime_t.cols() {
            return Err(MooreError::shape("MergedLayer input", self.vprime_t.cols(), x.len()));
        }
        self.router.check_task(task_id)?;
        let z = self.vprime_t.matvec(x, counter)?;
        let g = self.router.route(x, task_id, counter)?.g;
        let w: Vec<f64> = g
            .iter()
            .zip(&self.sigma)
            .zip(&z)
            .map(|((gi, si), zi)| (gi + si) * zi)
            .collect();
        record(counter, w.len());
        self.u.matvec(&w, counter)
    }

    pub fn dims(&self) -> MooreDims {
        MooreDims {
            d_out: self.u.rows(),
            d: self.sigma.len(),
            d_t: self.router.t.rows(),
            d_s: self.router.q.rows(),
            l: 0,
            k: self.router.task_count(),
        }
    }

    pub fn flopcount(&self) -> u64 {
        self.dims().forward_macs(true)
    }

    /// `V'ᵀ V'` deviation from the identity.
    pub fn orthogonality_error(&self) -> f64 {
        self.vprime_t.transpose().orthonormality_error()
    }

    /// Re-reads the merged layer as an ordinary `L = 0` layer whose right
    /// factor is `V'ᵀ = Hᵀ V`. Both evaluate identically.
    pub fn into_layer(self) -> Result<MooreLayer> {
        let d = self.sigma.len();
        let factors = SvdFactors {
            u: self.u,
            sigma: self.sigma,
            v: self.vprime_t.transpose(),
        };
        MooreLayer::from_parts(factors, self.router, HouseholderChain::identity(d))
    }
}

/// `Σ_d σ_d · expert(d)`, useful for checking that `H = I` experts rebuild `W`.
pub fn weighted_expert_sum(layer: &MooreLayer) -> Result<Matrix> {
    let dims = layer.dims();
    let mut acc = Matrix::zeros(dims.d_out, dims.d);
    for d in 0..dims.d {
        acc.add_scaled(layer.factors.sigma[d], &layer.expert(d)?);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tall(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::random_uniform(rows, cols, -1.0, 1.0, &mut rng)
    }

    fn perturbed(rows: usize, cols: usize, cfg: MooreConfig, seed: u64) -> MooreLayer {
        let mut layer = MooreLayer::moeize(&random_tall(rows, cols, seed), cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        for m in layer.learnable_mut() {
            for v in m.data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        layer.sync().unwrap();
        layer
    }

    #[test]
    fn init_is_identity_map() {
        let w = random_tall(7, 5, 1);
        let layer = MooreLayer::moeize(&w, MooreConfig { d_t: 3, d_s: 2, l: 4, k: 3 }, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 0..3 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = layer.forward(&x, k, None).unwrap();
            let wx = w.matvec(&x, None).unwrap();
            assert!(crate::linalg::max_abs_diff(&y, &wx) < 1e-10);
        }
    }

    #[test]
    fn diag_layer() {
        let layer = MooreLayer::moeize(
            &Matrix::from_diag(&[3.0, 2.0]),
            MooreConfig { d_t: 1, d_s: 1, l: 0, k: 1 },
            0,
        )
        .unwrap();
        assert_eq!(layer.factors().sigma, vec![3.0, 2.0]);
        assert_eq!(layer.factors().u, Matrix::identity(2));
        assert_eq!(layer.factors().v, Matrix::identity(2));
        let e0 = layer.expert(0).unwrap();
        assert_eq!(e0, Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]));
        assert!(matches!(layer.expert(2), Err(MooreError::IndexOutOfRange { .. })));
    }

    #[test]
    fn odd_l_and_bad_task() {
        let w = random_tall(4, 3, 0);
        assert!(matches!(
            MooreLayer::moeize(&w, MooreConfig { d_t: 1, d_s: 1, l: 3, k: 1 }, 0),
            Err(MooreError::OddL(3))
        ));
        let layer = MooreLayer::moeize(&w, MooreConfig { d_t: 1, d_s: 1, l: 2, k: 2 }, 0).unwrap();
        assert!(matches!(
            layer.forward(&[0.0; 3], 2, None),
            Err(MooreError::TaskIndexOutOfRange { task: 2, count: 2 })
        ));
        assert!(layer.forward(&[0.0; 4], 0, None).is_err());
    }

    #[test]
    fn hand_routed_example() {
        let factors = svd(&Matrix::identity(2)).unwrap();
        let router = Router {
            t: Matrix::from_rows(&[&[2.0]]),
            p: Matrix::from_rows(&[&[1.0, 0.0]]),
            q: Matrix::from_rows(&[&[0.0, 1.0]]),
            gamma: Matrix::from_rows(&[&[1.0, 1.0]]),
        };
        let layer = MooreLayer::from_parts(factors, router, HouseholderChain::identity(2)).unwrap();
        let g = layer.route(&[1.0, 1.0], 0, None).unwrap();
        assert_eq!(g.g, vec![2.0, 2.0]);
    }

    #[test]
    fn zero_router_routes_zero() {
        let factors = svd(&Matrix::identity(3)).unwrap();
        let router = Router {
            t: Matrix::zeros(2, 1),
            p: Matrix::from_fn(2, 3, |i, j| (i + j) as f64),
            q: Matrix::from_fn(1, 3, |_, j| j as f64),
            gamma: Matrix::from_fn(1, 3, |_, j| 1.0 + j as f64),
        };
        let layer = MooreLayer::from_parts(factors, router, HouseholderChain::identity(3)).unwrap();
        assert_eq!(layer.route(&[0.0; 3], 0, None).unwrap().g, vec![0.0; 3]);
    }

    #[test]
    fn forward_matches_expert_sum() {
        let layer = perturbed(10, 8, MooreConfig { d_t: 3, d_s: 2, l: 4, k: 2 }, 17);
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        for k in 0..2 {
            let a = layer.forward(&x, k, None).unwrap();
            let b = layer.forward_expert_sum(&x, k).unwrap();
            assert!(crate::linalg::max_abs_diff(&a, &b) < 1e-12);
        }
    }

    #[test]
    fn merge_with_empty_chain_is_vt() {
        let layer = MooreLayer::moeize(&random_tall(5, 4, 3), MooreConfig { d_t: 2, d_s: 2, l: 0, k: 1 }, 0).unwrap();
        let merged = layer.merge();
        assert_eq!(merged.vprime_t, layer.factors().v.transpose());
        let paired = MooreLayer::moeize(&random_tall(5, 4, 3), MooreConfig { d_t: 2, d_s: 2, l: 2, k: 1 }, 0).unwrap();
        assert!(paired.merge().vprime_t.max_abs_diff(&paired.factors().v.transpose()) < 1e-12);
    }

    #[test]
    fn merged_forward_and_macs() {
        let layer = perturbed(9, 6, MooreConfig { d_t: 2, d_s: 3, l: 2, k: 3 }, 5);
        let merged = layer.merge();
        assert!(merged.orthogonality_error() < 1e-10);
        let x = [0.3, -0.1, 0.8, 0.0, -1.0, 0.5];
        let c = FlopCounter::new();
        let a = layer.forward(&x, 1, Some(&c)).unwrap();
        assert_eq!(c.mac_count(), layer.flopcount(false));
        c.reset();
        let b = merged.forward(&x, 1, Some(&c)).unwrap();
        assert_eq!(c.mac_count(), layer.flopcount(true));
        assert!(crate::linalg::max_abs_diff(&a, &b) < 1e-10);
        let as_layer = merged.into_layer().unwrap();
        let c2 = as_layer.forward(&x, 1, None).unwrap();
        assert!(crate::linalg::max_abs_diff(&a, &c2) < 1e-10);
    }

    #[test]
    fn step_one_cost_at_paper_width() {
        let dims = MooreDims { d_out: 128, d: 128, d_t: 1, d_s: 1, l: 8, k: 1 };
        assert_eq!(2 * 8 * 128 + 128 * 128, 18432);
        assert_eq!(dims.forward_macs(false) - dims.forward_macs(true), 2 * 8 * 128);
    }

    #[test]
    fn paramcount_examples() {
        let dims = MooreDims { d_out: 16, d: 16, d_t: 4, d_s: 2, l: 2, k: 3 };
        assert_eq!(dims.paramcount(), ParamCount { router: 140, experts: 32 });
        let dims = MooreDims { l: 0, ..dims };
        assert_eq!(dims.paramcount().experts, 0);
        let layer = perturbed(16, 16, MooreConfig { d_t: 4, d_s: 2, l: 2, k: 3 }, 1);
        assert_eq!(layer.paramcount(), layer.materialized_paramcount());
    }

    #[test]
    fn range_residual_zero_for_outputs() {
        let layer = perturbed(12, 5, MooreConfig { d_t: 2, d_s: 2, l: 2, k: 1 }, 8);
        let y = layer.forward(&[1.0, 2.0, -1.0, 0.5, 0.0], 0, None).unwrap();
        assert!(layer.range_residual(&y).unwrap() < 1e-12);
        let mut off = vec![0.0; 12];
        off[0] = 1.0;
        // a random direction in R^12 mostly leaves a 5-dim subspace
        assert!(layer.range_residual(&off).unwrap() > 1e-3);
    }
}
