//! Low-rank mixture-of-adapters baselines.
//!
//! Every kind evaluates `y = W x + Σ_m g_m · δ_m(x)` with a rank-`r` expert
//! delta `δ_m`; kinds differ in which factors are shared and how `g` is
//! produced:
//!
//! | kind      | router                     | expert `δ_m`              |
//! |-----------|----------------------------|---------------------------|
//! | LoRA      | none (`g = [1]`)           | `B A x`                   |
//! | LoRAMoE   | `softmax(S x)`             | `B_m A_m x`               |
//! | MixLoRA   | `top2(softmax(S x))`       | `B_m A_m x`               |
//! | MoSLD     | `softmax(S x)`             | `B A_m x`                 |
//! | HydraLoRA | `softmax(S x)`             | `B_m A x`                 |
//! | MTL-LoRA  | `softmax(φ_k)`             | `B_m Λ_k A x`             |
//! | OMoE      | `softmax(S x)`             | `GS(B_m A_m x)`           |
//!
//! Adapter scale is fixed to 1. `A` starts `uniform(±1/√D)` and `B` at zero,
//! so every kind starts as the frozen layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MooreError, Result};
use crate::grad::Trainable;
use crate::linalg::{dot, record, FlopCounter, Matrix};
use crate::moore::ParamCount;

/// Residual norm under which a Gram–Schmidt vector is dropped.
pub const GS_DEGENERATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AdapterKind {
    LoRA,
    LoRAMoE,
    MixLoRA,
    MoSLD,
    HydraLoRA,
    #[serde(rename = "MTL_LoRA", alias = "MTL-LoRA")]
    MtlLoRA,
    OMoE,
}

impl AdapterKind {
    pub const ALL: [AdapterKind; 7] = [
        AdapterKind::LoRA,
        AdapterKind::LoRAMoE,
        AdapterKind::MixLoRA,
        AdapterKind::MoSLD,
        AdapterKind::HydraLoRA,
        AdapterKind::MtlLoRA,
        AdapterKind::OMoE,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AdapterKind::LoRA => "LoRA",
            AdapterKind::LoRAMoE => "LoRAMoE",
            AdapterKind::MixLoRA => "MixLoRA",
            AdapterKind::MoSLD => "MoSLD",
            AdapterKind::HydraLoRA => "HydraLoRA",
            AdapterKind::MtlLoRA => "MTL_LoRA",
            AdapterKind::OMoE => "OMoE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("MTL-LoRA") && *k == AdapterKind::MtlLoRA))
    }

    fn shares_a(&self) -> bool {
        matches!(self, AdapterKind::HydraLoRA | AdapterKind::MtlLoRA)
    }

    fn shares_b(&self) -> bool {
        matches!(self, AdapterKind::MoSLD)
    }

    fn sample_routed(&self) -> bool {
        !matches!(self, AdapterKind::LoRA | AdapterKind::MtlLoRA)
    }
}

/// A baseline adapter: kind, sizes and every learnable tensor.
///
/// `router` is `S` (`M × D`) for sample-routed kinds, `φ` (`M × K`) for
/// MTL-LoRA and empty for LoRA. `a`/`b` hold one matrix per expert, or a
/// single shared one. `lambda` holds the `K` task matrices of MTL-LoRA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSpec {
    pub kind: AdapterKind,
    pub m: usize,
    pub r: usize,
    pub k: usize,
    pub d: usize,
    pub d_out: usize,
    pub router: Matrix,
    pub a: Vec<Matrix>,
    pub b: Vec<Matrix>,
    pub lambda: Vec<Matrix>,
    /// MixLoRA only: rescale the two surviving weights to sum to one.
    #[serde(default)]
    pub renormalize_top2: bool,
}

impl AdapterSpec {
    /// Fresh adapter with zero `B`, so the wrapped layer is unchanged.
    pub fn init(kind: AdapterKind, m: usize, r: usize, k: usize, d: usize, d_out: usize, seed: u64) -> Result<Self> {
        if r == 0 || m == 0 || d == 0 || d_out == 0 {
            return Err(MooreError::InvalidSpec("M, r, D and D_out must be at least 1".into()));
        }
        if kind == AdapterKind::LoRA && m != 1 {
            return Err(MooreError::InvalidSpec(format!("LoRA has exactly one expert, got M={m}")));
        }
        if kind == AdapterKind::MtlLoRA && k == 0 {
            return Err(MooreError::InvalidSpec("MTL-LoRA needs K >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d as f64).sqrt();
        let n_a = if kind.shares_a() { 1 } else { m };
        let n_b = if kind.shares_b() { 1 } else { m };
        let a = (0..n_a)
            .map(|_| Matrix::random_uniform(r, d, -bound, bound, &mut rng))
            .collect();
        let b = (0..n_b).map(|_| Matrix::zeros(d_out, r)).collect();
        let router = if kind.sample_routed() {
            Matrix::random_uniform(m, d, -bound, bound, &mut rng)
        } else if kind == AdapterKind::MtlLoRA {
            Matrix::zeros(m, k)
        } else {
            Matrix::zeros(0, 0)
        };
        let lambda = if kind == AdapterKind::MtlLoRA {
            (0..k).map(|_| Matrix::identity(r)).collect()
        } else {
            Vec::new()
        };
        let spec = Self {
            kind,
            m,
            r,
            k: if kind == AdapterKind::MtlLoRA { k } else { 0 },
            d,
            d_out,
            router,
            a,
            b,
            lambda,
            renormalize_top2: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        let (m, r, d, d_out) = (self.m, self.r, self.d, self.d_out);
        let bad = |what: &str| Err(MooreError::InvalidSpec(format!("{}: {what}", kind.name())));
        if r == 0 || m == 0 {
            return bad("M and r must be at least 1");
        }
        let n_a = if kind.shares_a() { 1 } else { m };
        let n_b = if kind.shares_b() { 1 } else { m };
        if self.a.len() != n_a || self.a.iter().any(|a| a.shape() != (r, d)) {
            return bad("A factors have the wrong count or shape");
        }
        if self.b.len() != n_b || self.b.iter().any(|b| b.shape() != (d_out, r)) {
            return bad("B factors have the wrong count or shape");
        }
        let router_shape = if kind.sample_routed() {
            (m, d)
        } else if kind == AdapterKind::MtlLoRA {
            (m, self.k)
        } else {
            (0, 0)
        };
        if self.router.shape() != router_shape {
            return bad("router has the wrong shape");
        }
        let n_lambda = if kind == AdapterKind::MtlLoRA { self.k } else { 0 };
        if self.lambda.len() != n_lambda || self.lambda.iter().any(|l| l.shape() != (r, r)) {
            return bad("task matrices have the wrong count or shape");
        }
        if kind == AdapterKind::LoRA && m != 1 {
            return bad("LoRA has exactly one expert");
        }
        if self.tensors().iter().any(|t| !t.all_finite()) {
            return Err(MooreError::NonFinite("AdapterSpec"));
        }
        Ok(())
    }

    fn a_of(&self, e: usize) -> &Matrix {
        &self.a[if self.kind.shares_a() { 0 } else { e }]
    }

    fn b_of(&self, e: usize) -> &Matrix {
        &self.b[if self.kind.shares_b() { 0 } else { e }]
    }

    fn a_index(&self, e: usize) -> usize {
        if self.kind.shares_a() {
            0
        } else {
            e
        }
    }

    fn b_index(&self, e: usize) -> usize {
        if self.kind.shares_b() {
            0
        } else {
            e
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.router];
        out.extend(self.a.iter());
        out.extend(self.b.iter());
        out.extend(self.lambda.iter());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.router];
        out.extend(self.a.iter_mut());
        out.extend(self.b.iter_mut());
        out.extend(self.lambda.iter_mut());
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec![if self.kind == AdapterKind::MtlLoRA { "phi".to_string() } else { "S".to_string() }];
        out.extend((0..self.a.len()).map(|i| format!("A{i}")));
        out.extend((0..self.b.len()).map(|i| format!("B{i}")));
        out.extend((0..self.lambda.len()).map(|i| format!("Lambda{i}")));
        out
    }
}

/// Closed-form learnable-parameter counts.
pub fn baseline_paramcount(spec: &AdapterSpec) -> ParamCount {
    let (m, r, k, d, d_out) = (
        spec.m as u64,
        spec.r as u64,
        spec.k as u64,
        spec.d as u64,
        spec.d_out as u64,
    );
    let (router, experts) = match spec.kind {
        AdapterKind::LoRA => (0, (d_out + d) * r),
        AdapterKind::LoRAMoE | AdapterKind::MixLoRA | AdapterKind::OMoE => (m * d, m * (d_out + d) * r),
        AdapterKind::MoSLD => (m * d, (d_out + m * d) * r),
        AdapterKind::HydraLoRA => (m * d, (m * d_out + d) * r),
        AdapterKind::MtlLoRA => (m * k, (m * d_out + k * r + d) * r),
    };
    ParamCount { router, experts }
}

/// Entry totals of the tensors actually held by `spec`.
pub fn materialized_paramcount(spec: &AdapterSpec) -> ParamCount {
    let experts = spec.a.iter().chain(&spec.b).chain(&spec.lambda).map(|t| t.len() as u64).sum();
    ParamCount {
        router: spec.router.len() as u64,
        experts,
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Indices of the `min(2, len)` largest weights, ties to the lower index.
pub fn top2_indices(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&i, &j| p[j].total_cmp(&p[i]).then(i.cmp(&j)));
    idx.truncate(2);
    idx.sort_unstable();
    idx
}

/// Result of the orthogonalization step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GramSchmidt {
    /// Orthogonalized vectors; dropped (degenerate) ones are zero.
    pub vectors: Vec<Vec<f64>>,
    pub degenerate: Vec<bool>,
    norms_sq: Vec<f64>,
    /// `steps[m]` lists `(j, c, v_before)` for each projection applied to vector `m`.
    steps: Vec<Vec<(usize, f64, Vec<f64>)>>,
}

impl GramSchmidt {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|d| **d).count()
    }
}

/// Modified Gram–Schmidt without normalization: each vector keeps its
/// component orthogonal to the earlier survivors. A residual with norm below
/// [`GS_DEGENERATE_TOL`] is replaced by zero and skipped afterwards.
///
/// MACs: `2·D_out` per projection plus `D_out` per norm, i.e. exactly
/// `D_out·M²` when nothing degenerates.
pub fn gram_schmidt(vectors: &[Vec<f64>], counter: Option<&FlopCounter>) -> GramSchmidt {
    let m = vectors.len();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut degenerate = Vec::with_capacity(m);
    let mut norms_sq = Vec::with_capacity(m);
    let mut steps = Vec::with_capacity(m);
    for e in vectors {
        let n_out = e.len();
        let mut v = e.clone();
        let mut my_steps = Vec::new();
        for j in 0..out.len() {
            if degenerate[j] {
                continue;
            }
            let c = dot(&out[j], &v) / norms_sq[j];
            let before = v.clone();
            for (vi, oj) in v.iter_mut().zip(&out[j]) {
                *vi -= c * oj;
            }
            record(counter, 2 * n_out);
            my_steps.push((j, c, before));
        }
        let n2 = dot(&v, &v);
        record(counter, n_out);
        if n2.sqrt() < GS_DEGENERATE_TOL {
            degenerate.push(true);
            norms_sq.push(0.0);
            out.push(vec![0.0; n_out]);
        } else {
            degenerate.push(false);
            norms_sq.push(n2);
            out.push(v);
        }
        steps.push(my_steps);
    }
    GramSchmidt {
        vectors: out,
        degenerate,
        norms_sq,
        steps,
    }
}

/// Given gradients w.r.t. the orthogonalized vectors, returns gradients
/// w.r.t. the inputs. Dropped vectors pass no gradient.
fn gram_schmidt_backward(gs: &GramSchmidt, mut d_out: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let m = gs.vectors.len();
    let mut d_in = vec![Vec::new(); m];
    for e in (0..m).rev() {
        let len = gs.vectors[e].len();
        if gs.degenerate[e] {
            d_in[e] = vec![0.0; len];
            continue;
        }
        let mut g = std::mem::take(&mut d_out[e]);
        for (j, c, before) in gs.steps[e].iter().rev() {
            let q = &gs.vectors[*j];
            let n = gs.norms_sq[*j];
            let qg = dot(q, &g);
            let dq = &mut d_out[*j];
            for i in 0..len {
                dq[i] += -c * g[i] - qg / n * before[i] + 2.0 * c * qg / n * q[i];
            }
            for (gi, qi) in g.iter_mut().zip(q) {
                *gi -= qg / n * qi;
            }
        }
        d_in[e] = g;
    }
    d_in
}

/// Intermediates of one baseline forward pass.
#[derive(Debug, Clone)]
pub struct BaselineTrace {
    pub output: Vec<f64>,
    /// Final per-expert weights.
    pub gates: Vec<f64>,
    /// Softmax probabilities before top-2 selection (empty for LoRA).
    pub probs: Vec<f64>,
    /// `A_m x`.
    ax: Vec<Vec<f64>>,
    /// `Λ_k A x` for MTL-LoRA; equal to `ax` otherwise.
    hx: Vec<Vec<f64>>,
    /// Expert outputs before orthogonalization.
    experts: Vec<Vec<f64>>,
    gs: Option<GramSchmidt>,
    selected: Vec<usize>,
}

impl BaselineTrace {
    /// Number of expert outputs dropped by Gram–Schmidt (OMoE only).
    pub fn degenerate_gs(&self) -> usize {
        self.gs.as_ref().map_or(0, |g| g.degenerate_count())
    }
}

/// `W x + Σ_m g_m δ_m(x)` for the given adapter.
pub fn baseline_forward(spec: &AdapterSpec, w: &Matrix, x: &[f64], task_id: usize) -> Result<Vec<f64>> {
    Ok(baseline_trace(spec, w, x, task_id, None)?.output)
}

/// Forward pass keeping every intermediate (and counting MACs if asked).
pub fn baseline_trace(
    spec: &AdapterSpec,
    w: &Matrix,
    x: &[f64],
    task_id: usize,
    counter: Option<&FlopCounter>,
) -> Result<BaselineTrace> {
    if w.shape() != (spec.d_out, spec.d) {
        return Err(MooreError::shape(
            "baseline W",
            format!("{}x{}", spec.d_out, spec.d),
            format!("{:?}", w.shape()),
        ));
    }
    if x.len() != spec.d {
        return Err(MooreError::shape("baseline input", spec.d, x.len()));
    }
    if spec.kind == AdapterKind::MtlLoRA && task_id >= spec.k {
        return Err(MooreError::TaskIndexOutOfRange {
            task: task_id,
            count: spec.k,
        });
    }
    let m = spec.m;

    let (probs, gates, selected) = match spec.kind {
        AdapterKind::LoRA => (Vec::new(), vec![1.0], vec![0]),
        AdapterKind::MtlLoRA => {
            let p = softmax(&spec.router.col(task_id));
            (p.clone(), p, (0..m).collect())
        }
        kind => {
            let p = softmax(&spec.router.matvec(x, counter)?);
            if kind == AdapterKind::MixLoRA {
                let sel = top2_indices(&p);
                let mut g = vec![0.0; m];
                let total: f64 = sel.iter().map(|&i| p[i]).sum();
                for &i in &sel {
                    g[i] = if spec.renormalize_top2 { p[i] / total } else { p[i] };
                }
                (p, g, sel)
            } else {
                (p.clone(), p, (0..m).collect())
            }
        }
    };

    let mut ax = vec![Vec::new(); m];
    let mut hx = vec![Vec::new(); m];
    let mut experts = vec![vec![0.0; spec.d_out]; m];
    let shared_a = if spec.kind.shares_a() {
        Some(spec.a[0].matvec(x, counter)?)
    } else {
        None
    };
    let shared_h = match (&shared_a, spec.kind) {
        (Some(a), AdapterKind::MtlLoRA) => Some(spec.lambda[task_id].matvec(a, counter)?),
        (Some(a), _) => Some(a.clone()),
        _ => None,
    };
    // OMoE orthogonalizes every expert; others only evaluate selected ones.
    let active: Vec<usize> = if spec.kind == AdapterKind::OMoE { (0..m).collect() } else { selected.clone() };
    for &e in &active {
        let a_e = match &shared_a {
            Some(a) => a.clone(),
            None => spec.a_of(e).matvec(x, counter)?,
        };
        let h_e = match &shared_h {
            Some(h) => h.clone(),
            None => a_e.clone(),
        };
        experts[e] = spec.b_of(e).matvec(&h_e, counter)?;
        ax[e] = a_e;
        hx[e] = h_e;
    }

    let gs = if spec.kind == AdapterKind::OMoE {
        Some(gram_schmidt(&experts, counter))
    } else {
        None
    };
    let mixed: &Vec<Vec<f64>> = gs.as_ref().map_or(&experts, |g| &g.vectors);

    let mut y = w.matvec(x, counter)?;
    for &e in &active {
        if gates[e] == 0.0 {
            continue;
        }
        for (yi, di) in y.iter_mut().zip(&mixed[e]) {
            *yi += gates[e] * di;
        }
        record(counter, spec.d_out);
    }
    Ok(BaselineTrace {
        output: y,
        gates,
        probs,
        ax,
        hx,
        experts,
        gs,
        selected,
    })
}

/// Gradients for every tensor of an [`AdapterSpec`], in
/// [`AdapterSpec::tensors`] order, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGradients {
    pub tensors: Vec<Matrix>,
    pub d_x: Vec<f64>,
}

/// Gradients of `upstreamᵀ · baseline_forward(spec, w, x, task_id)`.
pub fn baseline_backward(
    spec: &AdapterSpec,
    w: &Matrix,
    x: &[f64],
    task_id: usize,
    upstream: &[f64],
) -> Result<AdapterGradients> {
    if upstream.len() != spec.d_out {
        return Err(MooreError::shape("baseline upstream", spec.d_out, upstream.len()));
    }
    let tr = baseline_trace(spec, w, x, task_id, None)?;
    let m = spec.m;
    let mut d_router = Matrix::zeros(spec.router.rows(), spec.router.cols());
    let mut d_a: Vec<Matrix> = spec.a.iter().map(|a| Matrix::zeros(a.rows(), a.cols())).collect();
    let mut d_b: Vec<Matrix> = spec.b.iter().map(|b| Matrix::zeros(b.rows(), b.cols())).collect();
    let mut d_lambda: Vec<Matrix> = spec.lambda.iter().map(|l| Matrix::zeros(l.rows(), l.cols())).collect();
    let mut d_x = w.tr_matvec(upstream, None)?;

    let active: Vec<usize> = if spec.kind == AdapterKind::OMoE { (0..m).collect() } else { tr.selected.clone() };
    let mixed: &Vec<Vec<f64>> = tr.gs.as_ref().map_or(&tr.experts, |g| &g.vectors);

    // gate gradients and gradients w.r.t. mixed expert outputs
    let mut d_gates = vec![0.0; m];
    let mut d_mixed = vec![vec![0.0; spec.d_out]; m];
    for &e in &active {
        d_gates[e] = dot(upstream, &mixed[e]);
        d_mixed[e] = upstream.iter().map(|u| tr.gates[e] * u).collect();
    }
    let d_experts = match &tr.gs {
        Some(gs) => gram_schmidt_backward(gs, d_mixed),
        None => d_mixed,
    };

    // the shared factor accumulates its input gradient across experts
    let mut d_shared_h = vec![0.0; spec.r];
    for &e in &active {
        let de = &d_experts[e];
        d_b[spec.b_index(e)].add_outer(1.0, de, &tr.hx[e]);
        let dh = spec.b_of(e).tr_matvec(de, None)?;
        if spec.kind.shares_a() {
            for (a, b) in d_shared_h.iter_mut().zip(&dh) {
                *a += b;
            }
        } else {
            d_a[spec.a_index(e)].add_outer(1.0, &dh, x);
            for (xi, v) in d_x.iter_mut().zip(spec.a_of(e).tr_matvec(&dh, None)?) {
                *xi += v;
            }
        }
    }
    if spec.kind.shares_a() {
        let shared_ax = tr.ax[active[0]].clone();
        let d_ax = if spec.kind == AdapterKind::MtlLoRA {
            d_lambda[task_id].add_outer(1.0, &d_shared_h, &shared_ax);
            spec.lambda[task_id].tr_matvec(&d_shared_h, None)?
        } else {
            d_shared_h
        };
        d_a[0].add_outer(1.0, &d_ax, x);
        for (xi, v) in d_x.iter_mut().zip(spec.a[0].tr_matvec(&d_ax, None)?) {
            *xi += v;
        }
    }

    // router
    if spec.kind != AdapterKind::LoRA {
        let p = &tr.probs;
        let mut d_p = vec![0.0; m];
        if spec.kind == AdapterKind::MixLoRA {
            if spec.renormalize_top2 {
                let total: f64 = tr.selected.iter().map(|&i| p[i]).sum();
                let mean: f64 = tr.selected.iter().map(|&i| tr.gates[i] * d_gates[i]).sum();
                for &i in &tr.selected {
                    d_p[i] = (d_gates[i] - mean) / total;
                }
            } else {
                for &i in &tr.selected {
                    d_p[i] = d_gates[i];
                }
            }
        } else {
            d_p.copy_from_slice(&d_gates);
        }
        let pd = dot(p, &d_p);
        let d_logits: Vec<f64> = p.iter().zip(&d_p).map(|(pi, di)| pi * (di - pd)).collect();
        if spec.kind == AdapterKind::MtlLoRA {
            d_router.set_col(task_id, &d_logits);
        } else {
            d_router.add_outer(1.0, &d_logits, x);
            for (xi, v) in d_x.iter_mut().zip(spec.router.tr_matvec(&d_logits, None)?) {
                *xi += v;
            }
        }
    }

    let mut tensors = vec![d_router];
    tensors.extend(d_a);
    tensors.extend(d_b);
    tensors.extend(d_lambda);
    Ok(AdapterGradients { tensors, d_x })
}

/// A frozen weight wrapped by a baseline adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineLayer {
    pub w: Matrix,
    pub spec: AdapterSpec,
}

impl BaselineLayer {
    pub fn new(w: Matrix, spec: AdapterSpec) -> Result<Self> {
        if w.shape() != (spec.d_out, spec.d) {
            return Err(MooreError::shape(
                "BaselineLayer",
                format!("{}x{}", spec.d_out, spec.d),
                format!("{:?}", w.shape()),
            ));
        }
        spec.validate()?;
        Ok(Self { w, spec })
    }

    pub fn forward(&self, x: &[f64], task_id: usize) -> Result<Vec<f64>> {
        baseline_forward(&self.spec, &self.w, x, task_id)
    }

    pub fn backward(&self, x: &[f64], task_id: usize, upstream: &[f64]) -> Result<AdapterGradients> {
        baseline_backward(&self.spec, &self.w, x, task_id, upstream)
    }
}

impl Trainable for BaselineLayer {
    fn tensor_names(&self) -> Vec<String> {
        self.spec.tensor_names()
    }

    fn tensors(&self) -> Vec<&Matrix> {
        self.spec.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.spec.tensors_mut()
    }

    fn sync(&mut self) -> Result<()> {
        self.spec.validate()
    }

    fn input_dim(&self) -> usize {
        self.spec.d
    }

    fn forward_vec(&self, x: &[f64], task_id: usize) -> Result<Vec<f64>> {
        self.forward(x, task_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{fd_oracle, max_relative_error, Perturb, FD_STEP};
    use rand::Rng;

    fn randomized(kind: AdapterKind, m: usize, r: usize, d: usize, d_out: usize, seed: u64) -> BaselineLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = AdapterSpec::init(kind, m, r, 3, d, d_out, seed).unwrap();
        for t in spec.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        let w = Matrix::random_uniform(d_out, d, -1.0, 1.0, &mut rng);
        BaselineLayer::new(w, spec).unwrap()
    }

    #[test]
    fn zero_b_is_frozen_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Matrix::random_uniform(5, 4, -1.0, 1.0, &mut rng);
        let x = [0.1, -0.5, 0.7, 1.2];
        let wx = w.matvec(&x, None).unwrap();
        for kind in AdapterKind::ALL {
            let m = if kind == AdapterKind::LoRA { 1 } else { 3 };
            let spec = AdapterSpec::init(kind, m, 2, 2, 4, 5, 7).unwrap();
            let y = baseline_forward(&spec, &w, &x, 1).unwrap();
            assert_eq!(y, wx, "{kind:?}");
        }
    }

    #[test]
    fn mixlora_with_two_experts_is_loramoe() {
        let base = randomized(AdapterKind::LoRAMoE, 2, 2, 4, 4, 3);
        let mut mix = base.clone();
        mix.spec.kind = AdapterKind::MixLoRA;
        let x = [0.5, 0.1, -0.3, 0.8];
        assert_eq!(base.forward(&x, 0).unwrap(), mix.forward(&x, 0).unwrap());
    }

    #[test]
    fn mixlora_keeps_two() {
        let layer = randomized(AdapterKind::MixLoRA, 5, 2, 4, 4, 3);
        let tr = baseline_trace(&layer.spec, &layer.w, &[0.5, 0.1, -0.3, 0.8], 0, None).unwrap();
        assert_eq!(tr.gates.iter().filter(|g| **g != 0.0).count(), 2);
        assert_eq!(top2_indices(&[0.2, 0.4, 0.4, 0.0]), vec![1, 2]);
        assert_eq!(top2_indices(&[0.25; 4]), vec![0, 1]);
        assert_eq!(top2_indices(&[1.0]), vec![0]);
    }

    #[test]
    fn softmax_properties() {
        let p = softmax(&[1.0, -2.0, 0.5, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        let q = softmax(&[101.0, 98.0, 100.5, 103.0]);
        assert!(max_relative_error(&p, &q) < 1e-12);
    }

    #[test]
    fn paramcount_examples() {
        let s = AdapterSpec::init(AdapterKind::LoRAMoE, 4, 2, 0, 8, 8, 0).unwrap();
        assert_eq!(baseline_paramcount(&s), ParamCount { router: 32, experts: 128 });
        let s = AdapterSpec::init(AdapterKind::HydraLoRA, 4, 2, 0, 8, 8, 0).unwrap();
        assert_eq!(baseline_paramcount(&s).experts, 80);
        let s = AdapterSpec::init(AdapterKind::MtlLoRA, 3, 2, 2, 8, 8, 0).unwrap();
        assert_eq!(baseline_paramcount(&s), ParamCount { router: 6, experts: 72 });
        for kind in AdapterKind::ALL {
            let m = if kind == AdapterKind::LoRA { 1 } else { 3 };
            let s = AdapterSpec::init(kind, m, 2, 4, 6, 9, 0).unwrap();
            assert_eq!(baseline_paramcount(&s), materialized_paramcount(&s), "{kind:?}");
        }
    }

    #[test]
    fn lora_gradient_closed_form() {
        let layer = randomized(AdapterKind::LoRA, 1, 2, 4, 3, 5);
        let x = [0.3, -0.2, 0.9, 0.4];
        let up = [1.0, -0.5, 2.0];
        let g = layer.backward(&x, 0, &up).unwrap();
        let ax = layer.spec.a[0].matvec(&x, None).unwrap();
        let expect_b = Matrix::outer(&up, &ax);
        let btu = layer.spec.b[0].tr_matvec(&up, None).unwrap();
        let expect_a = Matrix::outer(&btu, &x);
        assert!(g.tensors[1].max_abs_diff(&expect_a) < 1e-12);
        assert!(g.tensors[2].max_abs_diff(&expect_b) < 1e-12);
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let layer = randomized(AdapterKind::OMoE, 3, 2, 4, 5, 5);
        let g = layer.backward(&[0.3, -0.2, 0.9, 0.4], 0, &[0.0; 5]).unwrap();
        assert!(g.tensors.iter().all(|t| t.max_abs() == 0.0));
        assert!(g.d_x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn every_kind_matches_fd() {
        let x = [0.3, -0.2, 0.9, 0.4, -0.6];
        let up = [1.0, -0.5, 2.0, 0.3, -0.1, 0.7];
        for kind in AdapterKind::ALL {
            let m = if kind == AdapterKind::LoRA { 1 } else { 4 };
            let mut layer = randomized(kind, m, 2, 5, 6, 21);
            for renorm in [false, true] {
                layer.spec.renormalize_top2 = renorm;
                let g = layer.backward(&x, 1, &up).unwrap();
                let tol = if kind == AdapterKind::OMoE { 1e-4 } else { 1e-5 };
                for (i, analytic) in g.tensors.iter().enumerate() {
                    let num = fd_oracle(&layer, &x, 1, &up, Perturb::Tensor(i), FD_STEP).unwrap();
                    let err = max_relative_error(analytic.data(), num.data());
                    assert!(err < tol, "{kind:?} tensor {i}: {err:e}");
                }
                let num = fd_oracle(&layer, &x, 1, &up, Perturb::Input, FD_STEP).unwrap();
                let err = max_relative_error(&g.d_x, num.data());
                assert!(err < tol, "{kind:?} dx: {err:e}");
            }
        }
    }

    #[test]
    fn gram_schmidt_orthogonal_and_counted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vs: Vec<Vec<f64>> = (0..4).map(|_| (0..7).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let c = FlopCounter::new();
        let gs = gram_schmidt(&vs, Some(&c));
        assert_eq!(c.mac_count(), 7 * 16);
        for i in 0..4 {
            for j in 0..i {
                let cos = dot(&gs.vectors[i], &gs.vectors[j]);
                assert!(cos.abs() < 1e-12);
            }
        }
        let dup = vec![vs[0].clone(), vs[0].clone()];
        let gs = gram_schmidt(&dup, None);
        assert_eq!(gs.degenerate, vec![false, true]);
    }

    #[test]
    fn mtl_task_out_of_range() {
        let layer = randomized(AdapterKind::MtlLoRA, 2, 2, 4, 4, 1);
        assert!(matches!(
            layer.forward(&[0.0; 4], 3),
            Err(MooreError::TaskIndexOutOfRange { .. })
        ));
    }
}
