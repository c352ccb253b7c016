//! Reverse-mode gradients of `L = upstreamᵀ · forward(x, k)` for
//! [`MooreLayer`], and a central-difference oracle that only ever calls
//! `forward`.

use crate::error::{MooreError, Result};
use crate::linalg::{dot, Matrix, NORM_FLOOR};
use crate::moore::{MooreDims, MooreLayer};

/// A model with a fixed, ordered list of learnable tensors.
///
/// The optimizer and the finite-difference oracle only see this surface.
pub trait Trainable: Clone {
    fn tensor_names(&self) -> Vec<String>;
    fn tensors(&self) -> Vec<&Matrix>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;
    /// Revalidates derived state after the tensors were edited in place.
    fn sync(&mut self) -> Result<()>;
    fn input_dim(&self) -> usize;
    fn forward_vec(&self, x: &[f64], task_id: usize) -> Result<Vec<f64>>;
}

impl Trainable for MooreLayer {
    fn tensor_names(&self) -> Vec<String> {
        ["T", "P", "Q", "Gamma", "R"].map(String::from).to_vec()
    }

    fn tensors(&self) -> Vec<&Matrix> {
        self.learnable().to_vec()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.learnable_mut().into_iter().collect()
    }

    fn sync(&mut self) -> Result<()> {
        MooreLayer::sync(self)
    }

    fn input_dim(&self) -> usize {
        self.dims().d
    }

    fn forward_vec(&self, x: &[f64], task_id: usize) -> Result<Vec<f64>> {
        self.forward(x, task_id, None)
    }
}

/// Gradients for every learnable tensor of a [`MooreLayer`] plus the input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub d_t: Matrix,
    pub d_p: Matrix,
    pub d_q: Matrix,
    pub d_gamma: Matrix,
    pub d_r: Matrix,
    pub d_x: Vec<f64>,
}

impl LayerGradients {
    pub fn zeros(dims: &MooreDims) -> Self {
        Self {
            d_t: Matrix::zeros(dims.d_t, dims.k),
            d_p: Matrix::zeros(dims.d_t, dims.d),
            d_q: Matrix::zeros(dims.d_s, dims.d),
            d_gamma: Matrix::zeros(dims.d_s, dims.d),
            d_r: Matrix::zeros(dims.d, dims.l),
            d_x: vec![0.0; dims.d],
        }
    }

    /// Parameter gradients in [`Trainable::tensors`] order.
    pub fn tensors(&self) -> [&Matrix; 5] {
        [&self.d_t, &self.d_p, &self.d_q, &self.d_gamma, &self.d_r]
    }

    pub fn into_tensors(self) -> Vec<Matrix> {
        vec![self.d_t, self.d_p, self.d_q, self.d_gamma, self.d_r]
    }

    pub fn add_assign(&mut self, other: &LayerGradients) {
        self.d_t.add_scaled(1.0, &other.d_t);
        self.d_p.add_scaled(1.0, &other.d_p);
        self.d_q.add_scaled(1.0, &other.d_q);
        self.d_gamma.add_scaled(1.0, &other.d_gamma);
        self.d_r.add_scaled(1.0, &other.d_r);
        for (a, b) in self.d_x.iter_mut().zip(&other.d_x) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.all_finite()) && self.d_x.iter().all(|v| v.is_finite())
    }
}

/// Gradients of `upstreamᵀ · layer.forward(x, task_id)`.
pub fn backward(layer: &MooreLayer, x: &[f64], task_id: usize, upstream: &[f64]) -> Result<LayerGradients> {
    let dims = layer.dims();
    if upstream.len() != dims.d_out {
        return Err(MooreError::shape("backward upstream", dims.d_out, upstream.len()));
    }
    if x.len() != dims.d {
        return Err(MooreError::shape("backward input", dims.d, x.len()));
    }
    let factors = layer.factors();
    let router = layer.router();
    let chain = layer.chain();

    // forward cache
    let stages = chain.apply_stages(x)?;
    let z = factors.v.tr_matvec(&stages[0], None)?;
    let t_k = router.task_embedding(task_id)?;
    let a = router.gamma.matvec(x, None)?;
    let mut g = router.p.tr_matvec(&t_k, None)?;
    for (gi, si) in g.iter_mut().zip(router.q.tr_matvec(&a, None)?) {
        *gi += si;
    }
    let u_bar = factors.u.tr_matvec(upstream, None)?;

    // router branch
    let dg: Vec<f64> = u_bar.iter().zip(&z).map(|(u, z)| u * z).collect();
    let mut grads = LayerGradients::zeros(&dims);
    grads.d_t.set_col(task_id, &router.p.matvec(&dg, None)?);
    grads.d_p.add_outer(1.0, &t_k, &dg);
    grads.d_q.add_outer(1.0, &a, &dg);
    let da = router.q.matvec(&dg, None)?;
    grads.d_gamma.add_outer(1.0, &da, x);
    let dx_router = router.gamma.tr_matvec(&da, None)?;

    // expert branch: z = Vᵀ z0, scaled by s = g + σ
    let dz: Vec<f64> = g
        .iter()
        .zip(&factors.sigma)
        .zip(&u_bar)
        .map(|((gi, si), ui)| (gi + si) * ui)
        .collect();
    let mut grad = factors.v.matvec(&dz, None)?;

    // reflection l maps stages[l + 1] to stages[l]
    for l in 0..chain.len() {
        let n = chain.norm_sq(l);
        if n.sqrt() <= NORM_FLOOR {
            return Err(MooreError::NormFloor {
                column: l,
                norm: n.sqrt(),
            });
        }
        let r = chain.column(l);
        let u = &stages[l + 1];
        let rtu = dot(&r, u);
        let rtg = dot(&r, &grad);
        let c = 2.0 * rtu / n;
        let k2 = 4.0 * rtu * rtg / (n * n);
        for i in 0..dims.d {
            let dr = -c * grad[i] - 2.0 * rtg / n * u[i] + k2 * r[i];
            grads.d_r.set(i, l, dr);
        }
        let back = 2.0 * rtg / n;
        for (gi, ri) in grad.iter_mut().zip(&r) {
            *gi -= back * ri;
        }
    }
    grads.d_x = grad.iter().zip(&dx_router).map(|(a, b)| a + b).collect();
    Ok(grads)
}

/// Summed gradients over a batch, `samples[i] = (x, task_id, upstream)`.
///
/// With `shards > 1` the batch is split into contiguous shards evaluated on
/// scoped threads and combined by [`tree_sum`], so the result is bit-stable
/// for a fixed shard count.
pub fn backward_batch(
    layer: &MooreLayer,
    samples: &[(Vec<f64>, usize, Vec<f64>)],
    shards: usize,
) -> Result<LayerGradients> {
    let shard_sum = |chunk: &[(Vec<f64>, usize, Vec<f64>)]| -> Result<LayerGradients> {
        let mut acc = LayerGradients::zeros(&layer.dims());
        for (x, k, up) in chunk {
            acc.add_assign(&backward(layer, x, *k, up)?);
        }
        Ok(acc)
    };
    let parts = run_sharded(samples, shards, shard_sum)?;
    Ok(tree_sum(parts, |a, b| a.add_assign(b)).unwrap_or_else(|| LayerGradients::zeros(&layer.dims())))
}

/// Evaluates `f` on `shards` contiguous chunks of `items`, in chunk order.
pub fn run_sharded<T: Sync, R: Send>(
    items: &[T],
    shards: usize,
    f: impl Fn(&[T]) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let shards = shards.max(1).min(items.len().max(1));
    if shards == 1 {
        return Ok(vec![f(items)?]);
    }
    let chunk = items.len().div_ceil(shards);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| f(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("gradient shard panicked"))
            .collect()
    })
}

/// Pairwise reduction in a fixed order: `((0+1)+(2+3))+…`.
pub fn tree_sum<T>(mut items: Vec<T>, add: impl Fn(&mut T, &T)) -> Option<T> {
    if items.is_empty() {
        return None;
    }
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                add(&mut a, &b);
            }
            next.push(a);
        }
        items = next;
    }
    items.pop()
}

/// Which quantity the finite-difference oracle perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturb {
    /// Index into [`Trainable::tensors`].
    Tensor(usize),
    /// The input vector; the result is a `1 × D` matrix.
    Input,
}

/// Default relative step: `h = 1e-6 · max(1, |θ|)`.
pub const FD_STEP: f64 = 1e-6;

/// Central differences `(L(θ+h) − L(θ−h)) / 2h` of
/// `L = upstreamᵀ · forward(x, task_id)`, one entry at a time.
pub fn fd_oracle<M: Trainable>(
    model: &M,
    x: &[f64],
    task_id: usize,
    upstream: &[f64],
    which: Perturb,
    step: f64,
) -> Result<Matrix> {
    let loss = |m: &M, input: &[f64]| -> Result<f64> { Ok(dot(upstream, &m.forward_vec(input, task_id)?)) };
    match which {
        Perturb::Input => {
            let mut out = Matrix::zeros(1, x.len());
            let mut xp = x.to_vec();
            for i in 0..x.len() {
                let h = step * x[i].abs().max(1.0);
                xp[i] = x[i] + h;
                let lp = loss(model, &xp)?;
                xp[i] = x[i] - h;
                let lm = loss(model, &xp)?;
                xp[i] = x[i];
                out.set(0, i, (lp - lm) / (2.0 * h));
            }
            Ok(out)
        }
        Perturb::Tensor(idx) => {
            let tensors = model.tensors();
            let shape = tensors
                .get(idx)
                .ok_or(MooreError::IndexOutOfRange {
                    index: idx,
                    len: tensors.len(),
                })?
                .shape();
            let mut out = Matrix::zeros(shape.0, shape.1);
            let mut work = model.clone();
            for e in 0..shape.0 * shape.1 {
                let theta = work.tensors()[idx].data()[e];
                let h = step * theta.abs().max(1.0);
                work.tensors_mut()[idx].data_mut()[e] = theta + h;
                work.sync()?;
                let lp = loss(&work, x)?;
                work.tensors_mut()[idx].data_mut()[e] = theta - h;
                work.sync()?;
                let lm = loss(&work, x)?;
                work.tensors_mut()[idx].data_mut()[e] = theta;
                out.data_mut()[e] = (lp - lm) / (2.0 * h);
            }
            work.sync()?;
            Ok(out)
        }
    }
}

/// Relative step for [`fd_oracle_extrapolated`], near `ε^(1/5)`.
pub const RICHARDSON_STEP: f64 = 1e-3;

/// Central differences at `h` and `h/2` combined as `(4·D(h/2) − D(h)) / 3`,
/// which cancels the `h²` term. Lets `h` stay large enough that roundoff in
/// the loss does not swamp small gradient entries.
pub fn fd_oracle_extrapolated<M: Trainable>(
    model: &M,
    x: &[f64],
    task_id: usize,
    upstream: &[f64],
    which: Perturb,
    step: f64,
) -> Result<Matrix> {
    let coarse = fd_oracle(model, x, task_id, upstream, which, step)?;
    let fine = fd_oracle(model, x, task_id, upstream, which, step / 2.0)?;
    let mut out = fine.clone();
    for (o, c) in out.data_mut().iter_mut().zip(coarse.data()) {
        *o = (4.0 * *o - c) / 3.0;
    }
    Ok(out)
}

/// Absolute floor under the relative-error denominator.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Largest elementwise [`relative_error`]. Panics on a length mismatch.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths");
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0, |m, (a, b)| m.max(relative_error(*a, *b)))
}
