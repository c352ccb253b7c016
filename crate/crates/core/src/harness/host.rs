//! Two-layer MLP host: `logits = W₂ · gelu(layer₁([x; e_slot]))`.
//!
//! The input is the task features concatenated with a one-hot over every
//! task slot, so a single dense network can fit several labelings. Only the
//! first layer can be adapted (MoORE or a baseline); `W₂` is wide, which the
//! tall-matrix SVD does not cover.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_backward, baseline_forward, AdapterKind, AdapterSpec};
use crate::error::{MooreError, Result};
use crate::grad;
use crate::linalg::Matrix;
use crate::moore::{MooreConfig, MooreLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    pub d_in: usize,
    /// Number of one-hot task slots appended to the input.
    pub slots: usize,
    pub d_h: usize,
    pub c: usize,
}

impl HostSpec {
    /// Width of the first layer's input.
    pub fn d(&self) -> usize {
        self.d_in + self.slots
    }
}

/// How the first layer is trained during adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdapterMode {
    Frozen {},
    FullFinetune {},
    Moore {
        d_t: usize,
        d_s: usize,
        l: usize,
    },
    Baseline {
        adapter: AdapterKind,
        m: usize,
        r: usize,
        #[serde(default)]
        renormalize_top2: bool,
    },
}

impl AdapterMode {
    pub fn label(&self) -> String {
        match self {
            AdapterMode::Frozen {} => "frozen".into(),
            AdapterMode::FullFinetune {} => "full_finetune".into(),
            AdapterMode::Moore { .. } => "MoORE".into(),
            AdapterMode::Baseline { adapter, .. } => adapter.name().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer1 {
    Frozen,
    FullFinetune,
    Moore(MooreLayer),
    Baseline(AdapterSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostModel {
    pub spec: HostSpec,
    pub w1: Matrix,
    pub w2: Matrix,
    pub layer1: Layer1,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct Cache {
    f: Vec<f64>,
    pre: Vec<f64>,
    h: Vec<f64>,
    logits: Vec<f64>,
}

impl HostModel {
    /// Random dense host in full-finetune mode.
    pub fn new(spec: HostSpec, seed: u64) -> Result<Self> {
        if spec.d_in == 0 || spec.d_h == 0 || spec.c < 2 {
            return Err(MooreError::InvalidSpec("host needs D_in, D_h >= 1 and C >= 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = 1.0 / (spec.d() as f64).sqrt();
        let b2 = 1.0 / (spec.d_h as f64).sqrt();
        Ok(Self {
            spec,
            w1: Matrix::random_uniform(spec.d_h, spec.d(), -b1, b1, &mut rng),
            w2: Matrix::random_uniform(spec.c, spec.d_h, -b2, b2, &mut rng),
            layer1: Layer1::FullFinetune,
        })
    }

    /// Switches the first layer to `mode`, building adapters from the current `W₁`.
    pub fn attach(&mut self, mode: &AdapterMode, seed: u64) -> Result<()> {
        self.layer1 = match *mode {
            AdapterMode::Frozen {} => Layer1::Frozen,
            AdapterMode::FullFinetune {} => Layer1::FullFinetune,
            AdapterMode::Moore { d_t, d_s, l } => Layer1::Moore(MooreLayer::moeize(
                &self.w1,
                MooreConfig {
                    d_t,
                    d_s,
                    l,
                    k: self.spec.slots,
                },
                seed,
            )?),
            AdapterMode::Baseline {
                adapter,
                m,
                r,
                renormalize_top2,
            } => {
                let mut spec = AdapterSpec::init(adapter, m, r, self.spec.slots, self.spec.d(), self.spec.d_h, seed)?;
                spec.renormalize_top2 = renormalize_top2;
                Layer1::Baseline(spec)
            }
        };
        Ok(())
    }

    pub fn features(&self, x: &[f64], slot: usize) -> Result<Vec<f64>> {
        if x.len() != self.spec.d_in {
            return Err(MooreError::shape("host input", self.spec.d_in, x.len()));
        }
        if slot >= self.spec.slots {
            return Err(MooreError::TaskIndexOutOfRange {
                task: slot,
                count: self.spec.slots,
            });
        }
        let mut f = x.to_vec();
        f.resize(self.spec.d(), 0.0);
        f[self.spec.d_in + slot] = 1.0;
        Ok(f)
    }

    /// First-layer pre-activation.
    pub fn layer1_output(&self, f: &[f64], slot: usize) -> Result<Vec<f64>> {
        match &self.layer1 {
            Layer1::Frozen | Layer1::FullFinetune => self.w1.matvec(f, None),
            Layer1::Moore(layer) => layer.forward(f, slot, None),
            Layer1::Baseline(spec) => baseline_forward(spec, &self.w1, f, slot),
        }
    }

    fn cache(&self, x: &[f64], slot: usize) -> Result<Cache> {
        let f = self.features(x, slot)?;
        let pre = self.layer1_output(&f, slot)?;
        let h: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
        let logits = self.w2.matvec(&h, None)?;
        Ok(Cache { f, pre, h, logits })
    }

    pub fn logits(&self, x: &[f64], slot: usize) -> Result<Vec<f64>> {
        Ok(self.cache(x, slot)?.logits)
    }

    /// Argmax class, ties to the lower index.
    pub fn predict(&self, x: &[f64], slot: usize) -> Result<usize> {
        let l = self.logits(x, slot)?;
        let mut best = 0;
        for (i, v) in l.iter().enumerate() {
            if *v > l[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn params(&self) -> Vec<&Matrix> {
        match &self.layer1 {
            Layer1::Frozen => Vec::new(),
            Layer1::FullFinetune => vec![&self.w1, &self.w2],
            Layer1::Moore(layer) => layer.learnable().to_vec(),
            Layer1::Baseline(spec) => spec.tensors(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match &mut self.layer1 {
            Layer1::Frozen => Vec::new(),
            Layer1::FullFinetune => vec![&mut self.w1, &mut self.w2],
            Layer1::Moore(layer) => layer.learnable_mut().into_iter().collect(),
            Layer1::Baseline(spec) => spec.tensors_mut(),
        }
    }

    /// Revalidates adapter state after an in-place update.
    pub fn post_update(&mut self) -> Result<()> {
        match &mut self.layer1 {
            Layer1::Moore(layer) => layer.sync(),
            Layer1::Baseline(spec) => spec.validate(),
            Layer1::FullFinetune => {
                if self.w1.all_finite() && self.w2.all_finite() {
                    Ok(())
                } else {
                    Err(MooreError::NonFinite("host weights"))
                }
            }
            Layer1::Frozen => Ok(()),
        }
    }

    /// Cross-entropy of one sample and `weight ×` its parameter gradients,
    /// in [`params`](Self::params) order.
    pub fn sample_gradients(&self, x: &[f64], slot: usize, label: usize, weight: f64) -> Result<(f64, Vec<Matrix>)> {
        if label >= self.spec.c {
            return Err(MooreError::IndexOutOfRange {
                index: label,
                len: self.spec.c,
            });
        }
        let c = self.cache(x, slot)?;
        let max = c.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = c.logits.iter().map(|l| (l - max).exp()).sum();
        let loss = max + sum.ln() - c.logits[label];
        if matches!(self.layer1, Layer1::Frozen) {
            return Ok((loss, Vec::new()));
        }
        let mut d_logits: Vec<f64> = c.logits.iter().map(|l| (l - max).exp() / sum).collect();
        d_logits[label] -= 1.0;
        d_logits.iter_mut().for_each(|v| *v *= weight);
        let dh = self.w2.tr_matvec(&d_logits, None)?;
        let d_pre: Vec<f64> = dh.iter().zip(&c.pre).map(|(g, p)| g * gelu_grad(*p)).collect();
        let grads = match &self.layer1 {
            Layer1::Frozen => unreachable!(),
            Layer1::FullFinetune => vec![Matrix::outer(&d_pre, &c.f), Matrix::outer(&d_logits, &c.h)],
            Layer1::Moore(layer) => grad::backward(layer, &c.f, slot, &d_pre)?.into_tensors(),
            Layer1::Baseline(spec) => baseline_backward(spec, &self.w1, &c.f, slot, &d_pre)?.tensors,
        };
        Ok((loss, grads))
    }

    /// Cross-entropy of one sample.
    pub fn sample_loss(&self, x: &[f64], slot: usize, label: usize) -> Result<f64> {
        let l = self.logits(x, slot)?;
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = l.iter().map(|v| (v - max).exp()).sum();
        Ok(max + sum.ln() - l[label])
    }
}
