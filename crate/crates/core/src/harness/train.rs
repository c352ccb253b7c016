//! Pretraining and adaptation loops.
//!
//! Each optimizer step uses a batch from a single task and minimizes its mean
//! cross-entropy. Simultaneous mode interleaves the tasks' batches
//! round-robin within every epoch; sequential mode runs all epochs of one
//! task before moving to the next.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::host::{HostModel, Layer1};
use super::log::{Metric, MetricLog, Phase};
use super::optim::{adamw_step, wsd_schedule, AdamHyper, AdamState};
use super::suite::{Split, TaskData};
use crate::error::{MooreError, Result};
use crate::grad::{run_sharded, tree_sum};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Simultaneous,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub decay_ratio: f64,
    #[serde(default)]
    pub optimizer: AdamHyper,
    #[serde(default = "simultaneous")]
    pub mode: TrainMode,
}

fn simultaneous() -> TrainMode {
    TrainMode::Simultaneous
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_ratio = |r: f64| (0.0..=1.0).contains(&r);
        if !ok_ratio(self.warmup_ratio) || !ok_ratio(self.decay_ratio) || self.warmup_ratio + self.decay_ratio > 1.0 {
            return Err(MooreError::InvalidSpec(format!(
                "warmup {} and decay {} must lie in [0,1] and sum to at most 1",
                self.warmup_ratio, self.decay_ratio
            )));
        }
        if self.batch_size == 0 {
            return Err(MooreError::InvalidSpec("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(MooreError::InvalidSpec("learning_rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Seed and parallelism of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunContext {
    pub seed: u64,
    /// Number of gradient shards; 1 keeps everything on the calling thread.
    pub threads: usize,
}

/// A task together with the one-hot slot it occupies in the host input.
type SlotTask<'a> = (usize, &'a TaskData);

/// Fraction of `split` the host classifies correctly.
pub fn evaluate(host: &HostModel, slot: usize, split: &Split) -> Result<f64> {
    if split.is_empty() {
        return Err(MooreError::EmptySampleSet);
    }
    let mut hits = 0usize;
    for (x, &y) in split.xs.iter().zip(&split.labels) {
        if host.predict(x, slot)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / split.len() as f64)
}

/// One span of training followed by a snapshot: every task in `tasks` runs
/// one epoch.
struct Segment {
    tasks: Vec<usize>,
}

fn segments(n_tasks: usize, epochs: usize, mode: TrainMode) -> Vec<Segment> {
    match mode {
        TrainMode::Simultaneous => (0..epochs)
            .map(|_| Segment {
                tasks: (0..n_tasks).collect(),
            })
            .collect(),
        TrainMode::Sequential => (0..n_tasks)
            .flat_map(|t| (0..epochs).map(move |_| Segment { tasks: vec![t] }))
            .collect(),
    }
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    ctx: RunContext,
    state: AdamState,
    step: u64,
    total: u64,
    label: &'static str,
}

impl<'a> Trainer<'a> {
    fn new(host: &HostModel, cfg: &'a TrainConfig, ctx: RunContext, tasks: &[SlotTask], label: &'static str) -> Self {
        let per_epoch: u64 = tasks
            .iter()
            .map(|(_, t)| t.train.len().div_ceil(cfg.batch_size) as u64)
            .sum();
        Self {
            cfg,
            ctx,
            state: AdamState::new(&host.params()),
            step: 0,
            total: per_epoch * cfg.epochs as u64,
            label,
        }
    }

    /// Runs one segment; returns the mean batch loss of each listed task.
    fn run_segment(&mut self, host: &mut HostModel, tasks: &[SlotTask], seg: &Segment, epoch: usize) -> Result<Vec<f64>> {
        // shuffled batch lists per task, then interleaved round-robin
        let mut queues: Vec<Vec<Vec<usize>>> = Vec::new();
        for &t in &seg.tasks {
            let (_, data) = tasks[t];
            data.train.require_train()?;
            let mut idx: Vec<usize> = (0..data.train.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                self.ctx.seed,
                &format!("{}/shuffle/{}/{epoch}", self.label, data.name),
            ));
            idx.shuffle(&mut rng);
            queues.push(idx.chunks(self.cfg.batch_size).map(<[usize]>::to_vec).collect());
        }
        let mut losses = vec![0.0; seg.tasks.len()];
        let rounds = queues.iter().map(Vec::len).max().unwrap_or(0);
        for b in 0..rounds {
            for (qi, q) in queues.iter().enumerate() {
                let Some(batch) = q.get(b) else { continue };
                let (slot, data) = tasks[seg.tasks[qi]];
                let loss = self.step_batch(host, slot, &data.train, batch)?;
                losses[qi] += loss / q.len() as f64;
            }
        }
        Ok(losses)
    }

    fn step_batch(&mut self, host: &mut HostModel, slot: usize, split: &Split, batch: &[usize]) -> Result<f64> {
        split.require_train()?;
        let weight = 1.0 / batch.len() as f64;
        let view: &HostModel = host;
        let partials = run_sharded(batch, self.ctx.threads, |chunk| {
            let mut acc: Option<(f64, Vec<Matrix>)> = None;
            for &i in chunk {
                let (loss, g) = view.sample_gradients(&split.xs[i], slot, split.labels[i], weight)?;
                match &mut acc {
                    None => acc = Some((loss * weight, g)),
                    Some((l, a)) => {
                        *l += loss * weight;
                        for (x, y) in a.iter_mut().zip(&g) {
                            x.add_scaled(1.0, y);
                        }
                    }
                }
            }
            Ok(acc.expect("non-empty shard"))
        })?;
        let (loss, grads) = tree_sum(partials, |a, b| {
            a.0 += b.0;
            for (x, y) in a.1.iter_mut().zip(&b.1) {
                x.add_scaled(1.0, y);
            }
        })
        .expect("non-empty batch");
        if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(MooreError::Divergence { step: self.step, loss });
        }
        let lr = wsd_schedule(
            self.step,
            self.total.max(1),
            self.cfg.warmup_ratio,
            self.cfg.decay_ratio,
            self.cfg.learning_rate,
        );
        if !grads.is_empty() {
            adamw_step(&mut host.params_mut(), &grads, &mut self.state, lr, &self.cfg.optimizer)?;
            host.post_update()?;
        }
        self.step += 1;
        Ok(loss)
    }
}

/// Dense training of the whole host on `tasks`. Logs per-epoch train loss and
/// final test accuracy under the pretrain phase.
pub fn pretrain(host: &mut HostModel, tasks: &[SlotTask], cfg: &TrainConfig, ctx: RunContext, log: &mut MetricLog) -> Result<()> {
    cfg.validate()?;
    if host.layer1 != Layer1::FullFinetune {
        return Err(MooreError::InvalidSpec("pretraining needs a dense full-finetune host".into()));
    }
    let mut tr = Trainer::new(host, cfg, ctx, tasks, "pretrain");
    for (epoch, seg) in segments(tasks.len(), cfg.epochs, cfg.mode).iter().enumerate() {
        let losses = tr.run_segment(host, tasks, seg, epoch)?;
        for (&t, loss) in seg.tasks.iter().zip(losses) {
            log.push(tr.step, Phase::Pretrain, &tasks[t].1.name, Metric::Loss, loss, ctx.seed);
        }
    }
    for (slot, data) in tasks {
        let acc = evaluate(host, *slot, &data.test)?;
        log.push(tr.step, Phase::Pretrain, &data.name, Metric::Accuracy, acc, ctx.seed);
    }
    log::info!("pretrain done after {} steps", tr.step);
    Ok(())
}

/// Largest relative out-of-range residual of the MoORE layer's output over
/// the whole test split of one task.
fn range_residual(host: &HostModel, slot: usize, split: &Split) -> Result<Option<f64>> {
    let Layer1::Moore(layer) = &host.layer1 else {
        return Ok(None);
    };
    let mut worst: f64 = 0.0;
    for x in &split.xs {
        let f = host.features(x, slot)?;
        let y = layer.forward(&f, slot, None)?;
        worst = worst.max(layer.range_residual(&y)?);
    }
    Ok(Some(worst))
}

fn snapshot(host: &HostModel, step: u64, tasks: &[SlotTask], retained: &[SlotTask], seed: u64, log: &mut MetricLog) -> Result<()> {
    for (slot, data) in tasks {
        let acc = evaluate(host, *slot, &data.test)?;
        log.push(step, Phase::Adapt, &data.name, Metric::Accuracy, acc, seed);
    }
    for (slot, data) in retained {
        let acc = evaluate(host, *slot, &data.test)?;
        log.push(step, Phase::Eval, &data.name, Metric::Accuracy, acc, seed);
    }
    for (slot, data) in tasks.iter().chain(retained) {
        if let Some(r) = range_residual(host, *slot, &data.test)? {
            log.push(step, Phase::Eval, &data.name, Metric::RangeResidual, r, seed);
        }
    }
    Ok(())
}

/// Adapts the host (in whatever mode its first layer is in) to `tasks`,
/// snapshotting test accuracy of `tasks` (adapt phase) and of `retained`
/// (eval phase) at step 0 and after every epoch. Only train splits of
/// `tasks` feed gradients.
pub fn adapt(
    host: &mut HostModel,
    tasks: &[SlotTask],
    retained: &[SlotTask],
    cfg: &TrainConfig,
    ctx: RunContext,
    log: &mut MetricLog,
) -> Result<()> {
    cfg.validate()?;
    let mut tr = Trainer::new(host, cfg, ctx, tasks, "adapt");
    snapshot(host, 0, tasks, retained, ctx.seed, log)?;
    for (epoch, seg) in segments(tasks.len(), cfg.epochs, cfg.mode).iter().enumerate() {
        let losses = tr.run_segment(host, tasks, seg, epoch)?;
        for (&t, loss) in seg.tasks.iter().zip(losses) {
            log.push(tr.step, Phase::Adapt, &tasks[t].1.name, Metric::Loss, loss, ctx.seed);
        }
        snapshot(host, tr.step, tasks, retained, ctx.seed, log)?;
    }
    log::info!("adapt done after {} steps", tr.step);
    Ok(())
}
