//! The default experiment: pretrain a dense host on suite A, attach an
//! adapter, adapt on suite B while tracking suite-A accuracy.
//!
//! Suite A tasks occupy one-hot slots `0..K_A`, suite B tasks the slots after
//! them. All randomness derives from the single pipeline seed: suite seeds
//! given in the config are mixed with it, so changing the pipeline seed
//! changes the data as well as every initialization.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::host::{AdapterMode, HostModel, HostSpec, Layer1};
use super::log::MetricLog;
use super::suite::{generate_suite, Suite, SuiteSpec};
use super::train::{adapt, evaluate, pretrain, RunContext, TrainConfig, TrainMode};
use crate::error::{MooreError, Result};
use crate::baselines::AdapterSpec;
use crate::linalg::io::{load_matrix, save_matrix};
use crate::moore::{load_layer, save_layer, MooreLayer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub suite_a: SuiteSpec,
    pub suite_b: SuiteSpec,
    pub d_h: usize,
    pub adapter: AdapterMode,
    pub pretrain: TrainConfig,
    pub adapt: TrainConfig,
    pub seed: u64,
    #[serde(default = "one")]
    pub threads: usize,
}

fn one() -> usize {
    1
}

impl PipelineConfig {
    /// Desk-scale defaults: 32 features, 4 classes, 3 + 3 tasks with
    /// 512 train / 128 test samples each, hidden width 64, MoORE with
    /// `D_t = 8`, `D_s = 4`, `L = 8`.
    pub fn desk_default(seed: u64) -> Self {
        let suite = |prefix: &str, rho: f64| SuiteSpec {
            prefix: prefix.into(),
            k: 3,
            d_in: 32,
            c: 4,
            n_train: 512,
            n_test: 128,
            rho,
            seed: 0,
            shared_seed: None,
        };
        Self {
            suite_a: suite("A", 0.5),
            suite_b: suite("B", 0.3),
            d_h: 64,
            adapter: AdapterMode::Moore { d_t: 8, d_s: 4, l: 8 },
            pretrain: TrainConfig {
                epochs: 30,
                batch_size: 32,
                learning_rate: 3e-3,
                warmup_ratio: 0.05,
                decay_ratio: 0.05,
                optimizer: Default::default(),
                mode: TrainMode::Simultaneous,
            },
            adapt: TrainConfig {
                epochs: 30,
                batch_size: 32,
                learning_rate: 3e-4,
                warmup_ratio: 0.05,
                decay_ratio: 0.05,
                optimizer: Default::default(),
                mode: TrainMode::Simultaneous,
            },
            seed,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = (&self.suite_a, &self.suite_b);
        a.validate()?;
        b.validate()?;
        if a.d_in != b.d_in || a.c != b.c {
            return Err(MooreError::InvalidSpec(
                "suites must share D_in and the class count".into(),
            ));
        }
        if a.prefix == b.prefix {
            return Err(MooreError::InvalidSpec("suites need distinct task prefixes".into()));
        }
        if self.d_h == 0 || self.threads == 0 {
            return Err(MooreError::InvalidSpec("d_h and threads must be at least 1".into()));
        }
        if matches!(self.adapter, AdapterMode::Moore { .. }) && self.d_h < self.host_spec().d() {
            return Err(MooreError::InvalidSpec(format!(
                "MoORE needs d_h >= D_in + slots ({}), got {}",
                self.host_spec().d(),
                self.d_h
            )));
        }
        self.pretrain.validate()?;
        self.adapt.validate()
    }

    pub fn host_spec(&self) -> HostSpec {
        HostSpec {
            d_in: self.suite_a.d_in,
            slots: self.suite_a.k + self.suite_b.k,
            d_h: self.d_h,
            c: self.suite_a.c,
        }
    }

    /// Suite specs with their seeds mixed with the pipeline seed.
    pub fn effective_suites(&self) -> (SuiteSpec, SuiteSpec) {
        let shared = derive_seed(self.seed, "shared");
        let fix = |s: &SuiteSpec| {
            let mut s = s.clone();
            s.seed = derive_seed(self.seed, &format!("suite/{}/{}", s.prefix, s.seed));
            s.shared_seed = Some(s.shared_seed.map_or(shared, |v| derive_seed(self.seed, &format!("shared/{v}"))));
            s
        };
        (fix(&self.suite_a), fix(&self.suite_b))
    }

    pub fn generate(&self) -> Result<(Suite, Suite)> {
        let (a, b) = self.effective_suites();
        Ok((generate_suite(&a)?, generate_suite(&b)?))
    }
}

/// Run description written next to the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub adapter: String,
    /// Number of adapted (suite B) tasks.
    pub k: usize,
    pub seed: u64,
    pub tasks: Vec<String>,
    pub retained: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub log: MetricLog,
    pub pretrained: HostModel,
    pub adapted: HostModel,
    pub meta: RunMeta,
    pub suite_a: Suite,
    pub suite_b: Suite,
}

/// File names inside the output directory.
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const META_FILE: &str = "run.json";
pub const W1_FILE: &str = "w1.mat";
pub const W2_FILE: &str = "w2.mat";
pub const LAYER_FILE: &str = "layer1.moorelyr";
pub const ADAPTER_FILE: &str = "adapter.json";

/// Runs pretraining and adaptation. With `out`, writes the metric log, the
/// run description, the pretrained host weights and the trained adapter.
pub fn run_pipeline(cfg: &PipelineConfig, out: Option<&Path>) -> Result<PipelineOutput> {
    cfg.validate()?;
    let (suite_a, suite_b) = cfg.generate()?;
    let ka = suite_a.tasks.len();
    let tasks_a: Vec<_> = suite_a.tasks.iter().enumerate().collect();
    let tasks_b: Vec<_> = suite_b.tasks.iter().enumerate().map(|(i, t)| (ka + i, t)).collect();

    let mut log = MetricLog::new();
    let mut host = HostModel::new(cfg.host_spec(), derive_seed(cfg.seed, "host"))?;
    let ctx = RunContext {
        seed: cfg.seed,
        threads: cfg.threads,
    };
    pretrain(&mut host, &tasks_a, &cfg.pretrain, ctx, &mut log)?;
    let pretrained = host.clone();

    host.attach(&cfg.adapter, derive_seed(cfg.seed, "adapter"))?;
    adapt(&mut host, &tasks_b, &tasks_a, &cfg.adapt, ctx, &mut log)?;

    let meta = RunMeta {
        adapter: cfg.adapter.label(),
        k: suite_b.tasks.len(),
        seed: cfg.seed,
        tasks: suite_b.names(),
        retained: suite_a.names(),
    };
    if let Some(dir) = out {
        write_outputs(dir, cfg, &log, &pretrained, &host, &meta)?;
    }
    Ok(PipelineOutput {
        log,
        pretrained,
        adapted: host,
        meta,
        suite_a,
        suite_b,
    })
}

fn write_outputs(
    dir: &Path,
    cfg: &PipelineConfig,
    log: &MetricLog,
    pretrained: &HostModel,
    adapted: &HostModel,
    meta: &RunMeta,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(METRICS_FILE), log.to_jsonl())?;
    fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(meta)?)?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_vec_pretty(cfg)?)?;
    save_matrix(dir.join(W1_FILE), &pretrained.w1)?;
    save_matrix(dir.join(W2_FILE), &pretrained.w2)?;
    match &adapted.layer1 {
        Layer1::Moore(layer) => save_layer(dir.join(LAYER_FILE), layer)?,
        Layer1::Baseline(spec) => fs::write(dir.join(ADAPTER_FILE), serde_json::to_vec(spec)?)?,
        Layer1::FullFinetune => {
            save_matrix(dir.join("adapted_w1.mat"), &adapted.w1)?;
            save_matrix(dir.join("adapted_w2.mat"), &adapted.w2)?;
        }
        Layer1::Frozen => {}
    }
    Ok(())
}

/// A pipeline output directory read back into memory, with both suites
/// regenerated from the stored config.
#[derive(Debug, Clone)]
pub struct RestoredRun {
    pub config: PipelineConfig,
    pub pretrained: HostModel,
    pub adapted: HostModel,
    pub suite_a: Suite,
    pub suite_b: Suite,
}

/// Loads a run written by [`run_pipeline`]. `layer` replaces the stored
/// MoORE checkpoint, e.g. with its merged form.
pub fn load_run(dir: &Path, layer: Option<MooreLayer>) -> Result<RestoredRun> {
    let config: PipelineConfig = serde_json::from_slice(&fs::read(dir.join(CONFIG_FILE))?)?;
    config.validate()?;
    let (suite_a, suite_b) = config.generate()?;
    let spec = config.host_spec();
    let pretrained = HostModel {
        spec,
        w1: load_matrix(dir.join(W1_FILE))?,
        w2: load_matrix(dir.join(W2_FILE))?,
        layer1: Layer1::FullFinetune,
    };
    if pretrained.w1.shape() != (spec.d_h, spec.d()) || pretrained.w2.shape() != (spec.c, spec.d_h) {
        return Err(MooreError::Format(format!("host weights do not match {spec:?}")));
    }
    let mut adapted = pretrained.clone();
    adapted.layer1 = match (&config.adapter, layer) {
        (AdapterMode::Moore { .. }, Some(l)) => Layer1::Moore(l),
        (_, Some(_)) => {
            return Err(MooreError::InvalidSpec(
                "a layer checkpoint can only replace a MoORE adapter".into(),
            ))
        }
        (AdapterMode::Moore { .. }, None) => Layer1::Moore(load_layer(dir.join(LAYER_FILE))?),
        (AdapterMode::Baseline { .. }, None) => {
            let spec: AdapterSpec = serde_json::from_slice(&fs::read(dir.join(ADAPTER_FILE))?)?;
            spec.validate()?;
            Layer1::Baseline(spec)
        }
        (AdapterMode::FullFinetune {}, None) => {
            adapted.w1 = load_matrix(dir.join("adapted_w1.mat"))?;
            adapted.w2 = load_matrix(dir.join("adapted_w2.mat"))?;
            Layer1::FullFinetune
        }
        (AdapterMode::Frozen {}, None) => Layer1::Frozen,
    };
    if let Layer1::Moore(l) = &adapted.layer1 {
        let d = l.dims();
        if (d.d_out, d.d, d.k) != (spec.d_h, spec.d(), spec.slots) {
            return Err(MooreError::Format(format!("layer checkpoint {d:?} does not fit host {spec:?}")));
        }
    }
    Ok(RestoredRun {
        config,
        pretrained,
        adapted,
        suite_a,
        suite_b,
    })
}

/// Test accuracy of one task under a host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: String,
    pub slot: usize,
    pub accuracy: f64,
}

/// Test accuracy of `host` on every task of both suites, suite A first.
pub fn evaluate_suites(host: &HostModel, suite_a: &Suite, suite_b: &Suite) -> Result<Vec<TaskAccuracy>> {
    let ka = suite_a.tasks.len();
    let slots = suite_a.tasks.iter().enumerate().chain(suite_b.tasks.iter().enumerate().map(|(i, t)| (ka + i, t)));
    slots
        .map(|(slot, t)| {
            Ok(TaskAccuracy {
                task: t.name.clone(),
                slot,
                accuracy: evaluate(host, slot, &t.test)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> PipelineConfig {
        let mut c = PipelineConfig::desk_default(seed);
        for s in [&mut c.suite_a, &mut c.suite_b] {
            s.d_in = 6;
            s.n_train = 32;
            s.n_test = 16;
        }
        c.d_h = 12;
        c.adapter = AdapterMode::Moore { d_t: 2, d_s: 2, l: 2 };
        c.pretrain.epochs = 2;
        c.adapt.epochs = 2;
        c
    }

    #[test]
    fn restored_run_reproduces_logged_accuracy() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(3);
        let out = run_pipeline(&cfg, Some(dir.path())).unwrap();
        let run = load_run(dir.path(), None).unwrap();
        assert_eq!(run.adapted, out.adapted);
        assert_eq!(run.pretrained.w1, out.pretrained.w1);
        let acc = evaluate_suites(&run.adapted, &run.suite_a, &run.suite_b).unwrap();
        assert_eq!(acc.len(), 6);
        let last = out.log.select(super::super::Phase::Adapt, super::super::Metric::Accuracy);
        let b0 = last.filter(|r| r.task == acc[3].task).last().unwrap();
        assert_eq!(b0.value, acc[3].accuracy);
    }

    #[test]
    fn baseline_run_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(4);
        cfg.adapter = AdapterMode::Baseline {
            adapter: crate::baselines::AdapterKind::MixLoRA,
            m: 3,
            r: 2,
            renormalize_top2: false,
        };
        let out = run_pipeline(&cfg, Some(dir.path())).unwrap();
        assert_eq!(load_run(dir.path(), None).unwrap().adapted, out.adapted);
    }
}
