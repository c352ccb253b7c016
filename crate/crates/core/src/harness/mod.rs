//! Desk-scale experiment harness: synthetic multi-task suites, a two-layer
//! MLP host whose first layer can be MoE-ized or wrapped by a baseline
//! adapter, AdamW with a warmup-stable-decay schedule, and the
//! pretrain/adapt loops that write JSON-lines metric logs.

mod host;
mod log;
mod optim;
mod pipeline;
mod suite;
mod train;

pub use host::{AdapterMode, HostModel, HostSpec, Layer1, gelu, gelu_grad};
pub use log::{read_log, write_log, Metric, MetricLog, MetricRecord, Phase};
pub use optim::{adamw_step, wsd_schedule, AdamHyper, AdamState};
pub use pipeline::{
    evaluate_suites, load_run, run_pipeline, PipelineConfig, PipelineOutput, RestoredRun, RunMeta, TaskAccuracy,
    ADAPTER_FILE, CONFIG_FILE, LAYER_FILE, META_FILE, METRICS_FILE, W1_FILE, W2_FILE,
};
pub use suite::{generate_suite, Split, SplitTag, Suite, SuiteSpec, TaskData};
pub use train::{adapt, evaluate, pretrain, RunContext, TrainConfig, TrainMode};

/// Derives an independent 64-bit seed from `seed` and a label.
///
/// FNV-1a over the label, folded into `seed`, then one SplitMix64 round.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
