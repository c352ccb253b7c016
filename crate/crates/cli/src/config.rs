//! Experiment config: a partial JSON overlay on the desk-scale defaults,
//! then command-line overrides on top.

use std::fs;
use std::path::{Path, PathBuf};

use moore_core::baselines::AdapterKind;
use moore_core::harness::{AdapterMode, PipelineConfig};
use moore_core::{MooreError, Result};
use serde_json::{Map, Value};

/// Baseline sizes used when `--adapter` names a baseline without `--M`/`--r`.
pub const DEFAULT_M: usize = 4;
pub const DEFAULT_R: usize = 4;
pub const DEFAULT_SEED: u64 = 42;

/// Flag values that can override a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub adapter: Option<String>,
    pub dt: Option<usize>,
    pub ds: Option<usize>,
    pub l: Option<usize>,
    pub m: Option<usize>,
    pub r: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    pub out: Option<PathBuf>,
}

/// Recursively overlays `patch` on `base`. The `adapter` object is replaced
/// whole, since its fields depend on its `kind`.
fn overlay(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if k != "adapter" && slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn parse_adapter(name: &str) -> Result<Option<AdapterKind>> {
    match name.to_ascii_lowercase().as_str() {
        "moore" => Ok(None),
        _ => AdapterKind::parse(name)
            .map(Some)
            .ok_or_else(|| MooreError::InvalidSpec(format!("unknown adapter kind {name:?}"))),
    }
}

impl ExperimentConfig {
    /// Reads `path` (if any) as an overlay on the defaults, applies `ov`, and
    /// validates the result.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let seed = ov.seed.unwrap_or(DEFAULT_SEED);
        let mut value = serde_json::to_value(PipelineConfig::desk_default(seed))?;
        let mut out = None;
        if let Some(p) = path {
            let mut patch: Value = serde_json::from_slice(&fs::read(p)?)?;
            let obj: &mut Map<String, Value> = patch
                .as_object_mut()
                .ok_or_else(|| MooreError::InvalidSpec("config must be a JSON object".into()))?;
            if let Some(o) = obj.remove("out") {
                let s = o
                    .as_str()
                    .ok_or_else(|| MooreError::InvalidSpec("\"out\" must be a string".into()))?;
                out = Some(PathBuf::from(s));
            }
            overlay(&mut value, patch);
        }
        let mut pipeline: PipelineConfig = serde_json::from_value(value)
            .map_err(|e| MooreError::InvalidSpec(format!("config: {e}")))?;
        if let Some(s) = ov.seed {
            pipeline.seed = s;
        }
        if let Some(t) = ov.threads {
            pipeline.threads = t;
        }
        if let Some(name) = &ov.adapter {
            pipeline.adapter = match name.as_str() {
                "frozen" => AdapterMode::Frozen {},
                "full_finetune" | "full" => AdapterMode::FullFinetune {},
                _ => match parse_adapter(name)? {
                    None => match pipeline.adapter {
                        AdapterMode::Moore { .. } => pipeline.adapter.clone(),
                        _ => AdapterMode::Moore { d_t: 8, d_s: 4, l: 8 },
                    },
                    Some(kind) => AdapterMode::Baseline {
                        adapter: kind,
                        m: if kind == AdapterKind::LoRA { 1 } else { DEFAULT_M },
                        r: DEFAULT_R,
                        renormalize_top2: false,
                    },
                },
            };
        }
        apply_dims(&mut pipeline.adapter, ov)?;
        pipeline.validate()?;
        Ok(Self {
            pipeline,
            out: ov.out.clone().or(out),
        })
    }
}

fn apply_dims(mode: &mut AdapterMode, ov: &Overrides) -> Result<()> {
    match mode {
        AdapterMode::Moore { d_t, d_s, l } => {
            if ov.m.is_some() || ov.r.is_some() {
                return Err(MooreError::InvalidSpec("--M/--r apply to baseline adapters only".into()));
            }
            *d_t = ov.dt.unwrap_or(*d_t);
            *d_s = ov.ds.unwrap_or(*d_s);
            *l = ov.l.unwrap_or(*l);
        }
        AdapterMode::Baseline { m, r, .. } => {
            if ov.dt.is_some() || ov.ds.is_some() || ov.l.is_some() {
                return Err(MooreError::InvalidSpec("--dt/--ds/--L apply to MoORE only".into()));
            }
            *m = ov.m.unwrap_or(*m);
            *r = ov.r.unwrap_or(*r);
        }
        AdapterMode::Frozen {} | AdapterMode::FullFinetune {} => {
            if ov.dt.is_some() || ov.ds.is_some() || ov.l.is_some() || ov.m.is_some() || ov.r.is_some() {
                return Err(MooreError::InvalidSpec("adapter dims given for a mode without an adapter".into()));
            }
        }
    }
    Ok(())
}
