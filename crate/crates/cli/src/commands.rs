use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use moore_core::analysis::{
    conflict_summary, matrix_csv, oblivion_summary, profile_csv, routing_profile, task_correlation, RunLog,
};
use moore_core::baselines::{baseline_paramcount, materialized_paramcount, AdapterKind, AdapterSpec};
use moore_core::grad::RICHARDSON_STEP;
use moore_core::gradcheck::gradcheck_default_grid;
use moore_core::harness::{evaluate_suites, load_run, run_pipeline, Layer1};
use moore_core::linalg::io::load_matrix;
use moore_core::moore::{init_adapter, load_layer, materialized_count, save_layer, MooreConfig};
use moore_core::{MooreDims, MooreError, MooreLayer};
use serde_json::json;

use crate::config::{ExperimentConfig, Overrides, DEFAULT_M, DEFAULT_R, DEFAULT_SEED};
use crate::{Analyze, CliError};

type CmdResult = std::result::Result<(), CliError>;

/// MoORE sizes used when no flag or config sets them.
const DEFAULT_DT: usize = 8;
const DEFAULT_DS: usize = 4;
const DEFAULT_L: usize = 8;
const GRADCHECK_SEED: u64 = 7;

fn moore_config(ov: &Overrides, k: usize) -> MooreConfig {
    MooreConfig {
        d_t: ov.dt.unwrap_or(DEFAULT_DT),
        d_s: ov.ds.unwrap_or(DEFAULT_DS),
        l: ov.l.unwrap_or(DEFAULT_L),
        k,
    }
}

/// Writes one stdout line; a closed pipe ends the process quietly.
fn out_line(line: &str) {
    let mut so = std::io::stdout().lock();
    if let Err(e) = writeln!(so, "{line}").and_then(|_| so.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        log::warn!("stdout: {e}");
    }
}

fn emit(v: serde_json::Value) {
    out_line(&v.to_string());
}

pub fn moeize(input: &Path, output: &Path, tasks: usize, ov: &Overrides) -> CmdResult {
    let w = load_matrix(input)?;
    let layer = MooreLayer::moeize(&w, moore_config(ov, tasks), ov.seed.unwrap_or(DEFAULT_SEED))?;
    save_layer(output, &layer)?;
    log::info!("wrote {}", output.display());
    emit(json!({
        "dims": layer.dims(),
        "sigma": layer.factors().sigma,
        "paramcount": layer.paramcount(),
    }));
    Ok(())
}

pub fn merge(input: &Path, output: &Path) -> CmdResult {
    let layer = load_layer(input)?;
    let merged = layer.merge();
    let err = merged.orthogonality_error();
    let flat = merged.into_layer()?;
    save_layer(output, &flat)?;
    emit(json!({
        "macs_unmerged": layer.flopcount(false),
        "macs_merged": layer.flopcount(true),
        "orthogonality_error": err,
    }));
    Ok(())
}

pub fn show_config(path: Option<&Path>, ov: &Overrides) -> CmdResult {
    let cfg = ExperimentConfig::load(path, ov)?;
    let mut v = serde_json::to_value(&cfg.pipeline)?;
    if let Some(out) = &cfg.out {
        v["out"] = json!(out);
    }
    out_line(&serde_json::to_string_pretty(&v)?);
    Ok(())
}

pub fn train(path: Option<&Path>, ov: &Overrides) -> CmdResult {
    let cfg = ExperimentConfig::load(path, ov)?;
    let out = cfg
        .out
        .ok_or_else(|| CliError::Usage("train needs an output directory (--out or \"out\" in the config)".into()))?;
    let run = run_pipeline(&cfg.pipeline, Some(&out))?;
    let acc = evaluate_suites(&run.adapted, &run.suite_a, &run.suite_b)?;
    emit(json!({
        "out": out,
        "adapter": run.meta.adapter,
        "seed": run.meta.seed,
        "accuracy": acc,
    }));
    Ok(())
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn eval(run_dir: &Path, layer: Option<&Path>, pretrained: bool) -> CmdResult {
    let layer = layer.map(load_layer).transpose()?;
    let run = load_run(run_dir, layer)?;
    let host = if pretrained { &run.pretrained } else { &run.adapted };
    let acc = evaluate_suites(host, &run.suite_a, &run.suite_b)?;
    let ka = run.suite_a.tasks.len();
    emit(json!({
        "adapter": if pretrained { "pretrained".to_string() } else { run.config.adapter.label() },
        "accuracy": acc,
        "suite_a_mean": mean(acc[..ka].iter().map(|a| a.accuracy)),
        "suite_b_mean": mean(acc[ka..].iter().map(|a| a.accuracy)),
    }));
    Ok(())
}

pub fn gradcheck(ov: &Overrides) -> CmdResult {
    let rows = gradcheck_default_grid(ov.seed.unwrap_or(GRADCHECK_SEED), RICHARDSON_STEP)?;
    out_line(&format!(
        "{:<10} {:<6} {:>7} {:>13} {:>9}  status",
        "model", "tensor", "configs", "max_rel_err", "tol"
    ));
    let mut failed = 0;
    for r in &rows {
        let status = if r.pass() { "ok" } else { "FAIL" };
        if !r.pass() {
            failed += 1;
        }
        out_line(&format!(
            "{:<10} {:<6} {:>7} {:>13.3e} {:>9.0e}  {status}",
            r.model, r.tensor, r.configs, r.max_rel_error, r.tolerance
        ));
    }
    if failed > 0 {
        return Err(CliError::GradcheckFailed(failed));
    }
    Ok(())
}

pub fn paramcount(d: usize, k: usize, d_out: Option<usize>, ov: &Overrides) -> CmdResult {
    let kind = match ov.adapter.as_deref() {
        None => None,
        Some(n) if n.eq_ignore_ascii_case("moore") => None,
        Some(n) => Some(AdapterKind::parse(n).ok_or_else(|| CliError::Usage(format!("unknown adapter kind {n:?}")))?),
    };
    let seed = ov.seed.unwrap_or(DEFAULT_SEED);
    match kind {
        None => {
            if ov.m.is_some() || ov.r.is_some() {
                return Err(CliError::Usage("--M/--r apply to baseline adapters only".into()));
            }
            let cfg = moore_config(ov, k);
            if !cfg.l.is_multiple_of(2) {
                return Err(MooreError::OddL(cfg.l).into());
            }
            let dims = MooreDims {
                d_out: d_out.unwrap_or(d),
                d,
                d_t: cfg.d_t,
                d_s: cfg.d_s,
                l: cfg.l,
                k,
            };
            let (router, chain) = init_adapter(d, cfg, seed)?;
            let pc = dims.paramcount();
            emit(json!({
                "adapter": "MoORE",
                "dims": dims,
                "router": pc.router,
                "experts": pc.experts,
                "total": pc.total(),
                "materialized": materialized_count(&router, &chain),
            }));
        }
        Some(kind) => {
            let m = ov.m.unwrap_or(if kind == AdapterKind::LoRA { 1 } else { DEFAULT_M });
            let r = ov.r.unwrap_or(DEFAULT_R);
            let spec = AdapterSpec::init(kind, m, r, k, d, d_out.unwrap_or(d), seed)?;
            let pc = baseline_paramcount(&spec);
            emit(json!({
                "adapter": kind.name(),
                "m": m,
                "r": r,
                "router": pc.router,
                "experts": pc.experts,
                "total": pc.total(),
                "materialized": materialized_paramcount(&spec),
            }));
        }
    }
    Ok(())
}

fn write_out(dir: &Path, name: &str, body: &str) -> CmdResult {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), body)?;
    Ok(())
}

pub fn analyze(what: Analyze, ov: &Overrides) -> CmdResult {
    match what {
        Analyze::Routing { run } => {
            let restored = load_run(&run, None)?;
            let Layer1::Moore(layer) = &restored.adapted.layer1 else {
                return Err(MooreError::InvalidSpec("routing profiles need a MoORE run".into()).into());
            };
            let ka = restored.suite_a.tasks.len();
            let mut profiles = Vec::new();
            for (i, t) in restored.suite_b.tasks.iter().enumerate() {
                let slot = ka + i;
                let feats = t
                    .test
                    .xs
                    .iter()
                    .map(|x| restored.adapted.features(x, slot))
                    .collect::<moore_core::Result<Vec<_>>>()?;
                profiles.push(routing_profile(layer, &feats, slot)?);
            }
            let corr = task_correlation(&profiles)?;
            let dir: PathBuf = ov.out.clone().unwrap_or_else(|| run.join("analysis"));
            for (p, t) in profiles.iter().zip(&restored.suite_b.tasks) {
                write_out(&dir, &format!("profile_{}.csv", t.name), &profile_csv(p))?;
            }
            write_out(&dir, "correlation.csv", &matrix_csv(&corr.matrix))?;
            let rows: Vec<Vec<f64>> = (0..corr.matrix.rows()).map(|i| corr.matrix.row(i).to_vec()).collect();
            emit(json!({
                "tasks": restored.suite_b.names(),
                "correlation": rows,
                "degenerate": corr.degenerate,
                "dir": dir,
            }));
        }
        Analyze::Oblivion { run, percent } => {
            let log = RunLog::load(&run)?;
            let summary = oblivion_summary(&log.log, percent)?;
            emit(serde_json::to_value(summary)?);
        }
        Analyze::Conflict { runs } => {
            let logs = runs.iter().map(RunLog::load).collect::<moore_core::Result<Vec<_>>>()?;
            let summary = conflict_summary(&logs)?;
            let mut adapters: Vec<&str> = summary.cells.iter().map(|c| c.adapter.as_str()).collect();
            adapters.sort_unstable();
            adapters.dedup();
            let curves: serde_json::Map<String, serde_json::Value> = adapters
                .iter()
                .map(|a| (a.to_string(), json!(summary.curve(a))))
                .collect();
            emit(json!({"summary": summary, "curves": curves}));
        }
    }
    Ok(())
}
