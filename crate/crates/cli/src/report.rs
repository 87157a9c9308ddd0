//! Run manifest and artifact emission.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::experiments::{model_of, start_point, Outcome, Status};

pub fn manifest(cfg: &ExperimentConfig, outcomes: &[Outcome]) -> Result<Value> {
    let model = model_of(cfg)?;
    let x = start_point(model.as_ref(), cfg.seed);
    let experiments: Vec<Value> = outcomes
        .iter()
        .map(|o| {
            json!({
                "experiment": o.experiment,
                "constants": o.constants,
                "metrics": o.metrics,
                "checks": o.checks,
                "artifacts": o.artifacts.iter().map(|a| a.name.as_str()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let pass = outcomes.iter().all(|o| o.checks.iter().all(|c| c.status != Status::Fail));
    Ok(json!({
        "tool": {
            "name": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "core_version": pliss_lab::VERSION,
        },
        "config": serde_json::to_value(cfg)?,
        "seed": cfg.seed,
        "model": {
            "name": model.name(),
            "params": model.params(),
            "manifold": model.manifold().tag(),
            "start_point": x.coords(),
        },
        "experiments": experiments,
        "pass": pass,
    }))
}

/// Writes every artifact and `manifest.json` into `cfg.out`; returns the
/// written paths in order.
pub fn write_outputs(cfg: &ExperimentConfig, outcomes: &[Outcome]) -> Result<Vec<PathBuf>> {
    let dir: &Path = &cfg.out;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for a in outcomes.iter().flat_map(|o| &o.artifacts) {
        let p = dir.join(&a.name);
        std::fs::write(&p, &a.body).with_context(|| format!("writing {}", p.display()))?;
        written.push(p);
    }
    let mut body = serde_json::to_string_pretty(&manifest(cfg, outcomes)?)?;
    body.push('\n');
    let p = dir.join("manifest.json");
    std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
    written.push(p);
    Ok(written)
}
