//! Experiment configuration: a JSON file merged with command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use pliss_lab::models::MODEL_NAMES;
use serde::{Deserialize, Serialize};

pub const EXPERIMENTS: [&str; 10] =
    ["lyapunov", "chi-min", "pliss", "folner", "gibbs", "entropy", "density", "bipliss", "appendix", "all"];

/// Keys a configuration file must carry.
pub const REQUIRED_KEYS: [&str; 3] = ["model", "experiment", "seed"];

/// Bad flags or configuration; the binary exits with status 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    #[serde(default)]
    pub model_params: BTreeMap<String, f64>,
    pub experiment: String,
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub self_test: bool,
    /// Orbit length; the default depends on the experiment.
    #[serde(default)]
    pub n: Option<usize>,
    /// Følner horizon N.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_disk_radius")]
    pub disk_radius: f64,
    #[serde(default = "default_p_max")]
    pub p_max: usize,
    /// Partition or histogram resolution; the default depends on the experiment.
    #[serde(default)]
    pub resolution: Option<usize>,
    #[serde(default)]
    pub block_max: Option<usize>,
    /// Gibbs slack; 0.05 on cat2 and 0.1 elsewhere when absent.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_a_prime")]
    pub a_prime: f64,
    /// Threshold of Gamma in the density experiment; the median score when absent.
    #[serde(default)]
    pub a_pp: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_eps_boundary")]
    pub eps_boundary: f64,
    #[serde(default = "default_eps_mass")]
    pub eps_mass: f64,
    #[serde(default = "default_eps_fill")]
    pub eps_fill: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    /// Random anchors for the distortion and Pliss-iterate checks.
    #[serde(default = "default_anchors")]
    pub anchors: usize,
    #[serde(default = "default_density_anchors")]
    pub density_anchors: usize,
    #[serde(default = "default_gamma_horizon")]
    pub gamma_horizon: usize,
    #[serde(default = "default_density_n_max")]
    pub density_n_max: usize,
    /// Random instances for the synthetic self-tests; per-suite defaults when absent.
    #[serde(default)]
    pub trials: Option<usize>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_horizon() -> usize {
    20_000
}
fn default_levels() -> usize {
    4
}
fn default_samples() -> usize {
    1000
}
fn default_disk_radius() -> f64 {
    0.05
}
fn default_p_max() -> usize {
    4
}
fn default_a() -> f64 {
    0.05
}
fn default_a_prime() -> f64 {
    0.1
}
fn default_gamma() -> f64 {
    0.8
}
fn default_lambda() -> f64 {
    0.5
}
fn default_eps_boundary() -> f64 {
    0.05
}
fn default_eps_mass() -> f64 {
    0.05
}
fn default_eps_fill() -> f64 {
    0.1
}
fn default_m() -> usize {
    50
}
fn default_anchors() -> usize {
    100
}
fn default_density_anchors() -> usize {
    200
}
fn default_gamma_horizon() -> usize {
    12
}
fn default_density_n_max() -> usize {
    20
}

/// Flag values; `None` leaves the file (or default) value in place.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub self_test: bool,
    pub n: Option<usize>,
}

impl ExperimentConfig {
    /// Defaults for a run without a configuration file.
    pub fn new(model: &str, experiment: &str, seed: u64) -> ExperimentConfig {
        let v = serde_json::json!({ "model": model, "experiment": experiment, "seed": seed });
        serde_json::from_value(v).expect("defaults deserialize")
    }

    /// Parses a configuration document; an empty document counts as `{}`.
    pub fn from_json(text: &str) -> Result<ExperimentConfig, UsageError> {
        let text = if text.trim().is_empty() { "{}" } else { text };
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| usage(format!("config is not valid JSON: {e}")))?;
        let obj = v.as_object().ok_or_else(|| usage("config must be a JSON object"))?;
        let missing: Vec<&str> = REQUIRED_KEYS.iter().copied().filter(|k| !obj.contains_key(*k)).collect();
        if !missing.is_empty() {
            return Err(usage(format!(
                "config schema error: missing required keys {missing:?} (required: {REQUIRED_KEYS:?})"
            )));
        }
        serde_json::from_value(v).map_err(|e| usage(format!("config schema error: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig, UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    /// Builds the effective configuration: file values, then flags.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<ExperimentConfig, UsageError> {
        let mut cfg = match file {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => {
                let experiment = flags
                    .experiment
                    .clone()
                    .ok_or_else(|| usage("missing required key \"experiment\" (pass --experiment or --config)"))?;
                ExperimentConfig::new("cat2", &experiment, 0)
            }
        };
        if let Some(v) = &flags.model {
            cfg.model = v.clone();
        }
        if let Some(v) = &flags.experiment {
            cfg.experiment = v.clone();
        }
        if let Some(v) = flags.seed {
            cfg.seed = v;
        }
        if let Some(v) = &flags.out {
            cfg.out = v.clone();
        }
        if flags.jobs.is_some() {
            cfg.jobs = flags.jobs;
        }
        if flags.self_test {
            cfg.self_test = true;
        }
        if flags.n.is_some() {
            cfg.n = flags.n;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        if !MODEL_NAMES.contains(&self.model.as_str()) {
            return Err(usage(format!("unknown model `{}` (expected one of {MODEL_NAMES:?})", self.model)));
        }
        if !EXPERIMENTS.contains(&self.experiment.as_str()) {
            return Err(usage(format!("unknown experiment `{}` (expected one of {EXPERIMENTS:?})", self.experiment)));
        }
        if self.a.is_nan() || self.a_prime.is_nan() || self.a >= self.a_prime {
            return Err(usage("need a < a'"));
        }
        if let Some(a_pp) = self.a_pp {
            if a_pp.is_nan() || a_pp <= self.a_prime {
                return Err(usage("need a' < a''"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(usage("gamma must lie in (0, 1)"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(usage("lambda must lie in (0, 1)"));
        }
        if self.jobs == Some(0) {
            return Err(usage("jobs must be at least 1"));
        }
        if self.p_max == 0 {
            return Err(usage("p_max must be at least 1"));
        }
        if self.levels == 0 || self.horizon < 10 * (1 << self.levels.min(20)) {
            return Err(usage("horizon must be at least 10 * 2^levels"));
        }
        if self.samples < 2 {
            return Err(usage("samples must be at least 2"));
        }
        if !(self.disk_radius > 0.0 && self.disk_radius <= 0.25) {
            return Err(usage("disk_radius must lie in (0, 0.25]"));
        }
        if let Some(n) = self.n {
            let min = self.min_orbit();
            if n < min {
                return Err(usage(format!("n = {n} below the minimum {min} for `{}`", self.experiment)));
            }
        }
        if self.block_max.is_some_and(|b| b < 2) {
            return Err(usage("block_max must be at least 2"));
        }
        if self.resolution == Some(0) {
            return Err(usage("resolution must be positive"));
        }
        if self.epsilon.is_some_and(|e| e < 0.0) {
            return Err(usage("epsilon must be nonnegative"));
        }
        if self.anchors == 0 || self.density_anchors == 0 {
            return Err(usage("anchor counts must be positive"));
        }
        if self.gamma_horizon == 0 || self.density_n_max == 0 {
            return Err(usage("density horizons must be positive"));
        }
        Ok(())
    }

    fn min_orbit(&self) -> usize {
        match self.experiment.as_str() {
            "lyapunov" => pliss_lab::cocycle::LYAPUNOV_WARMUP,
            "chi-min" | "appendix" => 10 * self.p_max,
            "entropy" => 1000,
            _ => 1,
        }
    }

    /// Orbit length for `experiment`, falling back to its default.
    pub fn orbit_len(&self, experiment: &str) -> usize {
        self.n.unwrap_or(match experiment {
            "entropy" => 10_000_000,
            _ => 10_000,
        })
    }

    pub fn epsilon_for(&self, model: &str) -> f64 {
        self.epsilon.unwrap_or(if model == "cat2" { 0.05 } else { 0.1 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_lists_required_keys() {
        let e = ExperimentConfig::from_json("").unwrap_err();
        for k in REQUIRED_KEYS {
            assert!(e.0.contains(k), "{e}");
        }
        assert!(ExperimentConfig::from_json("{}").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let dir = std::env::temp_dir().join(format!("pliss-lab-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.json");
        std::fs::write(&path, r#"{"model": "da2", "experiment": "lyapunov", "seed": 3, "n": 500}"#).unwrap();
        let flags = Overrides { seed: Some(9), n: Some(700), ..Overrides::default() };
        let cfg = ExperimentConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!((cfg.model.as_str(), cfg.seed, cfg.n), ("da2", 9, Some(700)));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_unknown_names_and_bad_thresholds() {
        let mut c = ExperimentConfig::new("cat2", "lyapunov", 1);
        assert!(c.validate().is_ok());
        c.model = "henon".into();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::new("cat2", "nope", 1);
        assert!(c.validate().is_err());
        c.experiment = "pliss".into();
        c.a = 0.2;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"model":"cat2","experiment":"pliss","seed":1,"typo":1}"#).is_err());
    }

    #[test]
    fn missing_experiment_without_file_is_usage_error() {
        assert!(ExperimentConfig::resolve(None, &Overrides::default()).is_err());
        let flags = Overrides { experiment: Some("pliss".into()), self_test: true, ..Overrides::default() };
        let cfg = ExperimentConfig::resolve(None, &flags).unwrap();
        assert!(cfg.self_test);
        assert_eq!(cfg.model, "cat2");
    }
}
