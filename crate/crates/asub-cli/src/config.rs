//! Experiment configuration files.

use std::fmt;
use std::path::Path;

use asub::kernels::KernelFamily;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Trace,
    Var1,
    Var2,
    Random,
    McFd,
    Ols,
    Ll,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Trace => "trace",
            Self::Var1 => "var1",
            Self::Var2 => "var2",
            Self::Random => "random",
            Self::McFd => "mc_fd",
            Self::Ols => "ols",
            Self::Ll => "ll",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: String,
    /// Input dimension, for benchmarks where it is free.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_kernel")]
    pub kernel: String,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of additive output noise; 0 for none.
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default = "one")]
    pub n_trials: usize,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub run: Option<RunSection>,
    #[serde(default)]
    pub uq: Option<UqSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub methods: Vec<Method>,
    pub n0: usize,
    pub budget: usize,
    #[serde(default = "one")]
    pub refit_every: usize,
    /// Pin the GP nugget at 1e-8 instead of estimating it.
    #[serde(default)]
    pub noiseless: bool,
    #[serde(default = "default_restarts")]
    pub n_restarts: usize,
    /// Acquisition candidates per step; default 100·m.
    #[serde(default)]
    pub n_candidates: Option<usize>,
    #[serde(default = "default_local")]
    pub n_local: usize,
    /// Dimension of the subspace whose error is reported.
    #[serde(default = "one")]
    pub r: usize,
    /// Evaluations spent on the Monte Carlo reference when the benchmark
    /// has no known subspace.
    #[serde(default = "default_reference_evals")]
    pub reference_evals: usize,
    /// Neighbourhood size for `ll`; default `3m`.
    #[serde(default)]
    pub k_neighbors: Option<usize>,
    /// Fill the `wall_ms` column. Off by default so reruns are
    /// byte-identical.
    #[serde(default)]
    pub record_timing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UqSection {
    /// Design sizes to fit and report.
    pub sizes: Vec<usize>,
    #[serde(default = "default_draws")]
    pub n_draws: usize,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    /// Multiplies the Laplace covariance before sampling.
    #[serde(default = "unit")]
    pub cov_scale: f64,
    #[serde(default = "default_restarts")]
    pub n_restarts: usize,
}

fn default_kernel() -> String {
    "m52".into()
}
fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn default_restarts() -> usize {
    10
}
fn default_local() -> usize {
    5
}
fn default_reference_evals() -> usize {
    10_000
}
fn default_draws() -> usize {
    500
}
fn default_levels() -> Vec<f64> {
    vec![0.95, 0.99]
}

/// A configuration problem, with the line it refers to when known.
#[derive(Debug)]
pub struct ConfigError {
    pub file: String,
    pub line: Option<usize>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.file, l, self.msg),
            None => write!(f, "{}: {}", self.file, self.msg),
        }
    }
}

/// 1-based line of the first `key = ...` assignment in `src`.
fn line_of(src: &str, key: &str) -> Option<usize> {
    src.lines()
        .position(|l| {
            let t = l.trim_start();
            t.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

pub struct Loaded {
    pub config: ExperimentConfig,
    pub family: KernelFamily,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
        let file = path.display().to_string();
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: file.clone(),
            line: None,
            msg: e.to_string(),
        })?;
        Self::parse(&src, &file)
    }

    pub fn parse(src: &str, file: &str) -> Result<Loaded, ConfigError> {
        let config: ExperimentConfig = toml::from_str(src).map_err(|e| {
            let msg = e.message().to_string();
            // Unknown fields are reported against their table; find the key itself.
            let key = msg.strip_prefix("unknown field `").and_then(|r| r.split('`').next());
            let line = key
                .and_then(|k| line_of(src, k))
                .or_else(|| e.span().map(|s| src[..s.start.min(src.len())].lines().count().max(1)));
            ConfigError { file: file.into(), line, msg }
        })?;
        let err = |key: &str, msg: String| ConfigError { file: file.into(), line: line_of(src, key), msg };
        let family = KernelFamily::parse(&config.kernel)
            .ok_or_else(|| err("kernel", format!("unknown kernel '{}' (use g, m32 or m52)", config.kernel)))?;
        if config.n_trials == 0 {
            return Err(err("n_trials", "n_trials must be at least 1".into()));
        }
        if !(config.noise_sd >= 0.0 && config.noise_sd.is_finite()) {
            return Err(err("noise_sd", "noise_sd must be a finite non-negative number".into()));
        }
        if let Some(r) = &config.run {
            if r.methods.is_empty() {
                return Err(err("methods", "methods must name at least one method".into()));
            }
            if r.n0 < 2 {
                return Err(err("n0", format!("n0 must be at least 2, got {}", r.n0)));
            }
            if r.budget <= r.n0 {
                return Err(err("budget", format!("budget ({}) must exceed n0 ({})", r.budget, r.n0)));
            }
            if r.n_local == 0 {
                return Err(err("n_local", "n_local must be at least 1".into()));
            }
            if r.r == 0 {
                return Err(err("r", "r must be at least 1".into()));
            }
        }
        if let Some(u) = &config.uq {
            if u.sizes.is_empty() || u.sizes.iter().any(|&n| n < 2) {
                return Err(err("sizes", "sizes must list design sizes of at least 2".into()));
            }
            if u.n_draws == 0 {
                return Err(err("n_draws", "n_draws must be at least 1".into()));
            }
            if u.levels.is_empty() || u.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
                return Err(err("levels", "levels must lie in (0, 1)".into()));
            }
            if !(u.cov_scale >= 0.0 && u.cov_scale.is_finite()) {
                return Err(err("cov_scale", "cov_scale must be a finite non-negative number".into()));
            }
        }
        Ok(Loaded { config, family })
    }

    /// Hash of the resolved configuration, embedded in every output.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
