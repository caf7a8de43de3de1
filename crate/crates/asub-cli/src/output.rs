//! Artifacts written to the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const ARTIFACTS: [&str; 5] = ["results.csv", "run.json", "summary.json", "uq.json", "subspace.json"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config_hash: String,
    pub trial: usize,
    pub method: String,
    pub eval_count: usize,
    /// Empty when no estimate exists yet at this evaluation count.
    pub subspace_error: Option<f64>,
    pub wall_ms: Option<f64>,
    /// Eigenvalues of the estimate, `;`-separated, descending.
    pub eigvals: String,
}

pub fn join_eigvals(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<(), String> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    for r in rows {
        w.serialize(r).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    r.deserialize().map(|row| row.map_err(|e| e.to_string())).collect()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub eval_count: usize,
    pub n: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub mean: f64,
    /// `log10` of the mean error.
    pub log10_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub methods: BTreeMap<String, Vec<SummaryPoint>>,
}

/// Per-method error quantiles at every evaluation count.
pub fn summarize(hash: &str, rows: &[ResultRow]) -> Summary {
    let mut groups: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        if let Some(e) = r.subspace_error {
            groups.entry(r.method.clone()).or_default().entry(r.eval_count).or_default().push(e);
        }
    }
    let methods = groups
        .into_iter()
        .map(|(m, by_n)| {
            let pts = by_n
                .into_iter()
                .map(|(n, mut v)| {
                    v.sort_by(f64::total_cmp);
                    let mean = v.iter().sum::<f64>() / v.len() as f64;
                    SummaryPoint {
                        eval_count: n,
                        n: v.len(),
                        median: quantile(&v, 0.5),
                        q25: quantile(&v, 0.25),
                        q75: quantile(&v, 0.75),
                        mean,
                        log10_mean: mean.log10(),
                    }
                })
                .collect();
            (m, pts)
        })
        .collect();
    Summary { config_hash: hash.to_string(), methods }
}

/// Refuses to write into a directory holding artifacts of a different
/// configuration.
pub fn check_out_dir(dir: &Path, hash: &str) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    for name in ARTIFACTS {
        let p = dir.join(name);
        if !p.exists() {
            continue;
        }
        let found = if name.ends_with(".csv") {
            read_rows(&p).ok().and_then(|rows| rows.first().map(|r| r.config_hash.clone()))
        } else {
            fs::read_to_string(&p)
                .ok()
                .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
                .and_then(|v| v.get("config_hash").and_then(|h| h.as_str()).map(String::from))
        };
        match found {
            Some(h) if h == hash => {}
            Some(h) => {
                return Err(format!(
                    "{} holds output of configuration {h}, not {hash}; use another --out directory",
                    p.display()
                ))
            }
            None => return Err(format!("{} exists but carries no configuration hash", p.display())),
        }
    }
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, v: &S) -> Result<(), String> {
    let s = serde_json::to_string_pretty(v).map_err(|e| e.to_string())?;
    fs::write(path, s + "\n").map_err(|e| format!("{}: {e}", path.display()))
}
