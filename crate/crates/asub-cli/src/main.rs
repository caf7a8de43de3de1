//! `asub`: run active subspace experiments and one-off estimates.

mod config;
mod experiment;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use asub::asm_core::suggest_r;
use asub::gp::Dataset;
use asub::kernels::KernelFamily;
use clap::{Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use config::ExperimentConfig;
use experiment::{run_trial, uq_trial, TrialOutput, TrialSeeds, UqTable};
use output::{check_out_dir, summarize, write_json, write_rows};

#[derive(Parser)]
#[command(name = "asub", version, about = "Active subspace estimation with Gaussian-process surrogates")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the sequential-design experiment described by a config file.
    Run {
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Trials run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Eigenvalue intervals under hyperparameter uncertainty.
    Uq {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate C from a CSV of inputs in [0,1] followed by the response.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "m52")]
        kernel: String,
        /// Subspace dimension; defaults to the suggested one.
        #[arg(long)]
        r: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit 2 for bad input, 1 for failures while computing.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { config, seed, jobs, out } => cmd_run(&config, seed, jobs, out),
        Cmd::Uq { config, seed, out } => cmd_uq(&config, seed, out),
        Cmd::Estimate { data, kernel, r, seed, restarts, out } => cmd_estimate(&data, &kernel, r, seed, restarts, out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<(ExperimentConfig, KernelFamily), Failure> {
    let loaded = ExperimentConfig::load(path)?;
    let mut cfg = loaded.config;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    // Catch unknown benchmarks and dimension mismatches before any work.
    asub::benchfns::Benchmark::<f64>::by_name(&cfg.benchmark, cfg.dim, 0)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok((cfg, loaded.family))
}

fn out_dir(cli: Option<PathBuf>, cfg: &ExperimentConfig, hash: &str) -> Result<PathBuf, Failure> {
    let dir = cli
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("asub-out-{hash}")));
    check_out_dir(&dir, hash).map_err(Failure::Usage)?;
    Ok(dir)
}

fn cmd_run(path: &Path, seed: Option<u64>, jobs: usize, out: Option<PathBuf>) -> Result<(), Failure> {
    let (cfg, family) = load(path, seed)?;
    if cfg.run.is_none() {
        return Err(Failure::Usage(format!("{}: no [run] section", path.display())));
    }
    let hash = cfg.hash();
    let dir = out_dir(out, &cfg, &hash)?;

    let n = cfg.n_trials;
    let slots: Vec<Mutex<Option<TrialOutput>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, n) {
            s.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::SeqCst);
                if t >= n {
                    break;
                }
                let res = run_trial(&cfg, family, &hash, t);
                *slots[t].lock().unwrap() = Some(res);
            });
        }
    });

    let mut rows = Vec::new();
    let mut trials = Vec::new();
    let mut errors = Vec::new();
    for slot in slots {
        let t = slot.into_inner().unwrap().expect("every trial ran");
        rows.extend(t.rows);
        trials.push(t.detail);
        errors.extend(t.errors);
    }
    let io = Failure::Runtime;
    write_rows(&dir.join("results.csv"), &rows).map_err(io)?;
    let run = json!({
        "config_hash": hash,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "seed": cfg.seed,
        "trial_seeds": (0..n).map(|t| TrialSeeds::new(cfg.seed, t)).collect::<Vec<_>>(),
        "trials": trials,
        "errors": errors,
    });
    write_json(&dir.join("run.json"), &run).map_err(io)?;
    write_json(&dir.join("summary.json"), &summarize(&hash, &rows)).map_err(io)?;
    if !errors.is_empty() {
        return Err(Failure::Runtime(format!(
            "{} failure(s), partial results in {}:\n  {}",
            errors.len(),
            dir.display(),
            errors.join("\n  ")
        )));
    }
    println!("{} rows written to {}", rows.len(), dir.display());
    Ok(())
}

fn level_tag(l: f64) -> String {
    format!("{}", (l * 1000.0).round() / 10.0)
}

fn write_uq_csv(path: &Path, hash: &str, tables: &[UqTable], levels: &[f64]) -> Result<(), String> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut header: Vec<String> = ["config_hash", "trial", "n", "index", "point", "median"].map(String::from).to_vec();
    for &l in levels {
        header.push(format!("lo{}", level_tag(l)));
        header.push(format!("hi{}", level_tag(l)));
    }
    w.write_record(&header).map_err(|e| e.to_string())?;
    for t in tables {
        for k in 0..t.point.len() {
            let mut rec = vec![hash.to_string(), t.trial.to_string(), t.n.to_string(), (k + 1).to_string()];
            rec.push(t.point[k].to_string());
            rec.push(t.median[k].to_string());
            for l in 0..levels.len() {
                rec.push(t.lo[k][l].to_string());
                rec.push(t.hi[k][l].to_string());
            }
            w.write_record(&rec).map_err(|e| e.to_string())?;
        }
    }
    w.flush().map_err(|e| e.to_string())
}

fn cmd_uq(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let (cfg, family) = load(path, seed)?;
    let Some(uq) = cfg.uq.clone() else {
        return Err(Failure::Usage(format!("{}: no [uq] section", path.display())));
    };
    let hash = cfg.hash();
    let dir = out_dir(out, &cfg, &hash)?;
    let mut tables = Vec::new();
    let mut error = None;
    for t in 0..cfg.n_trials {
        match uq_trial(&cfg, family, &uq, t) {
            Ok(mut v) => tables.append(&mut v),
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    let io = Failure::Runtime;
    write_uq_csv(&dir.join("uq.csv"), &hash, &tables, &uq.levels).map_err(io)?;
    let doc = json!({ "config_hash": hash, "version": env!("CARGO_PKG_VERSION"), "config": cfg, "tables": tables });
    write_json(&dir.join("uq.json"), &doc).map_err(io)?;
    if let Some(e) = error {
        return Err(Failure::Runtime(format!("{e}; partial tables in {}", dir.display())));
    }
    for t in &tables {
        println!("trial {} n = {}", t.trial, t.n);
        for k in 0..t.point.len() {
            let iv: Vec<String> = (0..uq.levels.len())
                .map(|l| format!("{}%: [{:.6e}, {:.6e}]", level_tag(uq.levels[l]), t.lo[k][l], t.hi[k][l]))
                .collect();
            println!("  λ{} = {:.6e}  {}", k + 1, t.point[k], iv.join("  "));
        }
    }
    Ok(())
}

/// Parses `x1..xm,y` rows; a first row that is not numeric is a header.
fn read_data(path: &Path) -> Result<Dataset<f64>, Failure> {
    let file = path.display().to_string();
    let usage = |msg: String| Failure::Usage(format!("{file}: {msg}"));
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| usage(e.to_string()))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut width = None;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| usage(format!("row {line}: {e}")))?;
        if i == 0 && rec.iter().any(|v| v.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() < 2 {
            return Err(usage(format!("row {line}: need at least one input column and a response")));
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(usage(format!("row {line}: {} columns, expected {w}", rec.len())));
            }
            _ => {}
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (j, v) in rec.iter().enumerate() {
            let x: f64 =
                v.parse().map_err(|_| usage(format!("row {line}, column {}: '{v}' is not a number", j + 1)))?;
            if !x.is_finite() {
                return Err(usage(format!("row {line}, column {}: value is not finite", j + 1)));
            }
            vals.push(x);
        }
        let y = vals.pop().expect("row has a response");
        if let Some(j) = vals.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(usage(format!(
                "row {line}, column {}: input {} is outside [0, 1]; rescale each input to the unit cube, e.g. (x - min)/(max - min)",
                j + 1,
                vals[j]
            )));
        }
        xs.push(vals);
        ys.push(y);
    }
    if xs.is_empty() {
        return Err(usage("no data rows".into()));
    }
    Dataset::from_rows(&xs, &ys).map_err(|e| usage(e.to_string()))
}

fn cmd_estimate(
    data_path: &Path,
    kernel: &str,
    r: Option<usize>,
    seed: u64,
    restarts: usize,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let family = KernelFamily::parse(kernel)
        .ok_or_else(|| Failure::Usage(format!("unknown kernel '{kernel}' (use g, m32 or m52)")))?;
    let data = read_data(data_path)?;
    let m = data.m();
    if let Some(r) = r {
        if r == 0 || r > m {
            return Err(Failure::Usage(format!("--r must lie in 1..={m}, got {r}")));
        }
    }
    let bytes = std::fs::read(data_path).map_err(|e| Failure::Usage(e.to_string()))?;
    let inputs = json!({
        "data_sha256": format!("{:x}", Sha256::digest(&bytes)),
        "kernel": family.short_name(),
        "r": r,
        "seed": seed,
        "restarts": restarts,
    });
    let digest = Sha256::digest(inputs.to_string().as_bytes());
    let hash: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    let dir = out.unwrap_or_else(|| PathBuf::from("."));
    check_out_dir(&dir, &hash).map_err(Failure::Usage)?;

    let mut c = experiment::estimate(&data, family, restarts, seed).map_err(Failure::Runtime)?;
    // Sign convention: the largest-magnitude loading of each vector is positive.
    for k in 0..m {
        let mut col = c.eigvecs.column_mut(k);
        let big = col.iter().fold(0.0f64, |a, &v| if v.abs() > a.abs() { v } else { a });
        if big < 0.0 {
            col.neg_mut();
        }
    }
    let suggested = suggest_r(&c.eigvals);
    let r = r.unwrap_or(suggested);
    let rows = |mat: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
        mat.row_iter().map(|row| row.iter().copied().collect()).collect()
    };
    let u = c.eigvecs.columns(0, r).into_owned();
    let spec = c.spec.clone().expect("GP estimate carries its hyperparameters");
    let doc = json!({
        "config_hash": hash,
        "version": env!("CARGO_PKG_VERSION"),
        "inputs": inputs,
        "n": data.n(),
        "m": m,
        "kernel": family.short_name(),
        "lengthscales": spec.lengthscales(),
        "variance": spec.variance(),
        "nugget": spec.nugget(),
        "c": rows(&c.c),
        "eigvals": c.eigvals.iter().copied().collect::<Vec<_>>(),
        "eigvecs": rows(&c.eigvecs),
        "suggested_r": suggested,
        "r": r,
        "u": rows(&u),
    });
    write_json(&dir.join("subspace.json"), &doc).map_err(Failure::Runtime)?;

    println!("n = {}, m = {m}, kernel = {}", data.n(), family.short_name());
    println!("eigenvalues:");
    for (k, v) in c.eigvals.iter().enumerate() {
        println!("  λ{} = {v:.6e}", k + 1);
    }
    println!("eigenvectors (columns):");
    for i in 0..m {
        let row: Vec<String> = (0..m).map(|k| format!("{:+.6}", c.eigvecs[(i, k)])).collect();
        println!("  x{}: {}", i + 1, row.join(" "));
    }
    println!("suggested r = {suggested} (largest eigenvalue gap)");
    println!("wrote {}", dir.join("subspace.json").display());
    Ok(())
}
