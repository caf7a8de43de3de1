//! Trials of the `run` and `uq` commands.

use std::time::Instant;

use asub::asm_core::{build_w, estimate_c, subspace, subspace_distance, CEstimate, Subspace};
use asub::baselines::{local_linear_c, ols_direction, GradientOracle, FD_STEP};
use asub::benchfns::{lhs, Benchmark, BlackBox};
use asub::gp::{fit, laplace_cov, Bounds, Dataset};
use asub::kernels::KernelFamily;
use asub::rng::{derive_seed, seeded};
use asub::sequential::{run_sequential_with, RunRecord, SeqConfig, Strategy};
use asub::uq::{eigen_intervals, sample_hypers, EigenIntervals};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Method, RunSection, UqSection};
use crate::output::{join_eigvals, ResultRow};

/// Seeds of one trial, echoed into `run.json`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TrialSeeds {
    pub trial: u64,
    pub benchmark: u64,
    pub noise: u64,
    pub reference: u64,
}

impl TrialSeeds {
    pub fn new(seed: u64, trial: usize) -> Self {
        let t = derive_seed(seed, trial as u64);
        Self { trial: t, benchmark: derive_seed(t, 10), noise: derive_seed(t, 11), reference: derive_seed(t, 12) }
    }
}

pub struct TrialOutput {
    pub rows: Vec<ResultRow>,
    pub detail: Value,
    pub errors: Vec<String>,
}

fn benchmark(cfg: &ExperimentConfig, seeds: &TrialSeeds) -> Result<Benchmark<f64>, String> {
    Benchmark::by_name(&cfg.benchmark, cfg.dim, seeds.benchmark).map_err(|e| e.to_string())
}

/// The benchmark's own subspace, or a Monte Carlo estimate from noise-free
/// forward differences when it has none.
fn reference(bench: &Benchmark<f64>, run: &RunSection, seed: u64) -> Result<Subspace<f64>, String> {
    let m = bench.dim();
    if run.r >= m {
        return Err(format!("r = {} must be below the input dimension {m}", run.r));
    }
    if let Some(u) = bench.true_subspace() {
        if u.ncols() != run.r {
            return Err(format!("{} has a {}-dimensional subspace but r = {}", bench.name, u.ncols(), run.r));
        }
        return Subspace::from_basis(&u).map_err(|e| e.to_string());
    }
    let n_grads = run.reference_evals / (m + 1);
    if n_grads == 0 {
        return Err(format!("reference_evals = {} buys no gradient in {m} dimensions", run.reference_evals));
    }
    let mut oracle = GradientOracle::forward_fd(m, |x: &[f64]| bench.value(x), FD_STEP);
    let c = asub::baselines::mc_estimate_c(&mut oracle, n_grads, seed).map_err(|e| e.to_string())?;
    subspace(&c, run.r).map_err(|e| e.to_string())
}

fn eig_list(c: &CEstimate<f64>) -> Vec<f64> {
    c.eigvals.iter().copied().collect()
}

fn error_of(reference: &Subspace<f64>, c: &CEstimate<f64>) -> Option<f64> {
    subspace(c, reference.r()).and_then(|u| subspace_distance(reference, &u)).ok()
}

struct RowSink<'a> {
    hash: &'a str,
    trial: usize,
    method: Method,
    timing: bool,
    start: Instant,
    rows: Vec<ResultRow>,
}

impl RowSink<'_> {
    fn push(&mut self, eval_count: usize, err: Option<f64>, eigvals: &[f64]) {
        let wall_ms = self.timing.then(|| self.start.elapsed().as_secs_f64() * 1e3);
        self.rows.push(ResultRow {
            config_hash: self.hash.to_string(),
            trial: self.trial,
            method: self.method.name().to_string(),
            eval_count,
            subspace_error: err,
            wall_ms,
            eigvals: join_eigvals(eigvals),
        });
    }
}

/// Every method of one trial. Failures are reported in `errors`; the rows
/// produced before a failure are kept.
pub fn run_trial(cfg: &ExperimentConfig, family: KernelFamily, hash: &str, trial: usize) -> TrialOutput {
    let run = cfg.run.as_ref().expect("run section checked by caller");
    let seeds = TrialSeeds::new(cfg.seed, trial);
    let mut out =
        TrialOutput { rows: Vec::new(), detail: json!({ "trial": trial, "seeds": seeds }), errors: Vec::new() };
    let bench = match benchmark(cfg, &seeds) {
        Ok(b) => b,
        Err(e) => {
            out.errors.push(format!("trial {trial}: {e}"));
            return out;
        }
    };
    let reference = match reference(&bench, run, seeds.reference) {
        Ok(r) => r,
        Err(e) => {
            out.errors.push(format!("trial {trial}: reference subspace: {e}"));
            return out;
        }
    };
    out.detail["reference"] = json!(reference.u.iter().copied().collect::<Vec<f64>>());
    let mut methods = serde_json::Map::new();
    for &method in &run.methods {
        let mut sink =
            RowSink { hash, trial, method, timing: run.record_timing, start: Instant::now(), rows: Vec::new() };
        let mut f = bench.clone().with_noise(cfg.noise_sd, seeds.noise);
        let res = match method {
            Method::Trace | Method::Var1 | Method::Var2 | Method::Random => {
                gp_method(run, family, method, seeds.trial, &mut f, &reference, &mut sink)
            }
            Method::McFd => mc_fd(run, seeds.trial, &mut f, &reference, &mut sink),
            Method::Ols | Method::Ll => regression(run, method, seeds.trial, &mut f, &reference, &mut sink),
        };
        let detail = match res {
            Ok(d) => d,
            Err((d, e)) => {
                out.errors.push(format!("trial {trial}, {}: {e}", method.name()));
                d
            }
        };
        methods.insert(method.name().to_string(), detail);
        out.rows.append(&mut sink.rows);
    }
    out.detail["methods"] = Value::Object(methods);
    out
}

type MethodResult = Result<Value, (Value, String)>;

fn strategy(method: Method) -> Strategy {
    match method {
        Method::Trace => Strategy::Trace,
        Method::Var1 => Strategy::Var1,
        Method::Var2 => Strategy::Var2,
        _ => Strategy::Random,
    }
}

fn gp_method(
    run: &RunSection,
    family: KernelFamily,
    method: Method,
    seed: u64,
    f: &mut dyn BlackBox<f64>,
    reference: &Subspace<f64>,
    sink: &mut RowSink<'_>,
) -> MethodResult {
    let cfg = SeqConfig {
        family,
        refit_every: run.refit_every,
        noiseless: run.noiseless,
        n_restarts: run.n_restarts,
        n_candidates: run.n_candidates,
        n_local: run.n_local,
        seed,
        ..SeqConfig::new(run.n0, run.budget, strategy(method))
    };
    let mut emit = |rec: &RunRecord<f64>| match rec.steps.last() {
        None => sink.push(rec.initial_y.len(), rec.initial_error, &rec.initial_eigvals),
        Some(s) => sink.push(s.step + 1, s.subspace_error, &s.eigvals),
    };
    match run_sequential_with(f, &cfg, Some(reference), &mut emit) {
        Ok(rec) => Ok(serde_json::to_value(&rec).expect("record serializes")),
        Err(abort) => Err((serde_json::to_value(&abort.record).expect("record serializes"), abort.reason.to_string())),
    }
}

/// Monte Carlo over forward-difference gradients, drawn as the evaluation
/// budget allows: at `n` evaluations the estimate uses `⌊n/(m+1)⌋` of them.
fn mc_fd(
    run: &RunSection,
    seed: u64,
    f: &mut dyn BlackBox<f64>,
    reference: &Subspace<f64>,
    sink: &mut RowSink<'_>,
) -> MethodResult {
    let m = f.dim();
    let mut r = seeded(derive_seed(seed, 3));
    let mut oracle = GradientOracle::forward_fd(m, |x: &[f64]| f.eval(x), FD_STEP);
    let mut sum = DMatrix::<f64>::zeros(m, m);
    let mut x = vec![0.0; m];
    let mut have = 0;
    let mut current: Option<CEstimate<f64>> = None;
    for n in run.n0..=run.budget {
        let want = n / (m + 1);
        while have < want {
            for v in x.iter_mut() {
                *v = r.random::<f64>();
            }
            let g = match oracle.gradient(&x) {
                Ok(g) => DVector::from_vec(g),
                Err(e) => return Err((json!({ "gradients": have }), e.to_string())),
            };
            sum.ger(1.0, &g, &g, 1.0);
            have += 1;
            current = None;
        }
        if have > 0 && current.is_none() {
            match CEstimate::from_matrix(&sum / have as f64, have, None) {
                Ok(c) => current = Some(c),
                Err(e) => return Err((json!({ "gradients": have }), e.to_string())),
            }
        }
        match &current {
            Some(c) => sink.push(n, error_of(reference, c), &eig_list(c)),
            None => sink.push(n, None, &[]),
        }
    }
    Ok(json!({ "gradients": have, "evaluations": oracle.eval_count() }))
}

/// `ols` and `ll` on the design the `random` strategy would see: the same
/// LHS start followed by the same uniform points.
fn regression(
    run: &RunSection,
    method: Method,
    seed: u64,
    f: &mut dyn BlackBox<f64>,
    reference: &Subspace<f64>,
    sink: &mut RowSink<'_>,
) -> MethodResult {
    let m = f.dim();
    let x0: DMatrix<f64> = lhs(run.n0, m, derive_seed(seed, 1));
    let mut rows: Vec<Vec<f64>> = (0..run.n0).map(|i| x0.row(i).iter().copied().collect()).collect();
    let mut r = seeded(derive_seed(seed, 3));
    for _ in run.n0..run.budget {
        rows.push((0..m).map(|_| r.random::<f64>()).collect());
    }
    let y: Vec<f64> = rows.iter().map(|x| f.eval(x)).collect();
    let k = run.k_neighbors.unwrap_or(3 * m);
    let mut failures = 0;
    for n in run.n0..=run.budget {
        let data = match Dataset::from_rows(&rows[..n], &y[..n]) {
            Ok(d) => d,
            Err(e) => return Err((json!({}), e.to_string())),
        };
        let (err, eig) = match method {
            Method::Ols => match ols_direction(&data) {
                Ok(u) => (subspace_distance(reference, &u).ok(), Vec::new()),
                Err(_) => (None, Vec::new()),
            },
            _ => match local_linear_c(&data, k.min(n)) {
                Ok(ll) => (error_of(reference, &ll.c), eig_list(&ll.c)),
                Err(_) => (None, Vec::new()),
            },
        };
        failures += usize::from(err.is_none());
        sink.push(n, err, &eig);
    }
    Ok(json!({ "x": rows, "y": y, "unestimated_counts": failures }))
}

/// One eigenvalue-interval table.
#[derive(Clone, Debug, Serialize)]
pub struct UqTable {
    pub trial: usize,
    pub n: usize,
    pub levels: Vec<f64>,
    pub point: Vec<f64>,
    pub median: Vec<f64>,
    /// `lo[k][l]`, `hi[k][l]` for eigenvalue `k` at `levels[l]`.
    pub lo: Vec<Vec<f64>>,
    pub hi: Vec<Vec<f64>>,
    pub n_draws: usize,
    pub n_skipped: usize,
    pub lengthscales: Vec<f64>,
    pub variance: f64,
    pub nugget: f64,
}

fn table(trial: usize, n: usize, iv: &EigenIntervals<f64>, spec: &asub::kernels::KernelSpec<f64>) -> UqTable {
    UqTable {
        trial,
        n,
        levels: iv.levels.clone(),
        point: iv.point.clone(),
        median: iv.median.clone(),
        lo: iv.bounds.iter().map(|b| b.iter().map(|p| p.0).collect()).collect(),
        hi: iv.bounds.iter().map(|b| b.iter().map(|p| p.1).collect()).collect(),
        n_draws: iv.n_draws,
        n_skipped: iv.n_skipped,
        lengthscales: spec.lengthscales().to_vec(),
        variance: spec.variance(),
        nugget: spec.nugget(),
    }
}

/// Fits a GP to an LHS of each requested size and propagates Laplace draws
/// of the hyperparameters to the eigenvalues of `C`.
pub fn uq_trial(
    cfg: &ExperimentConfig,
    family: KernelFamily,
    uq: &UqSection,
    trial: usize,
) -> Result<Vec<UqTable>, String> {
    let seeds = TrialSeeds::new(cfg.seed, trial);
    let bench = benchmark(cfg, &seeds)?;
    let m = bench.dim();
    let mut f = bench.with_noise(cfg.noise_sd, seeds.noise);
    let mut out = Vec::new();
    for &n in &uq.sizes {
        let x: DMatrix<f64> = lhs(n, m, derive_seed(seeds.trial, 20 + n as u64));
        let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| f.eval(r)).collect();
        let ctx = |e: asub::Error| format!("trial {trial}, n = {n}: {e}");
        let data = Dataset::from_rows(&rows, &y).map_err(ctx)?;
        let bounds = Bounds::for_data(&data);
        let model = fit(&data, family, &bounds, uq.n_restarts, derive_seed(seeds.trial, 2)).map_err(ctx)?;
        let mut post = laplace_cov(&model, &bounds).map_err(ctx)?;
        post.cov *= uq.cov_scale;
        let draws = sample_hypers(&post, uq.n_draws, &bounds, derive_seed(seeds.trial, 4)).map_err(ctx)?;
        let iv = eigen_intervals(&model, &draws, &uq.levels).map_err(ctx)?;
        out.push(table(trial, n, &iv, model.spec()));
    }
    Ok(out)
}

/// `C` from a fitted GP for the `estimate` command.
pub fn estimate(
    data: &Dataset<f64>,
    family: KernelFamily,
    restarts: usize,
    seed: u64,
) -> Result<CEstimate<f64>, String> {
    let bounds = Bounds::for_data(data);
    let model = fit(data, family, &bounds, restarts, seed).map_err(|e| e.to_string())?;
    let w = build_w(&model);
    estimate_c(&model, &w).map_err(|e| e.to_string())
}
