use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn asub(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asub")).args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64)
}

#[test]
fn bundled_run_accounts_for_every_row_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("rank1_m2.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = asub(&["run", s(&cfg), "--seed", "7", "--out", s(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let rows = read_csv(&a.join("results.csv"));
    let (n_trials, n_methods, n0, budget) = (2, 4, 8, 14);
    assert_eq!(rows.len(), n_trials * n_methods * (budget - n0 + 1));

    // Eval counts climb by one within each (trial, method).
    let mut last: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in &rows {
        let key = (r["trial"].clone(), r["method"].clone());
        let n: usize = r["eval_count"].parse().unwrap();
        if let Some(prev) = last.insert(key, n) {
            assert_eq!(n, prev + 1);
        } else {
            assert_eq!(n, n0);
        }
        assert!(r["wall_ms"].is_empty());
    }

    // Recompute the summary quantiles from the rows.
    let summary: Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in &rows {
        if !r["subspace_error"].is_empty() {
            groups
                .entry((r["method"].clone(), r["eval_count"].parse().unwrap()))
                .or_default()
                .push(r["subspace_error"].parse().unwrap());
        }
    }
    let mut checked = 0;
    for ((method, n), mut v) in groups {
        v.sort_by(f64::total_cmp);
        let pts = summary["methods"][&method].as_array().unwrap();
        let p = pts.iter().find(|p| p["eval_count"].as_u64() == Some(n as u64)).unwrap();
        assert_eq!(p["median"].as_f64().unwrap(), quantile(&v, 0.5));
        assert_eq!(p["q25"].as_f64().unwrap(), quantile(&v, 0.25));
        assert_eq!(p["q75"].as_f64().unwrap(), quantile(&v, 0.75));
        checked += 1;
    }
    assert!(checked > 0);

    let run: Value = serde_json::from_str(&fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    let hash = run["config_hash"].as_str().unwrap();
    assert_eq!(summary["config_hash"].as_str().unwrap(), hash);
    assert!(rows.iter().all(|r| r["config_hash"] == hash));
    assert_eq!(run["seed"].as_u64(), Some(7));
    assert_eq!(run["trials"].as_array().unwrap().len(), n_trials);

    // Same seed, other thread count: same bytes.
    let o = asub(&["run", s(&cfg), "--seed", "7", "--jobs", "2", "--out", s(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["results.csv", "run.json", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    // A different seed is a different configuration.
    let o = asub(&["run", s(&cfg), "--seed", "8", "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("configuration"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_two_with_a_line() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(
        tmp.path(),
        "c.toml",
        "benchmark = \"testfun_2d\"\n\n[run]\nmethods = [\"var1\"]\nn0 = 5\nbudget = 9\nbugdet = 3\n",
    );
    let o = asub(&["run", s(&p), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("c.toml:7:"), "{}", stderr(&o));

    let p =
        write(tmp.path(), "d.toml", "benchmark = \"testfun_2d\"\n[run]\nmethods = [\"var1\"]\nn0 = 5\nbudget = 5\n");
    let o = asub(&["run", s(&p), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("d.toml:5:"), "{}", stderr(&o));

    let p =
        write(tmp.path(), "e.toml", "benchmark = \"testfun_2d\"\n[run]\nmethods = [\"bogus\"]\nn0 = 5\nbudget = 8\n");
    assert_eq!(asub(&["run", s(&p)]).status.code(), Some(2));

    let p = write(
        tmp.path(),
        "f.toml",
        "benchmark = \"testfun_2d\"\ndim = 3\n[run]\nmethods = [\"random\"]\nn0 = 5\nbudget = 8\n",
    );
    assert_eq!(asub(&["run", s(&p)]).status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_one_and_flushes() {
    // The rank-1 quadratic has a one-dimensional subspace, so r = 2 fails
    // once the trial builds its reference.
    let tmp = tempfile::tempdir().unwrap();
    let p = write(
        tmp.path(),
        "c.toml",
        "benchmark = \"rank1_quadratic\"\ndim = 3\nn_trials = 2\n[run]\nmethods = [\"ols\"]\nn0 = 5\nbudget = 8\nr = 2\n",
    );
    let out = tmp.path().join("o");
    let o = asub(&["run", s(&p), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let run: Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["errors"].as_array().unwrap().len(), 2);
    assert!(out.join("results.csv").exists() && out.join("summary.json").exists());
}

#[test]
fn baselines_share_the_random_design() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(
        tmp.path(),
        "c.toml",
        "benchmark = \"rank1_quadratic\"\ndim = 3\nseed = 4\n[run]\nmethods = [\"random\", \"ols\", \"ll\", \"mc_fd\"]\nn0 = 6\nbudget = 14\nn_restarts = 2\n",
    );
    let out = tmp.path().join("o");
    let o = asub(&["run", s(&p), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run: Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    let m = &run["trials"][0]["methods"];
    let gp = &m["random"];
    let ols = &m["ols"];
    let mut xs: Vec<Value> = gp["initial_x"].as_array().unwrap().clone();
    xs.extend(gp["steps"].as_array().unwrap().iter().map(|s| s["x"].clone()));
    assert_eq!(&Value::Array(xs), &ols["x"]);
    assert_eq!(ols["x"], m["ll"]["x"]);

    // Forward differences in 3-D cost 4 evaluations per gradient.
    let rows = read_csv(&out.join("results.csv"));
    for r in rows.iter().filter(|r| r["method"] == "mc_fd") {
        let n: usize = r["eval_count"].parse().unwrap();
        assert_eq!(r["subspace_error"].is_empty(), n < 4);
    }
    assert_eq!(m["mc_fd"]["gradients"].as_u64(), Some(3));
}

fn uq_config(dir: &Path, cov_scale: f64) -> PathBuf {
    write(
        dir,
        &format!("uq{cov_scale}.toml"),
        &format!("benchmark = \"testfun_2d\"\nseed = 2\n[uq]\nsizes = [12, 16]\nn_draws = 40\nn_restarts = 2\ncov_scale = {cov_scale:?}\n"),
    )
}

#[test]
fn uq_tables_agree_between_csv_and_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = asub(&["uq", s(&uq_config(tmp.path(), 1.0)), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_csv(&out.join("uq.csv"));
    let doc: Value = serde_json::from_str(&fs::read_to_string(out.join("uq.json")).unwrap()).unwrap();
    let tables = doc["tables"].as_array().unwrap();
    assert_eq!(rows.len(), 2 * 2);
    for r in &rows {
        let n: u64 = r["n"].parse().unwrap();
        let k: usize = r["index"].parse::<usize>().unwrap() - 1;
        let t = tables.iter().find(|t| t["n"].as_u64() == Some(n)).unwrap();
        let f = |s: &str| s.parse::<f64>().unwrap();
        assert_eq!(f(&r["point"]), t["point"][k].as_f64().unwrap());
        assert_eq!(f(&r["lo95"]), t["lo"][k][0].as_f64().unwrap());
        assert_eq!(f(&r["hi95"]), t["hi"][k][0].as_f64().unwrap());
        assert_eq!(f(&r["lo99"]), t["lo"][k][1].as_f64().unwrap());
        assert_eq!(f(&r["hi99"]), t["hi"][k][1].as_f64().unwrap());
        assert!(f(&r["lo99"]) <= f(&r["lo95"]) && f(&r["hi95"]) <= f(&r["hi99"]));
    }
}

#[test]
fn uq_with_zero_covariance_has_zero_width() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = asub(&["uq", s(&uq_config(tmp.path(), 0.0)), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for r in read_csv(&out.join("uq.csv")) {
        for col in ["lo95", "hi95", "lo99", "hi99", "median"] {
            assert_eq!(r[col], r["point"], "{col}");
        }
    }
}

#[test]
fn estimate_in_one_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write(tmp.path(), "d.csv", "x1,y\n0.1,0.3\n0.4,1.1\n0.7,0.2\n0.9,-0.5\n0.25,0.8\n");
    let out = tmp.path().join("o");
    let o = asub(&["estimate", "--data", s(&data), "--kernel", "g", "--r", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&fs::read_to_string(out.join("subspace.json")).unwrap()).unwrap();
    assert_eq!(doc["m"].as_u64(), Some(1));
    assert_eq!(doc["c"].as_array().unwrap().len(), 1);
    assert_eq!(doc["u"], serde_json::json!([[1.0]]));
    assert!(doc["eigvals"][0].as_f64().unwrap() > 0.0);
    assert!(doc["config_hash"].is_string());
}

#[test]
fn estimate_picks_out_the_second_input() {
    // The test function varies mostly along x2.
    let tmp = tempfile::tempdir().unwrap();
    let mut body = String::from("x1,x2,y\n");
    let mut state = 12345u64;
    let mut unif = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..150 {
        let (a, b) = (unif(), unif());
        body.push_str(&format!("{a},{b},{}\n", 0.1 * (20.0 * a).sin() - 4.0 * b * b));
    }
    let data = write(tmp.path(), "d.csv", &body);
    let out = tmp.path().join("o");
    let o = asub(&["estimate", "--data", s(&data), "--kernel", "m52", "--restarts", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&fs::read_to_string(out.join("subspace.json")).unwrap()).unwrap();
    let lead = doc["eigvecs"][1][0].as_f64().unwrap();
    assert!(lead.abs() > 0.99, "{lead}");
    assert_eq!(doc["suggested_r"].as_u64(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("suggested r = 1"));
}

#[test]
fn malformed_data_exits_two_with_position() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("range.csv", "x1,x2,y\n0.1,0.2,1\n0.3,1.7,2\n", "row 3, column 2"),
        ("text.csv", "0.1,0.2,1\n0.3,zz,2\n", "row 2, column 2"),
        ("ragged.csv", "0.1,0.2,1\n0.3,2\n", "row 2"),
        ("empty.csv", "x1,y\n", "no data rows"),
    ];
    for (name, body, want) in cases {
        let p = write(tmp.path(), name, body);
        let o = asub(&["estimate", "--data", s(&p), "--out", s(&tmp.path().join("o"))]);
        assert_eq!(o.status.code(), Some(2), "{name}");
        assert!(stderr(&o).contains(want), "{name}: {}", stderr(&o));
    }
    let o = asub(&["estimate", "--data", s(&tmp.path().join("range.csv"))]);
    assert!(stderr(&o).contains("rescale"));
    let p = write(tmp.path(), "ok.csv", "0.1,1\n0.5,2\n0.9,0\n");
    let o = asub(&["estimate", "--data", s(&p), "--kernel", "m7", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}
