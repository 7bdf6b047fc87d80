use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use excursets::excursions::set_from_function;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_excursets"))
}

fn write_diag_precision(path: &Path, diag: &[f64]) {
    let mut s = format!("%%MatrixMarket matrix coordinate real symmetric\n{0} {0} {0}\n", diag.len());
    for (i, d) in diag.iter().enumerate() {
        s.push_str(&format!("{} {} {}\n", i + 1, i + 1, d));
    }
    fs::write(path, s).unwrap();
}

fn write_mean(path: &Path, mean: &[f64]) {
    let s: String = mean.iter().map(|m| format!("{m}\n")).collect();
    fs::write(path, s).unwrap();
}

/// Writes a diagonal-precision posterior and returns `(precision, mean)` paths.
fn toy(dir: &Path, name: &str, mean: &[f64], prec: f64) -> (PathBuf, PathBuf) {
    let q = dir.join(format!("{name}_q.mtx"));
    let m = dir.join(format!("{name}_mean.csv"));
    write_diag_precision(&q, &vec![prec; mean.len()]);
    write_mean(&m, mean);
    (q, m)
}

fn run(cmd: &str, q: &Path, m: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(cmd)
        .arg("--precision")
        .arg(q)
        .arg("--mean")
        .arg(m)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

#[test]
fn identity_toy_selects_the_two_positive_nodes() {
    let d = tempfile::tempdir().unwrap();
    let (q, m) = toy(d.path(), "t", &[2.0, 2.0, -2.0], 1.0);
    let out = d.path().join("out");
    let o = run("excursion", &q, &m, &out, &["--level", "0", "--alpha", "0.05", "--family", "one", "--method", "eb"]);
    ok(&o);
    let rows = read_csv(&out.join("function.csv"));
    let flags: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(flags, ["1", "1", "0"]);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["set_size"], 2);
    let p = summary["set_probability"].as_f64().unwrap();
    let se = summary["set_std_error"].as_f64().unwrap();
    let phi2 = excursets::special::norm_cdf(2.0);
    assert!((p - phi2 * phi2).abs() <= 3.0 * se + 1e-9, "{p} ± {se}");
    assert!(out.join("trace.csv").exists());
}

#[test]
fn missing_mean_file_is_an_input_error_naming_the_file() {
    let d = tempfile::tempdir().unwrap();
    let (q, _) = toy(d.path(), "t", &[1.0], 1.0);
    let missing = d.path().join("no_such_mean.csv");
    let o = run("excursion", &q, &missing, &d.path().join("out"), &["--level", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_mean.csv"));
}

#[test]
fn direction_must_match_command() {
    let d = tempfile::tempdir().unwrap();
    let (q, m) = toy(d.path(), "t", &[1.0], 1.0);
    let o = run("excursion", &q, &m, &d.path().join("out"), &["--level", "0", "--direction", "contour"]);
    assert_eq!(o.status.code(), Some(2));
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let d = tempfile::tempdir().unwrap();
    let (q, m) = toy(d.path(), "t", &[1.0, 0.4, -0.3, 2.0, 0.9], 2.0);
    for cmd in ["excursion", "contour"] {
        let a = d.path().join(format!("{cmd}_a"));
        let b = d.path().join(format!("{cmd}_b"));
        ok(&run(cmd, &q, &m, &a, &["--level", "0.2", "--seed", "7", "--particles", "2000"]));
        ok(&run(cmd, &q, &m, &b, &["--level", "0.2", "--seed", "7", "--particles", "2000"]));
        assert_eq!(dir_bytes(&a), dir_bytes(&b), "{cmd}");
    }
}

#[test]
fn rerun_into_same_directory_is_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    let (q, m) = toy(d.path(), "t", &[0.8, 0.1, 1.5], 1.0);
    let out = d.path().join("out");
    ok(&run("contour", &q, &m, &out, &["--level", "0.5", "--family", "avoid2", "--particles", "1000"]));
    let first = dir_bytes(&out);
    ok(&run("contour", &q, &m, &out, &["--level", "0.5", "--family", "avoid2", "--particles", "1000"]));
    assert_eq!(first, dir_bytes(&out));
}

#[test]
fn contour_single_symmetric_node() {
    let d = tempfile::tempdir().unwrap();
    let (q, m) = toy(d.path(), "t", &[0.0], 1.0);
    let out = d.path().join("out");
    ok(&run("contour", &q, &m, &out, &["--level", "0"]));
    let rows = read_csv(&out.join("function.csv"));
    let f: f64 = rows[0][1].parse().unwrap();
    let fc: f64 = rows[0][2].parse().unwrap();
    assert!((f - 0.5).abs() < 1e-12, "{f}");
    assert!((fc - 0.5).abs() < 1e-12, "{fc}");
}

#[test]
fn deterministic_toy_has_empty_contour_region() {
    let d = tempfile::tempdir().unwrap();
    let (q, m) = toy(d.path(), "t", &[3.0, -3.0, 2.0, -1.0], 1e12);
    for alpha in ["0.5", "0.05", "0.001"] {
        let out = d.path().join(format!("out{alpha}"));
        ok(&run("contour", &q, &m, &out, &["--level", "0", "--alpha", alpha]));
        let rows = read_csv(&out.join("function.csv"));
        assert!(rows.iter().all(|r| r[5] == "0"), "alpha {alpha}");
        let s: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(s["contour_region_size"], 0);
    }
}

#[test]
fn mirrored_level_and_mean_swap_side_tags() {
    let d = tempfile::tempdir().unwrap();
    let mean = [1.5, -1.0, 0.3, 2.2, -0.4];
    let neg: Vec<f64> = mean.iter().map(|m| -m).collect();
    let (q1, m1) = toy(d.path(), "a", &mean, 4.0);
    let (q2, m2) = toy(d.path(), "b", &neg, 4.0);
    let o1 = d.path().join("o1");
    let o2 = d.path().join("o2");
    ok(&run("contour", &q1, &m1, &o1, &["--level", "0.2"]));
    ok(&run("contour", &q2, &m2, &o2, &["--level", "-0.2"]));
    let r1 = read_csv(&o1.join("function.csv"));
    let r2 = read_csv(&o2.join("function.csv"));
    let flip = |s: &str| match s {
        "pos" => "neg".to_string(),
        "neg" => "pos".to_string(),
        other => other.to_string(),
    };
    for (a, b) in r1.iter().zip(&r2) {
        assert_eq!(flip(&a[3]), b[3]);
        let (fa, fb): (f64, f64) = (a[1].parse().unwrap(), b[1].parse().unwrap());
        assert!((fa - fb).abs() < 0.02, "{fa} vs {fb}");
    }
}

#[test]
fn emitted_function_reproduces_membership_flags() {
    let d = tempfile::tempdir().unwrap();
    let (q, m) = toy(d.path(), "t", &[1.2, 0.3, 2.5, -0.7, 1.9, 0.05], 3.0);
    for (cmd, flag_col) in [("excursion", 2), ("contour", 4)] {
        for alpha in [0.05, 0.3] {
            let out = d.path().join(format!("{cmd}{alpha}"));
            ok(&run(cmd, &q, &m, &out, &["--level", "0", "--alpha", &alpha.to_string()]));
            let rows = read_csv(&out.join("function.csv"));
            let f: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
            let set = set_from_function(&f, alpha);
            for (i, r) in rows.iter().enumerate() {
                assert_eq!(r[flag_col] == "1", set.contains(&i), "{cmd} alpha {alpha} node {i}");
            }
        }
    }
}

#[test]
fn config_set_input_runs_all_methods() {
    let d = tempfile::tempdir().unwrap();
    toy(d.path(), "c0", &[1.0, 0.5], 1.0);
    toy(d.path(), "c1", &[1.4, 0.9], 2.0);
    let json = r#"[
  {"theta": {"phi": 1.0}, "weight": 0.6, "precision_file": "c0_q.mtx", "mean_file": "c0_mean.csv"},
  {"theta": {"phi": 0.7}, "weight": 0.4, "precision_file": "c1_q.mtx", "mean_file": "c1_mean.csv"}
]"#;
    let cfg = d.path().join("configs.json");
    fs::write(&cfg, json).unwrap();
    for method in ["eb", "qc", "ni"] {
        let out = d.path().join(method);
        let o = bin()
            .args(["excursion", "--level", "0", "--method", method, "--configs"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        ok(&o);
        assert_eq!(read_csv(&out.join("function.csv")).len(), 2);
    }
}

#[test]
fn unknown_example_is_an_input_error() {
    let d = tempfile::tempdir().unwrap();
    let o = bin().args(["verify", "ex9", "--out"]).arg(d.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_ex2_small_passes_and_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for k in 0..2 {
        let out = d.path().join(format!("v{k}"));
        let o = bin()
            .args(["verify", "ex2", "--scale", "8", "--replicates", "2", "--particles", "1000", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        ok(&o);
        outs.push(out);
    }
    assert_eq!(fs::read(outs[0].join("regions.csv")).unwrap(), fs::read(outs[1].join("regions.csv")).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&fs::read(outs[0].join("verify.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
}
