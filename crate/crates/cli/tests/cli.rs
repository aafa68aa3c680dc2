use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use treebound::exact::brute_force_log_partition;
use treebound::format::save_model;
use treebound::model::{gen_ising_grid, random_tree_ising, triangle_example, Coupling, ModelFamilySpec, PairwiseModel};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_treebound"))
}

fn write_model(dir: &TempDir, name: &str, m: &PairwiseModel) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, save_model(m)).unwrap();
    p
}

fn kv(out: &Output) -> HashMap<String, String> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn bound(path: &Path, method: &str, extra: &[&str]) -> Output {
    bin().arg("bound").arg(path).args(["--method", method]).args(extra).output().unwrap()
}

#[test]
fn triangle_methods_and_exit_codes() {
    let dir = TempDir::new().unwrap();
    let p = write_model(&dir, "triangle.uai", &triangle_example());
    let exact = 4.1f64.ln();

    let up = bound(&p, "trbp", &[]);
    assert_eq!(up.status.code(), Some(0));
    let r = kv(&up);
    assert_eq!(r["direction"], "upper");
    assert_eq!(r["certified"], "true");
    assert!(r["value"].parse::<f64>().unwrap() >= exact);
    assert!(r["error"].parse::<f64>().unwrap() >= 0.0);

    let low = bound(&p, "negtrbp", &["--dump-ensemble"]);
    assert_eq!(low.status.code(), Some(0));
    let r = kv(&low);
    assert_eq!(r["direction"], "lower");
    assert!(r["value"].parse::<f64>().unwrap() <= exact);
    assert!(String::from_utf8_lossy(&low.stdout).contains("mu: "));

    let bp = bound(&p, "loopy-bp", &["--require-certified"]);
    assert_eq!(bp.status.code(), Some(2));
    assert_eq!(kv(&bp)["direction"], "none");
}

#[test]
fn errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.uai");
    assert_eq!(bound(&missing, "trbp", &[]).status.code(), Some(1));

    let bad = dir.path().join("bad.uai");
    std::fs::write(&bad, "MARKOV\n3\n2 2 2\n1\n3 0 1 2\n8\n1 1 1 1 1 1 1 1\n").unwrap();
    let out = bound(&bad, "trbp", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));

    assert_eq!(bin().arg("nonsense").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn output_file_and_ensemble_dump() {
    let dir = TempDir::new().unwrap();
    let p = write_model(&dir, "triangle.uai", &triangle_example());
    let out = dir.path().join("bound.txt");
    let status = bin()
        .args(["bound", p.to_str().unwrap(), "--method", "trbp", "--dump-ensemble", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("model="));
    assert!(text.lines().any(|l| l.contains(" : ")));
}

#[test]
fn weight_surface_on_triangle_and_rejection_elsewhere() {
    let dir = TempDir::new().unwrap();
    let p = write_model(&dir, "triangle.uai", &triangle_example());
    let out = bin().args(["weight-surface", p.to_str().unwrap(), "--resolution", "0.25"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("w1,w2,w3,converged,psi,exceeds_exact"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    let third = rows.iter().find(|r| r[0] == "0.25" && r[1] == "0.25").expect("point present");
    assert_eq!(third[5], "true");
    let neg = rows.iter().find(|r| r[0] == "2" && r[1] == "-0.5").expect("point present");
    assert_eq!(neg[3], "true");
    assert_eq!(neg[5], "false");
    assert!(rows.iter().all(|r| r.iter().take(3).all(|w| w.parse::<f64>().unwrap().abs() >= 1e-3)));

    let g = write_model(&dir, "grid.uai", &gen_ising_grid(&ModelFamilySpec::ising_grid(2, 3, Coupling::Mixed, 1.0, 0)).unwrap());
    assert_eq!(bin().args(["weight-surface", g.to_str().unwrap()]).output().unwrap().status.code(), Some(1));
}

#[test]
fn fig3_is_deterministic_and_exact_at_zero_coupling() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = bin()
            .args(["fig3", "--mode", "mixed", "--rows", "3", "--cols", "3", "--c-grid", "0,1", "--trials", "3", "--seed", "9"])
            .args(["--out", out.to_str().unwrap()])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read_to_string(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    assert!(dir.path().join("a_summary.csv").exists());
    for line in a.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (c, method, err) = (f[0], f[2], f[5].parse::<f64>().unwrap());
        if c == "0" {
            assert!(err.abs() <= 1e-6, "{line}");
        }
        if f[6] == "true" {
            match method {
                "trbp" => assert!(err >= -1e-7, "{line}"),
                _ => assert!(err <= 1e-7, "{line}"),
            }
        }
    }
}

#[test]
fn adapt_trace_on_tree_reaches_exact() {
    let dir = TempDir::new().unwrap();
    let m = random_tree_ising(7, Coupling::Attractive, 1.0, 3).unwrap();
    let exact = brute_force_log_partition(&m).unwrap();
    let p = write_model(&dir, "tree.uai", &m);
    let out = bin().args(["adapt-trace", "--model", p.to_str().unwrap(), "--outer-iters", "6"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<f64>> = text.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][1], rows[0][2]);
    let last = rows.last().unwrap();
    assert!((last[1] - exact).abs() < 1e-6 && (last[2] - exact).abs() < 1e-6);
}

#[test]
fn adapt_trace_generated_grid_shares_first_row() {
    let out = bin().args(["adapt-trace", "--rows", "3", "--cols", "3", "--outer-iters", "8", "--seed", "2"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[1], first[2]);
}
