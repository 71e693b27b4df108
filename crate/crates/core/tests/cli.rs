use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mfg_homog::io::{read_csv, RunManifest};
use sha2::{Digest, Sha256};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mfg-homog"));
    c.env_remove("MFG_HOMOG_JOBS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    read_csv(&fs::read_to_string(path).unwrap()).unwrap()
}

fn column(header: &[String], row: &[String], name: &str) -> f64 {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    row[i].parse().unwrap()
}

#[test]
fn zero_potential_cell_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["cell", "--potential", "zero", "--P", "2", "--alpha", "0.5", "--output-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (h, rows) = table(&dir.path().join("cell.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(column(&h, &rows[0], "H_bar"), 2.0);
}

#[test]
fn separable_cell_lies_in_the_sandwich() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = run(&["cell", "--dim", "1", "--N", "128", "--P", "1.0", "--alpha", "1.0", "--potential", "separable-default", "--output-dir", d]);
    assert!(out.status.success());
    let (h, rows) = table(&dir.path().join("cell.csv"));
    let hb = column(&h, &rows[0], "H_bar");
    let sup = mfg_homog::potential::PotentialSpec::separable_default().sup_norm.unwrap();
    assert!(0.5 - sup - 1e-6 <= hb && hb <= 0.5 + 1e-6, "{hb}");
    assert!(dir.path().join("u.dat").exists() && dir.path().join("m.dat").exists());
}

#[test]
fn manifest_lists_every_file_with_its_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--N", "32", "--p-values", "0,1", "--alphas", "1,2", "--output-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "sweep");
    let mut listed: Vec<&str> = manifest.files.iter().map(|f| f.path.as_str()).collect();
    listed.sort();
    let mut on_disk: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    for f in &manifest.files {
        let bytes = fs::read(dir.path().join(&f.path)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), f.sha256);
    }
    let (_, rows) = table(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 4);
}

#[test]
fn outputs_are_deterministic_across_job_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["sweep", "--N", "32", "--p-values", "0.5,1,2", "--alphas", "0.5,1"];
    let o1 = bin().args(args).args(["--jobs", "1", "--output-dir", a.path().to_str().unwrap()]).output().unwrap();
    let o2 = bin()
        .args(args)
        .args(["--output-dir", b.path().to_str().unwrap()])
        .env("MFG_HOMOG_JOBS", "3")
        .output()
        .unwrap();
    assert!(o1.status.success() && o2.status.success());
    for name in ["sweep.csv", "h_bar_alpha_0.dat", "h_bar_alpha_1.dat"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "command = \"cell\"\n[grid]\nn = 16\n[potential]\nkind = \"zero\"\n[query]\np = [3.0]\nalpha = 1.0\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["--config", cfg.to_str().unwrap(), "--P", "1", "--output-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let (h, rows) = table(&out_dir.join("cell.csv"));
    assert_eq!(column(&h, &rows[0], "H_bar"), 0.5);
}

#[test]
fn invalid_input_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "command = \"cell\"\n[grid\n").unwrap();
    for args in [
        vec!["bake"],
        vec!["cell", "--N", "4"],
        vec!["cell", "--potential", "lumpy"],
        vec!["--config", bad.to_str().unwrap()],
        vec!["--config", "/nonexistent/run.toml"],
        vec!["cell", "--output-dir", "/proc/forbidden/out"],
        vec!["converge", "--epsilons", "1/8,1/16"],
        vec!["evolve", "--epsilon", "0.3"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(3), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn non_convergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["evolve", "--N", "16", "--time-steps", "16", "--coupling-tol", "1e-300", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn selftest_and_fault_hook() {
    let ok = run(&["selftest"]);
    assert!(ok.status.success());
    let text = String::from_utf8(ok.stdout).unwrap();
    assert!(text.lines().filter(|l| l.starts_with("PASS ")).count() >= 12);
    let bad = run(&["selftest", "--inject-fault"]);
    assert_ne!(bad.status.code(), Some(0));
    assert!(String::from_utf8(bad.stdout).unwrap().contains("FAIL adjoint-1d"));
}

#[test]
fn sensitivity_and_evolve_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("s");
    let out = run(&["sensitivity", "--N", "64", "--output-dir", d.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (h, rows) = table(&d.join("sensitivity.csv"));
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(column(&h, r, "defect") < 1e-3);
    }
    let e = dir.path().join("e");
    let out = run(&["evolve", "--N", "32", "--epsilon", "1/4", "--time-steps", "64", "--cole-hopf-steps", "64", "--output-dir", e.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (h, rows) = table(&e.join("evolve.csv"));
    assert_eq!(h, vec!["t", "E", "grad_v_L2_sq", "n_L3_2", "min_density"]);
    assert_eq!(rows.len(), 65);
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(e.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.residuals.contains_key("cole_hopf_defect"));
}

#[test]
fn converge_populates_the_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["converge", "--epsilons", "1/2,1/4,1/8", "--N", "16", "--step-over-eps", "1/16", "--output-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (h, rows) = table(&dir.path().join("converge.csv"));
    assert_eq!(rows.len(), 3);
    let slope = column(&h, &rows[0], "slope");
    assert!(slope.is_finite());
}
