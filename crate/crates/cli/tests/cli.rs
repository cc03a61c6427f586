use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use dflab::linalg::Eigen;
use dflab::{build_model, ModelConfig, PhysParams};

const SMALL: &str = r#"
seed = 3

[model]
backend = "dirac1d"
n_grid = 24
box_len = 10.0

[phys]
alpha = 0.3
c = 10.0
z = 2.0
q = 2

[sweep]
vary = "c"
values = [10.0, 20.0, 40.0, 80.0]
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn dflab(args: &[&str], config: Option<&Path>, out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dflab"));
    cmd.args(args).env_remove("OUTPUT_DIR");
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    if let Some(o) = out {
        cmd.arg("--out").arg(o);
    }
    cmd.output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_df_writes_versioned_report_with_config_and_stamps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = dflab(&["solve-df"], Some(&cfg), Some(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(&dir.path().join("solve-df/report.json"));
    assert_eq!(rep["schema_version"], 1);
    assert_eq!(rep["config"]["phys"]["q"], 2);
    assert_eq!(rep["config"]["seed"], 3);
    assert!(rep["result"]["assumption"]["assumption_1"].is_object());
    assert_eq!(rep["result"]["converged"], true);
    let occ = std::fs::read_to_string(dir.path().join("solve-df/occupations.csv")).unwrap();
    assert!(occ.starts_with("index,occupation\n"));
    assert_eq!(occ.lines().count(), 1 + 48);
    let meta = json(&dir.path().join("solve-df/metadata.json"));
    assert_eq!(meta["exit_code"], 0);
}

#[test]
fn zero_alpha_energy_is_linear_filling() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("alpha = 0.3", "alpha = 0.0");
    let cfg = write_config(dir.path(), &text);
    let o = dflab(&["solve-df"], Some(&cfg), Some(dir.path()));
    assert_eq!(o.status.code(), Some(0));
    let energy = json(&dir.path().join("solve-df/report.json"))["result"]["energy"].as_f64().unwrap();
    // Without interaction the minimizer fills the two lowest positive levels of D - V.
    let p = PhysParams::new(0.0, 10.0, 2.0, 2).unwrap();
    let m = build_model(&ModelConfig::dirac1d(24, 10.0), &p).unwrap();
    let e = Eigen::new(&(&m.d_free - &m.v_mat));
    let pos: Vec<f64> = e.values.iter().cloned().filter(|v| *v > 0.0).take(2).collect();
    let want: f64 = pos.iter().map(|v| v - p.c * p.c).sum();
    assert!((energy - want).abs() <= 1e-9 * p.c * p.c, "{energy} vs {want}");
}

#[test]
fn malformed_config_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[phys2]\nx = 1\n"));
    let o = dflab(&["solve-df"], Some(&cfg), Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 19"), "{err}");

    let cfg = write_config(dir.path(), "[phys]\nalpha = 0.1\nc = 10.0\nz = 1.0\nq = \"two\"\n");
    let o = dflab(&["solve-df"], Some(&cfg), Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 5"));
}

#[test]
fn missing_config_exits_2() {
    let o = dflab(&["solve-df"], None, None);
    assert_eq!(o.status.code(), Some(2));
    let o = dflab(&["solve-df"], Some(Path::new("/nonexistent/run.toml")), None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unconverged_solve_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[solver]\nmax_iter = 1\ntol = 1e-15\n"));
    let o = dflab(&["solve-df"], Some(&cfg), Some(dir.path()));
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn failing_claim_exits_4_and_manifest_lists_it() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[verify.projector]\ninstances = 4\nidentity_tol = 0.0\n");
    let cfg = write_config(dir.path(), &text);
    let o = dflab(&["verify", "--claims", "projector"], Some(&cfg), Some(dir.path()));
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL projector"));
    let man = json(&dir.path().join("verify/claims.json"));
    assert_eq!(man["result"]["pass"], false);
    let claim = &man["result"]["claims"][0];
    assert_eq!(claim["claim_id"], "projector");
    let artifact = claim["artifacts"][0].as_str().unwrap();
    assert!(dir.path().join("verify").join(artifact).exists());
}

#[test]
fn appendix_a_claim_on_tiny_model_is_quick() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let t = Instant::now();
    let o = dflab(&["verify", "--claims", "appendix_a"], Some(&cfg), Some(dir.path()));
    assert!(t.elapsed() < Duration::from_secs(60));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn output_dir_env_is_honoured_and_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let env_dir = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_dflab"))
        .args(["dump-model", "--config"])
        .arg(&cfg)
        .env("OUTPUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(env_dir.join("dump-model/model.txt").exists());

    let flag_dir = dir.path().join("from_flag");
    let o = Command::new(env!("CARGO_BIN_EXE_dflab"))
        .args(["dump-model", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&flag_dir)
        .env("OUTPUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(flag_dir.join("dump-model/report.json").exists());
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = dflab(&["sweep", "--workers", "2"], Some(&cfg), Some(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("alpha,c,e_df,e_sea_df,e_estimate,delta"));
    let cs: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(cs, vec![10.0, 20.0, 40.0, 80.0]);
}

#[test]
fn mittleman_trajectory_has_monotone_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = dflab(&["mittleman"], Some(&cfg), Some(dir.path()));
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("mittleman/trajectory.csv")).unwrap();
    assert!(csv.starts_with("k,sea_trace,energy,change,inner_iterations,filled_shell,monotone\n"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",1")));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for cmd in ["solve-ephf", "sweep"] {
        assert_eq!(dflab(&[cmd, "--workers", "1"], Some(&cfg), Some(&a)).status.code(), Some(0));
        assert_eq!(dflab(&[cmd, "--workers", "3"], Some(&cfg), Some(&b)).status.code(), Some(0));
        for f in ["report.json", "occupations.csv", "sweep.csv"] {
            let (pa, pb) = (a.join(cmd).join(f), b.join(cmd).join(f));
            if pa.exists() {
                assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap(), "{cmd}/{f}");
            }
        }
    }
}
