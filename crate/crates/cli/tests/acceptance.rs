//! Acceptance run: one PASS/FAIL line per criterion at the stated tolerances.
//!
//! Criteria 1-7 run the claim checks with their default setups and a runtime
//! budget. Criterion 8 runs every subcommand twice and compares the reports byte
//! for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use dflab::solvers::SolveOptions;
use dflab::verify::{run_claim, ClaimId, ClaimResult, VerifyConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn claim(id: ClaimId) -> (ClaimResult, Duration) {
    let t = Instant::now();
    let res = run_claim(id, &VerifyConfig::default(), &SolveOptions::default());
    (res, t.elapsed())
}

fn summarize(res: &ClaimResult, elapsed: Duration, budget: Duration, only: Option<&[&str]>) -> Outcome {
    let considered: Vec<_> = res
        .checks
        .iter()
        .filter(|c| only.map_or(true, |names| names.contains(&c.name.as_str())))
        .collect();
    let failed: Vec<String> = considered
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    let in_budget = elapsed <= budget;
    let pass = only.map_or(res.pass, |_| true) && failed.is_empty() && !considered.is_empty() && in_budget;
    let mut detail = format!("{:.1}s of {}s", elapsed.as_secs_f64(), budget.as_secs());
    if !failed.is_empty() {
        detail.push_str("; failed: ");
        detail.push_str(&failed.join("; "));
    }
    if considered.is_empty() {
        detail.push_str("; no checks ran: ");
        detail.push_str(&res.notes.join("; "));
    }
    Outcome { pass, detail }
}

fn criterion_claim(id: ClaimId, budget_s: u64) -> Outcome {
    let (res, t) = claim(id);
    summarize(&res, t, Duration::from_secs(budget_s), None)
}

/// The error-bound claim plus the decomposition identities of the lemma diagnostics.
fn criterion_error_bounds() -> Outcome {
    let (eme, t1) = claim(ClaimId::EMinusEnergy);
    let (s5, t2) = claim(ClaimId::Section5);
    let budget = Duration::from_secs(600);
    let a = summarize(&eme, t1 + t2, budget, None);
    let b = summarize(&s5, t1 + t2, budget, Some(&["identities"]));
    Outcome {
        pass: a.pass && b.pass,
        detail: format!("{}; identities: {}", a.detail, if b.pass { "ok" } else { &b.detail }),
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Every file of a run except the wall-clock metadata.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "metadata.json") {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn run_all(out: &Path, workers: &str) -> Result<(), String> {
    let config = workspace_root().join("configs/default.toml");
    let commands: [(&str, &[&str]); 6] = [
        ("solve-df", &[]),
        ("solve-ephf", &[]),
        ("mittleman", &[]),
        ("sweep", &[]),
        ("dump-model", &[]),
        ("verify", &["--claims", "projector,retraction,second_order,appendix_a"]),
    ];
    for (cmd, extra) in commands {
        let status = Command::new(env!("CARGO_BIN_EXE_dflab"))
            .arg(cmd)
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(out)
            .args(["--seed", "7", "--workers", workers])
            .args(extra)
            .env_remove("OUTPUT_DIR")
            .output()
            .map_err(|e| format!("{cmd}: {e}"))?;
        if !status.status.success() {
            return Err(format!(
                "{cmd} exited with {:?}: {}",
                status.status.code(),
                String::from_utf8_lossy(&status.stderr)
            ));
        }
    }
    Ok(())
}

fn criterion_determinism() -> Outcome {
    let t = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    // Different pool sizes must not change a byte either.
    if let Err(e) = run_all(a.path(), "1").and_then(|_| run_all(b.path(), "4")) {
        return Outcome {
            pass: false,
            detail: e,
        };
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let differing: Vec<String> = sa
        .keys()
        .chain(sb.keys())
        .filter(|k| sa.get(*k) != sb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    Outcome {
        pass: differing.is_empty() && !sa.is_empty(),
        detail: if differing.is_empty() {
            format!("{} files identical over two runs ({:.1}s)", sa.len(), t.elapsed().as_secs_f64())
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    }
}

fn main() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 projector calculus", Box::new(|| criterion_claim(ClaimId::Projector, 120))),
        ("2 retraction contract", Box::new(|| criterion_claim(ClaimId::Retraction, 300))),
        ("3 second-order expansion", Box::new(|| criterion_claim(ClaimId::SecondOrder, 300))),
        ("4 error-bound structure", Box::new(criterion_error_bounds)),
        ("5 max-min gap", Box::new(|| criterion_claim(ClaimId::MittlemanGap, 1800))),
        ("6 no unfilled shells", Box::new(|| criterion_claim(ClaimId::NoUnfilledShells, 300))),
        ("7 orbital norm bounds", Box::new(|| criterion_claim(ClaimId::AppendixB, 600))),
        ("8 determinism", Box::new(criterion_determinism)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
