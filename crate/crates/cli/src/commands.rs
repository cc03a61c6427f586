//! One function per subcommand. Each returns the exit code after writing its reports.

use dflab::model::ModelSpace;
use dflab::solvers::{self, MittlemanResult, SeaChoice, SolveReport};
use dflab::verify::{self, GapPoint};
use dflab::{build_model, linalg, ClaimResult};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{flag, num, OutDir};
use crate::{CliError, Command, EXIT_CLAIM, EXIT_NUMERIC, EXIT_OK};

pub fn dispatch(cmd: Command, cfg: &RunConfig, out: &OutDir) -> Result<i32, CliError> {
    match cmd {
        Command::SolveDf => solve_df(cfg, out),
        Command::SolveEphf => solve_ephf(cfg, out),
        Command::Mittleman => mittleman(cfg, out),
        Command::Verify => verify(cfg, out),
        Command::Sweep => sweep(cfg, out),
        Command::DumpModel => dump_model(cfg, out),
    }
}

fn model(cfg: &RunConfig) -> Result<ModelSpace, CliError> {
    Ok(build_model(&cfg.model, &cfg.phys)?)
}

fn converged_code(ok: bool) -> i32 {
    if ok {
        EXIT_OK
    } else {
        EXIT_NUMERIC
    }
}

/// `occupations.csv`: eigenvalues of `γ`, descending.
fn write_occupations(out: &OutDir, rep: &SolveReport) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = rep
        .occupations
        .iter()
        .enumerate()
        .map(|(k, o)| vec![k.to_string(), num(*o)])
        .collect();
    out.write_csv("occupations.csv", &["index", "occupation"], &rows)?;
    Ok(())
}

/// `history.csv`: per-iteration residual, energy and step.
fn write_history(out: &OutDir, rep: &SolveReport) -> Result<(), CliError> {
    let n = rep
        .residual_history
        .len()
        .max(rep.energy_history.len())
        .max(rep.step_history.len());
    let at = |v: &Vec<f64>, k: usize| v.get(k).map_or(String::new(), |x| num(*x));
    let rows: Vec<Vec<String>> = (0..n)
        .map(|k| {
            vec![
                k.to_string(),
                at(&rep.residual_history, k),
                at(&rep.energy_history, k),
                at(&rep.step_history, k),
            ]
        })
        .collect();
    out.write_csv("history.csv", &["iteration", "residual", "energy", "step"], &rows)?;
    Ok(())
}

fn solve_df(cfg: &RunConfig, out: &OutDir) -> Result<i32, CliError> {
    let m = model(cfg)?;
    let rep = solvers::solve_df(&m, &cfg.phys, &cfg.solver)?;
    out.write_report("report.json", cfg, &rep)?;
    write_occupations(out, &rep)?;
    write_history(out, &rep)?;
    Ok(converged_code(rep.converged))
}

#[derive(Serialize)]
struct EphfResult<'a> {
    sea: SeaChoice,
    /// The DF solve that produced the sea, when `sea = "df"`.
    df: Option<&'a SolveReport>,
    ephf: &'a SolveReport,
}

fn solve_ephf(cfg: &RunConfig, out: &OutDir) -> Result<i32, CliError> {
    let m = model(cfg)?;
    let (sea, df) = solvers::build_sea(cfg.solver.sea, &m, &cfg.phys, &cfg.solver)?;
    let rep = solvers::solve_ephf(&sea, &m, &cfg.phys, &cfg.solver)?;
    let res = EphfResult {
        sea: cfg.solver.sea,
        df: df.as_ref(),
        ephf: &rep,
    };
    out.write_report("report.json", cfg, &res)?;
    write_occupations(out, &rep)?;
    write_history(out, &rep)?;
    let df_ok = df.as_ref().map_or(true, |r| r.converged);
    Ok(converged_code(rep.converged && df_ok))
}

fn mittleman(cfg: &RunConfig, out: &OutDir) -> Result<i32, CliError> {
    let m = model(cfg)?;
    let res: MittlemanResult = solvers::mittleman(&m, &cfg.phys, &cfg.solver)?;
    out.write_report("report.json", cfg, &res)?;
    let rows: Vec<Vec<String>> = res
        .trajectory
        .iter()
        .map(|s| {
            vec![
                s.k.to_string(),
                num(s.sea_trace),
                num(s.energy),
                s.change.map_or(String::new(), num),
                s.inner_iterations.to_string(),
                flag(s.filled_shell),
                flag(res.monotone),
            ]
        })
        .collect();
    out.write_csv(
        "trajectory.csv",
        &["k", "sea_trace", "energy", "change", "inner_iterations", "filled_shell", "monotone"],
        &rows,
    )?;
    Ok(converged_code(res.converged))
}

#[derive(Serialize)]
struct Manifest {
    pass: bool,
    claims: Vec<ClaimResult>,
}

fn verify(cfg: &RunConfig, out: &OutDir) -> Result<i32, CliError> {
    let ids = cfg.claim_ids();
    // Claims run one after another; the pool parallelizes inside each sweep.
    let mut results = verify::run_claims(&ids, &cfg.verify, &cfg.solver);
    for res in &mut results {
        let tables = std::mem::take(&mut res.tables);
        for t in &tables {
            let name = format!("{}__{}.csv", res.claim_id, t.name);
            out.write_table(&name, t)?;
            res.artifacts.push(name);
        }
    }
    let pass = results.iter().all(|r| r.pass);
    for r in &results {
        println!("{} {}", if r.pass { "PASS" } else { "FAIL" }, r.claim_id);
    }
    let manifest = Manifest { pass, claims: results };
    out.write_report("claims.json", cfg, &manifest)?;
    Ok(if pass { EXIT_OK } else { EXIT_CLAIM })
}

#[derive(Serialize)]
struct SweepResult {
    points: Vec<GapPoint>,
    /// `(sweep value, message)` for points whose solve failed.
    failures: Vec<(f64, String)>,
}

fn sweep(cfg: &RunConfig, out: &OutDir) -> Result<i32, CliError> {
    let spec = cfg
        .sweep_spec()
        .ok_or_else(|| CliError::Config("the sweep command needs a [sweep] section".into()))?;
    let points = spec.points()?;
    let runs: Vec<(f64, Result<GapPoint, dflab::Error>)> = spec
        .values
        .par_iter()
        .zip(points.par_iter())
        .map(|(v, p)| (*v, verify::gap_point(&spec.model, p, &cfg.solver)))
        .collect();
    let mut res = SweepResult {
        points: Vec::new(),
        failures: Vec::new(),
    };
    for (v, r) in runs {
        match r {
            Ok(g) => res.points.push(g),
            Err(e) => res.failures.push((v, e.to_string())),
        }
    }
    out.write_report("report.json", cfg, &res)?;
    let rows: Vec<Vec<String>> = res
        .points
        .iter()
        .map(|g| {
            vec![
                num(g.alpha),
                num(g.c),
                num(g.e_df),
                num(g.e_sea_df),
                num(g.e_estimate),
                num(g.delta),
                num(g.delta_bare),
                g.outer_steps.to_string(),
                flag(g.outer_converged),
                flag(g.filled_shell),
                flag(g.assumption_1),
            ]
        })
        .collect();
    out.write_csv(
        "sweep.csv",
        &[
            "alpha", "c", "e_df", "e_sea_df", "e_estimate", "delta", "delta_bare", "outer_steps", "outer_converged",
            "filled_shell", "assumption_1",
        ],
        &rows,
    )?;
    Ok(converged_code(res.failures.is_empty()))
}

#[derive(Serialize)]
struct ModelSummary {
    backend: String,
    dim: usize,
    n_sites: usize,
    dx: f64,
    soften: f64,
    /// Smallest `|λ|` of the free operator.
    free_gap: f64,
    /// Largest `|λ|` of the free operator.
    free_max: f64,
    /// Largest diagonal entry of the pair kernel.
    w_max: f64,
    min_kernel_eigenvalue: f64,
}

fn dump_model(cfg: &RunConfig, out: &OutDir) -> Result<i32, CliError> {
    let m = model(cfg)?;
    let mut buf = Vec::new();
    m.write_dump(&mut buf)?;
    out.write_bytes("model.txt", &buf)?;
    let ev = &m.free_eigen().values;
    let summary = ModelSummary {
        backend: m.backend.to_string(),
        dim: m.dim,
        n_sites: m.n_sites,
        dx: m.dx,
        soften: m.soften,
        free_gap: ev.iter().fold(f64::INFINITY, |a, v| a.min(v.abs())),
        free_max: ev.iter().fold(0.0, |a: f64, v| a.max(v.abs())),
        w_max: m.w_kernel.diagonal().max(),
        min_kernel_eigenvalue: linalg::min_eigenvalue(&m.w_kernel),
    };
    out.write_report("report.json", cfg, &summary)?;
    Ok(EXIT_OK)
}
