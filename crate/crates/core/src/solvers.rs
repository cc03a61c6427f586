//! Ground-state solvers: the constrained DF minimization, ep-HF minimization
//! against a fixed Dirac sea, and the outer max-min loop over seas.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, Eigen};
use crate::meanfield::{self, MeanField, Sea, DEGENERACY_TOL};
use crate::model::ModelSpace;
use crate::params::{self, AssumptionCheck, DerivedConstants, PhysParams};
use crate::retraction::{self, RetractionOptions, UrCertificate};

/// Occupations within this distance of 0 or 1 count as integral.
pub const FILLED_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DfStrategy {
    /// Damped Aufbau iteration with a retraction after every mixing step.
    Aufbau,
    /// Projected gradient inside the positive subspace, retracted after every step.
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EphfStrategy {
    /// Damped Aufbau in the electron block of the sea.
    Scf,
    /// Projected gradient over the full convex set, positrons allowed.
    Convex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeaChoice {
    /// Sea of the DF minimizer.
    Df,
    /// Sea of the free operator `D`.
    Free,
    /// Sea of `D - V`.
    Bare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    /// Self-consistency tolerance (Frobenius norm).
    pub tol: f64,
    pub max_iter: usize,
    pub df_strategy: DfStrategy,
    pub ephf_strategy: EphfStrategy,
    /// Retraction tolerance; `1e-12 c² q` when absent.
    pub retraction_tol: Option<f64>,
    pub retraction_max_iter: usize,
    pub armijo_factor: f64,
    pub min_step: f64,
    /// Initial step of the gradient strategies.
    pub gradient_step: f64,
    /// Outer-loop energy tolerance for the max-min iteration.
    pub energy_tol: f64,
    pub max_outer: usize,
    /// Retraction radius; `2 (1 + K²) q` from the solved orbitals when absent.
    pub radius: Option<f64>,
    pub sea: SeaChoice,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
            df_strategy: DfStrategy::Aufbau,
            ephf_strategy: EphfStrategy::Scf,
            retraction_tol: None,
            retraction_max_iter: 200,
            armijo_factor: 0.5,
            min_step: 1e-10,
            gradient_step: 1.0,
            energy_tol: 1e-11,
            max_outer: 30,
            radius: None,
            sea: SeaChoice::Df,
        }
    }
}

impl SolveOptions {
    pub fn retraction(&self, p: &PhysParams) -> RetractionOptions {
        RetractionOptions {
            tol_fixed: Some(
                self.retraction_tol
                    .unwrap_or(1e-12 * p.c * p.c * p.q as f64),
            ),
            max_iter: self.retraction_max_iter,
            keep_iterates: false,
        }
    }
}

/// Assumption stamps attached to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionStatus {
    pub radius: f64,
    /// Largest `H¹` norm of the occupied orbitals (the `K` of the default radius).
    pub k_bound: f64,
    pub constants: DerivedConstants,
    pub assumption_1: AssumptionCheck,
    /// `None` when `Z/c ≥ √3/2` puts the condition outside its domain.
    pub ephf_condition: Option<bool>,
}

pub fn assumption_status(p: &PhysParams, k_bound: f64, radius: Option<f64>, trace_g: f64) -> AssumptionStatus {
    let radius = radius.unwrap_or_else(|| params::default_radius(k_bound, p.q));
    let constants = params::derive_constants(p, radius);
    let assumption_1 = params::check_assumption_1(&constants, p, radius);
    AssumptionStatus {
        radius,
        k_bound,
        constants,
        assumption_1,
        ephf_condition: params::check_ephf_condition(p, trace_g).ok(),
    }
}

/// Result of a ground-state computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub kind: String,
    pub strategy: String,
    pub converged: bool,
    pub energy: f64,
    pub trace: f64,
    /// Eigenvalues of `γ`, descending.
    pub occupations: Vec<f64>,
    /// Fermi level: the `q`-th positive eigenvalue of the relevant operator.
    pub nu: f64,
    /// Positive eigenvalues of the relevant operator up to `c²`.
    pub levels: Vec<f64>,
    pub filled_shell: bool,
    /// `‖γ - 1_{(0,ν]}(op)‖_F`.
    pub shell_residual: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub energy_history: Vec<f64>,
    pub step_history: Vec<f64>,
    pub oscillation_detected: bool,
    /// Orbital energies `ε_j = ⟨u_j, op u_j⟩` of the `q` most occupied orbitals.
    pub orbital_energies: Vec<f64>,
    /// `max_j ‖op u_j - ε_j u_j‖`.
    pub orbital_residual_max: f64,
    /// Energy of the determinant built from the `q` most occupied orbitals.
    pub wavefunction_energy: f64,
    /// `‖P⁺ γ P⁺ - γ‖_F` for the sea the state must live in.
    pub positive_residual: f64,
    pub assumption: AssumptionStatus,
    pub ur_certificate: Option<UrCertificate>,
    #[serde(skip)]
    pub gamma: DensityMatrix,
    /// Orbitals of the relevant operator as columns, ascending.
    #[serde(skip)]
    pub operator_eigen: Option<Eigen>,
}

impl SolveReport {
    /// The `q` most occupied eigenvectors of `γ` as columns.
    pub fn occupied_orbitals(&self, q: usize) -> DMatrix<f64> {
        let e = self.gamma.eigen();
        let n = e.dim();
        e.vectors.columns(n - q, q).into_owned()
    }
}

fn check_feasible(m: &ModelSpace, q: usize) -> Result<()> {
    if 4 * q > m.dim {
        return Err(Error::Infeasible(format!(
            "q = {q} exceeds dim/4 = {} for this discretization",
            m.dim / 4
        )));
    }
    Ok(())
}

/// Slack allowed on an energy increase, in units of the roundoff of `ℰ`.
fn energy_slack(p: &PhysParams) -> f64 {
    1e-14 * p.c * p.c * p.q as f64
}

fn retract_state(
    g: DMatrix<f64>,
    m: &ModelSpace,
    p: &PhysParams,
    ropts: &RetractionOptions,
) -> Result<(DensityMatrix, MeanField)> {
    let tr = retraction::retract(&DensityMatrix::from_symmetric(g), m, p, ropts)?;
    let mf = tr.theta_mean_field.expect("retract always returns the final mean field");
    Ok((tr.theta, mf))
}

/// Minimize `E` over `Γ_q⁺`.
pub fn solve_df(m: &ModelSpace, p: &PhysParams, opts: &SolveOptions) -> Result<SolveReport> {
    check_feasible(m, p.q)?;
    let ropts = opts.retraction(p);
    let mf0 = meanfield::mean_field(&DensityMatrix::zeros(m.dim), m, p)?;
    let (mut gamma, mut mf) = retract_state(mf0.aufbau(p.q)?, m, p, &ropts)?;
    let mut energy = meanfield::energy(&gamma, m, p);
    let mut hist = History::default();
    let mut step = match opts.df_strategy {
        DfStrategy::Aufbau => 1.0,
        DfStrategy::Gradient => opts.gradient_step,
    };
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let target = mf.aufbau(p.q)?;
        let res = (gamma.mat() - &target).norm();
        hist.push(res, energy);
        if res <= opts.tol {
            converged = true;
            break;
        }
        let basis = mf.positive_basis();
        let shifted: Vec<f64> = (mf.n_negative..mf.dim())
            .map(|i| mf.eigen.values[i] - p.c * p.c)
            .collect();
        let mut t = step;
        loop {
            let cand = match opts.df_strategy {
                DfStrategy::Aufbau => gamma.mat() * (1.0 - t) + &target * t,
                DfStrategy::Gradient => {
                    let x = basis.transpose() * gamma.mat() * &basis;
                    let mut y = x;
                    for (k, g) in shifted.iter().enumerate() {
                        y[(k, k)] -= t * g;
                    }
                    let x_new = project_box_trace(&y, 0.0, 1.0, p.q as f64);
                    &basis * x_new * basis.transpose()
                }
            };
            let accepted = match retract_state(cand, m, p, &ropts) {
                Ok((theta, theta_mf)) => {
                    let de = meanfield::energy_difference(theta.mat(), gamma.mat(), &mf.d_gamma, m, p);
                    if de <= energy_slack(p) {
                        gamma = theta;
                        mf = theta_mf;
                        energy = meanfield::energy(&gamma, m, p);
                        true
                    } else {
                        false
                    }
                }
                Err(Error::RetractionDiverged(_)) => false,
                Err(e) => return Err(e),
            };
            if accepted {
                break;
            }
            hist.oscillation = true;
            t *= opts.armijo_factor;
            if t < opts.min_step {
                return Err(Error::NonConvergence {
                    what: "DF line search",
                    iterations: hist.residuals.len(),
                    residual: res,
                });
            }
        }
        hist.steps.push(t);
        step = match opts.df_strategy {
            DfStrategy::Aufbau => (2.0 * t).min(1.0),
            DfStrategy::Gradient => (2.0 * t).min(1e8),
        };
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: "DF minimization",
            iterations: hist.residuals.len(),
            residual: hist.residuals.last().copied().unwrap_or(f64::NAN),
        });
    }
    let strategy = format!("{:?}", opts.df_strategy).to_lowercase();
    let positive_residual = (&mf.p_plus * gamma.mat() * &mf.p_plus - gamma.mat()).norm();
    let eigen = mf.eigen.clone();
    let op = mf.d_gamma.clone();
    let mut report = finish_report(
        "df", strategy, gamma, energy, hist, &op, eigen, mf.n_negative, positive_residual, m, p, opts,
    )?;
    report.ur_certificate = Some(retraction::ur_certificate(&report.gamma, m, p, report.assumption.radius)?);
    Ok(report)
}

#[derive(Default)]
struct History {
    residuals: Vec<f64>,
    energies: Vec<f64>,
    steps: Vec<f64>,
    oscillation: bool,
}

impl History {
    fn push(&mut self, res: f64, e: f64) {
        self.residuals.push(res);
        self.energies.push(e);
    }
}

/// Shell and orbital analysis shared by all solvers.
///
/// `op` is the relevant one-body operator in the full space and `eigen` its
/// spectral data restricted to the admissible subspace, with the first
/// `n_negative` eigenvalues negative.
#[allow(clippy::too_many_arguments)]
fn finish_report(
    kind: &str,
    strategy: String,
    gamma: DensityMatrix,
    energy: f64,
    hist: History,
    op: &DMatrix<f64>,
    eigen: Eigen,
    n_negative: usize,
    positive_residual: f64,
    m: &ModelSpace,
    p: &PhysParams,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let c2 = p.c * p.c;
    let q = p.q;
    let fermi_idx = n_negative + q - 1;
    let nu = eigen.values[fermi_idx];
    let shell_top = nu + DEGENERACY_TOL * c2;
    let filled = eigen.projector(|i, v| i >= n_negative && v <= shell_top);
    let shell_residual = (gamma.mat() - filled).norm();
    let occupations: Vec<f64> = gamma.occupations().iter().rev().cloned().collect();
    let integral = occupations
        .iter()
        .all(|o| o.abs() <= FILLED_TOL || (o - 1.0).abs() <= FILLED_TOL);
    let levels: Vec<f64> = eigen
        .values
        .iter()
        .skip(n_negative)
        .cloned()
        .take_while(|v| *v <= c2)
        .collect();

    let report_stub = SolveReport {
        kind: kind.to_string(),
        strategy,
        converged: true,
        energy,
        trace: gamma.trace(),
        occupations,
        nu,
        levels,
        filled_shell: integral && shell_residual <= FILLED_TOL,
        shell_residual,
        iterations: hist.residuals.len(),
        residual_history: hist.residuals,
        energy_history: hist.energies,
        step_history: hist.steps,
        oscillation_detected: hist.oscillation,
        orbital_energies: Vec::new(),
        orbital_residual_max: 0.0,
        wavefunction_energy: 0.0,
        positive_residual,
        assumption: assumption_status(p, 0.0, Some(1.0), 0.0),
        ur_certificate: None,
        gamma,
        operator_eigen: Some(eigen),
    };
    let mut report = report_stub;
    let orbitals = report.occupied_orbitals(q);
    let mut eps = Vec::with_capacity(q);
    let mut res_max: f64 = 0.0;
    let mut k_bound: f64 = 0.0;
    for j in 0..q {
        let u = orbitals.column(j);
        let du = op * u;
        let e = u.dot(&du);
        res_max = res_max.max((du - u * e).norm());
        eps.push(e);
        k_bound = k_bound.max((m.y_weight() * u).norm());
    }
    let det = DensityMatrix::from_symmetric(&orbitals * orbitals.transpose());
    report.wavefunction_energy = meanfield::energy(&det, m, p);
    report.orbital_energies = eps;
    report.orbital_residual_max = res_max;
    report.assumption = assumption_status(p, k_bound, opts.radius, report.trace);
    Ok(report)
}

/// Euclidean projection of a symmetric `y` onto `{lo ≤ X ≤ hi, Tr X = total}`.
pub fn project_box_trace(y: &DMatrix<f64>, lo: f64, hi: f64, total: f64) -> DMatrix<f64> {
    let e = Eigen::new(y);
    let tau = waterfill(&[(e.values.as_slice(), lo, hi)], total);
    let vals = e.values.map(|v| (v - tau).clamp(lo, hi));
    linalg::spectral(&vals, &e.vectors, |v| v)
}

/// Shift `τ` with `Σ clamp(y - τ, lo, hi) = total` over all groups.
fn waterfill(groups: &[(&[f64], f64, f64)], total: f64) -> f64 {
    let sum = |tau: f64| -> f64 {
        groups
            .iter()
            .map(|(ys, lo, hi)| ys.iter().map(|y| (y - tau).clamp(*lo, *hi)).sum::<f64>())
            .sum()
    };
    let ymin = groups.iter().flat_map(|g| g.0.iter()).cloned().fold(f64::INFINITY, f64::min);
    let ymax = groups.iter().flat_map(|g| g.0.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut a = ymin - 2.0;
    let mut b = ymax + 2.0;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if sum(mid) > total {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= f64::EPSILON * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (a + b)
}

/// Minimize `ℰ` over states compatible with the sea `sea`.
pub fn solve_ephf(sea: &Sea, m: &ModelSpace, p: &PhysParams, opts: &SolveOptions) -> Result<SolveReport> {
    check_feasible(m, p.q)?;
    let q = p.q;
    if sea.rank_plus() < q {
        return Err(Error::Infeasible(format!(
            "sea has {} electron states, need {q}",
            sea.rank_plus()
        )));
    }
    let b = &sea.pos_basis;
    let cneg = &sea.neg_basis;
    let compressed = |d: &DMatrix<f64>| -> Eigen { Eigen::new(&(b.transpose() * d * b)) };
    // Electron-block Aufbau target for the operator `d`.
    let target_of = |e: &Eigen| -> Result<(DMatrix<f64>, usize)> {
        let n_neg = e.values.iter().filter(|v| **v <= 0.0).count();
        if n_neg + q > e.dim() {
            return Err(Error::Infeasible("compressed operator has too few positive levels".into()));
        }
        let cols: Vec<usize> = (n_neg..n_neg + q).collect();
        let u = e.vectors.select_columns(&cols);
        let bu = b * u;
        Ok((linalg::symmetrize(&(&bu * bu.transpose())), n_neg))
    };

    let d0 = meanfield::assemble(&DMatrix::zeros(m.dim, m.dim), m, p);
    let (mut gamma, _) = target_of(&compressed(&d0))?;
    let mut d = meanfield::assemble(&gamma, m, p);
    let mut energy = meanfield::energy_of(&gamma, m, p);
    let mut hist = History::default();
    let mut step = match opts.ephf_strategy {
        EphfStrategy::Scf => 1.0,
        EphfStrategy::Convex => opts.gradient_step,
    };
    let c2 = p.c * p.c;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let e = compressed(&d);
        let (target, _) = target_of(&e)?;
        let grad = &d - DMatrix::identity(m.dim, m.dim) * c2;
        let (res, gp, gm) = match opts.ephf_strategy {
            EphfStrategy::Scf => ((&gamma - &target).norm(), None, None),
            EphfStrategy::Convex => {
                let gp = b.transpose() * &grad * b;
                let gm = cneg.transpose() * &grad * cneg;
                let probe = convex_step(&gamma, b, cneg, &gp, &gm, opts.gradient_step, q as f64);
                ((&gamma - probe).norm(), Some(gp), Some(gm))
            }
        };
        hist.push(res, energy);
        if res <= opts.tol {
            converged = true;
            break;
        }
        let mut t = step;
        loop {
            let cand = match opts.ephf_strategy {
                EphfStrategy::Scf => &gamma * (1.0 - t) + &target * t,
                EphfStrategy::Convex => convex_step(
                    &gamma,
                    b,
                    cneg,
                    gp.as_ref().unwrap(),
                    gm.as_ref().unwrap(),
                    t,
                    q as f64,
                ),
            };
            let de = meanfield::energy_difference(&cand, &gamma, &d, m, p);
            if de <= energy_slack(p) {
                gamma = cand;
                d = meanfield::assemble(&gamma, m, p);
                energy = meanfield::energy_of(&gamma, m, p);
                break;
            }
            hist.oscillation = true;
            t *= opts.armijo_factor;
            if t < opts.min_step {
                return Err(Error::NonConvergence {
                    what: "ep-HF line search",
                    iterations: hist.residuals.len(),
                    residual: res,
                });
            }
        }
        hist.steps.push(t);
        step = match opts.ephf_strategy {
            EphfStrategy::Scf => (2.0 * t).min(1.0),
            EphfStrategy::Convex => (2.0 * t).min(1e8),
        };
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: "ep-HF minimization",
            iterations: hist.residuals.len(),
            residual: hist.residuals.last().copied().unwrap_or(f64::NAN),
        });
    }
    let e = compressed(&d);
    let n_neg = e.values.iter().filter(|v| **v <= 0.0).count();
    let full_vectors = b * &e.vectors;
    let eigen = Eigen {
        values: e.values.clone(),
        vectors: full_vectors,
    };
    let positive_residual = (&sea.p_plus * &gamma * &sea.p_plus - &gamma).norm();
    let strategy = format!("{:?}", opts.ephf_strategy).to_lowercase();
    let op = &sea.p_plus * &d * &sea.p_plus;
    finish_report(
        "ephf",
        strategy,
        DensityMatrix::from_symmetric(gamma),
        energy,
        hist,
        &op,
        eigen,
        n_neg,
        positive_residual,
        m,
        p,
        opts,
    )
}

/// One projected-gradient step on the convex ep-HF set.
fn convex_step(
    gamma: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cneg: &DMatrix<f64>,
    gp: &DMatrix<f64>,
    gm: &DMatrix<f64>,
    t: f64,
    q: f64,
) -> DMatrix<f64> {
    let yp = b.transpose() * gamma * b - gp * t;
    let ym = cneg.transpose() * gamma * cneg - gm * t;
    let ep = Eigen::new(&yp);
    let em = Eigen::new(&ym);
    let total = |tau: f64| -> f64 {
        ep.values.iter().map(|y| (y - tau).clamp(0.0, 1.0)).sum::<f64>()
            + em.values.iter().map(|y| (y - tau).clamp(-1.0, 0.0)).sum::<f64>()
    };
    // The trace constraint is an inequality: shift only when it binds.
    let tau = if total(0.0) <= q {
        0.0
    } else {
        waterfill(
            &[(ep.values.as_slice(), 0.0, 1.0), (em.values.as_slice(), -1.0, 0.0)],
            q,
        )
    };
    let xp = linalg::spectral(&ep.values.map(|y| (y - tau).clamp(0.0, 1.0)), &ep.vectors, |v| v);
    let xm = linalg::spectral(&em.values.map(|y| (y - tau).clamp(-1.0, 0.0)), &em.vectors, |v| v);
    linalg::symmetrize(&(b * xp * b.transpose() + cneg * xm * cneg.transpose()))
}

/// Builds the requested sea for a model.
pub fn build_sea(
    choice: SeaChoice,
    m: &ModelSpace,
    p: &PhysParams,
    opts: &SolveOptions,
) -> Result<(Sea, Option<SolveReport>)> {
    match choice {
        SeaChoice::Df => {
            let rep = solve_df(m, p, opts)?;
            let sea = Sea::of_density(&rep.gamma, m, p)?;
            Ok((sea, Some(rep)))
        }
        SeaChoice::Free => Ok((Sea::free(m)?, None)),
        SeaChoice::Bare => Ok((
            Sea::of_density(&DensityMatrix::zeros(m.dim), m, &p.with_alpha(0.0))?,
            None,
        )),
    }
}

/// One outer step of the max-min iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MittlemanStep {
    pub k: usize,
    /// Trace of the state whose sea was used (0 for the free and bare seas).
    pub sea_trace: f64,
    pub energy: f64,
    pub change: Option<f64>,
    pub inner_iterations: usize,
    pub filled_shell: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MittlemanResult {
    /// Largest ep-HF energy seen: a lower estimate of the max-min energy.
    pub e_q_estimate: f64,
    pub trajectory: Vec<MittlemanStep>,
    /// Energies nondecreasing within ten times the solver tolerance.
    pub monotone: bool,
    pub converged: bool,
    pub seed: SeaChoice,
    /// DF energy when the seed required a DF solve.
    pub df_energy: Option<f64>,
    #[serde(skip)]
    pub last: Option<SolveReport>,
}

pub fn mittleman(m: &ModelSpace, p: &PhysParams, opts: &SolveOptions) -> Result<MittlemanResult> {
    let (sea, df) = build_sea(opts.sea, m, p, opts)?;
    let sea_trace = df.as_ref().map_or(0.0, |r| r.trace);
    let mut res = mittleman_from(sea, sea_trace, m, p, opts)?;
    res.df_energy = df.map(|r| r.energy);
    Ok(res)
}

/// The outer loop started from a given sea; `sea_trace` is the trace of the
/// state that produced it.
pub fn mittleman_from(
    mut sea: Sea,
    mut sea_trace: f64,
    m: &ModelSpace,
    p: &PhysParams,
    opts: &SolveOptions,
) -> Result<MittlemanResult> {
    let mut trajectory: Vec<MittlemanStep> = Vec::new();
    let mut last: Option<SolveReport> = None;
    let mut converged = false;
    for k in 0..opts.max_outer.max(1) {
        let rep = solve_ephf(&sea, m, p, opts)?;
        let change = trajectory.last().map(|s| rep.energy - s.energy);
        trajectory.push(MittlemanStep {
            k,
            sea_trace,
            energy: rep.energy,
            change,
            inner_iterations: rep.iterations,
            filled_shell: rep.filled_shell,
        });
        sea = Sea::of_density(&rep.gamma, m, p)?;
        sea_trace = rep.trace;
        last = Some(rep);
        if change.is_some_and(|d| d.abs() <= opts.energy_tol) || p.alpha == 0.0 {
            converged = true;
            break;
        }
    }
    let slack = 10.0 * opts.tol.max(opts.energy_tol);
    let monotone = trajectory
        .windows(2)
        .all(|w| w[1].energy >= w[0].energy - slack);
    let e_q_estimate = trajectory
        .iter()
        .map(|s| s.energy)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(MittlemanResult {
        e_q_estimate,
        trajectory,
        monotone,
        converged,
        seed: opts.sea,
        df_energy: None,
        last,
    })
}

/// Direction exchanging weight between two orbitals of a partially filled shell.
#[derive(Debug, Clone)]
pub struct ShellSwap {
    pub h: DMatrix<f64>,
    pub psi_a: DVector<f64>,
    pub psi_b: DVector<f64>,
    /// Indices into the shell's occupation eigenbasis.
    pub a_idx: usize,
    pub b_idx: usize,
    pub mu_a: f64,
    pub mu_b: f64,
    /// Admissible steps are `t ∈ (0, t_max]`.
    pub t_max: f64,
    pub nu: f64,
}

/// Finds a shell-swap direction in the Fermi shell of a DF report, if the shell is open.
pub fn shell_swap_direction(report: &SolveReport, m: &ModelSpace, p: &PhysParams) -> Result<Option<ShellSwap>> {
    let mf = meanfield::mean_field(&report.gamma, m, p)?;
    let c2 = p.c * p.c;
    let tol = DEGENERACY_TOL * c2;
    let nu = report.nu;
    let shell: Vec<usize> = (mf.n_negative..mf.dim())
        .filter(|&i| (mf.eigen.values[i] - nu).abs() < tol)
        .collect();
    if shell.len() < 2 {
        return Ok(None);
    }
    let f = mf.eigen.vectors.select_columns(&shell);
    let occ = Eigen::new(&(f.transpose() * report.gamma.mat() * &f));
    let k = occ.dim();
    let (mu_a, mu_b) = (occ.values[0], occ.values[k - 1]);
    let open = occ
        .values
        .iter()
        .any(|o| *o > FILLED_TOL && *o < 1.0 - FILLED_TOL);
    if !open {
        return Ok(None);
    }
    let psi_a = &f * occ.vectors.column(0);
    let psi_b = &f * occ.vectors.column(k - 1);
    let h = &psi_a * psi_a.transpose() - &psi_b * psi_b.transpose();
    Ok(Some(ShellSwap {
        h,
        psi_a,
        psi_b,
        a_idx: 0,
        b_idx: k - 1,
        mu_a,
        mu_b,
        t_max: (1.0 - mu_a).min(mu_b),
        nu,
    }))
}

/// Self-consistent state with the Fermi shell occupied uniformly.
///
/// Below the shell every level is full; the remaining electrons are spread
/// evenly over the degenerate Fermi shell. On a mirror-symmetric model with an
/// odd electron count this is the symmetric open-shell critical point.
pub fn solve_df_uniform_shell(m: &ModelSpace, p: &PhysParams, opts: &SolveOptions) -> Result<SolveReport> {
    check_feasible(m, p.q)?;
    let ropts = opts.retraction(p);
    let c2 = p.c * p.c;
    let build = |mf: &MeanField| -> DMatrix<f64> {
        let start = mf.n_negative;
        let nu = mf.eigen.values[start + p.q - 1];
        let below: Vec<usize> = (start..mf.dim())
            .filter(|&i| mf.eigen.values[i] < nu - DEGENERACY_TOL * c2)
            .collect();
        let shell: Vec<usize> = (start..mf.dim())
            .filter(|&i| (mf.eigen.values[i] - nu).abs() < DEGENERACY_TOL * c2)
            .collect();
        let frac = (p.q - below.len()) as f64 / shell.len() as f64;
        linalg::projector_onto(&mf.eigen.vectors, &below)
            + linalg::projector_onto(&mf.eigen.vectors, &shell) * frac
    };
    let mf0 = meanfield::mean_field(&DensityMatrix::zeros(m.dim), m, p)?;
    let (mut gamma, mut mf) = retract_state(build(&mf0), m, p, &ropts)?;
    let mut hist = History::default();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let target = build(&mf);
        let res = (gamma.mat() - &target).norm();
        hist.push(res, meanfield::energy(&gamma, m, p));
        if res <= opts.tol {
            converged = true;
            break;
        }
        let (g, f) = retract_state(target, m, p, &ropts)?;
        gamma = g;
        mf = f;
        hist.steps.push(1.0);
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: "uniform-shell iteration",
            iterations: hist.residuals.len(),
            residual: hist.residuals.last().copied().unwrap_or(f64::NAN),
        });
    }
    let energy = meanfield::energy(&gamma, m, p);
    let positive_residual = (&mf.p_plus * gamma.mat() * &mf.p_plus - gamma.mat()).norm();
    let eigen = mf.eigen.clone();
    let op = mf.d_gamma.clone();
    finish_report(
        "df",
        "uniform_shell".into(),
        gamma,
        energy,
        hist,
        &op,
        eigen,
        mf.n_negative,
        positive_residual,
        m,
        p,
        opts,
    )
}

/// Occupied-orbital norms used by the eigenfunction bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitalNorms {
    /// `⟨u, (1 - Δ) u⟩^{1/2}` per orbital.
    pub h1: Vec<f64>,
    /// Norm of the lower spinor component per orbital.
    pub lower: Vec<f64>,
}

pub fn orbital_norms(report: &SolveReport, m: &ModelSpace, q: usize) -> OrbitalNorms {
    let orbitals = report.occupied_orbitals(q);
    let mut h1 = Vec::with_capacity(q);
    let mut lower = Vec::with_capacity(q);
    for u in orbitals.column_iter() {
        h1.push((m.y_weight() * u).norm());
        let low: f64 = (0..m.n_sites)
            .map(|i| u[m.n_spinor * i + 1].powi(2))
            .sum();
        lower.push(low.sqrt());
    }
    OrbitalNorms { h1, lower }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};

    #[test]
    fn box_trace_projection_is_feasible() {
        let y = DMatrix::from_fn(5, 5, |i, j| if i == j { i as f64 - 1.5 } else { 0.1 });
        let x = project_box_trace(&y, 0.0, 1.0, 2.0);
        let e = Eigen::new(&x);
        assert!((x.trace() - 2.0).abs() < 1e-12);
        assert!(e.values.iter().all(|v| *v > -1e-12 && *v < 1.0 + 1e-12));
    }

    #[test]
    fn infeasible_electron_count() {
        let p = PhysParams::new(0.1, 2.0, 1.0, 3).unwrap();
        let m = build_model(&ModelConfig::synthetic(8, 0), &p).unwrap();
        assert!(matches!(solve_df(&m, &p, &SolveOptions::default()), Err(Error::Infeasible(_))));
    }

    #[test]
    fn linear_model_is_one_step() {
        let p = PhysParams::new(0.0, 3.0, 1.0, 2).unwrap();
        let m = build_model(&ModelConfig::synthetic(16, 2), &p).unwrap();
        let rep = solve_df(&m, &p, &SolveOptions::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        let mf = meanfield::mean_field(&DensityMatrix::zeros(m.dim), &m, &p).unwrap();
        let k = mf.n_negative;
        let expect = mf.eigen.values[k] + mf.eigen.values[k + 1] - 2.0 * p.c * p.c;
        assert!((rep.energy - expect).abs() < 1e-12 * p.c * p.c);
        assert!(rep.filled_shell);
    }
}
