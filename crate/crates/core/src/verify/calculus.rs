use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rel_change, seeded, slope_check, tight_retraction, ClaimId, ClaimResult, SweepSpec, Table, Vary};
use crate::density::{self, DensityMatrix};
use crate::error::{Error, Result};
use crate::linalg;
use crate::meanfield;
use crate::model::{build_model, ModelConfig, ModelSpace};
use crate::params::{self, PhysParams};
use crate::retraction::{self, RetractionOptions, RATIO_NOISE};
use crate::solvers::{self, SolveOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectorSetup {
    pub instances: usize,
    pub min_dim: usize,
    /// At most 64.
    pub max_dim: usize,
    pub alpha: f64,
    pub c: f64,
    pub z: f64,
    pub q: usize,
    pub seed: u64,
    /// Redraws allowed per instance after a gap collapse.
    pub max_redraws: usize,
    pub fd_steps: Vec<f64>,
    pub fd_slope_tol: f64,
    pub identity_tol: f64,
}

impl Default for ProjectorSetup {
    fn default() -> Self {
        Self {
            instances: 1000,
            min_dim: 8,
            max_dim: 32,
            alpha: 1.0,
            c: 2.0,
            z: 1.0,
            q: 2,
            seed: 0,
            max_redraws: 20,
            fd_steps: vec![1e-3, 1e-4, 1e-5],
            fd_slope_tol: 0.2,
            identity_tol: 1e-12,
        }
    }
}

struct ProjectorSample {
    dim: usize,
    redraws: usize,
    identity: f64,
    block: f64,
    fd_errors: Vec<f64>,
    fd_slope: f64,
}

fn is_gap_failure(e: &Error) -> bool {
    matches!(e, Error::GapCollapse { .. } | Error::DegeneratePair { .. })
}

fn projector_sample(s: &ProjectorSetup, p: &PhysParams, i: usize) -> Result<ProjectorSample> {
    let span = (s.max_dim - s.min_dim) / 2 + 1;
    let mut last = None;
    for attempt in 0..=s.max_redraws {
        let mut rng = seeded(s.seed, &[1, i as u64, attempt as u64]);
        let dim = s.min_dim + 2 * rng.gen_range(0..span);
        let m = build_model(&ModelConfig::synthetic(dim, rng.gen()), p)?;
        let g = super::random_state(&mut rng, dim, s.q, None);
        let h = linalg::symmetrize(&linalg::gaussian_matrix(&mut rng, dim, dim));
        let h = &h / linalg::op_norm_sym(&h);
        match projector_instance(&m, p, &g, &h, &s.fd_steps) {
            Ok((identity, block, fd_errors)) => {
                let fd_slope = linalg::fit_loglog(&s.fd_steps, &fd_errors).slope;
                return Ok(ProjectorSample {
                    dim,
                    redraws: attempt,
                    identity,
                    block,
                    fd_errors,
                    fd_slope,
                });
            }
            Err(e) if is_gap_failure(&e) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Precondition("no instance drawn".into())))
}

fn projector_instance(
    m: &ModelSpace,
    p: &PhysParams,
    g: &DensityMatrix,
    h: &DMatrix<f64>,
    steps: &[f64],
) -> Result<(f64, f64, Vec<f64>)> {
    let mf = meanfield::mean_field(g, m, p)?;
    let (pp, pm) = (&mf.p_plus, &mf.p_minus);
    let id = DMatrix::<f64>::identity(m.dim, m.dim);
    let identity = [
        (pp * pp - pp).norm(),
        (pm * pm - pm).norm(),
        (pp + pm - &id).norm(),
        (pp * pm).norm(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let dp = meanfield::dp_plus(h, &mf, m, p)?;
    let scale = dp.norm().max(1.0);
    let block = (pp * &dp * pp).norm().max((pm * &dp * pm).norm()) / scale;
    let mut errors = Vec::with_capacity(steps.len());
    for &t in steps {
        let shifted = DensityMatrix::from_symmetric(g.mat() + h * t);
        let mft = meanfield::mean_field(&shifted, m, p)?;
        errors.push(((&mft.p_plus - pp) / t - &dp).norm());
    }
    Ok((identity, block, errors))
}

/// Projector identities, the block structure of `dP⁺` and its first-order accuracy.
pub fn check_projector(s: &ProjectorSetup) -> Result<ClaimResult> {
    if s.max_dim > 64 || s.min_dim < 8 || s.min_dim > s.max_dim || s.min_dim % 2 == 1 {
        return Err(Error::Config(format!(
            "projector dims must satisfy 8 <= min_dim <= max_dim <= 64 with even min_dim, got {}..{}",
            s.min_dim, s.max_dim
        )));
    }
    if s.fd_steps.len() < 2 {
        return Err(Error::Config("projector check needs at least two finite-difference steps".into()));
    }
    let p = PhysParams::new(s.alpha, s.c, s.z, s.q)?;
    let mut res = ClaimResult::new(
        ClaimId::Projector,
        "P⁺ and P⁻ are complementary orthogonal projectors; dP⁺ is off-diagonal in the P^± blocks and matches finite differences to first order",
        &format!(
            "identities {:e}; blocks {:e} relative; finite-difference slope 1 ± {}",
            s.identity_tol, s.identity_tol, s.fd_slope_tol
        ),
    );
    let samples: Vec<Result<ProjectorSample>> =
        (0..s.instances).into_par_iter().map(|i| projector_sample(s, &p, i)).collect();

    let mut table = Table::new(
        "projector",
        &["instance", "dim", "redraws", "identity", "block", "fd_err_0", "fd_err_last", "fd_slope"],
    );
    let (mut evaluated, mut redraws, mut failed) = (0usize, 0usize, 0usize);
    let (mut worst_id, mut worst_block, mut worst_slope_dev) = (0.0f64, 0.0f64, 0.0f64);
    let (mut slope_min, mut slope_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, smp) in samples.iter().enumerate() {
        match smp {
            Ok(smp) => {
                evaluated += 1;
                redraws += smp.redraws;
                worst_id = worst_id.max(smp.identity);
                worst_block = worst_block.max(smp.block);
                worst_slope_dev = worst_slope_dev.max((smp.fd_slope - 1.0).abs());
                slope_min = slope_min.min(smp.fd_slope);
                slope_max = slope_max.max(smp.fd_slope);
                table.push(vec![
                    i as f64,
                    smp.dim as f64,
                    smp.redraws as f64,
                    smp.identity,
                    smp.block,
                    smp.fd_errors[0],
                    *smp.fd_errors.last().unwrap(),
                    smp.fd_slope,
                ]);
            }
            Err(e) => {
                failed += 1;
                res.note(format!("instance {i}: {e}"));
            }
        }
    }
    res.measure("instances_evaluated", evaluated as f64);
    res.measure("redraws_gap_collapse", redraws as f64);
    res.measure("instances_failed", failed as f64);
    res.measure("identity_max", worst_id);
    res.measure("block_max", worst_block);
    res.measure("fd_slope_min", slope_min);
    res.measure("fd_slope_max", slope_max);
    res.check(
        "instances",
        evaluated >= s.instances && failed == 0,
        format!("{evaluated} evaluated, {failed} failed, {redraws} redraws after gap collapse"),
    );
    res.check("identities", worst_id <= s.identity_tol, format!("max {worst_id:.3e}"));
    res.check("blocks_vanish", worst_block <= s.identity_tol, format!("max {worst_block:.3e}"));
    res.check(
        "finite_difference_order",
        worst_slope_dev <= s.fd_slope_tol,
        format!("slopes in [{slope_min:.4}, {slope_max:.4}]"),
    );
    res.tables.push(table);
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetractionSetup {
    pub sweep: SweepSpec,
    pub samples: usize,
    /// Starting states are drawn from this many lowest free positive modes.
    pub subspace: usize,
    pub seed: u64,
    pub fixed_point_tol: f64,
}

impl Default for RetractionSetup {
    fn default() -> Self {
        Self {
            sweep: SweepSpec::new(
                Vary::C,
                &[20.0, 40.0, 80.0, 160.0],
                PhysParams {
                    alpha: 0.5,
                    c: 20.0,
                    z: 2.0,
                    q: 2,
                },
                ModelConfig::dirac1d(64, 20.0),
            ),
            samples: 8,
            subspace: 4,
            seed: 0,
            fixed_point_tol: 1e-9,
        }
    }
}

struct RetractionSample {
    ratio: Option<f64>,
    steps: usize,
    geometric_ok: bool,
    member: bool,
    fixed_point: f64,
    idempotent: bool,
    assumption: bool,
    first: f64,
}

fn retraction_sample(
    s: &RetractionSetup,
    m: &ModelSpace,
    p: &PhysParams,
    k: usize,
) -> Result<RetractionSample> {
    let q = p.q;
    let mut rng = seeded(s.seed, &[2, k as u64]);
    let fe = m.free_eigen();
    let start = m.dim / 2;
    let basis = fe.vectors.columns(start, s.subspace).into_owned();
    let v = basis * linalg::random_orthogonal(&mut rng, s.subspace);
    let occ: Vec<f64> = (0..q).map(|_| rng.gen_range(0.5..1.0)).collect();
    let cols: Vec<usize> = (0..q).collect();
    let g = DensityMatrix::from_orbitals(&v, &cols, &occ);

    let k_bound = (0..q)
        .map(|j| (m.y_weight() * v.column(j)).norm())
        .fold(0.0, f64::max);
    let r = params::default_radius(k_bound, q);
    let assumption = params::check_assumption_1(&params::derive_constants(p, r), p, r).holds;

    let opts = RetractionOptions::default();
    let tr = retraction::retract(&g, m, p, &opts)?;
    let floor = RATIO_NOISE * p.c * p.c * q as f64;
    let l = tr.ratio_obs.unwrap_or(0.0);
    let r1 = tr.residuals[0];
    let geometric_ok = tr.residuals.iter().enumerate().skip(1).all(|(n, &rn)| {
        rn <= floor || rn <= r1 * l.powi(n as i32) * (1.0 + 1e-6)
    });
    let next = retraction::t_map(&tr.theta, m, p)?;
    let fixed_point = density::xc_norm(&(next.mat() - tr.theta.mat()), m);
    let again = retraction::retract(&tr.theta, m, p, &opts)?;
    Ok(RetractionSample {
        ratio: tr.ratio_obs,
        steps: tr.n_steps,
        geometric_ok,
        member: tr.in_gamma_q_plus(),
        fixed_point,
        idempotent: again.n_steps == 1 && again.residuals[0] <= opts.tol(p),
        assumption,
        first: r1,
    })
}

/// Contraction of the retraction map and the properties of its limit along a `c` sweep.
pub fn check_retraction(s: &RetractionSetup) -> Result<ClaimResult> {
    let pts = s.sweep.points()?;
    if s.subspace < s.sweep.base.q {
        return Err(Error::Config("retraction subspace must hold q orbitals".into()));
    }
    let mut res = ClaimResult::new(
        ClaimId::Retraction,
        "observed contraction ratio < 1 and decreasing along the sweep; geometric residual decay; limit in Γ_q⁺, fixed by T and idempotent",
        &format!("fixed point {:e} c² q", s.fixed_point_tol),
    );
    let mut table = Table::new(
        "retraction",
        &["c", "alpha", "sample", "ratio_obs", "steps", "first_residual", "fixed_point_residual", "assumption_1"],
    );
    let runs: Vec<Result<(PhysParams, Vec<RetractionSample>)>> = pts
        .par_iter()
        .map(|p| {
            let m = build_model(&s.sweep.model, p)?;
            let samples = (0..s.samples)
                .map(|k| retraction_sample(s, &m, p, k))
                .collect::<Result<Vec<_>>>()?;
            Ok((*p, samples))
        })
        .collect();
    let mut maxima = Vec::new();
    let mut all = true;
    for run in runs {
        let (p, samples) = run?;
        let tol = s.fixed_point_tol * p.c * p.c * p.q as f64;
        let resolved: Vec<f64> = samples.iter().filter_map(|x| x.ratio).collect();
        let max_ratio = resolved.iter().copied().fold(f64::NAN, f64::max);
        maxima.push(max_ratio);
        let ok = !resolved.is_empty()
            && max_ratio < 1.0
            && samples.iter().all(|x| x.geometric_ok && x.member && x.fixed_point <= tol && x.idempotent);
        let in_regime = samples.iter().all(|x| x.assumption);
        all &= ok;
        res.check(
            &format!("c={}", p.c),
            ok && in_regime,
            format!(
                "max ratio {max_ratio:.3e} over {} resolved samples; max fixed-point residual {:.3e} (tol {tol:.1e}); assumption holds: {in_regime}",
                resolved.len(),
                samples.iter().map(|x| x.fixed_point).fold(0.0, f64::max)
            ),
        );
        res.measure(&format!("ratio_max.c={}", p.c), max_ratio);
        for (k, x) in samples.iter().enumerate() {
            table.push(vec![
                p.c,
                p.alpha,
                k as f64,
                x.ratio.unwrap_or(f64::NAN),
                x.steps as f64,
                x.first,
                x.fixed_point,
                f64::from(u8::from(x.assumption)),
            ]);
        }
    }
    let decreasing = maxima.windows(2).all(|w| w[1] < w[0]);
    res.check(
        "ratio_decreasing",
        all && decreasing,
        format!("max ratios {:?}", maxima.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>()),
    );
    res.tables.push(table);
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecondOrderSetup {
    pub sweep: SweepSpec,
    pub t_values: Vec<f64>,
    pub plateau_tol: f64,
    pub slope_tol: f64,
    pub r2_min: f64,
}

impl Default for SecondOrderSetup {
    fn default() -> Self {
        Self {
            sweep: SweepSpec::new(
                Vary::Alpha,
                &[0.05, 0.1, 0.2, 0.4],
                PhysParams {
                    alpha: 0.1,
                    c: 4.0,
                    z: 1.0,
                    q: 2,
                },
                ModelConfig::synthetic(16, 7),
            ),
            t_values: vec![3e-2, 1e-2, 3e-3, 1e-3, 3e-4],
            plateau_tol: 0.2,
            slope_tol: 0.3,
            r2_min: 0.9,
        }
    }
}

struct SecondOrderPoint {
    p: PhysParams,
    ratios: Vec<f64>,
    in_ur: Vec<bool>,
    quadratic: f64,
    linear: f64,
}

/// Around the DF minimizer, along the exchange of the highest occupied and
/// lowest empty orbital, returns `(E - ℰ)(γ + t h) / t²` for every `t`.
fn second_order_point(s: &SecondOrderSetup, p: &PhysParams, opts: &SolveOptions) -> Result<SecondOrderPoint> {
    let m = build_model(&s.sweep.model, p)?;
    let df = solvers::solve_df(&m, p, opts)?;
    if !df.filled_shell {
        return Err(Error::Precondition(format!(
            "DF minimizer at alpha = {} has an open shell",
            p.alpha
        )));
    }
    let mf = meanfield::mean_field(&df.gamma, &m, p)?;
    let k = mf.n_negative + p.q;
    let occ = mf.eigen.vectors.column(k - 1);
    let empty = mf.eigen.vectors.column(k);
    let h = empty * empty.transpose() - occ * occ.transpose();
    let c2 = p.c * p.c;
    let linear = linalg::trace_product(&mf.d_gamma, &h) - c2 * h.trace();
    let quadratic = 0.5 * p.alpha * meanfield::pair_trace(&h, &h, &m);
    let ropts = tight_retraction(p);
    let radius = df.assumption.radius;
    let mut ratios = Vec::new();
    let mut in_ur = Vec::new();
    for &t in &s.t_values {
        let gt = DensityMatrix::from_symmetric(df.gamma.mat() + &h * t);
        let mft = meanfield::mean_field(&gt, &m, p)?;
        let theta = retraction::retract(&gt, &m, p, &ropts)?.theta;
        ratios.push(meanfield::energy_difference(theta.mat(), gt.mat(), &mft.d_gamma, &m, p) / (t * t));
        in_ur.push(retraction::ur_certificate(&gt, &m, p, radius).map_or(false, |u| u.member));
    }
    Ok(SecondOrderPoint {
        p: *p,
        ratios,
        in_ur,
        quadratic,
        linear,
    })
}

/// `E(γ + t h) - ℰ(γ + t h) = O(t²)` with an `α²`-sized coefficient.
pub fn check_second_order(s: &SecondOrderSetup, opts: &SolveOptions) -> Result<ClaimResult> {
    let pts = s.sweep.points()?;
    let mut res = ClaimResult::new(
        ClaimId::SecondOrder,
        "(E - ℰ)(γ + t h) / t² has a plateau as t → 0 whose size scales like alpha²",
        &format!(
            "plateau variation < {}; slope 2 ± {}, R² ≥ {}",
            s.plateau_tol, s.slope_tol, s.r2_min
        ),
    );
    let runs: Vec<Result<SecondOrderPoint>> = pts.par_iter().map(|p| second_order_point(s, p, opts)).collect();
    let mut table = Table::new("second_order", &["alpha", "c", "t", "residual_over_t2", "in_ur"]);
    let mut xs = Vec::new();
    let mut plateaus = Vec::new();
    for run in runs {
        let pt = run?;
        let a = pt.p.alpha;
        let same_sign = pt.ratios.iter().all(|r| r.signum() == pt.ratios[0].signum());
        let lo = pt.ratios.iter().map(|r| r.abs()).fold(f64::INFINITY, f64::min);
        let hi = pt.ratios.iter().map(|r| r.abs()).fold(0.0, f64::max);
        let variation = hi / lo - 1.0;
        let mut sorted: Vec<f64> = pt.ratios.iter().map(|r| r.abs()).collect();
        sorted.sort_by(f64::total_cmp);
        let plateau = sorted[sorted.len() / 2];
        res.check(
            &format!("plateau.alpha={a}"),
            same_sign && variation < s.plateau_tol,
            format!("variation {variation:.3}, plateau {plateau:.4e}"),
        );
        res.measure(&format!("plateau.alpha={a}"), plateau);
        res.measure(&format!("variation.alpha={a}"), variation);
        res.measure(&format!("linear_term.alpha={a}"), pt.linear);
        res.measure(&format!("quadratic_term.alpha={a}"), pt.quadratic);
        if pt.in_ur.iter().any(|u| !u) {
            res.note(format!("alpha = {a}: some γ + t h outside the retraction neighbourhood"));
        }
        for ((t, r), u) in s.t_values.iter().zip(&pt.ratios).zip(&pt.in_ur) {
            table.push(vec![a, pt.p.c, *t, *r, f64::from(u8::from(*u))]);
        }
        xs.push(a);
        plateaus.push(plateau);
    }
    slope_check(&mut res, "alpha_slope", &xs, &plateaus, |_| 0.0, 2.0, s.slope_tol, Some(s.r2_min));
    res.measure("plateau_spread", rel_change(plateaus[0], *plateaus.last().unwrap()));
    res.tables.push(table);
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(alpha: f64) -> (ModelSpace, PhysParams) {
        let p = PhysParams::new(alpha, 4.0, 1.0, 2).unwrap();
        (build_model(&ModelConfig::synthetic(16, 7), &p).unwrap(), p)
    }

    #[test]
    fn residual_vanishes_without_interaction() {
        // With alpha = 0 the mean field does not depend on the state, so the
        // retraction is a single projection and E = ℰ on Γ⁺.
        let (m, p) = small_model(0.0);
        let mut rng = seeded(0, &[9]);
        let pp = meanfield::mean_field(&DensityMatrix::zeros(m.dim), &m, &p).unwrap().p_plus;
        let g = super::super::random_state(&mut rng, m.dim, 2, None);
        let inside = DensityMatrix::from_symmetric(&pp * g.mat() * &pp);
        let tr = retraction::retract(&inside, &m, &p, &tight_retraction(&p)).unwrap();
        assert!(tr.n_steps <= 2);
        let mf = meanfield::mean_field(&inside, &m, &p).unwrap();
        let d = meanfield::energy_difference(tr.theta.mat(), inside.mat(), &mf.d_gamma, &m, &p);
        assert!(d.abs() < 1e-12, "{d}");
    }

    #[test]
    fn finite_difference_error_is_first_order() {
        let s = ProjectorSetup {
            instances: 4,
            ..ProjectorSetup::default()
        };
        let p = PhysParams::new(s.alpha, s.c, s.z, s.q).unwrap();
        for i in 0..4 {
            let smp = projector_sample(&s, &p, i).unwrap();
            assert!(smp.identity < 1e-12);
            assert!(smp.block < 1e-12);
            assert!((smp.fd_slope - 1.0).abs() < 0.2, "{}", smp.fd_slope);
        }
    }

    #[test]
    fn small_projector_claim_passes() {
        let s = ProjectorSetup {
            instances: 30,
            ..ProjectorSetup::default()
        };
        let r = check_projector(&s).unwrap();
        assert!(r.pass, "{:?}", r.failed_checks());
        assert_eq!(r.tables[0].rows.len(), 30);
    }

    #[test]
    fn oversized_projector_dims_rejected() {
        let s = ProjectorSetup {
            max_dim: 80,
            ..ProjectorSetup::default()
        };
        assert!(check_projector(&s).is_err());
    }
}
