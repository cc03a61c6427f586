//! The map `T(γ) = P⁺_γ γ P⁺_γ`, its fixed-point limit `θ(γ)`, the
//! neighbourhood certificate and the energy `E(γ) = ℰ(θ(γ))`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::density::{self, DensityMatrix, Membership};
use crate::error::{Error, Result};
use crate::meanfield::{self, MeanField};
use crate::model::ModelSpace;
use crate::params::{derive_constants, PhysParams};

/// Relative residual level below which successive ratios are roundoff, not contraction.
pub const RATIO_NOISE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetractionOptions {
    /// Absolute `X_c` tolerance; `1e-10 c² q` when absent.
    pub tol_fixed: Option<f64>,
    pub max_iter: usize,
    /// Keep every iterate as a dense matrix.
    pub keep_iterates: bool,
}

impl Default for RetractionOptions {
    fn default() -> Self {
        Self {
            tol_fixed: None,
            max_iter: 200,
            keep_iterates: false,
        }
    }
}

impl RetractionOptions {
    pub fn tol(&self, p: &PhysParams) -> f64 {
        self.tol_fixed
            .unwrap_or(1e-10 * p.c * p.c * p.q as f64)
    }

    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol_fixed: Some(tol),
            ..Self::default()
        }
    }
}

/// History of one retraction run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetractionTrace {
    /// `‖T^{n+1}(γ) - T^n(γ)‖_{X_c}` for `n = 0, 1, ...`.
    pub residuals: Vec<f64>,
    /// Largest ratio of successive residuals above the roundoff floor.
    pub ratio_obs: Option<f64>,
    pub ratio_ge_one: bool,
    pub converged: bool,
    pub n_steps: usize,
    pub tol: f64,
    /// `r_last · L_obs / (1 - L_obs)` when `L_obs < 1`.
    pub tail_bound: Option<f64>,
    /// Membership of the limit in `Γ_q⁺` against its own mean field.
    pub membership: Option<Membership>,
    #[serde(skip)]
    pub theta: DensityMatrix,
    #[serde(skip)]
    pub theta_mean_field: Option<MeanField>,
    #[serde(skip)]
    pub iterates: Vec<DMatrix<f64>>,
}

impl RetractionTrace {
    pub fn last_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }

    pub fn in_gamma_q_plus(&self) -> bool {
        self.membership.is_some_and(|m| m.member)
    }
}

impl Default for DensityMatrix {
    fn default() -> Self {
        DensityMatrix::zeros(0)
    }
}

pub fn t_map(g: &DensityMatrix, m: &ModelSpace, p: &PhysParams) -> Result<DensityMatrix> {
    let mf = meanfield::mean_field(g, m, p)?;
    Ok(apply_t(g.mat(), &mf))
}

fn apply_t(g: &DMatrix<f64>, mf: &MeanField) -> DensityMatrix {
    DensityMatrix::from_symmetric(&mf.p_plus * g * &mf.p_plus)
}

/// Iterate `T` until the `X_c` step falls below tolerance.
pub fn retract(
    g: &DensityMatrix,
    m: &ModelSpace,
    p: &PhysParams,
    opts: &RetractionOptions,
) -> Result<RetractionTrace> {
    let tol = opts.tol(p);
    let floor = RATIO_NOISE * p.c * p.c * p.q as f64;
    let mut current = g.clone();
    let mut mf = meanfield::mean_field(&current, m, p)?;
    let mut trace = RetractionTrace {
        residuals: Vec::new(),
        ratio_obs: None,
        ratio_ge_one: false,
        converged: false,
        n_steps: 0,
        tol,
        tail_bound: None,
        membership: None,
        theta: DensityMatrix::zeros(0),
        theta_mean_field: None,
        iterates: Vec::new(),
    };
    if opts.keep_iterates {
        trace.iterates.push(current.mat().clone());
    }
    while trace.n_steps < opts.max_iter {
        let next = apply_t(current.mat(), &mf);
        let r = density::xc_norm(&(next.mat() - current.mat()), m);
        if let Some(prev) = trace.residuals.last().copied() {
            if r > floor && prev > 0.0 {
                let ratio = r / prev;
                trace.ratio_obs = Some(trace.ratio_obs.map_or(ratio, |o: f64| o.max(ratio)));
            }
        }
        trace.residuals.push(r);
        trace.n_steps += 1;
        if opts.keep_iterates {
            trace.iterates.push(next.mat().clone());
        }
        current = next;
        mf = meanfield::mean_field(&current, m, p)?;
        if r <= tol {
            trace.converged = true;
            break;
        }
    }
    trace.ratio_ge_one = trace.ratio_obs.is_some_and(|l| l >= 1.0);
    if let Some(l) = trace.ratio_obs.filter(|l| *l < 1.0) {
        trace.tail_bound = Some(trace.last_residual() * l / (1.0 - l));
    }
    trace.membership = Some(density::in_gamma_q_plus(
        &current,
        &mf.p_plus,
        p.q,
        density::EIG_TOL,
    ));
    trace.theta = current;
    trace.theta_mean_field = Some(mf);
    if !trace.converged {
        return Err(Error::RetractionDiverged(Box::new(trace)));
    }
    Ok(trace)
}

/// Membership certificate for the retraction neighbourhood of radius `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrCertificate {
    /// `(1/c) ‖γ |D|^{1/2}‖_{σ₁}`.
    pub term1: f64,
    /// `(A/c²) ‖T(γ) - γ‖_{X_c}`; infinite when `A` is undefined.
    pub term2: f64,
    pub r: f64,
    pub member: bool,
}

pub fn ur_certificate(g: &DensityMatrix, m: &ModelSpace, p: &PhysParams, r: f64) -> Result<UrCertificate> {
    let term1 = density::half_weighted_sigma1(g.mat(), m) / p.c;
    let t = t_map(g, m, p)?;
    let step = density::xc_norm(&(t.mat() - g.mat()), m);
    let term2 = match derive_constants(p, r).a_big {
        Some(a) => a * step / (p.c * p.c),
        None => f64::INFINITY,
    };
    Ok(UrCertificate {
        term1,
        term2,
        r,
        member: term1 + term2 < r,
    })
}

/// `E(γ) = ℰ(θ(γ))` with the retraction trace.
pub fn df_energy(
    g: &DensityMatrix,
    m: &ModelSpace,
    p: &PhysParams,
    opts: &RetractionOptions,
) -> Result<(f64, RetractionTrace)> {
    let trace = retract(g, m, p, opts)?;
    Ok((meanfield::energy(&trace.theta, m, p), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};

    #[test]
    fn zero_state_is_fixed_with_zero_energy() {
        let p = PhysParams::new(0.2, 3.0, 1.0, 2).unwrap();
        let m = build_model(&ModelConfig::synthetic(12, 1), &p).unwrap();
        let g = DensityMatrix::zeros(m.dim);
        let (e, tr) = df_energy(&g, &m, &p, &RetractionOptions::default()).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(tr.n_steps, 1);
        assert_eq!(tr.residuals, vec![0.0]);
        let cert = ur_certificate(&g, &m, &p, 1.0).unwrap();
        assert_eq!((cert.term1, cert.term2), (0.0, 0.0));
        assert!(cert.member);
    }

    #[test]
    fn free_negative_states_are_annihilated() {
        let p = PhysParams::new(0.0, 3.0, 0.0, 1).unwrap();
        let m = build_model(&ModelConfig::dirac1d(8, 4.0), &p).unwrap();
        let e = m.free_eigen();
        let g = DensityMatrix::from_orbitals(&e.vectors, &[0], &[1.0]);
        let t = t_map(&g, &m, &p).unwrap();
        assert!(t.mat().norm() < 1e-12);
    }

    #[test]
    fn max_iter_exhaustion_carries_the_trace() {
        let p = PhysParams::new(0.5, 2.0, 1.0, 2).unwrap();
        let m = build_model(&ModelConfig::synthetic(12, 3), &p).unwrap();
        let v = &m.free_eigen().vectors;
        let g = DensityMatrix::from_orbitals(v, &[0, 11], &[0.5, 0.5]);
        let opts = RetractionOptions {
            tol_fixed: Some(-1.0),
            max_iter: 3,
            keep_iterates: true,
        };
        match retract(&g, &m, &p, &opts) {
            Err(Error::RetractionDiverged(tr)) => {
                assert_eq!(tr.n_steps, 3);
                assert_eq!(tr.iterates.len(), 4);
                assert!(!tr.converged);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
