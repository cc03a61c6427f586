//! Density matrices, their kinetic-weighted trace norms and the constraint
//! sets they may belong to.

use std::io::{BufRead, Write};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Eigen};
use crate::model::{self, ModelSpace};

/// Default tolerance on eigenvalue bounds for membership checks.
pub const EIG_TOL: f64 = 1e-9;
/// Default tolerance on block residuals for membership checks.
pub const BLOCK_TOL: f64 = 1e-8;

/// A real symmetric one-particle density matrix.
///
/// The eigendecomposition is computed on first use and cached.
#[derive(Debug)]
pub struct DensityMatrix {
    mat: DMatrix<f64>,
    eig: OnceLock<Eigen>,
}

impl Clone for DensityMatrix {
    fn clone(&self) -> Self {
        let eig = OnceLock::new();
        if let Some(e) = self.eig.get() {
            let _ = eig.set(e.clone());
        }
        Self {
            mat: self.mat.clone(),
            eig,
        }
    }
}

impl PartialEq for DensityMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.mat == other.mat
    }
}

impl DensityMatrix {
    /// Wraps `mat` after checking it is symmetric to `1e-12` relative.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::Precondition(format!(
                "density matrix must be square, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let asym = (&mat - mat.transpose()).norm();
        if asym > 1e-12 * mat.norm().max(1.0) {
            return Err(Error::Precondition(format!(
                "density matrix is not symmetric (asymmetry {asym:e})"
            )));
        }
        Ok(Self::from_symmetric(mat))
    }

    /// Wraps `mat`, replacing it by its symmetric part.
    pub fn from_symmetric(mat: DMatrix<f64>) -> Self {
        Self {
            mat: linalg::symmetrize(&mat),
            eig: OnceLock::new(),
        }
    }

    /// Symmetrizes `mat` and clamps its spectrum into `[0, 1]`.
    pub fn clamped(mat: DMatrix<f64>) -> Self {
        let e = Eigen::new(&mat);
        let values = e.values.map(|v| v.clamp(0.0, 1.0));
        let clamped = linalg::spectral(&values, &e.vectors, |v| v);
        Self::from_symmetric(clamped)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_symmetric(DMatrix::zeros(dim, dim))
    }

    /// `Σ_k occ_k v_k v_kᵀ` over the selected columns of `vectors`.
    pub fn from_orbitals(vectors: &DMatrix<f64>, cols: &[usize], occ: &[f64]) -> Self {
        let n = vectors.nrows();
        let mut mat = DMatrix::zeros(n, n);
        for (&j, &o) in cols.iter().zip(occ) {
            let v = vectors.column(j);
            mat += (v * v.transpose()) * o;
        }
        Self::from_symmetric(mat)
    }

    pub fn mat(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_mat(self) -> DMatrix<f64> {
        self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace()
    }

    pub fn eigen(&self) -> &Eigen {
        self.eig.get_or_init(|| Eigen::new(&self.mat))
    }

    /// Occupation numbers, ascending.
    pub fn occupations(&self) -> &DVector<f64> {
        &self.eigen().values
    }

    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "dflab-density 1")?;
        writeln!(w, "dim {}", self.dim())?;
        model::write_matrix(&mut w, "gamma", &self.mat)
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let mut rd = model::DumpReader::new(r);
        rd.expect_header("dflab-density 1")?;
        let dim: usize = rd.scalar("dim")?;
        let mat = rd.matrix("gamma", dim, dim)?;
        Self::new(mat)
    }
}

/// The four trace norms of a density matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub sigma1: f64,
    pub x_norm: f64,
    pub y_norm: f64,
    pub xc_norm: f64,
}

pub fn sigma1(a: &DMatrix<f64>) -> f64 {
    linalg::trace_norm_sym(a)
}

/// `‖(1-Δ)^{1/4} a (1-Δ)^{1/4}‖_{σ₁}`.
pub fn x_norm(a: &DMatrix<f64>, m: &ModelSpace) -> f64 {
    linalg::trace_norm_sym(&linalg::sandwich(m.x_weight(), a))
}

/// `‖(1-Δ)^{1/2} a (1-Δ)^{1/2}‖_{σ₁}`.
pub fn y_norm(a: &DMatrix<f64>, m: &ModelSpace) -> f64 {
    linalg::trace_norm_sym(&linalg::sandwich(m.y_weight(), a))
}

/// `‖|D|^{1/2} a |D|^{1/2}‖_{σ₁}`.
pub fn xc_norm(a: &DMatrix<f64>, m: &ModelSpace) -> f64 {
    linalg::trace_norm_sym(&linalg::sandwich(m.abs_d_half(), a))
}

/// `‖a |D|^{1/2}‖_{σ₁}` (not symmetric, so a full SVD).
pub fn half_weighted_sigma1(a: &DMatrix<f64>, m: &ModelSpace) -> f64 {
    linalg::trace_norm(&(a * m.abs_d_half()))
}

pub fn norms(g: &DensityMatrix, m: &ModelSpace) -> NormReport {
    let a = g.mat();
    NormReport {
        sigma1: sigma1(a),
        x_norm: x_norm(a, m),
        y_norm: y_norm(a, m),
        xc_norm: xc_norm(a, m),
    }
}

/// `ρ_γ(x_i)`, normalized so that `Σ_i ρ(x_i) dx = Tr γ`.
pub fn density_profile(g: &DensityMatrix, m: &ModelSpace) -> Vec<f64> {
    let a = g.mat();
    (0..m.n_sites)
        .map(|i| (0..m.n_spinor).map(|s| a[(m.n_spinor * i + s, m.n_spinor * i + s)]).sum::<f64>() / m.dx)
        .collect()
}

/// Membership verdict with the residuals that decided it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    pub trace: f64,
    /// Smallest eigenvalue of the lower-bound gap (`γ` or `γ + P⁻_g`).
    pub lower_slack: f64,
    /// Smallest eigenvalue of the upper-bound gap (`1 - γ` or `P⁺_g - γ`).
    pub upper_slack: f64,
    /// Frobenius norm of the off-block (or out-of-range) part.
    pub block_residual: f64,
}

/// `0 ≤ γ ≤ 1`, `Tr γ ≤ q`.
pub fn in_gamma_q(g: &DensityMatrix, q: usize, tol: f64) -> Membership {
    let vals = g.occupations();
    let lower = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let upper = 1.0 - vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let trace = g.trace();
    Membership {
        member: lower >= -tol && upper >= -tol && trace <= q as f64 + tol,
        trace,
        lower_slack: lower,
        upper_slack: upper,
        block_residual: 0.0,
    }
}

/// `Γ_q` membership plus `P⁺ γ P⁺ = γ` for the given positive projector.
pub fn in_gamma_q_plus(g: &DensityMatrix, p_plus: &DMatrix<f64>, q: usize, tol: f64) -> Membership {
    let mut mem = in_gamma_q(g, q, tol);
    let a = g.mat();
    let residual = (p_plus * a * p_plus - a).norm();
    mem.block_residual = residual;
    mem.member = mem.member && residual <= tol.max(BLOCK_TOL);
    mem
}

/// `-P⁻_g ≤ γ ≤ P⁺_g`, `P⁺_g γ P⁻_g = 0`, `0 ≤ Tr γ ≤ q`.
pub fn in_gamma_q_g(
    g: &DensityMatrix,
    p_plus: &DMatrix<f64>,
    p_minus: &DMatrix<f64>,
    q: usize,
    tol: f64,
) -> Membership {
    let a = g.mat();
    let lower = linalg::min_eigenvalue(&(a + p_minus));
    let upper = linalg::min_eigenvalue(&(p_plus - a));
    let block = (p_plus * a * p_minus).norm();
    let trace = g.trace();
    Membership {
        member: lower >= -tol
            && upper >= -tol
            && block <= tol.max(BLOCK_TOL)
            && trace >= -tol
            && trace <= q as f64 + tol,
        trace,
        lower_slack: lower,
        upper_slack: upper,
        block_residual: block,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};
    use crate::params::PhysParams;

    #[test]
    fn zero_state() {
        let m = build_model(&ModelConfig::synthetic(8, 0), &PhysParams::new(0.1, 2.0, 1.0, 1).unwrap()).unwrap();
        let g = DensityMatrix::zeros(m.dim);
        let n = norms(&g, &m);
        assert_eq!((n.sigma1, n.x_norm, n.y_norm, n.xc_norm), (0.0, 0.0, 0.0, 0.0));
        assert!(density_profile(&g, &m).iter().all(|v| *v == 0.0));
        let (pp, pm) = m.free_projectors().unwrap();
        assert!(in_gamma_q(&g, 1, EIG_TOL).member);
        assert!(in_gamma_q_plus(&g, &pp, 1, EIG_TOL).member);
        assert!(in_gamma_q_g(&g, &pp, &pm, 1, EIG_TOL).member);
    }

    #[test]
    fn negative_projector_is_not_admissible() {
        let m = build_model(&ModelConfig::dirac1d(8, 4.0), &PhysParams::new(0.1, 2.0, 0.0, 1).unwrap()).unwrap();
        let (pp, pm) = m.free_projectors().unwrap();
        let g = DensityMatrix::new(pm).unwrap();
        assert!(!in_gamma_q(&g, 2, EIG_TOL).member);
        assert!(!in_gamma_q_plus(&g, &pp, 2, EIG_TOL).member);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let mut a = DMatrix::zeros(3, 3);
        a[(0, 1)] = 1.0;
        assert!(DensityMatrix::new(a).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let g = DensityMatrix::new(DMatrix::from_fn(4, 4, |i, j| 0.1 / (1.0 + i as f64 + j as f64))).unwrap();
        let mut buf = Vec::new();
        g.write_dump(&mut buf).unwrap();
        let back = DensityMatrix::read_dump(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, g);
    }
}
