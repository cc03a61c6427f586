//! The self-consistent operator `D_γ = D - V + α W_γ`, the energy functional,
//! spectral projectors and their first variation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, Eigen};
use crate::model::ModelSpace;
use crate::params::PhysParams;

/// Relative threshold for grouping eigenvalues into one shell.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Electron count per site: `n_i = Σ_s h_{(i,s),(i,s)}`.
fn site_charges(h: &DMatrix<f64>, m: &ModelSpace) -> Vec<f64> {
    let ns = m.n_spinor;
    (0..m.n_sites)
        .map(|i| (0..ns).map(|s| h[(ns * i + s, ns * i + s)]).sum())
        .collect()
}

/// Hartree minus exchange operator of a symmetric matrix `h` (not necessarily a state).
pub fn w_of(h: &DMatrix<f64>, m: &ModelSpace) -> DMatrix<f64> {
    let ns = m.n_spinor;
    let w = &m.w_kernel;
    let n = site_charges(h, m);
    let hartree: Vec<f64> = (0..m.n_sites)
        .map(|i| (0..m.n_sites).map(|j| w[(i, j)] * n[j]).sum())
        .collect();
    let mut out = DMatrix::from_fn(m.dim, m.dim, |k, l| -w[(k / ns, l / ns)] * h[(k, l)]);
    for k in 0..m.dim {
        out[(k, k)] += hartree[k / ns];
    }
    out
}

/// `Tr[W_a b]` from the kernel directly.
pub fn pair_trace(a: &DMatrix<f64>, b: &DMatrix<f64>, m: &ModelSpace) -> f64 {
    let ns = m.n_spinor;
    let w = &m.w_kernel;
    let na = site_charges(a, m);
    let nb = site_charges(b, m);
    let mut hartree = 0.0;
    for i in 0..m.n_sites {
        for j in 0..m.n_sites {
            hartree += w[(i, j)] * na[i] * nb[j];
        }
    }
    let mut exchange = 0.0;
    for k in 0..m.dim {
        for l in 0..m.dim {
            exchange += w[(k / ns, l / ns)] * a[(k, l)] * b[(l, k)];
        }
    }
    hartree - exchange
}

/// `D - V + α W_h`.
pub fn assemble(h: &DMatrix<f64>, m: &ModelSpace, p: &PhysParams) -> DMatrix<f64> {
    let mut d = &m.d_free - &m.v_mat;
    if p.alpha != 0.0 {
        d += w_of(h, m) * p.alpha;
    }
    d
}

/// A group of numerically equal positive eigenvalues below `c²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub value: f64,
    pub multiplicity: usize,
    /// Index of the first member in the ascending eigenvalue list.
    pub first: usize,
}

/// Assembled mean-field operator with its spectral data.
#[derive(Debug, Clone)]
pub struct MeanField {
    pub d_gamma: DMatrix<f64>,
    pub eigen: Eigen,
    pub p_plus: DMatrix<f64>,
    pub p_minus: DMatrix<f64>,
    pub gap: f64,
    /// Positive eigenvalues in `(0, c²]`, grouped into shells.
    pub nu_levels: Vec<Level>,
    /// Index of the first positive eigenvalue.
    pub n_negative: usize,
    c: f64,
}

pub fn mean_field(g: &DensityMatrix, m: &ModelSpace, p: &PhysParams) -> Result<MeanField> {
    MeanField::from_operator(assemble(g.mat(), m, p), p.c)
}

impl MeanField {
    pub fn from_operator(d_gamma: DMatrix<f64>, c: f64) -> Result<Self> {
        let eigen = Eigen::new(&d_gamma);
        let c2 = c * c;
        let floor = 1e-8 * c2;
        let gap = eigen.values.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
        if gap < floor {
            let value = *eigen
                .values
                .iter()
                .find(|v| v.abs() == gap)
                .unwrap_or(&gap);
            return Err(Error::GapCollapse {
                value,
                threshold: floor,
            });
        }
        let n_negative = eigen.values.iter().filter(|v| **v < 0.0).count();
        let p_plus = eigen.projector(|i, _| i >= n_negative);
        let p_minus = eigen.projector(|i, _| i < n_negative);
        let nu_levels = group_levels(&eigen, n_negative, c2);
        Ok(Self {
            d_gamma,
            eigen,
            p_plus,
            p_minus,
            gap,
            nu_levels,
            n_negative,
            c,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigen.dim()
    }

    pub fn n_positive(&self) -> usize {
        self.dim() - self.n_negative
    }

    /// Columns of the eigenvector matrix spanning the positive subspace.
    pub fn positive_basis(&self) -> DMatrix<f64> {
        self.eigen
            .vectors
            .columns(self.n_negative, self.n_positive())
            .into_owned()
    }

    pub fn negative_basis(&self) -> DMatrix<f64> {
        self.eigen.vectors.columns(0, self.n_negative).into_owned()
    }

    /// Projector onto the `q` lowest positive eigenvectors (ties broken by index).
    pub fn aufbau(&self, q: usize) -> Result<DMatrix<f64>> {
        if q > self.n_positive() {
            return Err(Error::Infeasible(format!(
                "cannot place {q} electrons in {} positive levels",
                self.n_positive()
            )));
        }
        let cols: Vec<usize> = (self.n_negative..self.n_negative + q).collect();
        Ok(linalg::projector_onto(&self.eigen.vectors, &cols))
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

fn group_levels(eigen: &Eigen, start: usize, c2: f64) -> Vec<Level> {
    let mut out: Vec<Level> = Vec::new();
    let tol = DEGENERACY_TOL * c2;
    for i in start..eigen.dim() {
        let v = eigen.values[i];
        if v > c2 {
            break;
        }
        match out.last_mut() {
            Some(last) if v - eigen.values[i - 1] < tol => last.multiplicity += 1,
            _ => out.push(Level {
                value: v,
                multiplicity: 1,
                first: i,
            }),
        }
    }
    out
}

/// `ℰ(γ)` with the pair term evaluated as an explicit double sum over the kernel.
pub fn energy(g: &DensityMatrix, m: &ModelSpace, p: &PhysParams) -> f64 {
    energy_of(g.mat(), m, p)
}

pub fn energy_of(a: &DMatrix<f64>, m: &ModelSpace, p: &PhysParams) -> f64 {
    let one_body = linalg::trace_product(&(&m.d_free - &m.v_mat), a);
    let pair = if p.alpha != 0.0 { pair_trace(a, a, m) } else { 0.0 };
    one_body + 0.5 * p.alpha * pair - p.c * p.c * a.trace()
}

/// `ℰ(γ) = Tr(D_γ γ) - (α/2) Tr(W_γ γ) - c² Tr γ`.
pub fn energy_alt(g: &DensityMatrix, m: &ModelSpace, p: &PhysParams) -> f64 {
    let a = g.mat();
    let w = w_of(a, m);
    let d = assemble(a, m, p);
    linalg::trace_product(&d, a) - 0.5 * p.alpha * linalg::trace_product(&w, a) - p.c * p.c * a.trace()
}

/// `ℰ(a) - ℰ(b)` from the exact quadratic expansion around `b`, given `D_b`.
///
/// This avoids the cancellation of two `O(q c²)` totals.
pub fn energy_difference(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    d_b: &DMatrix<f64>,
    m: &ModelSpace,
    p: &PhysParams,
) -> f64 {
    let delta = a - b;
    let linear = linalg::trace_product(d_b, &delta) - p.c * p.c * delta.trace();
    let quad = if p.alpha != 0.0 {
        0.5 * p.alpha * pair_trace(&delta, &delta, m)
    } else {
        0.0
    };
    linear + quad
}

/// Gateaux derivative of `P⁺_γ` along `h`, in closed form in the eigenbasis of `D_γ`.
pub fn dp_plus(h: &DMatrix<f64>, mf: &MeanField, m: &ModelSpace, p: &PhysParams) -> Result<DMatrix<f64>> {
    let v = &mf.eigen.vectors;
    let mu = &mf.eigen.values;
    let wt = v.transpose() * w_of(h, m) * v;
    let n = mf.dim();
    let threshold = 1e-10 * p.c * p.c;
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let (pi, pj) = (mu[i] > 0.0, mu[j] > 0.0);
            if pi == pj {
                continue;
            }
            let sep = mu[i] - mu[j];
            if sep.abs() < threshold {
                return Err(Error::DegeneratePair {
                    separation: sep.abs(),
                    threshold,
                });
            }
            let sign = if pi { 1.0 } else { -1.0 };
            out[(i, j)] = p.alpha * wt[(i, j)] * sign / sep;
        }
    }
    Ok(linalg::symmetrize(&(v * out * v.transpose())))
}

/// `[W_h, β]` and its operator norm.
pub fn beta_commutator(h: &DMatrix<f64>, m: &ModelSpace) -> (DMatrix<f64>, f64) {
    let comm = linalg::commutator(&w_of(h, m), &m.beta);
    let norm = linalg::op_norm(&comm);
    (comm, norm)
}

/// A Dirac sea: the splitting `P⁺_g + P⁻_g = 1` with orthonormal bases of both ranges.
#[derive(Debug, Clone)]
pub struct Sea {
    pub p_plus: DMatrix<f64>,
    pub p_minus: DMatrix<f64>,
    pub pos_basis: DMatrix<f64>,
    pub neg_basis: DMatrix<f64>,
}

impl Sea {
    pub fn from_mean_field(mf: &MeanField) -> Self {
        Self {
            p_plus: mf.p_plus.clone(),
            p_minus: mf.p_minus.clone(),
            pos_basis: mf.positive_basis(),
            neg_basis: mf.negative_basis(),
        }
    }

    /// Sea of `D_g` for a state `g`.
    pub fn of_density(g: &DensityMatrix, m: &ModelSpace, p: &PhysParams) -> Result<Self> {
        Ok(Self::from_mean_field(&mean_field(g, m, p)?))
    }

    /// Sea of the free operator `D`.
    pub fn free(m: &ModelSpace) -> Result<Self> {
        let mf = MeanField::from_operator(m.d_free.clone(), m.c)?;
        Ok(Self::from_mean_field(&mf))
    }

    pub fn rank_plus(&self) -> usize {
        self.pos_basis.ncols()
    }
}
