//! Dense symmetric linear algebra shared by every module.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Eigendecomposition with eigenvalues sorted ascending.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Eigen {
    pub fn new(m: &DMatrix<f64>) -> Self {
        // nalgebra's implicit QR can stall with eigenvector residuals near 1e-3
        // on some dense symmetric matrices, so the decomposition goes through faer.
        let n = m.nrows();
        let evd = to_faer(&symmetrize(m)).selfadjoint_eigendecomposition(faer::Side::Lower);
        let (ev, u) = (evd.s().column_vector(), evd.u());
        let mut order: Vec<usize> = (0..n).collect();
        // Stable sort keeps the solver's order among exact ties.
        order.sort_by(|&i, &j| ev.read(i).total_cmp(&ev.read(j)));
        let values = DVector::from_iterator(n, order.iter().map(|&i| ev.read(i)));
        let vectors = DMatrix::from_fn(n, n, |r, c| u.read(r, order[c]));
        Self { values, vectors }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V f(Λ) Vᵀ`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        spectral(&self.values, &self.vectors, f)
    }

    /// Projector onto the eigenvectors selected by `keep`.
    pub fn projector(&self, keep: impl Fn(usize, f64) -> bool) -> DMatrix<f64> {
        let cols: Vec<usize> = (0..self.dim()).filter(|&i| keep(i, self.values[i])).collect();
        projector_onto(&self.vectors, &cols)
    }
}

pub fn spectral(values: &DVector<f64>, vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(values[j]);
    }
    symmetrize(&(scaled * vectors.transpose()))
}

/// `Σ_{j ∈ cols} v_j v_jᵀ`.
pub fn projector_onto(vectors: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let n = vectors.nrows();
    if cols.is_empty() {
        return DMatrix::zeros(n, n);
    }
    let sub = vectors.select_columns(cols);
    symmetrize(&(&sub * sub.transpose()))
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}

fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    to_faer(&symmetrize(m)).selfadjoint_eigenvalues(faer::Side::Lower)
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    to_faer(m).singular_values()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn sandwich(w: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(w * a * w))
}

/// Trace norm of a symmetric matrix: the sum of absolute eigenvalues.
pub fn trace_norm_sym(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().map(|v| v.abs()).sum()
}

/// Trace norm of an arbitrary square matrix: the sum of singular values.
pub fn trace_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().sum()
}

/// Largest singular value.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().cloned().fold(0.0, f64::max)
}

pub fn op_norm_sym(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().cloned().fold(f64::INFINITY, f64::min)
}

/// `Tr(a b)` without forming the product.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // Tr(AB) = Σ_ij A_ij B_ji
    a.iter().zip(b.transpose().iter()).map(|(x, y)| x * y).sum()
}

pub fn commutator(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b - b * a
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the sign of
/// `diag(R)` folded into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, n, n).qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col *= -1.0;
        }
    }
    q
}

/// Kronecker product `a ⊗ I_k`.
pub fn kron_identity(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let m = a.ncols();
    let mut out = DMatrix::zeros(n * k, m * k);
    for i in 0..n {
        for j in 0..m {
            for s in 0..k {
                out[(i * k + s, j * k + s)] = a[(i, j)];
            }
        }
    }
    out
}

/// Least-squares slope and intercept of `ln y` against `ln x`, with R².
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> LogLogFit {
    let n = xs.len().min(ys.len());
    let lx: Vec<f64> = xs[..n].iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys[..n].iter().map(|y| y.ln()).collect();
    let nf = n as f64;
    let mx = lx.iter().sum::<f64>() / nf;
    let my = ly.iter().sum::<f64>() / nf;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    LogLogFit {
        slope,
        intercept,
        r2,
        n,
    }
}
