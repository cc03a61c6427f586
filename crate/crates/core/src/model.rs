//! Finite-dimensional representations of the free Dirac operator, the nuclear
//! attraction, the pair interaction and the kinetic functional calculus.
//!
//! Layout is spatial-major, spinor-minor: basis index `2 * site + s` with
//! `s = 0` the upper and `s = 1` the lower spinor component. The basis vectors
//! are orthonormal, so a normalized orbital satisfies `Σ |u_k|^2 = 1` and the
//! continuum kernel is `γ(x_i, x_j) = γ_ij / dx`.
//!
//! The kinetic term is `c σ₂ p` with `p = -i ∂ₓ`. This is the image of `c σ₁ p`
//! under the spinor-local unitary `diag(1, i)`, which commutes with `β = σ₃`
//! and with every site-local operator, and it keeps all matrices real.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Eigen};
use crate::params::PhysParams;

pub const N_SPINOR: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Dirac1d,
    Synthetic,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Dirac1d => "dirac1d",
            Backend::Synthetic => "synthetic",
        })
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirac1d" => Ok(Backend::Dirac1d),
            "synthetic" => Ok(Backend::Synthetic),
            other => Err(Error::Config(format!("unknown backend `{other}`"))),
        }
    }
}

/// Discretization choices. `c` and `Z` come from [`PhysParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backend: Backend,
    /// Grid points of the `dirac1d` backend.
    pub n_grid: usize,
    /// Period of the `dirac1d` box.
    pub box_len: f64,
    /// Softening length of the Coulomb kernel; one grid spacing when absent.
    pub soften: Option<f64>,
    /// Seed of the `synthetic` backend.
    pub seed: u64,
    /// Total dimension of the `synthetic` backend (even).
    pub synth_dim: usize,
    /// Momenta of the `synthetic` backend are drawn from `[0, synth_pmax)`.
    pub synth_pmax: f64,
    /// Build the `synthetic` model as two identical copies with a
    /// swap-symmetric coupling kernel.
    pub synth_mirror: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Dirac1d,
            n_grid: 128,
            box_len: 40.0,
            soften: None,
            seed: 0,
            synth_dim: 16,
            synth_pmax: 4.0,
            synth_mirror: false,
        }
    }
}

impl ModelConfig {
    pub fn dirac1d(n_grid: usize, box_len: f64) -> Self {
        Self {
            backend: Backend::Dirac1d,
            n_grid,
            box_len,
            ..Self::default()
        }
    }

    pub fn synthetic(synth_dim: usize, seed: u64) -> Self {
        Self {
            backend: Backend::Synthetic,
            synth_dim,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.soften {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Config(format!("soften must be > 0, got {a}")));
            }
        }
        match self.backend {
            Backend::Dirac1d => {
                if self.n_grid < 8 {
                    return Err(Error::Config(format!("n_grid must be >= 8, got {}", self.n_grid)));
                }
                if !(self.box_len.is_finite() && self.box_len > 0.0) {
                    return Err(Error::Config(format!("box_len must be > 0, got {}", self.box_len)));
                }
            }
            Backend::Synthetic => {
                let unit = if self.synth_mirror { 4 } else { 2 };
                if self.synth_dim < 8 || self.synth_dim % unit != 0 {
                    return Err(Error::Config(format!(
                        "synth_dim must be >= 8 and a multiple of {unit}, got {}",
                        self.synth_dim
                    )));
                }
                if !(self.synth_pmax.is_finite() && self.synth_pmax > 0.0) {
                    return Err(Error::Config(format!(
                        "synth_pmax must be > 0, got {}",
                        self.synth_pmax
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Which positive operator [`ModelSpace::op_power`] raises to a power.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    AbsD,
    OneMinusLap,
    C4MinusC2Lap,
}

/// Immutable operator data for one `(config, c, Z)`.
#[derive(Debug, Clone)]
pub struct ModelSpace {
    pub backend: Backend,
    pub n_sites: usize,
    pub n_spinor: usize,
    pub dim: usize,
    pub dx: f64,
    pub grid: Vec<f64>,
    pub box_len: f64,
    pub soften: f64,
    pub c: f64,
    pub z: f64,
    pub d_free: DMatrix<f64>,
    /// Attraction magnitude (positive); the mean field uses `D - V`.
    pub v_mat: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    /// Site-by-site interaction values `W(x_i, x_j)`.
    pub w_kernel: DMatrix<f64>,
    /// Eigenvalues of `-Δ` in the order of `lap_vecs` columns.
    pub lap_eigs: DVector<f64>,
    pub lap_vecs: DMatrix<f64>,
    d_eigen: Eigen,
    abs_d_half: DMatrix<f64>,
    x_weight: DMatrix<f64>,
    y_weight: DMatrix<f64>,
}

/// Periodic spectral first-derivative matrix on `n` points of a box of length `len`.
///
/// For even `n` the Nyquist mode gets zero momentum, which keeps the matrix real
/// and antisymmetric.
pub fn spectral_derivative(n: usize, len: f64) -> DMatrix<f64> {
    let scale = std::f64::consts::PI / len;
    DMatrix::from_fn(n, n, |j, k| {
        if j == k {
            return 0.0;
        }
        let d = j as f64 - k as f64;
        let sign = if (j + k) % 2 == 0 { 1.0 } else { -1.0 };
        let arg = std::f64::consts::PI * d / n as f64;
        if n % 2 == 0 {
            scale * sign / arg.tan()
        } else {
            scale * sign / arg.sin()
        }
    })
}

fn min_image(d: f64, len: f64) -> f64 {
    d - len * (d / len).round()
}

fn softened(r: f64, a: f64) -> f64 {
    1.0 / (r * r + a * a).sqrt()
}

pub fn build_model(cfg: &ModelConfig, p: &PhysParams) -> Result<ModelSpace> {
    cfg.validate()?;
    p.validate()?;
    match cfg.backend {
        Backend::Dirac1d => build_dirac1d(cfg, p),
        Backend::Synthetic => build_synthetic(cfg, p),
    }
}

fn build_dirac1d(cfg: &ModelConfig, p: &PhysParams) -> Result<ModelSpace> {
    let n = cfg.n_grid;
    let len = cfg.box_len;
    let dx = len / n as f64;
    let soften = cfg.soften.unwrap_or(dx);
    let c = p.c;
    // The nucleus sits at x = 0, which is grid point n / 2.
    let grid: Vec<f64> = (0..n).map(|i| -0.5 * len + i as f64 * dx).collect();
    let deriv = spectral_derivative(n, len);
    let dim = N_SPINOR * n;

    let mut d_free = DMatrix::zeros(dim, dim);
    for i in 0..n {
        d_free[(2 * i, 2 * i)] = c * c;
        d_free[(2 * i + 1, 2 * i + 1)] = -c * c;
        for j in 0..n {
            let a = deriv[(i, j)];
            d_free[(2 * i, 2 * j + 1)] = -c * a;
            d_free[(2 * i + 1, 2 * j)] = c * a;
        }
    }

    let mut v_mat = DMatrix::zeros(dim, dim);
    let mut beta = DMatrix::zeros(dim, dim);
    for i in 0..n {
        let v = p.z * softened(min_image(grid[i], len), soften);
        v_mat[(2 * i, 2 * i)] = v;
        v_mat[(2 * i + 1, 2 * i + 1)] = v;
        beta[(2 * i, 2 * i)] = 1.0;
        beta[(2 * i + 1, 2 * i + 1)] = -1.0;
    }
    let w_kernel = DMatrix::from_fn(n, n, |i, j| softened(min_image(grid[i] - grid[j], len), soften));

    // -Δ = Aᵀ A for the antisymmetric derivative A.
    let lap_site = Eigen::new(&(deriv.transpose() * &deriv));
    let lap_eigs = DVector::from_iterator(
        dim,
        (0..dim).map(|k| lap_site.values[k / N_SPINOR].max(0.0)),
    );
    let lap_vecs = linalg::kron_identity(&lap_site.vectors, N_SPINOR);

    finish(ModelSpace {
        backend: Backend::Dirac1d,
        n_sites: n,
        n_spinor: N_SPINOR,
        dim,
        dx,
        grid,
        box_len: len,
        soften,
        c,
        z: p.z,
        d_free,
        v_mat,
        beta,
        w_kernel,
        lap_eigs,
        lap_vecs,
        d_eigen: placeholder_eigen(),
        abs_d_half: DMatrix::zeros(0, 0),
        x_weight: DMatrix::zeros(0, 0),
        y_weight: DMatrix::zeros(0, 0),
    })
}

/// Gram matrix of nonnegative factors: positive semidefinite and entrywise nonnegative.
fn gram<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = linalg::gaussian_matrix(rng, n, n).map(f64::abs);
    linalg::symmetrize(&(&g * g.transpose() / n as f64))
}

fn build_synthetic(cfg: &ModelConfig, p: &PhysParams) -> Result<ModelSpace> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.synth_dim;
    let sites = dim / N_SPINOR;
    let c = p.c;

    // One copy of everything; the mirror variant duplicates it.
    let copy_sites = if cfg.synth_mirror { sites / 2 } else { sites };
    let copy_dim = N_SPINOR * copy_sites;
    let momenta: Vec<f64> = (0..copy_sites)
        .map(|_| rng.gen_range(0.0..cfg.synth_pmax))
        .collect();
    let frame = linalg::random_orthogonal(&mut rng, copy_dim);
    let mut pot: Vec<f64> = (0..copy_sites).map(|_| rng.gen_range(0.0..1.0)).collect();
    let vmax = pot.iter().cloned().fold(0.0, f64::max);
    for v in &mut pot {
        *v *= p.z / vmax;
    }

    let (momenta, frame, pot, w_kernel) = if cfg.synth_mirror {
        // [[1, 1/2], [1/2, 1]] ⊗ A keeps both properties of A.
        let w1 = gram(&mut rng, copy_sites);
        let w2 = &w1 * 0.5;
        let mut w = DMatrix::zeros(sites, sites);
        w.view_mut((0, 0), (copy_sites, copy_sites)).copy_from(&w1);
        w.view_mut((copy_sites, copy_sites), (copy_sites, copy_sites)).copy_from(&w1);
        w.view_mut((0, copy_sites), (copy_sites, copy_sites)).copy_from(&w2);
        w.view_mut((copy_sites, 0), (copy_sites, copy_sites)).copy_from(&w2);
        let mut o = DMatrix::zeros(dim, dim);
        o.view_mut((0, 0), (copy_dim, copy_dim)).copy_from(&frame);
        o.view_mut((copy_dim, copy_dim), (copy_dim, copy_dim)).copy_from(&frame);
        let m2 = momenta.iter().chain(momenta.iter()).cloned().collect();
        let p2 = pot.iter().chain(pot.iter()).cloned().collect();
        (m2, o, p2, w)
    } else {
        let w = gram(&mut rng, sites);
        (momenta, frame, pot, w)
    };

    let mut blocks = DMatrix::zeros(dim, dim);
    let mut beta_blocks = DMatrix::zeros(dim, dim);
    let mut lap_eigs = DVector::zeros(dim);
    for (k, &pk) in momenta.iter().enumerate() {
        let (u, l) = (2 * k, 2 * k + 1);
        blocks[(u, u)] = c * c;
        blocks[(l, l)] = -c * c;
        blocks[(u, l)] = c * pk;
        blocks[(l, u)] = c * pk;
        beta_blocks[(u, u)] = 1.0;
        beta_blocks[(l, l)] = -1.0;
        lap_eigs[u] = pk * pk;
        lap_eigs[l] = pk * pk;
    }
    let d_free = linalg::symmetrize(&(&frame * blocks * frame.transpose()));
    let beta = linalg::symmetrize(&(&frame * beta_blocks * frame.transpose()));
    let mut v_mat = DMatrix::zeros(dim, dim);
    for (i, &v) in pot.iter().enumerate() {
        v_mat[(2 * i, 2 * i)] = v;
        v_mat[(2 * i + 1, 2 * i + 1)] = v;
    }

    finish(ModelSpace {
        backend: Backend::Synthetic,
        n_sites: sites,
        n_spinor: N_SPINOR,
        dim,
        dx: 1.0,
        grid: (0..sites).map(|i| i as f64).collect(),
        box_len: sites as f64,
        soften: cfg.soften.unwrap_or(1.0),
        c,
        z: p.z,
        d_free,
        v_mat,
        beta,
        w_kernel,
        lap_eigs,
        lap_vecs: frame,
        d_eigen: placeholder_eigen(),
        abs_d_half: DMatrix::zeros(0, 0),
        x_weight: DMatrix::zeros(0, 0),
        y_weight: DMatrix::zeros(0, 0),
    })
}

fn placeholder_eigen() -> Eigen {
    Eigen {
        values: DVector::zeros(0),
        vectors: DMatrix::zeros(0, 0),
    }
}

/// Fill the cached spectral data.
fn finish(mut m: ModelSpace) -> Result<ModelSpace> {
    m.d_eigen = Eigen::new(&m.d_free);
    let floor = 1e-8 * m.c * m.c;
    if let Some(v) = m.d_eigen.values.iter().find(|v| v.abs() < floor) {
        return Err(Error::GapCollapse {
            value: *v,
            threshold: floor,
        });
    }
    m.abs_d_half = m.d_eigen.apply(|x| x.abs().sqrt());
    m.x_weight = m.op_power(OpKind::OneMinusLap, 0.25)?;
    m.y_weight = m.op_power(OpKind::OneMinusLap, 0.5)?;
    Ok(m)
}

impl ModelSpace {
    #[inline]
    pub fn site_of(&self, k: usize) -> usize {
        k / self.n_spinor
    }

    pub fn free_eigen(&self) -> &Eigen {
        &self.d_eigen
    }

    /// Spectral projectors of `D_free` onto its positive and negative parts.
    pub fn free_projectors(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let floor = 1e-8 * self.c * self.c;
        if let Some(v) = self.d_eigen.values.iter().find(|v| v.abs() < floor) {
            return Err(Error::GapCollapse {
                value: *v,
                threshold: floor,
            });
        }
        Ok((
            self.d_eigen.projector(|_, v| v > 0.0),
            self.d_eigen.projector(|_, v| v < 0.0),
        ))
    }

    /// `op^s` through the eigendecomposition of the chosen positive operator.
    pub fn op_power(&self, which: OpKind, s: f64) -> Result<DMatrix<f64>> {
        let c2 = self.c * self.c;
        match which {
            OpKind::AbsD => {
                if s.fract() != 0.0 {
                    if let Some(v) = self.d_eigen.values.iter().find(|v| **v == 0.0) {
                        return Err(Error::Domain(format!(
                            "|D|^{s} with eigenvalue {v} in the spectrum"
                        )));
                    }
                }
                Ok(self.d_eigen.apply(|x| x.abs().powf(s)))
            }
            OpKind::OneMinusLap => Ok(linalg::spectral(&self.lap_eigs, &self.lap_vecs, |k2| {
                (1.0 + k2).powf(s)
            })),
            OpKind::C4MinusC2Lap => Ok(linalg::spectral(&self.lap_eigs, &self.lap_vecs, |k2| {
                (c2 * c2 + c2 * k2).powf(s)
            })),
        }
    }

    /// `|D|^{1/2}`, cached.
    pub fn abs_d_half(&self) -> &DMatrix<f64> {
        &self.abs_d_half
    }

    /// `(1 - Δ)^{1/4}`, cached.
    pub fn x_weight(&self) -> &DMatrix<f64> {
        &self.x_weight
    }

    /// `(1 - Δ)^{1/2}`, cached.
    pub fn y_weight(&self) -> &DMatrix<f64> {
        &self.y_weight
    }

    /// `-Δ` as a dense matrix.
    pub fn neg_lap(&self) -> DMatrix<f64> {
        linalg::spectral(&self.lap_eigs, &self.lap_vecs, |k2| k2)
    }

    /// Write the model in the portable text layout.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "dflab-model 1")?;
        writeln!(w, "backend {}", self.backend)?;
        writeln!(w, "n_sites {}", self.n_sites)?;
        writeln!(w, "n_spinor {}", self.n_spinor)?;
        writeln!(w, "dim {}", self.dim)?;
        writeln!(w, "c {:e}", self.c)?;
        writeln!(w, "z {:e}", self.z)?;
        writeln!(w, "dx {:e}", self.dx)?;
        writeln!(w, "box_len {:e}", self.box_len)?;
        writeln!(w, "soften {:e}", self.soften)?;
        write_vector(&mut w, "grid", self.grid.iter())?;
        write_matrix(&mut w, "d_free", &self.d_free)?;
        write_matrix(&mut w, "v_mat", &self.v_mat)?;
        write_matrix(&mut w, "beta", &self.beta)?;
        write_matrix(&mut w, "w_kernel", &self.w_kernel)?;
        write_vector(&mut w, "lap_eigs", self.lap_eigs.iter())?;
        write_matrix(&mut w, "lap_vecs", &self.lap_vecs)?;
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let mut rd = DumpReader::new(r);
        rd.expect_header("dflab-model 1")?;
        let backend: Backend = rd.scalar("backend")?;
        let n_sites: usize = rd.scalar("n_sites")?;
        let n_spinor: usize = rd.scalar("n_spinor")?;
        let dim: usize = rd.scalar("dim")?;
        if n_spinor != N_SPINOR || dim != n_sites * n_spinor {
            return Err(Error::Format(format!(
                "inconsistent sizes: n_sites {n_sites}, n_spinor {n_spinor}, dim {dim}"
            )));
        }
        let c: f64 = rd.scalar("c")?;
        let z: f64 = rd.scalar("z")?;
        let dx: f64 = rd.scalar("dx")?;
        let box_len: f64 = rd.scalar("box_len")?;
        let soften: f64 = rd.scalar("soften")?;
        let grid = rd.vector("grid", n_sites)?;
        let d_free = rd.matrix("d_free", dim, dim)?;
        let v_mat = rd.matrix("v_mat", dim, dim)?;
        let beta = rd.matrix("beta", dim, dim)?;
        let w_kernel = rd.matrix("w_kernel", n_sites, n_sites)?;
        let lap_eigs = DVector::from_vec(rd.vector("lap_eigs", dim)?);
        let lap_vecs = rd.matrix("lap_vecs", dim, dim)?;
        finish(ModelSpace {
            backend,
            n_sites,
            n_spinor,
            dim,
            dx,
            grid,
            box_len,
            soften,
            c,
            z,
            d_free,
            v_mat,
            beta,
            w_kernel,
            lap_eigs,
            lap_vecs,
            d_eigen: placeholder_eigen(),
            abs_d_half: DMatrix::zeros(0, 0),
            x_weight: DMatrix::zeros(0, 0),
            y_weight: DMatrix::zeros(0, 0),
        })
    }
}

pub(crate) fn write_vector<'a, W: Write>(
    w: &mut W,
    name: &str,
    values: impl Iterator<Item = &'a f64>,
) -> Result<()> {
    writeln!(w, "{name}")?;
    let line: Vec<String> = values.map(|v| format!("{v:e}")).collect();
    writeln!(w, "{}", line.join(" "))?;
    Ok(())
}

pub(crate) fn write_matrix<W: Write>(w: &mut W, name: &str, m: &DMatrix<f64>) -> Result<()> {
    writeln!(w, "{name} {} {}", m.nrows(), m.ncols())?;
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Line-oriented reader for the dump layout.
pub(crate) struct DumpReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> DumpReader<R> {
    pub(crate) fn new(r: R) -> Self {
        Self {
            lines: r.lines(),
            line_no: 0,
        }
    }

    fn next_line(&mut self) -> Result<String> {
        self.line_no += 1;
        match self.lines.next() {
            Some(line) => Ok(line?),
            None => Err(Error::Format(format!("unexpected end of input at line {}", self.line_no))),
        }
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Format(format!("line {}: {msg}", self.line_no))
    }

    pub(crate) fn expect_header(&mut self, header: &str) -> Result<()> {
        let line = self.next_line()?;
        if line.trim() != header {
            return Err(self.err(format!("expected `{header}`, found `{line}`")));
        }
        Ok(())
    }

    pub(crate) fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let line = self.next_line()?;
        let mut it = line.split_whitespace();
        if it.next() != Some(key) {
            return Err(self.err(format!("expected key `{key}`")));
        }
        let raw = it.next().ok_or_else(|| self.err(format!("missing value for `{key}`")))?;
        raw.parse().map_err(|_| self.err(format!("bad value `{raw}` for `{key}`")))
    }

    fn numbers(&mut self, expect: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let vals: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| self.err(e))?;
        if vals.len() != expect {
            return Err(self.err(format!("expected {expect} numbers, found {}", vals.len())));
        }
        Ok(vals)
    }

    pub(crate) fn vector(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        if line.trim() != name {
            return Err(self.err(format!("expected section `{name}`")));
        }
        self.numbers(len)
    }

    pub(crate) fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let header = format!("{name} {rows} {cols}");
        let line = self.next_line()?;
        if line.trim() != header {
            return Err(self.err(format!("expected `{header}`, found `{line}`")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.numbers(cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(c: f64, z: f64) -> PhysParams {
        PhysParams::new(0.05, c, z, 1).unwrap()
    }

    #[test]
    fn derivative_of_a_sine() {
        let n = 32;
        let len = 10.0;
        let a = spectral_derivative(n, len);
        let k = 2.0 * std::f64::consts::PI * 3.0 / len;
        let x: Vec<f64> = (0..n).map(|i| i as f64 * len / n as f64).collect();
        let f = DVector::from_iterator(n, x.iter().map(|x| (k * x).sin()));
        let df = &a * f;
        for i in 0..n {
            assert!((df[i] - k * (k * x[i]).cos()).abs() < 1e-11);
        }
    }

    #[test]
    fn free_zero_momentum_mode_sits_at_c_squared() {
        let m = build_model(&ModelConfig::dirac1d(16, 8.0), &params(10.0, 0.0)).unwrap();
        let e = m.free_eigen();
        let min_pos = e.values.iter().cloned().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
        assert!((min_pos - 100.0).abs() < 1e-10 * 100.0);
        for i in 0..m.dim {
            assert!((e.values[i] + e.values[m.dim - 1 - i]).abs() < 1e-9 * 100.0);
        }
    }

    #[test]
    fn beta_anticommutes_with_kinetic_part() {
        for cfg in [ModelConfig::dirac1d(12, 6.0), ModelConfig::synthetic(12, 5)] {
            let m = build_model(&cfg, &params(3.0, 1.0)).unwrap();
            let kin = &m.d_free - &m.beta * (m.c * m.c);
            let anti = &m.beta * &kin + &kin * &m.beta;
            assert!(anti.norm() < 1e-12 * kin.norm());
            let id = DMatrix::<f64>::identity(m.dim, m.dim);
            assert!((&m.beta * &m.beta - id).norm() < 1e-12);
        }
    }

    #[test]
    fn op_power_inverse_and_square() {
        let m = build_model(&ModelConfig::synthetic(10, 1), &params(2.0, 1.0)).unwrap();
        let id = DMatrix::<f64>::identity(m.dim, m.dim);
        for which in [OpKind::AbsD, OpKind::OneMinusLap, OpKind::C4MinusC2Lap] {
            let p1 = m.op_power(which, 1.0).unwrap();
            let m1 = m.op_power(which, -1.0).unwrap();
            assert!((&p1 * &m1 - &id).norm() < 1e-10);
            assert!((m.op_power(which, 0.0).unwrap() - &id).norm() < 1e-12);
        }
        let half = m.abs_d_half();
        let full = m.op_power(OpKind::AbsD, 1.0).unwrap();
        assert!((half * half - &full).norm() < 1e-10 * full.norm());
    }

    #[test]
    fn dump_round_trip() {
        let m = build_model(&ModelConfig::synthetic(8, 3), &params(2.0, 1.0)).unwrap();
        let mut buf = Vec::new();
        m.write_dump(&mut buf).unwrap();
        let back = ModelSpace::read_dump(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back.d_free, m.d_free);
        assert_eq!(back.w_kernel, m.w_kernel);
        assert_eq!(back.lap_vecs, m.lap_vecs);
        let mut buf2 = Vec::new();
        back.write_dump(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn dump_errors_carry_line_numbers() {
        let err = ModelSpace::read_dump(std::io::Cursor::new("dflab-model 1\nbackend nope\n"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
