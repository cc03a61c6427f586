//! Shared fixtures for the benchmarks.

use dflab::density::DensityMatrix;
use dflab::{build_model, ModelConfig, ModelSpace, PhysParams};

/// The periodic Dirac model at `n_grid` points with two electrons.
pub fn dirac(n_grid: usize) -> (ModelSpace, PhysParams) {
    let p = PhysParams::new(0.05, 40.0, 2.0, 2).expect("valid parameters");
    let m = build_model(&ModelConfig::dirac1d(n_grid, 40.0), &p).expect("valid model");
    (m, p)
}

/// The two lowest positive free orbitals, fully occupied.
pub fn free_ground_state(m: &ModelSpace, q: usize) -> DensityMatrix {
    let e = m.free_eigen();
    let first = e.values.iter().position(|v| *v > 0.0).expect("positive spectrum");
    let cols: Vec<usize> = (first..first + q).collect();
    DensityMatrix::from_orbitals(&e.vectors, &cols, &vec![1.0; q])
}
