use dflab::density::{self, DensityMatrix};
use dflab::linalg;
use dflab::meanfield::{self, Sea};
use dflab::retraction::{self, RetractionOptions};
use dflab::solvers::project_box_trace;
use dflab::{build_model, ModelConfig, ModelSpace, PhysParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synth(half: usize, seed: u64, alpha: f64, c: f64) -> (ModelSpace, PhysParams) {
    let p = PhysParams::new(alpha, c, 1.0, 2).unwrap();
    (build_model(&ModelConfig::synthetic(2 * half, seed), &p).unwrap(), p)
}

/// Random state in `Γ_q`: random frame, occupations uniform in `[0, 1]`, trace capped at `q`.
fn random_state(rng: &mut ChaCha8Rng, dim: usize, q: usize) -> DensityMatrix {
    let u = linalg::random_orthogonal(rng, dim);
    let mut occ: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    let total: f64 = occ.iter().sum();
    if total > q as f64 {
        occ.iter_mut().for_each(|o| *o *= q as f64 / total);
    }
    DensityMatrix::from_symmetric(linalg::spectral(&DVector::from_vec(occ), &u, |v| v))
}

fn random_symmetric(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    linalg::symmetrize(&linalg::gaussian_matrix(rng, dim, dim))
}

/// Pair operator written out entry by entry.
fn w_oracle(h: &DMatrix<f64>, m: &ModelSpace) -> DMatrix<f64> {
    let ns = m.n_spinor;
    let mut out = DMatrix::zeros(m.dim, m.dim);
    for k in 0..m.dim {
        for l in 0..m.dim {
            out[(k, l)] = -m.w_kernel[(k / ns, l / ns)] * h[(k, l)];
        }
        let i = k / ns;
        let mut hartree = 0.0;
        for j in 0..m.n_sites {
            let n_j: f64 = (0..ns).map(|s| h[(ns * j + s, ns * j + s)]).sum();
            hartree += m.w_kernel[(i, j)] * n_j;
        }
        out[(k, k)] += hartree;
    }
    out
}

fn energy_oracle(a: &DMatrix<f64>, m: &ModelSpace, p: &PhysParams) -> f64 {
    let one = ((&m.d_free - &m.v_mat) * a).trace();
    let pair = (w_oracle(a, m) * a).trace();
    one + 0.5 * p.alpha * pair - p.c * p.c * a.trace()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pair_operator_matches_entrywise_oracle(seed in 0u64..1000, half in 4usize..7) {
        let (m, _) = synth(half, seed, 0.3, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_symmetric(&mut rng, m.dim);
        let diff = (meanfield::w_of(&h, &m) - w_oracle(&h, &m)).norm();
        prop_assert!(diff <= 1e-13 * h.norm().max(1.0));
    }

    #[test]
    fn energy_difference_matches_totals(seed in 0u64..1000, half in 4usize..7) {
        let (m, p) = synth(half, seed, 0.4, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let a = random_state(&mut rng, m.dim, p.q);
        let b = random_state(&mut rng, m.dim, p.q);
        let d_b = meanfield::assemble(b.mat(), &m, &p);
        let got = meanfield::energy_difference(a.mat(), b.mat(), &d_b, &m, &p);
        let want = energy_oracle(a.mat(), &m, &p) - energy_oracle(b.mat(), &m, &p);
        prop_assert!((got - want).abs() <= 1e-11 * p.c * p.c * p.q as f64, "{got} vs {want}");
        let alt = meanfield::energy_alt(&a, &m, &p);
        prop_assert!((alt - meanfield::energy(&a, &m, &p)).abs() <= 1e-11 * p.c * p.c);
    }

    #[test]
    fn t_maps_gamma_q_into_positive_range(seed in 0u64..1000, half in 4usize..7, c in 2.0f64..20.0) {
        let (m, p) = synth(half, seed, 0.3, c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 11);
        let g = random_state(&mut rng, m.dim, p.q);
        let mf = meanfield::mean_field(&g, &m, &p).unwrap();
        let t = retraction::t_map(&g, &m, &p).unwrap();
        let mem = density::in_gamma_q_plus(&t, &mf.p_plus, p.q, 1e-12);
        prop_assert!(mem.member, "{mem:?}");
        prop_assert!(t.trace() <= g.trace() + 1e-12);
    }

    #[test]
    fn sea_projectors_split_identity(seed in 0u64..1000, half in 4usize..7) {
        let (m, p) = synth(half, seed, 0.3, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 13);
        let g = random_state(&mut rng, m.dim, p.q);
        let sea = Sea::of_density(&g, &m, &p).unwrap();
        let id = DMatrix::<f64>::identity(m.dim, m.dim);
        prop_assert!((&sea.p_plus + &sea.p_minus - &id).norm() <= 1e-12);
        prop_assert!((&sea.p_plus * &sea.p_plus - &sea.p_plus).norm() <= 1e-12);
        prop_assert_eq!(sea.pos_basis.ncols() + sea.neg_basis.ncols(), m.dim);
    }

    #[test]
    fn box_trace_projection_is_nearest(seed in 0u64..1000, dim in 2usize..10, total in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = random_symmetric(&mut rng, dim);
        let x = project_box_trace(&y, 0.0, 1.0, total);
        let e = linalg::Eigen::new(&x);
        prop_assert!(e.values.iter().all(|v| *v >= -1e-12 && *v <= 1.0 + 1e-12));
        prop_assert!((x.trace() - total).abs() <= 1e-10);
        // Any other feasible point is at least as far from y.
        for _ in 0..8 {
            let z = random_state(&mut rng, dim, dim);
            let s = z.trace();
            if s <= 0.0 {
                continue;
            }
            let mut occ = z.occupations().map(|v| v * total / s);
            if occ.iter().any(|v| *v > 1.0) {
                occ = occ.map(|v| v.min(1.0));
                let cap: f64 = occ.sum();
                if cap < total {
                    continue;
                }
                occ *= total / cap;
            }
            let zf = linalg::spectral(&occ, &z.eigen().vectors, |v| v);
            prop_assert!((&y - &x).norm() <= (&y - &zf).norm() + 1e-10);
        }
    }

    #[test]
    fn dp_plus_matches_central_difference(seed in 0u64..1000, half in 4usize..7) {
        let (m, p) = synth(half, seed, 0.5, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 17);
        let g = random_state(&mut rng, m.dim, p.q);
        let h = random_symmetric(&mut rng, m.dim);
        let h = &h / linalg::op_norm_sym(&h);
        let mf = meanfield::mean_field(&g, &m, &p).unwrap();
        let dp = meanfield::dp_plus(&h, &mf, &m, &p).unwrap();
        let t = 1e-4;
        let plus = meanfield::mean_field(&DensityMatrix::from_symmetric(g.mat() + &h * t), &m, &p).unwrap();
        let minus = meanfield::mean_field(&DensityMatrix::from_symmetric(g.mat() - &h * t), &m, &p).unwrap();
        let fd = (&plus.p_plus - &minus.p_plus) / (2.0 * t);
        // Central differences leave an O(t²) remainder.
        prop_assert!((fd - &dp).norm() <= 1e-6 * dp.norm().max(1.0));
    }
}

#[test]
fn retraction_limit_is_fixed_point_of_its_own_sea() {
    let p = PhysParams::new(0.5, 20.0, 2.0, 2).unwrap();
    let m = build_model(&ModelConfig::dirac1d(32, 10.0), &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (p_plus, _) = m.free_projectors().unwrap();
    // Start inside the positive free range so the iteration stays in the contraction regime.
    let g = DensityMatrix::from_symmetric(linalg::sandwich(&p_plus, random_state(&mut rng, m.dim, p.q).mat()));
    let tr = retraction::retract(&g, &m, &p, &RetractionOptions::with_tol(1e-12 * p.c * p.c)).unwrap();
    assert!(tr.converged);
    assert!(tr.in_gamma_q_plus());
    let theta = tr.theta.mat();
    let mf = meanfield::mean_field(&tr.theta, &m, &p).unwrap();
    assert!((&mf.p_plus * theta * &mf.p_plus - theta).norm() <= 1e-9);
    // Geometric decay of the steps until they reach the floor.
    let r = &tr.residuals;
    for w in r.windows(2).take_while(|w| w[1] > 1e-10 * p.c * p.c) {
        assert!(w[1] < w[0], "{r:?}");
    }
}

#[test]
fn model_and_density_dumps_round_trip() {
    let (m, p) = synth(4, 4, 0.2, 2.0);
    let mut buf = Vec::new();
    m.write_dump(&mut buf).unwrap();
    let back = ModelSpace::read_dump(buf.as_slice()).unwrap();
    assert_eq!(back.d_free, m.d_free);
    assert_eq!(back.w_kernel, m.w_kernel);
    assert_eq!(back.v_mat, m.v_mat);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = random_state(&mut rng, m.dim, p.q);
    let mut buf = Vec::new();
    g.write_dump(&mut buf).unwrap();
    assert_eq!(DensityMatrix::read_dump(buf.as_slice()).unwrap(), g);
}
