use dflab::density::{self, DensityMatrix};
use dflab::linalg;
use dflab::meanfield::{self, Sea};
use dflab::retraction::{self, RetractionOptions};
use dflab::solvers::{self, SolveOptions};
use dflab::verify::{self, SecondOrderSetup};
use dflab::{build_model, ClaimId, ModelConfig, ModelSpace, PhysParams, VerifyConfig};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dirac() -> (ModelSpace, PhysParams) {
    let p = PhysParams::new(0.3, 10.0, 2.0, 2).unwrap();
    (build_model(&ModelConfig::dirac1d(24, 10.0), &p).unwrap(), p)
}

/// Rank-`q` projector onto random combinations of the columns of `basis`.
fn random_determinant(rng: &mut ChaCha8Rng, basis: &DMatrix<f64>, q: usize) -> DensityMatrix {
    let k = basis.ncols();
    let u = linalg::random_orthogonal(rng, k);
    let orbitals = basis * u.columns(0, q);
    DensityMatrix::from_symmetric(&orbitals * orbitals.transpose())
}

#[test]
fn df_minimizer_is_a_positive_filled_state() {
    let (m, p) = dirac();
    let rep = solvers::solve_df(&m, &p, &SolveOptions::default()).unwrap();
    assert!(rep.converged);
    assert!((rep.trace - p.q as f64).abs() <= 1e-9);
    assert!(rep.filled_shell);
    let mf = meanfield::mean_field(&rep.gamma, &m, &p).unwrap();
    let mem = density::in_gamma_q_plus(&rep.gamma, &mf.p_plus, p.q, 1e-9);
    assert!(mem.member, "{mem:?}");
    assert!((rep.energy - meanfield::energy(&rep.gamma, &m, &p)).abs() <= 1e-9 * p.c * p.c);
}

#[test]
fn df_minimizer_beats_sampled_states() {
    let (m, p) = dirac();
    let rep = solvers::solve_df(&m, &p, &SolveOptions::default()).unwrap();
    let sea = Sea::free(&m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let opts = RetractionOptions::with_tol(1e-12 * p.c * p.c);
    for _ in 0..20 {
        // Low-lying positive states are where competitors are likeliest.
        let low = sea.pos_basis.columns(0, 6).into_owned();
        let g = random_determinant(&mut rng, &low, p.q);
        let (e, _) = retraction::df_energy(&g, &m, &p, &opts).unwrap();
        assert!(e >= rep.energy - 1e-9, "{e} < {}", rep.energy);
    }
}

#[test]
fn ephf_minimizer_is_feasible_and_beats_sampled_states() {
    let (m, p) = dirac();
    let sea = Sea::free(&m).unwrap();
    let rep = solvers::solve_ephf(&sea, &m, &p, &SolveOptions::default()).unwrap();
    let mem = density::in_gamma_q_g(&rep.gamma, &sea.p_plus, &sea.p_minus, p.q, 1e-9);
    assert!(mem.member, "{mem:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let g = random_determinant(&mut rng, &sea.pos_basis, p.q);
        assert!(meanfield::energy(&g, &m, &p) >= rep.energy - 1e-9);
    }
}

#[test]
fn max_min_loop_is_monotone() {
    let (m, p) = dirac();
    let opts = SolveOptions {
        sea: solvers::SeaChoice::Free,
        ..SolveOptions::default()
    };
    let res = solvers::mittleman(&m, &p, &opts).unwrap();
    assert!(res.monotone);
    assert!(res.converged);
    let first = res.trajectory[0].energy;
    assert!(res.e_q_estimate >= first);
    assert!(res.df_energy.is_none());
}

#[test]
fn claim_ids_round_trip() {
    for id in ClaimId::ALL {
        let back: ClaimId = id.as_str().parse().unwrap();
        assert_eq!(back, id);
        assert_eq!(id.to_string(), id.as_str());
    }
    assert!("nonsense".parse::<ClaimId>().is_err());
}

#[test]
fn verify_config_round_trips_through_json() {
    let mut cfg = VerifyConfig::default();
    cfg.reseed(42);
    let text = serde_json::to_string(&cfg).unwrap();
    let back: VerifyConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn small_second_order_claim_passes() {
    let cfg = VerifyConfig {
        second_order: SecondOrderSetup::default(),
        ..VerifyConfig::default()
    };
    let res = verify::run_claim(ClaimId::SecondOrder, &cfg, &SolveOptions::default());
    assert!(res.pass, "{:?}", res.failed_checks());
    let slope = res.measured["alpha_slope.slope"];
    assert!((slope - 2.0).abs() <= 0.3);
}
