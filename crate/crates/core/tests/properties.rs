use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rdmkit::basis::binomial;
use rdmkit::conditions::{
    evaluate_24_reduced, evaluate_24_state, metric_matrices, metric_matrix_from_state, min_eigenpair,
    particle_hole_dual, search_violation, two_four_functional, ConditionInput, TwoFourCondition, METRIC_TOL,
};
use rdmkit::fock::{FockVector, StateVector};
use rdmkit::opalg::{CoefficientVectors, MetricKind};
use rdmkit::hamiltonians::{hubbard_chain, random_two_body};
use rdmkit::oracle::{compute_rdm, contract_two_to_one, ground_state, RdmTensor};
use rdmkit::solver::{lower_bound, ConditionSet, SolverOptions};

fn random_state(r: usize, n: usize, seed: u64) -> StateVector {
    StateVector::random(r, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn sizes() -> impl Strategy<Value = (usize, usize)> {
    (4usize..=6).prop_flat_map(|r| (Just(r), 2..r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metric_routes_agree((r, n) in sizes(), seed in any::<u64>()) {
        let psi = random_state(r, n, seed);
        let d2 = compute_rdm(&psi, 2).unwrap();
        let from_state = metric_matrices(ConditionInput::State(&psi), &MetricKind::ALL).unwrap();
        let from_rdm = metric_matrices(ConditionInput::TwoRdm(&d2), &MetricKind::ALL).unwrap();
        for (a, b) in from_state.iter().zip(&from_rdm) {
            prop_assert_eq!(a.kind, b.kind);
            prop_assert_eq!(&a.labels, &b.labels);
            prop_assert!((&a.matrix - &b.matrix).camax() < 1e-10, "{}", a.kind);
            prop_assert!(a.hermiticity_error() < 1e-12);
            prop_assert!(min_eigenpair(&a.matrix).0 >= -METRIC_TOL, "{}", a.kind);
        }
    }

    #[test]
    fn rdm_normalization((r, n) in sizes(), seed in any::<u64>()) {
        let psi = random_state(r, n, seed);
        let d2 = compute_rdm(&psi, 2).unwrap();
        prop_assert!((d2.trace().re - binomial(n, 2) as f64).abs() < 1e-10);
        prop_assert!(d2.hermiticity_error() < 1e-12);
        prop_assert!(d2.min_eigenvalue() >= -1e-12);
    }

    #[test]
    fn mixtures_stay_positive((r, n) in sizes(), s1 in any::<u64>(), s2 in any::<u64>(), w in 0.0f64..1.0) {
        let a = compute_rdm(&random_state(r, n, s1), 2).unwrap();
        let b = compute_rdm(&random_state(r, n, s2), 2).unwrap();
        let mix = RdmTensor::mix(w, &a, &b).unwrap();
        for m in metric_matrices(ConditionInput::TwoRdm(&mix), &MetricKind::ALL).unwrap() {
            prop_assert!(min_eigenpair(&m.matrix).0 >= -METRIC_TOL, "{}", m.kind);
        }
    }

    #[test]
    fn two_four_routes_agree((r, n) in sizes(), seed in any::<u64>(), idx in 0usize..16) {
        let psi = random_state(r, n, seed);
        let d2 = compute_rdm(&psi, 2).unwrap();
        let coeffs = CoefficientVectors::random(r, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a));
        let cond = &TwoFourCondition::all()[idx];
        let a = evaluate_24_state(&psi, cond, &coeffs).unwrap();
        let b = evaluate_24_reduced(&d2, cond, &coeffs).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        prop_assert!(b >= -1e-9);
    }

    #[test]
    fn dual_is_involution(idx in 1usize..=8, dual in any::<bool>()) {
        let c = TwoFourCondition::new(idx, dual).unwrap();
        let d = particle_hole_dual(&c);
        prop_assert_ne!(&c, &d);
        prop_assert_eq!(particle_hole_dual(&d), c);
    }
}

#[test]
fn lifting_consistency() {
    // functionals built in a four-mode frame agree with the state route on the full space
    let (r, n) = (8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..3 {
        let psi = random_state(r, n, seed);
        let d2 = compute_rdm(&psi, 2).unwrap();
        for cond in TwoFourCondition::all() {
            let coeffs = CoefficientVectors::random(r, &mut rng);
            let f = two_four_functional(&cond, &coeffs).unwrap();
            let d1 = contract_two_to_one(&d2.matrix, r, n).unwrap();
            let lifted = f.evaluate(&d1, &d2.matrix).re;
            let direct = evaluate_24_state(&psi, &cond, &coeffs).unwrap();
            assert!((lifted - direct).abs() < 1e-9, "{cond}: {lifted} vs {direct}");
        }
    }
}

#[test]
fn solver_is_deterministic_and_bounds_from_below() {
    let ints = random_two_body(4, 11, 1.0).unwrap();
    let exact = ground_state(&ints, 2).unwrap().energy;
    let opts = SolverOptions::default();
    let a = lower_bound(&ints, 2, ConditionSet::DQG, &opts).unwrap();
    let b = lower_bound(&ints, 2, ConditionSet::DQG, &opts).unwrap();
    assert_eq!(a.energy, b.energy);
    assert_eq!(a.iterations, b.iterations);
    assert!(a.converged);
    assert!(a.energy <= exact + 1e-6, "{} > {exact}", a.energy);
    let hub = hubbard_chain(3, 1.0, 4.0, false).unwrap();
    let exact = ground_state(&hub, 3).unwrap().energy;
    let d = lower_bound(&hub, 3, ConditionSet::D, &opts).unwrap();
    let dqg = lower_bound(&hub, 3, ConditionSet::DQG, &opts).unwrap();
    assert!(d.energy <= dqg.energy + 1e-6);
    assert!(dqg.energy <= exact + 1e-6);
}

/// `prod_j (a_j + a†_j)` applied to a Fock vector.
fn particle_hole(v: &FockVector) -> FockVector {
    let r = v.r();
    let mut out = v.clone();
    for j in (0..r).rev() {
        let mut e = vec![C64::new(0.0, 0.0); r];
        e[j] = C64::new(1.0, 0.0);
        let mut next = out.apply_linear(&e, false);
        next.axpy(C64::new(1.0, 0.0), &out.apply_linear(&e, true));
        out = next;
    }
    out
}

#[test]
fn dual_matches_particle_hole_image() {
    let (r, n) = (6, 3);
    for seed in 0..4 {
        let psi = random_state(r, n, seed).to_fock();
        let phi = particle_hole(&psi);
        let phi2 = particle_hole(&phi);
        // Φ² = ±1: symmetrize with the matching phase
        let sign = phi2.inner(&psi).re.signum();
        let mut sym = psi.clone();
        let phase = if sign > 0.0 { C64::new(1.0, 0.0) } else { C64::new(0.0, -1.0) };
        sym.axpy(phase, &phi);
        let amps = sym.project_sector(n).unwrap();
        let psi = StateVector::new(r, n, amps).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        for cond in TwoFourCondition::all() {
            let coeffs = CoefficientVectors::random(r, &mut rng);
            let a = evaluate_24_state(&psi, &cond, &coeffs).unwrap();
            let b = evaluate_24_state(&psi, &particle_hole_dual(&cond), &coeffs.conj()).unwrap();
            assert!((a - b).abs() < 1e-9, "{cond}: {a} vs {b}");
        }
    }
}

#[test]
fn search_is_deterministic_and_finds_no_violation_on_states() {
    let psi = random_state(4, 2, 3);
    let d2 = compute_rdm(&psi, 2).unwrap();
    let cond = TwoFourCondition::new(1, false).unwrap();
    let a = search_violation(&d2, &cond, 2, 9).unwrap();
    let b = search_violation(&d2, &cond, 2, 9).unwrap();
    assert_eq!(a.best_value, b.best_value);
    assert_eq!(a.best_coeffs, b.best_coeffs);
    assert!(a.best_value >= -1e-9);
}

#[test]
fn search_flags_broken_pair_positivity() {
    // mix a valid 2-RDM with a pair-basis matrix that has a negative eigenvalue
    let (r, n) = (4, 2);
    let psi = random_state(r, n, 5);
    let valid = compute_rdm(&psi, 2).unwrap();
    let m = binomial(r, 2);
    let mut bad = valid.clone();
    bad.matrix = nalgebra::DMatrix::zeros(m, m);
    bad.matrix[(0, 0)] = C64::new(2.0, 0.0);
    bad.matrix[(5, 5)] = C64::new(-1.0, 0.0);
    let mixed = RdmTensor::mix(0.5, &valid, &bad).unwrap();
    let d2_report = metric_matrix_from_state(&psi, MetricKind::D2);
    assert!(min_eigenpair(&d2_report.matrix).0 >= -METRIC_TOL);
    let reports = metric_matrices(ConditionInput::TwoRdm(&mixed), &[MetricKind::D2]).unwrap();
    assert!(reports[0].report(METRIC_TOL).violated);
    let best = TwoFourCondition::all()
        .iter()
        .map(|c| search_violation(&mixed, c, 2, 1).unwrap().best_value)
        .fold(f64::INFINITY, f64::min);
    assert!(best < 0.0, "{best}");
}
