//! Acceptance criteria, one pass/fail line each at the pinned tolerances.
//! Run with `cargo test --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rdmkit::conditions::{
    cancel_check, evaluate_24_reduced, evaluate_24_state, metric_matrix_from_rdms, min_eigenpair,
    two_four_functional, unfactored_pair_operator, high_degree_residual, TwoFourCondition,
};
use rdmkit::fock::StateVector;
use rdmkit::hamiltonians::{hubbard_chain, pairing, random_two_body, reduced_hamiltonian, IntegralSet};
use rdmkit::opalg::{CoefficientVectors, MetricKind, RdmFunctional};
use rdmkit::oracle::{compute_rdm, contract_two_to_one, expectation, ground_state, RdmTensor};
use rdmkit::solver::{lower_bound, ConditionSet, SolverOptions};

struct Outcome {
    passed: bool,
    detail: String,
}

fn run(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let passed = out.passed && in_time;
    println!(
        "[{}] criterion {id} {name}: {}; runtime {:.1} s (budget {} s{})",
        if passed { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        budget.as_secs(),
        if in_time { "" } else { ", exceeded" }
    );
    passed
}

fn two_rdm(psi: &StateVector) -> (DMatrix<C64>, RdmTensor) {
    let d2 = compute_rdm(psi, 2).expect("2-RDM");
    let d1 = contract_two_to_one(&d2.matrix, d2.r, d2.n).expect("contraction");
    (d1, d2)
}

fn n2_completeness() -> Outcome {
    let mut models: Vec<(String, IntegralSet)> = Vec::new();
    for r in [4, 6] {
        for seed in 1..=5 {
            models.push((format!("random r={r} seed={seed}"), random_two_body(r, seed, 1.0).unwrap()));
        }
    }
    for u in [0.0, 4.0] {
        models.push((format!("hubbard L=2 U={u}"), hubbard_chain(2, 1.0, u, false).unwrap()));
    }
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (label, ham) in &models {
        let exact = ground_state(ham, 2).unwrap().energy;
        let res = lower_bound(ham, 2, ConditionSet::D, &SolverOptions::default()).unwrap();
        let err = (res.energy - exact).abs();
        worst = worst.max(err);
        if err >= 1e-6 {
            failures.push(label.clone());
        }
    }
    Outcome {
        passed: failures.is_empty(),
        detail: format!(
            "max |E(D2) - E(exact)| = {worst:.2e} over {} models (tol 1e-6){}",
            models.len(),
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    }
}

fn pairing_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut failures = Vec::new();
    for levels in [2, 3, 4] {
        for g in [0.5, 1.0, 2.0] {
            for n in [2, 4] {
                let ham = pairing(&vec![0.0; levels], g).unwrap();
                let exact = ground_state(&ham, n).unwrap().energy;
                let res = lower_bound(&ham, n, ConditionSet::DQG, &SolverOptions::default()).unwrap();
                let err = (res.energy - exact).abs();
                worst = worst.max(err);
                cases += 1;
                if err >= 1e-4 {
                    failures.push(format!("P={levels} g={g} N={n}"));
                }
            }
        }
    }
    Outcome {
        passed: failures.is_empty(),
        detail: format!(
            "max |E(DQG) - E(exact)| = {worst:.2e} over {cases} models (tol 1e-4){}",
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    }
}

fn relaxation_ordering() -> Outcome {
    let mut models = vec![("hubbard L=3 U/t=4".to_string(), hubbard_chain(3, 1.0, 4.0, false).unwrap())];
    for seed in 1..=5 {
        models.push((format!("random r=6 seed={seed}"), random_two_body(6, seed, 1.0).unwrap()));
    }
    let mut worst_drop: f64 = 0.0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut unconverged = 0;
    let mut failures = Vec::new();
    for (label, ham) in &models {
        let exact = ground_state(ham, 3).unwrap().energy;
        let rows: Vec<_> = ConditionSet::NESTED
            .iter()
            .map(|&c| lower_bound(ham, 3, c, &SolverOptions::default()).unwrap())
            .collect();
        for pair in rows.windows(2) {
            let drop = pair[0].energy - pair[1].energy;
            worst_drop = worst_drop.max(drop);
            if drop > 1e-6 {
                failures.push(format!("{label}: {} > {}", pair[0].conditions, pair[1].conditions));
            }
        }
        for row in &rows {
            if !row.converged {
                unconverged += 1;
                continue;
            }
            let excess = row.energy - exact;
            worst_excess = worst_excess.max(excess);
            if excess > 1e-6 {
                failures.push(format!("{label}: {} above exact", row.conditions));
            }
        }
    }
    Outcome {
        passed: failures.is_empty(),
        detail: format!(
            "largest decrease along the chain {worst_drop:.2e} (slack 1e-6), largest converged bound - exact {worst_excess:.2e} (tol 1e-6), {unconverged} of {} runs unconverged{}",
            models.len() * ConditionSet::NESTED.len(),
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    }
}

fn forward_bipolar() -> Outcome {
    let mut worst_metric = f64::INFINITY;
    let mut worst_24 = f64::INFINITY;
    let mut failures = Vec::new();
    let conds = TwoFourCondition::all();
    for (r, n) in [(4, 2), (6, 3), (8, 4)] {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + r as u64);
        // one set of 100 coefficient draws per (r, N), shared across states
        let functionals: Vec<RdmFunctional> = (0..100)
            .flat_map(|_| {
                let coeffs = CoefficientVectors::random(r, &mut rng);
                conds.iter().map(move |c| two_four_functional(c, &coeffs).unwrap()).collect::<Vec<_>>()
            })
            .collect();
        let mut metric_min = f64::INFINITY;
        let mut min_24 = f64::INFINITY;
        for _ in 0..1000 {
            let psi = StateVector::random(r, n, &mut rng).unwrap();
            let (d1, d2) = two_rdm(&psi);
            for kind in MetricKind::ALL {
                let m = metric_matrix_from_rdms(r, &d1, &d2.matrix, kind).unwrap();
                metric_min = metric_min.min(min_eigenpair(&m.matrix).0);
            }
            for f in &functionals {
                min_24 = min_24.min(f.evaluate(&d1, &d2.matrix).re);
            }
        }
        if metric_min < -1e-10 || min_24 < -1e-9 {
            failures.push(format!("(r={r}, N={n})"));
        }
        worst_metric = worst_metric.min(metric_min);
        worst_24 = worst_24.min(min_24);
    }
    Outcome {
        passed: failures.is_empty(),
        detail: format!(
            "min metric eigenvalue {worst_metric:.2e} (tol -1e-10), min (2,4) value {worst_24:.2e} (tol -1e-9) over 3000 states x 16 conditions x 100 draws{}",
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    }
}

fn cancellation() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for r in [4, 5, 6] {
        for cond in TwoFourCondition::all() {
            let rep = cancel_check(&cond, r, 5, 7 + r as u64).unwrap();
            worst = worst.max(rep.max_residual);
            if !rep.passed || rep.max_residual >= 1e-10 {
                failures.push(format!("{cond} r={r}"));
            }
        }
    }
    let pair = high_degree_residual(&unfactored_pair_operator(4, 3));
    let pair_fails = pair > 1e-2;
    Outcome {
        passed: failures.is_empty() && pair_fails,
        detail: format!(
            "16 conditions x r=4,5,6: max surviving degree-6/8 coefficient {worst:.2e} (tol 1e-10); unfactored pair residual {pair:.2e} (must exceed 1e-2){}",
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    }
}

fn route_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let conds = TwoFourCondition::all();
    let mut worst_24: f64 = 0.0;
    for i in 0..200 {
        let r = 4 + i % 3;
        let n = rng.random_range(2..r);
        let psi = StateVector::random(r, n, &mut rng).unwrap();
        let d2 = compute_rdm(&psi, 2).unwrap();
        let coeffs = CoefficientVectors::random(r, &mut rng);
        let cond = &conds[i % conds.len()];
        let a = evaluate_24_state(&psi, cond, &coeffs).unwrap();
        let b = evaluate_24_reduced(&d2, cond, &coeffs).unwrap();
        worst_24 = worst_24.max((a - b).abs());
    }
    let generators = [
        ("pairing", pairing(&[0.0, 1.0, 2.0], 1.0).unwrap()),
        ("hubbard", hubbard_chain(3, 1.0, 4.0, false).unwrap()),
        ("random", random_two_body(6, 2, 1.0).unwrap()),
    ];
    let mut worst_e: f64 = 0.0;
    for (_, ham) in &generators {
        let k2 = reduced_hamiltonian(ham, 3).unwrap();
        let op = ham.to_operator();
        for _ in 0..100 {
            let psi = StateVector::random(ham.r, 3, &mut rng).unwrap();
            let d2 = compute_rdm(&psi, 2).unwrap();
            let a = k2.energy(&d2.matrix);
            let b = expectation(&psi, &op).unwrap();
            worst_e = worst_e.max((a - b).norm());
        }
    }
    Outcome {
        passed: worst_24 < 1e-9 && worst_e < 1e-10,
        detail: format!(
            "max |state - reduced| (2,4) difference {worst_24:.2e} over 200 draws (tol 1e-9); max |Tr(K2 D2) - <H>| {worst_e:.2e} over 300 states (tol 1e-10)"
        ),
    }
}

/// `sum_w w <prod n_j or (1 - n_j)>` read directly off the amplitudes.
fn occupation_expectation(psi: &StateVector, cond: &TwoFourCondition, orbitals: &[usize]) -> f64 {
    let mut total = 0.0;
    for (state, amp) in psi.basis().iter().zip(psi.amplitudes().iter()) {
        for (pattern, w) in &cond.patterns {
            let factor: f64 = pattern
                .daggers()
                .iter()
                .zip(orbitals)
                .map(|(&x, &j)| if state.is_occupied(j) == x { 1.0 } else { 0.0 })
                .product();
            total += *w as f64 * factor * amp.norm_sqr();
        }
    }
    total
}

fn diagonal_specialization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let conds = TwoFourCondition::all();
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let r = 4 + i % 3;
        let n = rng.random_range(1..r);
        let psi = StateVector::random(r, n, &mut rng).unwrap();
        let orbitals: Vec<usize> = sample(&mut rng, r, 4).into_vec();
        let coeffs = CoefficientVectors::unit(r, [orbitals[0], orbitals[1], orbitals[2], orbitals[3]]).unwrap();
        let d2 = (n >= 2).then(|| compute_rdm(&psi, 2).unwrap());
        for cond in &conds {
            let expected = occupation_expectation(&psi, cond, &orbitals);
            worst = worst.max((evaluate_24_state(&psi, cond, &coeffs).unwrap() - expected).abs());
            if let Some(d2) = &d2 {
                worst = worst.max((evaluate_24_reduced(d2, cond, &coeffs).unwrap() - expected).abs());
            }
        }
    }
    Outcome {
        passed: worst < 1e-12,
        detail: format!("max deviation from the occupation-product expectation {worst:.2e} over 50 states x 16 conditions (tol 1e-12)"),
    }
}

fn main() -> ExitCode {
    let results = [
        run(1, "N=2 completeness", Duration::from_secs(60), n2_completeness),
        run(2, "pairing exactness", Duration::from_secs(300), pairing_exactness),
        run(3, "strict relaxation ordering", Duration::from_secs(600), relaxation_ordering),
        run(4, "forward bipolar audit", Duration::from_secs(600), forward_bipolar),
        run(5, "cancellation certificate", Duration::from_secs(120), cancellation),
        run(6, "two-route agreement", Duration::from_secs(120), route_agreement),
        run(7, "diagonal specialization", Duration::from_secs(60), diagonal_specialization),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
