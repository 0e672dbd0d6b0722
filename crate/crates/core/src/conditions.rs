//! N-representability conditions: metric matrices (D1, Q1, D2, Q2, G2, T1,
//! generalized T2) and the eight (2,4)-positivity functionals together with
//! their particle-hole duals.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::fock::{FockVector, OccupationState, StateVector};
use crate::opalg::{
    build_c_normal, build_c_tensor, derive_metric_map, hermitian_square, reduce_normal, CoefficientVectors,
    MetricBasis, MetricKind, MetricMap, NormalPoly, OperatorPolynomial, Pattern, RdmFunctional, Word,
    REDUCIBILITY_TOL,
};
use crate::oracle::{compute_rdm, contract_two_to_one, RdmTensor};

type C64 = Complex64;

/// Metric eigenvalues below `-METRIC_TOL` count as violations.
pub const METRIC_TOL: f64 = 1e-10;
/// (2,4) functional values below `-TWO_FOUR_TOL` count as violations.
pub const TWO_FOUR_TOL: f64 = 1e-9;
/// Largest admissible surviving degree-6/8 coefficient.
pub const CANCEL_TOL: f64 = 1e-10;

/// A labeled Hermitian matrix whose positivity is one condition.
#[derive(Debug, Clone)]
pub struct MetricMatrix {
    pub kind: MetricKind,
    pub matrix: DMatrix<C64>,
    pub labels: Vec<Vec<usize>>,
}

impl MetricMatrix {
    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).camax()
    }

    pub fn report(&self, tol: f64) -> ConditionReport {
        let (min, witness) = min_eigenpair(&self.matrix);
        ConditionReport::new(self.kind.name(), min, self.dimension(), tol, witness)
    }
}

/// Smallest eigenvalue and its eigenvector (Hermitian part of `m`).
pub fn min_eigenpair(m: &DMatrix<C64>) -> (f64, Vec<C64>) {
    if m.nrows() == 0 {
        return (0.0, Vec::new());
    }
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let (idx, val) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty");
    (val, eig.eigenvectors.column(idx).iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConditionReport {
    pub kind: String,
    pub min_eigenvalue: f64,
    pub dimension: usize,
    pub violated: bool,
    pub witness: Vec<C64>,
}

impl ConditionReport {
    pub fn new(kind: &str, min_eigenvalue: f64, dimension: usize, tol: f64, witness: Vec<C64>) -> Self {
        ConditionReport {
            kind: kind.to_string(),
            min_eigenvalue,
            dimension,
            violated: min_eigenvalue < -tol,
            witness,
        }
    }
}

type MapCache = Mutex<HashMap<(MetricKind, usize), Arc<MetricMap>>>;

static MAP_CACHE: OnceLock<MapCache> = OnceLock::new();

/// Derived metric map, memoized per `(kind, r)`.
pub fn metric_map(kind: MetricKind, r: usize) -> Result<Arc<MetricMap>> {
    let cache = MAP_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(m) = cache.lock().expect("map cache poisoned").get(&(kind, r)) {
        return Ok(m.clone());
    }
    let map = Arc::new(derive_metric_map(kind, r)?);
    cache.lock().expect("map cache poisoned").insert((kind, r), map.clone());
    Ok(map)
}

/// Applies an operator word to a Fock vector.
fn apply_word(v: &FockVector, word: &[crate::opalg::Factor]) -> Vec<(u32, C64)> {
    let mut out = Vec::new();
    for (idx, amp) in v.amplitudes().iter().enumerate() {
        if amp.norm() == 0.0 {
            continue;
        }
        if let Some((sign, t)) = OccupationState(idx as u32).act_word(word) {
            out.push((t.0, amp * sign));
        }
    }
    out
}

fn adjoint_word(w: &[crate::opalg::Factor]) -> Word {
    w.iter().rev().map(|f| f.adjoint()).collect()
}

/// Gram matrix `G[a,b] = <v_a | v_b>` of sparse vectors.
fn gram(vectors: &[Vec<(u32, C64)>]) -> DMatrix<C64> {
    let mut support: HashMap<u32, usize> = HashMap::new();
    for v in vectors {
        for &(s, _) in v {
            let next = support.len();
            support.entry(s).or_insert(next);
        }
    }
    let mut m = DMatrix::<C64>::zeros(support.len(), vectors.len());
    for (col, v) in vectors.iter().enumerate() {
        for &(s, z) in v {
            m[(support[&s], col)] += z;
        }
    }
    m.adjoint() * m
}

/// Metric matrix as the Gram matrix of its operator basis acting on `psi`.
pub fn metric_matrix_from_state(psi: &StateVector, kind: MetricKind) -> MetricMatrix {
    let basis = MetricBasis::new(kind, psi.r());
    let f = psi.to_fock();
    let dim = basis.dimension();
    // <X_a X_b†> = <X_a† psi | X_b† psi>
    let primary: Vec<_> = basis
        .rows
        .iter()
        .map(|row| row.primary.as_ref().map(|w| apply_word(&f, &adjoint_word(w))).unwrap_or_default())
        .collect();
    let mut m = gram(&primary);
    if basis.rows.iter().any(|row| row.partner.is_some()) {
        // <Y_b Y_a†> = <Y_b† psi | Y_a† psi>
        let partner: Vec<_> = basis
            .rows
            .iter()
            .map(|row| row.partner.as_ref().map(|w| apply_word(&f, &adjoint_word(w))).unwrap_or_default())
            .collect();
        m += gram(&partner).transpose();
    }
    debug_assert_eq!(m.nrows(), dim);
    MetricMatrix {
        kind,
        matrix: m * C64::new(basis.weight, 0.0),
        labels: basis.rows.iter().map(|row| row.label.clone()).collect(),
    }
}

/// Metric matrix from the 1- and 2-RDM through the derived affine map.
pub fn metric_matrix_from_rdms(
    r: usize,
    d1: &DMatrix<C64>,
    d2: &DMatrix<C64>,
    kind: MetricKind,
) -> Result<MetricMatrix> {
    let m = crate::basis::binomial(r, 2);
    if d1.shape() != (r, r) || d2.shape() != (m, m) {
        return domain(format!("RDM shapes {:?}, {:?} inconsistent with r = {r}", d1.shape(), d2.shape()));
    }
    let map = metric_map(kind, r)?;
    Ok(MetricMatrix { kind, matrix: map.apply(d1, d2), labels: map.labels.clone() })
}

/// Input for a condition evaluation: an explicit state or its RDMs.
#[derive(Debug, Clone, Copy)]
pub enum ConditionInput<'a> {
    State(&'a StateVector),
    /// 2-RDM with its particle number; the 1-RDM follows by contraction.
    TwoRdm(&'a RdmTensor),
}

pub fn metric_matrices(input: ConditionInput<'_>, kinds: &[MetricKind]) -> Result<Vec<MetricMatrix>> {
    match input {
        ConditionInput::State(psi) => Ok(kinds.iter().map(|&k| metric_matrix_from_state(psi, k)).collect()),
        ConditionInput::TwoRdm(d2) => {
            if d2.p != 2 {
                return domain("metric matrices need the 2-RDM");
            }
            let d1 = contract_two_to_one(&d2.matrix, d2.r, d2.n)?;
            kinds.iter().map(|&k| metric_matrix_from_rdms(d2.r, &d1, &d2.matrix, k)).collect()
        }
    }
}

/// Rows of the (2,4) table: the heavily weighted pattern first.
pub const TABLE_ROWS: [[&str; 6]; 8] = [
    ["xxxx", "xxxo", "xxox", "xoxx", "oxxx", "oooo"],
    ["xxxo", "xxxx", "xxoo", "xoxo", "oxxo", "ooox"],
    ["xxox", "xxoo", "xxxx", "xoox", "oxox", "ooxo"],
    ["xoxx", "xoxo", "xoox", "xxxx", "ooxx", "oxoo"],
    ["oxxx", "oxxo", "oxox", "ooxx", "xxxx", "xooo"],
    ["xxoo", "xxox", "xxxo", "xooo", "oxoo", "ooxx"],
    ["xoox", "xooo", "xoxx", "xxox", "ooox", "oxxo"],
    ["xoxo", "xoxx", "xooo", "xxxo", "ooxo", "oxox"],
];

pub const TABLE_WEIGHTS: [f64; 6] = [3.0, 1.0, 1.0, 1.0, 1.0, 1.0];

/// One (2,4)-positivity condition: `sum_i w_i C_i C_i†` over six patterns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TwoFourCondition {
    pub index: usize,
    pub dual: bool,
    pub patterns: Vec<(Pattern, u32)>,
}

impl TwoFourCondition {
    pub fn new(index: usize, dual: bool) -> Result<Self> {
        if !(1..=8).contains(&index) {
            return domain(format!("table row {index} must lie in 1..=8"));
        }
        let patterns = TABLE_ROWS[index - 1]
            .iter()
            .zip(TABLE_WEIGHTS)
            .map(|(p, w)| {
                let pat = Pattern::parse(p).expect("table patterns are valid");
                (if dual { pat.dual() } else { pat }, w as u32)
            })
            .collect();
        Ok(TwoFourCondition { index, dual, patterns })
    }

    /// All eight rows followed by their eight duals.
    pub fn all() -> Vec<TwoFourCondition> {
        [false, true]
            .into_iter()
            .flat_map(|dual| (1..=8).map(move |i| TwoFourCondition::new(i, dual).expect("valid row")))
            .collect()
    }

    pub fn label(&self) -> String {
        self.to_string()
    }

    /// The full weighted operator over `r = coeffs.r()` orbitals, normal ordered.
    pub fn operator(&self, coeffs: &CoefficientVectors) -> OperatorPolynomial {
        self.operator_normal(coeffs).to_polynomial()
    }

    fn operator_normal(&self, coeffs: &CoefficientVectors) -> NormalPoly {
        let mut total = self.operator_unpruned(coeffs);
        total.prune();
        total
    }

    fn operator_unpruned(&self, coeffs: &CoefficientVectors) -> NormalPoly {
        let mut total = NormalPoly::default();
        for (pat, w) in &self.patterns {
            let c = build_c_normal(pat, coeffs);
            total.add_scaled(&c.mul(&c.adjoint()), C64::new(*w as f64, 0.0));
        }
        total
    }
}

impl fmt::Display for TwoFourCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.dual {
            write!(f, "row{}-dual", self.index)
        } else {
            write!(f, "row{}", self.index)
        }
    }
}

/// Swaps every x and o and toggles the dual flag.
pub fn particle_hole_dual(cond: &TwoFourCondition) -> TwoFourCondition {
    TwoFourCondition {
        index: cond.index,
        dual: !cond.dual,
        patterns: cond.patterns.iter().map(|(p, w)| (p.dual(), *w)).collect(),
    }
}

/// Linear form applied when `C†` acts: the adjoint of position `pos`.
fn adjoint_form(v: &[C64], dagger: bool) -> (Vec<C64>, bool) {
    // C position: x -> sum conj(v) a†, o -> sum v a; adjoints: sum v a, sum conj(v) a†
    if dagger {
        (v.to_vec(), false)
    } else {
        (v.iter().map(|z| z.conj()).collect(), true)
    }
}

/// `<psi| C C† |psi> = |C† psi|^2` summed with the table weights.
pub fn evaluate_24_state(psi: &StateVector, cond: &TwoFourCondition, coeffs: &CoefficientVectors) -> Result<f64> {
    if coeffs.r() != psi.r() {
        return domain("coefficient vectors and state disagree on r");
    }
    let f = psi.to_fock();
    let mut total = 0.0;
    for (pat, w) in &cond.patterns {
        let mut v = f.clone();
        for (pos, &dagger) in pat.daggers().iter().enumerate() {
            let (form, dg) = adjoint_form(coeffs.get(pos), dagger);
            v = v.apply_linear(&form, dg);
        }
        total += *w as f64 * v.norm_sqr();
    }
    Ok(total)
}

/// All sixteen functionals of one coefficient draw on one state, sharing the
/// partial products of common pattern prefixes.
pub fn evaluate_all_24_state(psi: &StateVector, coeffs: &CoefficientVectors) -> Vec<(TwoFourCondition, f64)> {
    let f = psi.to_fock();
    let mut cache: HashMap<String, FockVector> = HashMap::new();
    cache.insert(String::new(), f);
    let mut norm_of = |pat: &Pattern| -> f64 {
        let key = pat.to_string();
        for len in 1..=key.len() {
            let prefix = &key[..len];
            if !cache.contains_key(prefix) {
                let prev = cache[&key[..len - 1]].clone();
                let (form, dg) = adjoint_form(coeffs.get(len - 1), pat.daggers()[len - 1]);
                cache.insert(prefix.to_string(), prev.apply_linear(&form, dg));
            }
        }
        cache[&key].norm_sqr()
    };
    TwoFourCondition::all()
        .into_iter()
        .map(|cond| {
            let v = cond.patterns.iter().map(|(p, w)| *w as f64 * norm_of(p)).sum();
            (cond, v)
        })
        .collect()
}

/// Orthonormal basis (columns) of the span of the four coefficient vectors.
fn span_basis(coeffs: &CoefficientVectors) -> DMatrix<C64> {
    let r = coeffs.r();
    let mut cols: Vec<DVector<C64>> = Vec::new();
    for v in coeffs.vectors() {
        let mut u = DVector::from_column_slice(v);
        // two passes of Gram-Schmidt
        for _ in 0..2 {
            for q in &cols {
                let proj = q.dotc(&u);
                u -= q * proj;
            }
        }
        let norm = u.norm();
        if norm > 1e-10 {
            cols.push(u / C64::new(norm, 0.0));
        }
    }
    DMatrix::from_fn(r, cols.len(), |j, p| cols[p][j])
}

/// The two-body functional `Tr(O ²D)` of a (2,4) condition. The operator is
/// expanded over the orthonormal modes spanned by `b, c, d, e`, reduced there,
/// and lifted back to the orbital basis.
pub fn two_four_functional(cond: &TwoFourCondition, coeffs: &CoefficientVectors) -> Result<RdmFunctional> {
    let q = span_basis(coeffs);
    // f_p = sum_j conj(U[j,p]) a_j with U = conj(Q) gives mode coordinates U^T v = Q^† v
    let modes = q.map(|z| z.conj());
    let k = modes.ncols();
    let mode_vec = |v: &[C64]| -> Vec<C64> {
        (0..k).map(|p| (0..v.len()).map(|j| modes[(j, p)] * v[j]).sum()).collect()
    };
    let mode_coeffs = CoefficientVectors::new(
        mode_vec(coeffs.get(0)),
        mode_vec(coeffs.get(1)),
        mode_vec(coeffs.get(2)),
        mode_vec(coeffs.get(3)),
    )?;
    let op = cond.operator_normal(&mode_coeffs);
    let reduced = reduce_normal(&op, k, REDUCIBILITY_TOL)?;
    Ok(reduced.lift_from_modes(&modes))
}

/// `Tr(O ²D)` from the 2-RDM (and its contraction) alone.
pub fn evaluate_24_reduced(d2: &RdmTensor, cond: &TwoFourCondition, coeffs: &CoefficientVectors) -> Result<f64> {
    if d2.p != 2 || coeffs.r() != d2.r {
        return domain("need a 2-RDM whose r matches the coefficient vectors");
    }
    let d1 = contract_two_to_one(&d2.matrix, d2.r, d2.n)?;
    Ok(two_four_functional(cond, coeffs)?.evaluate(&d1, &d2.matrix).re)
}

pub fn evaluate_24(input: ConditionInput<'_>, cond: &TwoFourCondition, coeffs: &CoefficientVectors) -> Result<f64> {
    match input {
        ConditionInput::State(psi) => evaluate_24_state(psi, cond, coeffs),
        ConditionInput::TwoRdm(d2) => evaluate_24_reduced(d2, cond, coeffs),
    }
}

/// Largest coefficient among normal-ordered terms of degree six or more.
pub fn high_degree_residual(p: &OperatorPolynomial) -> f64 {
    NormalPoly::from_polynomial(p).max_magnitude_from_degree(6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CancelReport {
    pub condition: String,
    pub r: usize,
    pub draws: usize,
    pub passed: bool,
    pub max_residual: f64,
}

/// Builds the weighted operator for `draws` seeded random coefficient sets and
/// checks that every degree-6 and degree-8 term cancels.
pub fn cancel_check(cond: &TwoFourCondition, r: usize, draws: usize, seed: u64) -> Result<CancelReport> {
    if !(4..=crate::fock::MAX_ORBITALS).contains(&r) {
        return domain(format!("cancellation check needs 4 <= r <= 16, got {r}"));
    }
    if draws == 0 {
        return domain("cancellation check needs at least one draw");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let coeffs = CoefficientVectors::random(r, &mut rng);
        worst = worst.max(cond.operator_unpruned(&coeffs).max_magnitude_from_degree(6));
    }
    Ok(CancelReport { condition: cond.label(), r, draws, passed: worst < CANCEL_TOL, max_residual: worst })
}

/// `½ (C_xxxx C_xxxx† + C_xooo C_xooo†)` with one shared, unfactored random
/// coefficient tensor for both four-operator products.
pub fn unfactored_pair_operator(r: usize, seed: u64) -> OperatorPolynomial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = r.pow(4);
    let tensor: Vec<C64> = (0..len)
        .map(|_| C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
        .collect();
    let norm = tensor.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let at = |idx: &[usize]| tensor[((idx[0] * r + idx[1]) * r + idx[2]) * r + idx[3]] / norm;
    let half = C64::new(0.5, 0.0);
    let a = build_c_tensor(&Pattern::parse("xxxx").expect("valid"), r, at);
    let b = build_c_tensor(&Pattern::parse("xooo").expect("valid"), r, at);
    hermitian_square(&a).add(&hermitian_square(&b)).scale(half)
}

#[derive(Debug, Clone)]
pub struct ViolationSearch {
    pub best_value: f64,
    pub best_coeffs: CoefficientVectors,
}

const MAX_SWEEPS: usize = 50;
const STALL: f64 = 1e-10;

/// Minimizes a (2,4) functional of a 2-RDM over unit coefficient vectors by
/// cyclic exact minimization in one vector at a time. With the other three
/// fixed the functional is a Hermitian form in the free vector, minimized by
/// the lowest eigenvector of that form.
pub fn search_violation(d2: &RdmTensor, cond: &TwoFourCondition, restarts: usize, seed: u64) -> Result<ViolationSearch> {
    if d2.p != 2 {
        return domain("violation search needs a 2-RDM");
    }
    let r = d2.r;
    let d1 = contract_two_to_one(&d2.matrix, r, d2.n)?;
    let value = |c: &CoefficientVectors| -> Result<f64> { Ok(two_four_functional(cond, c)?.evaluate(&d1, &d2.matrix).re) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if restarts == 0 {
        let coeffs = CoefficientVectors::random(r, &mut rng);
        return Ok(ViolationSearch { best_value: value(&coeffs)?, best_coeffs: coeffs });
    }
    let mut best: Option<ViolationSearch> = None;
    for _ in 0..restarts {
        let mut coeffs = CoefficientVectors::random(r, &mut rng);
        let mut current = value(&coeffs)?;
        for _ in 0..MAX_SWEEPS {
            let before = current;
            for pos in 0..4 {
                let form = hermitian_form(r, |v| value(&coeffs.with(pos, v)?))?;
                let eig = form.symmetric_eigen();
                let (idx, lowest) = eig
                    .eigenvalues
                    .iter()
                    .copied()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("r >= 1");
                if lowest < current {
                    coeffs = coeffs.with(pos, eig.eigenvectors.column(idx).iter().copied().collect())?;
                    current = value(&coeffs)?;
                }
            }
            if before - current < STALL * before.abs().max(1.0) {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| current < b.best_value) {
            best = Some(ViolationSearch { best_value: current, best_coeffs: coeffs });
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Recovers `H` with `f(v) = v^† H v` for a unit-normalized quadratic `f` by
/// polarization on basis vectors.
fn hermitian_form(r: usize, mut f: impl FnMut(Vec<C64>) -> Result<f64>) -> Result<DMatrix<C64>> {
    let zero = C64::new(0.0, 0.0);
    let unit = |entries: &[(usize, C64)]| {
        let mut v = vec![zero; r];
        for &(j, z) in entries {
            v[j] = z;
        }
        v
    };
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    let diag: Vec<f64> = (0..r).map(|j| f(unit(&[(j, one)]))).collect::<Result<_>>()?;
    let mut h = DMatrix::from_diagonal(&DVector::from_iterator(r, diag.iter().map(|&d| C64::new(d, 0.0))));
    for j in 0..r {
        for k in j + 1..r {
            // f is evaluated on normalized vectors; |e_j + e_k|^2 = 2
            let a = 2.0 * f(unit(&[(j, one), (k, one)]))?;
            let b = 2.0 * f(unit(&[(j, one), (k, i)]))?;
            let re = 0.5 * (a - diag[j] - diag[k]);
            let im = -0.5 * (b - diag[j] - diag[k]);
            h[(j, k)] = C64::new(re, im);
            h[(k, j)] = C64::new(re, -im);
        }
    }
    Ok(h)
}

/// Metric-matrix reports for a 2-RDM.
pub fn audit_metrics(d2: &RdmTensor, kinds: &[MetricKind], tol: f64) -> Result<Vec<ConditionReport>> {
    Ok(metric_matrices(ConditionInput::TwoRdm(d2), kinds)?.iter().map(|m| m.report(tol)).collect())
}

/// Violation searches over all sixteen (2,4) functionals of a 2-RDM; the
/// witness is the concatenation of the four minimizing vectors.
pub fn audit_two_four(d2: &RdmTensor, restarts: usize, seed: u64, tol: f64) -> Result<Vec<ConditionReport>> {
    TwoFourCondition::all()
        .par_iter()
        .map(|cond| {
            let found = search_violation(d2, cond, restarts, seed)?;
            let witness = found.best_coeffs.vectors().iter().flatten().copied().collect();
            Ok(ConditionReport::new(&cond.label(), found.best_value, d2.r, tol, witness))
        })
        .collect()
}

/// 1- and 2-RDM of a state.
pub fn state_rdms(psi: &StateVector) -> Result<(RdmTensor, RdmTensor)> {
    Ok((compute_rdm(psi, 1)?, compute_rdm(psi, 2)?))
}
