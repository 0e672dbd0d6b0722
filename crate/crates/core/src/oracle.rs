//! Brute-force ground truth: dense diagonalization of a particle-number
//! sector and reduced density matrices of explicit states.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::{binomial, signed_pair, TupleBasis};
use crate::error::{domain, Error, Result};
use crate::fock::{apply_polynomial, enumerate_sector, sector_rank, OccupationState, StateVector};
use crate::hamiltonians::IntegralSet;
use crate::opalg::{Factor, OperatorPolynomial};

type C64 = Complex64;

pub const MAX_SECTOR_DIMENSION: usize = 20000;
pub const DEGENERACY_GAP: f64 = 1e-9;
pub const MAX_RDM_ORDER: usize = 4;

#[derive(Debug, Clone)]
pub struct GroundState {
    pub energy: f64,
    pub state: StateVector,
    /// Gap to the next eigenvalue; infinite for one-dimensional sectors.
    pub gap: f64,
    pub degenerate: bool,
}

/// Dense matrix of the Hamiltonian on the `n`-particle sector.
pub fn sector_hamiltonian(integrals: &IntegralSet, n: usize) -> Result<DMatrix<C64>> {
    sector_hamiltonian_capped(integrals, n, MAX_SECTOR_DIMENSION)
}

pub fn sector_hamiltonian_capped(integrals: &IntegralSet, n: usize, max_dim: usize) -> Result<DMatrix<C64>> {
    let r = integrals.r;
    let states = enumerate_sector(r, n)?;
    let dim = states.len();
    if dim > max_dim {
        return Err(Error::Resource(format!("sector dimension {dim} exceeds the cap of {max_dim}")));
    }
    let pairs = TupleBasis::new(r, 2);
    let mut one = Vec::new();
    for j in 0..r {
        for k in 0..r {
            let z = integrals.one_body[(j, k)];
            if z.norm() != 0.0 {
                one.push((vec![Factor::create(j), Factor::annihilate(k)], z));
            }
        }
    }
    let mut two = Vec::new();
    for (a, pa) in pairs.tuples().iter().enumerate() {
        for (b, pb) in pairs.tuples().iter().enumerate() {
            let z = integrals.two_body[(a, b)];
            if z.norm() != 0.0 {
                let word = vec![
                    Factor::create(pa[0]),
                    Factor::create(pa[1]),
                    Factor::annihilate(pb[1]),
                    Factor::annihilate(pb[0]),
                ];
                two.push((word, z));
            }
        }
    }
    let mut h = DMatrix::zeros(dim, dim);
    for (col, s) in states.iter().enumerate() {
        for (word, z) in one.iter().chain(two.iter()) {
            if let Some((sign, t)) = s.act_word(word) {
                h[(sector_rank(t), col)] += z * sign;
            }
        }
    }
    Ok(h)
}

/// Lowest eigenpair of the `n`-particle sector. The eigenvector's phase is
/// fixed so its largest-magnitude amplitude is real and positive.
pub fn ground_state(integrals: &IntegralSet, n: usize) -> Result<GroundState> {
    ground_state_capped(integrals, n, MAX_SECTOR_DIMENSION)
}

pub fn ground_state_capped(integrals: &IntegralSet, n: usize, max_dim: usize) -> Result<GroundState> {
    let h = sector_hamiltonian_capped(integrals, n, max_dim.min(MAX_SECTOR_DIMENSION))?;
    let dim = h.nrows();
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lowest = order[0];
    let energy = eig.eigenvalues[lowest];
    let gap = if dim > 1 { eig.eigenvalues[order[1]] - energy } else { f64::INFINITY };
    let mut v: DVector<C64> = eig.eigenvectors.column(lowest).into_owned();
    let pivot = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(C64::new(1.0, 0.0));
    if pivot.norm() > 0.0 {
        v *= pivot.conj() / pivot.norm();
    }
    Ok(GroundState {
        energy,
        state: StateVector::new(integrals.r, n, v)?,
        gap,
        degenerate: gap < DEGENERACY_GAP,
    })
}

/// `p`-particle reduced density matrix on the lexicographic tuple basis,
/// `D[J,K] = <a†_J1 ... a†_Jp a_Kp ... a_K1>`.
#[derive(Debug, Clone, PartialEq)]
pub struct RdmTensor {
    pub p: usize,
    pub r: usize,
    pub n: usize,
    pub matrix: DMatrix<C64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RdmEntryJson {
    row: Vec<usize>,
    col: Vec<usize>,
    re: f64,
    im: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RdmJson {
    p: usize,
    r: usize,
    #[serde(rename = "N")]
    n: usize,
    entries: Vec<RdmEntryJson>,
}

impl RdmTensor {
    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).camax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }

    /// Convex combination `w * a + (1 - w) * b` (an ensemble RDM).
    pub fn mix(w: f64, a: &RdmTensor, b: &RdmTensor) -> Result<RdmTensor> {
        if (a.p, a.r, a.n) != (b.p, b.r, b.n) {
            return domain("cannot mix RDMs of different shape");
        }
        Ok(RdmTensor {
            matrix: &a.matrix * C64::new(w, 0.0) + &b.matrix * C64::new(1.0 - w, 0.0),
            ..a.clone()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let basis = TupleBasis::new(self.r, self.p);
        let mut entries = Vec::new();
        for i in 0..basis.len() {
            for j in 0..basis.len() {
                let z = self.matrix[(i, j)];
                if z.norm() != 0.0 {
                    entries.push(RdmEntryJson {
                        row: basis.tuple(i).to_vec(),
                        col: basis.tuple(j).to_vec(),
                        re: z.re,
                        im: z.im,
                    });
                }
            }
        }
        let doc = RdmJson { p: self.p, r: self.r, n: self.n, entries };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Parses the JSON document; unlisted entries are zero.
    pub fn from_json(text: &str) -> Result<RdmTensor> {
        let doc: RdmJson = serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
        if doc.p == 0 || doc.p > MAX_RDM_ORDER || doc.r > crate::fock::MAX_ORBITALS || doc.n > doc.r {
            return Err(Error::Malformed(format!("invalid header p={}, r={}, N={}", doc.p, doc.r, doc.n)));
        }
        let basis = TupleBasis::new(doc.r, doc.p);
        let mut matrix = DMatrix::zeros(basis.len(), basis.len());
        for e in &doc.entries {
            let (Some(i), Some(j)) = (basis.index_of(&e.row), basis.index_of(&e.col)) else {
                return Err(Error::Malformed(format!("entry {:?},{:?} is not an increasing tuple pair", e.row, e.col)));
            };
            if e.row.len() != doc.p || e.col.len() != doc.p || e.row.iter().chain(&e.col).any(|&x| x >= doc.r) {
                return Err(Error::Malformed(format!("entry {:?},{:?} out of range", e.row, e.col)));
            }
            matrix[(i, j)] = C64::new(e.re, e.im);
        }
        Ok(RdmTensor { p: doc.p, r: doc.r, n: doc.n, matrix })
    }
}

pub fn min_eigenvalue(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn compute_rdm(psi: &StateVector, p: usize) -> Result<RdmTensor> {
    let (r, n) = (psi.r(), psi.n());
    if p == 0 || p > MAX_RDM_ORDER {
        return domain(format!("RDM order {p} must lie in 1..={MAX_RDM_ORDER}"));
    }
    if p > n {
        return domain(format!("RDM order {p} exceeds particle count {n}"));
    }
    let basis = TupleBasis::new(r, p);
    let masks: Vec<u32> = basis.tuples().iter().map(|t| crate::basis::mask_of(t)).collect();
    let creators: Vec<Vec<Factor>> = basis
        .tuples()
        .iter()
        .map(|t| t.iter().map(|&j| Factor::create(j)).collect())
        .collect();
    let annihilators: Vec<Vec<Factor>> = basis
        .tuples()
        .iter()
        .map(|t| t.iter().rev().map(|&j| Factor::annihilate(j)).collect())
        .collect();
    let amps = psi.amplitudes();
    let mut d = DMatrix::zeros(basis.len(), basis.len());
    for (s, &amp) in psi.basis().iter().zip(amps.iter()) {
        if amp.norm() == 0.0 {
            continue;
        }
        for (k, &km) in masks.iter().enumerate() {
            if s.0 & km != km {
                continue;
            }
            let (s1, reduced) = s.act_word(&annihilators[k]).expect("occupied orbitals");
            for (j, &jm) in masks.iter().enumerate() {
                if reduced.0 & jm != 0 {
                    continue;
                }
                let (s2, t) = reduced.act_word(&creators[j]).expect("empty orbitals");
                d[(j, k)] += amps[sector_rank(t)].conj() * amp * (s1 * s2);
            }
        }
    }
    Ok(RdmTensor { p, r, n, matrix: d })
}

/// `¹D[j,k] = (1/(N-1)) sum_l ²D[(j,l),(k,l)]` with signed pair bookkeeping.
pub fn contract_two_to_one(d2: &DMatrix<C64>, r: usize, n: usize) -> Result<DMatrix<C64>> {
    if n < 2 {
        return domain("contraction of the 2-RDM needs N >= 2");
    }
    if d2.shape() != (binomial(r, 2), binomial(r, 2)) {
        return domain("2-RDM has the wrong shape for r");
    }
    let w = 1.0 / (n - 1) as f64;
    Ok(DMatrix::from_fn(r, r, |j, k| {
        let mut acc = C64::new(0.0, 0.0);
        for l in 0..r {
            if let (Some((p, s1)), Some((q, s2))) = (signed_pair(r, j, l), signed_pair(r, k, l)) {
                acc += d2[(p, q)] * (s1 * s2);
            }
        }
        acc * w
    }))
}

/// `<psi| P |psi>`.
pub fn expectation(psi: &StateVector, p: &OperatorPolynomial) -> Result<C64> {
    let f = psi.to_fock();
    Ok(f.inner(&apply_polynomial(&f, p)?))
}

/// Slater determinant with the listed orbitals occupied.
pub fn determinant(r: usize, occupied: &[usize]) -> Result<StateVector> {
    let bits = occupied.iter().fold(0u32, |m, &j| m | (1 << j));
    StateVector::basis_state(r, OccupationState(bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::{hubbard_chain, pairing};

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn determinant_rdms() {
        let psi = determinant(4, &[0, 1]).unwrap();
        let d1 = compute_rdm(&psi, 1).unwrap();
        assert_eq!(d1.matrix, DMatrix::from_diagonal(&DVector::from_vec(vec![c(1.0), c(1.0), c(0.0), c(0.0)])));
        let d2 = compute_rdm(&psi, 2).unwrap();
        assert_eq!(d2.matrix[(0, 0)], c(1.0));
        assert_eq!(d2.matrix.iter().filter(|z| z.norm() > 0.0).count(), 1);
        assert!(compute_rdm(&psi, 3).is_err());
    }

    #[test]
    fn small_ground_states() {
        let e = ground_state(&hubbard_chain(2, 1.0, 4.0, false).unwrap(), 2).unwrap().energy;
        assert!((e - (2.0 - 8f64.sqrt())).abs() < 1e-12);
        let e = ground_state(&pairing(&[0.0, 0.0], 1.0).unwrap(), 2).unwrap().energy;
        assert!((e + 2.0).abs() < 1e-12);
        let gs = ground_state(&IntegralSet::zero(4).unwrap(), 2).unwrap();
        assert_eq!(gs.energy, 0.0);
        assert!(gs.degenerate);
    }

    #[test]
    fn dimension_cap() {
        let set = hubbard_chain(3, 1.0, 1.0, false).unwrap();
        assert!(matches!(ground_state_capped(&set, 3, 19), Err(Error::Resource(_))));
        assert!(ground_state_capped(&set, 3, 20).is_ok());
    }
}
