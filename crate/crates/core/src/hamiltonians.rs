//! Model Hamiltonians with at most two-body interactions.
//!
//! An [`IntegralSet`] encodes
//! `H = sum_jk h[j,k] a†_j a_k + sum_{j<k, l<m} v[(j,k),(l,m)] a†_j a†_k a_m a_l`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::{binomial, pair_index, signed_pair, TupleBasis};
use crate::error::{domain, Error, Result};
use crate::fock::MAX_ORBITALS;
use crate::opalg::{Factor, OperatorPolynomial, RdmFunctional};

type C64 = Complex64;

const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralSet {
    pub r: usize,
    /// Hermitian `r x r` one-body matrix.
    pub one_body: DMatrix<C64>,
    /// Antisymmetrized two-body elements on the pair basis, Hermitian.
    pub two_body: DMatrix<C64>,
}

impl IntegralSet {
    pub fn new(r: usize, one_body: DMatrix<C64>, two_body: DMatrix<C64>) -> Result<Self> {
        if r > MAX_ORBITALS {
            return domain(format!("r = {r} exceeds the {MAX_ORBITALS}-orbital cap"));
        }
        let m = binomial(r, 2);
        if one_body.shape() != (r, r) || two_body.shape() != (m, m) {
            return domain("integral matrices have the wrong shape");
        }
        let set = IntegralSet { r, one_body, two_body };
        let dev = set.hermiticity_error();
        if dev > HERMITIAN_TOL {
            return domain(format!("integrals are not Hermitian (deviation {dev:.3e})"));
        }
        Ok(set)
    }

    pub fn zero(r: usize) -> Result<Self> {
        let m = binomial(r, 2);
        Self::new(r, DMatrix::zeros(r, r), DMatrix::zeros(m, m))
    }

    pub fn hermiticity_error(&self) -> f64 {
        let h = (&self.one_body - self.one_body.adjoint()).camax();
        let v = (&self.two_body - self.two_body.adjoint()).camax();
        h.max(v)
    }

    pub fn is_real(&self) -> bool {
        self.one_body.iter().chain(self.two_body.iter()).all(|z| z.im == 0.0)
    }

    /// Energy as an affine functional of the 1- and 2-RDM.
    pub fn functional(&self) -> RdmFunctional {
        RdmFunctional {
            r: self.r,
            constant: C64::new(0.0, 0.0),
            one_body: self.one_body.clone(),
            two_body: self.two_body.clone(),
        }
    }

    /// The Hamiltonian as a second-quantized polynomial.
    pub fn to_operator(&self) -> OperatorPolynomial {
        let mut p = OperatorPolynomial::zero();
        for j in 0..self.r {
            for k in 0..self.r {
                p.add_term(vec![Factor::create(j), Factor::annihilate(k)], self.one_body[(j, k)]);
            }
        }
        let pairs = TupleBasis::new(self.r, 2);
        for (a, pa) in pairs.tuples().iter().enumerate() {
            for (b, pb) in pairs.tuples().iter().enumerate() {
                let word = vec![
                    Factor::create(pa[0]),
                    Factor::create(pa[1]),
                    Factor::annihilate(pb[1]),
                    Factor::annihilate(pb[0]),
                ];
                p.add_term(word, self.two_body[(a, b)]);
            }
        }
        p
    }

    pub fn write_to_string(&self) -> String {
        let mut out = format!("RDMKIT 1 r={}\n", self.r);
        for j in 0..self.r {
            for k in 0..self.r {
                let z = self.one_body[(j, k)];
                if z.norm() != 0.0 {
                    let _ = writeln!(out, "h {j} {k} {} {}", z.re, z.im);
                }
            }
        }
        let pairs = TupleBasis::new(self.r, 2);
        for (a, pa) in pairs.tuples().iter().enumerate() {
            for (b, pb) in pairs.tuples().iter().enumerate() {
                let z = self.two_body[(a, b)];
                if z.norm() != 0.0 {
                    let _ = writeln!(out, "v {} {} {} {} {} {}", pa[0], pa[1], pb[0], pb[1], z.re, z.im);
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Malformed(format!("line {line}: {msg}"));
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or_else(|| Error::Malformed("empty integral file".into()))?;
        let head: Vec<_> = header.split_whitespace().collect();
        if head.len() != 3 || head[0] != "RDMKIT" || head[1] != "1" || !head[2].starts_with("r=") {
            return Err(bad(hline, "expected header 'RDMKIT 1 r=<int>'"));
        }
        let r: usize = head[2][2..].parse().map_err(|_| bad(hline, "orbital count is not an integer"))?;
        if r > MAX_ORBITALS {
            return Err(bad(hline, "orbital count exceeds 16"));
        }
        let m = binomial(r, 2);
        let mut h = DMatrix::<C64>::zeros(r, r);
        let mut v = DMatrix::<C64>::zeros(m, m);
        for (ln, line) in lines {
            let tok: Vec<_> = line.split_whitespace().collect();
            let idx = |s: &str| -> Result<usize> {
                let j: usize = s.parse().map_err(|_| bad(ln, "index is not an integer"))?;
                if j >= r {
                    return Err(bad(ln, "index out of range"));
                }
                Ok(j)
            };
            let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad(ln, "value is not a number")) };
            match tok.first().copied() {
                Some("h") if tok.len() == 5 => {
                    h[(idx(tok[1])?, idx(tok[2])?)] = C64::new(num(tok[3])?, num(tok[4])?);
                }
                Some("v") if tok.len() == 7 => {
                    let (j, k, l, mm) = (idx(tok[1])?, idx(tok[2])?, idx(tok[3])?, idx(tok[4])?);
                    if j >= k || l >= mm {
                        return Err(bad(ln, "two-body indices must satisfy j<k and l<m"));
                    }
                    v[(pair_index(r, j, k), pair_index(r, l, mm))] = C64::new(num(tok[5])?, num(tok[6])?);
                }
                _ => return Err(bad(ln, "expected 'h j k re im' or 'v j k l m re im'")),
            }
        }
        IntegralSet::new(r, h, v).map_err(|e| Error::Malformed(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.write_to_string())?;
        Ok(())
    }
}

/// Reduced BCS pairing model on `eps.len()` doubly degenerate levels:
/// `sum_p eps_p (n_2p + n_2p+1) - g sum_pq a†_2p a†_2p+1 a_2q+1 a_2q`.
pub fn pairing(eps: &[f64], g: f64) -> Result<IntegralSet> {
    let levels = eps.len();
    if levels == 0 {
        return domain("pairing model needs at least one level");
    }
    let r = 2 * levels;
    if r > MAX_ORBITALS {
        return domain(format!("{levels} levels exceed the orbital cap"));
    }
    let m = binomial(r, 2);
    let mut h = DMatrix::zeros(r, r);
    for (p, &e) in eps.iter().enumerate() {
        h[(2 * p, 2 * p)] = C64::new(e, 0.0);
        h[(2 * p + 1, 2 * p + 1)] = C64::new(e, 0.0);
    }
    let mut v = DMatrix::zeros(m, m);
    for p in 0..levels {
        for q in 0..levels {
            v[(pair_index(r, 2 * p, 2 * p + 1), pair_index(r, 2 * q, 2 * q + 1))] = C64::new(-g, 0.0);
        }
    }
    IntegralSet::new(r, h, v)
}

/// One-band Hubbard chain; site `s` carries spin orbitals `2s` (up) and `2s+1` (down).
pub fn hubbard_chain(sites: usize, t: f64, u: f64, periodic: bool) -> Result<IntegralSet> {
    if sites == 0 || 2 * sites > MAX_ORBITALS {
        return domain(format!("{sites} sites do not fit the orbital cap"));
    }
    let r = 2 * sites;
    let m = binomial(r, 2);
    let mut h = DMatrix::<C64>::zeros(r, r);
    let mut bonds: Vec<(usize, usize)> = (0..sites.saturating_sub(1)).map(|s| (s, s + 1)).collect();
    if periodic && sites > 2 {
        bonds.push((sites - 1, 0));
    }
    for (a, b) in bonds {
        for spin in 0..2 {
            let (j, k) = (2 * a + spin, 2 * b + spin);
            h[(j, k)] -= C64::new(t, 0.0);
            h[(k, j)] -= C64::new(t, 0.0);
        }
    }
    let mut v = DMatrix::zeros(m, m);
    for s in 0..sites {
        let p = pair_index(r, 2 * s, 2 * s + 1);
        v[(p, p)] = C64::new(u, 0.0);
    }
    IntegralSet::new(r, h, v)
}

/// Seeded Gaussian Hermitian one- and two-body integrals.
pub fn random_two_body(r: usize, seed: u64, scale: f64) -> Result<IntegralSet> {
    if r > MAX_ORBITALS {
        return domain(format!("r = {r} exceeds the {MAX_ORBITALS}-orbital cap"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hermitian = |n: usize| -> DMatrix<C64> {
        let g = DMatrix::from_fn(n, n, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re, im)
        });
        (&g + g.adjoint()) * C64::new(0.5 * scale, 0.0)
    };
    let h = hermitian(r);
    let v = hermitian(binomial(r, 2));
    IntegralSet::new(r, h, v)
}

/// Two-body matrix `K2` with `Tr(K2 ²D) = <H>` on `n`-particle states.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedHamiltonian {
    pub k2: DMatrix<C64>,
    pub n: usize,
}

impl ReducedHamiltonian {
    /// `Tr(K2 ²D)`.
    pub fn energy(&self, d2: &DMatrix<C64>) -> C64 {
        (&self.k2 * d2).trace()
    }
}

/// Folds the one-body part into the pair basis with weight `1/(N-1)`, using
/// `¹D[j,k] = (1/(N-1)) sum_l <a†_j a†_l a_l a_k>`.
pub fn reduced_hamiltonian(integrals: &IntegralSet, n: usize) -> Result<ReducedHamiltonian> {
    let r = integrals.r;
    if n < 2 || n > r {
        return domain(format!("reduced Hamiltonian needs 2 <= N <= r, got N = {n}, r = {r}"));
    }
    let mut folded = integrals.two_body.clone();
    let w = 1.0 / (n - 1) as f64;
    for j in 0..r {
        for k in 0..r {
            let hjk = integrals.one_body[(j, k)];
            if hjk.norm() == 0.0 {
                continue;
            }
            for l in 0..r {
                if let (Some((p, s1)), Some((q, s2))) = (signed_pair(r, j, l), signed_pair(r, k, l)) {
                    folded[(p, q)] += hjk * (s1 * s2 * w);
                }
            }
        }
    }
    Ok(ReducedHamiltonian { k2: folded.transpose(), n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_is_deterministic_and_hermitian() {
        let a = random_two_body(6, 1, 1.0).unwrap();
        let b = random_two_body(6, 1, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(a.hermiticity_error() == 0.0);
        let z = random_two_body(5, 7, 0.0).unwrap();
        assert!(z.one_body.iter().chain(z.two_body.iter()).all(|x| x.norm() == 0.0));
    }

    #[test]
    fn hubbard_structure() {
        let hub = hubbard_chain(2, 1.0, 4.0, false).unwrap();
        assert_eq!(hub.r, 4);
        assert_eq!(hub.one_body[(0, 2)], C64::new(-1.0, 0.0));
        assert_eq!(hub.one_body[(1, 3)], C64::new(-1.0, 0.0));
        assert_eq!(hub.one_body[(0, 1)], C64::new(0.0, 0.0));
        assert_eq!(hub.two_body[(0, 0)], C64::new(4.0, 0.0));
        let ring = hubbard_chain(4, 1.0, 0.0, true).unwrap();
        assert_eq!(ring.one_body[(6, 0)], C64::new(-1.0, 0.0));
    }

    #[test]
    fn fold_with_no_one_body_is_transpose() {
        let mut set = random_two_body(4, 3, 1.0).unwrap();
        set.one_body.fill(C64::new(0.0, 0.0));
        let k = reduced_hamiltonian(&set, 3).unwrap();
        assert_eq!(k.k2, set.two_body.transpose());
        assert!(reduced_hamiltonian(&set, 1).is_err());
    }

    #[test]
    fn file_roundtrip_and_last_write_wins() {
        let set = random_two_body(4, 9, 0.7).unwrap();
        let back = IntegralSet::parse(&set.write_to_string()).unwrap();
        assert_eq!(back, set);

        let text = "# comment\nRDMKIT 1 r=2  \nh 0 0 1 0\nh 0 0 2 0 # overwrite\nv 0 1 0 1 -3 0\n";
        let s = IntegralSet::parse(text).unwrap();
        assert_eq!(s.one_body[(0, 0)], C64::new(2.0, 0.0));
        assert_eq!(s.two_body[(0, 0)], C64::new(-3.0, 0.0));
    }

    #[test]
    fn malformed_files_are_rejected() {
        for text in [
            "",
            "RDMKIT 2 r=2\n",
            "RDMKIT 1 r=2\nh 0 2 1 0\n",
            "RDMKIT 1 r=3\nv 1 0 0 1 1 0\n",
            "RDMKIT 1 r=2\nh 0 1 1 0\n",
            "RDMKIT 1 r=2\nq 0 1\n",
        ] {
            assert!(matches!(IntegralSet::parse(text), Err(Error::Malformed(_))), "{text:?}");
        }
    }
}
