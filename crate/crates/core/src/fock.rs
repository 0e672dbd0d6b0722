//! Fermionic Fock space over `r <= 16` spin orbitals.
//!
//! Orbital `j` is bit `j` of an occupation word. Creation and annihilation
//! carry the sign `(-1)^(occupied orbitals below j)`.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::basis::binomial;
use crate::error::{domain, Result};
use crate::opalg::{Factor, OperatorPolynomial};

pub type C64 = Complex64;

pub const MAX_ORBITALS: usize = 16;

/// Occupation bitstring; orbital `j` occupied iff bit `j` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OccupationState(pub u32);

impl OccupationState {
    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn is_occupied(self, j: usize) -> bool {
        self.0 >> j & 1 == 1
    }

    pub fn particle_count(self) -> usize {
        self.0.count_ones() as usize
    }

    fn parity_below(self, j: usize) -> f64 {
        if (self.0 & ((1u32 << j) - 1)).count_ones().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    /// Unchecked single-operator action; `None` when the result vanishes.
    #[inline]
    pub(crate) fn act(self, j: usize, dagger: bool) -> Option<(f64, OccupationState)> {
        if self.is_occupied(j) == dagger {
            return None;
        }
        Some((self.parity_below(j), OccupationState(self.0 ^ (1 << j))))
    }

    /// Applies an operator word (rightmost factor first).
    pub(crate) fn act_word(self, word: &[Factor]) -> Option<(f64, OccupationState)> {
        let mut sign = 1.0;
        let mut s = self;
        for f in word.iter().rev() {
            let (sg, next) = s.act(f.orbital as usize, f.dagger)?;
            sign *= sg;
            s = next;
        }
        Some((sign, s))
    }

    /// Renders the state with orbital 0 rightmost, e.g. `0011`.
    pub fn to_string_with(self, r: usize) -> String {
        (0..r).rev().map(|j| if self.is_occupied(j) { '1' } else { '0' }).collect()
    }
}

fn check_orbitals(r: usize) -> Result<()> {
    if r > MAX_ORBITALS {
        return domain(format!("r = {r} exceeds the {MAX_ORBITALS}-orbital cap"));
    }
    Ok(())
}

/// All `C(r, n)` states of the `n`-particle sector in increasing bit order.
pub fn enumerate_sector(r: usize, n: usize) -> Result<Vec<OccupationState>> {
    check_orbitals(r)?;
    if n > r {
        return domain(format!("particle count {n} exceeds orbital count {r}"));
    }
    let mut out = Vec::with_capacity(binomial(r, n));
    if n == 0 {
        out.push(OccupationState(0));
        return Ok(out);
    }
    // Gosper's hack walks fixed-popcount words in increasing order.
    let mut v: u64 = (1u64 << n) - 1;
    let limit = 1u64 << r;
    while v < limit {
        out.push(OccupationState(v as u32));
        let t = v | (v - 1);
        v = (t + 1) | (((!t & (t + 1)) - 1) >> (v.trailing_zeros() + 1));
    }
    Ok(out)
}

pub fn apply_creation(s: OccupationState, j: usize, r: usize) -> Result<Option<(i8, OccupationState)>> {
    check_index(j, r)?;
    Ok(s.act(j, true).map(|(sg, t)| (sg as i8, t)))
}

pub fn apply_annihilation(s: OccupationState, j: usize, r: usize) -> Result<Option<(i8, OccupationState)>> {
    check_index(j, r)?;
    Ok(s.act(j, false).map(|(sg, t)| (sg as i8, t)))
}

fn check_index(j: usize, r: usize) -> Result<()> {
    check_orbitals(r)?;
    if j >= r {
        return domain(format!("orbital index {j} out of range for r = {r}"));
    }
    Ok(())
}

/// Rank of a fixed-popcount word within its sector (combinatorial number
/// system, which coincides with increasing numeric order).
#[inline]
pub fn sector_rank(s: OccupationState) -> usize {
    let mut bits = s.0;
    let mut rank = 0;
    let mut i = 1;
    while bits != 0 {
        let pos = bits.trailing_zeros() as usize;
        rank += binomial(pos, i);
        i += 1;
        bits &= bits - 1;
    }
    rank
}

/// Normalized amplitude vector on the canonical `n`-particle sector basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    r: usize,
    n: usize,
    amplitudes: DVector<C64>,
}

impl StateVector {
    /// Wraps amplitudes and normalizes them.
    pub fn new(r: usize, n: usize, amplitudes: DVector<C64>) -> Result<Self> {
        check_orbitals(r)?;
        if n > r {
            return domain(format!("particle count {n} exceeds orbital count {r}"));
        }
        let dim = binomial(r, n);
        if amplitudes.len() != dim {
            return domain(format!("expected {dim} amplitudes for r={r}, N={n}, got {}", amplitudes.len()));
        }
        let norm = amplitudes.norm();
        if norm == 0.0 {
            return domain("zero state vector cannot be normalized");
        }
        Ok(StateVector { r, n, amplitudes: amplitudes / C64::new(norm, 0.0) })
    }

    pub fn basis_state(r: usize, s: OccupationState) -> Result<Self> {
        let n = s.particle_count();
        let mut amps = DVector::zeros(binomial(r, n));
        if r < 32 && s.0 >> r != 0 {
            return domain(format!("state {:b} has bits beyond r = {r}", s.0));
        }
        amps[sector_rank(s)] = C64::new(1.0, 0.0);
        Self::new(r, n, amps)
    }

    /// Gaussian random state, normalized.
    pub fn random<R: Rng + ?Sized>(r: usize, n: usize, rng: &mut R) -> Result<Self> {
        let dim = binomial(r, n);
        let amps = DVector::from_fn(dim, |_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        Self::new(r, n, amps)
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn basis(&self) -> Vec<OccupationState> {
        enumerate_sector(self.r, self.n).expect("validated at construction")
    }

    pub fn to_fock(&self) -> FockVector {
        let mut f = FockVector::zeros(self.r);
        for (s, a) in self.basis().into_iter().zip(self.amplitudes.iter()) {
            f.amplitudes[s.0 as usize] = *a;
        }
        f
    }
}

/// Dense vector over the full `2^r`-dimensional Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    r: usize,
    amplitudes: Vec<C64>,
}

impl FockVector {
    pub fn zeros(r: usize) -> Self {
        FockVector { r, amplitudes: vec![C64::new(0.0, 0.0); 1 << r] }
    }

    pub fn basis_state(r: usize, s: OccupationState) -> Self {
        let mut f = Self::zeros(r);
        f.amplitudes[s.0 as usize] = C64::new(1.0, 0.0);
        f
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn amplitude(&self, s: OccupationState) -> C64 {
        self.amplitudes[s.0 as usize]
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &FockVector) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn axpy(&mut self, alpha: C64, other: &FockVector) {
        for (a, b) in self.amplitudes.iter_mut().zip(&other.amplitudes) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: C64) {
        self.amplitudes.iter_mut().for_each(|a| *a *= alpha);
    }

    /// Applies `sum_j coeffs[j] a_j^(dagger)` (a linear form in single operators).
    pub fn apply_linear(&self, coeffs: &[C64], dagger: bool) -> FockVector {
        let mut out = FockVector::zeros(self.r);
        for (idx, amp) in self.amplitudes.iter().enumerate() {
            if amp.re == 0.0 && amp.im == 0.0 {
                continue;
            }
            let s = OccupationState(idx as u32);
            for (j, c) in coeffs.iter().enumerate() {
                if c.re == 0.0 && c.im == 0.0 {
                    continue;
                }
                if let Some((sg, t)) = s.act(j, dagger) {
                    out.amplitudes[t.0 as usize] += c * amp * sg;
                }
            }
        }
        out
    }

    /// Restricts to the `n`-particle sector.
    pub fn project_sector(&self, n: usize) -> Result<DVector<C64>> {
        let states = enumerate_sector(self.r, n)?;
        Ok(DVector::from_iterator(states.len(), states.iter().map(|s| self.amplitudes[s.0 as usize])))
    }
}

/// Exact action of an operator polynomial on a Fock vector.
pub fn apply_polynomial(v: &FockVector, p: &OperatorPolynomial) -> Result<FockVector> {
    let r = v.r;
    if let Some(max) = p.max_orbital() {
        if max >= r {
            return domain(format!("polynomial acts on orbital {max} but r = {r}"));
        }
    }
    let mut out = FockVector::zeros(r);
    for (word, coeff) in p.terms() {
        for (idx, amp) in v.amplitudes.iter().enumerate() {
            if amp.re == 0.0 && amp.im == 0.0 {
                continue;
            }
            if let Some((sg, t)) = OccupationState(idx as u32).act_word(word) {
                out.amplitudes[t.0 as usize] += coeff * amp * sg;
            }
        }
    }
    Ok(out)
}
