//! Polynomials in fermionic creation/annihilation operators.
//!
//! Terms are stored as operator words with complex coefficients. The normal
//! form puts all creators before all annihilators, each block in strictly
//! increasing orbital order, with permutation signs folded into the
//! coefficient. Normal ordering uses `{a_j, a†_k} = δ_jk`.

use std::collections::{BTreeMap, HashMap};
use std::hash::{BuildHasherDefault, DefaultHasher};

/// Hash map with a fixed hasher, so iteration order (and floating-point
/// summation order) is reproducible across runs.
type TermMap = HashMap<NormalKey, C64, BuildHasherDefault<DefaultHasher>>;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{binomial, pair_index, TupleBasis};
use crate::error::{domain, Error, Result};

pub type C64 = Complex64;

/// Coefficients with magnitude below this are dropped.
pub const PRUNE_TOL: f64 = 1e-14;
/// Default threshold for surviving higher-body terms.
pub const REDUCIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Factor {
    pub orbital: u8,
    pub dagger: bool,
}

impl Factor {
    pub fn create(j: usize) -> Self {
        Factor { orbital: j as u8, dagger: true }
    }

    pub fn annihilate(j: usize) -> Self {
        Factor { orbital: j as u8, dagger: false }
    }

    pub fn adjoint(self) -> Self {
        Factor { orbital: self.orbital, dagger: !self.dagger }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.dagger {
            write!(f, "a+{}", self.orbital)
        } else {
            write!(f, "a{}", self.orbital)
        }
    }
}

pub type Word = Vec<Factor>;

/// A single operator word with its coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub factors: Word,
    pub coeff: C64,
}

impl Monomial {
    pub fn new(factors: Word, coeff: C64) -> Self {
        Monomial { factors, coeff }
    }

    pub fn degree(&self) -> usize {
        self.factors.len()
    }
}

fn word_to_string(word: &[Factor]) -> String {
    if word.is_empty() {
        return "1".to_string();
    }
    word.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(" ")
}

/// Formal sum of operator words.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OperatorPolynomial {
    terms: BTreeMap<Word, C64>,
}

impl OperatorPolynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn identity() -> Self {
        Self::scalar(C64::new(1.0, 0.0))
    }

    pub fn scalar(c: C64) -> Self {
        Self::from_word(Vec::new(), c)
    }

    pub fn from_word(word: Word, coeff: C64) -> Self {
        let mut p = Self::zero();
        p.add_term(word, coeff);
        p
    }

    pub fn from_monomial(m: Monomial) -> Self {
        Self::from_word(m.factors, m.coeff)
    }

    pub fn creation(j: usize) -> Self {
        Self::from_word(vec![Factor::create(j)], C64::new(1.0, 0.0))
    }

    pub fn annihilation(j: usize) -> Self {
        Self::from_word(vec![Factor::annihilate(j)], C64::new(1.0, 0.0))
    }

    /// `a†_j a_j`.
    pub fn number(j: usize) -> Self {
        Self::from_word(vec![Factor::create(j), Factor::annihilate(j)], C64::new(1.0, 0.0))
    }

    /// `sum_j a†_j a_j` over `r` orbitals.
    pub fn total_number(r: usize) -> Self {
        (0..r).fold(Self::zero(), |acc, j| acc.add(&Self::number(j)))
    }

    /// Adds `coeff * word`, pruning the result if it cancels.
    pub fn add_term(&mut self, word: Word, coeff: C64) {
        use std::collections::btree_map::Entry;
        match self.terms.entry(word) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += coeff;
                if o.get().norm() < PRUNE_TOL {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                if coeff.norm() >= PRUNE_TOL {
                    v.insert(coeff);
                }
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, &C64)> {
        self.terms.iter()
    }

    pub fn monomials(&self) -> impl Iterator<Item = Monomial> + '_ {
        self.terms.iter().map(|(w, c)| Monomial::new(w.clone(), *c))
    }

    pub fn coefficient(&self, word: &[Factor]) -> C64 {
        self.terms.get(word).copied().unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_orbital(&self) -> Option<usize> {
        self.terms.keys().flat_map(|w| w.iter().map(|f| f.orbital as usize)).max()
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(|w| w.len()).max().unwrap_or(0)
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (w, c) in &other.terms {
            out.add_term(w.clone(), *c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, alpha: C64) -> Self {
        let mut out = Self::zero();
        for (w, c) in &self.terms {
            out.add_term(w.clone(), alpha * c);
        }
        out
    }

    /// Word concatenation; the result is not normal ordered.
    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (w1, c1) in &self.terms {
            for (w2, c2) in &other.terms {
                let mut w = w1.clone();
                w.extend_from_slice(w2);
                out.add_term(w, c1 * c2);
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zero();
        for (w, c) in &self.terms {
            let word = w.iter().rev().map(|f| f.adjoint()).collect();
            out.add_term(word, c.conj());
        }
        out
    }

    /// True when every word is in canonical normal-ordered form.
    pub fn is_normal_ordered(&self) -> bool {
        self.terms.keys().all(|w| is_canonical(w))
    }
}

impl fmt::Display for OperatorPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<_> = self
            .terms
            .iter()
            .map(|(w, c)| format!("({:.6}{:+.6}i) {}", c.re, c.im, word_to_string(w)))
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

fn is_canonical(word: &[Factor]) -> bool {
    let split = word.iter().position(|f| !f.dagger).unwrap_or(word.len());
    let (cre, ann) = word.split_at(split);
    ann.iter().all(|f| !f.dagger)
        && cre.windows(2).all(|p| p[0].orbital < p[1].orbital)
        && ann.windows(2).all(|p| p[0].orbital < p[1].orbital)
}

/// Canonical normal-ordered word: creators then annihilators, each ascending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct NormalKey {
    pub cre: u32,
    pub ann: u32,
}

impl NormalKey {
    pub const IDENTITY: NormalKey = NormalKey { cre: 0, ann: 0 };

    pub fn degree(self) -> usize {
        (self.cre.count_ones() + self.ann.count_ones()) as usize
    }

    pub fn word(self) -> Word {
        let mut w = Vec::with_capacity(self.degree());
        w.extend(bits(self.cre).map(Factor::create));
        w.extend(bits(self.ann).map(Factor::annihilate));
        w
    }
}

fn bits(mut mask: u32) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if mask == 0 {
            None
        } else {
            let j = mask.trailing_zeros() as usize;
            mask &= mask - 1;
            Some(j)
        }
    })
}

#[inline]
fn sign_of(count: u32) -> f64 {
    if count.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Normal-ordered polynomial keyed by creator/annihilator bitmasks.
#[derive(Debug, Clone, Default)]
pub(crate) struct NormalPoly {
    pub terms: TermMap,
}

impl NormalPoly {
    pub fn identity() -> Self {
        let mut terms = TermMap::default();
        terms.insert(NormalKey::IDENTITY, C64::new(1.0, 0.0));
        NormalPoly { terms }
    }

    fn accumulate(out: &mut TermMap, key: NormalKey, c: C64) {
        *out.entry(key).or_insert(C64::new(0.0, 0.0)) += c;
    }

    /// Right-multiplies every term by a sum of single operators
    /// `sum_j coeffs[j] a_j^(dagger)` and renormal-orders.
    pub fn rmul_linear(&self, coeffs: &[(usize, C64)], dagger: bool) -> NormalPoly {
        let mut out = TermMap::with_capacity_and_hasher(self.terms.len() * 2, Default::default());
        for (&key, &c) in &self.terms {
            for &(j, w) in coeffs {
                rmul_op_into(&mut out, key, c * w, j, dagger);
            }
        }
        let mut p = NormalPoly { terms: out };
        p.prune();
        p
    }

    pub fn rmul_op(&self, j: usize, dagger: bool) -> NormalPoly {
        self.rmul_linear(&[(j, C64::new(1.0, 0.0))], dagger)
    }

    pub fn mul(&self, rhs: &NormalPoly) -> NormalPoly {
        let mut out: TermMap = TermMap::default();
        for (&rkey, &rc) in &rhs.terms {
            let mut acc = self.clone();
            for f in rkey.word() {
                acc = acc.rmul_op(f.orbital as usize, f.dagger);
            }
            for (k, c) in acc.terms {
                Self::accumulate(&mut out, k, c * rc);
            }
        }
        let mut p = NormalPoly { terms: out };
        p.prune();
        p
    }

    pub fn add_scaled(&mut self, other: &NormalPoly, alpha: C64) {
        for (&k, &c) in &other.terms {
            Self::accumulate(&mut self.terms, k, alpha * c);
        }
    }

    pub fn adjoint(&self) -> NormalPoly {
        // (a†_C a_A)† = a†_A^rev a_C^rev; reversing m ascending factors costs
        // m(m-1)/2 transpositions per block.
        let mut terms = TermMap::with_capacity_and_hasher(self.terms.len(), Default::default());
        for (&k, &c) in &self.terms {
            let m = k.cre.count_ones();
            let n = k.ann.count_ones();
            let sign = sign_of(m * (m.saturating_sub(1)) / 2 + n * (n.saturating_sub(1)) / 2);
            terms.insert(NormalKey { cre: k.ann, ann: k.cre }, c.conj() * sign);
        }
        NormalPoly { terms }
    }

    pub fn prune(&mut self) {
        self.terms.retain(|_, c| c.norm() >= PRUNE_TOL);
    }

    pub fn to_polynomial(&self) -> OperatorPolynomial {
        let mut p = OperatorPolynomial::zero();
        for (&k, &c) in &self.terms {
            p.add_term(k.word(), c);
        }
        p
    }

    pub fn from_polynomial(p: &OperatorPolynomial) -> NormalPoly {
        let mut out = NormalPoly::default();
        for (word, &c) in p.terms() {
            let mut acc = NormalPoly::identity();
            for f in word {
                acc = acc.rmul_op(f.orbital as usize, f.dagger);
            }
            out.add_scaled(&acc, c);
        }
        out.prune();
        out
    }

    /// Largest coefficient magnitude among terms of degree at least `min_degree`.
    pub fn max_magnitude_from_degree(&self, min_degree: usize) -> f64 {
        self.terms
            .iter()
            .filter(|(k, _)| k.degree() >= min_degree)
            .map(|(_, c)| c.norm())
            .fold(0.0, f64::max)
    }
}

/// `key * a_j^(dagger)`, normal-ordered, accumulated into `out`.
#[inline]
fn rmul_op_into(out: &mut TermMap, key: NormalKey, c: C64, j: usize, dagger: bool) {
    let bit = 1u32 << j;
    let above = !((bit << 1).wrapping_sub(1));
    if !dagger {
        if key.ann & bit != 0 {
            return;
        }
        let sign = sign_of((key.ann & above).count_ones());
        NormalPoly::accumulate(out, NormalKey { cre: key.cre, ann: key.ann | bit }, c * sign);
        return;
    }
    let m = key.ann.count_ones();
    if key.ann & bit != 0 {
        // contraction with a_j: moves past the annihilators above j
        let sign = sign_of((key.ann & above).count_ones());
        NormalPoly::accumulate(out, NormalKey { cre: key.cre, ann: key.ann & !bit }, c * sign);
    }
    if key.cre & bit != 0 {
        return;
    }
    let sign = sign_of(m + (key.cre & above).count_ones());
    NormalPoly::accumulate(out, NormalKey { cre: key.cre | bit, ann: key.ann }, c * sign);
}

/// Rewrites `p` in canonical normal-ordered form.
pub fn normal_order(p: &OperatorPolynomial) -> OperatorPolynomial {
    NormalPoly::from_polynomial(p).to_polynomial()
}

/// `C C†`, expanded and normal ordered.
pub fn hermitian_square(c: &OperatorPolynomial) -> OperatorPolynomial {
    let nf = NormalPoly::from_polynomial(c);
    nf.mul(&nf.adjoint()).to_polynomial()
}

/// Pattern of creators (`x`) and annihilators (`o`), length 1..=4.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pattern(Vec<bool>);

impl Pattern {
    pub fn parse(s: &str) -> Result<Self> {
        if s.is_empty() || s.len() > 4 {
            return domain(format!("pattern '{s}' must have length 1..4"));
        }
        s.chars()
            .map(|ch| match ch {
                'x' => Ok(true),
                'o' => Ok(false),
                other => domain(format!("pattern character '{other}' is not x or o")),
            })
            .collect::<Result<Vec<_>>>()
            .map(Pattern)
    }

    /// `true` at positions holding a creator.
    pub fn daggers(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Swaps every x and o.
    pub fn dual(&self) -> Pattern {
        Pattern(self.0.iter().map(|d| !d).collect())
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.0.iter().map(|&d| if d { 'x' } else { 'o' }).collect();
        f.write_str(&s)
    }
}

impl TryFrom<String> for Pattern {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Pattern::parse(&s)
    }
}

impl From<Pattern> for String {
    fn from(p: Pattern) -> String {
        p.to_string()
    }
}

/// The four one-particle coefficient vectors `b, c, d, e` of a factored
/// four-operator product; position `p` of a pattern uses vector `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVectors {
    vectors: [Vec<C64>; 4],
}

impl CoefficientVectors {
    /// Normalizes each vector; all four must share a nonzero length.
    pub fn new(b: Vec<C64>, c: Vec<C64>, d: Vec<C64>, e: Vec<C64>) -> Result<Self> {
        let r = b.len();
        let mut vectors = [b, c, d, e];
        for v in vectors.iter_mut() {
            if v.len() != r || r == 0 {
                return domain("coefficient vectors must share a nonzero length");
            }
            let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                return domain("coefficient vector has zero norm");
            }
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(CoefficientVectors { vectors })
    }

    /// Unit vectors along the given orbitals.
    pub fn unit(r: usize, orbitals: [usize; 4]) -> Result<Self> {
        let e = |j: usize| -> Result<Vec<C64>> {
            if j >= r {
                return domain(format!("orbital {j} out of range for r = {r}"));
            }
            let mut v = vec![C64::new(0.0, 0.0); r];
            v[j] = C64::new(1.0, 0.0);
            Ok(v)
        };
        Self::new(e(orbitals[0])?, e(orbitals[1])?, e(orbitals[2])?, e(orbitals[3])?)
    }

    pub fn random<R: rand::Rng + ?Sized>(r: usize, rng: &mut R) -> Self {
        use rand_distr::StandardNormal;
        let mut draw = || -> Vec<C64> {
            (0..r)
                .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect()
        };
        let (b, c, d, e) = (draw(), draw(), draw(), draw());
        Self::new(b, c, d, e).expect("gaussian draws are nonzero")
    }

    pub fn r(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn get(&self, position: usize) -> &[C64] {
        &self.vectors[position]
    }

    pub fn vectors(&self) -> &[Vec<C64>; 4] {
        &self.vectors
    }

    /// Replaces one vector (normalized on entry).
    pub fn with(&self, position: usize, v: Vec<C64>) -> Result<Self> {
        let mut vs = self.vectors.clone();
        vs[position] = v;
        let [b, c, d, e] = vs;
        Self::new(b, c, d, e)
    }

    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        out.vectors.iter_mut().for_each(|v| v.iter_mut().for_each(|x| *x = x.conj()));
        out
    }
}

/// Linear form of one pattern position: `x` gives `sum conj(v_j) a†_j`,
/// `o` gives `sum v_j a_j`.
pub(crate) fn linear_form(v: &[C64], dagger: bool) -> Vec<(usize, C64)> {
    v.iter()
        .enumerate()
        .filter(|(_, c)| c.norm() > 0.0)
        .map(|(j, &c)| (j, if dagger { c.conj() } else { c }))
        .collect()
}

pub(crate) fn build_c_normal(pattern: &Pattern, coeffs: &CoefficientVectors) -> NormalPoly {
    pattern
        .daggers()
        .iter()
        .enumerate()
        .fold(NormalPoly::identity(), |acc, (pos, &dagger)| {
            acc.rmul_linear(&linear_form(coeffs.get(pos), dagger), dagger)
        })
}

/// Factored operator `sum b^u_j c^v_k d^w_l e^z_m a^u_j a^v_k a^w_l a^z_m`,
/// truncated to the pattern length.
pub fn build_c(pattern: &Pattern, coeffs: &CoefficientVectors) -> OperatorPolynomial {
    build_c_normal(pattern, coeffs).to_polynomial()
}

/// Unfactored operator `sum_{idx} tensor(idx) a^u_{i1} ... a^z_{iq}` with an
/// arbitrary coefficient tensor over `r` orbitals.
pub fn build_c_tensor(
    pattern: &Pattern,
    r: usize,
    tensor: impl Fn(&[usize]) -> C64,
) -> OperatorPolynomial {
    let q = pattern.len();
    let mut out = NormalPoly::default();
    let mut idx = vec![0usize; q];
    loop {
        let c = tensor(&idx);
        if c.norm() > 0.0 {
            let mut acc = NormalPoly::identity();
            for (pos, &dagger) in pattern.daggers().iter().enumerate() {
                acc = acc.rmul_op(idx[pos], dagger);
            }
            out.add_scaled(&acc, c);
        }
        // odometer
        let mut pos = q;
        loop {
            if pos == 0 {
                out.prune();
                return out.to_polynomial();
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < r {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Affine functional `constant + sum_jk one_body[j,k] ¹D[j,k] + sum_PQ two_body[P,Q] ²D[P,Q]`
/// with `¹D[j,k] = <a†_j a_k>` and `²D[(j,k),(l,m)] = <a†_j a†_k a_m a_l>` on the
/// lexicographic pair basis.
#[derive(Debug, Clone, PartialEq)]
pub struct RdmFunctional {
    pub r: usize,
    pub constant: C64,
    pub one_body: DMatrix<C64>,
    pub two_body: DMatrix<C64>,
}

impl RdmFunctional {
    pub fn zero(r: usize) -> Self {
        let m = binomial(r, 2);
        RdmFunctional {
            r,
            constant: C64::new(0.0, 0.0),
            one_body: DMatrix::zeros(r, r),
            two_body: DMatrix::zeros(m, m),
        }
    }

    pub fn evaluate(&self, d1: &DMatrix<C64>, d2: &DMatrix<C64>) -> C64 {
        let one: C64 = self.one_body.iter().zip(d1.iter()).map(|(a, b)| a * b).sum();
        let two: C64 = self.two_body.iter().zip(d2.iter()).map(|(a, b)| a * b).sum();
        self.constant + one + two
    }

    pub fn add_scaled(&mut self, other: &RdmFunctional, alpha: f64) {
        self.constant += other.constant * alpha;
        self.one_body += &other.one_body * C64::new(alpha, 0.0);
        self.two_body += &other.two_body * C64::new(alpha, 0.0);
    }

    /// Re-expresses a functional written over `k` orthonormal modes
    /// `f_p = sum_j conj(U[j,p]) a_j` as a functional over the `r` orbitals.
    pub fn lift_from_modes(&self, modes: &DMatrix<C64>) -> RdmFunctional {
        let r = modes.nrows();
        let k = modes.ncols();
        debug_assert_eq!(k, self.r);
        let one_body = modes * &self.one_body * modes.adjoint();
        let mode_pairs = TupleBasis::new(k, 2);
        let orb_pairs = TupleBasis::new(r, 2);
        let t = DMatrix::from_fn(orb_pairs.len(), mode_pairs.len(), |jk, pq| {
            let (j, kk) = (orb_pairs.tuple(jk)[0], orb_pairs.tuple(jk)[1]);
            let (p, q) = (mode_pairs.tuple(pq)[0], mode_pairs.tuple(pq)[1]);
            modes[(j, p)] * modes[(kk, q)] - modes[(kk, p)] * modes[(j, q)]
        });
        let two_body = &t * &self.two_body * t.adjoint();
        RdmFunctional { r, constant: self.constant, one_body, two_body }
    }
}

/// Expresses the expectation of `p` in any particle-number eigenstate through
/// the 1- and 2-RDM. Terms that change particle number have zero expectation
/// and are skipped; a conserving term of degree six or more with magnitude at
/// least `tol` is an error.
pub fn reduce_to_rdm_functional(p: &OperatorPolynomial, r: usize, tol: f64) -> Result<RdmFunctional> {
    if let Some(max) = p.max_orbital() {
        if max >= r {
            return domain(format!("polynomial acts on orbital {max} but r = {r}"));
        }
    }
    reduce_normal(&NormalPoly::from_polynomial(p), r, tol)
}

pub(crate) fn reduce_normal(nf: &NormalPoly, r: usize, tol: f64) -> Result<RdmFunctional> {
    let mut out = RdmFunctional::zero(r);
    let mut worst: Option<(NormalKey, C64)> = None;
    for (&key, &c) in &nf.terms {
        let nc = key.cre.count_ones();
        if nc != key.ann.count_ones() {
            continue;
        }
        match nc {
            0 => out.constant += c,
            1 => {
                let j = key.cre.trailing_zeros() as usize;
                let k = key.ann.trailing_zeros() as usize;
                out.one_body[(j, k)] += c;
            }
            2 => {
                let cre: Vec<_> = bits(key.cre).collect();
                let ann: Vec<_> = bits(key.ann).collect();
                // a†_p a†_q a_s a_t = -a†_p a†_q a_t a_s
                let row = pair_index(r, cre[0], cre[1]);
                let col = pair_index(r, ann[0], ann[1]);
                out.two_body[(row, col)] -= c;
            }
            _ => {
                if c.norm() >= tol && worst.is_none_or(|(_, w)| c.norm() > w.norm()) {
                    worst = Some((key, c));
                }
            }
        }
    }
    if let Some((key, c)) = worst {
        return Err(Error::NotTwoBodyReducible { term: word_to_string(&key.word()), magnitude: c.norm() });
    }
    Ok(out)
}

/// The metric matrices whose positivity is an N-representability condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    D1,
    Q1,
    D2,
    Q2,
    G2,
    T1,
    T2Gen,
}

impl MetricKind {
    pub const ALL: [MetricKind; 7] = [
        MetricKind::D1,
        MetricKind::Q1,
        MetricKind::D2,
        MetricKind::Q2,
        MetricKind::G2,
        MetricKind::T1,
        MetricKind::T2Gen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::D1 => "D1",
            MetricKind::Q1 => "Q1",
            MetricKind::D2 => "D2",
            MetricKind::Q2 => "Q2",
            MetricKind::G2 => "G2",
            MetricKind::T1 => "T1",
            MetricKind::T2Gen => "T2gen",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Domain(format!("unknown condition '{s}'")))
    }

    /// Dimension of the metric matrix over `r` orbitals.
    pub fn dimension(self, r: usize) -> usize {
        match self {
            MetricKind::D1 | MetricKind::Q1 => r,
            MetricKind::D2 | MetricKind::Q2 => binomial(r, 2),
            MetricKind::G2 => r * r,
            MetricKind::T1 => binomial(r, 3),
            MetricKind::T2Gen => binomial(r, 2) * r + 2 * r,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One basis row of a metric matrix. The matrix entry for rows `a, b` is
/// `weight * (<X_a X_b†> + <Y_b Y_a†>)`, where `X` is the row operator of the
/// first Hermitian square and `Y` that of its partner (absent for one-sided
/// kinds).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub label: Vec<usize>,
    pub primary: Option<Word>,
    pub partner: Option<Word>,
}

#[derive(Debug, Clone)]
pub struct MetricBasis {
    pub kind: MetricKind,
    pub r: usize,
    pub weight: f64,
    pub rows: Vec<MetricRow>,
}

impl MetricBasis {
    pub fn new(kind: MetricKind, r: usize) -> Self {
        let one = |w: Word, label: Vec<usize>| MetricRow { label, primary: Some(w), partner: None };
        let mut rows = Vec::with_capacity(kind.dimension(r));
        let mut weight = 1.0;
        match kind {
            MetricKind::D1 => rows.extend((0..r).map(|j| one(vec![Factor::create(j)], vec![j]))),
            MetricKind::Q1 => rows.extend((0..r).map(|j| one(vec![Factor::annihilate(j)], vec![j]))),
            MetricKind::D2 => {
                for t in TupleBasis::new(r, 2).tuples() {
                    rows.push(one(vec![Factor::create(t[0]), Factor::create(t[1])], t.clone()));
                }
            }
            MetricKind::Q2 => {
                for t in TupleBasis::new(r, 2).tuples() {
                    rows.push(one(vec![Factor::annihilate(t[0]), Factor::annihilate(t[1])], t.clone()));
                }
            }
            MetricKind::G2 => {
                for j in 0..r {
                    for k in 0..r {
                        rows.push(one(vec![Factor::create(j), Factor::annihilate(k)], vec![j, k]));
                    }
                }
            }
            MetricKind::T1 => {
                weight = 0.5;
                for t in TupleBasis::new(r, 3).tuples() {
                    rows.push(MetricRow {
                        label: t.clone(),
                        primary: Some(t.iter().map(|&j| Factor::create(j)).collect()),
                        partner: Some(t.iter().map(|&j| Factor::annihilate(j)).collect()),
                    });
                }
            }
            MetricKind::T2Gen => {
                weight = 0.5;
                for t in TupleBasis::new(r, 2).tuples() {
                    for l in 0..r {
                        rows.push(MetricRow {
                            label: vec![t[0], t[1], l],
                            primary: Some(vec![Factor::create(t[0]), Factor::create(t[1]), Factor::annihilate(l)]),
                            partner: Some(vec![Factor::annihilate(t[0]), Factor::annihilate(t[1]), Factor::create(l)]),
                        });
                    }
                }
                // one-body augmentation of each square, with independent coefficients
                for j in 0..r {
                    rows.push(MetricRow { label: vec![j], primary: Some(vec![Factor::create(j)]), partner: None });
                }
                for j in 0..r {
                    rows.push(MetricRow { label: vec![j], primary: None, partner: Some(vec![Factor::annihilate(j)]) });
                }
            }
        }
        MetricBasis { kind, r, weight, rows }
    }

    pub fn dimension(&self) -> usize {
        self.rows.len()
    }

    /// The operator whose expectation is entry `(a, b)`.
    pub(crate) fn entry_operator(&self, a: usize, b: usize) -> NormalPoly {
        let w = C64::new(self.weight, 0.0);
        let mut out = NormalPoly::default();
        let (ra, rb) = (&self.rows[a], &self.rows[b]);
        if let (Some(x), Some(y)) = (&ra.primary, &rb.primary) {
            out.add_scaled(&word_times_adjoint(x, y), w);
        }
        if let (Some(x), Some(y)) = (&rb.partner, &ra.partner) {
            out.add_scaled(&word_times_adjoint(x, y), w);
        }
        out.prune();
        out
    }
}

/// Normal form of `x y†` for two words.
fn word_times_adjoint(x: &[Factor], y: &[Factor]) -> NormalPoly {
    let mut acc = NormalPoly::identity();
    for f in x.iter().copied().chain(y.iter().rev().map(|f| f.adjoint())) {
        acc = acc.rmul_op(f.orbital as usize, f.dagger);
    }
    acc
}

/// One entry of a metric map as sparse affine coefficients on ¹D and ²D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MapEntry {
    pub row: usize,
    pub col: usize,
    pub constant: C64,
    pub one_body: Vec<(usize, usize, C64)>,
    pub two_body: Vec<(usize, usize, C64)>,
}

/// Affine map from (¹D, ²D) to the entries of one metric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMap {
    pub kind: MetricKind,
    pub r: usize,
    pub dimension: usize,
    pub labels: Vec<Vec<usize>>,
    pub entries: Vec<MapEntry>,
}

impl MetricMap {
    pub fn apply(&self, d1: &DMatrix<C64>, d2: &DMatrix<C64>) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dimension, self.dimension);
        for e in &self.entries {
            let mut v = e.constant;
            for &(j, k, c) in &e.one_body {
                v += c * d1[(j, k)];
            }
            for &(p, q, c) in &e.two_body {
                v += c * d2[(p, q)];
            }
            m[(e.row, e.col)] = v;
        }
        m
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Derives the affine map of a metric matrix by normal ordering each entry's
/// operator and reducing it to 1- and 2-RDM coefficients.
pub fn derive_metric_map(kind: MetricKind, r: usize) -> Result<MetricMap> {
    if r > crate::fock::MAX_ORBITALS {
        return domain(format!("r = {r} exceeds the orbital cap"));
    }
    let basis = MetricBasis::new(kind, r);
    let dim = basis.dimension();
    let rows: Vec<Vec<MapEntry>> = (0..dim)
        .into_par_iter()
        .map(|a| {
            (0..dim)
                .map(|b| {
                    let f = reduce_normal(&basis.entry_operator(a, b), r, REDUCIBILITY_TOL)?;
                    Ok(sparse_entry(a, b, &f))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricMap {
        kind,
        r,
        dimension: dim,
        labels: basis.rows.iter().map(|row| row.label.clone()).collect(),
        entries: rows.into_iter().flatten().collect(),
    })
}

fn sparse_entry(row: usize, col: usize, f: &RdmFunctional) -> MapEntry {
    let nz = |m: &DMatrix<C64>| -> Vec<(usize, usize, C64)> {
        let mut out = Vec::new();
        for j in 0..m.nrows() {
            for k in 0..m.ncols() {
                let c = m[(j, k)];
                if c.norm() >= PRUNE_TOL {
                    out.push((j, k, c));
                }
            }
        }
        out
    };
    MapEntry { row, col, constant: f.constant, one_body: nz(&f.one_body), two_body: nz(&f.two_body) }
}
