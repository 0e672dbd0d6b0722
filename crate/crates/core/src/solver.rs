//! Variational lower bounds: minimize `Tr(K2 ²D)` over Hermitian pair-basis
//! matrices with fixed trace subject to a chosen set of metric-matrix
//! positivity conditions.
//!
//! The method is ADMM (a scaled-form augmented Lagrangian) on the splitting
//! `L_k x + c_k = Z_k ⪰ 0`, where `x` is a real parametrization of ²D and each
//! block `k` is a metric map composed with the contraction to ¹D. The
//! x-update solves a fixed linear system (factored once) with the trace as an
//! exact equality constraint; the Z-update clips eigenvalues.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{binomial, signed_pair};
use crate::conditions::metric_map;
use crate::error::{domain, Result};
use crate::hamiltonians::{reduced_hamiltonian, IntegralSet};
use crate::opalg::{MetricKind, MetricMap};
use crate::oracle::RdmTensor;

type C64 = Complex64;

/// Largest orbital count accepted by [`lower_bound`].
pub const MAX_SOLVER_ORBITALS: usize = 12;

/// Which metric conditions constrain the relaxation. ²D itself and ¹Q (via
/// the contraction) are always constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionSet {
    pub q2: bool,
    pub g2: bool,
    pub t1: bool,
    pub t2gen: bool,
}

impl ConditionSet {
    pub const D: ConditionSet = ConditionSet { q2: false, g2: false, t1: false, t2gen: false };
    pub const DQ: ConditionSet = ConditionSet { q2: true, g2: false, t1: false, t2gen: false };
    pub const DQG: ConditionSet = ConditionSet { q2: true, g2: true, t1: false, t2gen: false };
    pub const DQG_T1: ConditionSet = ConditionSet { q2: true, g2: true, t1: true, t2gen: false };
    pub const DQG_T1_T2: ConditionSet = ConditionSet { q2: true, g2: true, t1: true, t2gen: true };

    /// The nested sequence of relaxations, loosest first.
    pub const NESTED: [ConditionSet; 5] = [Self::D, Self::DQ, Self::DQG, Self::DQG_T1, Self::DQG_T1_T2];

    /// Parses a comma-separated list such as `D2,Q2,G2`. `D2` may be omitted.
    pub fn parse(s: &str) -> Result<Self> {
        let mut set = Self::D;
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok.to_ascii_uppercase().as_str() {
                "D2" | "D" => {}
                "Q2" | "Q" => set.q2 = true,
                "G2" | "G" => set.g2 = true,
                "T1" => set.t1 = true,
                "T2" | "T2GEN" => set.t2gen = true,
                _ => return domain(format!("unknown condition '{tok}'")),
            }
        }
        Ok(set)
    }

    /// Metric kinds enforced, in block order.
    pub fn kinds(&self) -> Vec<MetricKind> {
        let mut out = vec![MetricKind::D2, MetricKind::Q1];
        for (on, kind) in [
            (self.q2, MetricKind::Q2),
            (self.g2, MetricKind::G2),
            (self.t1, MetricKind::T1),
            (self.t2gen, MetricKind::T2Gen),
        ] {
            if on {
                out.push(kind);
            }
        }
        out
    }

    pub fn label(&self) -> String {
        let mut s = String::from("D2");
        for (on, name) in [(self.q2, "Q2"), (self.g2, "G2"), (self.t1, "T1"), (self.t2gen, "T2gen")] {
            if on {
                s.push_str(name);
            }
        }
        s
    }

    /// True when every condition of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &ConditionSet) -> bool {
        (!self.q2 || other.q2) && (!self.g2 || other.g2) && (!self.t1 || other.t1) && (!self.t2gen || other.t2gen)
    }
}

impl Default for ConditionSet {
    fn default() -> Self {
        Self::D
    }
}

impl fmt::Display for ConditionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SolverOptions {
    /// Bound on the trace residual.
    pub linear_tol: f64,
    /// Bound on the primal and dual ADMM residuals (Frobenius norm).
    pub psd_tol: f64,
    /// Energy change over a check window below which a primal-feasible run stops.
    pub stall_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { linear_tol: 1e-8, psd_tol: 1e-8, stall_tol: 1e-9, max_iterations: 5000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SolverResult {
    pub conditions: String,
    pub energy: f64,
    pub primal_feasibility: f64,
    pub condition_feasibility: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip)]
    pub d2: Option<RdmTensor>,
}

/// Nearest positive semidefinite matrix in the Frobenius norm.
pub fn project_psd(m: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    if !m.is_square() {
        return domain(format!("projection needs a square matrix, got {:?}", m.shape()));
    }
    let err = (m - m.adjoint()).camax();
    if err > 1e-10 {
        return domain(format!("matrix is not Hermitian (deviation {err:e})"));
    }
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let clipped = eig.eigenvalues.map(|x| C64::new(x.max(0.0), 0.0));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&clipped) * v.adjoint())
}

/// Real coordinates of a Hermitian pair-basis ²D.
struct Parametrization {
    m: usize,
    /// `(row, col, re_var, im_var)` for every upper-triangle entry.
    entries: Vec<(usize, usize, usize, Option<usize>)>,
    len: usize,
}

impl Parametrization {
    fn new(m: usize, complex: bool) -> Self {
        let mut entries = Vec::new();
        let mut len = 0;
        for p in 0..m {
            for q in p..m {
                let re = len;
                len += 1;
                let im = if complex && p != q {
                    len += 1;
                    Some(len - 1)
                } else {
                    None
                };
                entries.push((p, q, re, im));
            }
        }
        Parametrization { m, entries, len }
    }

    /// Sparse expression of every ²D entry in the variables.
    fn d2_expressions(&self) -> Vec<Vec<(usize, C64)>> {
        let m = self.m;
        let mut out = vec![Vec::new(); m * m];
        for &(p, q, re, im) in &self.entries {
            out[p * m + q].push((re, C64::new(1.0, 0.0)));
            if p != q {
                out[q * m + p].push((re, C64::new(1.0, 0.0)));
            }
            if let Some(im) = im {
                out[p * m + q].push((im, C64::new(0.0, 1.0)));
                out[q * m + p].push((im, C64::new(0.0, -1.0)));
            }
        }
        out
    }

    fn to_matrix(&self, x: &DVector<f64>) -> DMatrix<C64> {
        let mut d = DMatrix::zeros(self.m, self.m);
        for &(p, q, re, im) in &self.entries {
            let z = C64::new(x[re], im.map_or(0.0, |i| x[i]));
            d[(p, q)] = z;
            d[(q, p)] = z.conj();
        }
        d
    }
}

/// One PSD block as stacked real rows: each row is the real or imaginary part
/// of an upper-triangle entry, scaled so the Euclidean norm of the stack
/// equals the Frobenius norm of the matrix.
struct Block {
    kind: MetricKind,
    dim: usize,
    complex: bool,
    rows: Vec<BlockRow>,
}

struct BlockRow {
    a: usize,
    b: usize,
    imaginary: bool,
    scale: f64,
    constant: f64,
    coeffs: Vec<(usize, f64)>,
}

impl Block {
    fn build(map: &MetricMap, d1_expr: &[Vec<(usize, C64)>], d2_expr: &[Vec<(usize, C64)>], r: usize, m: usize) -> Self {
        let mut upper: Vec<Option<(C64, BTreeMap<usize, C64>)>> = vec![None; map.dimension * map.dimension];
        for e in &map.entries {
            if e.row > e.col {
                continue;
            }
            let mut acc: BTreeMap<usize, C64> = BTreeMap::new();
            for &(j, k, c) in &e.one_body {
                for &(v, w) in &d1_expr[j * r + k] {
                    *acc.entry(v).or_default() += c * w;
                }
            }
            for &(p, q, c) in &e.two_body {
                for &(v, w) in &d2_expr[p * m + q] {
                    *acc.entry(v).or_default() += c * w;
                }
            }
            upper[e.row * map.dimension + e.col] = Some((e.constant, acc));
        }
        // A complex block carries the imaginary part of every off-diagonal
        // entry, even structurally zero ones, so that the stacked space is the
        // whole Hermitian space and clipping is a true projection.
        let complex = upper.iter().flatten().any(|(c, acc)| c.im != 0.0 || acc.values().any(|z| z.im != 0.0));
        let mut rows = Vec::new();
        for a in 0..map.dimension {
            for b in a..map.dimension {
                let (constant, acc) = upper[a * map.dimension + b].take().unwrap_or_default();
                let scale = if a == b { 1.0 } else { std::f64::consts::SQRT_2 };
                let re: Vec<(usize, f64)> = acc.iter().filter(|(_, c)| c.re != 0.0).map(|(&v, c)| (v, c.re)).collect();
                rows.push(BlockRow { a, b, imaginary: false, scale, constant: constant.re, coeffs: re });
                if complex && a != b {
                    let im: Vec<(usize, f64)> = acc.iter().filter(|(_, c)| c.im != 0.0).map(|(&v, c)| (v, c.im)).collect();
                    rows.push(BlockRow { a, b, imaginary: true, scale, constant: constant.im, coeffs: im });
                }
            }
        }
        Block { kind: map.kind, dim: map.dimension, complex, rows }
    }

    /// `L x + c`, stacked.
    fn image(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| row.scale * (row.constant + row.coeffs.iter().map(|&(v, c)| c * x[v]).sum::<f64>())),
        )
    }

    /// Adds `L^T y` to `out`.
    fn add_transpose(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        for (row, &yi) in self.rows.iter().zip(y.iter()) {
            let s = row.scale * yi;
            for &(v, c) in &row.coeffs {
                out[v] += c * s;
            }
        }
    }

    fn add_gram(&self, h: &mut DMatrix<f64>) {
        for row in &self.rows {
            let s2 = row.scale * row.scale;
            for &(u, cu) in &row.coeffs {
                for &(v, cv) in &row.coeffs {
                    h[(u, v)] += s2 * cu * cv;
                }
            }
        }
    }

    fn constants(&self) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.scale * r.constant))
    }

    fn unstack_real(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (row, &zi) in self.rows.iter().zip(z.iter()) {
            let v = zi / row.scale;
            m[(row.a, row.b)] = v;
            m[(row.b, row.a)] = v;
        }
        m
    }

    fn unstack_complex(&self, z: &DVector<f64>) -> DMatrix<C64> {
        let mut m = DMatrix::<C64>::zeros(self.dim, self.dim);
        for (row, &zi) in self.rows.iter().zip(z.iter()) {
            let v = zi / row.scale;
            if row.imaginary {
                m[(row.a, row.b)].im = v;
                m[(row.b, row.a)].im = -v;
            } else {
                m[(row.a, row.b)].re = v;
                m[(row.b, row.a)].re = v;
            }
        }
        m
    }

    /// Eigenvalue-clipped projection of a stacked vector, and the smallest
    /// eigenvalue before clipping.
    fn project(&self, z: &DVector<f64>) -> (DVector<f64>, f64) {
        if self.complex {
            let eig = self.unstack_complex(z).symmetric_eigen();
            let min = eig.eigenvalues.min();
            let clipped = eig.eigenvalues.map(|x| C64::new(x.max(0.0), 0.0));
            let v = &eig.eigenvectors;
            let p = v * DMatrix::from_diagonal(&clipped) * v.adjoint();
            let out = self
                .rows
                .iter()
                .map(|row| row.scale * if row.imaginary { p[(row.a, row.b)].im } else { p[(row.a, row.b)].re });
            (DVector::from_iterator(self.rows.len(), out), min)
        } else {
            let eig = self.unstack_real(z).symmetric_eigen();
            let min = eig.eigenvalues.min();
            let clipped = eig.eigenvalues.map(|x| x.max(0.0));
            let v = &eig.eigenvectors;
            let p = v * DMatrix::from_diagonal(&clipped) * v.transpose();
            let out = self.rows.iter().map(|row| row.scale * p[(row.a, row.b)]);
            (DVector::from_iterator(self.rows.len(), out), min)
        }
    }

    fn min_eigenvalue(&self, z: &DVector<f64>) -> f64 {
        if self.complex {
            self.unstack_complex(z).symmetric_eigenvalues().min()
        } else {
            self.unstack_real(z).symmetric_eigenvalues().min()
        }
    }
}

/// Parametrization of ²D and the PSD blocks of `conds` expressed in it.
fn build_blocks(r: usize, n: usize, complex: bool, conds: ConditionSet) -> Result<(Parametrization, Vec<Block>)> {
    let m = binomial(r, 2);
    let param = Parametrization::new(m, complex);
    let d2_expr = param.d2_expressions();
    // ¹D[j,k] = (1/(N-1)) sum_l s s ²D[(j,l),(k,l)]
    let w = 1.0 / (n - 1) as f64;
    let mut d1_expr = vec![Vec::new(); r * r];
    for j in 0..r {
        for k in 0..r {
            let mut acc: BTreeMap<usize, C64> = BTreeMap::new();
            for l in 0..r {
                if let (Some((p, s1)), Some((q, s2))) = (signed_pair(r, j, l), signed_pair(r, k, l)) {
                    for &(v, c) in &d2_expr[p * m + q] {
                        *acc.entry(v).or_default() += c * (s1 * s2 * w);
                    }
                }
            }
            d1_expr[j * r + k] = acc.into_iter().collect();
        }
    }
    let maps = conds.kinds().into_iter().map(|k| metric_map(k, r)).collect::<Result<Vec<_>>>()?;
    let blocks = maps.iter().map(|map| Block::build(map, &d1_expr, &d2_expr, r, m)).collect();
    Ok((param, blocks))
}

/// Safeguarded type-II Anderson acceleration of a fixed-point iteration
/// `w <- g(w)`. A step whose residual grows past `ANDERSON_SAFEGUARD` times
/// the previous one is replaced by the plain iterate and the memory cleared.
struct Anderson {
    memory: usize,
    dg: VecDeque<DVector<f64>>,
    df: VecDeque<DVector<f64>>,
    last: Option<(DVector<f64>, DVector<f64>)>,
    last_norm: f64,
}

impl Anderson {
    fn new(memory: usize) -> Self {
        Anderson { memory, dg: VecDeque::new(), df: VecDeque::new(), last: None, last_norm: f64::INFINITY }
    }

    fn reset(&mut self) {
        self.dg.clear();
        self.df.clear();
        self.last = None;
        self.last_norm = f64::INFINITY;
    }

    /// Next iterate given the current point `w` and its image `g = g(w)`.
    fn next(&mut self, w: &DVector<f64>, g: DVector<f64>) -> DVector<f64> {
        if self.memory == 0 {
            return g;
        }
        let f = &g - w;
        let norm = f.norm();
        if norm > ANDERSON_SAFEGUARD * self.last_norm {
            // fall back to the plain step from the last accepted point
            let fallback = self.last.take().map(|(g_prev, _)| g_prev);
            self.reset();
            return fallback.unwrap_or(g);
        }
        if let Some((g_prev, f_prev)) = &self.last {
            self.dg.push_back(&g - g_prev);
            self.df.push_back(&f - f_prev);
            if self.dg.len() > self.memory {
                self.dg.pop_front();
                self.df.pop_front();
            }
        }
        self.last = Some((g.clone(), f.clone()));
        self.last_norm = norm;
        let m = self.df.len();
        if m == 0 {
            return g;
        }
        let gram = DMatrix::from_fn(m, m, |i, j| self.df[i].dot(&self.df[j]));
        let reg = 1e-10 * gram.diagonal().max().max(f64::MIN_POSITIVE);
        let gram = gram + DMatrix::identity(m, m) * reg;
        let rhs = DVector::from_fn(m, |i, _| self.df[i].dot(&f));
        let Some(gamma) = gram.cholesky().map(|c| c.solve(&rhs)) else { return g };
        let mut out = g;
        for (i, dg) in self.dg.iter().enumerate() {
            out.axpy(-gamma[i], dg, 1.0);
        }
        out
    }
}

const ADAPT_EVERY: usize = 200;
const OVER_RELAXATION: f64 = 1.0;
const ANDERSON_MEMORY: usize = 10;
const ANDERSON_SAFEGUARD: f64 = 10.0;
const ADAPT_RATIO: f64 = 1.5;
const STALL_WINDOW: usize = 200;

/// Lower bound on the `n`-particle ground energy from the relaxation `conds`.
pub fn lower_bound(integrals: &IntegralSet, n: usize, conds: ConditionSet, opts: &SolverOptions) -> Result<SolverResult> {
    let r = integrals.r;
    if n < 2 {
        return domain(format!("lower bound needs N >= 2, got {n}"));
    }
    if n > r || r > MAX_SOLVER_ORBITALS {
        return domain(format!("lower bound needs N <= r <= {MAX_SOLVER_ORBITALS}, got N = {n}, r = {r}"));
    }
    let m = binomial(r, 2);
    let k2 = reduced_hamiltonian(integrals, n)?.k2;
    let complex = k2.iter().any(|z| z.im != 0.0);
    let (param, blocks) = build_blocks(r, n, complex, conds)?;
    let nv = param.len;
    let d2_expr = param.d2_expressions();

    // objective c·x = Tr(K2 ²D); ²D[P,Q] contributes K2[Q,P] ²D[P,Q]
    let mut cost = DVector::<f64>::zeros(nv);
    for p in 0..m {
        for q in 0..m {
            for &(v, c) in &d2_expr[p * m + q] {
                cost[v] += (k2[(q, p)] * c).re;
            }
        }
    }
    let mut trace_row = DVector::<f64>::zeros(nv);
    for &(p, q, re, _) in &param.entries {
        if p == q {
            trace_row[re] = 1.0;
        }
    }
    let target = binomial(n, 2) as f64;

    let mut h = DMatrix::<f64>::zeros(nv, nv);
    for b in &blocks {
        b.add_gram(&mut h);
    }
    let chol = Cholesky::new(h).ok_or_else(|| crate::error::Error::Domain("normal matrix is singular".into()))?;
    let hw = chol.solve(&trace_row);
    let a_hw = trace_row.dot(&hw);
    let consts: Vec<DVector<f64>> = blocks.iter().map(Block::constants).collect();

    let scale = cost.amax().max(1.0);
    let offsets: Vec<usize> = blocks
        .iter()
        .scan(0, |acc, b| {
            let o = *acc;
            *acc += b.rows.len();
            Some(o)
        })
        .collect();
    let total: usize = blocks.iter().map(|b| b.rows.len()).sum();
    let slice = |w: &DVector<f64>, k: usize, second: bool| -> DVector<f64> {
        let o = offsets[k] + if second { total } else { 0 };
        w.rows(o, blocks[k].rows.len()).into_owned()
    };

    // One ADMM sweep on the state w = (Z, U): returns the new state, x, and
    // the primal and dual residuals.
    let step = |w: &DVector<f64>, rho: f64| -> (DVector<f64>, DVector<f64>, f64, f64) {
        // x-step: minimize c·x/scale + ρ/2 Σ |L x + c_k - Z + U|² with a·x = t
        let mut rhs = &cost * (-1.0 / (rho * scale));
        for (k, b) in blocks.iter().enumerate() {
            let shift = &consts[k] - slice(w, k, false) + slice(w, k, true);
            b.add_transpose(&(-shift), &mut rhs);
        }
        let x0 = chol.solve(&rhs);
        let lambda = (trace_row.dot(&x0) - target) / a_hw;
        let x = x0 - &hw * lambda;

        let parts: Vec<(DVector<f64>, DVector<f64>, f64)> = blocks
            .par_iter()
            .enumerate()
            .map(|(k, b)| {
                let y = b.image(&x);
                let z_old = slice(w, k, false);
                let relaxed = &y * OVER_RELAXATION + &z_old * (1.0 - OVER_RELAXATION);
                let z = b.project(&(&relaxed + slice(w, k, true))).0;
                let u = slice(w, k, true) + &relaxed - &z;
                let primal = (&y - &z).norm_squared();
                (z, u, primal)
            })
            .collect();
        let mut next = DVector::<f64>::zeros(2 * total);
        let mut primal = 0.0;
        let mut dual_vec = DVector::<f64>::zeros(x.len());
        for (k, (z, u, p)) in parts.into_iter().enumerate() {
            blocks[k].add_transpose(&(&z - slice(w, k, false)), &mut dual_vec);
            next.rows_mut(offsets[k], z.len()).copy_from(&z);
            next.rows_mut(total + offsets[k], u.len()).copy_from(&u);
            primal += p;
        }
        (next, x, primal.sqrt(), rho * dual_vec.norm())
    };

    let mut rho = 1.0;
    let mut w = DVector::<f64>::zeros(2 * total);
    let mut x = DVector::<f64>::zeros(nv);
    let mut accel = Anderson::new(ANDERSON_MEMORY);
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iterations {
        iterations = it;
        let (g, x_new, primal, dual) = step(&w, rho);
        x = x_new;
        let energy = cost.dot(&x);
        history.push(energy);
        if primal < opts.psd_tol && dual < opts.psd_tol {
            converged = true;
            break;
        }
        if primal < opts.psd_tol
            && history.len() > STALL_WINDOW
            && (energy - history[history.len() - 1 - STALL_WINDOW]).abs() < opts.stall_tol
        {
            converged = true;
            break;
        }
        w = accel.next(&w, g);
        if it % ADAPT_EVERY == 0 {
            let factor = if primal > ADAPT_RATIO * dual {
                2.0
            } else if dual > ADAPT_RATIO * primal {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 {
                rho *= factor;
                let mut u = w.rows_mut(total, total);
                u /= factor;
                accel.reset();
            }
        }
    }

    let primal_feasibility = (trace_row.dot(&x) - target).abs();
    let condition_feasibility =
        blocks.par_iter().map(|b| b.min_eigenvalue(&b.image(&x))).collect::<Vec<_>>().into_iter().fold(f64::INFINITY, f64::min);
    let converged = converged && primal_feasibility < opts.linear_tol.max(1e-7) && condition_feasibility > -1e-7;
    let d2 = RdmTensor { p: 2, r, n, matrix: param.to_matrix(&x) };
    debug_assert!(blocks.iter().all(|b| b.kind == MetricKind::D2 || b.dim > 0));
    Ok(SolverResult {
        conditions: conds.label(),
        energy: cost.dot(&x),
        primal_feasibility,
        condition_feasibility,
        iterations,
        converged,
        d2: Some(d2),
    })
}
