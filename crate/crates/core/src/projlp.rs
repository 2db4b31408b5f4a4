//! RLT (McCormick) bounds and Farkas separation over the lifted set
//!
//! ```text
//!   { (x, τ, v) : ∃X  ⟨Q⁺, X⟩ + τ − v ≤ 0,  ⟨Q⁻, X⟩ − τ ≤ 0,
//!                     y⁻_ij(x) ≤ X_ij ≤ y⁺_ij(x) }
//! ```
//!
//! At a fixed query point the feasibility question is the phase-1 LP
//! `min s₁ + s₂` over `X` in the RLT box with the two inner-product rows
//! relaxed by `s₁, s₂ ≥ 0`. Its dual has one multiplier per row, bounded in
//! `[0, 1]`, and the dual objective is concave and positively homogeneous in
//! the multipliers, so it is maximized exactly by a one-dimensional search on
//! the edges `λ₁ = 1` and `λ₂ = 1`. A positive optimum is a Farkas certificate;
//! replacing each RLT bound by its affine piece active at the query point turns
//! it into a linear inequality in `(x, τ, v)`.

use thiserror::Error;

use crate::linalg::{self, LinalgError, SymMatrix};
use crate::master::LinearCut;

#[derive(Debug, Error)]
pub enum ProjLpError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("x[{index}] = {value} lies outside [{lo}, {hi}]")]
    OutOfDomain {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RltBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl RltBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ProjLpError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(ProjLpError::InvalidBox("bound vectors differ in length or are empty".into()));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(ProjLpError::InvalidBox(format!("variable {i}: [{l}, {h}]")));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn n(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    fn check(&self, x: &[f64]) -> Result<(), ProjLpError> {
        if x.len() != self.n() {
            return Err(ProjLpError::Dimension(format!("|x| = {}, n = {}", x.len(), self.n())));
        }
        for (i, &v) in x.iter().enumerate() {
            let slack = 1e-12 * (1.0 + self.lo[i].abs().max(self.hi[i].abs()));
            if !(v >= self.lo[i] - slack && v <= self.hi[i] + slack) {
                return Err(ProjLpError::OutOfDomain {
                    index: i,
                    value: v,
                    lo: self.lo[i],
                    hi: self.hi[i],
                });
            }
        }
        Ok(())
    }
}

/// `a·x_i + b·x_j + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Bilinear {
    a: f64,
    b: f64,
    c: f64,
}

impl Bilinear {
    fn eval(&self, xi: f64, xj: f64) -> f64 {
        self.a * xi + self.b * xj + self.c
    }
}

/// The two McCormick under- and over-estimators of `x_i·x_j`.
fn mccormick(bx: &RltBox, i: usize, j: usize) -> ([Bilinear; 2], [Bilinear; 2]) {
    let (li, ri, lj, rj) = (bx.lo[i], bx.hi[i], bx.lo[j], bx.hi[j]);
    let lower = [
        Bilinear { a: rj, b: ri, c: -ri * rj },
        Bilinear { a: lj, b: li, c: -li * lj },
    ];
    let upper = [
        Bilinear { a: rj, b: li, c: -li * rj },
        Bilinear { a: lj, b: ri, c: -ri * lj },
    ];
    (lower, upper)
}

fn active_lower(bx: &RltBox, x: &[f64], i: usize, j: usize) -> Bilinear {
    let (lower, _) = mccormick(bx, i, j);
    if lower[0].eval(x[i], x[j]) >= lower[1].eval(x[i], x[j]) {
        lower[0]
    } else {
        lower[1]
    }
}

fn active_upper(bx: &RltBox, x: &[f64], i: usize, j: usize) -> Bilinear {
    let (_, upper) = mccormick(bx, i, j);
    if upper[0].eval(x[i], x[j]) <= upper[1].eval(x[i], x[j]) {
        upper[0]
    } else {
        upper[1]
    }
}

/// `(y⁻_ij(x), y⁺_ij(x))`, the McCormick bounds on `x_i·x_j`.
pub fn rlt_bounds(bx: &RltBox, x: &[f64], i: usize, j: usize) -> Result<(f64, f64), ProjLpError> {
    bx.check(x)?;
    if i >= bx.n() || j >= bx.n() {
        return Err(ProjLpError::Dimension(format!("index ({i}, {j}) out of range")));
    }
    Ok((
        active_lower(bx, x, i, j).eval(x[i], x[j]),
        active_upper(bx, x, i, j).eval(x[i], x[j]),
    ))
}

#[derive(Debug, Clone)]
pub struct LiftedRltSet {
    plus: SymMatrix,
    minus: SymMatrix,
    rlt_box: RltBox,
}

impl LiftedRltSet {
    pub fn new(q: &SymMatrix, rlt_box: RltBox) -> Result<Self, ProjLpError> {
        let (plus, minus) = linalg::psd_split(q)?;
        Self::from_split(plus, minus, rlt_box)
    }

    pub fn from_split(plus: SymMatrix, minus: SymMatrix, rlt_box: RltBox) -> Result<Self, ProjLpError> {
        if plus.n() != rlt_box.n() || minus.n() != rlt_box.n() {
            return Err(ProjLpError::Dimension("matrix and box sizes differ".into()));
        }
        Ok(Self { plus, minus, rlt_box })
    }

    pub fn plus(&self) -> &SymMatrix {
        &self.plus
    }

    pub fn minus(&self) -> &SymMatrix {
        &self.minus
    }

    pub fn rlt_box(&self) -> &RltBox {
        &self.rlt_box
    }
}

/// Dual data of the phase-1 LP at a fixed query point: for each upper
/// triangle entry `k`, the coefficients in both rows and the RLT bounds.
struct Phase1 {
    a1: Vec<f64>,
    a2: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    b1: f64,
    b2: f64,
}

impl Phase1 {
    fn dual_value(&self, l1: f64, l2: f64) -> f64 {
        let mut total = -l1 * self.b1 - l2 * self.b2;
        for k in 0..self.a1.len() {
            let w = l1 * self.a1[k] + l2 * self.a2[k];
            total += if w > 0.0 { w * self.lo[k] } else { w * self.hi[k] };
        }
        total
    }

    /// Maximizes the dual along `λ = (1, t)` (or `(t, 1)` if `swap`), `t ∈ [0, 1]`.
    fn edge_max(&self, swap: bool) -> (f64, f64) {
        let (p, r, br) = if swap {
            (&self.a2, &self.a1, self.b1)
        } else {
            (&self.a1, &self.a2, self.b2)
        };
        // w_k(t) = p_k + t·r_k changes sign at t = −p_k/r_k.
        let mut breaks: Vec<f64> = p
            .iter()
            .zip(r)
            .filter(|(_, rk)| **rk != 0.0)
            .map(|(pk, rk)| -pk / rk)
            .filter(|t| *t > 0.0 && *t < 1.0)
            .collect();
        breaks.push(0.0);
        breaks.push(1.0);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        // Right derivative of the concave edge function at t.
        let slope = |t: f64| {
            let mut s = -br;
            for k in 0..p.len() {
                let w = p[k] + t * r[k];
                let pick = if w > 0.0 || (w == 0.0 && r[k] > 0.0) { self.lo[k] } else { self.hi[k] };
                s += r[k] * pick;
            }
            s
        };
        // The maximum sits at the first breakpoint whose right slope is ≤ 0.
        let (mut a, mut b) = (0usize, breaks.len() - 1);
        while a < b {
            let mid = (a + b) / 2;
            if slope(breaks[mid]) > 0.0 {
                a = mid + 1;
            } else {
                b = mid;
            }
        }
        let t = breaks[a];
        let val = if swap {
            self.dual_value(t, 1.0)
        } else {
            self.dual_value(1.0, t)
        };
        (t, val)
    }
}

/// Result of the phase-1 solve at a query point.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Solution {
    /// Optimal total infeasibility `s₁ + s₂` (equal to the dual optimum).
    pub infeasibility: f64,
    pub lambda: (f64, f64),
}

fn build_phase1(set: &LiftedRltSet, xbar: &[f64], taubar: f64, vbar: f64) -> Phase1 {
    let n = set.rlt_box.n();
    let cap = n * (n + 1) / 2;
    let mut p = Phase1 {
        a1: Vec::with_capacity(cap),
        a2: Vec::with_capacity(cap),
        lo: Vec::with_capacity(cap),
        hi: Vec::with_capacity(cap),
        b1: vbar - taubar,
        b2: taubar,
    };
    for i in 0..n {
        for j in i..n {
            let mult = if i == j { 1.0 } else { 2.0 };
            p.a1.push(mult * set.plus.get(i, j));
            p.a2.push(mult * set.minus.get(i, j));
            p.lo.push(active_lower(&set.rlt_box, xbar, i, j).eval(xbar[i], xbar[j]));
            p.hi.push(active_upper(&set.rlt_box, xbar, i, j).eval(xbar[i], xbar[j]));
        }
    }
    p
}

/// Solves the phase-1 LP at `(x̄, τ̄, v̄)` through its dual.
pub fn solve_phase1(
    set: &LiftedRltSet,
    xbar: &[f64],
    taubar: f64,
    vbar: f64,
) -> Result<Phase1Solution, ProjLpError> {
    set.rlt_box.check(xbar)?;
    let p = build_phase1(set, xbar, taubar, vbar);
    let (t1, v1) = p.edge_max(false);
    let (t2, v2) = p.edge_max(true);
    let (lambda, value) = if v1 >= v2 { ((1.0, t1), v1) } else { ((t2, 1.0), v2) };
    if value <= 0.0 {
        return Ok(Phase1Solution {
            infeasibility: 0.0,
            lambda: (0.0, 0.0),
        });
    }
    Ok(Phase1Solution {
        infeasibility: value,
        lambda,
    })
}

/// Returns a linear cut valid for the lifted set and violated at
/// `(x̄, τ̄, v̄)` by more than `tol`, or `None`.
pub fn separate_projlp(
    set: &LiftedRltSet,
    xbar: &[f64],
    taubar: f64,
    vbar: f64,
    tol: f64,
) -> Result<Option<LinearCut>, ProjLpError> {
    let sol = solve_phase1(set, xbar, taubar, vbar)?;
    if sol.infeasibility <= tol {
        return Ok(None);
    }
    let snap = |v: f64| if v < 1e-12 { 0.0 } else { v };
    let (l1, l2) = (snap(sol.lambda.0), snap(sol.lambda.1));
    let n = set.rlt_box.n();
    let mut x_coef = vec![0.0; n];
    let mut constant = 0.0;
    for i in 0..n {
        for j in i..n {
            let mult = if i == j { 1.0 } else { 2.0 };
            let w = mult * (l1 * set.plus.get(i, j) + l2 * set.minus.get(i, j));
            if w == 0.0 {
                continue;
            }
            let piece = if w > 0.0 {
                active_lower(&set.rlt_box, xbar, i, j)
            } else {
                active_upper(&set.rlt_box, xbar, i, j)
            };
            x_coef[i] += w * piece.a;
            x_coef[j] += w * piece.b;
            constant += w * piece.c;
        }
    }
    let cut = LinearCut {
        x_coef,
        tau_coef: l1 - l2,
        v_coef: -l1,
        rhs: -constant,
    };
    if cut.violation(xbar, taubar, vbar) <= tol {
        return Ok(None);
    }
    Ok(Some(cut))
}
