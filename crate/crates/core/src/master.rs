//! The convex master relaxation and its barrier solver.
//!
//! ```text
//!   min  v + qᵀx
//!   s.t. v ≥ xᵀ(Q + diag d)x − dᵀy        for every d in the cut pool
//!        ℓ_i(x_i) ≤ y_i ≤ u_i(x_i),  L_i ≤ x_i ≤ R_i
//!        v ≥ xᵀQ⁺x + τ,  τ ≥ τ_lo           (optional PSD split)
//!        aᵀx + b·τ + c·v ≤ r                (linear cuts)
//! ```
//!
//! All constraints are convex; the model is solved by a primal log-barrier
//! method with damped Newton centering. Variables that are fixed (`L = R`) and
//! lifted variables with `ℓ ≡ u` are substituted out before solving, so the
//! barrier always has a nonempty interior.

use std::time::Instant;

use crate::envelopes::EnvelopeModel;
use crate::linalg::{self, Cholesky, LinalgError, SymMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum MasterError {
    #[error("the master model has no diagonal cut, so v is unbounded below")]
    NoCuts,
    #[error("cut rejected: lambda_min(Q + diag(d)) = {lambda_min:e}")]
    RejectedCut { lambda_min: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("could not construct a strictly feasible starting point")]
    NoInteriorPoint,
    #[error("barrier Newton method failed: {reason}")]
    Solver {
        reason: String,
        last: Option<Box<MasterSolution>>,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A diagonal perturbation `d` with `Q + diag(d) ⪰ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagCut {
    pub d: Vec<f64>,
}

/// `x_coef·x + tau_coef·τ + v_coef·v ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCut {
    pub x_coef: Vec<f64>,
    pub tau_coef: f64,
    pub v_coef: f64,
    pub rhs: f64,
}

impl LinearCut {
    /// `lhs − rhs`; positive means violated.
    pub fn violation(&self, x: &[f64], tau: f64, v: f64) -> f64 {
        let lhs: f64 = self.x_coef.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            + self.tau_coef * tau
            + self.v_coef * v;
        lhs - self.rhs
    }
}

/// PSD split data: `Q = Q⁺ + Q⁻` and a valid lower bound on `τ = xᵀQ⁻x`.
#[derive(Debug, Clone)]
pub struct PsdSplit {
    pub plus: SymMatrix,
    pub minus: SymMatrix,
    pub tau_lo: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutOutcome {
    Added,
    /// Identical (within `1e-10`) to a cut already in the pool; not re-added.
    Duplicate,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MasterOptions {
    pub psd_split: bool,
}

#[derive(Debug, Clone)]
pub struct MasterModel {
    q: SymMatrix,
    q_lin: Vec<f64>,
    envelopes: Vec<EnvelopeModel>,
    q_norm: f64,
    diag_cuts: Vec<DiagCut>,
    linear_cuts: Vec<LinearCut>,
    psd_split: Option<PsdSplit>,
}

/// Valid lower bound on `xᵀAx` over the box, termwise from corner products.
pub fn box_quadratic_lower_bound(a: &SymMatrix, bounds: &[(f64, f64)]) -> f64 {
    let n = a.n();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let aij = a.get(i, j);
            if aij == 0.0 {
                continue;
            }
            let (li, ri) = bounds[i];
            let (lj, rj) = bounds[j];
            let lo = if i == j {
                // x_i² over [L, R]
                if li <= 0.0 && 0.0 <= ri {
                    0.0
                } else {
                    (li * li).min(ri * ri)
                }
            } else {
                [li * lj, li * rj, ri * lj, ri * rj]
                    .into_iter()
                    .fold(f64::INFINITY, f64::min)
            };
            let hi = if i == j {
                (li * li).max(ri * ri)
            } else {
                [li * lj, li * rj, ri * lj, ri * rj]
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            total += if aij > 0.0 { aij * lo } else { aij * hi };
        }
    }
    total
}

impl MasterModel {
    /// Model with box and envelope constraints and an empty cut pool.
    pub fn new(
        q: SymMatrix,
        q_lin: Vec<f64>,
        envelopes: Vec<EnvelopeModel>,
        options: MasterOptions,
    ) -> Result<Self, MasterError> {
        let n = q.n();
        if q_lin.len() != n || envelopes.len() != n {
            return Err(MasterError::Dimension(format!(
                "n = {n}, |q| = {}, |envelopes| = {}",
                q_lin.len(),
                envelopes.len()
            )));
        }
        let q_norm = linalg::spectral_norm(&q)?;
        let psd_split = if options.psd_split {
            let (plus, minus) = linalg::psd_split(&q)?;
            let bounds: Vec<(f64, f64)> = envelopes.iter().map(|e| (e.lo, e.hi)).collect();
            let tau_lo = box_quadratic_lower_bound(&minus, &bounds);
            Some(PsdSplit {
                plus,
                minus,
                tau_lo,
            })
        } else {
            None
        };
        Ok(Self {
            q,
            q_lin,
            envelopes,
            q_norm,
            diag_cuts: Vec::new(),
            linear_cuts: Vec::new(),
            psd_split,
        })
    }

    pub fn n(&self) -> usize {
        self.q.n()
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn q_lin(&self) -> &[f64] {
        &self.q_lin
    }

    pub fn envelopes(&self) -> &[EnvelopeModel] {
        &self.envelopes
    }

    pub fn diag_cuts(&self) -> &[DiagCut] {
        &self.diag_cuts
    }

    pub fn linear_cuts(&self) -> &[LinearCut] {
        &self.linear_cuts
    }

    pub fn psd_split(&self) -> Option<&PsdSplit> {
        self.psd_split.as_ref()
    }

    /// Appends a diagonal cut after checking `λ_min(Q + diag d) ≥ −1e-8·max(1, ‖Q‖₂)`.
    pub fn add_diag_cut(&mut self, cut: DiagCut) -> Result<CutOutcome, MasterError> {
        if cut.d.len() != self.n() {
            return Err(MasterError::Dimension(format!(
                "cut has {} entries, expected {}",
                cut.d.len(),
                self.n()
            )));
        }
        let lambda_min = linalg::min_eigenvalue(&self.q.add_diag(&cut.d))?;
        if lambda_min < -1e-8 * self.q_norm.max(1.0) {
            return Err(MasterError::RejectedCut { lambda_min });
        }
        let scale = 1.0 + cut.d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let duplicate = self.diag_cuts.iter().any(|c| {
            c.d.iter()
                .zip(&cut.d)
                .all(|(a, b)| (a - b).abs() <= 1e-10 * scale)
        });
        if duplicate {
            return Ok(CutOutcome::Duplicate);
        }
        self.diag_cuts.push(cut);
        Ok(CutOutcome::Added)
    }

    pub fn add_linear_cut(&mut self, cut: LinearCut) -> Result<CutOutcome, MasterError> {
        if cut.x_coef.len() != self.n() {
            return Err(MasterError::Dimension("linear cut length".into()));
        }
        if self.linear_cuts.iter().any(|c| c == &cut) {
            return Ok(CutOutcome::Duplicate);
        }
        self.linear_cuts.push(cut);
        Ok(CutOutcome::Added)
    }

    /// Right-hand side of the cut for `d` at `(x, y)`: `xᵀ(Q + diag d)x − dᵀy`.
    pub fn cut_rhs(&self, d: &[f64], x: &[f64], y: &[f64]) -> f64 {
        let base = self.q.quad_form(x);
        base + d
            .iter()
            .zip(x.iter().zip(y))
            .map(|(di, (xi, yi))| di * (xi * xi - yi))
            .sum::<f64>()
    }

    /// Checks a point against every constraint; returns the largest violation.
    pub fn max_violation(&self, x: &[f64], y: &[f64], tau: Option<f64>, v: f64) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (i, env) in self.envelopes.iter().enumerate() {
            worst = worst
                .max(env.lo - x[i])
                .max(x[i] - env.hi)
                .max(env.lower_value(x[i]) - y[i])
                .max(y[i] - env.upper_value(x[i]));
        }
        for c in &self.diag_cuts {
            worst = worst.max(self.cut_rhs(&c.d, x, y) - v);
        }
        if let (Some(split), Some(t)) = (&self.psd_split, tau) {
            worst = worst.max(split.plus.quad_form(x) + t - v).max(split.tau_lo - t);
            for c in &self.linear_cuts {
                worst = worst.max(c.violation(x, t, v));
            }
        }
        worst
    }
}

/// Builds `(ℓ, u)` for each set and an empty-pool model.
pub fn build_master(
    instance: &crate::instances::Instance,
    options: MasterOptions,
) -> Result<MasterModel, MasterError> {
    let envelopes = instance
        .sets
        .iter()
        .map(crate::envelopes::build_envelope)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| MasterError::Dimension(e.to_string()))?;
    MasterModel::new(instance.q.clone(), instance.q_lin.clone(), envelopes, options)
}

/// Barrier schedule and Newton controls.
#[derive(Debug, Clone)]
pub struct BarrierParams {
    /// Initial duality gap `(#constraints)·μ` relative to `max(1, |objective|)`
    /// at the starting point.
    pub mu_init: f64,
    pub mu_factor: f64,
    /// Stop once `(#constraints)·μ ≤ gap_tol·(1 + |objective|)`.
    pub gap_tol: f64,
    pub max_newton_per_stage: usize,
    pub max_newton_total: usize,
    pub armijo: f64,
    /// Centering stops at Newton decrement² / 2 below this value.
    pub newton_tol: f64,
    /// Centering also stops when a step is shortened although the decrement
    /// is below this value.
    pub stall_tol: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self {
            mu_init: 1.0,
            mu_factor: 0.2,
            gap_tol: 1e-9,
            max_newton_per_stage: 200,
            max_newton_total: 2000,
            armijo: 1e-4,
            newton_tol: 1e-9,
            stall_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MasterSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub tau: Option<f64>,
    pub v: f64,
    /// `v + qᵀx` at the returned point.
    pub objective: f64,
    /// `objective − (#constraints)·μ`: a lower bound on the master optimum.
    pub bound: f64,
    pub newton_iters: usize,
    pub barrier_mu_final: f64,
    pub solve_time: f64,
}

#[derive(Debug, Clone, Copy)]
enum XSlot {
    Free(usize),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy)]
enum YSlot {
    Free(usize),
    /// `y_i = slope·x_i + intercept`.
    Affine { slope: f64, intercept: f64 },
}

/// `aᵀz + c ≤ 0` with sparse `a`.
#[derive(Debug, Clone)]
struct LinCon {
    idx: Vec<usize>,
    coef: Vec<f64>,
    c: f64,
}

/// `zₓᵀ H zₓ + lᵀz + c ≤ 0`, `H` dense over the free-x block.
#[derive(Debug, Clone)]
struct QuadCon {
    h: Vec<f64>,
    lin: Vec<f64>,
    c: f64,
}

/// The model with substitutions applied, in the solver's variable space
/// `z = [x_free | y_free | τ | v]`.
struct Compiled {
    dim: usize,
    nx: usize,
    x_slots: Vec<XSlot>,
    y_slots: Vec<YSlot>,
    tau: Option<usize>,
    v: usize,
    obj: Vec<f64>,
    obj_const: f64,
    linear: Vec<LinCon>,
    /// `z_a² − z_b ≤ 0`.
    squares: Vec<(usize, usize)>,
    quads: Vec<QuadCon>,
}

/// Affine expression in the lifted space `(x, y, τ, v)` with an optional
/// quadratic form in `x`.
struct Expr<'a> {
    h: Option<&'a SymMatrix>,
    x: Vec<f64>,
    y: Vec<f64>,
    tau: f64,
    v: f64,
    c: f64,
}

impl<'a> Expr<'a> {
    fn zero(n: usize) -> Self {
        Self {
            h: None,
            x: vec![0.0; n],
            y: vec![0.0; n],
            tau: 0.0,
            v: 0.0,
            c: 0.0,
        }
    }
}

impl Compiled {
    fn new(model: &MasterModel) -> Self {
        let n = model.n();
        let mut x_slots = Vec::with_capacity(n);
        let mut nx = 0;
        for env in &model.envelopes {
            if env.hi - env.lo > 1e-12 * (1.0 + env.lo.abs().max(env.hi.abs())) {
                x_slots.push(XSlot::Free(nx));
                nx += 1;
            } else {
                x_slots.push(XSlot::Fixed(0.5 * (env.lo + env.hi)));
            }
        }
        let mut next = nx;
        let y_slots = model
            .envelopes
            .iter()
            .zip(&x_slots)
            .map(|(env, xs)| {
                if env.is_degenerate() || matches!(xs, XSlot::Fixed(_)) {
                    YSlot::Affine {
                        slope: env.upper.slope,
                        intercept: env.upper.intercept,
                    }
                } else {
                    next += 1;
                    YSlot::Free(next - 1)
                }
            })
            .collect();
        let tau = model.psd_split.as_ref().map(|_| {
            next += 1;
            next - 1
        });
        let v = next;
        let dim = v + 1;
        let mut c = Compiled {
            dim,
            nx,
            x_slots,
            y_slots,
            tau,
            v,
            obj: vec![0.0; dim],
            obj_const: 0.0,
            linear: Vec::new(),
            squares: Vec::new(),
            quads: Vec::new(),
        };

        let mut obj = Expr::zero(n);
        obj.x.clone_from(&model.q_lin);
        obj.v = 1.0;
        let (o, oc) = c.compile_linear_dense(&obj);
        c.obj = o;
        c.obj_const = oc;

        for (i, env) in model.envelopes.iter().enumerate() {
            let (XSlot::Free(zx), YSlot::Free(zy)) = (c.x_slots[i], c.y_slots[i]) else {
                if let XSlot::Free(zx) = c.x_slots[i] {
                    c.linear.push(LinCon { idx: vec![zx], coef: vec![-1.0], c: env.lo });
                    c.linear.push(LinCon { idx: vec![zx], coef: vec![1.0], c: -env.hi });
                }
                continue;
            };
            c.linear.push(LinCon { idx: vec![zx], coef: vec![-1.0], c: env.lo });
            c.linear.push(LinCon { idx: vec![zx], coef: vec![1.0], c: -env.hi });
            if env.quadratic {
                c.squares.push((zx, zy));
            }
            for ch in &env.lower_chords {
                c.linear.push(LinCon {
                    idx: vec![zx, zy],
                    coef: vec![ch.slope, -1.0],
                    c: ch.intercept,
                });
            }
            c.linear.push(LinCon {
                idx: vec![zx, zy],
                coef: vec![-env.upper.slope, 1.0],
                c: -env.upper.intercept,
            });
        }

        let cut_mats: Vec<SymMatrix> = model
            .diag_cuts
            .iter()
            .map(|cut| model.q.add_diag(&cut.d))
            .collect();
        for (cut, h) in model.diag_cuts.iter().zip(&cut_mats) {
            let mut e = Expr::zero(n);
            e.h = Some(h);
            e.y = cut.d.iter().map(|d| -d).collect();
            e.v = -1.0;
            let q = c.compile_quad(&e);
            c.quads.push(q);
        }
        if let Some(split) = &model.psd_split {
            let mut e = Expr::zero(n);
            e.h = Some(&split.plus);
            e.tau = 1.0;
            e.v = -1.0;
            let q = c.compile_quad(&e);
            c.quads.push(q);
            let tz = c.tau.expect("tau slot");
            c.linear.push(LinCon { idx: vec![tz], coef: vec![-1.0], c: split.tau_lo });
            for cut in &model.linear_cuts {
                let mut e = Expr::zero(n);
                e.x.clone_from(&cut.x_coef);
                e.tau = cut.tau_coef;
                e.v = cut.v_coef;
                e.c = -cut.rhs;
                let (dense, cst) = c.compile_linear_dense(&e);
                let (idx, coef): (Vec<usize>, Vec<f64>) = dense
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(k, v)| (k, *v))
                    .unzip();
                c.linear.push(LinCon { idx, coef, c: cst });
            }
        }
        c
    }

    /// Linear part of `e` in z-space (ignores `e.h`).
    fn compile_linear_dense(&self, e: &Expr) -> (Vec<f64>, f64) {
        let mut lin = vec![0.0; self.dim];
        let mut cst = e.c;
        let mut x_coef = e.x.clone();
        for (i, ys) in self.y_slots.iter().enumerate() {
            match *ys {
                YSlot::Free(z) => lin[z] += e.y[i],
                YSlot::Affine { slope, intercept } => {
                    x_coef[i] += slope * e.y[i];
                    cst += intercept * e.y[i];
                }
            }
        }
        for (i, xs) in self.x_slots.iter().enumerate() {
            match *xs {
                XSlot::Free(z) => lin[z] += x_coef[i],
                XSlot::Fixed(val) => cst += x_coef[i] * val,
            }
        }
        if let Some(t) = self.tau {
            lin[t] += e.tau;
        }
        lin[self.v] += e.v;
        (lin, cst)
    }

    fn compile_quad(&self, e: &Expr) -> QuadCon {
        let (mut lin, mut cst) = self.compile_linear_dense(e);
        let h = e.h.expect("quadratic expression");
        let nx = self.nx;
        let mut hz = vec![0.0; nx * nx];
        for (i, xi) in self.x_slots.iter().enumerate() {
            for (j, xj) in self.x_slots.iter().enumerate() {
                let hij = h.get(i, j);
                match (*xi, *xj) {
                    (XSlot::Free(a), XSlot::Free(b)) => hz[a * nx + b] = hij,
                    (XSlot::Free(a), XSlot::Fixed(val)) => lin[a] += 2.0 * hij * val,
                    (XSlot::Fixed(vi), XSlot::Fixed(vj)) => cst += hij * vi * vj,
                    (XSlot::Fixed(_), XSlot::Free(_)) => {}
                }
            }
        }
        QuadCon { h: hz, lin, c: cst }
    }

    fn n_constraints(&self) -> usize {
        self.linear.len() + self.squares.len() + self.quads.len()
    }

    fn objective(&self, z: &[f64]) -> f64 {
        dot(&self.obj, z) + self.obj_const
    }

    fn quad_value(&self, q: &QuadCon, z: &[f64], hx: &mut [f64]) -> f64 {
        let nx = self.nx;
        let zx = &z[..nx];
        for (a, out) in hx.iter_mut().enumerate() {
            *out = dot(&q.h[a * nx..(a + 1) * nx], zx);
        }
        dot(hx, zx) + dot(&q.lin, z) + q.c
    }

    /// All constraint values; `None` if any is not strictly negative.
    fn values(&self, z: &[f64], scratch: &mut [f64]) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n_constraints());
        for l in &self.linear {
            let g = l.idx.iter().zip(&l.coef).map(|(&k, &a)| a * z[k]).sum::<f64>() + l.c;
            if !(g < 0.0) {
                return None;
            }
            out.push(g);
        }
        for &(a, b) in &self.squares {
            let g = z[a] * z[a] - z[b];
            if !(g < 0.0) {
                return None;
            }
            out.push(g);
        }
        for q in &self.quads {
            let g = self.quad_value(q, z, scratch);
            if !(g < 0.0) {
                return None;
            }
            out.push(g);
        }
        Some(out)
    }

    /// Change in the barrier function from a point with constraint values
    /// `vals0` to `z1`, given the objective change; `None` if `z1` is not
    /// strictly feasible. Computed from ratios to avoid cancellation.
    fn barrier_change(
        &self,
        vals0: &[f64],
        z1: &[f64],
        t: f64,
        obj_change: f64,
        scratch: &mut [f64],
    ) -> Option<(f64, Vec<f64>)> {
        let vals1 = self.values(z1, scratch)?;
        let log_change: f64 = vals0
            .iter()
            .zip(&vals1)
            .map(|(g0, g1)| ((g1 - g0) / g0).ln_1p())
            .sum();
        Some((t * obj_change - log_change, vals1))
    }

    /// Gradient and Hessian of the barrier function at a strictly feasible `z`.
    fn derivatives(&self, z: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        let dim = self.dim;
        let nx = self.nx;
        let mut grad: Vec<f64> = self.obj.iter().map(|c| t * c).collect();
        let mut hess = vec![0.0; dim * dim];
        for l in &self.linear {
            let g = l.idx.iter().zip(&l.coef).map(|(&k, &a)| a * z[k]).sum::<f64>() + l.c;
            let inv = -1.0 / g;
            let inv2 = inv * inv;
            for (p, &kp) in l.idx.iter().enumerate() {
                grad[kp] += l.coef[p] * inv;
                for (r, &kr) in l.idx.iter().enumerate() {
                    hess[kp * dim + kr] += l.coef[p] * l.coef[r] * inv2;
                }
            }
        }
        for &(a, b) in &self.squares {
            let g = z[a] * z[a] - z[b];
            let inv = -1.0 / g;
            let inv2 = inv * inv;
            let ga = 2.0 * z[a];
            grad[a] += ga * inv;
            grad[b] -= inv;
            hess[a * dim + a] += 2.0 * inv + ga * ga * inv2;
            hess[a * dim + b] -= ga * inv2;
            hess[b * dim + a] -= ga * inv2;
            hess[b * dim + b] += inv2;
        }
        let mut hx = vec![0.0; nx];
        let mut gq = vec![0.0; dim];
        for q in &self.quads {
            let g = self.quad_value(q, z, &mut hx);
            let inv = -1.0 / g;
            let inv2 = inv * inv;
            gq.copy_from_slice(&q.lin);
            for a in 0..nx {
                gq[a] += 2.0 * hx[a];
            }
            for (gk, qk) in grad.iter_mut().zip(&gq) {
                *gk += qk * inv;
            }
            for a in 0..nx {
                let row = &mut hess[a * dim..a * dim + nx];
                for (hv, &qh) in row.iter_mut().zip(&q.h[a * nx..(a + 1) * nx]) {
                    *hv += 2.0 * qh * inv;
                }
            }
            for p in 0..dim {
                let gp = gq[p] * inv2;
                if gp == 0.0 {
                    continue;
                }
                let row = &mut hess[p * dim..(p + 1) * dim];
                for (hv, &gr) in row.iter_mut().zip(&gq) {
                    *hv += gp * gr;
                }
            }
        }
        (grad, hess)
    }

    fn expand(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>, Option<f64>, f64) {
        let x: Vec<f64> = self
            .x_slots
            .iter()
            .map(|s| match *s {
                XSlot::Free(k) => z[k],
                XSlot::Fixed(v) => v,
            })
            .collect();
        let y = self
            .y_slots
            .iter()
            .zip(&x)
            .map(|(s, xi)| match *s {
                YSlot::Free(k) => z[k],
                YSlot::Affine { slope, intercept } => slope * xi + intercept,
            })
            .collect();
        (x, y, self.tau.map(|k| z[k]), z[self.v])
    }

    /// Interior starting point: box midpoints, `y` between the envelopes, `τ`
    /// and `v` pushed above every constraint that involves them.
    fn initial_point(&self, model: &MasterModel) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        for (i, env) in model.envelopes.iter().enumerate() {
            if let XSlot::Free(k) = self.x_slots[i] {
                let x = 0.5 * (env.lo + env.hi);
                z[k] = x;
                if let YSlot::Free(ky) = self.y_slots[i] {
                    z[ky] = 0.5 * (env.lower_value(x) + env.upper_value(x));
                }
            }
        }
        let margin = |v: f64| 1.0 + 1e-3 * v.abs();
        if let (Some(kt), Some(split)) = (self.tau, &model.psd_split) {
            let (x, _, _, _) = self.expand(&z);
            let mut tau = split.tau_lo;
            // Cuts without v give lower bounds on τ.
            for cut in &model.linear_cuts {
                if cut.v_coef == 0.0 && cut.tau_coef < 0.0 {
                    let ax: f64 = cut.x_coef.iter().zip(&x).map(|(a, b)| a * b).sum();
                    tau = tau.max((cut.rhs - ax) / cut.tau_coef);
                }
            }
            z[kt] = tau + margin(tau);
        }
        let (x, y, tau, _) = self.expand(&z);
        let mut v = f64::NEG_INFINITY;
        for cut in &model.diag_cuts {
            v = v.max(model.cut_rhs(&cut.d, &x, &y));
        }
        if let (Some(split), Some(t)) = (&model.psd_split, tau) {
            v = v.max(split.plus.quad_form(&x) + t);
            for cut in &model.linear_cuts {
                if cut.v_coef < 0.0 {
                    let ax: f64 = cut.x_coef.iter().zip(&x).map(|(a, b)| a * b).sum();
                    v = v.max((ax + cut.tau_coef * t - cut.rhs) / -cut.v_coef);
                }
            }
        }
        z[self.v] = v + margin(v);
        z
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn solve_newton_system(hess: &mut [f64], grad: &[f64], dim: usize) -> Option<Vec<f64>> {
    let diag_max = (0..dim).map(|i| hess[i * dim + i].abs()).fold(0.0, f64::max);
    let mut reg = 0.0;
    for _ in 0..8 {
        if reg > 0.0 {
            for i in 0..dim {
                hess[i * dim + i] += reg;
            }
        }
        if let Ok(chol) = Cholesky::factor_slice(dim, hess) {
            let mut step: Vec<f64> = grad.iter().map(|g| -g).collect();
            chol.solve_in_place(&mut step);
            if step.iter().all(|s| s.is_finite()) {
                return Some(step);
            }
        }
        let next = if reg == 0.0 { 1e-12 * diag_max.max(1.0) } else { reg * 100.0 };
        if reg > 0.0 {
            for i in 0..dim {
                hess[i * dim + i] -= reg;
            }
        }
        reg = next;
    }
    None
}

/// Solves the master model by the log-barrier method.
pub fn solve_master(model: &MasterModel, params: &BarrierParams) -> Result<MasterSolution, MasterError> {
    if model.diag_cuts.is_empty() {
        return Err(MasterError::NoCuts);
    }
    let start = Instant::now();
    let comp = Compiled::new(model);
    let dim = comp.dim;
    let m = comp.n_constraints() as f64;
    let mut scratch = vec![0.0; comp.nx];
    let mut z = comp.initial_point(model);
    if comp.values(&z, &mut scratch).is_none() {
        return Err(MasterError::NoInteriorPoint);
    }

    // μ is relative to the objective scale: the first stage starts with a
    // duality gap of about mu_init·|objective|.
    let mut mu = params.mu_init * comp.objective(&z).abs().max(1.0) / m;
    let mut newton_total = 0usize;
    let finish = |z: &[f64], mu: f64, iters: usize| {
        let (x, y, tau, v) = comp.expand(z);
        let objective = comp.objective(z);
        MasterSolution {
            x,
            y,
            tau,
            v,
            objective,
            bound: objective - m * mu,
            newton_iters: iters,
            barrier_mu_final: mu,
            solve_time: start.elapsed().as_secs_f64(),
        }
    };

    let mut vals = comp.values(&z, &mut scratch).expect("checked above");
    let mut last_centered: Option<(Vec<f64>, f64)> = None;
    loop {
        let t = 1.0 / mu;
        let mut centered = false;
        let mut failure = None;
        for _ in 0..params.max_newton_per_stage {
            if newton_total >= params.max_newton_total {
                failure = Some("Newton iteration budget exhausted".to_string());
                break;
            }
            newton_total += 1;
            let (grad, mut hess) = comp.derivatives(&z, t);
            let Some(step) = solve_newton_system(&mut hess, &grad, dim) else {
                failure = Some("singular Newton system".to_string());
                break;
            };
            let slope = dot(&grad, &step);
            if -slope / 2.0 <= params.newton_tol {
                centered = true;
                break;
            }
            let obj_slope = dot(&comp.obj, &step);
            let mut s = 1.0;
            let mut trial = vec![0.0; dim];
            let mut accepted = None;
            for _ in 0..60 {
                for k in 0..dim {
                    trial[k] = z[k] + s * step[k];
                }
                if let Some((df, vals1)) =
                    comp.barrier_change(&vals, &trial, t, s * obj_slope, &mut scratch)
                {
                    if df <= params.armijo * s * slope {
                        accepted = Some(vals1);
                        break;
                    }
                }
                s *= 0.5;
            }
            let Some(vals1) = accepted else {
                // No descent is measurable at this precision.
                centered = true;
                break;
            };
            std::mem::swap(&mut z, &mut trial);
            vals = vals1;
            if s < 1.0 && -slope / 2.0 <= params.stall_tol {
                // Exact Newton takes full steps this close to the center, so
                // backtracking here means the direction is rounding noise.
                centered = true;
                break;
            }
        }
        if !centered {
            let reason = failure.unwrap_or_else(|| format!("centering did not converge at mu = {mu:e}"));
            // A sufficiently converged earlier stage is still a sound answer.
            if let Some((zc, muc)) = &last_centered {
                if m * muc <= 1e-6 * (1.0 + comp.objective(zc).abs()) {
                    return Ok(finish(zc, *muc, newton_total));
                }
            }
            return Err(MasterError::Solver {
                reason,
                last: Some(Box::new(finish(&z, mu, newton_total))),
            });
        }
        let obj = comp.objective(&z);
        if m * mu <= params.gap_tol * (1.0 + obj.abs()) {
            break;
        }
        last_centered = Some((z.clone(), mu));
        mu *= params.mu_factor;
    }
    Ok(finish(&z, mu, newton_total))
}
