//! Primal-barrier coordinate minimization for the diagonal separation SDP
//!
//! ```text
//!     min  Σ g_i(d_i)   s.t.  Q + diag(d) ⪰ 0,      g_i(t) = α_i·t (t < 0),  β_i·t (t ≥ 0)
//! ```
//!
//! The solver minimizes the log-det penalized objective
//! `f(d; σ) = Σ g_i(d_i) − σ·log det(Q + diag(d))` one coordinate at a time.
//! Each coordinate move is the exact one-dimensional minimizer, available in
//! closed form from `V = [Q + diag(d)]⁻¹`, and `V` is maintained by
//! Sherman–Morrison updates. The iterate is strictly feasible throughout.
//!
//! Internally `Q` is normalized to unit spectral norm; results are reported on
//! the caller's scale.

use crate::linalg::{self, Cholesky, LinalgError, SymMatrix};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SepError {
    #[error("invalid separation problem: {0}")]
    InvalidProblem(String),
    /// Sherman–Morrison drift made the refactorized matrix indefinite.
    #[error("numerical drift at iteration {iter}: {source}")]
    Drift { iter: usize, source: LinalgError },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Tuning knobs. `None` sizes resolve against the problem dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SepParams {
    /// Floor for the barrier weight σ.
    pub sml_sig: f64,
    /// Multiplicative σ decrease.
    pub sig_upd: f64,
    /// σ is decreased once `‖s‖₂ / ‖β‖₂` drops to this level.
    pub subg_tol: f64,
    /// Relative objective improvement over `n` iterations below which the
    /// solver stops (once σ has reached its floor).
    pub smll_prgrss: f64,
    /// Defaults to `50 n`.
    pub max_iter: Option<usize>,
    /// Lower bound applied to every `β_i`.
    pub beta_floor: f64,
    /// Re-invert from scratch after this many rank-one updates; defaults to `5 n`.
    pub refactor_period: Option<usize>,
}

impl Default for SepParams {
    fn default() -> Self {
        Self {
            sml_sig: 1e-5,
            sig_upd: 0.8,
            subg_tol: 0.03,
            smll_prgrss: 5e-4,
            max_iter: None,
            beta_floor: 1e-8,
            refactor_period: None,
        }
    }
}

impl SepParams {
    pub fn validate(&self) -> Result<(), SepError> {
        let positive = [
            ("sml_sig", self.sml_sig),
            ("subg_tol", self.subg_tol),
            ("smll_prgrss", self.smll_prgrss),
            ("beta_floor", self.beta_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SepError::InvalidProblem(format!("{name} must be positive")));
            }
        }
        if !(self.sig_upd > 0.0 && self.sig_upd < 1.0) {
            return Err(SepError::InvalidProblem("sig_upd must lie in (0, 1)".into()));
        }
        if self.max_iter == Some(0) || self.refactor_period == Some(0) {
            return Err(SepError::InvalidProblem(
                "max_iter and refactor_period must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn max_iter_for(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(50 * n)
    }

    pub fn refactor_period_for(&self, n: usize) -> usize {
        self.refactor_period.unwrap_or(5 * n)
    }
}

/// Separation problem data on the normalized scale.
#[derive(Debug, Clone)]
pub struct SepProblem {
    q: SymMatrix,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    scale: f64,
    lambda_min: f64,
}

impl SepProblem {
    /// Normalizes `q` to unit spectral norm and applies the `β` floor.
    pub fn new(q: &SymMatrix, alpha: &[f64], beta: &[f64], beta_floor: f64) -> Result<Self, SepError> {
        let n = q.n();
        if alpha.len() != n || beta.len() != n {
            return Err(SepError::InvalidProblem(format!(
                "coefficient lengths ({}, {}) do not match n = {n}",
                alpha.len(),
                beta.len()
            )));
        }
        if alpha.iter().chain(beta).any(|v| !v.is_finite()) {
            return Err(SepError::InvalidProblem("non-finite coefficient".into()));
        }
        let norm = linalg::spectral_norm(q)?;
        let scale = if norm > 0.0 { norm } else { 1.0 };
        let qn = q.scaled(1.0 / scale);
        let lambda_min = linalg::min_eigenvalue(&qn)?;
        let beta: Vec<f64> = beta.iter().map(|&b| b.max(beta_floor)).collect();
        let alpha = alpha
            .iter()
            .zip(&beta)
            .map(|(&a, &b)| if a < 0.0 { beta_floor.min(b) } else { a.min(b) })
            .collect();
        Ok(Self {
            q: qn,
            alpha,
            beta,
            scale,
            lambda_min,
        })
    }

    pub fn n(&self) -> usize {
        self.q.n()
    }

    /// Normalized `Q / ‖Q‖₂`.
    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// `‖Q‖₂` of the original matrix.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `λ_min` of the normalized matrix.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// `Σ g_i(d_i)` (scale follows the scale of `d`).
    pub fn objective(&self, d: &[f64]) -> f64 {
        sep_objective(&self.alpha, &self.beta, d)
    }
}

/// `Σ g_i(d_i)` with `g_i(t) = α_i t` for `t < 0` and `β_i t` otherwise.
pub fn sep_objective(alpha: &[f64], beta: &[f64], d: &[f64]) -> f64 {
    d.iter()
        .zip(alpha.iter().zip(beta))
        .map(|(&di, (&a, &b))| if di < 0.0 { a * di } else { b * di })
        .sum()
}

/// Iterate of the coordinate method, on the normalized scale.
#[derive(Debug, Clone)]
pub struct SepState {
    pub d: Vec<f64>,
    /// `[Q + diag(d)]⁻¹`.
    pub v: SymMatrix,
    pub sigma: f64,
    /// `log det(Q + diag(d))`.
    pub log_det: f64,
    pub iter: usize,
    since_refactor: usize,
}

impl SepState {
    /// Builds the state at a strictly feasible `d`.
    pub fn at(problem: &SepProblem, d: Vec<f64>, sigma: f64) -> Result<Self, SepError> {
        let chol = Cholesky::factor(&problem.q.add_diag(&d))?;
        Ok(Self {
            v: chol.inverse(),
            log_det: chol.log_det(),
            d,
            sigma,
            iter: 0,
            since_refactor: 0,
        })
    }

    /// `f(d; σ)`.
    pub fn f_val(&self, problem: &SepProblem) -> f64 {
        problem.objective(&self.d) - self.sigma * self.log_det
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Starting point: `d = −1.5 λ_min(Q)·e` for indefinite `Q`, `d = 0` for
/// positive definite `Q`, and a small positive shift when `λ_min ≈ 0`. σ is
/// the median of `u_i / V_ii` with `u_i ∈ ∂g_i(d_i)`.
///
/// A warm start (original scale) is used instead of the default point when
/// `Q + diag(warm)` is positive definite.
pub fn init_state(problem: &SepProblem, warm: Option<&[f64]>) -> Result<SepState, SepError> {
    let n = problem.n();
    let warm_state = warm
        .filter(|w| w.len() == n && w.iter().all(|v| v.is_finite()))
        .and_then(|w| {
            let d: Vec<f64> = w.iter().map(|v| v / problem.scale).collect();
            SepState::at(problem, d, 1.0).ok()
        });
    let mut state = match warm_state {
        Some(s) => s,
        None => {
            let lam = problem.lambda_min;
            let shift = if lam < -1e-8 {
                -1.5 * lam
            } else if lam > 1e-8 {
                0.0
            } else {
                1e-2
            };
            SepState::at(problem, vec![shift; n], 1.0)?
        }
    };
    let ratios = (0..n)
        .map(|i| {
            let di = state.d[i];
            let u = if di > 0.0 {
                problem.beta[i]
            } else if di < 0.0 {
                problem.alpha[i]
            } else {
                0.5 * (problem.alpha[i] + problem.beta[i])
            };
            u / state.v.get(i, i)
        })
        .collect();
    state.sigma = median(ratios).max(f64::MIN_POSITIVE);
    Ok(state)
}

/// Minimum-norm element of `∂f(d; σ)`, coordinate by coordinate.
pub fn min_norm_subgradient(state: &SepState, problem: &SepProblem) -> Vec<f64> {
    (0..problem.n())
        .map(|j| {
            min_norm_component(
                state.d[j],
                state.sigma * state.v.get(j, j),
                problem.alpha[j],
                problem.beta[j],
            )
        })
        .collect()
}

#[inline]
fn min_norm_component(dj: f64, c: f64, alpha: f64, beta: f64) -> f64 {
    if dj < 0.0 {
        alpha - c
    } else if dj > 0.0 {
        beta - c
    } else if c < alpha {
        alpha - c
    } else if c > beta {
        beta - c
    } else {
        0.0
    }
}

/// Exact minimizer of `Δ ↦ f(d + Δ e_i; σ)` over `Δ > −1/V_ii`.
///
/// Along the coordinate, the barrier derivative is `σ V_ii / (1 + Δ V_ii)`,
/// and the optimum is where it meets `∂g_i(d_i + Δ)`. The kink at `Δ = −d_i`
/// is admissible only when `d_i V_ii < 1`.
pub fn step_length(sigma: f64, vii: f64, di: f64, alpha: f64, beta: f64) -> f64 {
    let gap = 1.0 - di * vii;
    if gap > 0.0 {
        let rho = sigma * vii / gap;
        if rho > beta {
            sigma / beta - 1.0 / vii
        } else if rho >= alpha {
            -di
        } else {
            // ρ < α needs α > 0 because ρ > 0 here.
            debug_assert!(alpha > 0.0, "case 3 reached with alpha = 0");
            sigma / alpha - 1.0 / vii
        }
    } else {
        sigma / beta - 1.0 / vii
    }
}

/// Picks the coordinate with the largest `|s_j|` (lowest index on ties) and its
/// exact step.
pub fn coordinate_step(state: &SepState, problem: &SepProblem) -> (usize, f64) {
    let s = min_norm_subgradient(state, problem);
    let i = argmax_abs(&s);
    (i, step_for(state, problem, i))
}

fn argmax_abs(s: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in s.iter().enumerate() {
        if v.abs() > s[best].abs() {
            best = j;
        }
    }
    best
}

fn step_for(state: &SepState, problem: &SepProblem, i: usize) -> f64 {
    step_length(
        state.sigma,
        state.v.get(i, i),
        state.d[i],
        problem.alpha[i],
        problem.beta[i],
    )
}

/// Moves `d_i` by `delta`, updates `V` by Sherman–Morrison, and re-inverts
/// from scratch every `refactor_period` updates.
pub fn apply_step(
    state: &mut SepState,
    problem: &SepProblem,
    i: usize,
    delta: f64,
    params: &SepParams,
) -> Result<(), SepError> {
    state.iter += 1;
    if delta == 0.0 {
        return Ok(());
    }
    let vii = state.v.get(i, i);
    let growth = 1.0 + delta * vii;
    linalg::rank1_update_inverse_in_place(&mut state.v, i, delta)?;
    state.d[i] += delta;
    state.log_det += growth.ln();
    state.since_refactor += 1;
    if state.since_refactor >= params.refactor_period_for(problem.n()) {
        refactor(state, problem)?;
    }
    Ok(())
}

fn refactor(state: &mut SepState, problem: &SepProblem) -> Result<(), SepError> {
    let chol = Cholesky::factor(&problem.q.add_diag(&state.d)).map_err(|source| SepError::Drift {
        iter: state.iter,
        source,
    })?;
    state.v = chol.inverse();
    state.log_det = chol.log_det();
    state.since_refactor = 0;
    Ok(())
}

/// Shrinks σ when the subgradient `s` is small relative to `‖β‖₂`. Returns
/// whether σ changed.
pub fn update_sigma(state: &mut SepState, problem: &SepProblem, params: &SepParams, s: &[f64]) -> bool {
    let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    let b_norm = problem.beta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if s_norm / b_norm <= params.subg_tol {
        let next = (params.sig_upd * state.sigma).max(params.sml_sig);
        let changed = next != state.sigma;
        state.sigma = next;
        changed
    } else {
        false
    }
}

/// Result of a separation solve, on the caller's scale.
#[derive(Debug, Clone)]
pub struct SepResult {
    /// Strictly feasible: `Q + diag(d) ≻ 0`.
    pub d: Vec<f64>,
    /// `Σ g_i(d_i)`.
    pub objective: f64,
    pub iterations: usize,
    /// Final barrier weight (normalized scale).
    pub sigma: f64,
}

/// Runs the coordinate method to `max_iter` or until the objective stalls
/// with σ at its floor.
pub fn solve_separation(
    problem: &SepProblem,
    params: &SepParams,
    warm: Option<&[f64]>,
) -> Result<SepResult, SepError> {
    params.validate()?;
    let n = problem.n();
    let max_iter = params.max_iter_for(n);
    let mut state = init_state(problem, warm)?;
    state.sigma = state.sigma.max(params.sml_sig);
    let mut checkpoint = state.d.clone();
    let mut window_obj = problem.objective(&state.d);
    let mut drifts = 0;

    let mut s = min_norm_subgradient(&state, problem);
    while state.iter < max_iter {
        let i = argmax_abs(&s);
        let delta = step_for(&state, problem, i);
        let sane = state.v.get(i, i) > 0.0 && delta.is_finite();
        let outcome = if sane {
            apply_step(&mut state, problem, i, delta, params)
        } else {
            Err(SepError::Drift {
                iter: state.iter,
                source: LinalgError::NotPositiveDefinite {
                    pivot: i,
                    value: state.v.get(i, i),
                },
            })
        };
        match outcome {
            Ok(()) => {}
            Err(SepError::Drift { .. }) => {
                // Restart from the last certified iterate; give up after a
                // second failure and return that iterate.
                let (iter, sigma) = (state.iter, state.sigma);
                state = SepState::at(problem, checkpoint.clone(), sigma)?;
                state.iter = iter;
                drifts += 1;
                if drifts > 1 {
                    break;
                }
                refresh_subgradient(&state, problem, &mut s);
                continue;
            }
            Err(e) => return Err(e),
        }
        if state.since_refactor == 0 {
            checkpoint.clone_from(&state.d);
        }
        refresh_subgradient(&state, problem, &mut s);
        if update_sigma(&mut state, problem, params, &s) {
            refresh_subgradient(&state, problem, &mut s);
        }
        if state.iter % n == 0 {
            let obj = problem.objective(&state.d);
            let improvement = (window_obj - obj) / obj.abs().max(1.0);
            window_obj = obj;
            if state.sigma <= params.sml_sig && improvement < params.smll_prgrss {
                break;
            }
        }
    }

    // The Sherman–Morrison iterate is feasible in exact arithmetic; certify it.
    let d = if Cholesky::factor(&problem.q.add_diag(&state.d)).is_ok() {
        state.d
    } else {
        checkpoint
    };
    let d: Vec<f64> = d.iter().map(|v| v * problem.scale).collect();
    Ok(SepResult {
        objective: problem.objective(&d),
        d,
        iterations: state.iter,
        sigma: state.sigma,
    })
}

fn refresh_subgradient(state: &SepState, problem: &SepProblem, s: &mut [f64]) {
    let sigma = state.sigma;
    for (j, sj) in s.iter_mut().enumerate() {
        *sj = min_norm_component(
            state.d[j],
            sigma * state.v.get(j, j),
            problem.alpha[j],
            problem.beta[j],
        );
    }
}

/// Violation of the diagonal cut for `d` at `(x̄, v̄)`:
/// `(x̄ᵀQx̄ − v̄) − Σ g_i(d_i)`. Positive means the cut separates the point.
pub fn cut_violation(d: &[f64], alpha: &[f64], beta: &[f64], xbar: &[f64], vbar: f64, q: &SymMatrix) -> f64 {
    q.quad_form(xbar) - vbar - sep_objective(alpha, beta, d)
}
