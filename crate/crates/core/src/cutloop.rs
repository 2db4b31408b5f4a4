//! The cutting-surface loop: alternate master solves with separation of
//! diagonal cuts, and optionally linear cuts from the lifted RLT set.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelopes::{build_envelope, EnvelopeError, EnvelopeModel};
use crate::instances::Instance;
use crate::linalg::{self, LinalgError, SymMatrix};
use crate::master::{
    solve_master, BarrierParams, CutOutcome, DiagCut, LinearCut, MasterError, MasterModel, MasterOptions,
};
use crate::projlp::{separate_projlp, LiftedRltSet, ProjLpError, RltBox};
use crate::separation::{cut_violation, solve_separation, SepError, SepParams, SepProblem};

#[derive(Debug, Error)]
pub enum LoopFailure {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("master solve failed: {0}")]
    Master(#[from] MasterError),
    #[error("separation failed: {0}")]
    Separation(#[from] SepError),
    #[error("linear cut separation failed: {0}")]
    ProjLp(#[from] ProjLpError),
}

/// A loop failure together with the best bound computed before it.
#[derive(Debug, Error)]
#[error("{source} (after {iterations} iterations, last bound {last_bound:?})")]
pub struct LoopError {
    pub last_bound: Option<f64>,
    pub iterations: usize,
    #[source]
    pub source: LoopFailure,
}

#[derive(Debug, Clone)]
pub struct LoopParams {
    pub max_outer_iter: usize,
    pub violation_tol: f64,
    /// Scale `violation_tol` by `1 + |v̄|`.
    pub relative_violation: bool,
    pub enable_projlp: bool,
    pub enable_psd_split: bool,
    pub sep_params: SepParams,
    pub barrier: BarrierParams,
    /// Wall-clock limit in seconds.
    pub time_limit: Option<f64>,
    /// Stop once the bound has improved by no more than the violation
    /// tolerance over this many consecutive iterations.
    pub stall_iters: usize,
}

impl Default for LoopParams {
    fn default() -> Self {
        Self {
            max_outer_iter: 30,
            violation_tol: 1e-6,
            relative_violation: true,
            enable_projlp: false,
            enable_psd_split: false,
            sep_params: SepParams::default(),
            barrier: BarrierParams::default(),
            time_limit: None,
            stall_iters: 3,
        }
    }
}

impl LoopParams {
    pub fn validate(&self) -> Result<(), LoopFailure> {
        if self.max_outer_iter == 0 {
            return Err(LoopFailure::InvalidParams("max_outer_iter must be positive".into()));
        }
        if !(self.violation_tol > 0.0) {
            return Err(LoopFailure::InvalidParams("violation_tol must be positive".into()));
        }
        if self.enable_projlp && !self.enable_psd_split {
            return Err(LoopFailure::InvalidParams(
                "linear cuts need the PSD split (tau variable)".into(),
            ));
        }
        if matches!(self.time_limit, Some(t) if !(t > 0.0)) {
            return Err(LoopFailure::InvalidParams("time_limit must be positive".into()));
        }
        self.sep_params.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// No cut family separates the master solution.
    NoViolatedCut,
    /// Cuts still separate but the bound no longer moves.
    Stalled,
    MaxIterations,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound: f64,
    /// Number of master solves.
    pub iterations: usize,
    pub diag_cuts: usize,
    pub linear_cuts: usize,
    pub sep_time: f64,
    pub sep_time_fraction: f64,
    pub total_time: f64,
    /// Master bound after each iteration.
    pub trace: Vec<f64>,
    pub termination: Termination,
    /// Diagonal cuts in the final master, the initial cut first.
    pub diag_cut_pool: Vec<DiagCut>,
    pub linear_cut_pool: Vec<LinearCut>,
}

/// `λe` with `λ = 1.05·|λ_min(Q)| + 1e-8·‖Q‖₂` for indefinite `Q`, else
/// `λ = 1e-8·‖Q‖₂`.
pub fn initial_cut(q: &SymMatrix) -> Result<DiagCut, LinalgError> {
    let lmin = linalg::min_eigenvalue(q)?;
    let norm = linalg::spectral_norm(q)?;
    let lambda = if lmin < 0.0 {
        1.05 * lmin.abs() + 1e-8 * norm
    } else {
        1e-8 * norm
    };
    Ok(DiagCut {
        d: vec![lambda; q.n()],
    })
}

/// Runs the loop with the cut families selected in `params`.
pub fn run_cutting_loop(instance: &Instance, params: &LoopParams) -> Result<BoundReport, LoopError> {
    let mut last_bound = None;
    let mut iterations = 0;
    run_inner(instance, params, &mut last_bound, &mut iterations).map_err(|source| LoopError {
        last_bound,
        iterations,
        source,
    })
}

/// Runs the loop with the PSD-split master and linear cuts enabled.
pub fn run_augmented_loop(instance: &Instance, params: &LoopParams) -> Result<BoundReport, LoopError> {
    let params = LoopParams {
        enable_projlp: true,
        enable_psd_split: true,
        ..params.clone()
    };
    run_cutting_loop(instance, &params)
}

fn run_inner(
    instance: &Instance,
    params: &LoopParams,
    last_bound: &mut Option<f64>,
    iterations: &mut usize,
) -> Result<BoundReport, LoopFailure> {
    params.validate()?;
    let start = Instant::now();
    let envelopes: Vec<EnvelopeModel> = instance
        .sets
        .iter()
        .map(build_envelope)
        .collect::<Result<_, _>>()?;
    let mut model = MasterModel::new(
        instance.q.clone(),
        instance.q_lin.clone(),
        envelopes.clone(),
        MasterOptions {
            psd_split: params.enable_psd_split,
        },
    )?;
    let lifted = if params.enable_projlp {
        let split = model.psd_split().expect("split enabled");
        let (lo, hi): (Vec<f64>, Vec<f64>) = envelopes.iter().map(|e| (e.lo, e.hi)).unzip();
        let rlt_box = RltBox::new(lo, hi)?;
        Some(LiftedRltSet::from_split(split.plus.clone(), split.minus.clone(), rlt_box)?)
    } else {
        None
    };
    model.add_diag_cut(initial_cut(&instance.q)?)?;

    let mut trace = Vec::new();
    let mut sep_time = 0.0;
    let mut warm: Option<Vec<f64>> = None;
    let mut linear_cuts = 0;
    let mut termination = Termination::MaxIterations;
    for _ in 0..params.max_outer_iter {
        if let Some(limit) = params.time_limit {
            if start.elapsed().as_secs_f64() >= limit && !trace.is_empty() {
                termination = Termination::TimeLimit;
                break;
            }
        }
        let sol = solve_master(&model, &params.barrier)?;
        *iterations += 1;
        trace.push(sol.bound);
        *last_bound = Some(last_bound.map_or(sol.bound, |b: f64| b.max(sol.bound)));
        let tol = if params.relative_violation {
            params.violation_tol * (1.0 + sol.v.abs())
        } else {
            params.violation_tol
        };

        let sep_start = Instant::now();
        let mut alpha = Vec::with_capacity(instance.n());
        let mut beta = Vec::with_capacity(instance.n());
        for (env, &x) in envelopes.iter().zip(&sol.x) {
            let (a, b) = env.sep_coefficients(x)?;
            alpha.push(a);
            beta.push(b);
        }
        let problem = SepProblem::new(&instance.q, &alpha, &beta, params.sep_params.beta_floor)?;
        let res = solve_separation(&problem, &params.sep_params, warm.as_deref())?;
        let d = pull_back_flat(&instance.q, res.d.clone(), &beta, params.sep_params.beta_floor);
        let violation = cut_violation(&d, &alpha, &beta, &sol.x, sol.v, &instance.q);
        let mut added = false;
        if violation > tol {
            added = model.add_diag_cut(DiagCut { d })? == CutOutcome::Added;
        }
        warm = Some(res.d);

        if let (Some(set), Some(tau)) = (&lifted, sol.tau) {
            let x: Vec<f64> = sol
                .x
                .iter()
                .zip(&envelopes)
                .map(|(v, e)| v.clamp(e.lo, e.hi))
                .collect();
            if let Some(cut) = separate_projlp(set, &x, tau, sol.v, tol)? {
                if model.add_linear_cut(cut)? == CutOutcome::Added {
                    linear_cuts += 1;
                    added = true;
                }
            }
        }
        sep_time += sep_start.elapsed().as_secs_f64();
        if !added {
            termination = Termination::NoViolatedCut;
            break;
        }
        let k = params.stall_iters;
        if k > 0 && trace.len() > k {
            let recent = trace[trace.len() - k..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let before = trace[..trace.len() - k].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if recent - before <= params.violation_tol * (1.0 + before.abs()) {
                termination = Termination::Stalled;
                break;
            }
        }
    }
    let total_time = start.elapsed().as_secs_f64();
    Ok(BoundReport {
        bound: last_bound.expect("at least one master solve"),
        iterations: *iterations,
        diag_cuts: model.diag_cuts().len(),
        linear_cuts,
        sep_time,
        sep_time_fraction: if total_time > 0.0 { sep_time / total_time } else { 0.0 },
        total_time,
        trace,
        termination,
        diag_cut_pool: model.diag_cuts().to_vec(),
        linear_cut_pool: model.linear_cuts().to_vec(),
    })
}

/// Coordinates whose `β_i` is at the floor cost nothing to raise, so the
/// barrier drives them to very large values. Each is moved back to just above
/// the PSD boundary `d_i − 1/V_ii` (but not below zero), which can only lower
/// `Σ g_i(d_i)` and keeps the cut well scaled. `d` is returned unchanged if the
/// moved point cannot be certified positive definite.
fn pull_back_flat(q: &SymMatrix, d: Vec<f64>, beta: &[f64], floor: f64) -> Vec<f64> {
    let flat: Vec<usize> = (0..d.len()).filter(|&i| beta[i] <= floor && d[i] > 0.0).collect();
    if flat.is_empty() {
        return d;
    }
    let scale = q.max_abs().max(f64::MIN_POSITIVE);
    let Ok(mut v) = linalg::invert_pd(&q.add_diag(&d)) else {
        return d;
    };
    let mut moved = d.clone();
    for i in flat {
        let vii = v.get(i, i);
        if !(vii > 0.0) {
            return d;
        }
        let boundary = moved[i] - 1.0 / vii;
        let margin = 1e-2 * boundary.abs().max(scale);
        let delta = (boundary + margin - moved[i]).max(-moved[i]);
        if delta < 0.0 {
            if linalg::rank1_update_inverse_in_place(&mut v, i, delta).is_err() {
                return d;
            }
            moved[i] += delta;
        }
    }
    if linalg::is_positive_definite(&q.add_diag(&moved)) {
        moved
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelopes::VarSet;
    use crate::instances::{gen_integer_qp, local_upper_bound, oracle_enumerate};

    #[test]
    fn initial_cut_values() {
        let q = SymMatrix::from_diag(&[-2.0, 1.0]);
        let c = initial_cut(&q).unwrap();
        assert!((c.d[0] - 2.1).abs() < 1e-7);
        let c = initial_cut(&SymMatrix::identity(3)).unwrap();
        assert!(c.d.iter().all(|v| *v > 0.0 && *v < 1e-7));
        let q = SymMatrix::from_diag(&[-1.0, -1.0]);
        let c = initial_cut(&q).unwrap();
        let shifted = q.add_diag(&c.d);
        assert!((linalg::min_eigenvalue(&shifted).unwrap() - 0.05).abs() < 1e-7);
    }

    #[test]
    fn convex_instance_stops_after_one_solve() {
        let inst = Instance::new(
            "c",
            SymMatrix::identity(2),
            vec![-1.0, -3.0],
            vec![VarSet::interval(0.0, 1.0).unwrap(); 2],
        )
        .unwrap();
        let r = run_cutting_loop(&inst, &LoopParams::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.termination, Termination::NoViolatedCut);
        assert!((r.bound + 2.25).abs() < 1e-6);
    }

    #[test]
    fn integer_instance_bound_below_optimum() {
        let inst = gen_integer_qp(6, 0.5, 9).unwrap();
        let opt = oracle_enumerate(&inst, 1_000_000).unwrap().value;
        let r = run_cutting_loop(&inst, &LoopParams::default()).unwrap();
        assert!(r.bound <= opt + 1e-6 * (1.0 + opt.abs()), "{} > {opt}", r.bound);
        assert!(r.iterations <= 30);
        for w in r.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * (1.0 + w[0].abs()));
        }
    }

    #[test]
    fn augmented_loop_on_box_instance() {
        let inst = Instance::new(
            "b",
            SymMatrix::from_rows(&[
                vec![-1.0, 2.0, -0.5],
                vec![2.0, -2.0, 1.0],
                vec![-0.5, 1.0, 0.5],
            ])
            .unwrap(),
            vec![0.3, -0.2, 0.1],
            vec![VarSet::interval(0.0, 1.0).unwrap(); 3],
        )
        .unwrap();
        let ub = local_upper_bound(&inst, 50, 1).value;
        let plain = run_cutting_loop(&inst, &LoopParams::default()).unwrap();
        let aug = run_augmented_loop(&inst, &LoopParams::default()).unwrap();
        assert!(aug.bound <= ub + 1e-6);
        assert!(aug.bound >= plain.bound - 1e-5 * (1.0 + plain.bound.abs()));
    }

    #[test]
    fn pull_back_moves_flat_coordinates_to_boundary() {
        let q = SymMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let d = pull_back_flat(&q, vec![1e6, 2.0], &[1e-12, 0.6], 1e-8);
        assert!((d[0] - 0.51).abs() < 1e-9, "{d:?}");
        assert_eq!(d[1], 2.0);
        assert!(linalg::is_positive_definite(&q.add_diag(&d)));
        let kept = pull_back_flat(&q, vec![1e6, 2.0], &[0.3, 0.6], 1e-8);
        assert_eq!(kept, vec![1e6, 2.0]);
        let small = pull_back_flat(&SymMatrix::identity(2), vec![0.5, 0.0], &[0.0, 0.0], 1e-8);
        assert_eq!(small, vec![0.0, 0.0]);
    }

    #[test]
    fn projlp_requires_split() {
        let inst = gen_integer_qp(3, 0.5, 1).unwrap();
        let params = LoopParams {
            enable_projlp: true,
            ..LoopParams::default()
        };
        let err = run_cutting_loop(&inst, &params).unwrap_err();
        assert!(matches!(err.source, LoopFailure::InvalidParams(_)));
        assert_eq!(err.last_bound, None);
    }
}
