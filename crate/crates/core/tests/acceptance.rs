use std::path::PathBuf;
use std::time::Instant;

use diagcut::cutloop::{run_augmented_loop, run_cutting_loop, LoopParams};
use diagcut::envelopes::{build_envelope, VarSet};
use diagcut::instances::{boxqp_record, gap_closed, gen_integer_qp, gen_sep_instance, import_spar, Instance};
use diagcut::linalg::SymMatrix;
use diagcut::separation::{
    apply_step, init_state, solve_separation, step_length, SepParams, SepProblem, SepState,
};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn dense(q: &SymMatrix, d: &[f64]) -> DMatrix<f64> {
    let n = q.n();
    DMatrix::from_fn(n, n, |i, j| q.get(i, j) + if i == j { d[i] } else { 0.0 })
}

fn eig_min(m: DMatrix<f64>) -> (f64, Vec<f64>) {
    let e = SymmetricEigen::new(m);
    let k = e.eigenvalues.imin();
    (e.eigenvalues[k], e.eigenvectors.column(k).iter().copied().collect())
}

fn lambda_min(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.min()
}

fn g(alpha: f64, beta: f64, t: f64) -> f64 {
    if t < 0.0 {
        alpha * t
    } else {
        beta * t
    }
}

fn g_slope(alpha: f64, beta: f64, t: f64) -> f64 {
    if t < 0.0 {
        alpha
    } else {
        beta
    }
}

/// Smallest Ritz pair of `Q + diag(d)` from a short Lanczos run with full
/// reorthogonalization, warm-started at the previous eigenvector.
struct Lanczos {
    basis: Vec<Vec<f64>>,
    w: Vec<f64>,
}

impl Lanczos {
    fn new(n: usize, steps: usize) -> Self {
        Self {
            basis: vec![vec![0.0; n]; steps.min(n)],
            w: vec![0.0; n],
        }
    }

    fn min_pair(&mut self, q: &[f64], d: &[f64], u: &mut [f64]) -> f64 {
        let n = d.len();
        let k = self.basis.len();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.basis[0].iter_mut().zip(u.iter()).for_each(|(b, v)| *b = v / norm);
        let mut alphas = Vec::with_capacity(k);
        let mut betas = Vec::with_capacity(k);
        for j in 0..k {
            let (done, rest) = self.basis.split_at_mut(j + 1);
            let cur = &done[j];
            for i in 0..n {
                let row = &q[i * n..(i + 1) * n];
                self.w[i] = row.iter().zip(cur).map(|(a, b)| a * b).sum::<f64>() + d[i] * cur[i];
            }
            alphas.push(self.w.iter().zip(cur).map(|(x, y)| x * y).sum::<f64>());
            for b in done.iter() {
                let c: f64 = self.w.iter().zip(b).map(|(x, y)| x * y).sum();
                self.w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            let beta = self.w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if j + 1 == k || beta < 1e-12 {
                break;
            }
            betas.push(beta);
            rest[0].iter_mut().zip(&self.w).for_each(|(b, x)| *b = x / beta);
        }
        let m = alphas.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alphas[i]
            } else if i + 1 == j {
                betas[i]
            } else if j + 1 == i {
                betas[j]
            } else {
                0.0
            }
        });
        let (lam, y) = eig_min(t);
        u.iter_mut().for_each(|v| *v = 0.0);
        for (c, b) in y.iter().zip(&self.basis) {
            u.iter_mut().zip(b).for_each(|(x, v)| *x += c * v);
        }
        let un = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= un);
        lam
    }
}

/// Projected subgradient on `F(d) = Σ g_i(d_i + t(d))`, where
/// `t(d) = max(0, −λ_min(Q + diag d))` moves `d` back onto the PSD boundary
/// along the uniform diagonal direction. Steps `1/k`; the best iterate is
/// re-evaluated with a dense eigensolver every 500 steps and at the end.
fn subgradient_reference(p: &SepProblem, iters: usize) -> f64 {
    let n = p.n();
    let q = p.q().as_slice();
    let (alpha, beta) = (p.alpha(), p.beta());
    let value = |d: &[f64], t: f64| -> f64 { (0..n).map(|i| g(alpha[i], beta[i], d[i] + t)).sum() };
    let exact = |d: &[f64]| -> f64 {
        let t = (-lambda_min(dense(p.q(), d))).max(0.0);
        value(d, t)
    };
    let mut d = vec![(-lambda_min(dense(p.q(), &vec![0.0; n]))).max(0.0) + 0.1; n];
    let mut u: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.37).sin()).collect();
    let mut best_d = d.clone();
    let mut best_approx = f64::INFINITY;
    let mut best_exact = exact(&d);
    let mut lanczos = Lanczos::new(n, 8);
    for k in 1..=iters {
        let lam = lanczos.min_pair(q, &d, &mut u);
        let t = (-lam).max(0.0);
        let f = value(&d, t);
        if f < best_approx {
            best_approx = f;
            best_d.clone_from(&d);
        }
        let slopes: Vec<f64> = (0..n).map(|i| g_slope(alpha[i], beta[i], d[i] + t)).collect();
        let total: f64 = if t > 0.0 { slopes.iter().sum() } else { 0.0 };
        let step = 1.0 / k as f64;
        for i in 0..n {
            d[i] -= step * (slopes[i] - total * u[i] * u[i]);
        }
        if k % 500 == 0 || k == iters {
            best_exact = best_exact.min(exact(&best_d));
        }
    }
    best_exact
}

/// Certified lower bound from the dual `max −⟨Q, X⟩` over `X ⪰ 0`,
/// `α ≤ diag X ≤ β`, with `X = VVᵀ` optimized row by row.
fn dual_lower_bound(p: &SepProblem) -> f64 {
    let n = p.n();
    let q = p.q();
    let (alpha, beta) = (p.alpha(), p.beta());
    let r = ((2.0 * n as f64).sqrt().ceil() as usize + 1).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
            let nr = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let rho = (0.5 * (alpha[i] + beta[i])).sqrt();
            row.iter_mut().for_each(|x| *x *= rho / nr);
            row
        })
        .collect();
    let bound = |v: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = v[i].iter().zip(&v[j]).map(|(a, b)| a * b).sum();
                s += q.get(i, j) * dot;
            }
        }
        -s
    };
    let mut qv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..r).map(|c| (0..n).map(|j| q.get(i, j) * v[j][c]).sum()).collect())
        .collect();
    let mut last = f64::NEG_INFINITY;
    for sweep in 0..20_000 {
        for i in 0..n {
            let qii = q.get(i, i);
            let w: Vec<f64> = (0..r).map(|c| qv[i][c] - qii * v[i][c]).collect();
            let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let (lo, hi) = (alpha[i].sqrt(), beta[i].sqrt());
            let phi = |rho: f64| qii * rho * rho - 2.0 * rho * wn;
            let rho = if qii > 0.0 {
                (wn / qii).clamp(lo, hi)
            } else if phi(lo) <= phi(hi) {
                lo
            } else {
                hi
            };
            let dir: Vec<f64> = if wn > 0.0 {
                w.iter().map(|x| -x / wn).collect()
            } else {
                let nr = v[i].iter().map(|x| x * x).sum::<f64>().sqrt();
                v[i].iter().map(|x| x / nr).collect()
            };
            let new: Vec<f64> = dir.iter().map(|x| rho * x).collect();
            let delta: Vec<f64> = new.iter().zip(&v[i]).map(|(a, b)| a - b).collect();
            for (j, row) in qv.iter_mut().enumerate() {
                let qji = q.get(j, i);
                row.iter_mut().zip(&delta).for_each(|(x, dl)| *x += qji * dl);
            }
            v[i] = new;
        }
        if sweep % 50 == 49 {
            let b = bound(&v);
            if b - last <= 1e-13 * (1.0 + b.abs()) {
                break;
            }
            last = b;
        }
    }
    bound(&v)
}

fn criterion_1() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_cert = f64::NEG_INFINITY;
    let mut summary = Vec::new();
    for n in [20, 50, 100] {
        let mut errs = Vec::new();
        for seed in 0..20 {
            let p = gen_sep_instance(n, seed).unwrap();
            let ours = solve_separation(&p, &SepParams::default(), None).unwrap().objective / p.scale();
            let reference = subgradient_reference(&p, 50_000);
            let dual = dual_lower_bound(&p);
            let rel = (ours - reference) / reference.abs();
            let cert = (ours - dual) / dual.abs();
            worst = worst.max(rel);
            worst_cert = worst_cert.max(cert);
            errs.push(cert);
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        summary.push(format!("n={n} mean certified gap {mean:.2e}"));
    }
    Outcome {
        pass: worst <= 1e-3 && worst_cert <= 1e-3,
        detail: format!(
            "max (ours - subgradient ref)/|ref| = {worst:.2e}, max (ours - dual)/|dual| = {worst_cert:.2e}; {}",
            summary.join(", ")
        ),
    }
}

fn criterion_2() -> Outcome {
    let p = gen_sep_instance(200, 0).unwrap();
    let start = Instant::now();
    let r = solve_separation(&p, &SepParams::default(), None).unwrap();
    let t = start.elapsed().as_secs_f64();
    Outcome {
        pass: t < 1.0,
        detail: format!("n=200 solved in {t:.3} s ({} steps, objective {:.6})", r.iterations, r.objective),
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..400 {
        if b - a <= 1e-14 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let sigma = 10f64.powf(rng.random_range(-5.0..0.0));
        let vii = 10f64.powf(rng.random_range(-2.0..2.0));
        let di = rng.random_range(-2.0..2.0);
        let alpha = rng.random_range(1e-3..=0.5);
        let beta = rng.random_range(0.5..=1.0);
        let phi = |t: f64| g(alpha, beta, di + t) - sigma * (t * vii).ln_1p();
        let lo = -1.0 / vii * (1.0 - 1e-13);
        let hi = (-di).max(sigma / alpha - 1.0 / vii).max(sigma / beta - 1.0 / vii) + 1.0;
        let reference = golden_section(phi, lo, hi);
        let ours = step_length(sigma, vii, di, alpha, beta);
        worst = worst.max((ours - reference).abs() / reference.abs().max(1.0));
    }
    Outcome {
        pass: worst <= 1e-7,
        detail: format!("1000 cases, max |closed form - golden section| = {worst:.2e}"),
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = 0;
    let mut min_margin = f64::INFINITY;
    for case in 0..100 {
        let n = rng.random_range(3..=25);
        let p = gen_sep_instance(n, 1000 + case).unwrap();
        let lmin = lambda_min(dense(p.q(), &vec![0.0; n]));
        let d: Vec<f64> = (0..n).map(|_| -lmin + rng.random_range(0.05..1.0)).collect();
        let state = SepState::at(&p, d.clone(), 1.0).unwrap();
        let i = rng.random_range(0..n);
        let edge = -1.0 / state.v.get(i, i);
        let shifted = |delta: f64| {
            let mut e = d.clone();
            e[i] += delta;
            lambda_min(dense(p.q(), &e))
        };
        let inside = shifted(edge + 1e-6);
        let outside = shifted(edge - 1e-6);
        min_margin = min_margin.min(inside).min(-outside);
        if !(inside > 1e-9 && outside < -1e-9) {
            failures += 1;
        }
    }
    Outcome {
        pass: failures == 0,
        detail: format!("100 states, {failures} failures, smallest |λ_min| at ±1e-6: {min_margin:.2e}"),
    }
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [20, 50, 100] {
        let p = gen_sep_instance(n, 500 + n as u64).unwrap();
        let params = SepParams {
            refactor_period: Some(5 * n),
            ..SepParams::default()
        };
        let mut state = init_state(&p, None).unwrap();
        for _ in 0..10 * n {
            let i = rng.random_range(0..n);
            let vii = state.v.get(i, i);
            let delta = if rng.random_bool(0.5) {
                -rng.random_range(0.0..0.5) / vii
            } else {
                rng.random_range(0.0..1.0)
            };
            apply_step(&mut state, &p, i, delta, &params).unwrap();
            let m = dense(p.q(), &state.d);
            let v = DMatrix::from_fn(n, n, |a, b| state.v.get(a, b));
            let r = v * m - DMatrix::<f64>::identity(n, n);
            let norm = (0..n)
                .map(|a| r.row(a).iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            worst = worst.max(norm);
        }
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("n in {{20, 50, 100}}, 10n updates each, max ||V(Q+D) - I||_inf = {worst:.2e}"),
    }
}

fn random_set(rng: &mut ChaCha8Rng) -> VarSet {
    match rng.random_range(0..4) {
        0 => {
            let lo = rng.random_range(-3.0..1.0);
            VarSet::interval(lo, lo + rng.random_range(0.5..3.0)).unwrap()
        }
        1 => {
            let k = rng.random_range(2..=5);
            VarSet::finite((0..k).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
        }
        2 => {
            let lo = rng.random_range(-3..=0);
            VarSet::integer_range(lo, lo + rng.random_range(1..=4)).unwrap()
        }
        _ => {
            let a = rng.random_range(-3.0..-1.0);
            let b = a + rng.random_range(0.2..1.0);
            let c = b + rng.random_range(0.3..1.5);
            VarSet::interval_union(vec![(a, b), (c, c + rng.random_range(0.2..1.5))]).unwrap()
        }
    }
}

fn sample(set: &VarSet, rng: &mut ChaCha8Rng) -> f64 {
    match set {
        VarSet::Interval { lo, hi } => match rng.random_range(0..10) {
            0 => *lo,
            1 => *hi,
            _ => rng.random_range(*lo..=*hi),
        },
        VarSet::FiniteSet { values } => values[rng.random_range(0..values.len())],
        VarSet::IntegerRange { lo, hi } => rng.random_range(*lo..=*hi) as f64,
        VarSet::IntervalUnion { pieces } => {
            let (a, b) = pieces[rng.random_range(0..pieces.len())];
            rng.random_range(a..=b)
        }
    }
}

fn mixed_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=15);
    let q = SymMatrix::from_upper_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q_lin = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sets = (0..n).map(|_| random_set(&mut rng)).collect();
    Instance::new(format!("mixed-{seed}"), q, q_lin, sets).unwrap()
}

fn criterion_6() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut cuts = 0;
    for seed in 0..20 {
        let inst = mixed_instance(600 + seed);
        let n = inst.n();
        let report = run_cutting_loop(&inst, &LoopParams::default()).unwrap();
        let envs: Vec<_> = inst.sets.iter().map(|s| build_envelope(s).unwrap()).collect();
        cuts += report.diag_cut_pool.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10_000 {
            let x: Vec<f64> = inst.sets.iter().map(|s| sample(s, &mut rng)).collect();
            let v = inst.q.quad_form(&x);
            for cut in &report.diag_cut_pool {
                let mut rhs = v;
                for i in 0..n {
                    let (l, u) = (envs[i].lower_value(x[i]), envs[i].upper_value(x[i]));
                    rhs += cut.d[i] * x[i] * x[i] - (cut.d[i] * l).max(cut.d[i] * u);
                }
                worst = worst.max((rhs - v) / (1.0 + v.abs()));
            }
        }
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("20 instances, {cuts} cuts, 10^4 points each, max relative violation {worst:.2e}"),
    }
}

/// Minimum of `xᵀQx + qᵀx` over the product of finite sets, by brute force.
fn brute_force(inst: &Instance) -> f64 {
    let pts: Vec<Vec<f64>> = inst
        .sets
        .iter()
        .map(|s| match s {
            VarSet::IntegerRange { lo, hi } => (*lo..=*hi).map(|v| v as f64).collect(),
            VarSet::FiniteSet { values } => values.clone(),
            other => panic!("not finite: {other:?}"),
        })
        .collect();
    let n = pts.len();
    let mut idx = vec![0usize; n];
    let mut best = f64::INFINITY;
    let mut x: Vec<f64> = pts.iter().map(|p| p[0]).collect();
    loop {
        let mut val = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += inst.q.get(i, j) * x[j];
            }
            val += x[i] * row + inst.q_lin[i] * x[i];
        }
        best = best.min(val);
        let mut k = 0;
        loop {
            if k == n {
                return best;
            }
            idx[k] += 1;
            if idx[k] < pts[k].len() {
                x[k] = pts[k][idx[k]];
                break;
            }
            idx[k] = 0;
            x[k] = pts[k][0];
            k += 1;
        }
    }
}

fn criterion_7() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for (k, n) in (4..=8).flat_map(|n| std::iter::repeat_n(n, 6)).enumerate() {
        let p = [0.2, 0.5, 0.8][k % 3];
        let inst = gen_integer_qp(n, p, 700 + k as u64).unwrap();
        let opt = brute_force(&inst);
        let report = run_cutting_loop(&inst, &LoopParams::default()).unwrap();
        worst = worst.max((report.bound - opt) / (1.0 + opt.abs()));
        count += 1;
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("{count} instances, max (bound - OPT)/(1+|OPT|) = {worst:.2e}"),
    }
}

fn criterion_8() -> Outcome {
    let params = LoopParams {
        max_outer_iter: 100,
        ..LoopParams::default()
    };
    let mut its = Vec::new();
    let mut rows = Vec::new();
    for n in [30, 50] {
        for p in [0.2, 0.5, 0.8] {
            for seed in 0..3 {
                let inst = gen_integer_qp(n, p, 800 + seed).unwrap();
                let r = run_cutting_loop(&inst, &params).unwrap();
                its.push(r.iterations);
                rows.push(format!("{n}/{p}/{seed}:{}", r.iterations));
            }
        }
    }
    let max = *its.iter().max().unwrap();
    let mut sorted = its.clone();
    sorted.sort_unstable();
    let median = sorted[sorted.len() / 2];
    Outcome {
        pass: max <= 30,
        detail: format!("{} runs, median #it {median} (reported: below 15), max {max} [{}]", its.len(), rows.join(" ")),
    }
}

fn spar_dir() -> Option<PathBuf> {
    if let Some(dir) = std::env::var_os("DIAGCUT_SPAR_DIR") {
        return Some(PathBuf::from(dir));
    }
    let bundled = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/spar");
    bundled.is_dir().then_some(bundled)
}

fn criterion_9() -> Outcome {
    let names = ["spar020-100-1", "spar030-060-1", "spar030-080-2"];
    let Some(dir) = spar_dir() else {
        return Outcome {
            pass: false,
            detail: "spar instance files not available (set DIAGCUT_SPAR_DIR or add data/spar)".into(),
        };
    };
    let params = LoopParams {
        max_outer_iter: 1000,
        time_limit: Some(110.0),
        ..LoopParams::default()
    };
    let mut pass = true;
    let mut rows = Vec::new();
    for name in names {
        let path = dir.join(format!("{name}.in"));
        let Ok(text) = std::fs::read_to_string(&path) else {
            pass = false;
            rows.push(format!("{name}: missing {}", path.display()));
            continue;
        };
        let inst = import_spar(&text, name).unwrap();
        let rec = boxqp_record(name).unwrap();
        let start = Instant::now();
        let r = run_augmented_loop(&inst, &params).unwrap();
        let t = start.elapsed().as_secs_f64();
        let closed = gap_closed(rec.rlt, rec.opt, r.bound).unwrap();
        let ok = closed >= rec.reported_gap_closed - 7.0 && t < 120.0;
        pass &= ok;
        rows.push(format!(
            "{name}: {closed:.2}% (reported {:.2}%) in {t:.1} s",
            rec.reported_gap_closed
        ));
    }
    Outcome {
        pass,
        detail: rows.join(", "),
    }
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 separation accuracy", criterion_1),
        ("2 separation speed", criterion_2),
        ("3 closed-form step", criterion_3),
        ("4 inverse-diagonal feasibility boundary", criterion_4),
        ("5 rank-one update drift", criterion_5),
        ("6 cut validity", criterion_6),
        ("7 oracle dominance", criterion_7),
        ("8 iteration count", criterion_8),
        ("9 BoxQP gap closed", criterion_9),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {name}: {} [{:.1} s]", o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
