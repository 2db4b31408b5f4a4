//! Problem instances: data model, canonical JSON format, spar import, random
//! generators, ground-truth oracles and gap metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelopes::{EnvelopeError, VarSet};
use crate::linalg::{self, LinalgError, SymMatrix};
use crate::separation::{SepError, SepParams, SepProblem};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("enumeration needs {needed} points, budget is {budget}")]
    BudgetExceeded { needed: f64, budget: u64 },
    #[error("set {index} is not finite")]
    NotFinite { index: usize },
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Sep(#[from] SepError),
}

/// `min xᵀQx + qᵀx  s.t.  x_i ∈ S_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub name: String,
    pub q: SymMatrix,
    pub q_lin: Vec<f64>,
    pub sets: Vec<VarSet>,
    pub provenance: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    name: String,
    n: usize,
    q: Vec<f64>,
    #[serde(rename = "Q")]
    q_matrix: Vec<f64>,
    sets: Vec<VarSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

impl Instance {
    pub fn new(
        name: impl Into<String>,
        q: SymMatrix,
        q_lin: Vec<f64>,
        sets: Vec<VarSet>,
    ) -> Result<Self, InstanceError> {
        let inst = Self {
            name: name.into(),
            q,
            q_lin,
            sets,
            provenance: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = Some(provenance.into());
        self
    }

    pub fn n(&self) -> usize {
        self.q.n()
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        let n = self.q.n();
        if n == 0 {
            return Err(InstanceError::Invalid("n must be positive".into()));
        }
        if self.q_lin.len() != n || self.sets.len() != n {
            return Err(InstanceError::Invalid(format!(
                "n = {n} but |q| = {} and |sets| = {}",
                self.q_lin.len(),
                self.sets.len()
            )));
        }
        if !self.q.is_finite() || self.q_lin.iter().any(|v| !v.is_finite()) {
            return Err(InstanceError::Invalid("non-finite data".into()));
        }
        for s in &self.sets {
            s.validate()?;
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.q.quad_form(x) + self.q_lin.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.sets.iter().map(|s| (s.lower(), s.upper())).collect()
    }

    pub fn to_json(&self) -> Result<String, InstanceError> {
        let file = InstanceFile {
            name: self.name.clone(),
            n: self.n(),
            q: self.q_lin.clone(),
            q_matrix: self.q.as_slice().to_vec(),
            sets: self.sets.clone(),
            provenance: self.provenance.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        let file: InstanceFile = serde_json::from_str(text)?;
        if file.q_matrix.len() != file.n * file.n {
            return Err(InstanceError::Invalid(format!(
                "Q has {} entries, expected {}",
                file.q_matrix.len(),
                file.n * file.n
            )));
        }
        let q = SymMatrix::from_row_major(file.n, file.q_matrix)?;
        let mut inst = Self::new(file.name, q, file.q, file.sets)?;
        inst.provenance = file.provenance;
        Ok(inst)
    }
}

/// Exact or heuristic optimum of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: f64,
    pub argmin: Vec<f64>,
    pub exact: bool,
}

/// Random separation problem: symmetrized Gaussian `Q` with `‖Q‖₂ = 1`,
/// `α ~ U[0, 0.5]`, `β ~ U[0.5, 1]`.
pub fn gen_sep_instance(n: usize, seed: u64) -> Result<SepProblem, InstanceError> {
    if n < 2 {
        return Err(InstanceError::Invalid("n must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    let q = SymMatrix::from_upper_fn(n, |i, j| 0.5 * (g[i * n + j] + g[j * n + i]));
    let q = q.scaled(1.0 / linalg::spectral_norm(&q)?);
    let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=0.5)).collect();
    let beta: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..=1.0)).collect();
    Ok(SepProblem::new(&q, &alpha, &beta, SepParams::default().beta_floor)?)
}

/// Random integer QP: `Q = Σ μ_i v_i v_iᵀ` with the first `⌊p·n⌋` weights in
/// `[−1, 0]` and the rest in `[0, 1]`, unit `v_i` from `U[−1, 1]ⁿ`,
/// `q ~ U[−1, 1]ⁿ`, and `S_i = {−3, …, 3}`.
pub fn gen_integer_qp(n: usize, p: f64, seed: u64) -> Result<Instance, InstanceError> {
    if n < 2 {
        return Err(InstanceError::Invalid("n must be at least 2".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(InstanceError::Invalid(format!("p = {p} is not in [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_neg = (p * n as f64 + 1e-9).floor() as usize;
    let mut data = vec![0.0; n * n];
    for k in 0..n {
        let mu: f64 = if k < n_neg {
            -rng.random_range(0.0..=1.0)
        } else {
            rng.random_range(0.0..=1.0)
        };
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] += mu * v[i] * v[j];
            }
        }
    }
    let q = SymMatrix::from_upper_fn(n, |i, j| 0.5 * (data[i * n + j] + data[j * n + i]));
    let q_lin = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let sets = vec![VarSet::integer_range(-3, 3)?; n];
    Ok(Instance::new(format!("intqp-n{n}-p{p}-s{seed}"), q, q_lin, sets)?
        .with_provenance(format!("gen_integer_qp(n={n}, p={p}, seed={seed})")))
}

/// Random spar-style BoxQP text: each entry of `c` and of the upper triangle
/// of `Q` is nonzero with probability `density`, drawn from `{−50, …, 50}`.
pub fn gen_spar_text(n: usize, density: f64, seed: u64) -> Result<String, InstanceError> {
    if n < 1 {
        return Err(InstanceError::Invalid("n must be positive".into()));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(InstanceError::Invalid(format!("density {density} is not in [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> i64 {
        if rng.random::<f64>() < density {
            rng.random_range(-50..=50)
        } else {
            0
        }
    };
    let c: Vec<i64> = (0..n).map(|_| draw(&mut rng)).collect();
    let mut q = vec![0i64; n * n];
    for i in 0..n {
        for j in i..n {
            let v = draw(&mut rng);
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }
    let row = |vals: &[i64]| vals.iter().map(i64::to_string).collect::<Vec<_>>().join(" ");
    let mut text = format!("{n}\n{}\n", row(&c));
    for i in 0..n {
        text.push_str(&row(&q[i * n..(i + 1) * n]));
        text.push('\n');
    }
    Ok(text)
}

/// [`gen_spar_text`] parsed with [`import_spar`].
pub fn gen_boxqp(n: usize, density: f64, seed: u64) -> Result<Instance, InstanceError> {
    let text = gen_spar_text(n, density, seed)?;
    let mut inst = import_spar(&text, &format!("boxqp-n{n}-d{density}-s{seed}"))?;
    inst.provenance = Some(format!("gen_boxqp(n={n}, density={density}, seed={seed})"));
    Ok(inst)
}

struct Tokens<'a> {
    items: Vec<(usize, usize, &'a str)>,
    pos: usize,
    last: (usize, usize),
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        for (li, line) in text.lines().enumerate() {
            let mut col = 0;
            for piece in line.split_inclusive(char::is_whitespace) {
                let tok = piece.trim_end();
                if !tok.is_empty() {
                    items.push((li + 1, col + 1, tok));
                }
                col += piece.chars().count();
            }
        }
        let last = text.lines().count().max(1);
        Self {
            items,
            pos: 0,
            last: (last, 1),
        }
    }

    fn next_number(&mut self, what: &str) -> Result<f64, InstanceError> {
        let Some(&(line, column, tok)) = self.items.get(self.pos) else {
            return Err(InstanceError::Parse {
                line: self.last.0,
                column: self.last.1,
                message: format!("unexpected end of input, expected {what}"),
            });
        };
        self.pos += 1;
        tok.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| InstanceError::Parse {
                line,
                column,
                message: format!("expected {what}, found `{tok}`"),
            })
    }
}

/// Parses a spar BoxQP file: `n`, then `c` (n values), then `Q` (n×n, row
/// major), describing `max ½xᵀQx + cᵀx` over `[0, 1]ⁿ`. The result is the
/// equivalent minimization with `Q ← −Q/2` and `q ← −c`.
pub fn import_spar(text: &str, name: &str) -> Result<Instance, InstanceError> {
    let mut tokens = Tokens::new(text);
    let n_raw = tokens.next_number("dimension n")?;
    if n_raw < 1.0 || n_raw.fract() != 0.0 {
        let (line, column, _) = tokens.items[0];
        return Err(InstanceError::Parse {
            line,
            column,
            message: format!("dimension must be a positive integer, found {n_raw}"),
        });
    }
    let n = n_raw as usize;
    let c = (0..n)
        .map(|_| tokens.next_number("linear coefficient"))
        .collect::<Result<Vec<_>, _>>()?;
    let raw = (0..n * n)
        .map(|_| tokens.next_number("matrix entry"))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(&(line, column, tok)) = tokens.items.get(tokens.pos) {
        return Err(InstanceError::Parse {
            line,
            column,
            message: format!("trailing data `{tok}`"),
        });
    }
    let q = SymMatrix::from_upper_fn(n, |i, j| -0.25 * (raw[i * n + j] + raw[j * n + i]));
    let q_lin = c.iter().map(|v| -v).collect();
    let sets = vec![VarSet::interval(0.0, 1.0)?; n];
    Ok(Instance::new(name, q, q_lin, sets)?.with_provenance("spar"))
}

/// Exact optimum by enumerating `S_1 × … × S_n`, evaluating incrementally.
pub fn oracle_enumerate(instance: &Instance, budget: u64) -> Result<OracleResult, InstanceError> {
    let n = instance.n();
    let mut points = Vec::with_capacity(n);
    for (i, s) in instance.sets.iter().enumerate() {
        points.push(s.points().ok_or(InstanceError::NotFinite { index: i })?);
    }
    let needed: f64 = points.iter().map(|p| p.len() as f64).product();
    if needed > budget as f64 {
        return Err(InstanceError::BudgetExceeded { needed, budget });
    }
    let q = &instance.q;
    let ql = &instance.q_lin;
    let mut idx = vec![0usize; n];
    let mut x: Vec<f64> = points.iter().map(|p| p[0]).collect();
    let mut qx = q.mul_vec(&x);
    let mut val = instance.objective(&x);
    let mut best = val;
    let mut best_idx = idx.clone();
    let mut moves = 0u64;
    'outer: loop {
        // Odometer: advance the lowest digit that is not at its end.
        let mut k = 0;
        loop {
            if k == n {
                break 'outer;
            }
            if idx[k] + 1 < points[k].len() {
                break;
            }
            k += 1;
        }
        for j in 0..k {
            // Reset lower digits to their first point.
            let delta = points[j][0] - x[j];
            if delta != 0.0 {
                val += delta * (2.0 * qx[j] + delta * q.get(j, j) + ql[j]);
                for (r, qr) in qx.iter_mut().enumerate() {
                    *qr += delta * q.get(r, j);
                }
                x[j] = points[j][0];
            }
            idx[j] = 0;
        }
        idx[k] += 1;
        let delta = points[k][idx[k]] - x[k];
        val += delta * (2.0 * qx[k] + delta * q.get(k, k) + ql[k]);
        for (r, qr) in qx.iter_mut().enumerate() {
            *qr += delta * q.get(r, k);
        }
        x[k] = points[k][idx[k]];
        moves += 1;
        if moves % 65_536 == 0 {
            qx = q.mul_vec(&x);
            val = instance.objective(&x);
        }
        if val < best {
            best = val;
            best_idx.clone_from(&idx);
        }
    }
    let argmin: Vec<f64> = best_idx.iter().zip(&points).map(|(&i, p)| p[i]).collect();
    Ok(OracleResult {
        value: instance.objective(&argmin),
        argmin,
        exact: true,
    })
}

/// Minimizes `a·t² + b·t` over the set.
fn best_in_set(set: &VarSet, a: f64, b: f64) -> f64 {
    let f = |t: f64| a * t * t + b * t;
    let pick = |cands: &mut dyn Iterator<Item = f64>| {
        cands.fold((f64::NAN, f64::INFINITY), |(bt, bv), t| {
            let v = f(t);
            if v < bv {
                (t, v)
            } else {
                (bt, bv)
            }
        })
    };
    let vertex = if a > 0.0 { Some(-b / (2.0 * a)) } else { None };
    let pieces: Vec<(f64, f64)> = match set {
        VarSet::Interval { lo, hi } => vec![(*lo, *hi)],
        VarSet::IntervalUnion { pieces } => pieces.clone(),
        _ => {
            let pts = set.points().unwrap_or_default();
            return pick(&mut pts.into_iter()).0;
        }
    };
    let mut cands = Vec::with_capacity(3 * pieces.len());
    for (lo, hi) in pieces {
        cands.push(lo);
        cands.push(hi);
        if let Some(v) = vertex {
            cands.push(v.clamp(lo, hi));
        }
    }
    pick(&mut cands.into_iter()).0
}

/// Coordinate descent from `x` until no coordinate improves.
fn coordinate_descent(instance: &Instance, x: &mut [f64]) -> f64 {
    let n = instance.n();
    let q = &instance.q;
    let mut qx = q.mul_vec(x);
    for _ in 0..10_000 {
        let mut improved = false;
        for i in 0..n {
            let a = q.get(i, i);
            // f(x + (t − x_i)e_i) as a function of t, up to a constant.
            let b = 2.0 * (qx[i] - a * x[i]) + instance.q_lin[i];
            let t = best_in_set(&instance.sets[i], a, b);
            let old = a * x[i] * x[i] + b * x[i];
            let new = a * t * t + b * t;
            if new < old - 1e-12 * (1.0 + old.abs()) {
                let delta = t - x[i];
                for (r, qr) in qx.iter_mut().enumerate() {
                    *qr += delta * q.get(r, i);
                }
                x[i] = t;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    instance.objective(x)
}

/// Best coordinate-descent local minimum over random starts.
pub fn local_upper_bound(instance: &Instance, restarts: usize, seed: u64) -> OracleResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<OracleResult> = None;
    for r in 0..restarts.max(1) {
        let mut x: Vec<f64> = instance
            .sets
            .iter()
            .map(|s| {
                let (lo, hi) = (s.lower(), s.upper());
                let t = if r == 0 { 0.5 * (lo + hi) } else { rng.random_range(lo..=hi) };
                s.project(t)
            })
            .collect();
        let value = coordinate_descent(instance, &mut x);
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(OracleResult {
                value,
                argmin: x,
                exact: false,
            });
        }
    }
    best.expect("at least one restart")
}

/// `(UB − LB)/|UB| · 100`.
pub fn gap_metrics(ub: f64, lb: f64) -> Result<f64, InstanceError> {
    if ub == 0.0 {
        return Err(InstanceError::UndefinedMetric("gap with UB = 0"));
    }
    Ok((ub - lb) / ub.abs() * 100.0)
}

/// `(LB − RLT)/(OPT − RLT) · 100`.
pub fn gap_closed(rlt: f64, opt: f64, lb: f64) -> Result<f64, InstanceError> {
    if !(opt > rlt) {
        return Err(InstanceError::UndefinedMetric("gap closed needs OPT > RLT"));
    }
    Ok((lb - rlt) / (opt - rlt) * 100.0)
}

/// One row of the bundled BoxQP reference table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxQpRecord {
    pub instance: String,
    pub rlt: f64,
    pub opt: f64,
    pub reported_gap_closed: f64,
    pub reported_time: f64,
}

const BOXQP_TABLE: &str = include_str!("../data/boxqp_table.csv");

/// The bundled BoxQP table (RLT bound, optimum, reported gap closed and time).
pub fn boxqp_table() -> Vec<BoxQpRecord> {
    BOXQP_TABLE
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |k: usize| f[k].trim().parse::<f64>().expect("bundled table is well formed");
            BoxQpRecord {
                instance: f[0].trim().to_string(),
                rlt: num(1),
                opt: num(2),
                reported_gap_closed: num(3),
                reported_time: num(4),
            }
        })
        .collect()
}

pub fn boxqp_record(name: &str) -> Option<BoxQpRecord> {
    let stem = name.trim_end_matches(".in");
    boxqp_table().into_iter().find(|r| r.instance == stem)
}
