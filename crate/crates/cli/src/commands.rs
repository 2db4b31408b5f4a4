use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use diagcut::cutloop::{run_augmented_loop, run_cutting_loop, BoundReport, LoopParams, Termination};
use diagcut::instances::{
    boxqp_record, gap_closed, gen_boxqp, gen_integer_qp, gen_sep_instance, gen_spar_text, import_spar,
    local_upper_bound, oracle_enumerate, Instance, InstanceError, OracleResult,
};
use diagcut::separation::solve_separation;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::SolverArgs;
use crate::output::{emit, open_sink, Format, OutputArgs};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    /// Integer QP with `S_i = {-3, ..., 3}` and `floor(p n)` negative eigenvalue weights.
    Intqp,
    /// Spar-style BoxQP over `[0, 1]^n` with entry density `p`.
    Boxqp,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file (stdout when omitted). BoxQP instances written to a
    /// `.in` path use the spar text format.
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// Instance files (`.in` is read as spar text, anything else as JSON).
    #[arg(required = true)]
    pub instances: Vec<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Problem sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [20, 50, 100, 200])]
    pub n: Vec<usize>,
    /// Instances per size.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(required = true)]
    pub instances: Vec<PathBuf>,
    /// Largest number of points to enumerate before falling back to local search.
    #[arg(long, default_value_t = 10_000_000)]
    pub budget: u64,
    /// Local search restarts for the fallback.
    #[arg(long, default_value_t = 200)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Result files written by `bound` or `bound-aug` (CSV or JSON).
    #[arg(required = true)]
    pub results: Vec<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

pub fn load_instance(path: &Path) -> Result<Instance, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_owned(), e))?;
    let inst = if path.extension().is_some_and(|e| e == "in") {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        import_spar(&text, &stem)?
    } else {
        Instance::from_json(&text)?
    };
    Ok(inst)
}

fn write_text(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    let mut out = open_sink(path)?;
    out.write_all(text.as_bytes()).map_err(CliError::Stdout)?;
    out.flush().map_err(CliError::Stdout)
}

pub fn gen(a: &GenArgs) -> Result<(), CliError> {
    let usage = |e: InstanceError| CliError::Usage(e.to_string());
    let path = a.output.as_deref();
    match a.kind {
        Kind::Intqp => {
            let inst = gen_integer_qp(a.n, a.p, a.seed).map_err(usage)?;
            write_text(path, &(inst.to_json()? + "\n"))
        }
        Kind::Boxqp if path.is_some_and(|p| p.extension().is_some_and(|e| e == "in")) => {
            write_text(path, &gen_spar_text(a.n, a.p, a.seed).map_err(usage)?)
        }
        Kind::Boxqp => {
            let inst = gen_boxqp(a.n, a.p, a.seed).map_err(usage)?;
            write_text(path, &(inst.to_json()? + "\n"))
        }
    }
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(1))
        .build()
        .map_err(|e| CliError::Solver(e.to_string()))
}

#[derive(Debug, Serialize)]
struct BoundRow {
    instance: String,
    n: Option<usize>,
    #[serde(rename = "LB")]
    lb: Option<f64>,
    #[serde(rename = "#it")]
    iterations: usize,
    /// Percentage of wall time spent in separation.
    #[serde(rename = "T_cut")]
    t_cut: Option<f64>,
    time: Option<f64>,
    termination: Option<Termination>,
    status: String,
}

#[derive(Debug, Serialize)]
struct AugRow {
    instance: String,
    n: Option<usize>,
    #[serde(rename = "LB")]
    lb: Option<f64>,
    #[serde(rename = "#it")]
    iterations: usize,
    linear_cuts: Option<usize>,
    #[serde(rename = "T_cut")]
    t_cut: Option<f64>,
    time: Option<f64>,
    termination: Option<Termination>,
    #[serde(rename = "RLT")]
    rlt: Option<f64>,
    #[serde(rename = "OPT")]
    opt: Option<f64>,
    gap_closed: Option<f64>,
    reported_gap_closed: Option<f64>,
    status: String,
}

struct Outcome {
    name: String,
    n: Option<usize>,
    report: Result<BoundReport, (Option<f64>, usize, String)>,
}

fn bound_one(path: &Path, params: &LoopParams, augmented: bool) -> Outcome {
    let fallback = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let inst = match load_instance(path) {
        Ok(i) => i,
        Err(e) => {
            return Outcome {
                name: fallback,
                n: None,
                report: Err((None, 0, e.to_string())),
            }
        }
    };
    let res = if augmented {
        run_augmented_loop(&inst, params)
    } else {
        run_cutting_loop(&inst, params)
    };
    Outcome {
        name: inst.name.clone(),
        n: Some(inst.n()),
        report: res.map_err(|e| (e.last_bound, e.iterations, e.to_string())),
    }
}

pub fn bound(a: &BoundArgs, augmented: bool, verbose: bool) -> Result<(), CliError> {
    let overrides = a.solver.resolve()?;
    let params = overrides.loop_params()?;
    let out = a.out.sink()?;
    let outcomes: Vec<Outcome> = pool(overrides.workers)?.install(|| {
        a.instances
            .par_iter()
            .map(|p| {
                let o = bound_one(p, &params, augmented);
                if verbose {
                    match &o.report {
                        Ok(r) => eprintln!("{}: {:.6} after {} iterations", o.name, r.bound, r.iterations),
                        Err((_, _, msg)) => eprintln!("{}: {msg}", o.name),
                    }
                }
                o
            })
            .collect()
    });
    let failed = outcomes.iter().filter(|o| o.report.is_err()).count();
    if augmented {
        let rows: Vec<AugRow> = outcomes.into_iter().map(aug_row).collect();
        emit(&rows, a.out.format, out)?;
    } else {
        let rows: Vec<BoundRow> = outcomes.into_iter().map(bound_row).collect();
        emit(&rows, a.out.format, out)?;
    }
    if failed > 0 {
        return Err(CliError::Partial {
            failed,
            total: a.instances.len(),
        });
    }
    Ok(())
}

fn bound_row(o: Outcome) -> BoundRow {
    match o.report {
        Ok(r) => BoundRow {
            instance: o.name,
            n: o.n,
            lb: Some(r.bound),
            iterations: r.iterations,
            t_cut: Some(100.0 * r.sep_time_fraction),
            time: Some(r.total_time),
            termination: Some(r.termination),
            status: "ok".into(),
        },
        Err((lb, iterations, msg)) => BoundRow {
            instance: o.name,
            n: o.n,
            lb,
            iterations,
            t_cut: None,
            time: None,
            termination: None,
            status: format!("error: {msg}"),
        },
    }
}

fn aug_row(o: Outcome) -> AugRow {
    let rec = boxqp_record(&o.name);
    let (lb, iterations, linear_cuts, t_cut, time, termination, status) = match o.report {
        Ok(r) => (
            Some(r.bound),
            r.iterations,
            Some(r.linear_cuts),
            Some(100.0 * r.sep_time_fraction),
            Some(r.total_time),
            Some(r.termination),
            "ok".to_string(),
        ),
        Err((lb, it, msg)) => (lb, it, None, None, None, None, format!("error: {msg}")),
    };
    let closed = match (&rec, lb) {
        (Some(r), Some(lb)) => gap_closed(r.rlt, r.opt, lb).ok(),
        _ => None,
    };
    AugRow {
        instance: o.name,
        n: o.n,
        lb,
        iterations,
        linear_cuts,
        t_cut,
        time,
        termination,
        rlt: rec.as_ref().map(|r| r.rlt),
        opt: rec.as_ref().map(|r| r.opt),
        gap_closed: closed,
        reported_gap_closed: rec.as_ref().map(|r| r.reported_gap_closed),
        status,
    }
}

#[derive(Debug, Serialize)]
struct BenchRow {
    n: usize,
    seed: u64,
    objective: f64,
    iterations: usize,
    time: f64,
}

pub fn separate_bench(a: &BenchArgs, verbose: bool) -> Result<(), CliError> {
    let overrides = a.solver.resolve()?;
    let params = overrides.loop_params()?.sep_params;
    if a.n.iter().any(|&n| n < 2) {
        return Err(CliError::Usage("sizes must be at least 2".into()));
    }
    let out = a.out.sink()?;
    let jobs: Vec<(usize, u64)> = a
        .n
        .iter()
        .flat_map(|&n| (0..a.seeds).map(move |s| (n, a.seed_base + s)))
        .collect();
    let rows: Vec<Result<BenchRow, CliError>> = pool(overrides.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(n, seed)| {
                let problem = gen_sep_instance(n, seed)?;
                let start = Instant::now();
                let res = solve_separation(&problem, &params, None)
                    .map_err(|e| CliError::Solver(format!("n={n} seed={seed}: {e}")))?;
                let time = start.elapsed().as_secs_f64();
                if verbose {
                    eprintln!("n={n} seed={seed}: {:.8} in {time:.3}s", res.objective);
                }
                Ok(BenchRow {
                    n,
                    seed,
                    objective: res.objective,
                    iterations: res.iterations,
                    time,
                })
            })
            .collect()
    });
    let mut ok = Vec::with_capacity(rows.len());
    let mut first_err = None;
    for r in rows {
        match r {
            Ok(row) => ok.push(row),
            Err(e) => {
                eprintln!("error: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    emit(&ok, a.out.format, out)?;
    first_err.map_or(Ok(()), Err)
}

#[derive(Debug, Serialize)]
struct OracleJson {
    instance: String,
    #[serde(flatten)]
    result: OracleResult,
}

#[derive(Debug, Serialize)]
struct OracleCsv {
    instance: String,
    value: f64,
    exact: bool,
    argmin: String,
}

pub fn oracle(a: &OracleArgs) -> Result<(), CliError> {
    let out = a.out.sink()?;
    let mut rows = Vec::new();
    let mut first_err = None;
    for path in &a.instances {
        let res = load_instance(path).and_then(|inst| {
            let r = match oracle_enumerate(&inst, a.budget) {
                Ok(r) => r,
                Err(InstanceError::BudgetExceeded { .. } | InstanceError::NotFinite { .. }) => {
                    local_upper_bound(&inst, a.restarts, a.seed)
                }
                Err(e) => return Err(e.into()),
            };
            Ok(OracleJson {
                instance: inst.name,
                result: r,
            })
        });
        match res {
            Ok(r) => rows.push(r),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                first_err.get_or_insert(e);
            }
        }
    }
    match a.out.format {
        Format::Json => emit(&rows, Format::Json, out)?,
        Format::Csv => {
            let flat: Vec<OracleCsv> = rows
                .into_iter()
                .map(|r| OracleCsv {
                    instance: r.instance,
                    value: r.result.value,
                    exact: r.result.exact,
                    argmin: r
                        .result
                        .argmin
                        .iter()
                        .map(f64::to_string)
                        .collect::<Vec<_>>()
                        .join(" "),
                })
                .collect();
            emit(&flat, Format::Csv, out)?;
        }
    }
    first_err.map_or(Ok(()), Err)
}

#[derive(Debug, Serialize)]
struct ReportRow {
    instance: String,
    #[serde(rename = "LB")]
    lb: Option<f64>,
    #[serde(rename = "RLT")]
    rlt: Option<f64>,
    #[serde(rename = "OPT")]
    opt: Option<f64>,
    gap_closed: Option<f64>,
    reported_gap_closed: Option<f64>,
    /// `gap_closed − reported_gap_closed` in percentage points.
    delta: Option<f64>,
    time: Option<f64>,
    reported_time: Option<f64>,
}

fn read_records(path: &Path) -> Result<Vec<HashMap<String, String>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_owned(), e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = serde_json::from_str(&text)?;
        Ok(rows
            .into_iter()
            .map(|m| {
                m.into_iter()
                    .map(|(k, v)| {
                        let s = match v {
                            serde_json::Value::String(s) => s,
                            serde_json::Value::Null => String::new(),
                            other => other.to_string(),
                        };
                        (k, s)
                    })
                    .collect()
            })
            .collect())
    } else {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        Ok(rdr.deserialize().collect::<Result<_, _>>()?)
    }
}

fn field(rec: &HashMap<String, String>, key: &str) -> Option<f64> {
    rec.get(key).and_then(|s| s.parse().ok())
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    let out = a.out.sink()?;
    let mut rows = Vec::new();
    for path in &a.results {
        for rec in read_records(path)? {
            let instance = rec
                .get("instance")
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("{}: no `instance` column", path.display())))?;
            let lb = field(&rec, "LB");
            let table = boxqp_record(&instance);
            let closed = match (&table, lb) {
                (Some(t), Some(lb)) => gap_closed(t.rlt, t.opt, lb).ok(),
                _ => None,
            };
            let reported = table.as_ref().map(|t| t.reported_gap_closed);
            rows.push(ReportRow {
                instance,
                lb,
                rlt: table.as_ref().map(|t| t.rlt),
                opt: table.as_ref().map(|t| t.opt),
                gap_closed: closed,
                reported_gap_closed: reported,
                delta: closed.zip(reported).map(|(g, p)| g - p),
                time: field(&rec, "time"),
                reported_time: table.as_ref().map(|t| t.reported_time),
            });
        }
    }
    emit(&rows, a.out.format, out)
}
