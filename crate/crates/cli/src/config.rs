use std::path::{Path, PathBuf};

use clap::Args;
use diagcut::cutloop::LoopParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Solver overrides shared by the bound commands. Every field can also be
/// set from a JSON config file; flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Maximum number of master solves.
    #[arg(long)]
    pub max_outer_iter: Option<usize>,
    /// Cut violation threshold, relative to 1 + |v|.
    #[arg(long)]
    pub violation_tol: Option<f64>,
    /// Stop after this many iterations without bound progress (0 disables).
    #[arg(long)]
    pub stall_iters: Option<usize>,
    /// Wall-clock limit per instance in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Floor for the separation barrier weight.
    #[arg(long)]
    pub sml_sig: Option<f64>,
    /// Multiplicative barrier weight decrease.
    #[arg(long)]
    pub sig_upd: Option<f64>,
    /// Subgradient threshold for decreasing the barrier weight.
    #[arg(long)]
    pub subg_tol: Option<f64>,
    /// Relative progress threshold for stopping the separation solver.
    #[arg(long)]
    pub smll_prgrss: Option<f64>,
    /// Coordinate steps per separation solve (default 50 n).
    #[arg(long)]
    pub sep_max_iter: Option<usize>,
    /// Rank-one updates between refactorizations (default 5 n).
    #[arg(long)]
    pub refactor_period: Option<usize>,
    /// Lower bound on the separation weights β.
    #[arg(long)]
    pub beta_floor: Option<f64>,
    /// Relative duality gap at which the master solve stops.
    #[arg(long)]
    pub master_gap_tol: Option<f64>,
    /// Number of instances processed in parallel.
    #[arg(long)]
    pub workers: Option<usize>,
}

macro_rules! merge_fields {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        Overrides { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl Overrides {
    /// Fields set in `self` win over those in `base`.
    pub fn over(&self, base: &Overrides) -> Overrides {
        merge_fields!(
            self,
            base,
            max_outer_iter,
            violation_tol,
            stall_iters,
            time_limit,
            sml_sig,
            sig_upd,
            subg_tol,
            smll_prgrss,
            sep_max_iter,
            refactor_period,
            beta_floor,
            master_gap_tol,
            workers
        )
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_owned(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn loop_params(&self) -> Result<LoopParams, CliError> {
        let mut p = LoopParams::default();
        if let Some(v) = self.max_outer_iter {
            p.max_outer_iter = v;
        }
        if let Some(v) = self.violation_tol {
            p.violation_tol = v;
        }
        if let Some(v) = self.stall_iters {
            p.stall_iters = v;
        }
        p.time_limit = self.time_limit.or(p.time_limit);
        let s = &mut p.sep_params;
        if let Some(v) = self.sml_sig {
            s.sml_sig = v;
        }
        if let Some(v) = self.sig_upd {
            s.sig_upd = v;
        }
        if let Some(v) = self.subg_tol {
            s.subg_tol = v;
        }
        if let Some(v) = self.smll_prgrss {
            s.smll_prgrss = v;
        }
        s.max_iter = self.sep_max_iter.or(s.max_iter);
        s.refactor_period = self.refactor_period.or(s.refactor_period);
        if let Some(v) = self.beta_floor {
            s.beta_floor = v;
        }
        if let Some(v) = self.master_gap_tol {
            if !(v > 0.0) {
                return Err(CliError::Usage("master_gap_tol must be positive".into()));
            }
            p.barrier.gap_tol = v;
        }
        if self.workers == Some(0) {
            return Err(CliError::Usage("workers must be positive".into()));
        }
        p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// JSON file with solver overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

impl SolverArgs {
    pub fn resolve(&self) -> Result<Overrides, CliError> {
        match &self.config {
            Some(path) => Ok(self.overrides.over(&Overrides::from_file(path)?)),
            None => Ok(self.overrides.clone()),
        }
    }
}
