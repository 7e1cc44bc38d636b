//! Experiment runner: resolves budgets, dispatches algorithms, and writes
//! per-run traces, result records and grid summaries.
//!
//! Output files are written to a temporary file in the target directory and
//! renamed into place, so a reader never sees a partial file.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::baselines::{self, BanditError, DEFAULT_EXPLORATION};
use crate::objectives::{make_suite_objective, BlackBox, EvalError, FunctionKind, Shift};
use crate::refine::{run_hybrid, RefineError, DEFAULT_REFINE_FRACTION};
use crate::result::{RunResult, TracePoint};
use crate::tree::{run_soo, DepthSchedule, SooError, SooParams};

/// Evaluations per dimension under the competition protocol.
pub const CEC_EVALS_PER_DIM: u64 = 10_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Objective(#[from] EvalError),
    #[error(transparent)]
    Soo(#[from] SooError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// True for errors caused by the request rather than by the run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::Objective(EvalError::UnknownFunction(_))
                | HarnessError::Objective(EvalError::BadDimension { .. })
                | HarnessError::Soo(SooError::InvalidChildren(_))
                | HarnessError::Refine(RefineError::InvalidFraction(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetMode {
    Fixed(u64),
    /// `10^4 × dim` evaluations.
    Cec,
}

impl BudgetMode {
    pub fn resolve(self, dim: usize) -> u64 {
        match self {
            BudgetMode::Fixed(n) => n,
            BudgetMode::Cec => CEC_EVALS_PER_DIM * dim as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    Soo,
    SooRefine { fraction: f64 },
    Random { seed: u64 },
    /// `resolution` cells per axis; `None` picks [`baselines::default_grid_resolution`].
    UcbGrid { resolution: Option<usize>, seed: u64 },
}

impl Algorithm {
    pub fn soo_refine() -> Self {
        Algorithm::SooRefine {
            fraction: DEFAULT_REFINE_FRACTION,
        }
    }

    /// Name used in file names and summary headers.
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Soo => "soo",
            Algorithm::SooRefine { .. } => "soo-refine",
            Algorithm::Random { .. } => "random",
            Algorithm::UcbGrid { .. } => "ucb-grid",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }
    fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub function: FunctionKind,
    pub dim: usize,
    pub budget: BudgetMode,
    pub algorithm: Algorithm,
    pub soo_params: SooParams,
    pub shift_seed: u64,
    /// Where to write files; `None` runs in memory only.
    pub output_dir: Option<PathBuf>,
    pub format: OutputFormat,
}

impl RunConfig {
    pub fn new(function: FunctionKind, dim: usize, budget: BudgetMode, algorithm: Algorithm) -> Self {
        Self {
            function,
            dim,
            budget,
            algorithm,
            soo_params: SooParams::default(),
            shift_seed: crate::objectives::DEFAULT_SHIFT_SEED,
            output_dir: None,
            format: OutputFormat::Both,
        }
    }

    pub fn budget(&self) -> u64 {
        self.budget.resolve(self.dim)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.budget() == 0 {
            return Err(HarnessError::Config("budget must be at least 1".into()));
        }
        if let Algorithm::SooRefine { fraction } = self.algorithm {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(HarnessError::Config(format!(
                    "refine fraction must lie in (0, 1), got {fraction}"
                )));
            }
        }
        if self.dim < self.function.min_dim() {
            return Err(EvalError::BadDimension {
                name: self.function.name(),
                dim: self.dim,
            }
            .into());
        }
        self.soo_params.validate()?;
        Ok(())
    }

    /// `<function>_<dim>_<algorithm>_<budget>`.
    pub fn file_stem(&self) -> String {
        format!(
            "{}_{}_{}_{}",
            self.function,
            self.dim,
            self.algorithm.label(),
            self.budget()
        )
    }

    fn echo(&self) -> serde_json::Value {
        let algorithm = match self.algorithm {
            Algorithm::Soo => json!({ "name": "soo" }),
            Algorithm::SooRefine { fraction } => json!({ "name": "soo-refine", "fraction": fraction }),
            Algorithm::Random { seed } => json!({ "name": "random", "seed": seed }),
            Algorithm::UcbGrid { resolution, seed } => json!({
                "name": "ucb-grid",
                "resolution": resolution.unwrap_or_else(|| baselines::default_grid_resolution(self.dim)),
                "seed": seed,
            }),
        };
        let schedule = match self.soo_params.depth_schedule {
            DepthSchedule::Log32 => json!("paper"),
            DepthSchedule::Constant(h) => json!(format!("const:{h}")),
            DepthSchedule::Unbounded => json!("unbounded"),
        };
        json!({
            "function": self.function.name(),
            "dim": self.dim,
            "budget": self.budget(),
            "budget_mode": match self.budget { BudgetMode::Fixed(_) => "fixed", BudgetMode::Cec => "cec" },
            "algorithm": algorithm,
            "s_children": self.soo_params.s_children,
            "depth_schedule": schedule,
            "shift_seed": self.shift_seed,
        })
    }
}

/// A finished run and where its files went.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub result: RunResult,
    pub optimum_value: f64,
    pub wall_clock_seconds: f64,
    pub files: Vec<PathBuf>,
}

/// Runs the configured algorithm in memory.
pub fn execute(config: &RunConfig) -> Result<RunResult, HarnessError> {
    config.validate()?;
    let budget = config.budget();
    let mut objective = make_suite_objective(
        config.function,
        config.dim,
        Shift::Seed(config.shift_seed),
        budget,
    )?;
    let result = match config.algorithm {
        Algorithm::Soo => run_soo(&mut objective, budget, config.soo_params)?,
        Algorithm::SooRefine { fraction } => {
            run_hybrid(&mut objective, budget, config.soo_params, fraction)?
        }
        Algorithm::Random { seed } => baselines::run_random_search(&mut objective, budget, seed)?,
        Algorithm::UcbGrid { resolution, seed } => {
            let resolution =
                resolution.unwrap_or_else(|| baselines::default_grid_resolution(config.dim));
            baselines::run_ucb_grid(&mut objective, budget, resolution, seed, DEFAULT_EXPLORATION)?
        }
    };
    debug_assert!(objective.evals() <= budget);
    Ok(result)
}

/// Runs one experiment and writes its trace CSV and result JSON.
pub fn run_experiment(config: &RunConfig) -> Result<Experiment, HarnessError> {
    let start = Instant::now();
    let result = execute(config)?;
    let wall_clock_seconds = start.elapsed().as_secs_f64();
    let optimum_value = config.function.bias();
    let mut files = Vec::new();
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir)?;
        let stem = config.file_stem();
        if config.format.csv() {
            let path = dir.join(format!("{stem}.csv"));
            let mut buf = Vec::new();
            write_trace_csv(&mut buf, &result.trace, optimum_value)?;
            write_atomic(&path, &buf)?;
            files.push(path);
        }
        if config.format.json() {
            let path = dir.join(format!("{stem}.json"));
            let record = json!({
                "config": config.echo(),
                "best_point": result.best_point,
                "best_value": result.best_value,
                "optimum_value": optimum_value,
                "ratio": result.ratio,
                "evals_used": result.evals_used,
                "wall_clock_seconds": wall_clock_seconds,
            });
            let mut buf = serde_json::to_vec_pretty(&record)?;
            buf.push(b'\n');
            write_atomic(&path, &buf)?;
            files.push(path);
        }
    }
    Ok(Experiment {
        result,
        optimum_value,
        wall_clock_seconds,
        files,
    })
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// 17 significant digits; parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trace_csv<W: Write>(mut w: W, trace: &[TracePoint], optimum_value: f64) -> io::Result<()> {
    writeln!(w, "eval_index,best_value,ratio")?;
    for p in trace {
        writeln!(
            w,
            "{},{},{}",
            p.eval_index,
            format_value(p.best_value),
            format_value(p.best_value / optimum_value)
        )?;
    }
    Ok(())
}

/// One parsed trace row: `(eval_index, best_value, ratio)`.
pub type TraceRow = (u64, f64, f64);

pub fn read_trace_csv<R: BufRead>(r: R) -> Result<Vec<TraceRow>, HarnessError> {
    let bad = |line: usize, what: &str| HarnessError::Config(format!("trace line {line}: {what}"));
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != "eval_index,best_value,ratio" {
                return Err(bad(1, "unexpected header"));
            }
            continue;
        }
        let mut fields = line.split(',');
        let (Some(a), Some(b), Some(c), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad(i + 1, "expected three fields"));
        };
        rows.push((
            a.parse().map_err(|_| bad(i + 1, "bad eval_index"))?,
            b.parse().map_err(|_| bad(i + 1, "bad best_value"))?,
            c.parse().map_err(|_| bad(i + 1, "bad ratio"))?,
        ));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub functions: Vec<FunctionKind>,
    pub dims: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub budget: BudgetMode,
    pub soo_params: SooParams,
    pub shift_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub format: OutputFormat,
    pub jobs: usize,
}

impl GridConfig {
    pub fn new(
        functions: Vec<FunctionKind>,
        dims: Vec<usize>,
        algorithms: Vec<Algorithm>,
        budget: BudgetMode,
    ) -> Self {
        Self {
            functions,
            dims,
            algorithms,
            budget,
            soo_params: SooParams::default(),
            shift_seed: crate::objectives::DEFAULT_SHIFT_SEED,
            output_dir: None,
            format: OutputFormat::Both,
            jobs: 1,
        }
    }
}

/// Ratio per (function, dim, algorithm); `None` marks a failed run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSummary {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl GridSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("function");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (name, cells) in &self.rows {
            out.push_str(name);
            for cell in cells {
                out.push(',');
                match cell {
                    Some(r) => out.push_str(&format_value(*r)),
                    None => out.push_str("error"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn runs(&self) -> usize {
        self.rows.iter().map(|(_, c)| c.len()).sum()
    }
}

/// Runs every (function, dim, algorithm) combination and writes `summary.csv`.
pub fn run_grid(grid: &GridConfig) -> Result<GridSummary, HarnessError> {
    if grid.functions.is_empty() || grid.dims.is_empty() || grid.algorithms.is_empty() {
        return Err(HarnessError::Config("grid lists must be non-empty".into()));
    }
    let mut columns = Vec::new();
    let mut cells = Vec::new();
    for &dim in &grid.dims {
        for algorithm in &grid.algorithms {
            columns.push(format!("{dim}_{}", algorithm.label()));
        }
    }
    for &function in &grid.functions {
        for &dim in &grid.dims {
            for &algorithm in &grid.algorithms {
                cells.push(RunConfig {
                    function,
                    dim,
                    budget: grid.budget,
                    algorithm,
                    soo_params: grid.soo_params,
                    shift_seed: grid.shift_seed,
                    output_dir: grid.output_dir.clone(),
                    format: grid.format,
                });
            }
        }
    }
    let run = |c: &RunConfig| run_experiment(c).ok().and_then(|e| e.result.ratio);
    let ratios: Vec<Option<f64>> = if grid.jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(grid.jobs)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(|| cells.par_iter().map(run).collect())
    } else {
        cells.iter().map(run).collect()
    };
    let per_row = columns.len();
    let rows = grid
        .functions
        .iter()
        .zip(ratios.chunks(per_row))
        .map(|(f, chunk)| (f.name().to_string(), chunk.to_vec()))
        .collect();
    let summary = GridSummary { columns, rows };
    if let Some(dir) = &grid.output_dir {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("summary.csv"), summary.to_csv().as_bytes())?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetRow {
    pub budget: u64,
    pub evals_used: u64,
    pub best_value: f64,
    pub ratio: f64,
    /// Relative decrease of the best value from the previous row.
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub function: String,
    pub dim: usize,
    pub rows: Vec<BudgetRow>,
}

impl BudgetReport {
    pub fn to_csv(&self) -> String {
        let with_improvement = self.rows.len() > 1;
        let mut out = String::from("budget,evals_used,best_value,ratio");
        if with_improvement {
            out.push_str(",improvement");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{}",
                row.budget,
                row.evals_used,
                format_value(row.best_value),
                format_value(row.ratio)
            );
            if with_improvement {
                out.push(',');
                if let Some(i) = row.improvement {
                    out.push_str(&format_value(i));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Runs SOO at each budget and reports how much the best value improves.
pub fn compare_budgets(
    function: FunctionKind,
    dim: usize,
    budgets: &[u64],
    soo_params: SooParams,
    shift_seed: u64,
) -> Result<BudgetReport, HarnessError> {
    if budgets.is_empty() || budgets.windows(2).any(|w| w[0] >= w[1]) || budgets[0] == 0 {
        return Err(HarnessError::Config(
            "budgets must be positive and strictly increasing".into(),
        ));
    }
    let mut rows: Vec<BudgetRow> = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let mut config = RunConfig::new(function, dim, BudgetMode::Fixed(budget), Algorithm::Soo);
        config.soo_params = soo_params;
        config.shift_seed = shift_seed;
        let result = execute(&config)?;
        let improvement = rows
            .last()
            .map(|prev| (prev.best_value - result.best_value) / prev.best_value);
        rows.push(BudgetRow {
            budget,
            evals_used: result.evals_used,
            best_value: result.best_value,
            ratio: result.ratio.unwrap_or(f64::NAN),
            improvement,
        });
    }
    Ok(BudgetReport {
        function: function.name().to_string(),
        dim,
        rows,
    })
}
