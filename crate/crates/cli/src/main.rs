//! `soo`: run SOO and its baselines on the benchmark suite.
//!
//! A single `--function`/`--dim`/`--algo` runs one experiment. Comma lists
//! (or `all` for functions) run the whole grid and write `summary.csv`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde_json::json;
use soo::harness::{
    compare_budgets, run_experiment, run_grid, Algorithm, BudgetMode, GridConfig, HarnessError,
    OutputFormat, RunConfig,
};
use soo::objectives::{suite_manifest, FunctionKind, DEFAULT_SHIFT_SEED};
use soo::refine::DEFAULT_REFINE_FRACTION;
use soo::tree::{DepthSchedule, SooParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algo {
    Soo,
    SooRefine,
    Random,
    UcbGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Parser)]
#[command(name = "soo", version, about = "Simultaneous optimistic optimization experiments")]
struct Cli {
    /// Suite function name(s), comma separated, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "sphere")]
    function: Vec<String>,

    /// Dimension(s), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    dim: Vec<usize>,

    /// Fixed evaluation budget.
    #[arg(long, conflicts_with = "cec_budget")]
    budget: Option<u64>,

    /// Budget of 10^4 evaluations per dimension (the default).
    #[arg(long)]
    cec_budget: bool,

    /// Algorithm(s), comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "soo")]
    algo: Vec<Algo>,

    /// Share of the budget reserved for local refinement.
    #[arg(long, default_value_t = DEFAULT_REFINE_FRACTION)]
    refine_fraction: f64,

    /// Children per split (odd, at least 3).
    #[arg(long, default_value_t = 3)]
    s_children: usize,

    /// Depth cap: `paper`, `const:<h>` or `unbounded`.
    #[arg(long, default_value = "paper", value_parser = parse_schedule)]
    depth_schedule: DepthSchedule,

    /// RNG seed for the random and ucb-grid baselines.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Seed for the optimum shift of the suite functions.
    #[arg(long, default_value_t = DEFAULT_SHIFT_SEED)]
    shift_seed: u64,

    /// Cells per axis for ucb-grid (default: 3, fewer when 3^D > 729).
    #[arg(long)]
    grid_resolution: Option<usize>,

    /// Worker threads for grid runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    /// Output directory; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "both")]
    format: Format,

    /// Run SOO at each of these increasing budgets and report improvements.
    #[arg(long, value_delimiter = ',')]
    compare_budgets: Option<Vec<u64>>,

    /// Print the suite manifest as JSON and exit.
    #[arg(long)]
    suite_manifest: bool,
}

fn parse_schedule(s: &str) -> Result<DepthSchedule, String> {
    match s {
        "paper" => Ok(DepthSchedule::Log32),
        "unbounded" => Ok(DepthSchedule::Unbounded),
        _ => s
            .strip_prefix("const:")
            .and_then(|h| h.parse().ok())
            .map(DepthSchedule::Constant)
            .ok_or_else(|| format!("expected paper, const:<h> or unbounded, got `{s}`")),
    }
}

impl Cli {
    fn functions(&self) -> Result<Vec<FunctionKind>, HarnessError> {
        if self.function.iter().any(|f| f == "all") {
            return Ok(FunctionKind::ALL.to_vec());
        }
        Ok(self
            .function
            .iter()
            .map(|f| f.parse())
            .collect::<Result<_, _>>()?)
    }

    fn budget_mode(&self) -> BudgetMode {
        match self.budget {
            Some(n) => BudgetMode::Fixed(n),
            None => BudgetMode::Cec,
        }
    }

    fn soo_params(&self) -> SooParams {
        SooParams {
            s_children: self.s_children,
            depth_schedule: self.depth_schedule,
            ..SooParams::default()
        }
    }

    fn algorithm(&self, algo: Algo) -> Algorithm {
        match algo {
            Algo::Soo => Algorithm::Soo,
            Algo::SooRefine => Algorithm::SooRefine { fraction: self.refine_fraction },
            Algo::Random => Algorithm::Random { seed: self.seed },
            Algo::UcbGrid => Algorithm::UcbGrid { resolution: self.grid_resolution, seed: self.seed },
        }
    }

    fn format(&self) -> OutputFormat {
        match self.format {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
            Format::Both => OutputFormat::Both,
        }
    }
}

fn single<T: Copy>(values: &[T], flag: &str) -> Result<T, HarnessError> {
    match values {
        [v] => Ok(*v),
        _ => Err(HarnessError::Config(format!("--{flag} takes exactly one value here"))),
    }
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    if cli.jobs == 0 {
        return Err(HarnessError::Config("--jobs must be at least 1".into()));
    }
    let functions = cli.functions()?;

    if cli.suite_manifest {
        let dim = single(&cli.dim, "dim")?;
        println!("{}", serde_json::to_string_pretty(&suite_manifest(dim, cli.shift_seed))?);
        return Ok(());
    }

    if let Some(budgets) = &cli.compare_budgets {
        let function = single(&functions, "function")?;
        let dim = single(&cli.dim, "dim")?;
        let report = compare_budgets(function, dim, budgets, cli.soo_params(), cli.shift_seed)?;
        print!("{}", report.to_csv());
        return Ok(());
    }

    let algorithms: Vec<Algorithm> = cli.algo.iter().map(|&a| cli.algorithm(a)).collect();
    if functions.len() == 1 && cli.dim.len() == 1 && algorithms.len() == 1 {
        let mut config = RunConfig::new(functions[0], cli.dim[0], cli.budget_mode(), algorithms[0]);
        config.soo_params = cli.soo_params();
        config.shift_seed = cli.shift_seed;
        config.output_dir = cli.out.clone();
        config.format = cli.format();
        let exp = run_experiment(&config)?;
        let record = json!({
            "function": config.function.name(),
            "dim": config.dim,
            "algorithm": config.algorithm.label(),
            "budget": config.budget(),
            "evals_used": exp.result.evals_used,
            "best_value": exp.result.best_value,
            "optimum_value": exp.optimum_value,
            "ratio": exp.result.ratio,
            "best_point": exp.result.best_point,
            "wall_clock_seconds": exp.wall_clock_seconds,
            "files": exp.files,
        });
        println!("{}", serde_json::to_string_pretty(&record)?);
        return Ok(());
    }

    let mut grid = GridConfig::new(functions, cli.dim.clone(), algorithms, cli.budget_mode());
    grid.soo_params = cli.soo_params();
    grid.shift_seed = cli.shift_seed;
    grid.output_dir = cli.out.clone();
    grid.format = cli.format();
    grid.jobs = cli.jobs;
    let summary = run_grid(&grid)?;
    print!("{}", summary.to_csv());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
