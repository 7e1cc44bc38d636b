//! Budget-constrained global optimization by simultaneous optimistic
//! optimization (SOO), with a Nelder–Mead refinement stage, bandit and random
//! baselines, and an experiment harness that writes convergence traces.
//!
//! ```
//! use soo::objectives::{make_objective, Shift};
//! use soo::tree::{run_soo, SooParams};
//!
//! let objective = make_objective("sphere", 2, Shift::Explicit(vec![0.2, 0.2]), 2_000).unwrap();
//! let result = run_soo(objective, 2_000, SooParams::default()).unwrap();
//! assert!(result.best_value - 100.0 < 1e-2);
//! ```

pub mod baselines;
pub mod harness;
pub mod objectives;
pub mod refine;
pub mod result;
pub mod tree;

pub use objectives::{BlackBox, EvalError, FunctionKind, Objective, Shift};
pub use result::{RunResult, TracePoint};
pub use tree::{max_depth, run_soo, DepthSchedule, PartitionTree, SooError, SooParams};
