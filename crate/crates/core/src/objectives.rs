//! Budget-metered black-box objectives and the benchmark suite.
//!
//! Every suite function is a shifted analytic function on `[-5, 5]^D` with an
//! additive bias of `100 × index`, so its optimum value `f*` is positive and
//! the ratio `f(best) / f*` is always well defined.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

/// Errors raised while building or evaluating an objective.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("evaluation budget exhausted ({budget} evaluations)")]
    BudgetExhausted { budget: u64 },
    #[error("point is outside the search box at coordinate {index}: {value}")]
    OutOfBounds { index: usize, value: f64 },
    #[error("point has {got} coordinates, objective expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown suite function `{0}`")]
    UnknownFunction(String),
    #[error("function `{name}` is not defined in dimension {dim}")]
    BadDimension { name: &'static str, dim: usize },
}

/// A bounded black-box function with a hard evaluation budget.
///
/// `evaluate` is the only way to obtain a value; each successful call costs
/// exactly one unit of budget, failed calls cost nothing.
pub trait BlackBox {
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    fn evaluate(&mut self, x: &[f64]) -> Result<f64, EvalError>;
    /// Successful evaluations so far.
    fn evals(&self) -> u64;
    fn budget(&self) -> u64;

    fn dim(&self) -> usize {
        self.lower().len()
    }

    fn remaining(&self) -> u64 {
        self.budget().saturating_sub(self.evals())
    }

    /// Location and value of the global minimum, when known.
    fn known_optimum(&self) -> Option<(&[f64], f64)> {
        None
    }
}

impl<T: BlackBox + ?Sized> BlackBox for &mut T {
    fn lower(&self) -> &[f64] {
        (**self).lower()
    }
    fn upper(&self) -> &[f64] {
        (**self).upper()
    }
    fn evaluate(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        (**self).evaluate(x)
    }
    fn evals(&self) -> u64 {
        (**self).evals()
    }
    fn budget(&self) -> u64 {
        (**self).budget()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn known_optimum(&self) -> Option<(&[f64], f64)> {
        (**self).known_optimum()
    }
}

/// Checks that `x` has the right length and lies in `[lower, upper]`.
pub fn check_in_box(lower: &[f64], upper: &[f64], x: &[f64]) -> Result<(), EvalError> {
    if x.len() != lower.len() {
        return Err(EvalError::DimensionMismatch {
            expected: lower.len(),
            got: x.len(),
        });
    }
    for (index, ((&xi, &lo), &hi)) in x.iter().zip(lower).zip(upper).enumerate() {
        // NaN fails both comparisons, so test for membership rather than exclusion.
        if !(lo <= xi && xi <= hi) {
            return Err(EvalError::OutOfBounds { index, value: xi });
        }
    }
    Ok(())
}

/// Evaluation meter shared by the objective types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Meter {
    used: u64,
    budget: u64,
}

impl Meter {
    fn charge(&mut self) -> Result<(), EvalError> {
        if self.used >= self.budget {
            return Err(EvalError::BudgetExhausted {
                budget: self.budget,
            });
        }
        self.used += 1;
        Ok(())
    }
}

/// An arbitrary closure behind a box and a budget.
pub struct Metered<F> {
    lower: Vec<f64>,
    upper: Vec<f64>,
    meter: Meter,
    optimum: Option<(Vec<f64>, f64)>,
    f: F,
}

impl<F: Fn(&[f64]) -> f64> Metered<F> {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, budget: u64, f: F) -> Self {
        Self {
            lower,
            upper,
            meter: Meter { used: 0, budget },
            optimum: None,
            f,
        }
    }

    pub fn with_optimum(mut self, point: Vec<f64>, value: f64) -> Self {
        self.optimum = Some((point, value));
        self
    }
}

impl<F: Fn(&[f64]) -> f64> BlackBox for Metered<F> {
    fn lower(&self) -> &[f64] {
        &self.lower
    }
    fn upper(&self) -> &[f64] {
        &self.upper
    }
    fn evaluate(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        check_in_box(&self.lower, &self.upper, x)?;
        self.meter.charge()?;
        Ok((self.f)(x))
    }
    fn evals(&self) -> u64 {
        self.meter.used
    }
    fn budget(&self) -> u64 {
        self.meter.budget
    }
    fn known_optimum(&self) -> Option<(&[f64], f64)> {
        self.optimum.as_ref().map(|(x, v)| (x.as_slice(), *v))
    }
}

impl<F> fmt::Debug for Metered<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Metered")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("meter", &self.meter)
            .finish_non_exhaustive()
    }
}

/// Flips the sign of another objective, turning maximization into minimization.
#[derive(Debug)]
pub struct Negated<O>(pub O);

impl<O: BlackBox> BlackBox for Negated<O> {
    fn lower(&self) -> &[f64] {
        self.0.lower()
    }
    fn upper(&self) -> &[f64] {
        self.0.upper()
    }
    fn evaluate(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        self.0.evaluate(x).map(|v| -v)
    }
    fn evals(&self) -> u64 {
        self.0.evals()
    }
    fn budget(&self) -> u64 {
        self.0.budget()
    }
}

/// The analytic functions of the benchmark suite, in index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionKind {
    Sphere,
    Ellipsoid,
    Rosenbrock,
    Rastrigin,
    Ackley,
    Griewank,
    StyblinskiTang,
    Composite3,
}

impl FunctionKind {
    pub const ALL: [FunctionKind; 8] = [
        FunctionKind::Sphere,
        FunctionKind::Ellipsoid,
        FunctionKind::Rosenbrock,
        FunctionKind::Rastrigin,
        FunctionKind::Ackley,
        FunctionKind::Griewank,
        FunctionKind::StyblinskiTang,
        FunctionKind::Composite3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FunctionKind::Sphere => "sphere",
            FunctionKind::Ellipsoid => "ellipsoid",
            FunctionKind::Rosenbrock => "rosenbrock",
            FunctionKind::Rastrigin => "rastrigin",
            FunctionKind::Ackley => "ackley",
            FunctionKind::Griewank => "griewank",
            FunctionKind::StyblinskiTang => "styblinski_tang",
            FunctionKind::Composite3 => "composite3",
        }
    }

    /// 1-based position in the suite.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap() + 1
    }

    /// Additive constant, equal to the optimum value.
    pub fn bias(self) -> f64 {
        100.0 * self.index() as f64
    }

    pub fn min_dim(self) -> usize {
        match self {
            FunctionKind::Rosenbrock => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| EvalError::UnknownFunction(s.to_string()))
    }
}

pub const SUITE_LOWER: f64 = -5.0;
pub const SUITE_UPPER: f64 = 5.0;
/// Shift seed used by the harness when none is given.
pub const DEFAULT_SHIFT_SEED: u64 = 2014;

// Knuth's MMIX linear congruential generator.
const LCG_MUL: u64 = 6364136223846793005;
const LCG_INC: u64 = 1442695040888963407;

/// Derives a shift vector in `[-2, 2)^dim` from a seed.
///
/// Each component advances the MMIX LCG once and maps the top 53 bits of the
/// state affinely onto `[-2, 2)`.
pub fn shift_from_seed(seed: u64, dim: usize) -> Vec<f64> {
    let mut state = seed;
    (0..dim)
        .map(|_| {
            state = state.wrapping_mul(LCG_MUL).wrapping_add(LCG_INC);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64;
            -2.0 + 4.0 * u
        })
        .collect()
}

/// Minimizer of the one-dimensional Styblinski–Tang term `z⁴ − 16z² + 5z`.
const ST_ARGMIN: f64 = -2.903534027771178;

fn st_term(z: f64) -> f64 {
    z.powi(4) - 16.0 * z * z + 5.0 * z
}

/// A suite function with its shift; a pure, unmetered value map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteFunction {
    kind: FunctionKind,
    shift: Vec<f64>,
}

impl SuiteFunction {
    pub fn new(kind: FunctionKind, shift: Vec<f64>) -> Result<Self, EvalError> {
        let dim = shift.len();
        if dim < kind.min_dim() {
            return Err(EvalError::BadDimension {
                name: kind.name(),
                dim,
            });
        }
        if let Some(index) = shift
            .iter()
            .position(|s| !(SUITE_LOWER < *s && *s < SUITE_UPPER))
        {
            return Err(EvalError::OutOfBounds {
                index,
                value: shift[index],
            });
        }
        Ok(Self { kind, shift })
    }

    pub fn kind(&self) -> FunctionKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn optimum_value(&self) -> f64 {
        self.kind.bias()
    }

    /// Value at `x`, without any box or budget check.
    pub fn value(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = x.iter().zip(&self.shift).map(|(a, s)| a - s).collect();
        self.kind.bias() + atomic(self.kind, &z)
    }
}

/// Unbiased function of the shifted coordinates; minimum 0 at `z = 0`.
fn atomic(kind: FunctionKind, z: &[f64]) -> f64 {
    let d = z.len() as f64;
    match kind {
        FunctionKind::Sphere => z.iter().map(|v| v * v).sum(),
        FunctionKind::Ellipsoid => z
            .iter()
            .enumerate()
            .map(|(i, v)| (i + 1) as f64 * v * v)
            .sum(),
        FunctionKind::Rosenbrock => {
            // Shifted by one so the minimum sits at z = 0.
            let y: Vec<f64> = z.iter().map(|v| v + 1.0).collect();
            y.windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (w[0] - 1.0).powi(2))
                .sum()
        }
        FunctionKind::Rastrigin => z
            .iter()
            .map(|v| v * v - 10.0 * (2.0 * PI * v).cos() + 10.0)
            .sum(),
        FunctionKind::Ackley => {
            let sq = z.iter().map(|v| v * v).sum::<f64>() / d;
            let cs = z.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / d;
            (20.0 + E - 20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp()).max(0.0)
        }
        FunctionKind::Griewank => {
            let sum = z.iter().map(|v| v * v).sum::<f64>() / 4000.0;
            let prod: f64 = z
                .iter()
                .enumerate()
                .map(|(i, v)| (v / ((i + 1) as f64).sqrt()).cos())
                .product();
            (1.0 + sum - prod).max(0.0)
        }
        FunctionKind::StyblinskiTang => {
            let floor = st_term(ST_ARGMIN);
            let total: f64 = z.iter().map(|v| st_term(v + ST_ARGMIN) - floor).sum();
            (0.5 * total).max(0.0)
        }
        FunctionKind::Composite3 => {
            atomic(FunctionKind::Sphere, z)
                + atomic(FunctionKind::Rastrigin, z)
                + atomic(FunctionKind::Ackley, z)
        }
    }
}

/// How the optimum location of a suite objective is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum Shift {
    Seed(u64),
    Explicit(Vec<f64>),
}

/// A metered suite function on `[-5, 5]^D`.
#[derive(Debug, Clone)]
pub struct Objective {
    function: SuiteFunction,
    lower: Vec<f64>,
    upper: Vec<f64>,
    meter: Meter,
}

impl Objective {
    pub fn new(function: SuiteFunction, budget: u64) -> Self {
        let dim = function.dim();
        Self {
            function,
            lower: vec![SUITE_LOWER; dim],
            upper: vec![SUITE_UPPER; dim],
            meter: Meter { used: 0, budget },
        }
    }

    pub fn function(&self) -> &SuiteFunction {
        &self.function
    }

    pub fn kind(&self) -> FunctionKind {
        self.function.kind
    }

    pub fn bias(&self) -> f64 {
        self.function.kind.bias()
    }

    pub fn shift(&self) -> &[f64] {
        &self.function.shift
    }

    /// Returns `(x*, f*)` without consuming budget.
    pub fn optimum(&self) -> (&[f64], f64) {
        (&self.function.shift, self.function.optimum_value())
    }
}

impl BlackBox for Objective {
    fn lower(&self) -> &[f64] {
        &self.lower
    }
    fn upper(&self) -> &[f64] {
        &self.upper
    }
    fn evaluate(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        check_in_box(&self.lower, &self.upper, x)?;
        self.meter.charge()?;
        Ok(self.function.value(x))
    }
    fn evals(&self) -> u64 {
        self.meter.used
    }
    fn budget(&self) -> u64 {
        self.meter.budget
    }
    fn known_optimum(&self) -> Option<(&[f64], f64)> {
        Some(self.optimum())
    }
}

/// Builds a suite objective by name.
pub fn make_objective(
    name: &str,
    dim: usize,
    shift: Shift,
    budget: u64,
) -> Result<Objective, EvalError> {
    let kind: FunctionKind = name.parse()?;
    make_suite_objective(kind, dim, shift, budget)
}

pub fn make_suite_objective(
    kind: FunctionKind,
    dim: usize,
    shift: Shift,
    budget: u64,
) -> Result<Objective, EvalError> {
    if dim < kind.min_dim() {
        return Err(EvalError::BadDimension {
            name: kind.name(),
            dim,
        });
    }
    let shift = match shift {
        Shift::Seed(seed) => shift_from_seed(seed, dim),
        Shift::Explicit(v) if v.len() == dim => v,
        Shift::Explicit(v) => {
            return Err(EvalError::DimensionMismatch {
                expected: dim,
                got: v.len(),
            })
        }
    };
    Ok(Objective::new(SuiteFunction::new(kind, shift)?, budget))
}

/// Stored optimum of an objective; never consumes budget.
pub fn known_optimum(objective: &Objective) -> (Vec<f64>, f64) {
    let (x, f) = objective.optimum();
    (x.to_vec(), f)
}

/// One row of the suite manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub name: &'static str,
    pub index: usize,
    pub bias: f64,
    pub lower: f64,
    pub upper: f64,
    pub dim: usize,
    pub shift: Vec<f64>,
    pub optimum_value: f64,
}

/// Describes every suite function defined in `dim` dimensions.
pub fn suite_manifest(dim: usize, shift_seed: u64) -> Vec<ManifestEntry> {
    FunctionKind::ALL
        .into_iter()
        .filter(|k| dim >= k.min_dim())
        .map(|kind| ManifestEntry {
            name: kind.name(),
            index: kind.index(),
            bias: kind.bias(),
            lower: SUITE_LOWER,
            upper: SUITE_UPPER,
            dim,
            shift: shift_from_seed(shift_seed, dim),
            optimum_value: kind.bias(),
        })
        .collect()
}
