//! Simultaneous optimistic optimization over a hierarchical partition.
//!
//! The search box is the root cell. Splitting a cell cuts it into `S` equal
//! slabs along its split dimension; the middle slab keeps the parent's center
//! and value, so a split costs `S - 1` evaluations. Each sweep walks the depths
//! from the root down and splits the best leaf of a depth only if it beats
//! every leaf split earlier in the same sweep.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use thiserror::Error;

use crate::objectives::{BlackBox, EvalError, Negated};
use crate::result::{rank_key, Recorder, RunResult, TracePoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SooError {
    #[error("invalid search box: {0}")]
    InvalidBounds(String),
    #[error("number of children must be odd and at least 3, got {0}")]
    InvalidChildren(usize),
    #[error("evaluation budget exhausted")]
    BudgetExhausted,
    #[error("cell {0} is not a leaf")]
    NotALeaf(usize),
    #[error("no cell with id {0}")]
    UnknownCell(usize),
    #[error("cell {0} is too small to split in floating point")]
    CellTooSmall(usize),
    #[error("every evaluated value was non-finite")]
    ObjectiveDegenerate,
    #[error(transparent)]
    Objective(EvalError),
}

impl From<EvalError> for SooError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::BudgetExhausted { .. } => SooError::BudgetExhausted,
            other => SooError::Objective(other),
        }
    }
}

/// Cap on tree depth as a function of the evaluations consumed so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthSchedule {
    /// `max(1, floor((ln t)^{3/2}))`.
    #[default]
    Log32,
    Constant(usize),
    Unbounded,
}

impl DepthSchedule {
    pub fn max_depth(self, evals: u64) -> usize {
        match self {
            DepthSchedule::Log32 => max_depth(evals),
            DepthSchedule::Constant(h) => h,
            DepthSchedule::Unbounded => usize::MAX,
        }
    }
}

/// `max(1, floor((ln t)^{3/2}))`, natural logarithm.
pub fn max_depth(evals: u64) -> usize {
    let ln = (evals.max(1) as f64).ln();
    let h = (ln * ln * ln).sqrt().floor() as usize;
    h.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SooParams {
    pub s_children: usize,
    pub depth_schedule: DepthSchedule,
    pub minimize: bool,
}

impl Default for SooParams {
    fn default() -> Self {
        Self {
            s_children: 3,
            depth_schedule: DepthSchedule::Log32,
            minimize: true,
        }
    }
}

impl SooParams {
    pub fn new(s_children: usize, depth_schedule: DepthSchedule) -> Result<Self, SooError> {
        let params = Self {
            s_children,
            depth_schedule,
            minimize: true,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), SooError> {
        if self.s_children < 3 || self.s_children.is_multiple_of(2) {
            return Err(SooError::InvalidChildren(self.s_children));
        }
        Ok(())
    }
}

/// A hyper-rectangle of the partition, represented by its center.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: usize,
    pub depth: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub center: Vec<f64>,
    pub value: f64,
    pub split_dim: usize,
    pub is_leaf: bool,
}

impl Cell {
    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }
}

/// Ordering key of a leaf within its depth: value first, then age.
#[derive(Debug, Clone, Copy)]
struct LeafKey {
    value: f64,
    id: usize,
}

impl LeafKey {
    fn new(value: f64, id: usize) -> Self {
        // +0.0 folds -0.0 into 0.0 so the order agrees with `<`.
        Self {
            value: rank_key(value) + 0.0,
            id,
        }
    }
}

impl Ord for LeafKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for LeafKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for LeafKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for LeafKey {}

/// What a sweep did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SweepOutcome {
    /// Ids of the cells split, in order.
    pub split: Vec<usize>,
    /// The sweep stopped because the next split did not fit in the budget.
    pub budget_exhausted: bool,
}

/// The SOO tree. Owns its objective for the duration of a run.
#[derive(Debug)]
pub struct PartitionTree<O> {
    cells: Vec<Cell>,
    leaves_by_depth: Vec<BTreeSet<LeafKey>>,
    // Leaves whose slabs would collapse in floating point; still part of the
    // partition but never selected again.
    frozen: Vec<usize>,
    dim: usize,
    params: SooParams,
    cap: u64,
    objective: O,
    recorder: Recorder,
    incumbent_id: usize,
    split_log: Vec<usize>,
}

impl<O: BlackBox> PartitionTree<O> {
    /// Builds the root cell over the objective's box and evaluates its center.
    pub fn new(objective: O, params: SooParams) -> Result<Self, SooError> {
        let cap = objective.budget();
        Self::with_budget(objective, params, cap)
    }

    /// Like [`PartitionTree::new`], but never spends more than `budget`
    /// evaluations even if the objective would allow it.
    pub fn with_budget(mut objective: O, params: SooParams, budget: u64) -> Result<Self, SooError> {
        params.validate()?;
        let lower = objective.lower().to_vec();
        let upper = objective.upper().to_vec();
        validate_box(&lower, &upper)?;
        if budget == 0 || objective.remaining() == 0 {
            return Err(SooError::BudgetExhausted);
        }
        let center = midpoint(&lower, &upper);
        let value = objective.evaluate(&center)?;
        let mut recorder = Recorder::new();
        recorder.observe(&center, value);
        let root = Cell {
            id: 0,
            depth: 0,
            lower,
            upper,
            center,
            value,
            split_dim: 0,
            is_leaf: true,
        };
        let mut leaves = BTreeSet::new();
        leaves.insert(LeafKey::new(value, 0));
        Ok(Self {
            dim: root.lower.len(),
            cells: vec![root],
            leaves_by_depth: vec![leaves],
            frozen: Vec::new(),
            params,
            cap: budget,
            objective,
            recorder,
            incumbent_id: 0,
            split_log: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &SooParams {
        &self.params
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, id: usize) -> Option<&Cell> {
        self.cells.get(id)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Cell> + '_ {
        self.cells.iter().filter(|c| c.is_leaf)
    }

    /// Ids of selectable leaves at `depth`, best first.
    pub fn leaves_at(&self, depth: usize) -> Vec<usize> {
        self.leaves_by_depth
            .get(depth)
            .map(|s| s.iter().map(|k| k.id).collect())
            .unwrap_or_default()
    }

    pub fn eval_count(&self) -> u64 {
        self.recorder.evals()
    }

    pub fn splits_performed(&self) -> usize {
        self.split_log.len()
    }

    /// Ids of every split cell, in split order.
    pub fn split_log(&self) -> &[usize] {
        &self.split_log
    }

    pub fn trace(&self) -> &[TracePoint] {
        self.recorder.trace()
    }

    pub fn objective(&self) -> &O {
        &self.objective
    }

    pub fn into_objective(self) -> O {
        self.objective
    }

    /// Best evaluated center; ties go to the oldest cell.
    pub fn incumbent(&self) -> (&[f64], f64, usize) {
        let cell = &self.cells[self.incumbent_id];
        (&cell.center, cell.value, cell.id)
    }

    fn can_afford_split(&self) -> bool {
        let cost = (self.params.s_children - 1) as u64;
        self.eval_count() + cost <= self.cap && self.objective.remaining() >= cost
    }

    /// Splits a leaf into `S` children along its split dimension.
    ///
    /// Nothing is evaluated or mutated unless the whole split fits in the
    /// remaining budget.
    pub fn split_leaf(&mut self, leaf_id: usize) -> Result<Vec<usize>, SooError> {
        let parent = self.cells.get(leaf_id).ok_or(SooError::UnknownCell(leaf_id))?;
        if !parent.is_leaf {
            return Err(SooError::NotALeaf(leaf_id));
        }
        let s = self.params.s_children;
        let j = parent.split_dim;
        let (lo, hi) = (parent.lower[j], parent.upper[j]);
        let width = hi - lo;
        let edges: Vec<f64> = (0..=s)
            .map(|k| match k {
                0 => lo,
                k if k == s => hi,
                k => lo + width * k as f64 / s as f64,
            })
            .collect();
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SooError::CellTooSmall(leaf_id));
        }
        if !self.can_afford_split() {
            return Err(SooError::BudgetExhausted);
        }

        let middle = s / 2;
        let depth = parent.depth + 1;
        let split_dim = (j + 1) % self.dim;
        let mut children = Vec::with_capacity(s);
        for k in 0..s {
            let mut lower = parent.lower.clone();
            let mut upper = parent.upper.clone();
            lower[j] = edges[k];
            upper[j] = edges[k + 1];
            // The middle child shares the parent's center; every evaluated
            // center is the exact midpoint of its own bounds.
            let center = if k == middle {
                parent.center.clone()
            } else {
                midpoint(&lower, &upper)
            };
            children.push(Cell {
                id: 0,
                depth,
                lower,
                upper,
                center,
                value: parent.value,
                split_dim,
                is_leaf: true,
            });
        }

        let mut values = Vec::with_capacity(s - 1);
        for (k, child) in children.iter().enumerate() {
            if k != middle {
                values.push(self.objective.evaluate(&child.center)?);
            }
        }

        let parent_key = LeafKey::new(parent.value, leaf_id);
        let parent_depth = parent.depth;
        self.leaves_by_depth[parent_depth].remove(&parent_key);
        self.cells[leaf_id].is_leaf = false;
        if self.leaves_by_depth.len() <= depth {
            self.leaves_by_depth.push(BTreeSet::new());
        }

        let mut values = values.into_iter();
        let mut ids = Vec::with_capacity(s);
        for (k, mut child) in children.into_iter().enumerate() {
            child.id = self.cells.len();
            if k != middle {
                child.value = values.next().unwrap();
                if self.recorder.observe(&child.center, child.value) {
                    self.incumbent_id = child.id;
                }
            }
            self.leaves_by_depth[depth].insert(LeafKey::new(child.value, child.id));
            ids.push(child.id);
            self.cells.push(child);
        }
        self.split_log.push(leaf_id);
        Ok(ids)
    }

    /// One pass over the depths, splitting at most one leaf per depth.
    pub fn sweep(&mut self) -> Result<SweepOutcome, SooError> {
        let h_max = self.params.depth_schedule.max_depth(self.eval_count());
        let mut outcome = SweepOutcome::default();
        let mut v_min = f64::INFINITY;
        // Children created during this sweep are not revisited until the next one.
        let last = (self.leaves_by_depth.len() - 1).min(h_max);
        let mut h = 0;
        while h <= last {
            let Some(best) = self.leaves_by_depth[h].first().copied() else {
                h += 1;
                continue;
            };
            if best.value >= v_min {
                h += 1;
                continue;
            }
            match self.split_leaf(best.id) {
                Ok(_) => {
                    outcome.split.push(best.id);
                    v_min = best.value;
                    h += 1;
                }
                Err(SooError::CellTooSmall(id)) => {
                    // Retry this depth with the next-best leaf.
                    self.leaves_by_depth[h].remove(&best);
                    self.frozen.push(id);
                }
                Err(SooError::BudgetExhausted) => {
                    outcome.budget_exhausted = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(outcome)
    }

    /// Sweeps until the budget runs out or a sweep splits nothing.
    pub fn run(&mut self) -> Result<(), SooError> {
        loop {
            let outcome = self.sweep()?;
            if outcome.budget_exhausted || outcome.split.is_empty() {
                return Ok(());
            }
        }
    }

    /// Leaves that could not be split because they are at floating-point resolution.
    pub fn frozen(&self) -> &[usize] {
        &self.frozen
    }

    pub fn result(&self) -> Result<RunResult, SooError> {
        let (point, value, _) = self.incumbent();
        if !value.is_finite() {
            return Err(SooError::ObjectiveDegenerate);
        }
        let optimum = self.objective.known_optimum().map(|(_, f)| f);
        Ok(RunResult {
            best_point: point.to_vec(),
            best_value: value,
            evals_used: self.eval_count(),
            trace: self.trace().to_vec(),
            ratio: optimum.map(|f| value / f),
        })
    }
}

fn midpoint(lower: &[f64], upper: &[f64]) -> Vec<f64> {
    lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect()
}

fn validate_box(lower: &[f64], upper: &[f64]) -> Result<(), SooError> {
    if lower.is_empty() || lower.len() != upper.len() {
        return Err(SooError::InvalidBounds(format!(
            "bound vectors have lengths {} and {}",
            lower.len(),
            upper.len()
        )));
    }
    for (j, (l, u)) in lower.iter().zip(upper).enumerate() {
        if !l.is_finite() || !u.is_finite() || l >= u {
            return Err(SooError::InvalidBounds(format!(
                "dimension {j}: [{l}, {u}]"
            )));
        }
    }
    Ok(())
}

/// Runs SOO with the tree kept for inspection. Minimizes regardless of
/// `params.minimize`.
pub fn run_soo_tree<O: BlackBox>(
    objective: O,
    budget: u64,
    params: SooParams,
) -> Result<PartitionTree<O>, SooError> {
    let mut tree = PartitionTree::with_budget(objective, params, budget)?;
    tree.run()?;
    Ok(tree)
}

/// Optimizes `objective` with at most `budget` evaluations.
///
/// With `params.minimize == false` the objective is maximized; reported values
/// are in the objective's own sign.
pub fn run_soo<O: BlackBox>(
    objective: O,
    budget: u64,
    params: SooParams,
) -> Result<RunResult, SooError> {
    if params.minimize {
        return run_soo_tree(objective, budget, params)?.result();
    }
    let optimum = objective.known_optimum().map(|(_, f)| f);
    let tree = run_soo_tree(Negated(objective), budget, params)?;
    let mut result = tree.result()?;
    result.best_value = -result.best_value;
    for p in &mut result.trace {
        p.best_value = -p.best_value;
    }
    result.ratio = optimum.map(|f| result.best_value / f);
    Ok(result)
}
