//! UCB1 on finite arm sets, plus two naive optimizers for comparison runs:
//! uniform random search and UCB over a fixed grid of cells.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::objectives::{BlackBox, EvalError};
use crate::result::{rank_key, Recorder, RunResult};

/// Exploration constant in `sqrt(c · ln t / n)`.
pub const DEFAULT_EXPLORATION: f64 = 2.0;

/// Cap on the number of grid cells used by [`run_ucb_grid`].
pub const MAX_GRID_ARMS: usize = 729;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BanditError {
    #[error("arm {0} has never been pulled")]
    UnpulledArm(usize),
    #[error("no arms")]
    NoArms,
    #[error("no arm with index {0}")]
    UnknownArm(usize),
    #[error("horizon {horizon} is shorter than the number of arms {arms}")]
    HorizonTooShort { horizon: u64, arms: usize },
    #[error("grid resolution must be at least 1")]
    BadResolution,
    #[error(transparent)]
    Objective(#[from] EvalError),
}

/// Pull counts and empirical means.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmStats {
    pulls: Vec<u64>,
    means: Vec<f64>,
    t: u64,
}

impl ArmStats {
    pub fn new(arms: usize) -> Self {
        Self {
            pulls: vec![0; arms],
            means: vec![0.0; arms],
            t: 0,
        }
    }

    /// Stats as they would stand after the given pulls; `t` is their sum.
    pub fn from_counts(pulls: Vec<u64>, means: Vec<f64>) -> Self {
        assert_eq!(pulls.len(), means.len());
        let t = pulls.iter().sum();
        Self { pulls, means, t }
    }

    pub fn arms(&self) -> usize {
        self.pulls.len()
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn rounds(&self) -> u64 {
        self.t
    }

    pub fn record(&mut self, arm: usize, reward: f64) -> Result<(), BanditError> {
        let n = self.pulls.get_mut(arm).ok_or(BanditError::UnknownArm(arm))?;
        *n += 1;
        self.means[arm] += (reward - self.means[arm]) / *n as f64;
        self.t += 1;
        Ok(())
    }

    /// Upper confidence bound of one arm.
    pub fn ucb(&self, arm: usize, c: f64) -> f64 {
        let n = self.pulls[arm] as f64;
        self.means[arm] + (c * (self.t as f64).ln() / n).sqrt()
    }

    /// Arm with the highest empirical mean, lowest index on ties.
    pub fn best_mean(&self) -> Option<usize> {
        argmax((0..self.arms()).map(|k| self.means[k]))
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

/// Arm maximizing `mean_k + sqrt(c · ln t / n_k)`; lowest index on ties.
pub fn ucb_select(stats: &ArmStats, c: f64) -> Result<usize, BanditError> {
    if stats.arms() == 0 {
        return Err(BanditError::NoArms);
    }
    if let Some(k) = stats.pulls.iter().position(|&n| n == 0) {
        return Err(BanditError::UnpulledArm(k));
    }
    Ok(argmax((0..stats.arms()).map(|k| stats.ucb(k, c))).unwrap())
}

/// Something that yields a reward each time its arm is pulled.
pub trait RewardSource {
    fn pull(&mut self) -> f64;
}

impl<F: FnMut() -> f64> RewardSource for F {
    fn pull(&mut self) -> f64 {
        self()
    }
}

/// Bernoulli rewards from a seeded ChaCha stream.
#[derive(Debug, Clone)]
pub struct Bernoulli {
    p: f64,
    rng: ChaCha8Rng,
}

impl Bernoulli {
    pub fn new(p: f64, seed: u64) -> Self {
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl RewardSource for Bernoulli {
    fn pull(&mut self) -> f64 {
        if self.rng.gen::<f64>() < self.p {
            1.0
        } else {
            0.0
        }
    }
}

/// Always the same reward.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl RewardSource for Constant {
    fn pull(&mut self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UcbRun {
    /// `(arm, reward)` per round.
    pub history: Vec<(usize, f64)>,
    /// Arm with the highest empirical mean after the last round.
    pub recommendation: usize,
    pub stats: ArmStats,
}

/// Plays UCB for `horizon` rounds: each arm once in index order, then
/// [`ucb_select`] for the rest.
pub fn run_ucb<R: RewardSource>(
    sources: &mut [R],
    horizon: u64,
    c: f64,
) -> Result<UcbRun, BanditError> {
    let k = sources.len();
    if k == 0 {
        return Err(BanditError::NoArms);
    }
    if horizon < k as u64 {
        return Err(BanditError::HorizonTooShort { horizon, arms: k });
    }
    let mut stats = ArmStats::new(k);
    let mut history = Vec::with_capacity(horizon as usize);
    for round in 0..horizon {
        let arm = if round < k as u64 {
            round as usize
        } else {
            ucb_select(&stats, c)?
        };
        let reward = sources[arm].pull();
        stats.record(arm, reward)?;
        history.push((arm, reward));
    }
    Ok(UcbRun {
        history,
        recommendation: stats.best_mean().unwrap(),
        stats,
    })
}

/// Evaluates i.i.d. uniform points of the box; deterministic per seed.
pub fn run_random_search<O: BlackBox>(
    objective: &mut O,
    budget: u64,
    seed: u64,
) -> Result<RunResult, BanditError> {
    let budget = budget.min(objective.remaining());
    if budget == 0 {
        return Err(EvalError::BudgetExhausted {
            budget: objective.budget(),
        }
        .into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axes: Vec<Uniform<f64>> = objective
        .lower()
        .iter()
        .zip(objective.upper())
        .map(|(&l, &u)| Uniform::new_inclusive(l, u))
        .collect();
    let mut recorder = Recorder::new();
    let mut x = vec![0.0; axes.len()];
    for _ in 0..budget {
        for (xi, axis) in x.iter_mut().zip(&axes) {
            *xi = axis.sample(&mut rng);
        }
        let v = objective.evaluate(&x)?;
        recorder.observe(&x, v);
    }
    let optimum = objective.known_optimum().map(|(_, f)| f);
    Ok(RunResult::from_recorder(recorder, optimum).unwrap())
}

/// Cells per axis for a grid of at most [`MAX_GRID_ARMS`] cells: 3 when that
/// fits, otherwise the largest resolution that does.
pub fn default_grid_resolution(dim: usize) -> usize {
    let mut r = 3usize;
    while r > 1 && grid_size(r, dim).is_none_or(|n| n > MAX_GRID_ARMS) {
        r -= 1;
    }
    r
}

fn grid_size(resolution: usize, dim: usize) -> Option<usize> {
    (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(resolution))
}

/// UCB over the cells of a regular grid.
///
/// Pulling a cell evaluates a uniform point inside it; the reward is the
/// negated value. The exploration bonus is scaled by the range of values seen
/// so far so the rule is usable at any objective scale.
pub fn run_ucb_grid<O: BlackBox>(
    objective: &mut O,
    budget: u64,
    resolution: usize,
    seed: u64,
    c: f64,
) -> Result<RunResult, BanditError> {
    if resolution == 0 {
        return Err(BanditError::BadResolution);
    }
    let dim = objective.dim();
    let arms = grid_size(resolution, dim)
        .filter(|&n| n <= MAX_GRID_ARMS)
        .ok_or(BanditError::BadResolution)?;
    let budget = budget.min(objective.remaining());
    if budget == 0 {
        return Err(EvalError::BudgetExhausted {
            budget: objective.budget(),
        }
        .into());
    }
    let lower = objective.lower().to_vec();
    let width: Vec<f64> = objective
        .upper()
        .iter()
        .zip(&lower)
        .map(|(u, l)| (u - l) / resolution as f64)
        .collect();
    let upper = objective.upper().to_vec();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = ArmStats::new(arms);
    let mut recorder = Recorder::new();
    let (mut lo_seen, mut hi_seen) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut x = vec![0.0; dim];
    for round in 0..budget {
        let arm = if round < arms as u64 {
            round as usize
        } else {
            let scale = if hi_seen > lo_seen { hi_seen - lo_seen } else { 1.0 };
            argmax((0..arms).map(|k| {
                let n = stats.pulls[k] as f64;
                stats.means[k] + scale * (c * (stats.t as f64).ln() / n).sqrt()
            }))
            .unwrap()
        };
        let mut index = arm;
        for j in 0..dim {
            let cell = index % resolution;
            index /= resolution;
            let a = lower[j] + width[j] * cell as f64;
            let u: f64 = rng.gen();
            x[j] = (a + u * width[j]).clamp(lower[j], upper[j]);
        }
        let v = objective.evaluate(&x)?;
        recorder.observe(&x, v);
        let key = rank_key(v);
        // Non-finite values count as the worst value seen.
        let reward = if key.is_finite() {
            lo_seen = lo_seen.min(key);
            hi_seen = hi_seen.max(key);
            -key
        } else {
            -hi_seen.max(lo_seen)
        };
        stats.record(arm, if reward.is_finite() { reward } else { 0.0 })?;
    }
    let optimum = objective.known_optimum().map(|(_, f)| f);
    Ok(RunResult::from_recorder(recorder, optimum).unwrap())
}
