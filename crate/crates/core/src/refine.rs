//! Local refinement of the SOO incumbent with a bounded Nelder–Mead simplex.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::objectives::{check_in_box, BlackBox, EvalError};
use crate::result::{rank_key, Recorder, RunResult};
use crate::tree::{run_soo_tree, SooError, SooParams};

/// Share of the budget the hybrid pipeline reserves for refinement.
pub const DEFAULT_REFINE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error("invalid Nelder-Mead parameters: {0}")]
    InvalidParams(&'static str),
    #[error("refinement fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("need at least {needed} evaluations for the initial simplex, got {got}")]
    TooFewEvals { needed: u64, got: u64 },
    #[error(transparent)]
    Objective(#[from] EvalError),
    #[error(transparent)]
    Soo(#[from] SooError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmParams {
    /// Reflection.
    pub alpha: f64,
    /// Expansion.
    pub gamma: f64,
    /// Contraction.
    pub rho: f64,
    /// Shrink.
    pub sigma: f64,
    /// Initial edge length as a fraction of the box width.
    pub init_scale: f64,
    /// Stop once `max - min` over the simplex values is at most this.
    pub tol: f64,
}

impl Default for NmParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 2.0,
            rho: 0.5,
            sigma: 0.5,
            init_scale: 0.05,
            tol: 1e-12,
        }
    }
}

impl NmParams {
    pub fn validate(&self) -> Result<(), RefineError> {
        let checks = [
            (self.alpha > 0.0, "alpha must be positive"),
            (self.gamma > 1.0, "gamma must exceed 1"),
            (self.rho > 0.0 && self.rho < 1.0, "rho must lie in (0, 1)"),
            (self.sigma > 0.0 && self.sigma < 1.0, "sigma must lie in (0, 1)"),
            (
                self.init_scale > 0.0 && self.init_scale < 0.5,
                "init_scale must lie in (0, 0.5)",
            ),
            (self.tol >= 0.0, "tol must be non-negative"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(RefineError::InvalidParams(msg)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmOutcome {
    pub point: Vec<f64>,
    pub value: f64,
    pub evals_used: u64,
    /// The objective ran out of budget before `max_evals` was reached.
    pub budget_exhausted: bool,
    pub restarted: bool,
}

/// A derivative-free local optimizer usable as the refinement stage.
pub trait Refiner {
    /// Minimizes from `x0` with at most `max_evals` evaluations, reporting
    /// every evaluation to `recorder`.
    fn refine<O: BlackBox>(
        &self,
        objective: &mut O,
        x0: &[f64],
        max_evals: u64,
        recorder: &mut Recorder,
    ) -> Result<NmOutcome, RefineError>;
}

impl Refiner for NmParams {
    fn refine<O: BlackBox>(
        &self,
        objective: &mut O,
        x0: &[f64],
        max_evals: u64,
        recorder: &mut Recorder,
    ) -> Result<NmOutcome, RefineError> {
        Simplex::run(objective, x0, max_evals, self, recorder)
    }
}

/// Runs Nelder–Mead from `x0`.
pub fn nelder_mead<O: BlackBox>(
    objective: &mut O,
    x0: &[f64],
    max_evals: u64,
    params: &NmParams,
) -> Result<NmOutcome, RefineError> {
    params.refine(objective, x0, max_evals, &mut Recorder::new())
}

/// Signals that no more evaluations are allowed.
struct OutOfEvals;

type Vertex = (Vec<f64>, f64);

struct Simplex<'a, O> {
    objective: &'a mut O,
    recorder: &'a mut Recorder,
    lower: Vec<f64>,
    upper: Vec<f64>,
    max_evals: u64,
    used: u64,
    exhausted: bool,
    best: Option<(Vec<f64>, f64)>,
}

impl<'a, O: BlackBox> Simplex<'a, O> {
    fn run(
        objective: &'a mut O,
        x0: &[f64],
        max_evals: u64,
        params: &NmParams,
        recorder: &'a mut Recorder,
    ) -> Result<NmOutcome, RefineError> {
        params.validate()?;
        let lower = objective.lower().to_vec();
        let upper = objective.upper().to_vec();
        check_in_box(&lower, &upper, x0)?;
        let dim = x0.len();
        let needed = dim as u64 + 1;
        if max_evals < needed {
            return Err(RefineError::TooFewEvals {
                needed,
                got: max_evals,
            });
        }
        let mut nm = Simplex {
            objective,
            recorder,
            lower,
            upper,
            max_evals,
            used: 0,
            exhausted: false,
            best: None,
        };
        let mut restarted = false;
        let _ = nm.iterate(x0, params, &mut restarted)?;
        let (point, value) = match nm.best {
            Some(b) => b,
            None => return Err(EvalError::BudgetExhausted { budget: nm.objective.budget() }.into()),
        };
        Ok(NmOutcome {
            point,
            value,
            evals_used: nm.used,
            budget_exhausted: nm.exhausted,
            restarted,
        })
    }

    fn clamp(&self, mut x: Vec<f64>) -> Vec<f64> {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
        x
    }

    fn eval(&mut self, x: Vec<f64>) -> Result<Result<Vertex, OutOfEvals>, RefineError> {
        if self.used >= self.max_evals {
            return Ok(Err(OutOfEvals));
        }
        let x = self.clamp(x);
        let value = match self.objective.evaluate(&x) {
            Ok(v) => v,
            Err(EvalError::BudgetExhausted { .. }) => {
                self.exhausted = true;
                return Ok(Err(OutOfEvals));
            }
            Err(e) => return Err(e.into()),
        };
        self.used += 1;
        self.recorder.observe(&x, value);
        let better = match &self.best {
            None => true,
            Some((_, b)) => rank_key(value) < rank_key(*b),
        };
        if better {
            self.best = Some((x.clone(), value));
        }
        Ok(Ok((x, value)))
    }

    fn initial(&mut self, x0: &[f64], scale: f64) -> Result<Result<Vec<Vertex>, OutOfEvals>, RefineError> {
        let mut vertices = Vec::with_capacity(x0.len() + 1);
        match self.eval(x0.to_vec())? {
            Ok(v) => vertices.push(v),
            Err(stop) => return Ok(Err(stop)),
        }
        for j in 0..x0.len() {
            let step = scale * (self.upper[j] - self.lower[j]);
            let mut x = x0.to_vec();
            x[j] = if x0[j] + step <= self.upper[j] {
                x0[j] + step
            } else {
                x0[j] - step
            };
            match self.eval(x)? {
                Ok(v) => vertices.push(v),
                Err(stop) => return Ok(Err(stop)),
            }
        }
        Ok(Ok(vertices))
    }

    fn iterate(
        &mut self,
        x0: &[f64],
        params: &NmParams,
        restarted: &mut bool,
    ) -> Result<Result<(), OutOfEvals>, RefineError> {
        macro_rules! eval_or_stop {
            ($x:expr) => {
                match self.eval($x)? {
                    Ok(v) => v,
                    Err(stop) => return Ok(Err(stop)),
                }
            };
        }

        let mut simplex = match self.initial(x0, params.init_scale)? {
            Ok(s) => s,
            Err(stop) => return Ok(Err(stop)),
        };
        let n = x0.len();
        let mut initial_volume = volume(&simplex);

        loop {
            simplex.sort_by(|a, b| rank_key(a.1).total_cmp(&rank_key(b.1)));
            let spread = rank_key(simplex[n].1) - rank_key(simplex[0].1);
            if spread <= params.tol {
                return Ok(Ok(()));
            }
            if !*restarted && volume(&simplex) < 1e-30 * initial_volume {
                *restarted = true;
                let (x, _) = self.best.clone().unwrap();
                simplex = match self.initial(&x, params.init_scale / 10.0)? {
                    Ok(s) => s,
                    Err(stop) => return Ok(Err(stop)),
                };
                initial_volume = volume(&simplex);
                continue;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|v| v.0[j]).sum::<f64>() / n as f64)
                .collect();
            let toward = |from: &[f64], coeff: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(from)
                    .map(|(c, p)| c + coeff * (p - c))
                    .collect()
            };

            let worst = simplex[n].clone();
            let best_val = rank_key(simplex[0].1);
            let second_worst = rank_key(simplex[n - 1].1);
            let reflected = eval_or_stop!(toward(&worst.0, -params.alpha));
            let fr = rank_key(reflected.1);

            if fr < best_val {
                let expanded = eval_or_stop!(toward(&reflected.0, params.gamma));
                simplex[n] = if rank_key(expanded.1) < fr {
                    expanded
                } else {
                    reflected
                };
                continue;
            }
            if fr < second_worst {
                simplex[n] = reflected;
                continue;
            }
            let contracted = if fr < rank_key(worst.1) {
                let c = eval_or_stop!(toward(&reflected.0, params.rho));
                (rank_key(c.1) <= fr).then_some(c)
            } else {
                let c = eval_or_stop!(toward(&worst.0, params.rho));
                (rank_key(c.1) < rank_key(worst.1)).then_some(c)
            };
            if let Some(c) = contracted {
                simplex[n] = c;
                continue;
            }
            let anchor = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                let x: Vec<f64> = anchor
                    .iter()
                    .zip(&vertex.0)
                    .map(|(a, v)| a + params.sigma * (v - a))
                    .collect();
                *vertex = eval_or_stop!(x);
            }
        }
    }
}

/// `|det|` of the edge matrix; proportional to the simplex volume.
fn volume(simplex: &[(Vec<f64>, f64)]) -> f64 {
    let n = simplex.len() - 1;
    let origin = &simplex[0].0;
    let edges = DMatrix::from_fn(n, n, |i, j| simplex[j + 1].0[i] - origin[i]);
    edges.determinant().abs()
}

/// Number of evaluations reserved for refinement out of `budget`.
pub fn reserved_evals(budget: u64, fraction: f64) -> u64 {
    ((fraction * budget as f64).ceil() as u64).min(budget)
}

/// Refines the best point of a finished run with Nelder–Mead.
///
/// The refiner gets `ceil(fraction · budget)` evaluations, capped by what the
/// objective has left. The merged result keeps whichever best is lower and
/// appends the refinement evaluations to the trace.
pub fn refine_run<O: BlackBox>(
    soo_result: &RunResult,
    objective: &mut O,
    fraction: f64,
) -> Result<RunResult, RefineError> {
    refine_run_with(&NmParams::default(), soo_result, objective, fraction)
}

pub fn refine_run_with<O: BlackBox, R: Refiner>(
    refiner: &R,
    soo_result: &RunResult,
    objective: &mut O,
    fraction: f64,
) -> Result<RunResult, RefineError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(RefineError::InvalidFraction(fraction));
    }
    let max_evals = reserved_evals(objective.budget(), fraction).min(objective.remaining());
    if max_evals < objective.dim() as u64 + 1 {
        return Ok(soo_result.clone());
    }
    let mut recorder = Recorder::resume(soo_result);
    refiner.refine(objective, &soo_result.best_point, max_evals, &mut recorder)?;
    let (best, tail) = recorder.into_parts();
    let (best_point, best_value) = best.expect("resumed recorder has a best");
    let mut trace = soo_result.trace.clone();
    trace.extend(tail);
    Ok(RunResult {
        best_point,
        best_value,
        evals_used: trace.len() as u64,
        ratio: objective.known_optimum().map(|(_, f)| best_value / f),
        trace,
    })
}

/// SOO on `budget - ceil(fraction · budget)` evaluations, then Nelder–Mead on
/// the reserved remainder.
pub fn run_hybrid<O: BlackBox>(
    objective: &mut O,
    budget: u64,
    params: SooParams,
    fraction: f64,
) -> Result<RunResult, RefineError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(RefineError::InvalidFraction(fraction));
    }
    let budget = budget.min(objective.remaining());
    let reserve = reserved_evals(budget, fraction);
    let soo_budget = (budget - reserve).max(1);
    let soo = run_soo_tree(&mut *objective, soo_budget, params)?.result()?;
    let max_evals = (budget - soo.evals_used).min(reserve).min(objective.remaining());
    if max_evals < objective.dim() as u64 + 1 {
        return Ok(soo);
    }
    let mut recorder = Recorder::resume(&soo);
    NmParams::default().refine(objective, &soo.best_point, max_evals, &mut recorder)?;
    let (best, tail) = recorder.into_parts();
    let (best_point, best_value) = best.expect("resumed recorder has a best");
    let mut trace = soo.trace;
    trace.extend(tail);
    Ok(RunResult {
        best_point,
        best_value,
        evals_used: trace.len() as u64,
        ratio: objective.known_optimum().map(|(_, f)| best_value / f),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_objective, Metered, Shift};

    fn sphere2(budget: u64) -> crate::Objective {
        make_objective("sphere", 2, Shift::Explicit(vec![0.2, 0.2]), budget).unwrap()
    }

    #[test]
    fn converges_on_shifted_sphere() {
        let mut obj = sphere2(1000);
        let out = nelder_mead(&mut obj, &[0.5, 0.5], 200, &NmParams::default()).unwrap();
        assert!(out.value - 100.0 <= 1e-8, "{}", out.value);
        assert!(out.evals_used <= 200);
        assert_eq!(obj.evals(), out.evals_used);
    }

    #[test]
    fn never_worse_than_start() {
        let mut obj = sphere2(1000);
        let out = nelder_mead(&mut obj, &[0.2, 0.2], 100, &NmParams::default()).unwrap();
        assert_eq!(out.value, 100.0);
    }

    #[test]
    fn minimal_budget_evaluates_initial_simplex_only() {
        let mut obj = sphere2(1000);
        let out = nelder_mead(&mut obj, &[0.5, 0.5], 3, &NmParams::default()).unwrap();
        assert_eq!(out.evals_used, 3);
        // Vertices: (0.5,0.5), (1.0,0.5), (0.5,1.0); the first is best.
        assert_eq!(out.point, [0.5, 0.5]);
        assert!(matches!(
            nelder_mead(&mut obj, &[0.5, 0.5], 2, &NmParams::default()),
            Err(RefineError::TooFewEvals { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn initial_vertices_reflect_inward_at_the_edge() {
        let mut obj = sphere2(1000);
        let mut rec = Recorder::new();
        NmParams::default()
            .refine(&mut obj, &[5.0, 4.9], 3, &mut rec)
            .unwrap();
        // Vertices (5, 4.9), (4.5, 4.9), (5, 4.4); the second is closest to the shift.
        assert_eq!(rec.best().unwrap().0, [4.5, 4.9]);
        assert_eq!(rec.evals(), 3);
    }

    #[test]
    fn rejects_bad_params() {
        let mut obj = sphere2(100);
        for p in [
            NmParams { alpha: 0.0, ..NmParams::default() },
            NmParams { gamma: 1.0, ..NmParams::default() },
            NmParams { rho: 1.0, ..NmParams::default() },
            NmParams { sigma: 0.0, ..NmParams::default() },
            NmParams { init_scale: 0.5, ..NmParams::default() },
        ] {
            assert!(matches!(
                nelder_mead(&mut obj, &[0.0, 0.0], 50, &p),
                Err(RefineError::InvalidParams(_))
            ));
        }
        assert!(matches!(
            nelder_mead(&mut obj, &[9.0, 0.0], 50, &NmParams::default()),
            Err(RefineError::Objective(EvalError::OutOfBounds { .. }))
        ));
        assert_eq!(obj.evals(), 0);
    }

    #[test]
    fn every_evaluated_point_is_in_the_box() {
        // Minimum outside the box pulls the simplex into the boundary.
        let obj = Metered::new(vec![0.0, 0.0], vec![1.0, 1.0], 500, |x: &[f64]| {
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)), "{x:?}");
            (x[0] - 3.0).powi(2) + (x[1] + 2.0).powi(2)
        });
        let mut obj = obj;
        let out = nelder_mead(&mut obj, &[0.5, 0.5], 500, &NmParams::default()).unwrap();
        assert!((out.point[0] - 1.0).abs() < 1e-6 && out.point[1].abs() < 1e-6);
    }

    #[test]
    fn objective_budget_exhaustion_returns_best_so_far() {
        let mut obj = sphere2(10);
        let out = nelder_mead(&mut obj, &[0.5, 0.5], 100, &NmParams::default()).unwrap();
        assert!(out.budget_exhausted);
        assert_eq!(out.evals_used, 10);
        assert!(out.value < 100.18);
    }

    #[test]
    fn collapsed_simplex_restarts_once() {
        // Flat along dimension 1 in half the box: the simplex flattens.
        let mut obj = Metered::new(vec![-1.0, -1.0], vec![1.0, 1.0], 5000, |x: &[f64]| {
            x[0].abs() + if x[1] > 0.0 { 0.0 } else { 1.0 } * x[1].abs()
        });
        let params = NmParams { tol: 0.0, ..NmParams::default() };
        let out = nelder_mead(&mut obj, &[0.5, 0.5], 5000, &params).unwrap();
        assert!(out.value <= 0.5);
    }

    #[test]
    fn reserve_is_five_percent() {
        assert_eq!(reserved_evals(100_000, 0.05), 5000);
        assert_eq!(reserved_evals(101, 0.05), 6);
        assert_eq!(reserved_evals(1, 0.05), 1);
    }

    #[test]
    fn refine_run_merges_by_minimum() {
        let mut obj = sphere2(1000);
        let soo = crate::tree::run_soo(&mut obj, 50, SooParams::default()).unwrap();
        let merged = refine_run(&soo, &mut obj, 0.05).unwrap();
        assert!(merged.best_value <= soo.best_value);
        assert_eq!(&merged.trace[..soo.trace.len()], soo.trace.as_slice());
        assert_eq!(merged.evals_used, soo.evals_used + 50);
        assert!(merged.trace_is_monotone());
        assert!(merged.trace.iter().enumerate().all(|(i, p)| p.eval_index == i as u64 + 1));
    }

    #[test]
    fn refine_run_keeps_soo_best_when_refiner_is_worse() {
        // Claimed SOO best is better than anything the refiner can find.
        let mut obj = sphere2(1000);
        let fake = RunResult {
            best_point: vec![3.0, 3.0],
            best_value: 50.0,
            evals_used: 1,
            trace: vec![crate::TracePoint { eval_index: 1, best_value: 50.0 }],
            ratio: None,
        };
        let merged = refine_run(&fake, &mut obj, 0.05).unwrap();
        assert_eq!(merged.best_value, 50.0);
        assert_eq!(merged.best_point, [3.0, 3.0]);
        assert!(matches!(
            refine_run(&fake, &mut obj, 1.0),
            Err(RefineError::InvalidFraction(_))
        ));
    }

    #[test]
    fn hybrid_respects_budget_split() {
        let mut obj = make_objective("rastrigin", 3, Shift::Seed(4), 2000).unwrap();
        let res = run_hybrid(&mut obj, 2000, SooParams::default(), 0.05).unwrap();
        assert!(res.evals_used <= 2000);
        assert_eq!(obj.evals(), res.evals_used);
        let refine_evals = res.trace.iter().filter(|p| p.eval_index > 1899).count();
        assert!(refine_evals <= 100);
    }
}
