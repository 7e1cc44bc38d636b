use serde::{Deserialize, Serialize};

/// Best-so-far value after a given evaluation (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub eval_index: u64,
    pub best_value: f64,
}

/// Comparison key for objective values: non-finite values rank as +inf.
pub(crate) fn rank_key(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Incumbent tracker that records one trace point per evaluation.
#[derive(Debug, Clone, Default)]
pub struct Recorder {
    best: Option<(Vec<f64>, f64)>,
    trace: Vec<TracePoint>,
    offset: u64,
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Continues an existing run: indices start after `prior.evals_used` and
    /// the incumbent starts at `prior`'s best.
    pub fn resume(prior: &RunResult) -> Self {
        Self {
            best: Some((prior.best_point.clone(), prior.best_value)),
            trace: Vec::new(),
            offset: prior.evals_used,
        }
    }

    /// Records an evaluation; returns true if it became the incumbent.
    pub fn observe(&mut self, x: &[f64], value: f64) -> bool {
        let improved = match &self.best {
            None => true,
            Some((_, best)) => rank_key(value) < rank_key(*best),
        };
        if improved {
            self.best = Some((x.to_vec(), value));
        }
        let best_value = self.best.as_ref().map(|b| b.1).unwrap();
        self.trace.push(TracePoint {
            eval_index: self.offset + self.trace.len() as u64 + 1,
            best_value,
        });
        improved
    }

    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best.as_ref().map(|(x, v)| (x.as_slice(), *v))
    }

    pub fn evals(&self) -> u64 {
        self.trace.len() as u64
    }

    pub fn trace(&self) -> &[TracePoint] {
        &self.trace
    }

    pub fn into_parts(self) -> (Option<(Vec<f64>, f64)>, Vec<TracePoint>) {
        (self.best, self.trace)
    }
}

/// Outcome of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub evals_used: u64,
    pub trace: Vec<TracePoint>,
    /// `best_value / f*`, when the objective's optimum is known.
    pub ratio: Option<f64>,
}

impl RunResult {
    pub fn from_recorder(recorder: Recorder, optimum_value: Option<f64>) -> Option<Self> {
        let (best, trace) = recorder.into_parts();
        let (best_point, best_value) = best?;
        Some(Self {
            best_point,
            best_value,
            evals_used: trace.len() as u64,
            ratio: optimum_value.map(|f| best_value / f),
            trace,
        })
    }

    /// Gap to a known optimum value.
    pub fn error(&self, optimum_value: f64) -> f64 {
        self.best_value - optimum_value
    }

    /// True if the best-so-far values never increase.
    pub fn trace_is_monotone(&self) -> bool {
        self.trace
            .windows(2)
            .all(|w| rank_key(w[1].best_value) <= rank_key(w[0].best_value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recorder_tracks_best_so_far() {
        let mut r = Recorder::new();
        assert!(r.observe(&[0.0], 3.0));
        assert!(!r.observe(&[1.0], 4.0));
        assert!(r.observe(&[2.0], 1.0));
        assert!(!r.observe(&[3.0], 1.0));
        let values: Vec<f64> = r.trace().iter().map(|p| p.best_value).collect();
        assert_eq!(values, [3.0, 3.0, 1.0, 1.0]);
        assert_eq!(r.best(), Some((&[2.0][..], 1.0)));
        let res = RunResult::from_recorder(r, Some(0.5)).unwrap();
        assert_eq!(res.evals_used, 4);
        assert_eq!(res.ratio, Some(2.0));
        assert!(res.trace_is_monotone());
    }

    #[test]
    fn nan_never_displaces_a_finite_incumbent() {
        let mut r = Recorder::new();
        r.observe(&[0.0], f64::NAN);
        assert!(r.observe(&[1.0], 1e300));
        assert!(!r.observe(&[2.0], f64::NAN));
        assert_eq!(r.best().unwrap().1, 1e300);
    }

    #[test]
    fn resume_continues_indices() {
        let mut r = Recorder::new();
        r.observe(&[0.0], 2.0);
        r.observe(&[0.5], 1.0);
        let prior = RunResult::from_recorder(r, None).unwrap();
        let mut r2 = Recorder::resume(&prior);
        r2.observe(&[0.7], 1.5);
        assert_eq!(
            r2.trace(),
            [TracePoint {
                eval_index: 3,
                best_value: 1.0
            }]
        );
    }
}
