use proptest::prelude::*;

use soo::baselines::{ucb_select, ArmStats};
use soo::objectives::{
    make_suite_objective, shift_from_seed, BlackBox, EvalError, FunctionKind, Metered, Shift,
    SuiteFunction,
};
use soo::refine::{nelder_mead, refine_run, run_hybrid, NmParams};
use soo::tree::{run_soo, run_soo_tree, DepthSchedule, PartitionTree, SooParams};

fn kind() -> impl Strategy<Value = FunctionKind> {
    (0..8usize).prop_map(|i| FunctionKind::ALL[i])
}

// Suite values are at least 100, where these never merge distinct doubles.
fn transform(which: u8, v: f64) -> f64 {
    match which {
        0 => 4.0 * v - 11.0,
        1 => v * v,
        _ => (v - 50.0).powi(3),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn increasing_transforms_do_not_change_decisions(
        kind in kind(),
        dim in 2..5usize,
        seed in any::<u64>(),
        budget in 1..800u64,
        which in 0..3u8,
    ) {
        let f = SuiteFunction::new(kind, shift_from_seed(seed, dim)).unwrap();
        let run = |g: Option<u8>| {
            let f = f.clone();
            let obj = Metered::new(vec![-5.0; dim], vec![5.0; dim], budget, move |x: &[f64]| {
                let v = f.value(x);
                g.map_or(v, |w| transform(w, v))
            });
            let tree = run_soo_tree(obj, budget, SooParams::default()).unwrap();
            (tree.split_log().to_vec(), tree.incumbent().0.to_vec())
        };
        prop_assert_eq!(run(None), run(Some(which)));
    }

    #[test]
    fn leaves_tile_the_box(
        kind in kind(),
        dim in 2..5usize,
        seed in any::<u64>(),
        budget in 1..600u64,
        s in prop_oneof![Just(3usize), Just(5), Just(7)],
    ) {
        let obj = make_suite_objective(kind, dim, Shift::Seed(seed), budget).unwrap();
        let params = SooParams { s_children: s, ..SooParams::default() };
        let mut tree = PartitionTree::new(obj, params).unwrap();
        loop {
            let out = tree.sweep().unwrap();
            prop_assert_eq!(
                tree.eval_count(),
                1 + (s as u64 - 1) * tree.splits_performed() as u64
            );
            let vals: Vec<f64> = out.split.iter().map(|&i| tree.cells()[i].value).collect();
            prop_assert!(vals.windows(2).all(|w| w[1] < w[0]));
            if out.budget_exhausted || out.split.is_empty() {
                break;
            }
        }
        let leaves: Vec<_> = tree.leaves().collect();
        let volume: f64 = leaves.iter().map(|c| c.volume()).sum();
        let box_volume = 10f64.powi(dim as i32);
        prop_assert!(((volume - box_volume) / box_volume).abs() < 1e-12);
        for (i, a) in leaves.iter().enumerate() {
            for b in &leaves[i + 1..] {
                prop_assert!((0..dim).any(|j| a.upper[j] <= b.lower[j] || b.upper[j] <= a.lower[j]));
            }
        }
        for c in tree.cells().iter().skip(1) {
            // The i-th split created ids 1 + i·S ..= (i + 1)·S.
            let parent = &tree.cells()[tree.split_log()[(c.id - 1) / s]];
            prop_assert_eq!(c.split_dim, (parent.split_dim + 1) % dim);
            prop_assert!(c.lower.iter().zip(&c.upper).all(|(l, u)| l < u));
            if (c.id - 1) % s == s / 2 {
                prop_assert_eq!(&c.center, &parent.center);
                prop_assert_eq!(c.value.to_bits(), parent.value.to_bits());
                prop_assert!(c.center.iter().zip(c.lower.iter().zip(&c.upper)).all(|(x, (l, u))| l < x && x < u));
            } else {
                for j in 0..dim {
                    prop_assert_eq!(c.center[j], 0.5 * (c.lower[j] + c.upper[j]));
                }
            }
        }
        let (_, best, _) = tree.incumbent();
        let min = tree.cells().iter().map(|c| c.value).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(best, min);
    }

    #[test]
    fn side_lengths_follow_split_counts(seed in any::<u64>(), budget in 10..400u64) {
        let obj = make_suite_objective(FunctionKind::Ackley, 3, Shift::Seed(seed), budget).unwrap();
        let tree = run_soo_tree(obj, budget, SooParams::default()).unwrap();
        for c in tree.cells() {
            for j in 0..3 {
                // Cell at depth h has been split ⌈(h - j) / 3⌉ times along j.
                let splits = (c.depth + 2 - j) / 3;
                let expected = 10.0 / 3f64.powi(splits as i32);
                let side = c.upper[j] - c.lower[j];
                prop_assert!(((side - expected) / expected).abs() < 1e-9, "{} {} {}", c.depth, j, side);
            }
        }
    }

    #[test]
    fn short_trace_prefixes_long_trace(
        kind in kind(),
        seed in any::<u64>(),
        short in 1..500u64,
        extra in 1..500u64,
    ) {
        let run = |b: u64| run_soo(make_suite_objective(kind, 2, Shift::Seed(seed), b).unwrap(), b, SooParams::default()).unwrap();
        let (a, b) = (run(short), run(short + extra));
        prop_assert!(a.evals_used <= short);
        prop_assert_eq!(&b.trace[..a.trace.len()], &a.trace[..]);
        prop_assert!(b.best_value <= a.best_value);
    }

    #[test]
    fn meter_counts_successful_evaluations(
        budget in 0..30u64,
        points in proptest::collection::vec(proptest::collection::vec(-7.0..7.0f64, 2), 0..40),
    ) {
        let mut obj = make_suite_objective(FunctionKind::Griewank, 2, Shift::Seed(1), budget).unwrap();
        let mut ok = 0u64;
        for p in &points {
            match obj.evaluate(p) {
                Ok(v) => {
                    ok += 1;
                    prop_assert_eq!(v, obj.function().value(p));
                }
                Err(EvalError::BudgetExhausted { .. }) => prop_assert_eq!(ok, budget),
                Err(EvalError::OutOfBounds { .. }) => prop_assert!(p.iter().any(|v| v.abs() > 5.0)),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
            prop_assert_eq!(obj.evals(), ok);
        }
    }

    #[test]
    fn refinement_never_hurts_and_stays_feasible(kind in kind(), seed in any::<u64>(), budget in 40..400u64) {
        let dim = 3;
        let mut obj = make_suite_objective(kind, dim, Shift::Seed(seed), budget).unwrap();
        let soo = run_soo(&mut obj, budget - 20, SooParams::default()).unwrap();
        let merged = refine_run(&soo, &mut obj, 20.0 / budget as f64 + 1e-9).unwrap();
        prop_assert!(merged.best_value <= soo.best_value);
        prop_assert!(merged.best_point.iter().all(|v| (-5.0..=5.0).contains(v)));
        prop_assert!(merged.trace_is_monotone());
        prop_assert!(obj.evals() <= budget);
    }

    #[test]
    fn hybrid_phase_budgets(kind in kind(), seed in any::<u64>(), budget in 1..2000u64) {
        let dim = 2 + (seed % 3) as usize;
        let mut obj = make_suite_objective(kind, dim, Shift::Seed(seed), 10 * budget).unwrap();
        let res = run_hybrid(&mut obj, budget, SooParams::default(), 0.05).unwrap();
        let reserve = (0.05 * budget as f64).ceil() as u64;
        prop_assert!(res.evals_used <= budget);
        prop_assert_eq!(obj.evals(), res.evals_used);
        // The SOO phase cannot reach into the reserve.
        let soo_only = run_soo(
            make_suite_objective(kind, dim, Shift::Seed(seed), budget).unwrap(),
            (budget - reserve).max(1),
            SooParams::default(),
        ).unwrap();
        prop_assert_eq!(&res.trace[..soo_only.trace.len()], &soo_only.trace[..]);
        prop_assert!(res.evals_used - soo_only.evals_used <= reserve);
    }

    #[test]
    fn ucb_argmax_ignores_common_shift(
        arms in proptest::collection::vec((1..50u64, 0.0..1.0f64), 1..8),
        shift in -10.0..10.0f64,
    ) {
        let pulls: Vec<u64> = arms.iter().map(|a| a.0).collect();
        let means: Vec<f64> = arms.iter().map(|a| a.1).collect();
        let stats = ArmStats::from_counts(pulls.clone(), means.clone());
        let shifted = ArmStats::from_counts(pulls, means.iter().map(|m| m + shift).collect());
        let mut ucbs: Vec<f64> = (0..stats.arms()).map(|k| stats.ucb(k, 2.0)).collect();
        ucbs.sort_by(|a, b| b.total_cmp(a));
        // Skip near-ties, where rounding in the shift may reorder arms.
        prop_assume!(ucbs.len() == 1 || ucbs[0] - ucbs[1] > 1e-9);
        prop_assert_eq!(ucb_select(&stats, 2.0).unwrap(), ucb_select(&shifted, 2.0).unwrap());
    }
}

#[test]
fn smooth_functions_refine_to_high_precision_within_100_d_evals() {
    for dim in [2usize, 5, 10] {
        for kind in [FunctionKind::Sphere, FunctionKind::Ellipsoid] {
            // Smallest SOO budget whose output is within 1 of the optimum.
            let mut budget = 50;
            let soo = loop {
                let r = run_soo(make_suite_objective(kind, dim, Shift::Seed(3), budget).unwrap(), budget, SooParams::default()).unwrap();
                if r.best_value - kind.bias() <= 1.0 {
                    break r;
                }
                budget *= 2;
            };
            let mut obj = make_suite_objective(kind, dim, Shift::Seed(3), u64::MAX).unwrap();
            let max_evals = 100 * dim as u64;
            let out = nelder_mead(&mut obj, &soo.best_point, max_evals, &NmParams::default()).unwrap();
            assert!(out.evals_used <= max_evals);
            assert!(out.value - kind.bias() <= 1e-6, "{kind} D={dim}: {:e}", out.value - kind.bias());
        }
    }
}

#[test]
fn runs_are_deterministic_across_schedules() {
    for schedule in [DepthSchedule::Log32, DepthSchedule::Constant(6), DepthSchedule::Unbounded] {
        let params = SooParams { depth_schedule: schedule, ..SooParams::default() };
        let run = || run_soo(make_suite_objective(FunctionKind::Rosenbrock, 3, Shift::Seed(8), 3000).unwrap(), 3000, params).unwrap();
        assert_eq!(run(), run());
    }
}

#[test]
fn ten_dimensional_run_is_fast() {
    let start = std::time::Instant::now();
    let res = run_soo(
        make_suite_objective(FunctionKind::Rastrigin, 10, Shift::Seed(1), 100_000).unwrap(),
        100_000,
        SooParams::default(),
    )
    .unwrap();
    assert!(res.evals_used > 99_000);
    assert!(start.elapsed().as_secs() < 60, "{:?}", start.elapsed());
}
