use proptest::prelude::*;

use qf_pool::agent::{best_response, contributor_objective, kkt_violation, BestResponseConfig};
use qf_pool::allocation::{
    allocate_bhw_cqf, allocate_capped, qf_target, reallocation_cost, ContributionLedger, MatchingPool,
};
use qf_pool::equilibrium::{run_dynamics, DynamicsConfig, SweepOrder};
use qf_pool::ledger_csv::{load_ledger, write_ledger, LabeledLedger};
use qf_pool::preferences::{UtilityFamily, UtilitySpec};

fn rows(max_n: usize, max_m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_n, 1..=max_m).prop_flat_map(|(n, m)| {
        prop::collection::vec(
            prop::collection::vec(prop_oneof![1 => Just(0.0), 3 => 0.0f64..100.0], m),
            n,
        )
    })
}

fn nonzero_rows(max_n: usize, max_m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    rows(max_n, max_m).prop_filter("some contribution", |r| r.iter().flatten().any(|&c| c > 0.0))
}

fn family() -> impl Strategy<Value = UtilityFamily> {
    prop_oneof![
        Just(UtilityFamily::Sqrt),
        Just(UtilityFamily::Log1p),
        (0.1f64..0.9).prop_map(|exponent| UtilityFamily::Power { exponent }),
    ]
}

fn ledger(rows: &[Vec<f64>]) -> ContributionLedger {
    ContributionLedger::from_rows(rows).unwrap()
}

fn pool(d: f64) -> MatchingPool {
    MatchingPool::new(d).unwrap()
}

/// Small game: ledger rows, matching weights, and a pool.
fn game() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, f64)> {
    (2..=4usize, 1..=3usize).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..3.0, m), n),
            prop::collection::vec(prop::collection::vec(0.0f64..5.0, m), n),
            0.1f64..20.0,
        )
    })
}

proptest! {
    #[test]
    fn raising_an_entry_never_lowers_the_target_total(
        r in rows(8, 5), pick in any::<prop::sample::Index>(), bump in 0.0f64..50.0
    ) {
        let before = qf_target(&ledger(&r)).total;
        let mut r2 = r.clone();
        let m = r[0].len();
        let k = pick.index(r.len() * m);
        r2[k / m][k % m] += bump;
        prop_assert!(qf_target(&ledger(&r2)).total >= before);
    }

    #[test]
    fn reallocation_cost_rises_with_entrywise_larger_ledgers(
        r in nonzero_rows(6, 4), extra in prop::collection::vec(0.0f64..10.0, 24), d in 0.1f64..500.0
    ) {
        let m = r[0].len();
        let bigger: Vec<Vec<f64>> = r
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().map(|(p, c)| c + extra[(i * m + p) % 24]).collect())
            .collect();
        let cost = |rows: &[Vec<f64>]| reallocation_cost(&qf_target(&ledger(rows)), pool(d)).unwrap();
        prop_assert!(cost(&bigger) >= cost(&r));
    }

    #[test]
    fn regimes_coincide_at_the_boundary(r in nonzero_rows(8, 5)) {
        let targets = qf_target(&ledger(&r));
        let funded = allocate_capped(&ledger(&r), pool(targets.total)).funded;
        for (f, t) in funded.iter().zip(&targets.per_project) {
            let scaled = targets.total * t / targets.total;
            prop_assert!((f - t).abs() <= 1e-12 * t.max(1e-300));
            prop_assert!((scaled - t).abs() <= 1e-12 * t.max(1e-300));
        }
    }

    #[test]
    fn capped_allocation_spends_exactly_the_pool(r in nonzero_rows(8, 5), frac in 0.01f64..0.99) {
        let total = qf_target(&ledger(&r)).total;
        let d = frac * total;
        let spent: f64 = allocate_capped(&ledger(&r), pool(d)).funded.iter().sum();
        prop_assert!((spent - d).abs() <= 1e-12 * d);
    }

    #[test]
    fn unconstrained_allocation_is_the_target(r in rows(8, 5), extra in 0.0f64..100.0) {
        let targets = qf_target(&ledger(&r));
        let alloc = allocate_capped(&ledger(&r), pool(targets.total + extra));
        prop_assert_eq!(alloc.funded, targets.per_project);
    }

    #[test]
    fn scaling_the_ledger_scales_targets_and_keeps_shares(
        r in nonzero_rows(6, 5), s in 0.01f64..100.0, d in 0.1f64..100.0
    ) {
        let scaled: Vec<Vec<f64>> = r.iter().map(|row| row.iter().map(|c| s * c).collect()).collect();
        let (a, b) = (qf_target(&ledger(&r)), qf_target(&ledger(&scaled)));
        for (x, y) in a.per_project.iter().zip(&b.per_project) {
            prop_assert!((s * x - y).abs() <= 1e-12 * y.max(1e-300));
        }
        let (fa, fb) = (allocate_capped(&ledger(&r), pool(d)), allocate_capped(&ledger(&scaled), pool(d)));
        if a.total > d && b.total > d {
            for (x, y) in fa.funded.iter().zip(&fb.funded) {
                prop_assert!((x / d - y / d).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn cqf_stays_within_the_pool(r in rows(8, 5), d in 0.0f64..1000.0) {
        let alloc = allocate_bhw_cqf(&ledger(&r), pool(d));
        prop_assert!(alloc.matching_spend <= d + 1e-9 * d);
        let alpha = alloc.alpha.unwrap();
        prop_assert!((0.0..=1.0).contains(&alpha));
    }

    #[test]
    fn ledger_files_round_trip(r in rows(6, 4)) {
        let labeled = LabeledLedger {
            contributors: (0..r.len()).map(|i| format!("c{i}")).collect(),
            projects: (0..r[0].len()).map(|p| format!("p{p}")).collect(),
            ledger: ledger(&r),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.csv");
        write_ledger(&path, &labeled).unwrap();
        prop_assert_eq!(load_ledger(&path).unwrap(), labeled);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn best_responses_satisfy_kkt((r, w, d) in game(), fam in family(), pick in any::<prop::sample::Index>()) {
        let spec = UtilitySpec::new(fam, &w).unwrap();
        let l = ledger(&r);
        let i = pick.index(r.len());
        let cfg = BestResponseConfig::default();
        let x = best_response(&spec, &l, pool(d), i, &cfg).unwrap();
        let upper = cfg.resolved_upper_bound(&l, pool(d));
        prop_assert!(kkt_violation(&spec, &l, pool(d), i, &x, upper).unwrap() <= cfg.grad_tol);
        let start = contributor_objective(&spec, &l, pool(d), i, &r[i]).unwrap();
        let end = contributor_objective(&spec, &l, pool(d), i, &x).unwrap();
        prop_assert!(end >= start - 1e-12 * start.abs().max(1.0));
    }

    #[test]
    fn nobody_pays_for_projects_they_do_not_value((r, mut w, d) in game(), fam in family(), pick in any::<prop::sample::Index>()) {
        let i = pick.index(r.len());
        w[i].iter_mut().for_each(|x| *x = 0.0);
        let spec = UtilitySpec::new(fam, &w).unwrap();
        let x = best_response(&spec, &ledger(&r), pool(d), i, &BestResponseConfig::default()).unwrap();
        prop_assert!(x.iter().all(|&c| c == 0.0), "{:?}", x);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_state_spends_min_of_pool_and_targets((r, w, d) in game(), fam in family(), jacobi in any::<bool>()) {
        let spec = UtilitySpec::new(fam, &w).unwrap();
        let cfg = DynamicsConfig {
            sweep_order: if jacobi { SweepOrder::Jacobi } else { SweepOrder::GaussSeidel },
            max_sweeps: 40,
            ..DynamicsConfig::default()
        };
        let traj = run_dynamics(&spec, &ledger(&r), pool(d), &cfg, &BestResponseConfig::default()).unwrap();
        for state in &traj.states {
            let spent: f64 = state.allocation.funded.iter().sum();
            let expected = qf_target(&state.ledger).total.min(d);
            prop_assert!((spent - expected).abs() <= 1e-12 * expected.max(1e-300));
        }
    }

    #[test]
    fn seeded_dynamics_are_reproducible((r, w, d) in game(), seed in any::<u64>(), jacobi in any::<bool>()) {
        let spec = UtilitySpec::new(UtilityFamily::Log1p, &w).unwrap();
        let cfg = DynamicsConfig {
            sweep_order: if jacobi { SweepOrder::Jacobi } else { SweepOrder::GaussSeidel },
            max_sweeps: 20,
            seed,
            shuffle: true,
            ..DynamicsConfig::default()
        };
        let br = BestResponseConfig::default();
        let a = run_dynamics(&spec, &ledger(&r), pool(d), &cfg, &br).unwrap();
        let b = run_dynamics(&spec, &ledger(&r), pool(d), &cfg, &br).unwrap();
        prop_assert_eq!(a, b);
    }

    /// Replays each Gauss-Seidel row update and checks the updating
    /// contributor's payoff did not fall.
    #[test]
    fn gauss_seidel_updates_never_hurt_the_mover((r, w, d) in game(), fam in family()) {
        let spec = UtilitySpec::new(fam, &w).unwrap();
        let cfg = DynamicsConfig { max_sweeps: 30, ..DynamicsConfig::default() };
        let traj = run_dynamics(&spec, &ledger(&r), pool(d), &cfg, &BestResponseConfig::default()).unwrap();
        for pair in traj.states.windows(2) {
            let (before, after) = (&pair[0].ledger, &pair[1].ledger);
            let mut current = before.clone();
            for i in 0..r.len() {
                let old = contributor_objective(&spec, &current, pool(d), i, before.row(i)).unwrap();
                let new = contributor_objective(&spec, &current, pool(d), i, after.row(i)).unwrap();
                prop_assert!(new >= old - 1e-12 * old.abs().max(1.0), "contributor {} fell from {} to {}", i, old, new);
                current.set_row(i, after.row(i)).unwrap();
            }
        }
    }
}
