use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ravi_ucb::harness::{run_seed, Overrides, Problem, RunParams};
use ravi_ucb::instances::{random_convex_mixture, random_mdp, random_policy, reference_linmix, reference_tabular};
use ravi_ucb::mdp::StateActionTable;
use ravi_ucb::planner::{online_to_batch_select, softmax_update, EstimatorSummary};
use ravi_ucb::validation::{check_elliptical, check_md_identity, check_sandwich, check_validity, validate_run};

fn problems() -> Vec<Problem> {
    vec![
        Problem::Tabular(reference_tabular()),
        Problem::Linmix(reference_linmix()),
    ]
}

#[test]
fn runs_are_deterministic_per_seed() {
    for problem in problems() {
        let params = RunParams::resolve(&problem, 600, &Overrides::default()).unwrap();
        let a = run_seed(&problem, &params, 600, 9).unwrap();
        let b = run_seed(&problem, &params, 600, 9).unwrap();
        let c = run_seed(&problem, &params, 600, 10).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.regret.to_bits(), b.regret.to_bits());
        assert_ne!(a.log.steps, c.log.steps);
    }
}

#[test]
fn run_structure_invariants() {
    for problem in problems() {
        let mdp = problem.mdp();
        let h = mdp.horizon();
        let params = RunParams::resolve(&problem, 2000, &Overrides::default()).unwrap();
        let run = run_seed(&problem, &params, 2000, 3).unwrap();
        let log = &run.log;
        log.check_partition().unwrap();
        assert_eq!(log.horizon(), 2000);
        assert_eq!(log.epoch_lengths().iter().sum::<usize>(), 2000);
        assert!(!log.steps.last().unwrap().reset);
        for e in &log.epochs {
            for x in 0..mdp.n_states() {
                let s: f64 = e.policy.row(x).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(e.value[x] >= -1e-12 && e.value[x] <= h + 1e-12);
            }
            assert!(e.q_next.as_slice().iter().all(|q| (0.0..=h).contains(q)));
            assert!(e.bonus.as_slice().iter().all(|b| (0.0..=h).contains(b)));
        }
        // Regret never goes negative and equals the gap-weighted epoch lengths.
        assert!(run.gaps.iter().all(|g| *g >= -1e-8));
        let recomputed: f64 = run
            .gaps
            .iter()
            .zip(log.epoch_lengths())
            .map(|(g, n)| g * n as f64)
            .sum();
        assert!((recomputed - run.regret).abs() <= 1e-9 * run.regret.max(1.0));
    }
}

#[test]
fn tabular_counts_track_visits() {
    let problem = Problem::Tabular(reference_tabular());
    let params = RunParams::resolve(&problem, 1500, &Overrides::default()).unwrap();
    let run = run_seed(&problem, &params, 1500, 5).unwrap();
    for e in &run.log.epochs {
        let EstimatorSummary::Counts(n) = &e.summary else {
            panic!("tabular run should record counts");
        };
        // Counts start at one per pair.
        let mut by_pair = vec![1u64; n.len()];
        for s in &run.log.steps[..e.start - 1] {
            by_pair[s.state * 2 + s.action] += 1;
        }
        assert_eq!(&by_pair, n);
    }
}

#[test]
fn linmix_design_grows() {
    let problem = Problem::Linmix(reference_linmix());
    let params = RunParams::resolve(&problem, 4096, &Overrides::default()).unwrap();
    let run = run_seed(&problem, &params, 4096, 2).unwrap();
    let traces: Vec<f64> = run
        .log
        .epochs
        .iter()
        .map(|e| match &e.summary {
            EstimatorSummary::Design(s) => (0..s.dim()).map(|i| s.lambda[i * s.dim() + i]).sum(),
            _ => panic!("linear-mixture run should record its design"),
        })
        .collect();
    assert!(traces.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    let Problem::Linmix(m) = &problem else { unreachable!() };
    assert!(check_elliptical(&run.log, m.bound(), params.lambda).unwrap().pass);
}

#[test]
fn full_suite_passes_on_reference_linmix() {
    let problem = Problem::Linmix(reference_linmix());
    let Problem::Linmix(m) = &problem else { unreachable!() };
    let params = RunParams::resolve(&problem, 3000, &Overrides::default()).unwrap();
    let run = run_seed(&problem, &params, 3000, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let reports = validate_run(problem.mdp(), &run.log, Some((m.bound(), params.lambda)), &mut rng).unwrap();
    for r in &reports {
        assert!(r.pass, "{} failed with slack {}", r.check, r.worst_slack);
    }
}

#[test]
fn random_instances_stay_valid() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for i in 0..4 {
        let tab = Problem::Tabular(random_mdp(&mut rng, 4, 3, 0.6));
        let lin = Problem::Linmix(random_convex_mixture(&mut rng, 4, 2, 3, 0.6));
        for problem in [tab, lin] {
            let params = RunParams::resolve(&problem, 800, &Overrides::default()).unwrap();
            let run = run_seed(&problem, &params, 800, i).unwrap();
            assert!(check_validity(problem.mdp(), &run.log).unwrap().pass);
            assert!(check_sandwich(problem.mdp(), &run.log).unwrap().pass);
            assert!(check_md_identity(&run.log, 500, &mut rng).unwrap().pass);
        }
    }
}

#[test]
fn online_to_batch_returns_a_logged_policy() {
    let problem = Problem::Tabular(reference_tabular());
    let params = RunParams::resolve(&problem, 500, &Overrides::default()).unwrap();
    let run = run_seed(&problem, &params, 500, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        let pi = online_to_batch_select(&run.log, &mut rng).unwrap();
        assert!(run.log.epochs.iter().any(|e| e.policy == pi));
    }
}

#[test]
fn invalid_overrides_are_rejected() {
    let problem = Problem::Tabular(reference_tabular());
    for o in [
        Overrides {
            eta: Some(0.0),
            ..Default::default()
        },
        Overrides {
            lambda: Some(-1.0),
            ..Default::default()
        },
        Overrides {
            delta: Some(1.5),
            ..Default::default()
        },
    ] {
        assert!(RunParams::resolve(&problem, 100, &o).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_update_is_a_kl_regularized_argmax(
        seed in any::<u64>(), nx in 1usize..5, na in 1usize..6, eta in 1e-3f64..50.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = random_policy(&mut rng, nx, na);
        let q = StateActionTable::from_fn(nx, na, |_, _| rng.random::<f64>() * 10.0);
        let (v, pi) = softmax_update(&prior, &q, eta).unwrap();
        for x in 0..nx {
            let row = pi.row(x);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let qs = q.row(x);
            let hi = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean: f64 = prior.row(x).iter().zip(qs).map(|(p, q)| p * q).sum();
            prop_assert!(v[x] <= hi + 1e-12 && v[x] >= mean - 1e-9);
            // <pi, Q> - KL(pi || prior) / eta attains V.
            let kl: f64 = row.iter().zip(prior.row(x)).filter(|(p, _)| **p > 0.0).map(|(p, r)| p * (p / r).ln()).sum();
            let objective: f64 = row.iter().zip(qs).map(|(p, q)| p * q).sum::<f64>() - kl / eta;
            prop_assert!((objective - v[x]).abs() <= 1e-8 * (1.0 + v[x].abs()));
        }
    }
}
