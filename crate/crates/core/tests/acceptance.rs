//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;

use ravi_ucb::harness::{self, run_seed, Overrides, Problem, RunOptions, RunParams};
use ravi_ucb::instances::{random_mdp, random_policy, reference_linmix, reference_tabular};
use ravi_ucb::mdp::{flow_residual, occupancy_measure, policy_evaluation};
use ravi_ucb::validation::{self, CheckReport, SlopeGrid};

fn report(id: &str, name: &str, pass: bool, detail: &str, elapsed: Duration) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    // Written to the handle directly so the line survives test output capture.
    #[allow(clippy::explicit_write)]
    writeln!(
        std::io::stderr(),
        "[acceptance] {verdict} {id:<4} {name:<34} {detail} ({:.1}s)",
        elapsed.as_secs_f64()
    )
    .unwrap();
}

fn detail(r: &CheckReport, key: &str) -> Value {
    r.details
        .iter()
        .find_map(|d| d.get(key).cloned())
        .unwrap_or(Value::Null)
}

fn problem(backend: &str) -> Problem {
    match backend {
        "tabular" => Problem::Tabular(reference_tabular()),
        _ => Problem::Linmix(reference_linmix()),
    }
}

fn design(p: &Problem, params: &RunParams) -> Option<(f64, f64)> {
    match p {
        Problem::Linmix(m) => Some((m.bound(), params.lambda)),
        Problem::Tabular(_) => None,
    }
}

#[test]
fn c1_oracle_identities() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut flow, mut ret, mut kl) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for _ in 0..50 {
        let nx = rng.random_range(1..=10);
        let na = rng.random_range(1..=4);
        let gamma = rng.random_range(0.0..0.99);
        let mdp = random_mdp(&mut rng, nx, na, gamma);
        let pi = random_policy(&mut rng, nx, na);
        let pi_ref = random_policy(&mut rng, nx, na);
        let mu = occupancy_measure(&mdp, &pi).unwrap();
        flow = flow.max(flow_residual(&mdp, &mu).unwrap());
        let v = policy_evaluation(&mdp, &pi).unwrap();
        let lhs = mu.mass().inner(mdp.reward()).unwrap();
        let rhs: f64 = (1.0 - gamma) * mdp.nu0().iter().zip(v.as_slice()).map(|(p, v)| p * v).sum::<f64>();
        ret = ret.max((lhs - rhs).abs());
        kl = kl.max(validation::check_kl_chain(&mdp, &pi, &pi_ref).unwrap().worst_slack);
    }
    let elapsed = started.elapsed();
    let pass = flow <= 1e-10 && ret <= 1e-9 && kl <= 1e-9 && elapsed < Duration::from_secs(10);
    report(
        "C1",
        "oracle identities",
        pass,
        &format!(
            "flow {flow:.1e} <= 1e-10, return {ret:.1e} <= 1e-9, kl chain slack {:.1e} >= -1e-9",
            0.0 - kl
        ),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn c2_mirror_descent_identity() {
    let started = Instant::now();
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    for (i, backend) in ["tabular", "linmix"].iter().enumerate() {
        let p = problem(backend);
        let params = RunParams::resolve(&p, 10_000, &Overrides::default()).unwrap();
        let run = run_seed(&p, &params, 10_000, i as u64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let r = validation::check_md_identity(&run.log, 10_000, &mut rng).unwrap();
        worst = worst.max(r.worst_slack);
        pass &= r.pass;
    }
    let elapsed = started.elapsed();
    let pass = pass && elapsed < Duration::from_secs(120);
    report(
        "C2",
        "mirror-descent identity",
        pass,
        &format!("T=10^4, 10^4 candidates/epoch, both backends, worst slack {worst:.1e}"),
        elapsed,
    );
    assert!(pass);
}

/// Outcome of one run from the sandwich and coverage sweeps.
struct SeedOutcome {
    sandwich: CheckReport,
    violated: bool,
    max_epoch: usize,
    design_checks: Option<(CheckReport, CheckReport)>,
}

struct Sweep {
    outcomes: Vec<SeedOutcome>,
    elapsed: Duration,
}

fn sweep(backend: &str, seeds: u64, overrides: Overrides) -> Sweep {
    let started = Instant::now();
    let p = problem(backend);
    let horizon = 1 << 12;
    let params = RunParams::resolve(&p, horizon, &overrides).unwrap();
    let outcomes = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let run = run_seed(&p, &params, horizon, seed).unwrap();
            let mdp = p.mdp();
            SeedOutcome {
                sandwich: validation::check_sandwich(mdp, &run.log).unwrap(),
                violated: run.validity_violations > 0,
                max_epoch: run.log.epoch_lengths().into_iter().max().unwrap(),
                design_checks: design(&p, &params).map(|(b, reg)| {
                    (
                        validation::check_elliptical(&run.log, b, reg).unwrap(),
                        validation::check_bad_epochs(&run.log, b, reg).unwrap(),
                    )
                }),
            }
        })
        .collect();
    Sweep {
        outcomes,
        elapsed: started.elapsed(),
    }
}

fn sandwich_sweep(backend: &str) -> &'static Sweep {
    static TABULAR: OnceLock<Sweep> = OnceLock::new();
    static LINMIX: OnceLock<Sweep> = OnceLock::new();
    let cell = if backend == "tabular" { &TABULAR } else { &LINMIX };
    cell.get_or_init(|| sweep(backend, 20, Overrides::default()))
}

fn coverage_sweep(backend: &str) -> &'static Sweep {
    static TABULAR: OnceLock<Sweep> = OnceLock::new();
    static LINMIX: OnceLock<Sweep> = OnceLock::new();
    let cell = if backend == "tabular" { &TABULAR } else { &LINMIX };
    let overrides = Overrides {
        delta: Some(0.05),
        ..Default::default()
    };
    cell.get_or_init(|| sweep(backend, 200, overrides))
}

#[test]
fn c3_q_sandwich() {
    let mut pass = true;
    let mut worst = f64::NEG_INFINITY;
    let mut elapsed = Duration::ZERO;
    for backend in ["tabular", "linmix"] {
        let s = sandwich_sweep(backend);
        elapsed += s.elapsed;
        for o in &s.outcomes {
            pass &= o.sandwich.pass;
            worst = worst.max(o.sandwich.worst_slack);
        }
    }
    let pass = pass && elapsed < Duration::from_secs(300);
    report(
        "C3",
        "Q sandwich on valid epochs",
        pass,
        &format!("20 seeds x 2 backends at T=2^12, worst slack {worst:.1e} <= 1e-9"),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn c4_bonus_validity_coverage() {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut elapsed = Duration::ZERO;
    for backend in ["tabular", "linmix"] {
        let s = coverage_sweep(backend);
        elapsed += s.elapsed;
        let bad = s.outcomes.iter().filter(|o| o.violated).count();
        let frac = bad as f64 / s.outcomes.len() as f64;
        pass &= frac <= 0.10;
        parts.push(format!("{backend} {bad}/{}", s.outcomes.len()));
    }
    let pass = pass && elapsed < Duration::from_secs(900);
    report(
        "C4",
        "bonus validity coverage",
        pass,
        &format!("delta=0.05, runs with a violation: {} (max 10%)", parts.join(", ")),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn c5_elliptical_and_bad_epoch_caps() {
    let started = Instant::now();
    let mut runs = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    for s in [sandwich_sweep("linmix"), coverage_sweep("linmix")] {
        for o in &s.outcomes {
            let (ell, bad) = o.design_checks.as_ref().unwrap();
            pass &= ell.pass && bad.pass;
            worst = worst.max(ell.worst_slack).max(bad.worst_slack);
            runs += 1;
        }
    }
    report(
        "C5",
        "elliptical potential, bad epochs",
        pass,
        &format!("{runs} linear-mixture runs, worst slack {worst:.1e} <= 1e-6"),
        started.elapsed(),
    );
    assert!(pass);
}

#[test]
fn c6_self_normalized_coverage() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let r = validation::check_self_normalized(5, 1.0, 1000, 0.1, 1000, &mut rng).unwrap();
    let coverage = detail(&r, "coverage").as_f64().unwrap();
    let elapsed = started.elapsed();
    let pass = coverage >= 0.87 && elapsed < Duration::from_secs(60);
    report(
        "C6",
        "self-normalized coverage",
        pass,
        &format!("d=5, T=10^3, delta=0.1, 10^3 trials, coverage {coverage:.3} >= 0.87"),
        elapsed,
    );
    assert!(pass);
}

fn regret_slope(backend: &str, id: &str) {
    let started = Instant::now();
    let r = validation::check_regret_slope(&problem(backend), &SlopeGrid::standard()).unwrap();
    let slope = detail(&r, "slope").as_f64().unwrap_or(f64::NAN);
    let elapsed = started.elapsed();
    // Each backend gets half of the shared 30 minute budget.
    let pass = r.pass && elapsed < Duration::from_secs(900);
    report(
        id,
        &format!("sublinear regret ({backend})"),
        pass,
        &format!("T=2^10..2^16, 20 seeds, log-log slope {slope:.3} <= 0.75"),
        elapsed,
    );
    assert!(pass, "regret slope {slope:.3} on the {backend} reference instance");
}

#[test]
fn c7_sublinear_regret_linmix() {
    regret_slope("linmix", "C7a");
}

#[test]
fn c7_sublinear_regret_tabular() {
    regret_slope("tabular", "C7b");
}

fn recorded_experiment(dir: &Path, backend: &str, horizon: usize, seeds: &str) -> PathBuf {
    fs::write(dir.join("mdp.json"), problem(backend).to_json_string().unwrap()).unwrap();
    let config = dir.join("config.json");
    fs::write(
        &config,
        format!(r#"{{"mdp": "mdp.json", "T": {horizon}, "seeds": {seeds}, "out_dir": "out"}}"#),
    )
    .unwrap();
    config
}

#[test]
fn c8_online_to_batch() {
    let dir = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut elapsed = Duration::ZERO;
    for backend in ["tabular", "linmix"] {
        let sub = dir.path().join(backend);
        fs::create_dir_all(&sub).unwrap();
        let config = harness::load_config(recorded_experiment(&sub, backend, 1 << 14, "[0, 1, 2]")).unwrap();
        harness::run_experiment(&config, RunOptions::default()).unwrap();
        // Timing covers the checks on the recorded runs only.
        let started = Instant::now();
        let rec = harness::load_run_dir(sub.join("out")).unwrap();
        let mdp = rec.config.problem.mdp();
        for run in &rec.runs {
            let mut rng = ChaCha8Rng::seed_from_u64(800 + run.seed);
            let otb = validation::check_online_to_batch(mdp, &run.log, 1000, &mut rng).unwrap();
            let mix = validation::check_mixing(mdp, &run.log).unwrap();
            pass &= otb.pass && mix.pass;
            let gap = (detail(&otb, "resampled_mean").as_f64().unwrap()
                - detail(&otb, "regret_over_T").as_f64().unwrap())
            .abs();
            // Identical gaps give a zero stderr, so the comparison keeps a 1e-12 floor.
            let se3 = (3.0 * detail(&otb, "stderr").as_f64().unwrap()).max(1e-12);
            parts.push(format!("{backend}/{} {gap:.1e}<={se3:.1e}", run.seed));
        }
        elapsed += started.elapsed();
    }
    let pass = pass && elapsed < Duration::from_secs(60);
    report(
        "C8",
        "online-to-batch",
        pass,
        &format!(
            "10^3 resamples, |mean - R_T/T| <= max(3se, 1e-12), mixing ok: {}",
            parts.join(" ")
        ),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn c9_epoch_schedule() {
    let started = Instant::now();
    let p = problem("linmix");
    let horizon = 1 << 14;
    let params = RunParams::resolve(&p, horizon, &Overrides::default()).unwrap();
    let lengths: Vec<usize> = (0..4u64)
        .into_par_iter()
        .flat_map(|seed| {
            run_seed(&p, &params, horizon, 900 + seed)
                .unwrap()
                .log
                .completed_epoch_lengths()
        })
        .collect();
    let gamma = p.mdp().gamma();
    let sched = validation::check_epoch_schedule(&lengths, gamma).unwrap();
    let maxima: Vec<usize> = coverage_sweep("tabular").outcomes.iter().map(|o| o.max_epoch).collect();
    let max_epoch = validation::check_max_epoch(&maxima, gamma, 1 << 12).unwrap();
    let pass = lengths.len() >= 10_000 && sched.pass && max_epoch.pass;
    report(
        "C9",
        "epoch schedule",
        pass,
        &format!(
            "{} epochs, mean {:.4} vs H {:.4}, KS {:.4} < {:.4}, mean max epoch {} <= {:.1}",
            lengths.len(),
            detail(&sched, "mean_length").as_f64().unwrap(),
            detail(&sched, "H").as_f64().unwrap(),
            detail(&sched, "ks_statistic").as_f64().unwrap(),
            detail(&sched, "ks_critical").as_f64().unwrap(),
            detail(&max_epoch, "mean_max"),
            detail(&max_epoch, "bound").as_f64().unwrap(),
        ),
        started.elapsed(),
    );
    assert!(pass);
}

#[test]
fn c10_determinism() {
    let started = Instant::now();
    let bin = env!("CARGO_BIN_EXE_ravi-ucb");
    let mut compared = 0;
    let mut pass = true;
    for backend in ["tabular", "linmix"] {
        let dir = tempfile::tempdir().unwrap();
        let config = recorded_experiment(dir.path(), backend, 2000, "[0, 1]");
        let mut snapshots = Vec::new();
        for _ in 0..2 {
            let out = Command::new(bin).arg("run").arg(&config).output().unwrap();
            assert!(out.status.success());
            let files = [
                "metrics.csv",
                "seed_0/trace.csv",
                "seed_1/trace.csv",
                "seed_0/epochs.json",
                "seed_1/epochs.json",
            ];
            snapshots.push(files.map(|f| fs::read(dir.path().join("out").join(f)).unwrap()));
            fs::remove_dir_all(dir.path().join("out")).unwrap();
        }
        compared += snapshots[0].len();
        pass &= snapshots[0] == snapshots[1];
    }
    report(
        "C10",
        "determinism",
        pass,
        &format!("{compared} metrics/trace/epoch files byte-identical across repeated runs"),
        started.elapsed(),
    );
    assert!(pass);
}
