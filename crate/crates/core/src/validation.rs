//! Numerical certificates for the guarantees behind RAVI-UCB.
//!
//! Every check returns a [`CheckReport`] whose `worst_slack` is signed so that
//! positive values are violations: a report passes iff
//! `worst_slack <= tolerance`. Statistical checks fold their 3-sigma band into
//! the slack and use tolerance 0.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::harness::{mean_and_stderr, sweep_regrets, Overrides, Problem};
use crate::instances::random_simplex;
use crate::linmix::inverse_norm_sq;
use crate::mdp::{
    conditional_relative_entropy, expected_next_value, occupancy_kl, occupancy_measure, optimal_normalized_return,
    Policy, TabularMdp,
};
use crate::planner::{DesignSnapshot, EstimatorSummary, RunLog};

/// Entrywise tolerance for the validity condition and the Q-sandwich.
pub const VALIDITY_TOL: f64 = 1e-9;
/// Tolerance on KL-regularized maximum attainment.
pub const MD_ATTAIN_TOL: f64 = 1e-9;
/// Tolerance on the telescoped log-sum-exp identity.
pub const MD_TELESCOPE_TOL: f64 = 1e-6;
pub const KL_CHAIN_TOL: f64 = 1e-9;
pub const ELLIPTICAL_TOL: f64 = 1e-6;
/// Slope ceiling for mean cumulative regret on a log-log scale.
pub const REGRET_SLOPE_MAX: f64 = 0.75;
/// Relative tolerance on the mean epoch length.
pub const EPOCH_MEAN_REL_TOL: f64 = 0.05;
/// Asymptotic one-sample KS coefficient at significance 0.01.
pub const KS_COEFF_001: f64 = 1.628;

/// Outcome of one check. Serializes as `{check, pass, worst_slack, details}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub pass: bool,
    pub worst_slack: f64,
    #[serde(skip)]
    pub tolerance: f64,
    pub details: Vec<Value>,
}

impl CheckReport {
    pub fn new(check: impl Into<String>, worst_slack: f64, tolerance: f64, details: Vec<Value>) -> Self {
        Self {
            check: check.into(),
            pass: worst_slack <= tolerance,
            worst_slack,
            tolerance,
            details,
        }
    }

    /// A report with nothing to check.
    pub fn vacuous(check: impl Into<String>, details: Vec<Value>) -> Self {
        Self::new(check, f64::NEG_INFINITY, 0.0, details)
    }
}

/// JSON array export of several reports.
pub fn reports_to_json(reports: &[CheckReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

/// Per-epoch `max_{x,a} gamma |<P(.|x,a) - P_hat_k(.|x,a), V_k>| - CB_k(x,a)`.
pub fn validity_slacks(mdp: &TabularMdp, log: &RunLog) -> Result<Vec<f64>> {
    let gamma = mdp.gamma();
    log.epochs
        .iter()
        .map(|e| {
            let pv = expected_next_value(mdp, &e.value)?;
            e.next_value.check_shape(mdp.n_states(), mdp.n_actions())?;
            Ok(pv
                .as_slice()
                .iter()
                .zip(e.next_value.as_slice())
                .zip(e.bonus.as_slice())
                .map(|((p, ph), cb)| gamma * (p - ph).abs() - cb)
                .fold(f64::NEG_INFINITY, f64::max))
        })
        .collect()
}

fn require_epochs(log: &RunLog) -> Result<()> {
    if log.epochs.is_empty() {
        return Err(Error::invalid("run log has no epoch snapshots"));
    }
    Ok(())
}

/// The validity condition on every epoch of a recorded run.
pub fn check_validity(mdp: &TabularMdp, log: &RunLog) -> Result<CheckReport> {
    require_epochs(log)?;
    let slacks = validity_slacks(mdp, log)?;
    let worst = slacks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let violations = slacks.iter().filter(|s| **s > VALIDITY_TOL).count();
    let details = slacks
        .iter()
        .enumerate()
        .map(|(i, s)| json!({"k": i + 1, "slack": s}))
        .collect();
    let mut report = CheckReport::new("validity", worst, VALIDITY_TOL, details);
    report.details.insert(0, json!({"violating_epochs": violations}));
    Ok(report)
}

/// `r + gamma P V_k <= Q_{k+1} <= r + 2 CB_k + gamma P V_k` on valid epochs.
pub fn check_sandwich(mdp: &TabularMdp, log: &RunLog) -> Result<CheckReport> {
    require_epochs(log)?;
    let gamma = mdp.gamma();
    let validity = validity_slacks(mdp, log)?;
    let mut worst = f64::NEG_INFINITY;
    let mut details = Vec::with_capacity(log.epochs.len());
    let mut checked = 0;
    for (e, v) in log.epochs.iter().zip(&validity) {
        if *v > VALIDITY_TOL {
            details.push(json!({"k": e.k, "skipped": true}));
            continue;
        }
        checked += 1;
        let pv = expected_next_value(mdp, &e.value)?;
        let mut epoch_worst = f64::NEG_INFINITY;
        for i in 0..pv.as_slice().len() {
            let base = mdp.reward().as_slice()[i] + gamma * pv.as_slice()[i];
            let q = e.q_next.as_slice()[i];
            let upper = base + 2.0 * e.bonus.as_slice()[i];
            epoch_worst = epoch_worst.max(base - q).max(q - upper);
        }
        worst = worst.max(epoch_worst);
        details.push(json!({"k": e.k, "slack": epoch_worst}));
    }
    details.insert(0, json!({"checked_epochs": checked}));
    if checked == 0 {
        return Ok(CheckReport::vacuous("sandwich", details));
    }
    Ok(CheckReport::new("sandwich", worst, VALIDITY_TOL, details))
}

/// `<p, q> - (1/eta) KL(p || prior)` for one state.
fn regularized_objective(p: &[f64], q: &[f64], prior: &[f64], eta: f64) -> f64 {
    let mut linear = 0.0;
    let mut kl = 0.0;
    for a in 0..p.len() {
        if p[a] > 0.0 {
            linear += p[a] * q[a];
            kl += p[a] * (p[a] / prior[a]).ln();
        }
    }
    linear - kl / eta
}

/// Log-sum-exp of `log w_a + eta s_a` over the support of `w`, divided by `eta`.
fn anchored_lse(w: &[f64], s: &[f64], eta: f64) -> f64 {
    let hi = w
        .iter()
        .zip(s)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = w
        .iter()
        .zip(s)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, s)| w * (eta * (s - hi)).exp())
        .sum();
    hi + total.ln() / eta
}

/// Mirror-descent identities on a recorded run.
///
/// Per epoch and state: `pi_k` attains `V_k = max_p <p, Q_k> - (1/eta) KL(p || pi_{k-1})`
/// (compared against `candidates` random policies, half of them local
/// perturbations of `pi_k`), and `sum_{i<=k} V_i` equals the `pi_0`-anchored
/// log-sum-exp of `sum_{i<=k} Q_i`.
pub fn check_md_identity<R: Rng + ?Sized>(log: &RunLog, candidates: usize, rng: &mut R) -> Result<CheckReport> {
    require_epochs(log)?;
    let eta = log.eta;
    let n_states = log.initial_policy.n_states();
    let n_actions = log.initial_policy.n_actions();
    let seeds: Vec<u64> = (0..log.epochs.len()).map(|_| rng.random()).collect();

    let attain: Vec<(f64, f64)> = log
        .epochs
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let prior = if i == 0 {
                &log.initial_policy
            } else {
                &log.epochs[i - 1].policy
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seeds[i]);
            let mut gap: f64 = 0.0;
            let mut beaten = f64::NEG_INFINITY;
            for x in 0..n_states {
                let q = e.q.row(x);
                let pr = prior.row(x);
                let best = regularized_objective(e.policy.row(x), q, pr, eta);
                gap = gap.max((best - e.value[x]).abs());
                let support: Vec<usize> = (0..n_actions).filter(|&a| pr[a] > 0.0).collect();
                let mut cand = vec![0.0; n_actions];
                for c in 0..candidates {
                    let w = random_simplex(&mut rng, support.len());
                    cand.iter_mut().for_each(|v| *v = 0.0);
                    for (j, &a) in support.iter().enumerate() {
                        cand[a] = w[j];
                    }
                    if c % 2 == 1 {
                        let eps = 10f64.powf(-6.0 * rng.random::<f64>());
                        for (a, v) in cand.iter_mut().enumerate() {
                            *v = (1.0 - eps) * e.policy.prob(x, a) + eps * *v;
                        }
                    }
                    beaten = beaten.max(regularized_objective(&cand, q, pr, eta) - best);
                }
            }
            (gap, beaten)
        })
        .collect();

    let mut details = Vec::with_capacity(log.epochs.len());
    let mut sum_q = vec![0.0; n_states * n_actions];
    let mut sum_v = vec![0.0; n_states];
    let mut worst_attain = f64::NEG_INFINITY;
    let mut worst_tele = f64::NEG_INFINITY;
    for (e, (gap, beaten)) in log.epochs.iter().zip(attain) {
        for (s, q) in sum_q.iter_mut().zip(e.q.as_slice()) {
            *s += q;
        }
        let mut tele: f64 = 0.0;
        for x in 0..n_states {
            sum_v[x] += e.value[x];
            let lse = anchored_lse(
                log.initial_policy.row(x),
                &sum_q[x * n_actions..(x + 1) * n_actions],
                eta,
            );
            tele = tele.max((sum_v[x] - lse).abs());
        }
        let attain_slack = gap.max(beaten);
        worst_attain = worst_attain.max(attain_slack);
        worst_tele = worst_tele.max(tele);
        details.push(json!({"k": e.k, "attain_gap": gap, "best_candidate_excess": beaten, "telescoped_gap": tele}));
    }
    // Both parts are folded into one slack relative to the attainment tolerance.
    let worst = worst_attain.max(worst_tele - MD_TELESCOPE_TOL + MD_ATTAIN_TOL);
    details.insert(
        0,
        json!({"worst_attainment": worst_attain, "worst_telescoped": worst_tele,
               "attainment_tol": MD_ATTAIN_TOL, "telescoped_tol": MD_TELESCOPE_TOL}),
    );
    Ok(CheckReport::new("md_identity", worst, MD_ATTAIN_TOL, details))
}

/// `KL(mu^pi || mu^pi') <= H * H(pi || pi')`, both sides exact.
pub fn check_kl_chain(mdp: &TabularMdp, pi: &Policy, pi_ref: &Policy) -> Result<CheckReport> {
    let rhs = match conditional_relative_entropy(mdp, pi, pi_ref) {
        Ok(v) => mdp.horizon() * v,
        Err(Error::Domain(msg)) => {
            return Ok(CheckReport::vacuous(
                "kl_chain",
                vec![json!({"rhs": Value::Null, "reason": msg})],
            ));
        }
        Err(e) => return Err(e),
    };
    let lhs = occupancy_kl(&occupancy_measure(mdp, pi)?, &occupancy_measure(mdp, pi_ref)?)?;
    Ok(CheckReport::new(
        "kl_chain",
        lhs - rhs,
        KL_CHAIN_TOL,
        vec![json!({"lhs": lhs, "rhs": rhs})],
    ))
}

struct DesignEpoch<'a> {
    snapshot: &'a DesignSnapshot,
    chol: Cholesky<f64, Dyn>,
}

fn design_epochs(log: &RunLog) -> Result<Vec<DesignEpoch<'_>>> {
    require_epochs(log)?;
    log.epochs
        .iter()
        .map(|e| match &e.summary {
            EstimatorSummary::Design(s) => {
                let d = s.dim();
                let m = DMatrix::from_row_slice(d, d, &s.lambda);
                let chol = Cholesky::new(m)
                    .ok_or_else(|| Error::Numeric(format!("epoch {} design matrix not positive definite", e.k)))?;
                Ok(DesignEpoch { snapshot: s, chol })
            }
            _ => Err(Error::invalid(format!("epoch {} has no design-matrix snapshot", e.k))),
        })
        .collect()
}

/// `||phi_{k,t}||^2_{Lambda_k^{-1}}` for every step, grouped by epoch.
fn step_widths(log: &RunLog, designs: &[DesignEpoch<'_>]) -> Result<Vec<Vec<f64>>> {
    let n_actions = log.initial_policy.n_actions();
    let mut per_pair: Vec<Vec<f64>> = Vec::with_capacity(designs.len());
    for de in designs {
        let widths = de
            .snapshot
            .phi
            .iter()
            .map(|phi| inverse_norm_sq(&de.chol, phi))
            .collect::<Result<Vec<f64>>>()?;
        per_pair.push(widths);
    }
    let mut out = vec![Vec::new(); designs.len()];
    for s in &log.steps {
        out[s.epoch - 1].push(per_pair[s.epoch - 1][s.state * n_actions + s.action]);
    }
    Ok(out)
}

/// `d log(1 + B^2 H^2 T / (lambda d))`.
pub fn log_det_cap(d: usize, bound: f64, truncation: f64, steps: usize, reg: f64) -> f64 {
    let df = d as f64;
    df * (1.0 + bound * bound * truncation * truncation * steps as f64 / (reg * df)).ln()
}

/// Modified elliptical potential on a linear-mixture run.
pub fn check_elliptical(log: &RunLog, bound: f64, reg: f64) -> Result<CheckReport> {
    let designs = design_epochs(log)?;
    let d = designs[0].snapshot.dim();
    let widths = step_widths(log, &designs)?;
    let mut lhs = 0.0;
    let mut details = Vec::with_capacity(widths.len());
    for (k, w) in widths.iter().enumerate() {
        let n = w.len() as f64;
        let term: f64 = w.iter().map(|s| (1.0 + n * s).ln()).sum::<f64>() / n;
        lhs += term;
        details.push(json!({"k": k + 1, "term": term}));
    }
    let rhs = log_det_cap(d, bound, log.truncation, log.horizon(), reg);
    details.insert(0, json!({"lhs": lhs, "rhs": rhs}));
    Ok(CheckReport::new(
        "elliptical_potential",
        lhs - rhs,
        ELLIPTICAL_TOL,
        details,
    ))
}

/// Number of epochs containing a step with `||phi||_{Lambda^{-1}} >= 1`.
pub fn check_bad_epochs(log: &RunLog, bound: f64, reg: f64) -> Result<CheckReport> {
    let designs = design_epochs(log)?;
    let d = designs[0].snapshot.dim();
    let widths = step_widths(log, &designs)?;
    let bad: Vec<usize> = widths
        .iter()
        .enumerate()
        .filter(|(_, w)| w.iter().any(|s| *s >= 1.0))
        .map(|(k, _)| k + 1)
        .collect();
    let cap = log_det_cap(d, bound, log.truncation, log.horizon(), reg) / std::f64::consts::LN_2;
    let count = bad.len() as f64;
    Ok(CheckReport::new(
        "bad_epochs",
        count - cap,
        0.0,
        vec![json!({"count": bad.len(), "cap": cap, "epochs": bad})],
    ))
}

/// Coverage of the self-normalized bound
/// `||S_t||^2_{Lambda_t^{-1}} <= 2 sigma^2 log(det(Lambda_t)^{1/2} det(Lambda_0)^{-1/2} / delta)`
/// uniformly over `t <= steps`, with `Lambda_0 = I`, features uniform on the
/// unit sphere and Rademacher noise of scale `sigma`.
pub fn check_self_normalized<R: Rng + ?Sized>(
    d: usize,
    sigma: f64,
    steps: usize,
    delta: f64,
    trials: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    if d == 0 || steps == 0 || trials == 0 {
        return Err(Error::invalid("d, T and trials must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) || !(sigma >= 0.0) {
        return Err(Error::invalid("need delta in (0, 1) and sigma >= 0"));
    }
    let seeds: Vec<u64> = (0..trials).map(|_| rng.random()).collect();
    let outcomes: Vec<(bool, f64)> = seeds
        .par_iter()
        .map(|&seed| self_normalized_trial(d, sigma, steps, delta, seed))
        .collect();
    let covered = outcomes.iter().filter(|o| o.0).count();
    let coverage = covered as f64 / trials as f64;
    let threshold = 1.0 - delta - 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt();
    let worst_ratio = outcomes.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(CheckReport::new(
        "self_normalized",
        threshold - coverage,
        0.0,
        vec![json!({"coverage": coverage, "threshold": threshold, "trials": trials,
                    "max_lhs_over_rhs": finite_or_null(worst_ratio)})],
    ))
}

fn self_normalized_trial(d: usize, sigma: f64, steps: usize, delta: f64, seed: u64) -> (bool, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inv = DMatrix::<f64>::identity(d, d);
    let mut s = DVector::<f64>::zeros(d);
    let mut log_det = 0.0;
    let mut covered = true;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..steps {
        let mut phi = DVector::from_fn(d, |_, _| {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            (-2.0 * (1.0 - u).ln()).sqrt() * (std::f64::consts::TAU * v).cos()
        });
        let norm = phi.norm();
        if norm > 0.0 {
            phi /= norm;
        }
        let noise = if rng.random::<bool>() { sigma } else { -sigma };
        s += &phi * noise;
        let inv_phi = &inv * &phi;
        let w = phi.dot(&inv_phi);
        inv -= (&inv_phi * inv_phi.transpose()) / (1.0 + w);
        log_det += (1.0 + w).ln();
        let lhs = s.dot(&(&inv * &s));
        let rhs = 2.0 * sigma * sigma * (0.5 * log_det - delta.ln());
        if lhs > rhs {
            covered = false;
        }
        if rhs > 0.0 {
            worst = worst.max(lhs / rhs);
        }
    }
    (covered, worst)
}

/// Least-squares slope of `log mean` against `log T`; `None` with fewer than
/// two horizons or a nonpositive mean.
pub fn loglog_slope(horizons: &[usize], means: &[f64]) -> Option<f64> {
    if horizons.len() < 2 || horizons.len() != means.len() || means.iter().any(|m| !(*m > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = horizons.iter().map(|&t| (t as f64).ln()).collect();
    let ys: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Horizons and seeds for [`check_regret_slope`].
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeGrid {
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub overrides: Overrides,
}

impl SlopeGrid {
    /// `T in {2^10, ..., 2^16}` with seeds `0..20`.
    pub fn standard() -> Self {
        Self {
            horizons: (10..=16).map(|p| 1usize << p).collect(),
            seeds: (0..20).collect(),
            overrides: Overrides::default(),
        }
    }
}

/// Regret-growth check from mean regrets already computed on a grid.
pub fn regret_slope_report(horizons: &[usize], regrets: &[Vec<f64>]) -> CheckReport {
    let stats: Vec<(f64, Option<f64>)> = regrets.iter().map(|r| mean_and_stderr(r)).collect();
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let mut details: Vec<Value> = horizons
        .iter()
        .zip(&stats)
        .map(|(t, (m, se))| json!({"T": t, "mean_regret": m, "stderr": se}))
        .collect();
    if means.iter().all(|m| m.abs() <= 1e-9) {
        details.insert(0, json!({"slope": Value::Null, "note": "zero regret at every horizon"}));
        return CheckReport::vacuous("regret_slope", details);
    }
    match loglog_slope(horizons, &means) {
        Some(slope) => {
            details.insert(0, json!({"slope": slope, "max_slope": REGRET_SLOPE_MAX}));
            CheckReport::new("regret_slope", slope - REGRET_SLOPE_MAX, 0.0, details)
        }
        None => {
            details.insert(0, json!({"slope": Value::Null, "note": "slope undefined"}));
            CheckReport::new("regret_slope", f64::INFINITY, 0.0, details)
        }
    }
}

/// Runs the planner over the grid and fits the log-log regret slope.
pub fn check_regret_slope(problem: &Problem, grid: &SlopeGrid) -> Result<CheckReport> {
    let regrets = sweep_regrets(problem, &grid.overrides, &grid.horizons, &grid.seeds)?;
    Ok(regret_slope_report(&grid.horizons, &regrets))
}

/// Online-to-batch: the suboptimality of a policy drawn at a uniformly random
/// time step (its epoch weighted by length) averages to `R_T / T`.
pub fn check_online_to_batch<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    log: &RunLog,
    trials: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    require_epochs(log)?;
    if trials < 2 {
        return Err(Error::invalid("need at least two resampling trials"));
    }
    let (opt, _) = optimal_normalized_return(mdp)?;
    let gaps = crate::harness::epoch_gaps(mdp, opt, log)?;
    let lengths = log.epoch_lengths();
    let t_total = log.horizon();
    let target = crate::harness::cumulative_regret(&gaps, &lengths) / t_total as f64;
    let draws: Vec<f64> = (0..trials)
        .map(|_| {
            let t = rng.random_range(0..t_total);
            gaps[log.steps[t].epoch - 1]
        })
        .collect();
    let (mean, se) = mean_and_stderr(&draws);
    let se = se.unwrap_or(0.0);
    let uniform_epoch_mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    Ok(CheckReport::new(
        "online_to_batch",
        (mean - target).abs() - 3.0 * se,
        1e-12,
        vec![json!({"resampled_mean": mean, "stderr": se, "regret_over_T": target,
                    "uniform_epoch_mean": uniform_epoch_mean, "trials": trials})],
    ))
}

/// Mixing: realized bonus sums over completed epochs against their exact
/// expectation `H <mu^{pi_k}, CB_k>`, agreement of means within 3 standard errors.
pub fn check_mixing(mdp: &TabularMdp, log: &RunLog) -> Result<CheckReport> {
    require_epochs(log)?;
    let lengths = log.completed_epoch_lengths();
    let completed = lengths.len();
    if completed < 2 {
        return Err(Error::invalid("mixing check needs at least two completed epochs"));
    }
    let mut realized = vec![0.0; completed];
    for s in &log.steps {
        if s.epoch <= completed {
            realized[s.epoch - 1] += log.epochs[s.epoch - 1].bonus.get(s.state, s.action);
        }
    }
    let h = mdp.horizon();
    let diffs = log.epochs[..completed]
        .par_iter()
        .zip(&realized)
        .map(|(e, r)| {
            let mu = occupancy_measure(mdp, &e.policy)?;
            Ok(r - h * mu.mass().inner(&e.bonus)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, se) = mean_and_stderr(&diffs);
    let se = se.unwrap_or(0.0);
    Ok(CheckReport::new(
        "mixing",
        mean.abs() - 3.0 * se,
        1e-12,
        vec![json!({"mean_difference": mean, "stderr": se, "epochs": completed})],
    ))
}

/// Geometric(1 - gamma) epoch lengths: mean within 5% of `H` and a one-sample
/// KS test at significance 0.01.
pub fn check_epoch_schedule(lengths: &[usize], gamma: f64) -> Result<CheckReport> {
    if lengths.is_empty() {
        return Err(Error::invalid("no completed epochs"));
    }
    let n = lengths.len();
    let h = 1.0 / (1.0 - gamma);
    let mean = lengths.iter().sum::<usize>() as f64 / n as f64;
    let rel = (mean - h).abs() / h;

    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    // The empirical CDF only jumps at integers, so the supremum is attained
    // at an observed value or just below it.
    let mut ks: f64 = 0.0;
    let mut i = 0;
    while i < n {
        let v = sorted[i];
        let mut j = i;
        while j < n && sorted[j] == v {
            j += 1;
        }
        let cdf_at = 1.0 - gamma.powi(v as i32);
        let cdf_below = 1.0 - gamma.powi(v as i32 - 1);
        ks = ks
            .max((j as f64 / n as f64 - cdf_at).abs())
            .max((i as f64 / n as f64 - cdf_below).abs());
        i = j;
    }
    let critical = KS_COEFF_001 / (n as f64).sqrt();
    let slack = (rel - EPOCH_MEAN_REL_TOL).max(ks - critical);
    Ok(CheckReport::new(
        "epoch_schedule",
        slack,
        0.0,
        vec![json!({"epochs": n, "mean_length": mean, "H": h, "relative_error": rel,
                    "ks_statistic": ks, "ks_critical": critical})],
    ))
}

/// `mean_run max_k |T_k| <= (4 + 2 log T) / (1 - gamma)`.
pub fn check_max_epoch(max_lengths: &[usize], gamma: f64, steps: usize) -> Result<CheckReport> {
    if max_lengths.is_empty() {
        return Err(Error::invalid("no runs"));
    }
    let mean = max_lengths.iter().sum::<usize>() as f64 / max_lengths.len() as f64;
    let bound = (4.0 + 2.0 * (steps as f64).ln()) / (1.0 - gamma);
    Ok(CheckReport::new(
        "max_epoch_length",
        mean - bound,
        0.0,
        vec![json!({"mean_max": mean, "bound": bound, "runs": max_lengths.len()})],
    ))
}

/// Non-negativity of every per-step regret term (`>= -1e-8`).
pub fn check_regret_monotone(mdp: &TabularMdp, log: &RunLog) -> Result<CheckReport> {
    let (opt, _) = optimal_normalized_return(mdp)?;
    let gaps = crate::harness::epoch_gaps(mdp, opt, log)?;
    let worst = gaps.iter().map(|g| -g).fold(f64::NEG_INFINITY, f64::max);
    Ok(CheckReport::new(
        "regret_monotone",
        worst,
        1e-8,
        vec![json!({"min_gap": -worst})],
    ))
}

/// Full suite on one recorded run. Linear-mixture checks need `(B, lambda)`.
pub fn validate_run<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    log: &RunLog,
    design: Option<(f64, f64)>,
    rng: &mut R,
) -> Result<Vec<CheckReport>> {
    let mut reports = vec![
        check_validity(mdp, log)?,
        check_sandwich(mdp, log)?,
        check_md_identity(log, 10_000, rng)?,
        check_online_to_batch(mdp, log, 1000, rng)?,
        check_regret_monotone(mdp, log)?,
    ];
    if log.completed_epoch_lengths().len() >= 2 {
        reports.push(check_mixing(mdp, log)?);
    }
    let mut kl_worst = f64::NEG_INFINITY;
    for pair in log.epochs.windows(2) {
        let r = check_kl_chain(mdp, &pair[1].policy, &pair[0].policy)?;
        kl_worst = kl_worst.max(r.worst_slack);
    }
    if log.epochs.len() >= 2 {
        reports.push(CheckReport::new(
            "kl_chain",
            kl_worst,
            KL_CHAIN_TOL,
            vec![json!({"pairs": log.epochs.len() - 1})],
        ));
    }
    if let Some((bound, reg)) = design {
        reports.push(check_elliptical(log, bound, reg)?);
        reports.push(check_bad_epochs(log, bound, reg)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_mdp, random_policy};
    use crate::planner::{run_ravi_ucb, ExactModel, PlannerConfig};
    use approx::assert_abs_diff_eq;

    fn exact_run(seed: u64, bonus: f64, steps: usize) -> (TabularMdp, RunLog) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(&mut rng, 4, 3, 0.8);
        let config = PlannerConfig::with_defaults(&mdp, steps, seed).unwrap();
        let mut est = ExactModel::new(mdp.clone(), bonus).unwrap();
        let log = run_ravi_ucb(&mdp, &mut est, &config, &mut rng).unwrap();
        (mdp, log)
    }

    #[test]
    fn validity_with_true_model_passes() {
        let (mdp, log) = exact_run(1, 0.3, 200);
        let r = check_validity(&mdp, &log).unwrap();
        assert!(r.pass);
        assert!(r.worst_slack <= 0.0);
        assert!(check_sandwich(&mdp, &log).unwrap().pass);
    }

    #[test]
    fn zero_bonus_with_perturbed_model_fails() {
        let (mdp, mut log) = exact_run(2, 0.0, 200);
        for e in &mut log.epochs {
            let v = e.next_value.get(0, 0);
            e.next_value.set(0, 0, v + 0.5);
            let q = e.q_next.get(0, 0);
            e.q_next.set(0, 0, q - 0.5);
        }
        let r = check_validity(&mdp, &log).unwrap();
        assert!(!r.pass);
        assert!(r.worst_slack > 0.0);
        // The sandwich only looks at valid epochs, so an all-invalid run is vacuous.
        assert!(check_sandwich(&mdp, &log).unwrap().pass);
    }

    #[test]
    fn sandwich_catches_bad_q() {
        let (mdp, mut log) = exact_run(3, 0.1, 200);
        let pv = expected_next_value(&mdp, &log.epochs[0].value).unwrap();
        let lower = mdp.reward().get(1, 1) + mdp.gamma() * pv.get(1, 1);
        log.epochs[0].q_next.set(1, 1, lower - 0.01);
        let r = check_sandwich(&mdp, &log).unwrap();
        assert!(!r.pass);
        assert_abs_diff_eq!(r.worst_slack, 0.01, epsilon = 1e-9);
    }

    #[test]
    fn md_identity_on_recorded_run() {
        let (_, log) = exact_run(4, 0.2, 400);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = check_md_identity(&log, 2000, &mut rng).unwrap();
        assert!(r.pass, "{:?}", r.details[0]);
    }

    #[test]
    fn md_identity_detects_wrong_policy() {
        let (_, mut log) = exact_run(5, 0.2, 200);
        log.epochs[1].policy = Policy::deterministic(3, &[0, 0, 0, 0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(!check_md_identity(&log, 200, &mut rng).unwrap().pass);
    }

    #[test]
    fn kl_chain_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mdp = random_mdp(&mut rng, 5, 3, 0.9);
        let pi = random_policy(&mut rng, 5, 3);
        let r = check_kl_chain(&mdp, &pi, &pi).unwrap();
        assert!(r.pass);
        assert_abs_diff_eq!(r.worst_slack, 0.0, epsilon = 1e-12);
        for _ in 0..20 {
            let a = random_policy(&mut rng, 5, 3);
            let b = random_policy(&mut rng, 5, 3);
            assert!(check_kl_chain(&mdp, &a, &b).unwrap().pass);
        }
        let det = Policy::deterministic(3, &[0, 1, 2, 0, 1]).unwrap();
        assert!(check_kl_chain(&mdp, &det, &pi).unwrap().pass);
        assert!(check_kl_chain(&mdp, &pi, &det).unwrap().pass);
    }

    #[test]
    fn self_normalized_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = check_self_normalized(3, 0.0, 50, 0.1, 20, &mut rng).unwrap();
        assert!(r.pass);
        assert_eq!(r.details[0]["coverage"], json!(1.0));
        let r = check_self_normalized(1, 1.0, 10, 0.1, 200, &mut rng).unwrap();
        assert!(r.pass);
    }

    #[test]
    fn slope_examples() {
        assert_eq!(loglog_slope(&[100], &[5.0]), None);
        let s = loglog_slope(&[100, 400], &[10.0, 20.0]).unwrap();
        assert_abs_diff_eq!(s, 0.5, epsilon = 1e-12);
        let zero = regret_slope_report(&[10, 20], &[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(zero.pass);
    }

    #[test]
    fn epoch_schedule_accepts_geometric_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gamma: f64 = 0.8;
        let lengths: Vec<usize> = (0..20_000)
            .map(|_| {
                let u: f64 = rng.random();
                ((1.0 - u).ln() / gamma.ln()).floor() as usize + 1
            })
            .collect();
        assert!(check_epoch_schedule(&lengths, gamma).unwrap().pass);
        let shifted: Vec<usize> = lengths.iter().map(|l| l + 1).collect();
        assert!(!check_epoch_schedule(&shifted, gamma).unwrap().pass);
    }

    #[test]
    fn online_to_batch_single_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mdp = random_mdp(&mut rng, 3, 2, 0.01);
        let config = PlannerConfig::with_defaults(&mdp, 1, 0).unwrap();
        let mut est = ExactModel::new(mdp.clone(), 0.0).unwrap();
        let log = run_ravi_ucb(&mdp, &mut est, &config, &mut rng).unwrap();
        let r = check_online_to_batch(&mdp, &log, 100, &mut rng).unwrap();
        assert!(r.pass);
        let d = &r.details[0];
        assert_abs_diff_eq!(
            d["resampled_mean"].as_f64().unwrap(),
            d["regret_over_T"].as_f64().unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn report_json_shape() {
        let r = CheckReport::new("x", -1.0, 0.0, vec![json!({"a": 1})]);
        let v: Value = serde_json::from_str(&reports_to_json(&[r]).unwrap()).unwrap();
        let keys: Vec<&String> = v[0].as_object().unwrap().keys().collect();
        assert_eq!(keys, ["check", "details", "pass", "worst_slack"]);
    }
}
