//! Experiment configuration, orchestration and on-disk artifacts.
//!
//! A run directory holds `config.json` (fully resolved), `mdp.json`,
//! `metrics.csv`, and one `seed_<s>/` folder per seed with `trace.csv`,
//! `epochs.json` and `run.json`. Everything except the optional `seconds`
//! column is a pure function of the config.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linmix::{linmix_beta, LinearMixtureEstimator, LinearMixtureMdp};
use crate::mdp::{normalized_return, optimal_normalized_return, Policy, StateActionTable, TabularMdp, ValueFunction};
use crate::planner::{
    default_learning_rate, run_ravi_ucb, DesignSnapshot, EpochRecord, Estimator, EstimatorSummary, PlannerConfig,
    RunLog, StepRecord,
};
use crate::tabular::{tabular_beta, TabularEstimator};
use crate::validation;

/// Ridge regularization used when the config does not set `lambda`.
pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Tabular,
    Linmix,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Tabular => "tabular",
            Backend::Linmix => "linmix",
        }
    }
}

/// An environment together with the structure its backend needs.
#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Tabular(TabularMdp),
    Linmix(LinearMixtureMdp),
}

impl Problem {
    pub fn mdp(&self) -> &TabularMdp {
        match self {
            Problem::Tabular(m) => m,
            Problem::Linmix(m) => m.base(),
        }
    }

    pub fn backend(&self) -> Backend {
        match self {
            Problem::Tabular(_) => Backend::Tabular,
            Problem::Linmix(_) => Backend::Linmix,
        }
    }

    /// Parses either MDP kind; documents carrying `psi` are linear mixtures.
    pub fn from_json_value(value: Value) -> Result<Self> {
        if value.get("psi").is_some() {
            Ok(Problem::Linmix(serde_json::from_value(value)?))
        } else {
            Ok(Problem::Tabular(serde_json::from_value(value)?))
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_json_value(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        match self {
            Problem::Tabular(m) => m.to_json_string(),
            Problem::Linmix(m) => m.to_json_string(),
        }
    }
}

/// Optional parameter overrides; `None` means the theory default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
}

/// Fully resolved algorithm parameters for one horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub eta: f64,
    pub beta: f64,
    pub lambda: f64,
    pub delta: f64,
}

impl RunParams {
    /// Fills defaults: `eta = sqrt(2 log|A| / (H^2 T))`, `delta = 1/T`,
    /// `lambda = 1`, and the backend's bonus coefficient.
    pub fn resolve(problem: &Problem, horizon: usize, overrides: &Overrides) -> Result<Self> {
        let mdp = problem.mdp();
        let h = mdp.horizon();
        let eta = match overrides.eta {
            Some(eta) => eta,
            None => default_learning_rate(mdp.n_actions(), h, horizon)?,
        };
        let delta = overrides
            .delta
            .unwrap_or(if horizon > 1 { 1.0 / horizon as f64 } else { 0.5 });
        let lambda = overrides.lambda.unwrap_or(DEFAULT_LAMBDA);
        Self {
            eta,
            beta: 0.0,
            lambda,
            delta,
        }
        .validate()?;
        let beta = match (overrides.beta, problem) {
            (Some(beta), _) => beta,
            (None, Problem::Tabular(m)) => tabular_beta(m.n_states(), m.n_actions(), horizon, delta, h)?,
            (None, Problem::Linmix(m)) => linmix_beta(m.d(), horizon, m.bound(), h, lambda, delta)?,
        };
        let params = Self {
            eta,
            beta,
            lambda,
            delta,
        };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config {
                    path: name.into(),
                    message: format!("must be a positive finite number, got {v}"),
                })
            }
        };
        positive("eta", self.eta)?;
        positive("lambda", self.lambda)?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config {
                path: "beta".into(),
                message: format!("must be nonnegative, got {}", self.beta),
            });
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config {
                path: "delta".into(),
                message: format!("must lie in (0, 1), got {}", self.delta),
            });
        }
        Ok(())
    }
}

fn make_estimator(problem: &Problem, params: &RunParams) -> Result<Box<dyn Estimator + Send>> {
    let h = problem.mdp().horizon();
    Ok(match problem {
        Problem::Tabular(m) => Box::new(TabularEstimator::new(m.n_states(), m.n_actions(), params.beta, h)?),
        Problem::Linmix(m) => Box::new(LinearMixtureEstimator::new(
            m.features().clone(),
            params.lambda,
            params.beta,
            h,
        )?),
    })
}

/// Suboptimality `<mu*, r> - <mu^{pi_k}, r>` of each epoch policy.
pub fn epoch_gaps(mdp: &TabularMdp, optimal_return: f64, log: &RunLog) -> Result<Vec<f64>> {
    log.epochs
        .iter()
        .map(|e| Ok(optimal_return - normalized_return(mdp, &e.policy)?))
        .collect()
}

/// `R_T = sum_t (<mu*, r> - <mu^{pi_t}, r>)`, one term per step.
pub fn cumulative_regret(gaps: &[f64], lengths: &[usize]) -> f64 {
    gaps.iter().zip(lengths).map(|(g, &n)| g * n as f64).sum()
}

/// One completed seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub params: RunParams,
    pub log: RunLog,
    pub optimal_return: f64,
    pub gaps: Vec<f64>,
    pub regret: f64,
    pub validity_violations: usize,
    pub seconds: f64,
}

impl SeedRun {
    pub fn metrics(&self) -> MetricsRow {
        let k = self.log.n_epochs();
        MetricsRow {
            seed: self.seed,
            horizon: self.log.horizon(),
            regret: self.regret,
            mean_epoch_len: self.log.horizon() as f64 / k as f64,
            epochs: k,
            validity_violations: self.validity_violations,
            seconds: None,
        }
    }
}

/// Runs one seed end to end, including the exact regret oracle.
pub fn run_seed(problem: &Problem, params: &RunParams, horizon: usize, seed: u64) -> Result<SeedRun> {
    let (opt, _) = optimal_normalized_return(problem.mdp())?;
    run_seed_with_optimum(problem, params, horizon, seed, opt)
}

pub(crate) fn run_seed_with_optimum(
    problem: &Problem,
    params: &RunParams,
    horizon: usize,
    seed: u64,
    optimal_return: f64,
) -> Result<SeedRun> {
    let started = Instant::now();
    let mdp = problem.mdp();
    let config = PlannerConfig {
        horizon,
        eta: params.eta,
        truncation: mdp.horizon(),
        delta: params.delta,
        seed,
        initial_policy: None,
    };
    let mut estimator = make_estimator(problem, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log = run_ravi_ucb(mdp, estimator.as_mut(), &config, &mut rng)?;
    let gaps = epoch_gaps(mdp, optimal_return, &log)?;
    if let Some(g) = gaps.iter().find(|g| **g < -1e-8) {
        return Err(Error::Numeric(format!("negative suboptimality gap {g}")));
    }
    let regret = cumulative_regret(&gaps, &log.epoch_lengths());
    let validity_violations = validation::validity_slacks(mdp, &log)?
        .iter()
        .filter(|s| **s > validation::VALIDITY_TOL)
        .count();
    Ok(SeedRun {
        seed,
        params: *params,
        log,
        optimal_return,
        gaps,
        regret,
        validity_violations,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub regret: f64,
    pub mean_epoch_len: f64,
    #[serde(rename = "K")]
    pub epochs: usize,
    pub validity_violations: usize,
    /// Wall-clock time, only recorded when timing is requested.
    pub seconds: Option<f64>,
}

/// Where the MDP came from.
#[derive(Debug, Clone, PartialEq)]
pub enum MdpSource {
    Path(PathBuf),
    Inline,
}

/// A validated experiment description with all defaults filled.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub source: MdpSource,
    pub backend: Backend,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub overrides: Overrides,
    pub params: RunParams,
    pub out_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDocument {
    mdp: Value,
    #[serde(default)]
    backend: Option<Backend>,
    #[serde(rename = "T")]
    horizon: usize,
    #[serde(default)]
    seeds: Option<Vec<u64>>,
    #[serde(default)]
    eta: Option<f64>,
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default)]
    lambda: Option<f64>,
    #[serde(default)]
    delta: Option<f64>,
    #[serde(default)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ResolvedConfigDocument<'a> {
    mdp: &'a str,
    backend: Backend,
    #[serde(rename = "T")]
    horizon: usize,
    seeds: &'a [u64],
    eta: f64,
    beta: f64,
    lambda: f64,
    delta: f64,
    out_dir: &'a str,
}

fn config_error(path: impl Into<String>, message: impl std::fmt::Display) -> Error {
    Error::Config {
        path: path.into(),
        message: message.to_string(),
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads and validates a JSON experiment config.
///
/// Relative `mdp` and `out_dir` paths resolve against the config's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = read_file(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, base)
}

/// Parses a config from text; `base` anchors relative paths.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ConfigDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let p = e.path().to_string();
        config_error(if p == "." { "<root>".to_string() } else { p }, e.into_inner())
    })?;

    let (problem, source) = match doc.mdp {
        Value::String(rel) => {
            let mdp_path = base.join(&rel);
            let text = read_file(&mdp_path).map_err(|e| config_error("mdp", e))?;
            let problem = Problem::from_json_str(&text).map_err(|e| config_error("mdp", e))?;
            (problem, MdpSource::Path(mdp_path))
        }
        v @ Value::Object(_) => (
            Problem::from_json_value(v).map_err(|e| config_error("mdp", e))?,
            MdpSource::Inline,
        ),
        _ => return Err(config_error("mdp", "expected a file path or an inline MDP object")),
    };

    let backend = doc.backend.unwrap_or(problem.backend());
    if backend != problem.backend() {
        return Err(config_error(
            "backend",
            format!(
                "backend `{}` does not match the {} MDP",
                backend.as_str(),
                match problem {
                    Problem::Tabular(_) => "tabular",
                    Problem::Linmix(_) => "linear-mixture",
                }
            ),
        ));
    }
    if doc.horizon == 0 {
        return Err(config_error("T", "must be at least 1"));
    }
    let seeds = doc.seeds.unwrap_or_else(|| vec![0]);
    if seeds.is_empty() {
        return Err(config_error("seeds", "must not be empty"));
    }
    for (i, s) in seeds.iter().enumerate() {
        if seeds[..i].contains(s) {
            return Err(config_error(format!("seeds[{i}]"), format!("duplicate seed {s}")));
        }
    }
    let overrides = Overrides {
        eta: doc.eta,
        beta: doc.beta,
        lambda: doc.lambda,
        delta: doc.delta,
    };
    if n_actions_too_small(&problem) && overrides.eta.is_none() {
        return Err(config_error(
            "eta",
            "default learning rate needs at least two actions; set `eta`",
        ));
    }
    let params = RunParams::resolve(&problem, doc.horizon, &overrides).map_err(|e| match e {
        e @ Error::Config { .. } => e,
        e => config_error("<root>", e),
    })?;
    let out_dir = base.join(doc.out_dir.unwrap_or_else(|| PathBuf::from("runs")));
    Ok(ExperimentConfig {
        problem,
        source,
        backend,
        horizon: doc.horizon,
        seeds,
        overrides,
        params,
        out_dir,
    })
}

fn n_actions_too_small(problem: &Problem) -> bool {
    problem.mdp().n_actions() < 2
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Output options for [`run_experiment`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Fill the `seconds` column (breaks byte-for-byte reproducibility).
    pub timing: bool,
}

/// Runs every seed in parallel and writes all artifacts under `config.out_dir`.
pub fn run_experiment(config: &ExperimentConfig, options: RunOptions) -> Result<Vec<MetricsRow>> {
    let out = &config.out_dir;
    create_dir(out)?;
    let (opt, _) = optimal_normalized_return(config.problem.mdp())?;
    let runs: Vec<MetricsRow> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = run_seed_with_optimum(&config.problem, &config.params, config.horizon, seed, opt)?;
            let dir = out.join(format!("seed_{seed}"));
            create_dir(&dir)?;
            write_trace(&dir.join("trace.csv"), &run.log)?;
            write_file(&dir.join("epochs.json"), &epochs_json(&run.log, &run.gaps)?)?;
            write_file(&dir.join("run.json"), &run_json(config, &run)?)?;
            let mut row = run.metrics();
            if options.timing {
                row.seconds = Some(run.seconds);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    write_file(&out.join("mdp.json"), &config.problem.to_json_string()?)?;
    write_file(&out.join("config.json"), &resolved_config_json(config)?)?;
    write_metrics(&out.join("metrics.csv"), &runs)?;
    Ok(runs)
}

fn resolved_config_json(config: &ExperimentConfig) -> Result<String> {
    let doc = ResolvedConfigDocument {
        mdp: "mdp.json",
        backend: config.backend,
        horizon: config.horizon,
        seeds: &config.seeds,
        eta: config.params.eta,
        beta: config.params.beta,
        lambda: config.params.lambda,
        delta: config.params.delta,
        out_dir: ".",
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

fn run_json(config: &ExperimentConfig, run: &SeedRun) -> Result<String> {
    let doc = json!({
        "seed": run.seed,
        "T": run.log.horizon(),
        "backend": config.backend,
        "gamma": run.log.gamma,
        "H": run.log.truncation,
        "eta": run.params.eta,
        "beta": run.params.beta,
        "lambda": run.params.lambda,
        "delta": run.params.delta,
        "pi0": run.log.initial_policy.to_rows(),
        "optimal_return": run.optimal_return,
        "regret": run.regret,
        "K": run.log.n_epochs(),
        "validity_violations": run.validity_violations,
    });
    Ok(serde_json::to_string_pretty(&doc)?)
}

fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    t: usize,
    epoch: usize,
    state: usize,
    action: usize,
    reward: f64,
    reset: u8,
}

fn write_trace(path: &Path, log: &RunLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in &log.steps {
        w.serialize(TraceRow {
            t: s.t,
            epoch: s.epoch,
            state: s.state,
            action: s.action,
            reward: s.reward,
            reset: u8::from(s.reset),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct EpochDocument {
    k: usize,
    #[serde(rename = "T_k")]
    start: usize,
    length: usize,
    gap: f64,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    value: Vec<f64>,
    policy: Vec<Vec<f64>>,
    #[serde(rename = "CB")]
    bonus: Vec<Vec<f64>>,
    #[serde(rename = "PV_hat")]
    next_value: Vec<Vec<f64>>,
    #[serde(rename = "Q_next")]
    q_next: Vec<Vec<f64>>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    counts: Option<Vec<Vec<u64>>>,
    #[serde(rename = "Lambda", default, skip_serializing_if = "Option::is_none")]
    lambda: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta_hat: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phi: Option<Vec<Vec<f64>>>,
}

fn epochs_json(log: &RunLog, gaps: &[f64]) -> Result<String> {
    let lengths = log.epoch_lengths();
    let docs: Vec<EpochDocument> = log
        .epochs
        .iter()
        .zip(&lengths)
        .zip(gaps)
        .map(|((e, &length), &gap)| {
            let mut doc = EpochDocument {
                k: e.k,
                start: e.start,
                length,
                gap,
                q: e.q.to_rows(),
                value: e.value.as_slice().to_vec(),
                policy: e.policy.to_rows(),
                bonus: e.bonus.to_rows(),
                next_value: e.next_value.to_rows(),
                q_next: e.q_next.to_rows(),
                counts: None,
                lambda: None,
                b: None,
                theta_hat: None,
                phi: None,
            };
            match &e.summary {
                EstimatorSummary::Counts(n) => {
                    doc.counts = Some(n.chunks(e.q.n_actions()).map(<[u64]>::to_vec).collect());
                }
                EstimatorSummary::Design(s) => {
                    doc.lambda = Some(s.lambda.chunks(s.dim()).map(<[f64]>::to_vec).collect());
                    doc.b = Some(s.b.clone());
                    doc.theta_hat = Some(s.theta_hat.clone());
                    doc.phi = Some(s.phi.clone());
                }
                EstimatorSummary::None => {}
            }
            doc
        })
        .collect();
    Ok(serde_json::to_string(&docs)?)
}

/// A run reloaded from disk.
#[derive(Debug, Clone)]
pub struct RecordedRun {
    pub seed: u64,
    pub log: RunLog,
}

/// Everything `validate` needs from a run directory.
#[derive(Debug, Clone)]
pub struct RecordedExperiment {
    pub config: ExperimentConfig,
    pub runs: Vec<RecordedRun>,
}

fn table(rows: &[Vec<f64>]) -> Result<StateActionTable> {
    StateActionTable::from_rows(rows)
}

fn load_log(dir: &Path, gamma: f64, truncation: f64, eta: f64) -> Result<RunLog> {
    let run: Value = serde_json::from_str(&read_file(&dir.join("run.json"))?)?;
    let pi0_rows: Vec<Vec<f64>> = serde_json::from_value(
        run.get("pi0")
            .cloned()
            .ok_or_else(|| Error::invalid("run.json lacks `pi0`"))?,
    )?;
    let initial_policy = Policy::from_rows(&pi0_rows)?;

    let trace_path = dir.join("trace.csv");
    let mut reader = csv::Reader::from_path(&trace_path)?;
    let mut steps = Vec::new();
    for row in reader.deserialize() {
        let row: TraceRow = row?;
        steps.push(StepRecord {
            t: row.t,
            epoch: row.epoch,
            state: row.state,
            action: row.action,
            reward: row.reward,
            reset: row.reset != 0,
        });
    }

    let docs: Vec<EpochDocument> = serde_json::from_str(&read_file(&dir.join("epochs.json"))?)?;
    let mut epochs = Vec::with_capacity(docs.len());
    for d in docs {
        let summary = match (d.counts, d.lambda) {
            (Some(n), _) => EstimatorSummary::Counts(n.concat()),
            (None, Some(lambda)) => EstimatorSummary::Design(DesignSnapshot {
                lambda: lambda.concat(),
                b: d.b.ok_or_else(|| Error::invalid(format!("epoch {} lacks `b`", d.k)))?,
                theta_hat: d
                    .theta_hat
                    .ok_or_else(|| Error::invalid(format!("epoch {} lacks `theta_hat`", d.k)))?,
                phi: d
                    .phi
                    .ok_or_else(|| Error::invalid(format!("epoch {} lacks `phi`", d.k)))?,
            }),
            (None, None) => EstimatorSummary::None,
        };
        epochs.push(EpochRecord {
            k: d.k,
            start: d.start,
            q: table(&d.q)?,
            value: ValueFunction(d.value),
            policy: Policy::from_rows(&d.policy)?,
            bonus: table(&d.bonus)?,
            next_value: table(&d.next_value)?,
            q_next: table(&d.q_next)?,
            summary,
        });
    }
    let log = RunLog {
        gamma,
        truncation,
        eta,
        initial_policy,
        steps,
        epochs,
    };
    log.check_partition()?;
    Ok(log)
}

/// Reloads a directory written by [`run_experiment`].
pub fn load_run_dir(dir: impl AsRef<Path>) -> Result<RecordedExperiment> {
    let dir = dir.as_ref();
    let mut config = load_config(dir.join("config.json"))?;
    config.out_dir = dir.to_path_buf();
    let mdp = config.problem.mdp();
    let (gamma, truncation, eta) = (mdp.gamma(), mdp.horizon(), config.params.eta);
    let runs = config
        .seeds
        .par_iter()
        .map(|&seed| {
            Ok(RecordedRun {
                seed,
                log: load_log(&dir.join(format!("seed_{seed}")), gamma, truncation, eta)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RecordedExperiment { config, runs })
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub mean_regret: f64,
    /// Standard error over seeds; empty with a single seed.
    pub stderr: Option<f64>,
    /// Least-squares log-log slope over all horizons; empty with a single horizon.
    pub slope: Option<f64>,
}

/// Mean and standard error of a sample (`None` when fewer than two points).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Mean regret at each horizon over the config's seeds. Parameters are
/// re-resolved per horizon, so unset defaults track `T`.
pub fn sweep_regrets(
    problem: &Problem,
    overrides: &Overrides,
    horizons: &[usize],
    seeds: &[u64],
) -> Result<Vec<Vec<f64>>> {
    let (opt, _) = optimal_normalized_return(problem.mdp())?;
    horizons
        .iter()
        .map(|&t| {
            let params = RunParams::resolve(problem, t, overrides)?;
            seeds
                .par_iter()
                .map(|&s| Ok(run_seed_with_optimum(problem, &params, t, s, opt)?.regret))
                .collect()
        })
        .collect()
}

/// Regret curve over `horizons`, written to `out_dir/sweep.csv`.
pub fn sweep(config: &ExperimentConfig, horizons: &[usize]) -> Result<Vec<SweepRow>> {
    if horizons.is_empty() || horizons.contains(&0) {
        return Err(config_error("--T", "need one or more positive horizons"));
    }
    let regrets = sweep_regrets(&config.problem, &config.overrides, horizons, &config.seeds)?;
    let stats: Vec<(f64, Option<f64>)> = regrets.iter().map(|r| mean_and_stderr(r)).collect();
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let slope = validation::loglog_slope(horizons, &means);
    let rows: Vec<SweepRow> = horizons
        .iter()
        .zip(stats)
        .map(|(&t, (mean, se))| SweepRow {
            horizon: t,
            mean_regret: mean,
            stderr: se,
            slope,
        })
        .collect();
    create_dir(&config.out_dir)?;
    let path = config.out_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{reference_linmix, reference_tabular};

    fn inline_config(extra: &str) -> String {
        let mdp = reference_tabular().to_json_string().unwrap();
        format!(r#"{{"mdp": {mdp}, "T": 100{extra}}}"#)
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(&inline_config(""), Path::new("/tmp")).unwrap();
        assert_eq!(cfg.backend, Backend::Tabular);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.params.delta, 0.01);
        assert_eq!(cfg.params.lambda, 1.0);
        let h = reference_tabular().horizon();
        assert_eq!(cfg.params.eta, default_learning_rate(2, h, 100).unwrap());
        assert_eq!(cfg.params.beta, tabular_beta(5, 2, 100, 0.01, h).unwrap());
        assert_eq!(cfg.out_dir, Path::new("/tmp/runs"));
    }

    #[test]
    fn overrides_are_honored() {
        let cfg = parse_config(
            &inline_config(r#", "eta": 0.25, "beta": 3.0, "seeds": [4, 2]"#),
            Path::new("."),
        )
        .unwrap();
        assert_eq!(cfg.params.eta, 0.25);
        assert_eq!(cfg.params.beta, 3.0);
        assert_eq!(cfg.seeds, vec![4, 2]);
    }

    #[test]
    fn config_errors_carry_field_paths() {
        let path_of = |text: &str| match parse_config(text, Path::new(".")) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(path_of(&inline_config(r#", "backend": "linmix""#)), "backend");
        assert_eq!(path_of(&inline_config(r#", "seeds": [1, "x"]"#)), "seeds[1]");
        assert_eq!(path_of(&inline_config(r#", "seeds": []"#)), "seeds");
        assert_eq!(path_of(&inline_config(r#", "seeds": [3, 3]"#)), "seeds[1]");
        assert_eq!(path_of(&inline_config(r#", "delta": 2.0"#)), "delta");
        assert_eq!(path_of(&inline_config(r#", "bogus": 1"#)), "bogus");
        assert_eq!(path_of(r#"{"mdp": 3, "T": 10}"#), "mdp");
        assert_eq!(path_of(r#"{"mdp": "missing.json", "T": 10}"#), "mdp");

        let lin = reference_linmix().to_json_string().unwrap();
        assert_eq!(
            path_of(&format!(r#"{{"mdp": {lin}, "T": 10, "backend": "tabular"}}"#)),
            "backend"
        );
        let ok = parse_config(&format!(r#"{{"mdp": {lin}, "T": 10}}"#), Path::new(".")).unwrap();
        assert_eq!(ok.backend, Backend::Linmix);
    }

    #[test]
    fn stderr_examples() {
        assert_eq!(mean_and_stderr(&[2.0]), (2.0, None));
        let (m, se) = mean_and_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn regret_is_gap_times_length() {
        assert_eq!(cumulative_regret(&[0.5, 0.0, 0.25], &[2, 7, 4]), 2.0);
    }
}
