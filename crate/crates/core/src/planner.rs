//! The RAVI-UCB main loop.
//!
//! Each epoch performs one mirror-descent step (a softmax update of the
//! policy against the current optimistic action values), asks the estimator
//! backend for a model-based backup `P_hat V_k` and bonus `CB_k`, and forms the
//! truncated optimistic backup `Q_{k+1} = clamp(r + CB_k + gamma P_hat V_k, 0, H)`.
//! The frozen policy is then executed until a geometric reset ends the epoch.
//!
//! Random-stream consumption is fixed: one draw for the initial state, then per
//! step the action draw, the transition draw, the reset coin, and the reset
//! state draw when the coin fires.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::mdp::{
    expected_next_value, sample_categorical, sample_step, ActionValueFunction, Policy, StateActionTable, TabularMdp,
    ValueFunction,
};

/// Learning rate `sqrt(2 log|A| / (H^2 T))`.
pub fn default_learning_rate(n_actions: usize, horizon_h: f64, steps: usize) -> Result<f64> {
    if n_actions < 2 {
        return Err(Error::invalid("learning rate needs at least two actions (log|A| = 0)"));
    }
    if steps == 0 {
        return Err(Error::invalid("horizon T must be at least 1"));
    }
    if !(horizon_h > 0.0 && horizon_h.is_finite()) {
        return Err(Error::invalid(format!(
            "effective horizon {horizon_h} must be positive"
        )));
    }
    Ok(learning_rate((n_actions as f64).ln(), horizon_h, steps as f64))
}

fn learning_rate(log_actions: f64, horizon_h: f64, steps: f64) -> f64 {
    (2.0 * log_actions / (horizon_h * horizon_h * steps)).sqrt()
}

/// Parameters of a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    /// Number of interaction steps `T`.
    pub horizon: usize,
    pub eta: f64,
    /// Truncation level `H = 1 / (1 - gamma)`.
    pub truncation: f64,
    /// Confidence level used by the bonus coefficient; defaults to `1 / T`.
    pub delta: f64,
    pub seed: u64,
    /// `pi_0`; uniform when `None`.
    pub initial_policy: Option<Policy>,
}

impl PlannerConfig {
    /// Theory defaults: `eta` from [`default_learning_rate`], `delta = 1 / T`.
    pub fn with_defaults(mdp: &TabularMdp, horizon: usize, seed: u64) -> Result<Self> {
        let truncation = mdp.horizon();
        let eta = default_learning_rate(mdp.n_actions(), truncation, horizon)?;
        let delta = if horizon > 1 { 1.0 / horizon as f64 } else { 0.5 };
        Ok(Self {
            horizon,
            eta,
            truncation,
            delta,
            seed,
            initial_policy: None,
        })
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon T must be at least 1"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.eta)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta {} outside (0, 1)", self.delta)));
        }
        if !(self.truncation > 0.0 && self.truncation.is_finite()) {
            return Err(Error::invalid(format!(
                "truncation {} must be positive",
                self.truncation
            )));
        }
        Ok(())
    }
}

/// Mirror-descent step against `q`.
///
/// Returns `V(x) = (1/eta) log sum_a pi_prev(a|x) exp(eta Q(x,a))` and
/// `pi(a|x) = pi_prev(a|x) exp(eta (Q(x,a) - V(x)))`, with per-state max
/// subtraction and a final row renormalization.
pub fn softmax_update(pi_prev: &Policy, q: &ActionValueFunction, eta: f64) -> Result<(ValueFunction, Policy)> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("learning rate {eta} must be positive")));
    }
    q.check_shape(pi_prev.n_states(), pi_prev.n_actions())?;
    let n_states = q.n_states();
    let n_actions = q.n_actions();
    let mut values = Vec::with_capacity(n_states);
    let mut probs = StateActionTable::zeros(n_states, n_actions);
    for x in 0..n_states {
        let prior = pi_prev.row(x);
        let qs = q.row(x);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (p, &qv) in prior.iter().zip(qs) {
            if *p > 0.0 {
                lo = lo.min(qv);
                hi = hi.max(qv);
            }
        }
        let row = probs.row_mut(x);
        let mut total = 0.0;
        for a in 0..n_actions {
            if prior[a] > 0.0 {
                row[a] = prior[a] * (eta * (qs[a] - hi)).exp();
                total += row[a];
            }
        }
        let value = hi + total.ln() / eta;
        values.push(value.clamp(lo, hi));
        row.iter_mut().for_each(|w| *w /= total);
        let drift: f64 = row.iter().sum::<f64>() - 1.0;
        if drift != 0.0 {
            let renorm: f64 = row.iter().sum();
            row.iter_mut().for_each(|w| *w /= renorm);
        }
    }
    Ok((ValueFunction(values), Policy::from_table_unchecked(probs)))
}

/// `clamp(r + cb + gamma * estimated_pv, 0, H)`, entrywise.
pub fn optimistic_backup(
    reward: &StateActionTable,
    cb: &StateActionTable,
    estimated_pv: &StateActionTable,
    gamma: f64,
    truncation: f64,
) -> Result<ActionValueFunction> {
    cb.check_shape(reward.n_states(), reward.n_actions())?;
    estimated_pv.check_shape(reward.n_states(), reward.n_actions())?;
    if let Some(b) = cb.as_slice().iter().find(|b| !(**b >= 0.0)) {
        return Err(Error::invalid(format!("bonus entry {b} is negative or NaN")));
    }
    let values = reward
        .as_slice()
        .iter()
        .zip(cb.as_slice())
        .zip(estimated_pv.as_slice())
        .map(|((r, b), pv)| (r + b + gamma * pv).clamp(0.0, truncation))
        .collect();
    StateActionTable::from_flat(reward.n_states(), reward.n_actions(), values)
}

/// Design-matrix state frozen at an epoch boundary (linear-mixture backend).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSnapshot {
    /// `Lambda_{T_k}`, row-major `d x d`.
    pub lambda: Vec<f64>,
    pub b: Vec<f64>,
    pub theta_hat: Vec<f64>,
    /// Epoch features `phi_k(x, a)`, row `x * |A| + a`, each of length `d`.
    pub phi: Vec<Vec<f64>>,
}

impl DesignSnapshot {
    pub fn dim(&self) -> usize {
        self.b.len()
    }
}

/// What the estimator looked like when an epoch began.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorSummary {
    /// Visit counts `N_{T_k}(x, a)` (row-major).
    Counts(Vec<u64>),
    Design(DesignSnapshot),
    None,
}

/// Output of an estimator at an epoch boundary.
#[derive(Debug, Clone)]
pub struct EpochModel {
    /// `P_hat_k V_k`.
    pub next_value: ActionValueFunction,
    /// `CB_k`.
    pub bonus: StateActionTable,
    pub summary: EstimatorSummary,
}

/// Backend contract: a transition estimate applied to `V_k`, a bonus table,
/// and a data store fed one transition at a time.
pub trait Estimator {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;

    /// Freezes the data gathered so far and produces `P_hat_k V_k` and `CB_k`.
    fn begin_epoch(&mut self, value: &ValueFunction) -> Result<EpochModel>;

    fn record_transition(&mut self, x: usize, a: usize, x_next: usize) -> Result<()>;
}

/// Backend that knows the true kernel and returns a constant bonus.
///
/// Used to exercise the planner with a perfectly valid model.
#[derive(Debug, Clone)]
pub struct ExactModel {
    mdp: TabularMdp,
    bonus: f64,
}

impl ExactModel {
    pub fn new(mdp: TabularMdp, bonus: f64) -> Result<Self> {
        if !(bonus >= 0.0) {
            return Err(Error::invalid(format!("bonus {bonus} must be nonnegative")));
        }
        Ok(Self { mdp, bonus })
    }
}

impl Estimator for ExactModel {
    fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    fn begin_epoch(&mut self, value: &ValueFunction) -> Result<EpochModel> {
        Ok(EpochModel {
            next_value: expected_next_value(&self.mdp, value)?,
            bonus: StateActionTable::filled(self.mdp.n_states(), self.mdp.n_actions(), self.bonus),
            summary: EstimatorSummary::None,
        })
    }

    fn record_transition(&mut self, _x: usize, _a: usize, _x_next: usize) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based time index.
    pub t: usize,
    /// 1-based epoch index.
    pub epoch: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    /// A reset fired after this step and closed the epoch.
    pub reset: bool,
}

/// Snapshot of everything computed at the start of epoch `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub k: usize,
    /// First time index `T_k`.
    pub start: usize,
    /// `Q_k`, the values the mirror-descent step was taken against.
    pub q: ActionValueFunction,
    pub value: ValueFunction,
    pub policy: Policy,
    pub bonus: StateActionTable,
    /// `P_hat_k V_k`.
    pub next_value: ActionValueFunction,
    /// `Q_{k+1}`.
    pub q_next: ActionValueFunction,
    pub summary: EstimatorSummary,
}

/// Per-step and per-epoch trace of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub gamma: f64,
    pub truncation: f64,
    pub eta: f64,
    pub initial_policy: Policy,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl RunLog {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn n_epochs(&self) -> usize {
        self.epochs.len()
    }

    /// Number of steps spent in each epoch.
    pub fn epoch_lengths(&self) -> Vec<usize> {
        let mut lengths = vec![0; self.epochs.len()];
        for s in &self.steps {
            lengths[s.epoch - 1] += 1;
        }
        lengths
    }

    /// Lengths of the epochs closed by a reset (the final, possibly
    /// truncated, epoch is excluded unless it ended with a reset).
    pub fn completed_epoch_lengths(&self) -> Vec<usize> {
        let lengths = self.epoch_lengths();
        let closed = self.steps.iter().filter(|s| s.reset).count();
        lengths.into_iter().take(closed).collect()
    }

    /// Checks that epochs partition `1..=T` and resets close every epoch but the last.
    pub fn check_partition(&self) -> Result<()> {
        let mut expected_epoch = 1;
        for (i, s) in self.steps.iter().enumerate() {
            if s.t != i + 1 {
                return Err(Error::invalid(format!("step {i} has time index {}", s.t)));
            }
            if s.epoch != expected_epoch {
                return Err(Error::invalid(format!(
                    "step {} labelled epoch {}, expected {expected_epoch}",
                    s.t, s.epoch
                )));
            }
            if self.epochs.get(s.epoch - 1).map(|e| e.k) != Some(s.epoch) {
                return Err(Error::invalid(format!("missing epoch record {}", s.epoch)));
            }
            if s.reset {
                expected_epoch += 1;
            }
        }
        check_dim(
            "epoch records",
            self.epochs.len(),
            self.steps.last().map_or(0, |s| s.epoch),
        )?;
        for e in &self.epochs {
            if self.steps.get(e.start - 1).map(|s| s.epoch) != Some(e.k) {
                return Err(Error::invalid(format!(
                    "epoch {} start {} does not match trace",
                    e.k, e.start
                )));
            }
        }
        Ok(())
    }
}

/// Runs RAVI-UCB for `config.horizon` steps on `mdp` with the given backend.
pub fn run_ravi_ucb<E, R>(mdp: &TabularMdp, estimator: &mut E, config: &PlannerConfig, rng: &mut R) -> Result<RunLog>
where
    E: Estimator + ?Sized,
    R: Rng + ?Sized,
{
    config.validate()?;
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    check_dim("estimator states", n_states, estimator.n_states())?;
    check_dim("estimator actions", n_actions, estimator.n_actions())?;
    let initial_policy = match &config.initial_policy {
        Some(pi) => {
            pi.table().check_shape(n_states, n_actions)?;
            pi.clone()
        }
        None => Policy::uniform(n_states, n_actions),
    };
    let gamma = mdp.gamma();
    let reset_prob = 1.0 - gamma;

    let mut steps = Vec::with_capacity(config.horizon);
    let mut epochs = Vec::new();
    let mut x = sample_categorical(mdp.nu0(), rng.random());
    let mut q = StateActionTable::zeros(n_states, n_actions);
    let mut pi_prev = initial_policy.clone();
    let mut t = 1;
    let mut k = 0;

    while t <= config.horizon {
        k += 1;
        let start = t;
        let (value, policy) = softmax_update(&pi_prev, &q, config.eta)?;
        let model = estimator.begin_epoch(&value)?;
        let q_next = optimistic_backup(mdp.reward(), &model.bonus, &model.next_value, gamma, config.truncation)?;

        loop {
            let a = sample_categorical(policy.row(x), rng.random());
            let x_next = sample_step(mdp, x, a, rng)?;
            estimator.record_transition(x, a, x_next)?;
            let coin: f64 = rng.random();
            let last = t == config.horizon;
            let reset = coin < reset_prob && !last;
            steps.push(StepRecord {
                t,
                epoch: k,
                state: x,
                action: a,
                reward: mdp.reward().get(x, a),
                reset,
            });
            t += 1;
            if reset {
                x = sample_categorical(mdp.nu0(), rng.random());
                break;
            }
            x = x_next;
            if last {
                break;
            }
        }

        epochs.push(EpochRecord {
            k,
            start,
            q: std::mem::replace(&mut q, q_next.clone()),
            value,
            policy: policy.clone(),
            bonus: model.bonus,
            next_value: model.next_value,
            q_next,
            summary: model.summary,
        });
        pi_prev = policy;
    }

    Ok(RunLog {
        gamma,
        truncation: config.truncation,
        eta: config.eta,
        initial_policy,
        steps,
        epochs,
    })
}

/// Returns the policy of an epoch drawn uniformly at random.
pub fn online_to_batch_select<R: Rng + ?Sized>(log: &RunLog, rng: &mut R) -> Result<Policy> {
    if log.epochs.is_empty() {
        return Err(Error::invalid("run log has no epochs"));
    }
    let k = rng.random_range(0..log.epochs.len());
    Ok(log.epochs[k].policy.clone())
}
