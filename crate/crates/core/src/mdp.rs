//! Finite discounted MDPs and exact dynamic-programming oracles.
//!
//! Everything here is dense and exact: policy values and occupancy measures
//! come from direct linear solves, so the results double as ground truth for
//! regret accounting and for the checks in [`crate::validation`].
//!
//! Layout conventions used throughout the crate:
//! - state-action tables are row-major `|X| x |A|`, index `x * |A| + a`;
//! - transition tensors are `|X| x |A| x |X|`, index `(x * |A| + a) * |X| + x'`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Tolerance on probability vectors supplied as input.
pub const INPUT_PROB_TOL: f64 = 1e-12;
/// Tolerance on probability vectors produced by computation.
pub const COMPUTED_PROB_TOL: f64 = 1e-10;

/// Dense `|X| x |A|` table of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionTable {
    n_states: usize,
    n_actions: usize,
    data: Vec<f64>,
}

/// Action values `Q(x, a)`.
pub type ActionValueFunction = StateActionTable;

impl StateActionTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_states,
            n_actions,
            data: vec![value; n_states * n_actions],
        }
    }

    pub fn from_fn(n_states: usize, n_actions: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n_states * n_actions);
        for x in 0..n_states {
            for a in 0..n_actions {
                data.push(f(x, a));
            }
        }
        Self {
            n_states,
            n_actions,
            data,
        }
    }

    pub fn from_flat(n_states: usize, n_actions: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("state-action table", n_states * n_actions, data.len())?;
        Ok(Self {
            n_states,
            n_actions,
            data,
        })
    }

    /// Builds a table from one row per state.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("table must have at least one row"));
        }
        let n_actions = rows[0].len();
        if n_actions == 0 {
            return Err(Error::invalid("table rows must be nonempty"));
        }
        let mut data = Vec::with_capacity(rows.len() * n_actions);
        for row in rows {
            check_dim("table row", n_actions, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self {
            n_states: rows.len(),
            n_actions,
            data,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.data[x * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, x: usize, a: usize, value: f64) {
        self.data[x * self.n_actions + a] = value;
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.n_actions..(x + 1) * self.n_actions]
    }

    #[inline]
    pub fn row_mut(&mut self, x: usize) -> &mut [f64] {
        &mut self.data[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|x| self.row(x).to_vec()).collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        check_dim("table states", n_states, self.n_states)?;
        check_dim("table actions", n_actions, self.n_actions)
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        other.check_shape(self.n_states, self.n_actions)
    }
}

/// State values `V(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueFunction(pub Vec<f64>);

impl ValueFunction {
    pub fn constant(n_states: usize, value: f64) -> Self {
        Self(vec![value; n_states])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for ValueFunction {
    type Output = f64;

    fn index(&self, x: usize) -> &f64 {
        &self.0[x]
    }
}

fn check_distribution(what: &str, p: &[f64], tol: f64) -> Result<()> {
    let mut sum = 0.0;
    for &v in p {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::invalid(format!("{what}: entry {v} is not a nonnegative real")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > tol {
        return Err(Error::invalid(format!("{what}: sums to {sum}, expected 1")));
    }
    Ok(())
}

/// A stationary randomized policy `pi(a | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: StateActionTable,
}

impl Policy {
    /// Wraps a table whose rows must already be distributions (within 1e-12).
    pub fn new(probs: StateActionTable) -> Result<Self> {
        for x in 0..probs.n_states() {
            check_distribution(&format!("policy row {x}"), probs.row(x), INPUT_PROB_TOL)?;
        }
        Ok(Self { probs })
    }

    /// Normalizes each row of nonnegative weights.
    pub fn from_weights(mut weights: StateActionTable) -> Result<Self> {
        for x in 0..weights.n_states() {
            let row = weights.row_mut(x);
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::invalid(format!(
                    "policy weights row {x} has a negative or non-finite entry"
                )));
            }
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return Err(Error::invalid(format!("policy weights row {x} sums to zero")));
            }
            row.iter_mut().for_each(|w| *w /= total);
        }
        Ok(Self { probs: weights })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(StateActionTable::from_rows(rows)?)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: StateActionTable::filled(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    /// Deterministic policy playing `actions[x]` in state `x`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = StateActionTable::zeros(actions.len(), n_actions);
        for (x, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::invalid(format!("action {a} out of range for state {x}")));
            }
            probs.set(x, a, 1.0);
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_table_unchecked(probs: StateActionTable) -> Self {
        Self { probs }
    }

    pub fn n_states(&self) -> usize {
        self.probs.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.n_actions()
    }

    #[inline]
    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs.get(x, a)
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        self.probs.row(x)
    }

    pub fn table(&self) -> &StateActionTable {
        &self.probs
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.probs.to_rows()
    }
}

/// Normalized discounted state-action occupancy measure `mu(x, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    mass: StateActionTable,
}

impl OccupancyMeasure {
    /// Checks nonnegativity and unit total mass (within 1e-10).
    pub fn new(mass: StateActionTable) -> Result<Self> {
        check_distribution("occupancy measure", mass.as_slice(), COMPUTED_PROB_TOL)?;
        Ok(Self { mass })
    }

    pub fn mass(&self) -> &StateActionTable {
        &self.mass
    }

    #[inline]
    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.mass.get(x, a)
    }

    /// State marginal `E^T mu`.
    pub fn state_marginal(&self) -> Vec<f64> {
        (0..self.mass.n_states())
            .map(|x| self.mass.row(x).iter().sum())
            .collect()
    }
}

/// A finite discounted MDP `(X, A, r, P, gamma, nu0)` with known rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    reward: StateActionTable,
    transition: Vec<f64>,
    gamma: f64,
    nu0: Vec<f64>,
}

impl TabularMdp {
    /// `transition` is the flat `|X| x |A| x |X|` tensor.
    pub fn new(reward: StateActionTable, transition: Vec<f64>, gamma: f64, nu0: Vec<f64>) -> Result<Self> {
        let n_states = reward.n_states();
        let n_actions = reward.n_actions();
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("MDP needs at least one state and one action"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid(format!("discount {gamma} outside (0, 1)")));
        }
        if let Some(r) = reward.as_slice().iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::invalid(format!("reward {r} outside [0, 1]")));
        }
        check_dim("transition tensor", n_states * n_actions * n_states, transition.len())?;
        check_dim("initial distribution", n_states, nu0.len())?;
        check_distribution("initial distribution", &nu0, INPUT_PROB_TOL)?;
        for x in 0..n_states {
            for a in 0..n_actions {
                let start = (x * n_actions + a) * n_states;
                check_distribution(
                    &format!("transition row ({x}, {a})"),
                    &transition[start..start + n_states],
                    INPUT_PROB_TOL,
                )?;
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            reward,
            transition,
            gamma,
            nu0,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Effective horizon `1 / (1 - gamma)`.
    pub fn horizon(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    pub fn reward(&self) -> &StateActionTable {
        &self.reward
    }

    pub fn nu0(&self) -> &[f64] {
        &self.nu0
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    #[inline]
    pub fn transition_row(&self, x: usize, a: usize) -> &[f64] {
        let start = (x * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn check_state(&self, x: usize) -> Result<()> {
        if x >= self.n_states {
            return Err(Error::invalid(format!(
                "state {x} out of range (|X| = {})",
                self.n_states
            )));
        }
        Ok(())
    }

    fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.n_actions {
            return Err(Error::invalid(format!(
                "action {a} out of range (|A| = {})",
                self.n_actions
            )));
        }
        Ok(())
    }

    fn check_policy(&self, pi: &Policy) -> Result<()> {
        pi.table().check_shape(self.n_states, self.n_actions)
    }

    /// Policy-averaged kernel `P_pi` (row-major `|X| x |X|`) and reward `r_pi`.
    fn policy_averaged(&self, pi: &Policy) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_states;
        let mut p_pi = DMatrix::zeros(n, n);
        let mut r_pi = DVector::zeros(n);
        for x in 0..n {
            for a in 0..self.n_actions {
                let w = pi.prob(x, a);
                if w == 0.0 {
                    continue;
                }
                r_pi[x] += w * self.reward.get(x, a);
                for (y, p) in self.transition_row(x, a).iter().enumerate() {
                    p_pi[(x, y)] += w * p;
                }
            }
        }
        (p_pi, r_pi)
    }
}

/// On-disk JSON layout of a [`TabularMdp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub nu0: Vec<f64>,
    pub reward: Vec<Vec<f64>>,
    pub transition: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        check_dim("reward rows", doc.n_states, doc.reward.len())?;
        let reward = StateActionTable::from_rows(&doc.reward)?;
        check_dim("reward columns", doc.n_actions, reward.n_actions())?;
        check_dim("transition rows", doc.n_states, doc.transition.len())?;
        let mut transition = Vec::with_capacity(doc.n_states * doc.n_actions * doc.n_states);
        for per_state in &doc.transition {
            check_dim("transition actions", doc.n_actions, per_state.len())?;
            for row in per_state {
                check_dim("transition next-states", doc.n_states, row.len())?;
                transition.extend_from_slice(row);
            }
        }
        TabularMdp::new(reward, transition, doc.gamma, doc.nu0)
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(mdp: TabularMdp) -> Self {
        let transition = (0..mdp.n_states)
            .map(|x| (0..mdp.n_actions).map(|a| mdp.transition_row(x, a).to_vec()).collect())
            .collect();
        MdpDocument {
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            gamma: mdp.gamma,
            reward: mdp.reward.to_rows(),
            nu0: mdp.nu0,
            transition,
        }
    }
}

/// `(Pf)(x, a) = sum_x' P(x' | x, a) f(x')`.
pub fn expected_next_value(mdp: &TabularMdp, v: &ValueFunction) -> Result<ActionValueFunction> {
    check_dim("value function", mdp.n_states, v.len())?;
    Ok(StateActionTable::from_fn(mdp.n_states, mdp.n_actions, |x, a| {
        dot(mdp.transition_row(x, a), v.as_slice())
    }))
}

/// `r + gamma * P v`.
pub fn bellman_backup(mdp: &TabularMdp, v: &ValueFunction) -> Result<ActionValueFunction> {
    let mut q = expected_next_value(mdp, v)?;
    for (qv, r) in q.data.iter_mut().zip(mdp.reward.as_slice()) {
        *qv = r + mdp.gamma * *qv;
    }
    Ok(q)
}

/// Bellman optimality operator `max_a (r + gamma P v)`.
pub fn max_backup(mdp: &TabularMdp, v: &ValueFunction) -> Result<ValueFunction> {
    let q = bellman_backup(mdp, v)?;
    Ok(row_max(&q))
}

fn row_max(q: &StateActionTable) -> ValueFunction {
    ValueFunction(
        (0..q.n_states())
            .map(|x| q.row(x).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
    )
}

/// Value iteration with the `gamma / (1 - gamma)` stopping certificate.
///
/// Stops once `||V - max_a(r + gamma P V)||_inf <= tol * (1 - gamma)`, which
/// puts `V` within `tol` of `V*`. The target is floored at the rounding level
/// of values of magnitude `H`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<(ValueFunction, ActionValueFunction)> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance {tol} must be positive")));
    }
    let target = (tol * (1.0 - mdp.gamma)).max(8.0 * f64::EPSILON * mdp.horizon());
    let max_iter = 10_000_000usize;
    let mut v = ValueFunction::constant(mdp.n_states, 0.0);
    for _ in 0..max_iter {
        let q = bellman_backup(mdp, &v)?;
        let next = row_max(&q);
        if next.sup_distance(&v) <= target {
            return Ok((v, q));
        }
        v = next;
    }
    Err(Error::Numeric(format!(
        "value iteration did not reach residual {target} in {max_iter} sweeps"
    )))
}

/// Deterministic policy greedy in `q`; ties go to the lowest action index.
pub fn greedy_policy(q: &ActionValueFunction) -> Policy {
    let actions: Vec<usize> = (0..q.n_states())
        .map(|x| {
            let row = q.row(x);
            let mut best = 0;
            for a in 1..row.len() {
                if row[a] > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    Policy::deterministic(q.n_actions(), &actions).expect("greedy action in range")
}

fn solve_dense(mat: DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let check = mat.clone();
    let sol = mat
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Numeric(format!("{what}: singular linear system")))?;
    let residual = (&check * &sol - rhs).amax();
    if !(residual <= 1e-10) {
        return Err(Error::Numeric(format!(
            "{what}: solve residual {residual} exceeds 1e-10"
        )));
    }
    Ok(sol)
}

/// Exact `V^pi` from `(I - gamma P_pi) V = r_pi`.
pub fn policy_evaluation(mdp: &TabularMdp, pi: &Policy) -> Result<ValueFunction> {
    mdp.check_policy(pi)?;
    let n = mdp.n_states;
    let (p_pi, r_pi) = mdp.policy_averaged(pi);
    let lhs = DMatrix::identity(n, n) - p_pi * mdp.gamma;
    let v = solve_dense(lhs, &r_pi, "policy evaluation")?;
    Ok(ValueFunction(v.iter().copied().collect()))
}

/// `mu^pi(x, a) = nu^pi(x) pi(a | x)` with `nu^pi` solving the flow equations.
pub fn occupancy_measure(mdp: &TabularMdp, pi: &Policy) -> Result<OccupancyMeasure> {
    mdp.check_policy(pi)?;
    let n = mdp.n_states;
    let (p_pi, _) = mdp.policy_averaged(pi);
    let lhs = DMatrix::identity(n, n) - p_pi.transpose() * mdp.gamma;
    let rhs = DVector::from_iterator(n, mdp.nu0.iter().map(|p| (1.0 - mdp.gamma) * p));
    let nu = solve_dense(lhs, &rhs, "occupancy measure")?;
    let mass = StateActionTable::from_fn(n, mdp.n_actions, |x, a| nu[x].max(0.0) * pi.prob(x, a));
    let mu = OccupancyMeasure::new(mass)?;
    let residual = flow_residual(mdp, &mu)?;
    if residual > COMPUTED_PROB_TOL {
        return Err(Error::Numeric(format!(
            "occupancy flow residual {residual} exceeds 1e-10"
        )));
    }
    Ok(mu)
}

/// `<mu^pi, r>`, the return scaled by `1 - gamma`.
pub fn normalized_return(mdp: &TabularMdp, pi: &Policy) -> Result<f64> {
    let mu = occupancy_measure(mdp, pi)?;
    mu.mass().inner(&mdp.reward)
}

/// `<mu*, r>` computed from the greedy policy of near-exact value iteration.
pub fn optimal_normalized_return(mdp: &TabularMdp) -> Result<(f64, Policy)> {
    let (_, q) = value_iteration(mdp, 1e-11)?;
    let pi = greedy_policy(&q);
    Ok((normalized_return(mdp, &pi)?, pi))
}

/// `||E^T mu - gamma P^T mu - (1 - gamma) nu0||_inf`.
pub fn flow_residual(mdp: &TabularMdp, mu: &OccupancyMeasure) -> Result<f64> {
    mu.mass().check_shape(mdp.n_states, mdp.n_actions)?;
    let mut lhs = mu.state_marginal();
    for x in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let m = mu.get(x, a);
            if m == 0.0 {
                continue;
            }
            for (y, p) in mdp.transition_row(x, a).iter().enumerate() {
                lhs[y] -= mdp.gamma * p * m;
            }
        }
    }
    Ok(lhs
        .iter()
        .zip(&mdp.nu0)
        .map(|(l, nu)| (l - (1.0 - mdp.gamma) * nu).abs())
        .fold(0.0, f64::max))
}

/// `KL(p || q)` with the `0 log 0 = 0` convention.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_dim("distribution", p.len(), q.len())?;
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(Error::Domain(format!(
                "absolute continuity violated at index {i}: p = {pi}, q = {qi}"
            )));
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl)
}

/// Conditional relative entropy `H(pi || pi') = <nu^pi, KL(pi || pi')>`.
pub fn conditional_relative_entropy(mdp: &TabularMdp, pi: &Policy, pi_ref: &Policy) -> Result<f64> {
    mdp.check_policy(pi_ref)?;
    let nu = occupancy_measure(mdp, pi)?.state_marginal();
    let mut total = 0.0;
    for (x, &weight) in nu.iter().enumerate() {
        let kl = kl_divergence(pi.row(x), pi_ref.row(x))?;
        total += weight * kl;
    }
    Ok(total.max(0.0))
}

/// `KL(mu || mu')` over state-action pairs.
pub fn occupancy_kl(mu: &OccupancyMeasure, mu_ref: &OccupancyMeasure) -> Result<f64> {
    mu.mass()
        .check_shape(mu_ref.mass().n_states(), mu_ref.mass().n_actions())?;
    kl_divergence(mu.mass().as_slice(), mu_ref.mass().as_slice())
}

/// Inverse-CDF draw from `probs` given a uniform variate `u` in `[0, 1)`.
///
/// Falls back to the last index with positive mass when rounding leaves the
/// prefix sum short of `u`.
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Draws `X' ~ P(. | x, a)`, consuming exactly one uniform variate.
pub fn sample_step<R: Rng + ?Sized>(mdp: &TabularMdp, x: usize, a: usize, rng: &mut R) -> Result<usize> {
    mdp.check_state(x)?;
    mdp.check_action(a)?;
    let u: f64 = rng.random();
    Ok(sample_categorical(mdp.transition_row(x, a), u))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
