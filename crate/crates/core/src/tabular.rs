//! Count-based transition estimates and Hoeffding-style bonuses.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{StateActionTable, ValueFunction};
use crate::planner::{EpochModel, Estimator, EstimatorSummary};

/// Visit counts. `n` starts at 1 so that `n(x, a) = 1 + sum_x' n3(x, a, x')`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTables {
    n_states: usize,
    n_actions: usize,
    n: Vec<u64>,
    n3: Vec<u64>,
}

#[derive(Serialize)]
struct CountsDocument {
    n: Vec<Vec<u64>>,
    n3: Vec<Vec<Vec<u64>>>,
}

impl CountTables {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            n: vec![1; n_states * n_actions],
            n3: vec![0; n_states * n_actions * n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn visits(&self, x: usize, a: usize) -> u64 {
        self.n[x * self.n_actions + a]
    }

    pub fn transitions(&self, x: usize, a: usize, y: usize) -> u64 {
        self.n3[(x * self.n_actions + a) * self.n_states + y]
    }

    pub fn visit_counts(&self) -> &[u64] {
        &self.n
    }

    /// Adds one observed transition `(x, a) -> x_next`.
    pub fn record(&mut self, x: usize, a: usize, x_next: usize) -> Result<()> {
        if x >= self.n_states || x_next >= self.n_states || a >= self.n_actions {
            return Err(Error::invalid(format!(
                "transition ({x}, {a}, {x_next}) out of range for {} states, {} actions",
                self.n_states, self.n_actions
            )));
        }
        let pair = x * self.n_actions + a;
        self.n[pair] += 1;
        self.n3[pair * self.n_states + x_next] += 1;
        Ok(())
    }

    /// JSON export with nested `n[x][a]` and `n3[x][a][x']` arrays.
    pub fn to_json_string(&self) -> Result<String> {
        let doc = CountsDocument {
            n: self.n.chunks(self.n_actions).map(<[u64]>::to_vec).collect(),
            n3: self
                .n3
                .chunks(self.n_actions * self.n_states)
                .map(|per_state| per_state.chunks(self.n_states).map(<[u64]>::to_vec).collect())
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }
}

/// `P_hat(x' | x, a) = n3(x, a, x') / n(x, a)`; rows are sub-stochastic.
pub fn mle_estimate(counts: &CountTables) -> Vec<f64> {
    let ns = counts.n_states;
    let mut p = vec![0.0; counts.n3.len()];
    for (pair, &n) in counts.n.iter().enumerate() {
        let denom = n as f64;
        for y in 0..ns {
            p[pair * ns + y] = counts.n3[pair * ns + y] as f64 / denom;
        }
    }
    p
}

/// `min(beta / sqrt(n(x, a)), H)`.
pub fn tabular_bonus(counts: &CountTables, beta: f64, truncation: f64) -> Result<StateActionTable> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("bonus coefficient {beta} must be nonnegative")));
    }
    let values = counts
        .n
        .iter()
        .map(|&n| (beta / (n as f64).sqrt()).min(truncation))
        .collect();
    StateActionTable::from_flat(counts.n_states, counts.n_actions, values)
}

/// `8 H sqrt(|X| log(|X| |A| T / delta))`.
pub fn tabular_beta(n_states: usize, n_actions: usize, steps: usize, delta: f64, truncation: f64) -> Result<f64> {
    if n_states == 0 || n_actions == 0 || steps == 0 {
        return Err(Error::invalid("state count, action count and T must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta {delta} outside (0, 1)")));
    }
    if !(truncation > 0.0) {
        return Err(Error::invalid(format!("H = {truncation} must be positive")));
    }
    let log_term = (n_states as f64 * n_actions as f64 * steps as f64 / delta).ln();
    Ok(8.0 * truncation * (n_states as f64 * log_term).sqrt())
}

/// Tabular backend: MLE model and count bonuses, refreshed at epoch starts.
#[derive(Debug, Clone)]
pub struct TabularEstimator {
    counts: CountTables,
    beta: f64,
    truncation: f64,
}

impl TabularEstimator {
    pub fn new(n_states: usize, n_actions: usize, beta: f64, truncation: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("bonus coefficient {beta} must be nonnegative")));
        }
        Ok(Self {
            counts: CountTables::new(n_states, n_actions),
            beta,
            truncation,
        })
    }

    pub fn counts(&self) -> &CountTables {
        &self.counts
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Estimator for TabularEstimator {
    fn n_states(&self) -> usize {
        self.counts.n_states
    }

    fn n_actions(&self) -> usize {
        self.counts.n_actions
    }

    fn begin_epoch(&mut self, value: &ValueFunction) -> Result<EpochModel> {
        crate::error::check_dim("value function", self.counts.n_states, value.len())?;
        let ns = self.counts.n_states;
        let p_hat = mle_estimate(&self.counts);
        let next_value = StateActionTable::from_fn(ns, self.counts.n_actions, |x, a| {
            let start = (x * self.counts.n_actions + a) * ns;
            crate::mdp::dot(&p_hat[start..start + ns], value.as_slice())
        });
        Ok(EpochModel {
            next_value,
            bonus: tabular_bonus(&self.counts, self.beta, self.truncation)?,
            summary: EstimatorSummary::Counts(self.counts.n.clone()),
        })
    }

    fn record_transition(&mut self, x: usize, a: usize, x_next: usize) -> Result<()> {
        self.counts.record(x, a, x_next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn invariant_holds(c: &CountTables) -> bool {
        (0..c.n_states).all(|x| {
            (0..c.n_actions).all(|a| {
                let total: u64 = (0..c.n_states).map(|y| c.transitions(x, a, y)).sum();
                c.visits(x, a) == 1 + total
            })
        })
    }

    #[test]
    fn record_examples() {
        let mut c = CountTables::new(2, 2);
        c.record(0, 0, 1).unwrap();
        assert_eq!(c.visits(0, 0), 2);
        assert_eq!(c.transitions(0, 0, 1), 1);
        for _ in 0..5 {
            c.record(1, 1, 0).unwrap();
        }
        assert_eq!(c.visits(1, 1), 6);
        assert!(invariant_holds(&c));
        assert!(c.record(2, 0, 0).is_err());
        assert!(c.record(0, 2, 0).is_err());
        assert!(c.record(0, 0, 2).is_err());
    }

    #[test]
    fn mle_examples() {
        let mut c = CountTables::new(3, 1);
        for _ in 0..3 {
            c.record(0, 0, 1).unwrap();
        }
        let p = mle_estimate(&c);
        assert_eq!(p[1], 0.75);
        assert_eq!(&p[3..6], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn bonus_examples() {
        let c = CountTables::new(2, 2);
        let b = tabular_bonus(&c, 1.0, 5.0).unwrap();
        assert!(b.as_slice().iter().all(|&v| v == 1.0));
        let b = tabular_bonus(&c, 1.0, 0.5).unwrap();
        assert!(b.as_slice().iter().all(|&v| v == 0.5));

        let mut c = CountTables::new(1, 1);
        for _ in 0..99 {
            c.record(0, 0, 0).unwrap();
        }
        assert_eq!(tabular_bonus(&c, 5.0, 10.0).unwrap().get(0, 0), 0.5);
        assert!(tabular_bonus(&c, -1.0, 10.0).is_err());
    }

    #[test]
    fn beta_examples() {
        assert_abs_diff_eq!(
            tabular_beta(2, 2, 100, 0.01, 10.0).unwrap(),
            368.289_186_080_218_4,
            epsilon = 1e-9
        );
        let b1 = tabular_beta(3, 2, 100, 0.1, 2.0).unwrap();
        let b2 = tabular_beta(3, 2, 100, 0.1, 6.0).unwrap();
        assert_abs_diff_eq!(b2, 3.0 * b1, epsilon = 1e-12);
        assert!(tabular_beta(3, 2, 1000, 0.1, 2.0).unwrap() > b1);
        assert!(tabular_beta(3, 2, 100, 0.01, 2.0).unwrap() > b1);
        assert!(tabular_beta(3, 2, 100, 1.0, 2.0).is_err());
        assert!(tabular_beta(3, 2, 100, 0.0, 2.0).is_err());
    }

    #[test]
    fn counts_json_export() {
        let mut c = CountTables::new(2, 1);
        c.record(1, 0, 0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&c.to_json_string().unwrap()).unwrap();
        assert_eq!(v["n"], serde_json::json!([[1], [2]]));
        assert_eq!(v["n3"], serde_json::json!([[[0, 0]], [[1, 0]]]));
    }

    #[test]
    fn estimator_uses_counts_at_epoch_start() {
        let mut est = TabularEstimator::new(2, 1, 1.0, 10.0).unwrap();
        est.record_transition(0, 0, 1).unwrap();
        let model = est.begin_epoch(&ValueFunction(vec![0.0, 4.0])).unwrap();
        assert_eq!(model.next_value.get(0, 0), 2.0);
        assert_abs_diff_eq!(model.bonus.get(0, 0), 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(model.next_value.get(1, 0), 0.0);
    }

    proptest! {
        #[test]
        fn counts_invariant_and_monotone_bonus(
            transitions in prop::collection::vec((0usize..3, 0usize..2, 0usize..3), 0..60)
        ) {
            let mut c = CountTables::new(3, 2);
            let mut prev = tabular_bonus(&c, 2.0, 10.0).unwrap();
            for (x, a, y) in transitions {
                c.record(x, a, y).unwrap();
                let next = tabular_bonus(&c, 2.0, 10.0).unwrap();
                for (p, n) in prev.as_slice().iter().zip(next.as_slice()) {
                    prop_assert!(n <= p);
                }
                prev = next;
            }
            prop_assert!(invariant_holds(&c));
            let p = mle_estimate(&c);
            for pair in 0..6 {
                let s: f64 = p[pair * 3..pair * 3 + 3].iter().sum();
                let n = c.visit_counts()[pair] as f64;
                prop_assert!((s - (n - 1.0) / n).abs() < 1e-12);
            }
        }
    }
}
