//! Linear mixture MDPs: `P(x' | x, a) = sum_i theta_i psi_i(x, a, x')`.
//!
//! The learner knows the feature tensor `psi` but not `theta`. At the start of
//! epoch `k` it builds value-targeted features `phi_k(x, a) = sum_x' psi(x, a, x') V_k(x')`,
//! fits `theta_hat = Lambda^{-1} b` by ridge regression on the targets
//! `V_i(x_{t+1})`, and uses the elliptical width `||phi_k(x, a)||_{Lambda^{-1}}`
//! as its bonus. `theta_hat` is deliberately left unprojected, so `P_hat V`
//! need not be a valid expectation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mdp::{MdpDocument, StateActionTable, TabularMdp, ValueFunction, COMPUTED_PROB_TOL};
use crate::planner::{DesignSnapshot, EpochModel, Estimator, EstimatorSummary};

/// The known feature tensor `psi`, stored `d x |X| x |A| x |X|`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    d: usize,
    n_states: usize,
    n_actions: usize,
    psi: Vec<f64>,
}

impl FeatureMap {
    pub fn new(d: usize, n_states: usize, n_actions: usize, psi: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("feature dimension d must be positive"));
        }
        check_dim("feature tensor", d * n_states * n_actions * n_states, psi.len())?;
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature tensor has non-finite entries"));
        }
        Ok(Self {
            d,
            n_states,
            n_actions,
            psi,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `psi_i(x, a, .)` as a slice over next states.
    #[inline]
    pub fn component_row(&self, i: usize, x: usize, a: usize) -> &[f64] {
        let start = ((i * self.n_states + x) * self.n_actions + a) * self.n_states;
        &self.psi[start..start + self.n_states]
    }

    /// Smallest `B` certified by `||phi_V(x, a)||_2 <= B H` for all `V` in `[0, H]^X`,
    /// using `|phi_i| <= H sum_x' |psi_i(x, a, x')|`.
    pub fn feature_bound(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for x in 0..self.n_states {
            for a in 0..self.n_actions {
                let sq: f64 = (0..self.d)
                    .map(|i| {
                        let l1: f64 = self.component_row(i, x, a).iter().map(|v| v.abs()).sum();
                        l1 * l1
                    })
                    .sum();
                worst = worst.max(sq.sqrt());
            }
        }
        worst
    }

    /// `phi_V(x, a) = sum_x' psi(x, a, x') V(x')` for `V` with entries in `[0, H]`.
    pub fn features(&self, v: &ValueFunction, truncation: f64) -> Result<FeatureTable> {
        check_dim("value function", self.n_states, v.len())?;
        if let Some(bad) = v
            .as_slice()
            .iter()
            .find(|x| !(**x >= -1e-12 && **x <= truncation + 1e-12))
        {
            return Err(Error::invalid(format!("value {bad} outside [0, {truncation}]")));
        }
        let mut phi = vec![0.0; self.n_states * self.n_actions * self.d];
        for x in 0..self.n_states {
            for a in 0..self.n_actions {
                let pair = x * self.n_actions + a;
                for i in 0..self.d {
                    phi[pair * self.d + i] = crate::mdp::dot(self.component_row(i, x, a), v.as_slice());
                }
            }
        }
        Ok(FeatureTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            d: self.d,
            phi,
        })
    }
}

/// Epoch features `phi_k(x, a)`, one `d`-vector per state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    n_states: usize,
    n_actions: usize,
    d: usize,
    phi: Vec<f64>,
}

impl FeatureTable {
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, x: usize, a: usize) -> &[f64] {
        let start = (x * self.n_actions + a) * self.d;
        &self.phi[start..start + self.d]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.phi.chunks(self.d).map(<[f64]>::to_vec).collect()
    }

    pub fn max_norm(&self) -> f64 {
        self.phi
            .chunks(self.d)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// A linear mixture MDP with its hidden mixing weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinmixDocument", into = "LinmixDocument")]
pub struct LinearMixtureMdp {
    base: TabularMdp,
    features: FeatureMap,
    theta: Vec<f64>,
    bound: f64,
}

impl LinearMixtureMdp {
    /// Builds the MDP with `P = sum_i theta_i psi_i` and checks the feature
    /// and parameter bounds against `bound`.
    pub fn new(
        features: FeatureMap,
        theta: Vec<f64>,
        bound: f64,
        reward: StateActionTable,
        gamma: f64,
        nu0: Vec<f64>,
    ) -> Result<Self> {
        check_dim("theta", features.d, theta.len())?;
        reward.check_shape(features.n_states, features.n_actions)?;
        let ns = features.n_states;
        let mut transition = vec![0.0; ns * features.n_actions * ns];
        for x in 0..ns {
            for a in 0..features.n_actions {
                let start = (x * features.n_actions + a) * ns;
                for (i, &w) in theta.iter().enumerate() {
                    for (y, p) in features.component_row(i, x, a).iter().enumerate() {
                        transition[start + y] += w * p;
                    }
                }
                let row = &mut transition[start..start + ns];
                if let Some(p) = row.iter().find(|p| **p < -COMPUTED_PROB_TOL) {
                    return Err(Error::invalid(format!("mixture row ({x}, {a}) has negative mass {p}")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > COMPUTED_PROB_TOL {
                    return Err(Error::invalid(format!("mixture row ({x}, {a}) sums to {sum}")));
                }
                // Snap sub-1e-10 rounding so the base MDP passes its input checks.
                row.iter_mut().for_each(|p| *p = p.max(0.0) / sum);
            }
        }
        let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm > bound + 1e-12 {
            return Err(Error::invalid(format!("||theta||_2 = {norm} exceeds B = {bound}")));
        }
        let certified = features.feature_bound();
        if certified > bound + 1e-12 {
            return Err(Error::invalid(format!(
                "feature bound certificate {certified} exceeds B = {bound}"
            )));
        }
        let base = TabularMdp::new(reward, transition, gamma, nu0)?;
        Ok(Self {
            base,
            features,
            theta,
            bound,
        })
    }

    /// The induced tabular MDP (true kernel included).
    pub fn base(&self) -> &TabularMdp {
        &self.base
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn d(&self) -> usize {
        self.features.d
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// `B`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LinmixDocument {
    #[serde(flatten)]
    base: LinmixBase,
    d: usize,
    psi: Vec<Vec<Vec<Vec<f64>>>>,
    theta: Vec<f64>,
    #[serde(rename = "B")]
    bound: f64,
}

/// Base-MDP fields; `transition` is optional on input and cross-checked when present.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LinmixBase {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    nu0: Vec<f64>,
    reward: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transition: Option<Vec<Vec<Vec<f64>>>>,
}

impl TryFrom<LinmixDocument> for LinearMixtureMdp {
    type Error = Error;

    fn try_from(doc: LinmixDocument) -> Result<Self> {
        let (ns, na) = (doc.base.n_states, doc.base.n_actions);
        check_dim("psi components", doc.d, doc.psi.len())?;
        let mut psi = Vec::with_capacity(doc.d * ns * na * ns);
        for comp in &doc.psi {
            check_dim("psi states", ns, comp.len())?;
            for per_state in comp {
                check_dim("psi actions", na, per_state.len())?;
                for row in per_state {
                    check_dim("psi next-states", ns, row.len())?;
                    psi.extend_from_slice(row);
                }
            }
        }
        check_dim("reward rows", ns, doc.base.reward.len())?;
        let reward = StateActionTable::from_rows(&doc.base.reward)?;
        let features = FeatureMap::new(doc.d, ns, na, psi)?;
        let mdp = LinearMixtureMdp::new(features, doc.theta, doc.bound, reward, doc.base.gamma, doc.base.nu0)?;
        if let Some(transition) = doc.base.transition {
            let given = TabularMdp::try_from(MdpDocument {
                n_states: ns,
                n_actions: na,
                gamma: doc.base.gamma,
                nu0: mdp.base.nu0().to_vec(),
                reward: doc.base.reward,
                transition,
            })?;
            let gap = given
                .transition()
                .iter()
                .zip(mdp.base.transition())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if gap > COMPUTED_PROB_TOL {
                return Err(Error::invalid(format!(
                    "stored transition differs from sum_i theta_i psi_i by {gap}"
                )));
            }
        }
        Ok(mdp)
    }
}

impl From<LinearMixtureMdp> for LinmixDocument {
    fn from(mdp: LinearMixtureMdp) -> Self {
        let f = &mdp.features;
        let psi = (0..f.d)
            .map(|i| {
                (0..f.n_states)
                    .map(|x| (0..f.n_actions).map(|a| f.component_row(i, x, a).to_vec()).collect())
                    .collect()
            })
            .collect();
        let base: MdpDocument = mdp.base.clone().into();
        LinmixDocument {
            base: LinmixBase {
                n_states: base.n_states,
                n_actions: base.n_actions,
                gamma: base.gamma,
                nu0: base.nu0,
                reward: base.reward,
                transition: Some(base.transition),
            },
            d: f.d,
            psi,
            theta: mdp.theta,
            bound: mdp.bound,
        }
    }
}

/// Checks that every row of `kernel` is a distribution (within 1e-12).
fn check_kernel(kernel: &[f64], n_states: usize, n_actions: usize, idx: usize) -> Result<()> {
    check_dim("kernel", n_states * n_actions * n_states, kernel.len())?;
    for (r, row) in kernel.chunks(n_states).enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > crate::mdp::INPUT_PROB_TOL {
            return Err(Error::invalid(format!("kernel {idx} row {r} is not a distribution")));
        }
    }
    Ok(())
}

/// Mixture of `d` stochastic kernels with simplex weights; records `B = sqrt(d)`.
pub fn build_convex_mixture_env(
    kernels: &[Vec<f64>],
    theta: &[f64],
    reward: StateActionTable,
    gamma: f64,
    nu0: Vec<f64>,
) -> Result<LinearMixtureMdp> {
    let d = kernels.len();
    check_dim("theta", d, theta.len())?;
    if d == 0 {
        return Err(Error::invalid("need at least one kernel"));
    }
    let (ns, na) = (reward.n_states(), reward.n_actions());
    for (i, k) in kernels.iter().enumerate() {
        check_kernel(k, ns, na, i)?;
    }
    let sum: f64 = theta.iter().sum();
    if theta.iter().any(|t| *t < 0.0 || !t.is_finite()) || (sum - 1.0).abs() > crate::mdp::INPUT_PROB_TOL {
        return Err(Error::invalid("mixing weights must lie on the simplex"));
    }
    let features = FeatureMap::new(d, ns, na, kernels.concat())?;
    LinearMixtureMdp::new(features, theta.to_vec(), (d as f64).sqrt(), reward, gamma, nu0)
}

/// `phi_V` for the mixture's feature map; `V` must lie in `[0, H]`.
pub fn phi_of_value(mdp: &LinearMixtureMdp, v: &ValueFunction) -> Result<FeatureTable> {
    mdp.features.features(v, mdp.base.horizon())
}

/// Ridge-regression design: `Lambda = lambda I + sum phi phi^T`, `b = sum phi y`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignState {
    lambda: DMatrix<f64>,
    b: DVector<f64>,
    reg: f64,
}

impl DesignState {
    pub fn new(d: usize, reg: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("design dimension must be positive"));
        }
        if !(reg > 0.0 && reg.is_finite()) {
            return Err(Error::invalid(format!("regularization {reg} must be positive")));
        }
        Ok(Self {
            lambda: DMatrix::identity(d, d) * reg,
            b: DVector::zeros(d),
            reg,
        })
    }

    pub fn d(&self) -> usize {
        self.b.len()
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn lambda_matrix(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn b_vector(&self) -> &DVector<f64> {
        &self.b
    }

    /// Rank-one update `Lambda += phi phi^T`, `b += phi * target`.
    pub fn record(&mut self, phi: &[f64], target: f64) -> Result<()> {
        check_dim("feature vector", self.d(), phi.len())?;
        if !target.is_finite() || phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite regression sample"));
        }
        let d = self.d();
        for i in 0..d {
            self.b[i] += phi[i] * target;
            for j in i..d {
                let v = phi[i] * phi[j];
                self.lambda[(i, j)] += v;
                if i != j {
                    self.lambda[(j, i)] += v;
                }
            }
        }
        Ok(())
    }

    pub fn factor(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.lambda.clone())
            .ok_or_else(|| Error::Numeric("design matrix is not positive definite".into()))
    }

    pub fn log_det(&self) -> Result<f64> {
        let chol = self.factor()?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
    }

    pub fn snapshot_rows(&self) -> Vec<Vec<f64>> {
        (0..self.d())
            .map(|i| self.lambda.row(i).iter().copied().collect())
            .collect()
    }
}

/// `theta_hat = Lambda^{-1} b` via Cholesky.
pub fn least_squares_theta(design: &DesignState) -> Result<Vec<f64>> {
    let chol = design.factor()?;
    let theta = chol.solve(&design.b);
    let residual = (&design.lambda * &theta - &design.b).norm();
    if !(residual <= 1e-9 * (1.0 + design.b.norm())) {
        return Err(Error::Numeric(format!("least-squares residual {residual} too large")));
    }
    Ok(theta.iter().copied().collect())
}

/// `(P_hat V)(x, a) = <phi(x, a), theta_hat>`.
pub fn estimated_backup_values(theta_hat: &[f64], features: &FeatureTable) -> Result<StateActionTable> {
    check_dim("theta_hat", features.d, theta_hat.len())?;
    Ok(StateActionTable::from_fn(
        features.n_states,
        features.n_actions,
        |x, a| crate::mdp::dot(features.row(x, a), theta_hat),
    ))
}

/// `||phi||^2_{Lambda^{-1}}` given the Cholesky factor of `Lambda`.
pub fn inverse_norm_sq(chol: &Cholesky<f64, Dyn>, phi: &[f64]) -> Result<f64> {
    let v = DVector::from_column_slice(phi);
    let y = chol
        .l_dirty()
        .solve_lower_triangular(&v)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    Ok(y.norm_squared())
}

/// `min(beta ||phi_k(x, a)||_{Lambda^{-1}}, H)`.
pub fn elliptical_bonus(
    features: &FeatureTable,
    design: &DesignState,
    beta: f64,
    truncation: f64,
) -> Result<StateActionTable> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("bonus coefficient {beta} must be nonnegative")));
    }
    check_dim("feature dimension", design.d(), features.d)?;
    let chol = design.factor()?;
    let mut out = StateActionTable::zeros(features.n_states, features.n_actions);
    for x in 0..features.n_states {
        for a in 0..features.n_actions {
            let width = inverse_norm_sq(&chol, features.row(x, a))?.sqrt();
            out.set(x, a, (beta * width).min(truncation));
        }
    }
    Ok(out)
}

/// `H sqrt(2 ((d/2) log(1 + T B^2 H^2 / (lambda d)) + log(1/delta))) + sqrt(lambda) B`.
pub fn linmix_beta(d: usize, steps: usize, bound: f64, truncation: f64, reg: f64, delta: f64) -> Result<f64> {
    if d == 0 || steps == 0 {
        return Err(Error::invalid("d and T must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta {delta} outside (0, 1)")));
    }
    if !(bound > 0.0 && truncation > 0.0 && reg > 0.0) {
        return Err(Error::invalid("B, H and lambda must be positive"));
    }
    let df = d as f64;
    let log_det_term = 0.5 * df * (1.0 + steps as f64 * bound * bound * truncation * truncation / (reg * df)).ln();
    Ok(truncation * (2.0 * (log_det_term + (1.0 / delta).ln())).sqrt() + reg.sqrt() * bound)
}

/// Linear-mixture backend: least-squares model and elliptical bonuses.
#[derive(Debug, Clone)]
pub struct LinearMixtureEstimator {
    features: FeatureMap,
    design: DesignState,
    beta: f64,
    truncation: f64,
    epoch: Option<(FeatureTable, ValueFunction)>,
}

impl LinearMixtureEstimator {
    pub fn new(features: FeatureMap, reg: f64, beta: f64, truncation: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("bonus coefficient {beta} must be nonnegative")));
        }
        Ok(Self {
            design: DesignState::new(features.d, reg)?,
            features,
            beta,
            truncation,
            epoch: None,
        })
    }

    pub fn design(&self) -> &DesignState {
        &self.design
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Estimator for LinearMixtureEstimator {
    fn n_states(&self) -> usize {
        self.features.n_states
    }

    fn n_actions(&self) -> usize {
        self.features.n_actions
    }

    fn begin_epoch(&mut self, value: &ValueFunction) -> Result<EpochModel> {
        let theta_hat = least_squares_theta(&self.design)?;
        let phi = self.features.features(value, self.truncation)?;
        let next_value = estimated_backup_values(&theta_hat, &phi)?;
        let bonus = elliptical_bonus(&phi, &self.design, self.beta, self.truncation)?;
        let summary = EstimatorSummary::Design(DesignSnapshot {
            lambda: self.design.lambda.transpose().as_slice().to_vec(),
            b: self.design.b.as_slice().to_vec(),
            theta_hat,
            phi: phi.to_rows(),
        });
        self.epoch = Some((phi, value.clone()));
        Ok(EpochModel {
            next_value,
            bonus,
            summary,
        })
    }

    fn record_transition(&mut self, x: usize, a: usize, x_next: usize) -> Result<()> {
        let (phi, value) = self
            .epoch
            .as_ref()
            .ok_or_else(|| Error::invalid("record_transition called before the first epoch"))?;
        if x >= self.features.n_states || x_next >= self.features.n_states || a >= self.features.n_actions {
            return Err(Error::invalid(format!("transition ({x}, {a}, {x_next}) out of range")));
        }
        let row = phi.row(x, a).to_vec();
        self.design.record(&row, value[x_next])
    }
}
