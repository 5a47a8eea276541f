//! Python bindings: MDP oracles, parameter formulas and seeded planner runs.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ravi_ucb::harness::{self, Overrides, Problem, RunOptions, RunParams, SeedRun};
use ravi_ucb::{instances, linmix, mdp, planner, tabular, validation};
use ravi_ucb::{Error, LinearMixtureMdp, Policy, StateActionTable, TabularMdp, ValueFunction};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) | Error::Json(_) | Error::Csv(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn table(rows: Vec<Vec<f64>>) -> PyResult<StateActionTable> {
    StateActionTable::from_rows(&rows).map_err(py_err)
}

fn policy(rows: Vec<Vec<f64>>) -> PyResult<Policy> {
    Policy::from_rows(&rows).map_err(py_err)
}

/// Finite discounted MDP with rewards in [0, 1].
#[pyclass(name = "TabularMdp", module = "ravi_ucb_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTabularMdp {
    inner: TabularMdp,
}

#[pymethods]
impl PyTabularMdp {
    /// `reward[x][a]`, `transition[x][a][x']`, initial distribution `nu0[x]`.
    #[new]
    fn new(reward: Vec<Vec<f64>>, transition: Vec<Vec<Vec<f64>>>, gamma: f64, nu0: Vec<f64>) -> PyResult<Self> {
        let flat = transition.into_iter().flatten().flatten().collect();
        let inner = TabularMdp::new(table(reward)?, flat, gamma, nu0).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: TabularMdp::from_json_str(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json_string().map_err(py_err)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    /// `H = 1 / (1 - gamma)`.
    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    /// Returns `(V*, Q*)` as lists.
    #[pyo3(signature = (tol = 1e-10))]
    fn value_iteration(&self, tol: f64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let (v, q) = mdp::value_iteration(&self.inner, tol).map_err(py_err)?;
        Ok((v.0, q.to_rows()))
    }

    fn policy_evaluation(&self, pi: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(mdp::policy_evaluation(&self.inner, &policy(pi)?).map_err(py_err)?.0)
    }

    /// Normalized discounted occupancy measure `mu[x][a]`.
    fn occupancy(&self, pi: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let mu = mdp::occupancy_measure(&self.inner, &policy(pi)?).map_err(py_err)?;
        Ok(mu.mass().to_rows())
    }

    fn normalized_return(&self, pi: Vec<Vec<f64>>) -> PyResult<f64> {
        mdp::normalized_return(&self.inner, &policy(pi)?).map_err(py_err)
    }

    /// Returns `(optimal normalized return, greedy optimal policy)`.
    fn optimal_return(&self) -> PyResult<(f64, Vec<Vec<f64>>)> {
        let (r, pi) = mdp::optimal_normalized_return(&self.inner).map_err(py_err)?;
        Ok((r, pi.to_rows()))
    }

    fn __repr__(&self) -> String {
        format!(
            "TabularMdp(n_states={}, n_actions={}, gamma={})",
            self.inner.n_states(),
            self.inner.n_actions(),
            self.inner.gamma()
        )
    }
}

/// Linear mixture MDP: `P = sum_i theta_i psi_i`.
#[pyclass(name = "LinearMixtureMdp", module = "ravi_ucb_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLinearMixtureMdp {
    inner: LinearMixtureMdp,
}

#[pymethods]
impl PyLinearMixtureMdp {
    /// Convex mixture of stochastic kernels, each given as `kernel[x][a][x']`.
    #[staticmethod]
    fn convex_mixture(
        kernels: Vec<Vec<Vec<Vec<f64>>>>,
        theta: Vec<f64>,
        reward: Vec<Vec<f64>>,
        gamma: f64,
        nu0: Vec<f64>,
    ) -> PyResult<Self> {
        let flat: Vec<Vec<f64>> = kernels
            .into_iter()
            .map(|k| k.into_iter().flatten().flatten().collect())
            .collect();
        let inner = linmix::build_convex_mixture_env(&flat, &theta, table(reward)?, gamma, nu0).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: LinearMixtureMdp::from_json_str(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json_string().map_err(py_err)
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta().to_vec()
    }

    #[getter]
    fn bound(&self) -> f64 {
        self.inner.bound()
    }

    /// The induced tabular MDP.
    #[getter]
    fn base(&self) -> PyTabularMdp {
        PyTabularMdp {
            inner: self.inner.base().clone(),
        }
    }

    fn __repr__(&self) -> String {
        let b = self.inner.base();
        format!(
            "LinearMixtureMdp(n_states={}, n_actions={}, d={}, gamma={})",
            b.n_states(),
            b.n_actions(),
            self.inner.d(),
            b.gamma()
        )
    }
}

fn problem_of(obj: &Bound<'_, PyAny>) -> PyResult<Problem> {
    if let Ok(m) = obj.cast::<PyTabularMdp>() {
        return Ok(Problem::Tabular(m.get().inner.clone()));
    }
    if let Ok(m) = obj.cast::<PyLinearMixtureMdp>() {
        return Ok(Problem::Linmix(m.get().inner.clone()));
    }
    Err(PyValueError::new_err("expected a TabularMdp or a LinearMixtureMdp"))
}

/// One seeded run with its exact regret.
#[pyclass(name = "RunResult", module = "ravi_ucb_py", frozen, skip_from_py_object)]
struct PyRunResult {
    problem: Problem,
    run: SeedRun,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn seed(&self) -> u64 {
        self.run.seed
    }

    #[getter]
    fn regret(&self) -> f64 {
        self.run.regret
    }

    #[getter]
    fn optimal_return(&self) -> f64 {
        self.run.optimal_return
    }

    #[getter]
    fn epoch_lengths(&self) -> Vec<usize> {
        self.run.log.epoch_lengths()
    }

    /// Suboptimality gap of each epoch's policy.
    #[getter]
    fn gaps(&self) -> Vec<f64> {
        self.run.gaps.clone()
    }

    #[getter]
    fn validity_violations(&self) -> usize {
        self.run.validity_violations
    }

    /// Resolved `eta`, `beta`, `lambda`, `delta`.
    fn params<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let p = &self.run.params;
        let d = PyDict::new(py);
        d.set_item("eta", p.eta)?;
        d.set_item("beta", p.beta)?;
        d.set_item("lambda", p.lambda)?;
        d.set_item("delta", p.delta)?;
        Ok(d)
    }

    /// Policies played, one `pi[x][a]` per epoch.
    fn policies(&self) -> Vec<Vec<Vec<f64>>> {
        self.run.log.epochs.iter().map(|e| e.policy.to_rows()).collect()
    }

    /// Runs the per-run check suite; returns `(check, passed, worst_slack)` triples.
    #[pyo3(signature = (seed = 0))]
    fn validate(&self, py: Python<'_>, seed: u64) -> PyResult<Vec<(String, bool, f64)>> {
        let design = match &self.problem {
            Problem::Linmix(m) => Some((m.bound(), self.run.params.lambda)),
            Problem::Tabular(_) => None,
        };
        let reports = py
            .detach(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                validation::validate_run(self.problem.mdp(), &self.run.log, design, &mut rng)
            })
            .map_err(py_err)?;
        Ok(reports.into_iter().map(|r| (r.check, r.pass, r.worst_slack)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(seed={}, T={}, K={}, regret={:.4})",
            self.run.seed,
            self.run.log.horizon(),
            self.run.log.n_epochs(),
            self.run.regret
        )
    }
}

/// Runs the planner on `mdp` for `T` steps; unset parameters take their theory defaults.
#[pyfunction]
#[pyo3(signature = (mdp, T, seed = 0, eta = None, beta = None, lam = None, delta = None))]
#[allow(non_snake_case, clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    mdp: &Bound<'_, PyAny>,
    T: usize,
    seed: u64,
    eta: Option<f64>,
    beta: Option<f64>,
    lam: Option<f64>,
    delta: Option<f64>,
) -> PyResult<PyRunResult> {
    let problem = problem_of(mdp)?;
    let overrides = Overrides {
        eta,
        beta,
        lambda: lam,
        delta,
    };
    let run = py
        .detach(|| {
            let params = RunParams::resolve(&problem, T, &overrides)?;
            harness::run_seed(&problem, &params, T, seed)
        })
        .map_err(py_err)?;
    Ok(PyRunResult { problem, run })
}

/// Runs a JSON experiment config and writes its artifacts; returns the metrics rows.
#[pyfunction]
#[pyo3(signature = (path, timing = false))]
fn run_config<'py>(py: Python<'py>, path: &str, timing: bool) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let rows = py
        .detach(|| {
            let config = harness::load_config(path)?;
            harness::run_experiment(&config, RunOptions { timing })
        })
        .map_err(py_err)?;
    rows.into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("seed", r.seed)?;
            d.set_item("T", r.horizon)?;
            d.set_item("regret", r.regret)?;
            d.set_item("mean_epoch_len", r.mean_epoch_len)?;
            d.set_item("K", r.epochs)?;
            d.set_item("validity_violations", r.validity_violations)?;
            d.set_item("seconds", r.seconds)?;
            Ok(d)
        })
        .collect()
}

/// One mirror-descent step; returns `(V, pi)`.
#[pyfunction]
fn softmax_update(prior: Vec<Vec<f64>>, q: Vec<Vec<f64>>, eta: f64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let (v, pi): (ValueFunction, Policy) = planner::softmax_update(&policy(prior)?, &table(q)?, eta).map_err(py_err)?;
    Ok((v.0, pi.to_rows()))
}

/// `sqrt(2 log|A| / (H^2 T))`.
#[pyfunction]
#[allow(non_snake_case)]
fn default_learning_rate(n_actions: usize, H: f64, T: usize) -> PyResult<f64> {
    planner::default_learning_rate(n_actions, H, T).map_err(py_err)
}

#[pyfunction]
#[allow(non_snake_case)]
fn tabular_beta(n_states: usize, n_actions: usize, T: usize, delta: f64, H: f64) -> PyResult<f64> {
    tabular::tabular_beta(n_states, n_actions, T, delta, H).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (d, T, B, H, lam, delta))]
#[allow(non_snake_case)]
fn linmix_beta(d: usize, T: usize, B: f64, H: f64, lam: f64, delta: f64) -> PyResult<f64> {
    linmix::linmix_beta(d, T, B, H, lam, delta).map_err(py_err)
}

/// 5-state, 2-action chain.
#[pyfunction]
#[pyo3(signature = (gamma = None))]
fn reference_tabular(gamma: Option<f64>) -> PyTabularMdp {
    PyTabularMdp {
        inner: instances::reference_tabular_with_gamma(gamma.unwrap_or(instances::REFERENCE_GAMMA)),
    }
}

/// Three-kernel convex mixture on the same 5-state chain.
#[pyfunction]
#[pyo3(signature = (gamma = None))]
fn reference_linmix(gamma: Option<f64>) -> PyLinearMixtureMdp {
    PyLinearMixtureMdp {
        inner: instances::reference_linmix_with_gamma(gamma.unwrap_or(instances::REFERENCE_GAMMA)),
    }
}

#[pyfunction]
#[pyo3(signature = (n_states, n_actions, gamma, seed = 0))]
fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> PyTabularMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PyTabularMdp {
        inner: instances::random_mdp(&mut rng, n_states, n_actions, gamma),
    }
}

#[pymodule]
fn ravi_ucb_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTabularMdp>()?;
    m.add_class::<PyLinearMixtureMdp>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_update, m)?)?;
    m.add_function(wrap_pyfunction!(default_learning_rate, m)?)?;
    m.add_function(wrap_pyfunction!(tabular_beta, m)?)?;
    m.add_function(wrap_pyfunction!(linmix_beta, m)?)?;
    m.add_function(wrap_pyfunction!(reference_tabular, m)?)?;
    m.add_function(wrap_pyfunction!(reference_linmix, m)?)?;
    m.add_function(wrap_pyfunction!(random_mdp, m)?)?;
    Ok(())
}
