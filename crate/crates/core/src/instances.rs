//! Instance generators: seeded random MDPs and the two reference problems.

use rand::Rng;

use crate::linmix::{build_convex_mixture_env, LinearMixtureMdp};
use crate::mdp::{Policy, StateActionTable, TabularMdp};

/// Uniform draw from the probability simplex (normalized exponentials).
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            -(1.0 - u).ln()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

fn random_kernel<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> Vec<f64> {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(random_simplex(rng, n_states));
    }
    transition
}

/// Random MDP with Dirichlet(1) transition rows, uniform rewards and initial
/// distribution drawn from the simplex.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, gamma: f64) -> TabularMdp {
    let reward = StateActionTable::from_fn(n_states, n_actions, |_, _| rng.random::<f64>());
    let transition = random_kernel(rng, n_states, n_actions);
    let nu0 = random_simplex(rng, n_states);
    TabularMdp::new(reward, transition, gamma, nu0).expect("random MDP is valid")
}

/// Random policy with Dirichlet(1) rows.
pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> Policy {
    let mut rows = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        rows.push(random_simplex(rng, n_actions));
    }
    Policy::from_weights(StateActionTable::from_rows(&rows).expect("rows")).expect("random policy is valid")
}

/// Random `d`-component convex mixture with Dirichlet(1) kernels and weights.
pub fn random_convex_mixture<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    d: usize,
    gamma: f64,
) -> LinearMixtureMdp {
    let kernels: Vec<Vec<f64>> = (0..d).map(|_| random_kernel(rng, n_states, n_actions)).collect();
    let theta = random_simplex(rng, d);
    let reward = StateActionTable::from_fn(n_states, n_actions, |_, _| rng.random::<f64>());
    let nu0 = random_simplex(rng, n_states);
    build_convex_mixture_env(&kernels, &theta, reward, gamma, nu0).expect("random mixture is valid")
}

/// Discount shared by both reference instances.
pub const REFERENCE_GAMMA: f64 = 0.7;

const N: usize = 5;
const LEFT: usize = 0;
const RIGHT: usize = 1;

fn chain_index(x: usize, a: usize, y: usize) -> usize {
    (x * 2 + a) * N + y
}

fn chain_rewards() -> StateActionTable {
    let mut reward = StateActionTable::zeros(N, 2);
    reward.set(0, LEFT, 0.1);
    reward.set(N - 1, RIGHT, 1.0);
    reward
}

/// 5-state, 2-action river-swim chain.
///
/// `LEFT` drifts back deterministically; `RIGHT` swims against the current and
/// only advances with probability 0.35. A small reward sits at the left bank,
/// the large one at the right bank. Starts are uniform over the chain.
pub fn reference_tabular() -> TabularMdp {
    reference_tabular_with_gamma(REFERENCE_GAMMA)
}

/// [`reference_tabular`] with a different discount factor.
pub fn reference_tabular_with_gamma(gamma: f64) -> TabularMdp {
    let mut p = vec![0.0; N * 2 * N];
    for x in 0..N {
        p[chain_index(x, LEFT, x.saturating_sub(1))] = 1.0;
        match x {
            0 => {
                p[chain_index(0, RIGHT, 0)] = 0.6;
                p[chain_index(0, RIGHT, 1)] = 0.4;
            }
            x if x == N - 1 => {
                p[chain_index(x, RIGHT, x)] = 0.6;
                p[chain_index(x, RIGHT, x - 1)] = 0.4;
            }
            x => {
                p[chain_index(x, RIGHT, x + 1)] = 0.35;
                p[chain_index(x, RIGHT, x)] = 0.6;
                p[chain_index(x, RIGHT, x - 1)] = 0.05;
            }
        }
    }
    TabularMdp::new(chain_rewards(), p, gamma, vec![1.0 / N as f64; N]).expect("reference chain is valid")
}

/// 5-state, 2-action, `d = 3` convex mixture on the same chain layout.
///
/// Components: a "forward" kernel where each action moves in its direction,
/// a "sticky" kernel that stays put, and a "reversed" kernel where actions
/// move against their labels. Mixing weights are `(0.6, 0.25, 0.15)`.
pub fn reference_linmix() -> LinearMixtureMdp {
    reference_linmix_with_gamma(REFERENCE_GAMMA)
}

/// [`reference_linmix`] with a different discount factor.
pub fn reference_linmix_with_gamma(gamma: f64) -> LinearMixtureMdp {
    let mut forward = vec![0.0; N * 2 * N];
    let mut sticky = vec![0.0; N * 2 * N];
    let mut reversed = vec![0.0; N * 2 * N];
    for x in 0..N {
        let left = x.saturating_sub(1);
        let right = (x + 1).min(N - 1);
        forward[chain_index(x, LEFT, left)] = 1.0;
        forward[chain_index(x, RIGHT, right)] = 1.0;
        sticky[chain_index(x, LEFT, x)] = 1.0;
        sticky[chain_index(x, RIGHT, x)] = 1.0;
        reversed[chain_index(x, LEFT, right)] = 1.0;
        reversed[chain_index(x, RIGHT, left)] = 1.0;
    }
    build_convex_mixture_env(
        &[forward, sticky, reversed],
        &[0.6, 0.25, 0.15],
        chain_rewards(),
        gamma,
        vec![1.0 / N as f64; N],
    )
    .expect("reference mixture is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_simplex_is_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..6 {
            let p = random_simplex(&mut rng, n);
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_instances_are_valid() {
        let mdp = reference_tabular();
        assert_eq!((mdp.n_states(), mdp.n_actions()), (5, 2));
        let lin = reference_linmix();
        assert_eq!(lin.d(), 3);
        assert_eq!(lin.base().n_states(), 5);
    }
}
