//! Deterministic chain of length L: every step advances one index and
//! pays reward 1, regardless of the action; index L terminates. The
//! discounted return from index i is exactly sum_{k < L - i} gamma^k,
//! which makes this the analytic oracle for target-computation tests.

use rand_chacha::ChaCha8Rng;

use super::{BasicEnv, Dynamics, EnvSpec};

#[derive(Debug, Clone)]
pub(crate) struct ChainDynamics {
    len: u64,
    spec: EnvSpec,
}

impl ChainDynamics {
    fn new(len: u64) -> Self {
        Self {
            len,
            spec: EnvSpec {
                obs_dim: 1,
                act_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                max_episode_steps: len,
                reward_min: 1.0,
                reward_max: 1.0,
            },
        }
    }
}

impl Dynamics for ChainDynamics {
    fn kind(&self) -> String {
        format!("chain:L={}", self.len)
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_initial(&self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![0.0]
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        // Index scaled into [0, 1].
        vec![state[0] / self.len as f64]
    }

    fn transition(&self, state: &[f64], _action: &[f64]) -> (Vec<f64>, f64, bool) {
        let next = state[0] + 1.0;
        (vec![next], 1.0, next as u64 >= self.len)
    }
}

/// Deterministic chain environment.
pub struct Chain;

impl Chain {
    #[allow(clippy::new_ret_no_self)]
    pub fn new(len: u64) -> Box<dyn super::Env> {
        Box::new(Self::concrete(len))
    }

    pub(crate) fn concrete(len: u64) -> BasicEnv<ChainDynamics> {
        BasicEnv::new(ChainDynamics::new(len))
    }
}

/// Exact discounted return from chain index `i` with length `len`:
/// `sum_{k=0}^{len-1-i} gamma^k`. Any policy attains it.
pub fn chain_optimal_value(index: u64, len: u64, gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut disc = 1.0;
    for _ in index..len {
        acc += disc;
        disc *= gamma;
    }
    acc
}

/// Recover the chain index from a scaled observation.
pub fn chain_index_from_obs(obs: &[f64], len: u64) -> u64 {
    (obs[0] * len as f64).round() as u64
}
