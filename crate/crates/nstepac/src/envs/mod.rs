//! Continuous-control environments with exact state save/restore.
//!
//! Four built-in tasks: pendulum swing-up, a 2-D point-mass reacher, the
//! continuous mountain car, and a deterministic reward-1-per-step chain
//! whose discounted return is known in closed form. All dynamics are pure
//! `f64`, so (seed, action sequence) fully determines every trajectory,
//! and a saved [`EnvState`] replays bitwise.
//!
//! `terminal` means the MDP ended (failure or goal); `truncated` means the
//! time limit cut the episode. Bootstrapping is allowed after truncation
//! but not after termination.

mod chain;
mod mountaincar;
mod pendulum;
mod pointmass;

pub use chain::{chain_index_from_obs, chain_optimal_value, Chain};
pub use mountaincar::MountainCar;
pub use pendulum::Pendulum;
pub use pointmass::PointMass;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown environment id '{0}'")]
    UnknownId(String),
    #[error("action error: {0}")]
    BadAction(String),
    #[error("episode is over; reset the environment before stepping")]
    EpisodeOver,
    #[error("state belongs to environment '{found}', not '{expected}'")]
    StateType { expected: String, found: String },
    #[error("environment does not support state save/restore")]
    SnapshotUnsupported,
}

/// Static description of an environment's interface.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: u64,
    pub reward_min: f64,
    pub reward_max: f64,
}

/// Outcome of one environment step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_obs: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

/// Opaque full snapshot of an environment: dynamical state, step counter
/// and RNG stream. Restoring reproduces subsequent trajectories bitwise.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub(crate) kind: String,
    pub(crate) payload: Vec<f64>,
    pub(crate) steps_taken: u64,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) needs_reset: bool,
}

pub trait Env: Send {
    /// Stable identifier, also used to type-check restores.
    fn id(&self) -> String;
    fn spec(&self) -> &EnvSpec;
    /// Fresh initial state. A seed makes the draw (and every later
    /// unseeded draw) deterministic.
    fn reset(&mut self, seed: Option<u64>) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError>;
    fn save_state(&self) -> EnvState;
    fn restore_state(&mut self, state: &EnvState) -> Result<(), EnvError>;
    fn clone_env(&self) -> Box<dyn Env>;
    /// Number of actions that needed clipping into bounds so far.
    fn clip_warnings(&self) -> u64;
    fn supports_snapshot(&self) -> bool {
        true
    }
}

/// Core task behaviour; the bookkeeping (step counting, truncation,
/// clipping, RNG, snapshots) lives in [`BasicEnv`].
pub(crate) trait Dynamics: Send + Clone + 'static {
    fn kind(&self) -> String;
    fn spec(&self) -> &EnvSpec;
    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn observe(&self, state: &[f64]) -> Vec<f64>;
    /// Returns (next internal state, reward, terminal).
    fn transition(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, f64, bool);
}

#[derive(Debug, Clone)]
pub(crate) struct BasicEnv<D: Dynamics> {
    dynamics: D,
    state: Vec<f64>,
    steps_taken: u64,
    rng: ChaCha8Rng,
    clip_warnings: u64,
    needs_reset: bool,
}

impl<D: Dynamics> BasicEnv<D> {
    pub(crate) fn new(dynamics: D) -> Self {
        Self {
            dynamics,
            state: Vec::new(),
            steps_taken: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            clip_warnings: 0,
            needs_reset: true,
        }
    }

    #[cfg(test)]
    pub(crate) fn raw_state(&self) -> &[f64] {
        &self.state
    }

    #[cfg(test)]
    pub(crate) fn set_raw_state(&mut self, state: Vec<f64>) {
        self.state = state;
        self.needs_reset = false;
    }
}

impl<D: Dynamics> Env for BasicEnv<D> {
    fn id(&self) -> String {
        self.dynamics.kind()
    }

    fn spec(&self) -> &EnvSpec {
        self.dynamics.spec()
    }

    fn reset(&mut self, seed: Option<u64>) -> Vec<f64> {
        if let Some(s) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(s);
        }
        self.state = self.dynamics.sample_initial(&mut self.rng);
        self.steps_taken = 0;
        self.needs_reset = false;
        self.dynamics.observe(&self.state)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if self.needs_reset {
            return Err(EnvError::EpisodeOver);
        }
        let spec = self.dynamics.spec();
        if action.len() != spec.act_dim {
            return Err(EnvError::BadAction(format!(
                "action length {} does not match act_dim {}",
                action.len(),
                spec.act_dim
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::BadAction("non-finite action".into()));
        }
        let mut clipped = action.to_vec();
        let mut was_clipped = false;
        for ((a, lo), hi) in clipped
            .iter_mut()
            .zip(&spec.action_low)
            .zip(&spec.action_high)
        {
            let c = a.clamp(*lo, *hi);
            if c != *a {
                was_clipped = true;
            }
            *a = c;
        }
        if was_clipped {
            self.clip_warnings += 1;
        }

        let (next, reward, terminal) = self.dynamics.transition(&self.state, &clipped);
        debug_assert!(
            reward.is_finite() && reward >= spec.reward_min && reward <= spec.reward_max,
            "reward {reward} outside declared bounds"
        );
        self.state = next;
        self.steps_taken += 1;
        let truncated = !terminal && self.steps_taken >= spec.max_episode_steps;
        self.needs_reset = terminal || truncated;
        Ok(StepResult {
            next_obs: self.dynamics.observe(&self.state),
            reward,
            terminal,
            truncated,
        })
    }

    fn save_state(&self) -> EnvState {
        EnvState {
            kind: self.dynamics.kind(),
            payload: self.state.clone(),
            steps_taken: self.steps_taken,
            rng: self.rng.clone(),
            needs_reset: self.needs_reset,
        }
    }

    fn restore_state(&mut self, state: &EnvState) -> Result<(), EnvError> {
        if state.kind != self.dynamics.kind() {
            return Err(EnvError::StateType {
                expected: self.dynamics.kind(),
                found: state.kind.clone(),
            });
        }
        self.state = state.payload.clone();
        self.steps_taken = state.steps_taken;
        self.rng = state.rng.clone();
        self.needs_reset = state.needs_reset;
        Ok(())
    }

    fn clone_env(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }

    fn clip_warnings(&self) -> u64 {
        self.clip_warnings
    }
}

/// Environment ids understood by configs: `pendulum`, `pointmass`,
/// `mountaincar`, `chain:L=<len>`.
pub fn make_env(id: &str) -> Result<Box<dyn Env>, EnvError> {
    match id {
        "pendulum" => Ok(Pendulum::new()),
        "pointmass" => Ok(PointMass::new()),
        "mountaincar" => Ok(MountainCar::new()),
        _ => {
            if let Some(rest) = id.strip_prefix("chain:L=") {
                let len: u64 = rest
                    .parse()
                    .map_err(|_| EnvError::UnknownId(id.to_string()))?;
                if len == 0 {
                    return Err(EnvError::UnknownId(id.to_string()));
                }
                Ok(Chain::new(len))
            } else {
                Err(EnvError::UnknownId(id.to_string()))
            }
        }
    }
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}
