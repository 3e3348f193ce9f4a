//! Continuous mountain car: an underpowered car in a valley must rock
//! back and forth to reach the right hilltop. Sparse success bonus with a
//! small quadratic effort penalty.

use rand_chacha::ChaCha8Rng;

use super::{uniform, BasicEnv, Dynamics, EnvSpec};

const MIN_POS: f64 = -1.2;
const MAX_POS: f64 = 0.6;
const MAX_SPEED: f64 = 0.07;
const GOAL_POS: f64 = 0.45;
const FORCE: f64 = 0.0015;
const GRAVITY: f64 = 0.0025;

#[derive(Debug, Clone)]
pub(crate) struct MountainCarDynamics {
    spec: EnvSpec,
}

impl MountainCarDynamics {
    fn new() -> Self {
        Self {
            spec: EnvSpec {
                obs_dim: 2,
                act_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                max_episode_steps: 300,
                reward_min: -0.1,
                reward_max: 100.0,
            },
        }
    }
}

impl Dynamics for MountainCarDynamics {
    fn kind(&self) -> String {
        "mountaincar".into()
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![uniform(rng, -0.6, -0.4), 0.0]
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn transition(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, f64, bool) {
        let a = action[0];
        let mut v = (state[1] + a * FORCE - (3.0 * state[0]).cos() * GRAVITY)
            .clamp(-MAX_SPEED, MAX_SPEED);
        let x = (state[0] + v).clamp(MIN_POS, MAX_POS);
        if x == MIN_POS && v < 0.0 {
            v = 0.0;
        }
        let terminal = x >= GOAL_POS;
        let reward = if terminal { 100.0 - 0.1 * a * a } else { -0.1 * a * a };
        (vec![x, v], reward, terminal)
    }
}

/// Continuous mountain-car environment.
pub struct MountainCar;

impl MountainCar {
    #[allow(clippy::new_ret_no_self)]
    pub fn new() -> Box<dyn super::Env> {
        Box::new(Self::concrete())
    }

    pub(crate) fn concrete() -> BasicEnv<MountainCarDynamics> {
        BasicEnv::new(MountainCarDynamics::new())
    }
}
