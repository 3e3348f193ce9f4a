//! 2-D point-mass reacher: a double integrator steered toward a fixed
//! goal under a dense negative-distance reward. Reaching the goal radius
//! terminates the episode.

use rand_chacha::ChaCha8Rng;

use super::{uniform, BasicEnv, Dynamics, EnvSpec};

const DT: f64 = 0.1;
const GOAL: [f64; 2] = [1.2, 1.2];
const GOAL_RADIUS: f64 = 0.1;
const POS_LIMIT: f64 = 3.0;
const VEL_LIMIT: f64 = 2.0;

#[derive(Debug, Clone)]
pub(crate) struct PointMassDynamics {
    spec: EnvSpec,
}

impl PointMassDynamics {
    fn new() -> Self {
        // Worst case: opposite corner of the position box.
        let worst = ((POS_LIMIT + GOAL[0]).powi(2) + (POS_LIMIT + GOAL[1]).powi(2)).sqrt();
        Self {
            spec: EnvSpec {
                obs_dim: 4,
                act_dim: 2,
                action_low: vec![-1.0, -1.0],
                action_high: vec![1.0, 1.0],
                max_episode_steps: 200,
                reward_min: -worst,
                reward_max: 0.0,
            },
        }
    }
}

impl Dynamics for PointMassDynamics {
    fn kind(&self) -> String {
        "pointmass".into()
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        // Start somewhere in the unit box at rest; the goal at (1.2, 1.2)
        // is always at least ~0.28 away, so no episode begins terminal.
        vec![uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), 0.0, 0.0]
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn transition(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, f64, bool) {
        let mut vx = (state[2] + action[0] * DT).clamp(-VEL_LIMIT, VEL_LIMIT);
        let mut vy = (state[3] + action[1] * DT).clamp(-VEL_LIMIT, VEL_LIMIT);
        let x = (state[0] + vx * DT).clamp(-POS_LIMIT, POS_LIMIT);
        let y = (state[1] + vy * DT).clamp(-POS_LIMIT, POS_LIMIT);
        if x.abs() == POS_LIMIT {
            vx = 0.0;
        }
        if y.abs() == POS_LIMIT {
            vy = 0.0;
        }
        let dist = ((x - GOAL[0]).powi(2) + (y - GOAL[1]).powi(2)).sqrt();
        (vec![x, y, vx, vy], -dist, dist < GOAL_RADIUS)
    }
}

/// Point-mass reacher environment.
pub struct PointMass;

impl PointMass {
    #[allow(clippy::new_ret_no_self)]
    pub fn new() -> Box<dyn super::Env> {
        Box::new(Self::concrete())
    }

    pub(crate) fn concrete() -> BasicEnv<PointMassDynamics> {
        BasicEnv::new(PointMassDynamics::new())
    }
}
