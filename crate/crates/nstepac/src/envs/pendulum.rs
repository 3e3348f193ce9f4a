//! Torque-limited pendulum swing-up.
//!
//! State (theta, theta_dot) with theta = 0 pointing up and theta wrapped
//! into (-pi, pi]. Observation (cos theta, sin theta, theta_dot), torque
//! in [-2, 2], reward -(theta^2 + 0.1 theta_dot^2 + 0.001 u^2). Episodes
//! only end by time limit; there is no failure state.

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;

use super::{uniform, BasicEnv, Dynamics, EnvSpec};

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;

fn wrap_angle(theta: f64) -> f64 {
    // Into (-pi, pi].
    let mut t = theta % (2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    } else if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

#[derive(Debug, Clone)]
pub(crate) struct PendulumDynamics {
    spec: EnvSpec,
}

impl PendulumDynamics {
    fn new() -> Self {
        let r_min = -(PI * PI + 0.1 * MAX_SPEED * MAX_SPEED + 0.001 * MAX_TORQUE * MAX_TORQUE);
        Self {
            spec: EnvSpec {
                obs_dim: 3,
                act_dim: 1,
                action_low: vec![-MAX_TORQUE],
                action_high: vec![MAX_TORQUE],
                max_episode_steps: 200,
                reward_min: r_min,
                reward_max: 0.0,
            },
        }
    }
}

impl Dynamics for PendulumDynamics {
    fn kind(&self) -> String {
        "pendulum".into()
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![uniform(rng, -PI, PI), uniform(rng, -1.0, 1.0)]
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        vec![state[0].cos(), state[0].sin(), state[1]]
    }

    fn transition(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, f64, bool) {
        let (theta, theta_dot) = (state[0], state[1]);
        let u = action[0];
        let reward = -(theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * u * u);

        // Semi-implicit Euler at dt = 0.05.
        let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin()
            + 3.0 / (MASS * LENGTH * LENGTH) * u;
        let new_dot = (theta_dot + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
        let new_theta = wrap_angle(theta + new_dot * DT);
        (vec![new_theta, new_dot], reward, false)
    }
}

/// Pendulum swing-up environment.
pub struct Pendulum;

impl Pendulum {
    #[allow(clippy::new_ret_no_self)]
    pub fn new() -> Box<dyn super::Env> {
        Box::new(Self::concrete())
    }

    pub(crate) fn concrete() -> BasicEnv<PendulumDynamics> {
        BasicEnv::new(PendulumDynamics::new())
    }
}
