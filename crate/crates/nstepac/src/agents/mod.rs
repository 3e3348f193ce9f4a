//! The learning algorithms.
//!
//! One update skeleton serves every variant; a [`TargetSpec`] selects how
//! the critic's learning target is built:
//!
//! - `OneStep` — classic DDPG backup `r + gamma Q'(s', mu'(s'))`.
//! - `NStep(n)` — truncated n-step backup from a stored window.
//! - `MixAvg(n)` / `MixMin(n)` / `MixAvgMinus1(n)` — average, minimum, or
//!   average-excluding-1-step of the 1..n-step targets computed on one
//!   shared window.
//! - `TwinMin` — TD3: clipped double-Q with target-policy smoothing and
//!   delayed actor updates.
//!
//! Forward/backward propagation of the critic target machinery is counted
//! in batch-level units per update so the cost of each variant can be
//! compared directly.

pub mod targets;

mod checkpoint;

pub use checkpoint::{load_agent_checkpoint, save_agent_checkpoint, CheckpointError};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::diagnostics::DiagnosticsRecord;
use crate::envs::{Env, EnvSpec};
use crate::numkit::{
    adam_step, mlp_backward, mlp_forward, soft_update, Activation, AdamState, Gradients,
    MlpParams, NumKitError, OutputActivation,
};
use crate::replay::{NStepSample, ReplayBuffer, ReplayError, Transition};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    NumKit(#[from] NumKitError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
}

/// Which rule builds the critic's learning target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetSpec {
    OneStep,
    NStep(usize),
    MixAvg(usize),
    MixMin(usize),
    MixAvgMinus1(usize),
    TwinMin,
}

impl TargetSpec {
    pub fn validate(&self) -> Result<(), AgentError> {
        match *self {
            TargetSpec::NStep(n) | TargetSpec::MixAvg(n) | TargetSpec::MixMin(n) if n == 0 => {
                Err(AgentError::Config("step size n must be at least 1".into()))
            }
            TargetSpec::MixAvgMinus1(n) if n < 2 => Err(AgentError::Config(
                "the average-excluding-1-step mixture needs n >= 2".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Replay window length the rule consumes.
    pub fn window_len(&self) -> usize {
        match *self {
            TargetSpec::OneStep | TargetSpec::TwinMin => 1,
            TargetSpec::NStep(n)
            | TargetSpec::MixAvg(n)
            | TargetSpec::MixMin(n)
            | TargetSpec::MixAvgMinus1(n) => n,
        }
    }

    pub fn num_critics(&self) -> usize {
        if matches!(self, TargetSpec::TwinMin) {
            2
        } else {
            1
        }
    }

    /// Batch-level target-critic forward passes one critic update costs.
    pub fn fp_per_update(&self) -> u64 {
        match *self {
            TargetSpec::OneStep | TargetSpec::NStep(_) => 1,
            TargetSpec::MixAvg(n) | TargetSpec::MixMin(n) => n as u64,
            TargetSpec::MixAvgMinus1(n) => n as u64 - 1,
            TargetSpec::TwinMin => 2,
        }
    }

    /// Batch-level critic backward passes per update.
    pub fn bp_per_update(&self) -> u64 {
        self.num_critics() as u64
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TargetSpec::OneStep => write!(f, "ddpg"),
            TargetSpec::NStep(n) => write!(f, "mddpg:{n}"),
            TargetSpec::MixAvg(n) => write!(f, "mmddpg-avg:{n}"),
            TargetSpec::MixMin(n) => write!(f, "mmddpg-min:{n}"),
            TargetSpec::MixAvgMinus1(n) => write!(f, "mmddpg-avg1:{n}"),
            TargetSpec::TwinMin => write!(f, "td3"),
        }
    }
}

impl FromStr for TargetSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_n = |rest: &str| -> Result<usize, String> {
            rest.parse::<usize>()
                .map_err(|_| format!("bad step size in target spec '{s}'"))
        };
        let spec = match s {
            "ddpg" => TargetSpec::OneStep,
            "td3" => TargetSpec::TwinMin,
            _ => {
                if let Some(rest) = s.strip_prefix("mddpg:") {
                    TargetSpec::NStep(parse_n(rest)?)
                } else if let Some(rest) = s.strip_prefix("mmddpg-avg1:") {
                    TargetSpec::MixAvgMinus1(parse_n(rest)?)
                } else if let Some(rest) = s.strip_prefix("mmddpg-avg:") {
                    TargetSpec::MixAvg(parse_n(rest)?)
                } else if let Some(rest) = s.strip_prefix("mmddpg-min:") {
                    TargetSpec::MixMin(parse_n(rest)?)
                } else {
                    return Err(format!(
                        "unknown target spec '{s}' (expected ddpg, td3, mddpg:<n>, \
                         mmddpg-avg:<n>, mmddpg-min:<n>, mmddpg-avg1:<n>)"
                    ));
                }
            }
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

impl Serialize for TargetSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TargetSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Hyper-parameters of one agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub target_spec: TargetSpec,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub hidden_sizes: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Gaussian exploration noise, as a fraction of the action half-range.
    pub exploration_noise_sigma: f64,
    /// Uniform-random action steps before any network update.
    pub warmup_steps: u64,
    pub update_every: u64,
    /// TD3 only: target policy smoothing scale (fraction of half-range).
    pub td3_policy_noise: f64,
    /// TD3 only: smoothing noise clip (fraction of half-range).
    pub td3_noise_clip: f64,
    /// TD3 only: actor/target updates every this many critic updates.
    pub td3_policy_delay: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            target_spec: TargetSpec::OneStep,
            gamma: 0.98,
            tau: 0.005,
            batch_size: 100,
            hidden_sizes: vec![64, 64],
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            exploration_noise_sigma: 0.1,
            warmup_steps: 1000,
            update_every: 1,
            td3_policy_noise: 0.2,
            td3_noise_clip: 0.5,
            td3_policy_delay: 2,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        self.target_spec.validate()?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(AgentError::Config(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(AgentError::Config(format!(
                "tau must lie in (0, 1], got {}",
                self.tau
            )));
        }
        if self.batch_size == 0 {
            return Err(AgentError::Config("batch_size must be positive".into()));
        }
        if self.update_every == 0 {
            return Err(AgentError::Config("update_every must be positive".into()));
        }
        if self.td3_policy_delay == 0 {
            return Err(AgentError::Config("td3_policy_delay must be positive".into()));
        }
        if self.exploration_noise_sigma < 0.0 {
            return Err(AgentError::Config(
                "exploration_noise_sigma must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-update propagation bookkeeping, in batch-level units.
#[derive(Debug, Clone, Copy, Default)]
pub struct PropagationLedger {
    pub updates: u64,
    pub fp_total: u64,
    pub bp_total: u64,
    pub last_fp: u64,
    pub last_bp: u64,
}

/// Result of one critic update.
#[derive(Debug, Clone, Copy)]
pub struct CriticUpdate {
    pub loss: f64,
    pub grad_norm: f64,
    pub fp_count: u64,
    pub bp_count: u64,
}

/// An actor-critic agent: online and target networks plus optimizer
/// state. Confined to one thread for its lifetime.
pub struct Agent {
    config: AgentConfig,
    env_spec: EnvSpec,
    actor: MlpParams,
    target_actor: MlpParams,
    critics: Vec<MlpParams>,
    target_critics: Vec<MlpParams>,
    actor_opt: AdamState,
    critic_opts: Vec<AdamState>,
    ledger: PropagationLedger,
    total_env_steps: u64,
    critic_updates: u64,
    actor_updates: u64,
    // Episode bookkeeping for train_step.
    cur_obs: Option<Vec<f64>>,
    episode_id: u64,
    step_index: u64,
    episode_return: f64,
    episode_len: u64,
    last_push: Option<(u64, u64)>,
}

impl Agent {
    pub fn new(
        config: AgentConfig,
        env_spec: &EnvSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let mut actor_sizes = vec![env_spec.obs_dim];
        actor_sizes.extend(&config.hidden_sizes);
        actor_sizes.push(env_spec.act_dim);
        let mut critic_sizes = vec![env_spec.obs_dim + env_spec.act_dim];
        critic_sizes.extend(&config.hidden_sizes);
        critic_sizes.push(1);

        let actor = MlpParams::init_uniform(
            &actor_sizes,
            Activation::ReLU,
            OutputActivation::Tanh,
            rng,
        )?;
        let mut critics = Vec::new();
        for _ in 0..config.target_spec.num_critics() {
            critics.push(MlpParams::init_uniform(
                &critic_sizes,
                Activation::ReLU,
                OutputActivation::Identity,
                rng,
            )?);
        }
        let target_actor = actor.clone();
        let target_critics = critics.clone();
        let actor_opt = AdamState::new(&actor, config.actor_lr);
        let critic_opts = critics
            .iter()
            .map(|c| AdamState::new(c, config.critic_lr))
            .collect();
        Ok(Self {
            config,
            env_spec: env_spec.clone(),
            actor,
            target_actor,
            critics,
            target_critics,
            actor_opt,
            critic_opts,
            ledger: PropagationLedger::default(),
            total_env_steps: 0,
            critic_updates: 0,
            actor_updates: 0,
            cur_obs: None,
            episode_id: 0,
            step_index: 0,
            episode_return: 0.0,
            episode_len: 0,
            last_push: None,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn env_spec(&self) -> &EnvSpec {
        &self.env_spec
    }

    pub fn ledger(&self) -> &PropagationLedger {
        &self.ledger
    }

    pub fn total_env_steps(&self) -> u64 {
        self.total_env_steps
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    /// (episode_id, step_index) of the transition the most recent
    /// `train_step` pushed; pairs environment snapshots with it.
    pub fn last_push_ids(&self) -> Option<(u64, u64)> {
        self.last_push
    }

    fn half_range(&self, d: usize) -> f64 {
        (self.env_spec.action_high[d] - self.env_spec.action_low[d]) / 2.0
    }

    fn center(&self, d: usize) -> f64 {
        (self.env_spec.action_high[d] + self.env_spec.action_low[d]) / 2.0
    }

    fn scale_raw_action(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(d, r)| self.center(d) + self.half_range(d) * r)
            .collect()
    }

    /// Deterministic policy output, scaled to the action bounds.
    pub fn policy(&self, obs: &[f64]) -> Result<Vec<f64>, AgentError> {
        let (raw, _) = mlp_forward(&self.actor, obs)?;
        Ok(self.scale_raw_action(&raw))
    }

    /// `mu(s)`, plus Gaussian noise when exploring, clipped to bounds.
    pub fn select_action(
        &self,
        obs: &[f64],
        explore: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>, AgentError> {
        let mut action = self.policy(obs)?;
        if explore && self.config.exploration_noise_sigma > 0.0 {
            for (d, a) in action.iter_mut().enumerate() {
                let eps: f64 = rng.sample(StandardNormal);
                *a += eps * self.config.exploration_noise_sigma * self.half_range(d);
            }
        }
        for (d, a) in action.iter_mut().enumerate() {
            *a = a.clamp(self.env_spec.action_low[d], self.env_spec.action_high[d]);
        }
        Ok(action)
    }

    /// Bootstrap value `Q'(s, mu'(s))` under the target networks
    /// (first target critic).
    pub fn target_value(&self, obs: &[f64]) -> Result<f64, AgentError> {
        self.target_bootstrap(obs, 0)
    }

    /// `Q'(s, mu'(s))` under a chosen target critic.
    fn target_bootstrap(&self, obs: &[f64], critic_idx: usize) -> Result<f64, AgentError> {
        let (raw, _) = mlp_forward(&self.target_actor, obs)?;
        let action = self.scale_raw_action(&raw);
        let mut input = obs.to_vec();
        input.extend_from_slice(&action);
        let (q, _) = mlp_forward(&self.target_critics[critic_idx], &input)?;
        Ok(q[0])
    }

    /// Multi-step targets for one window per the agent's target networks;
    /// `Q_hat^(i)` for `i = 1..=n`. Exposed for the gap diagnostics.
    pub fn prefix_targets(&self, sample: &NStepSample, n: usize) -> Result<Vec<f64>, AgentError> {
        check_sample(sample)?;
        let mut err = None;
        let mut q = |obs: &[f64]| match self.target_bootstrap(obs, 0) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                0.0
            }
        };
        let fam = targets::prefix_target_family(sample, n, self.config.gamma, &mut q);
        match err {
            Some(e) => Err(e),
            None => Ok(fam),
        }
    }

    /// Learning targets for a batch under `spec`, evaluated with the
    /// target networks. Returns the targets and the number of
    /// batch-level target-critic forward passes consumed.
    pub fn compute_target(
        &self,
        samples: &[NStepSample],
        spec: TargetSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, u64), AgentError> {
        spec.validate()?;
        if spec.num_critics() > self.critics.len() {
            return Err(AgentError::Contract(format!(
                "target spec {spec} needs {} critics but the agent holds {}",
                spec.num_critics(),
                self.critics.len()
            )));
        }
        for s in samples {
            check_sample(s)?;
        }
        let gamma = self.config.gamma;
        let mut out = Vec::with_capacity(samples.len());
        match spec {
            TargetSpec::OneStep => {
                for s in samples {
                    out.push(self.eq7_target(s, 1)?);
                }
            }
            TargetSpec::NStep(n) => {
                for s in samples {
                    out.push(self.eq7_target(s, n)?);
                }
            }
            TargetSpec::MixAvg(n) => {
                for s in samples {
                    let fam = self.prefix_targets(s, n)?;
                    out.push(targets::mean(&fam));
                }
            }
            TargetSpec::MixMin(n) => {
                for s in samples {
                    let fam = self.prefix_targets(s, n)?;
                    out.push(targets::min(&fam));
                }
            }
            TargetSpec::MixAvgMinus1(n) => {
                for s in samples {
                    let fam = self.prefix_targets(s, n)?;
                    out.push(targets::mean(&fam[1..]));
                }
            }
            TargetSpec::TwinMin => {
                for s in samples {
                    let first = s.first();
                    let (obs, valid) = s.prefix_bootstrap(1);
                    let mut t = first.reward;
                    if valid {
                        let (raw, _) = mlp_forward(&self.target_actor, obs)?;
                        let mut action = self.scale_raw_action(&raw);
                        for (d, a) in action.iter_mut().enumerate() {
                            let half = self.half_range(d);
                            let eps: f64 = rng.sample(StandardNormal);
                            let noise = (eps * self.config.td3_policy_noise * half)
                                .clamp(
                                    -self.config.td3_noise_clip * half,
                                    self.config.td3_noise_clip * half,
                                );
                            *a = (*a + noise).clamp(
                                self.env_spec.action_low[d],
                                self.env_spec.action_high[d],
                            );
                        }
                        let mut input = obs.to_vec();
                        input.extend_from_slice(&action);
                        let (q1, _) = mlp_forward(&self.target_critics[0], &input)?;
                        let (q2, _) = mlp_forward(&self.target_critics[1], &input)?;
                        t += gamma * q1[0].min(q2[0]);
                    }
                    out.push(t);
                }
            }
        }
        Ok((out, spec.fp_per_update()))
    }

    // Eq.-7 style target with bootstrap horizon at most `n`.
    fn eq7_target(&self, sample: &NStepSample, n: usize) -> Result<f64, AgentError> {
        let mut err = None;
        let mut q = |obs: &[f64]| match self.target_bootstrap(obs, 0) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                0.0
            }
        };
        let t = targets::prefix_target(sample, n, self.config.gamma, &mut q);
        match err {
            Some(e) => Err(e),
            None => Ok(t),
        }
    }

    /// One Adam step on the mean-squared error between `Q(s_t, a_t)` and
    /// the targets, for every critic the spec trains.
    pub fn update_critic(
        &mut self,
        samples: &[NStepSample],
        spec: TargetSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<CriticUpdate, AgentError> {
        let (targets, fp_count) = self.compute_target(samples, spec, rng)?;
        let n = samples.len() as f64;
        let n_critics = spec.num_critics();
        let mut loss_sum = 0.0;
        let mut grad_norm: f64 = 0.0;
        for c in 0..n_critics {
            let mut grads = Gradients::zeros_like(&self.critics[c]);
            let mut loss = 0.0;
            for (s, target) in samples.iter().zip(&targets) {
                let first = s.first();
                let mut input = first.obs.clone();
                input.extend_from_slice(&first.action);
                let (q, cache) = mlp_forward(&self.critics[c], &input)?;
                let diff = q[0] - target;
                loss += diff * diff;
                let (g, _) = mlp_backward(&self.critics[c], &cache, &[2.0 * diff / n])?;
                grads.add_assign(&g);
            }
            loss /= n;
            loss_sum += loss;
            grad_norm = grad_norm.max(grads.l2_norm());
            adam_step(&mut self.critics[c], &grads, &mut self.critic_opts[c])?;
        }
        let bp_count = n_critics as u64;
        self.critic_updates += 1;
        self.ledger.updates += 1;
        self.ledger.fp_total += fp_count;
        self.ledger.bp_total += bp_count;
        self.ledger.last_fp = fp_count;
        self.ledger.last_bp = bp_count;
        Ok(CriticUpdate {
            loss: loss_sum / n_critics as f64,
            grad_norm,
            fp_count,
            bp_count,
        })
    }

    /// Deterministic policy-gradient ascent on
    /// `mean_s Q(s, mu(s))` (critic 1 only). Returns the gradient norm.
    pub fn update_actor(&mut self, obs_batch: &[Vec<f64>]) -> Result<f64, AgentError> {
        if obs_batch.is_empty() {
            return Err(AgentError::Contract("empty actor batch".into()));
        }
        let grads = self.actor_ascent_gradient(obs_batch)?;
        let norm = grads.l2_norm();
        // Adam descends; feed it the negated ascent direction.
        let mut descent = grads;
        descent.scale(-1.0);
        adam_step(&mut self.actor, &descent, &mut self.actor_opt)?;
        self.actor_updates += 1;
        Ok(norm)
    }

    // d/d(theta_mu) of mean_s Q(s, mu(s)) via the chain rule through the
    // online critic's action input.
    fn actor_ascent_gradient(&self, obs_batch: &[Vec<f64>]) -> Result<Gradients, AgentError> {
        let obs_dim = self.env_spec.obs_dim;
        let mut dq_da = |obs: &[f64], action: &[f64]| -> Result<Vec<f64>, AgentError> {
            let mut input = obs.to_vec();
            input.extend_from_slice(action);
            let (_, cache) = mlp_forward(&self.critics[0], &input)?;
            let (_, input_grad) = mlp_backward(&self.critics[0], &cache, &[1.0])?;
            Ok(input_grad[obs_dim..].to_vec())
        };
        self.actor_ascent_gradient_with(obs_batch, &mut dq_da)
    }

    // Same chain rule with an arbitrary dQ/da evaluator; lets tests drive
    // the actor against an analytic critic.
    fn actor_ascent_gradient_with(
        &self,
        obs_batch: &[Vec<f64>],
        dq_da: &mut dyn FnMut(&[f64], &[f64]) -> Result<Vec<f64>, AgentError>,
    ) -> Result<Gradients, AgentError> {
        let n = obs_batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.actor);
        for obs in obs_batch {
            let (raw, actor_cache) = mlp_forward(&self.actor, obs)?;
            let action = self.scale_raw_action(&raw);
            let da = dq_da(obs, &action)?;
            // dQ/da through the bound scaling a = c + h * raw, averaged
            // over the batch.
            let raw_grad: Vec<f64> = da
                .iter()
                .enumerate()
                .map(|(d, g)| g * self.half_range(d) / n)
                .collect();
            let (g, _) = mlp_backward(&self.actor, &actor_cache, &raw_grad)?;
            grads.add_assign(&g);
        }
        Ok(grads)
    }

    /// Polyak-update every target network toward its online counterpart.
    pub fn soft_update_targets(&mut self) -> Result<(), AgentError> {
        soft_update(&mut self.target_actor, &self.actor, self.config.tau)?;
        for (t, o) in self.target_critics.iter_mut().zip(&self.critics) {
            soft_update(t, o, self.config.tau)?;
        }
        Ok(())
    }

    /// One environment interaction plus, on update ticks, one full
    /// learning step: sample, build targets, update critic(s), update
    /// the actor, and soft-update the targets (TD3 delays the last two).
    pub fn train_step(
        &mut self,
        buffer: &mut ReplayBuffer,
        env: &mut dyn Env,
        rng: &mut ChaCha8Rng,
    ) -> Result<DiagnosticsRecord, AgentError> {
        let obs = match self.cur_obs.take() {
            Some(o) => o,
            None => env.reset(None),
        };
        let action = if self.total_env_steps < self.config.warmup_steps {
            self.env_spec
                .action_low
                .iter()
                .zip(&self.env_spec.action_high)
                .map(|(lo, hi)| rng.gen_range(*lo..=*hi))
                .collect()
        } else {
            self.select_action(&obs, true, rng)?
        };
        let result = env.step(&action)?;
        self.last_push = Some((self.episode_id, self.step_index));
        buffer.push(Transition {
            obs,
            action,
            reward: result.reward,
            next_obs: result.next_obs.clone(),
            terminal: result.terminal,
            truncated: result.truncated,
            episode_id: self.episode_id,
            step_index: self.step_index,
        })?;
        self.total_env_steps += 1;
        self.episode_return += result.reward;
        self.episode_len += 1;

        let mut record = DiagnosticsRecord::at_step(self.total_env_steps);
        if result.terminal || result.truncated {
            record.episode_return = Some(self.episode_return);
            record.episode_len = Some(self.episode_len);
            self.episode_id += 1;
            self.step_index = 0;
            self.episode_return = 0.0;
            self.episode_len = 0;
            self.cur_obs = None;
        } else {
            self.step_index += 1;
            self.cur_obs = Some(result.next_obs);
        }

        let due = self.total_env_steps > self.config.warmup_steps
            && self.total_env_steps % self.config.update_every == 0
            && !buffer.is_empty();
        if due {
            let spec = self.config.target_spec;
            let samples = buffer.sample_n(self.config.batch_size, spec.window_len(), rng)?;
            let cu = self.update_critic(&samples, spec, rng)?;
            record.critic_loss = Some(cu.loss);
            record.fp_count = cu.fp_count;
            record.bp_count = cu.bp_count;

            let actor_due = !matches!(spec, TargetSpec::TwinMin)
                || self.critic_updates % self.config.td3_policy_delay == 0;
            if actor_due {
                let obs_batch: Vec<Vec<f64>> =
                    samples.iter().map(|s| s.first().obs.clone()).collect();
                let norm = self.update_actor(&obs_batch)?;
                record.actor_grad_norm = Some(norm);
                self.soft_update_targets()?;
            }
        }
        Ok(record)
    }

    /// FNV-1a over the exact bits of every parameter of every network.
    /// Lets tests assert that an operation was read-only.
    pub fn params_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        self.actor.for_each_param(&mut eat);
        self.target_actor.for_each_param(&mut eat);
        for c in self.critics.iter().chain(&self.target_critics) {
            c.for_each_param(&mut eat);
        }
        h
    }

    /// Same fingerprint, but over the target networks only.
    pub fn target_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        self.target_actor.for_each_param(&mut eat);
        for c in &self.target_critics {
            c.for_each_param(&mut eat);
        }
        h
    }

    /// Online critic value `Q(s, a)` (critic 1).
    pub fn critic_value(&self, obs: &[f64], action: &[f64]) -> Result<f64, AgentError> {
        let mut input = obs.to_vec();
        input.extend_from_slice(action);
        let (q, _) = mlp_forward(&self.critics[0], &input)?;
        Ok(q[0])
    }

    /// `Q(s, mu(s))` under the online networks.
    pub fn q_of_policy(&self, obs: &[f64]) -> Result<f64, AgentError> {
        let action = self.policy(obs)?;
        self.critic_value(obs, &action)
    }

    pub(crate) fn networks(&self) -> Vec<(&'static str, &MlpParams)> {
        let mut v = vec![("actor", &self.actor), ("target_actor", &self.target_actor)];
        for (i, c) in self.critics.iter().enumerate() {
            v.push((if i == 0 { "critic1" } else { "critic2" }, c));
        }
        for (i, c) in self.target_critics.iter().enumerate() {
            v.push((if i == 0 { "target_critic1" } else { "target_critic2" }, c));
        }
        v
    }

    pub(crate) fn restore_networks(&mut self, nets: Vec<(String, MlpParams)>) -> Result<(), AgentError> {
        for (name, params) in nets {
            let slot = match name.as_str() {
                "actor" => &mut self.actor,
                "target_actor" => &mut self.target_actor,
                "critic1" => &mut self.critics[0],
                "critic2" if self.critics.len() > 1 => &mut self.critics[1],
                "target_critic1" => &mut self.target_critics[0],
                "target_critic2" if self.target_critics.len() > 1 => {
                    &mut self.target_critics[1]
                }
                other => {
                    return Err(AgentError::Contract(format!(
                        "unknown network role '{other}' in checkpoint"
                    )))
                }
            };
            if slot.layer_sizes() != params.layer_sizes() {
                return Err(AgentError::Contract(format!(
                    "checkpoint network '{name}' has layer sizes {:?}, agent expects {:?}",
                    params.layer_sizes(),
                    slot.layer_sizes()
                )));
            }
            *slot = params;
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn critic_mut(&mut self, idx: usize) -> &mut MlpParams {
        &mut self.critics[idx]
    }

}

fn check_sample(sample: &NStepSample) -> Result<(), AgentError> {
    if sample.effective_k == 0 || sample.transitions.len() != sample.effective_k {
        return Err(AgentError::Contract(format!(
            "window holds {} transitions but claims effective_k = {}",
            sample.transitions.len(),
            sample.effective_k
        )));
    }
    Ok(())
}
