#![allow(dead_code)]

//! Shared helpers and independent oracles for the acceptance suite.

use nstepac::agents::{Agent, AgentConfig, TargetSpec};
use nstepac::envs::{make_env, EnvSpec};
use nstepac::numkit::MlpParams;
use nstepac::replay::{ReplayBuffer, Transition};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn perturb_param(p: &mut MlpParams, k: usize, delta: f64) {
    let mut idx = 0;
    p.for_each_param_mut(|v| {
        if idx == k {
            *v += delta;
        }
        idx += 1;
    });
}

/// Brute-force window oracle: walk forward from `start` until n, a
/// terminal/truncated step, an episode boundary, or the newest entry.
/// Returns (effective_k, bootstrap_valid, the transitions).
pub fn oracle_window(
    stored: &[Transition],
    start: usize,
    n: usize,
) -> (usize, bool, Vec<Transition>) {
    let mut k = 1;
    loop {
        let last = &stored[start + k - 1];
        if last.terminal || last.truncated || k == n || start + k >= stored.len() {
            break;
        }
        let next = &stored[start + k];
        if next.episode_id != last.episode_id || next.step_index != last.step_index + 1 {
            break;
        }
        k += 1;
    }
    let window = stored[start..start + k].to_vec();
    let valid = !window.last().unwrap().terminal;
    (k, valid, window)
}

/// Direct left-to-right summation of `sum_i gamma^i r_i` with a running
/// discount product, the literal reading of the n-step return.
pub fn oracle_return(window: &[Transition], bootstrap_valid: bool, gamma: f64) -> (f64, f64) {
    let mut total = 0.0;
    let mut disc = 1.0;
    for t in window {
        total += disc * t.reward;
        disc *= gamma;
    }
    (total, if bootstrap_valid { disc } else { 0.0 })
}

pub fn small_agent_config(spec: TargetSpec) -> AgentConfig {
    AgentConfig {
        target_spec: spec,
        hidden_sizes: vec![16, 16],
        batch_size: 32,
        warmup_steps: 500,
        ..AgentConfig::default()
    }
}

pub fn random_small_agent(spec: TargetSpec, seed: u64) -> Agent {
    let env_spec = EnvSpec {
        obs_dim: 3,
        act_dim: 1,
        action_low: vec![-2.0],
        action_high: vec![2.0],
        max_episode_steps: 200,
        reward_min: -20.0,
        reward_max: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = AgentConfig {
        target_spec: spec,
        hidden_sizes: vec![8, 8],
        batch_size: 4,
        warmup_steps: 0,
        ..AgentConfig::default()
    };
    Agent::new(config, &env_spec, &mut rng).unwrap()
}

/// Synthetic buffer of `episodes` episodes, each `len` long, with random
/// rewards/observations; terminal at episode ends with probability mixed
/// against truncation.
pub fn random_synthetic_buffer(seed: u64, episodes: u64, len: u64, obs_dim: usize) -> ReplayBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = ReplayBuffer::new((episodes * len) as usize);
    for ep in 0..episodes {
        let terminal_end: bool = rng.gen();
        for step in 0..len {
            let last = step == len - 1;
            buffer
                .push(Transition {
                    obs: (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    action: vec![rng.gen_range(-2.0..2.0)],
                    reward: rng.gen_range(-1.0..1.0),
                    next_obs: (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    terminal: last && terminal_end,
                    truncated: last && !terminal_end,
                    episode_id: ep,
                    step_index: step,
                })
                .unwrap();
        }
    }
    buffer
}

/// One full chain episode as stored experience.
pub fn rollout_chain(l: u64) -> ReplayBuffer {
    let mut env = make_env(&format!("chain:L={l}")).unwrap();
    let mut buffer = ReplayBuffer::new(l as usize + 1);
    let mut obs = env.reset(Some(0));
    let mut idx = 0u64;
    loop {
        let r = env.step(&[0.0]).unwrap();
        buffer
            .push(Transition {
                obs: obs.clone(),
                action: vec![0.0],
                reward: r.reward,
                next_obs: r.next_obs.clone(),
                terminal: r.terminal,
                truncated: r.truncated,
                episode_id: 0,
                step_index: idx,
            })
            .unwrap();
        idx += 1;
        if r.terminal {
            break;
        }
        obs = r.next_obs;
    }
    buffer
}

/// Spearman rank correlation of y against x (ties get mean ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = mean_rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

#[allow(dead_code)]
pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
