//! Built-in oracle and property checks runnable from the shipped binary
//! (`nstepac selftest`). Each check is a fast, seeded replica of the core
//! correctness arguments: finite-difference gradients, the window oracle,
//! return summation, backup identities, chain Bellman consistency, the
//! propagation cost table, and environment replay determinism.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{targets, Agent, AgentConfig, TargetSpec};
use crate::envs::{chain_index_from_obs, chain_optimal_value, make_env};
use crate::numkit::{
    adam_step, mlp_backward, mlp_forward, soft_update, Activation, AdamState, Gradients,
    MlpParams, OutputActivation,
};
use crate::replay::{n_step_return, ReplayBuffer, Transition};

pub struct SelfTestResult {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(), String>) -> SelfTestResult {
    SelfTestResult {
        name,
        outcome: f(),
    }
}

fn fail(msg: String) -> Result<(), String> {
    Err(msg)
}

/// Runs every check; the CLI prints one line per result.
pub fn run_selftest() -> Vec<SelfTestResult> {
    vec![
        check("gradients-match-finite-differences", gradient_check),
        check("adam-single-step-oracle", adam_check),
        check("soft-update-interpolation", soft_update_check),
        check("replay-window-forward-scan-oracle", window_oracle_check),
        check("n-step-return-direct-sum", return_sum_check),
        check("target-rule-identities", target_identity_check),
        check("chain-bellman-consistency", chain_bellman_check),
        check("propagation-cost-table", cost_table_check),
        check("env-replay-determinism", env_determinism_check),
    ]
}

fn gradient_check() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for trial in 0..10 {
        let sizes = [3usize, 12, 8, 2];
        let act = if trial % 2 == 0 { Activation::Tanh } else { Activation::ReLU };
        let mut p = MlpParams::init_uniform(&sizes, act, OutputActivation::Identity, &mut rng)
            .map_err(|e| e.to_string())?;
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let og: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = mlp_forward(&p, &x).map_err(|e| e.to_string())?;
        let (grads, _) = mlp_backward(&p, &cache, &og).map_err(|e| e.to_string())?;
        let mut analytic = Vec::new();
        grads.for_each(|g| analytic.push(g));
        let scalar = |p: &MlpParams| -> f64 {
            let (out, _) = mlp_forward(p, &x).unwrap();
            out.iter().zip(&og).map(|(o, g)| o * g).sum()
        };
        let h = 1e-5;
        for k in 0..p.param_count() {
            let mut idx = 0;
            p.for_each_param_mut(|v| {
                if idx == k {
                    *v += h;
                }
                idx += 1;
            });
            let plus = scalar(&p);
            idx = 0;
            p.for_each_param_mut(|v| {
                if idx == k {
                    *v -= 2.0 * h;
                }
                idx += 1;
            });
            let minus = scalar(&p);
            idx = 0;
            p.for_each_param_mut(|v| {
                if idx == k {
                    *v += h;
                }
                idx += 1;
            });
            let fd = (plus - minus) / (2.0 * h);
            let a = analytic[k];
            if (a - fd).abs() > 1e-4 * a.abs().max(fd.abs()).max(1.0) {
                return fail(format!("trial {trial} param {k}: analytic {a} vs fd {fd}"));
            }
        }
    }
    Ok(())
}

fn adam_check() -> Result<(), String> {
    let mut p = MlpParams::zeros(&[1, 1], Activation::ReLU, OutputActivation::Identity)
        .map_err(|e| e.to_string())?;
    let mut grads = Gradients::zeros_like(&p);
    for w in &mut grads.weights {
        for v in w.data_mut() {
            *v = 1.0;
        }
    }
    let mut st = AdamState::new(&p, 0.1);
    adam_step(&mut p, &grads, &mut st).map_err(|e| e.to_string())?;
    let expected = -0.1 / (1.0 + 1e-8);
    let mut ok = true;
    p.for_each_param(|v| {
        // Only the weight carried gradient 1; the bias gradient was 0.
        if v != 0.0 && (v - expected).abs() > 1e-15 {
            ok = false;
        }
    });
    if ok {
        Ok(())
    } else {
        fail("adam step deviates from the hand-computed update".into())
    }
}

fn soft_update_check() -> Result<(), String> {
    let mut target = MlpParams::zeros(&[2, 2], Activation::ReLU, OutputActivation::Identity)
        .map_err(|e| e.to_string())?;
    let mut online = target.clone();
    online.for_each_param_mut(|v| *v = 1.0);
    soft_update(&mut target, &online, 0.3).map_err(|e| e.to_string())?;
    soft_update(&mut target, &online, 0.3).map_err(|e| e.to_string())?;
    let mut ok = true;
    target.for_each_param(|v| {
        if (v - 0.51).abs() > 1e-15 {
            ok = false;
        }
    });
    if ok {
        Ok(())
    } else {
        fail("two tau=0.3 updates from 0 toward 1 must land on 0.51".into())
    }
}

fn demo_transition(ep: u64, step: u64, reward: f64, terminal: bool, truncated: bool) -> Transition {
    Transition {
        obs: vec![ep as f64, step as f64],
        action: vec![0.0],
        reward,
        next_obs: vec![ep as f64, step as f64 + 1.0],
        terminal,
        truncated,
        episode_id: ep,
        step_index: step,
    }
}

fn window_oracle_check() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for case in 0..50 {
        let capacity = rng.gen_range(4..16);
        let mut buf = ReplayBuffer::new(capacity);
        let mut mirror: Vec<Transition> = Vec::new();
        let (mut ep, mut step) = (0u64, 0u64);
        for _ in 0..rng.gen_range(1..40) {
            let roll: f64 = rng.gen();
            let terminal = roll < 0.15;
            let truncated = !terminal && roll < 0.25;
            let t = demo_transition(ep, step, rng.gen_range(-1.0..1.0), terminal, truncated);
            buf.push(t.clone()).map_err(|e| e.to_string())?;
            if mirror.len() == capacity {
                mirror.remove(0);
            }
            mirror.push(t);
            if terminal || truncated {
                ep += 1;
                step = 0;
            } else {
                step += 1;
            }
        }
        for start in 0..mirror.len() {
            for n in 1..=6 {
                let w = buf.window_at(start, n);
                // Independent forward scan.
                let mut k = 1;
                loop {
                    let last = &mirror[start + k - 1];
                    if last.terminal || last.truncated || k == n || start + k >= mirror.len() {
                        break;
                    }
                    let next = &mirror[start + k];
                    if next.episode_id != last.episode_id
                        || next.step_index != last.step_index + 1
                    {
                        break;
                    }
                    k += 1;
                }
                let valid = !mirror[start + k - 1].terminal;
                if w.effective_k != k || w.bootstrap_valid != valid {
                    return fail(format!(
                        "case {case} start {start} n {n}: window ({}, {}) vs oracle ({k}, {valid})",
                        w.effective_k, w.bootstrap_valid
                    ));
                }
            }
        }
    }
    Ok(())
}

fn return_sum_check() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..100 {
        let len = rng.gen_range(1..8usize);
        let terminal: bool = rng.gen();
        let mut buf = ReplayBuffer::new(8);
        for s in 0..len {
            buf.push(demo_transition(
                0,
                s as u64,
                rng.gen_range(-2.0..2.0),
                terminal && s == len - 1,
                false,
            ))
            .map_err(|e| e.to_string())?;
        }
        let gamma: f64 = rng.gen_range(0.0..=1.0);
        let w = buf.window_at(0, len);
        let (ret, disc) = n_step_return(&w, gamma);
        let mut expected = 0.0;
        for (i, t) in w.transitions.iter().enumerate() {
            expected += gamma.powi(i as i32) * t.reward;
        }
        if (ret - expected).abs() > 1e-12 {
            return fail(format!("return {ret} vs direct sum {expected}"));
        }
        let expected_disc = if w.bootstrap_valid {
            gamma.powi(w.effective_k as i32)
        } else {
            0.0
        };
        if (disc - expected_disc).abs() > 1e-12 {
            return fail(format!("discount {disc} vs {expected_disc}"));
        }
    }
    Ok(())
}

fn demo_agent(spec: TargetSpec, seed: u64) -> Result<Agent, String> {
    let env = make_env("pendulum").map_err(|e| e.to_string())?;
    let config = AgentConfig {
        target_spec: spec,
        hidden_sizes: vec![8, 8],
        batch_size: 8,
        warmup_steps: 0,
        ..AgentConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Agent::new(config, env.spec(), &mut rng).map_err(|e| e.to_string())
}

fn random_pendulum_buffer(seed: u64, steps: usize) -> Result<ReplayBuffer, String> {
    let mut env = make_env("pendulum").map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = ReplayBuffer::new(steps);
    let mut obs = env.reset(Some(seed));
    let (mut ep, mut idx) = (0u64, 0u64);
    for _ in 0..steps {
        let action = vec![rng.gen_range(-2.0..2.0)];
        let r = env.step(&action).map_err(|e| e.to_string())?;
        buf.push(Transition {
            obs: obs.clone(),
            action,
            reward: r.reward,
            next_obs: r.next_obs.clone(),
            terminal: r.terminal,
            truncated: r.truncated,
            episode_id: ep,
            step_index: idx,
        })
        .map_err(|e| e.to_string())?;
        if r.terminal || r.truncated {
            ep += 1;
            idx = 0;
            obs = env.reset(None);
        } else {
            idx += 1;
            obs = r.next_obs;
        }
    }
    Ok(buf)
}

fn target_identity_check() -> Result<(), String> {
    let agent = demo_agent(TargetSpec::MixAvg(4), 104)?;
    let buf = random_pendulum_buffer(105, 400)?;
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for _ in 0..100 {
        let samples = buf.sample_n(16, 4, &mut rng).map_err(|e| e.to_string())?;
        let (one, _) = agent
            .compute_target(&samples, TargetSpec::OneStep, &mut rng)
            .map_err(|e| e.to_string())?;
        let (n1, _) = agent
            .compute_target(&samples, TargetSpec::NStep(1), &mut rng)
            .map_err(|e| e.to_string())?;
        let (avg, _) = agent
            .compute_target(&samples, TargetSpec::MixAvg(4), &mut rng)
            .map_err(|e| e.to_string())?;
        let (min, _) = agent
            .compute_target(&samples, TargetSpec::MixMin(4), &mut rng)
            .map_err(|e| e.to_string())?;
        let (avg1, _) = agent
            .compute_target(&samples, TargetSpec::MixAvgMinus1(4), &mut rng)
            .map_err(|e| e.to_string())?;
        for j in 0..samples.len() {
            if (one[j] - n1[j]).abs() > 1e-12 {
                return fail(format!("1-step vs n=1: {} vs {}", one[j], n1[j]));
            }
            let fam = agent
                .prefix_targets(&samples[j], 4)
                .map_err(|e| e.to_string())?;
            if fam.iter().any(|q| min[j] > *q) {
                return fail("minimum mixture exceeds a prefix target".into());
            }
            let identity = (4.0 * avg[j] - fam[0]) / 3.0;
            if (avg1[j] - identity).abs() > 1e-9 {
                return fail(format!("avg-1 identity: {} vs {}", avg1[j], identity));
            }
        }
    }
    Ok(())
}

fn chain_bellman_check() -> Result<(), String> {
    let l = 20u64;
    let gamma = 0.9;
    let mut env = make_env(&format!("chain:L={l}")).map_err(|e| e.to_string())?;
    let mut buf = ReplayBuffer::new(32);
    let mut obs = env.reset(Some(0));
    let mut idx = 0u64;
    loop {
        let r = env.step(&[0.0]).map_err(|e| e.to_string())?;
        buf.push(Transition {
            obs: obs.clone(),
            action: vec![0.0],
            reward: r.reward,
            next_obs: r.next_obs.clone(),
            terminal: r.terminal,
            truncated: r.truncated,
            episode_id: 0,
            step_index: idx,
        })
        .map_err(|e| e.to_string())?;
        idx += 1;
        if r.terminal {
            break;
        }
        obs = r.next_obs;
    }
    let mut oracle = |obs: &[f64]| chain_optimal_value(chain_index_from_obs(obs, l), l, gamma);
    for start in 0..l as usize {
        for n in 1..=8 {
            let w = buf.window_at(start, n);
            let t = targets::prefix_target(&w, n, gamma, &mut oracle);
            let expected = chain_optimal_value(start as u64, l, gamma);
            if (t - expected).abs() > 1e-12 {
                return fail(format!("start {start} n {n}: {t} vs {expected}"));
            }
        }
    }
    Ok(())
}

fn cost_table_check() -> Result<(), String> {
    let buf = random_pendulum_buffer(107, 200)?;
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for (spec, fp, bp) in [
        (TargetSpec::OneStep, 1u64, 1u64),
        (TargetSpec::TwinMin, 2, 2),
        (TargetSpec::NStep(6), 1, 1),
        (TargetSpec::MixAvg(6), 6, 1),
    ] {
        let mut agent = demo_agent(spec, 109)?;
        let samples = buf
            .sample_n(8, spec.window_len(), &mut rng)
            .map_err(|e| e.to_string())?;
        let cu = agent
            .update_critic(&samples, spec, &mut rng)
            .map_err(|e| e.to_string())?;
        if (cu.fp_count, cu.bp_count) != (fp, bp) {
            return fail(format!(
                "{spec}: counted ({}, {}), table says ({fp}, {bp})",
                cu.fp_count, cu.bp_count
            ));
        }
    }
    Ok(())
}

fn env_determinism_check() -> Result<(), String> {
    for id in ["pendulum", "pointmass", "mountaincar", "chain:L=10"] {
        let run = || -> Result<Vec<u64>, String> {
            let mut env = make_env(id).map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(110);
            let mut obs = env.reset(Some(7));
            let mut bits = Vec::new();
            for _ in 0..200 {
                let action: Vec<f64> = env
                    .spec()
                    .action_low
                    .iter()
                    .zip(&env.spec().action_high)
                    .map(|(lo, hi)| rng.gen_range(*lo..*hi))
                    .collect();
                let r = env.step(&action).map_err(|e| e.to_string())?;
                bits.push(r.reward.to_bits());
                bits.extend(r.next_obs.iter().map(|v| v.to_bits()));
                if r.terminal || r.truncated {
                    obs = env.reset(None);
                } else {
                    obs = r.next_obs;
                }
            }
            let _ = obs;
            Ok(bits)
        };
        if run()? != run()? {
            return fail(format!("{id}: identical seeds produced different trajectories"));
        }
    }
    Ok(())
}
