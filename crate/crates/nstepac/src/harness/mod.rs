//! Experiment front-end: seeded multi-run training with periodic
//! noise-free evaluation, CSV/plot emission, cross-run comparison, and
//! the diagnostic suites behind the CLI.
//!
//! Determinism contract: given the same config and seed list, two runs
//! produce byte-identical CSV, summary and checkpoint files. Wall-clock
//! timings go to a separate `timing.json` so they never pollute the
//! deterministic artifacts.

pub mod compare;
pub mod config;
pub mod plot;

pub use compare::{compare_runs, CompareMetric};
pub use config::{load_config, parse_config, ExperimentConfig, OUTDIR_ENV};

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{save_agent_checkpoint, Agent, AgentError};
use crate::diagnostics::{
    average_q, estimate_bias, online_offline_gap, probe_batch_from_replay, record_target_gaps,
    DiagCsvWriter, DiagError, StateJournal,
};
use crate::envs::{make_env, EnvError};
use crate::replay::ReplayBuffer;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("incomplete comparison: {0}")]
    Incomplete(String),
    #[error("plot error: {0}")]
    Plot(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] crate::replay::ReplayError),
    #[error(transparent)]
    Diag(#[from] DiagError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl From<crate::agents::CheckpointError> for HarnessError {
    fn from(e: crate::agents::CheckpointError) -> Self {
        HarnessError::Checkpoint(e.to_string())
    }
}

/// Writes a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// One seed's evaluation trace and final diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub eval_steps: Vec<u64>,
    pub eval_mean_returns: Vec<f64>,
    pub eval_mean_disc_returns: Vec<f64>,
    pub final_bias: Option<f64>,
    pub final_predicted_q: Option<f64>,
    pub final_mc_return: Option<f64>,
}

/// Cross-seed aggregation of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub env_id: String,
    pub target_spec: String,
    pub total_steps: u64,
    pub seeds: Vec<u64>,
    pub eval_steps: Vec<u64>,
    /// Best cross-seed mean evaluation return over all eval points, the
    /// cross-seed std at that point, and the step it occurred at.
    pub max_avg_return: f64,
    pub max_avg_return_std: f64,
    pub max_avg_return_step: u64,
    /// Cross-seed mean of the final evaluation point.
    pub mean_final_return: f64,
    /// Cross-seed mean of the final bias estimates, when recorded.
    pub mean_final_bias: Option<f64>,
    pub per_seed: Vec<SeedSummary>,
}

pub fn summary_path(run_dir: &Path) -> PathBuf {
    run_dir.join("summary.json")
}

pub fn read_summary(run_dir: &Path) -> Result<RunSummary, HarnessError> {
    let path = summary_path(run_dir);
    let text = fs::read_to_string(&path).map_err(|e| {
        HarnessError::Incomplete(format!("missing summary {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| HarnessError::Incomplete(format!("bad summary {}: {e}", path.display())))
}

/// Noise-free evaluation: returns (mean return, std, mean discounted
/// return) over `episodes` fresh episodes.
fn evaluate(
    agent: &Agent,
    env_id: &str,
    gamma: f64,
    episodes: usize,
    seed_base: u64,
) -> Result<(f64, f64, f64), HarnessError> {
    let mut env = make_env(env_id)?;
    let mut returns = Vec::with_capacity(episodes);
    let mut disc_returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut obs = env.reset(Some(splitmix(seed_base, ep as u64)));
        let mut total = 0.0;
        let mut disc_total = 0.0;
        let mut disc = 1.0;
        loop {
            let action = agent.policy(&obs)?;
            let r = env.step(&action)?;
            total += r.reward;
            disc_total += disc * r.reward;
            disc *= gamma;
            if r.terminal || r.truncated {
                break;
            }
            obs = r.next_obs;
        }
        returns.push(total);
        disc_returns.push(disc_total);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / episodes as f64;
    let mean_disc = disc_returns.iter().sum::<f64>() / episodes as f64;
    Ok((mean, var.sqrt(), mean_disc))
}

// SplitMix64 step; derives disjoint deterministic seeds.
fn splitmix(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(b)
        .wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

struct SeedOutcome {
    summary: SeedSummary,
    wall_clock_s: f64,
}

fn run_single_seed(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedOutcome, HarnessError> {
    let start = Instant::now();
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = make_env(&config.env_id)?;
    env.reset(Some(rng.gen()));
    let mut agent = Agent::new(config.agent.clone(), env.spec(), &mut rng)?;
    let mut buffer = ReplayBuffer::new(config.replay_capacity);
    let mut journal = if config.track_online_gap {
        Some(StateJournal::new(config.replay_capacity))
    } else {
        None
    };

    let train_tmp = dir.join("train.csv.tmp");
    let eval_tmp = dir.join("eval.csv.tmp");
    let diag_tmp = dir.join("diag.csv.tmp");
    let mut train_csv = BufWriter::new(fs::File::create(&train_tmp)?);
    writeln!(train_csv, "# nstepac train csv v1")?;
    writeln!(train_csv, "step,episode,episode_return,episode_len")?;
    let mut eval_csv = BufWriter::new(fs::File::create(&eval_tmp)?);
    writeln!(eval_csv, "# nstepac eval csv v1")?;
    writeln!(eval_csv, "step,mean_return,std_return,mean_disc_return")?;
    let mut diag_csv = DiagCsvWriter::create(&diag_tmp, config.gap_max_n)?;

    let mut episode_counter = 0u64;
    let mut eval_steps = Vec::new();
    let mut eval_means = Vec::new();
    let mut eval_disc_means = Vec::new();

    for step in 1..=config.total_steps {
        let mut rec = agent.train_step(&mut buffer, env.as_mut(), &mut rng)?;
        if let (Some(j), Some((ep, idx))) = (journal.as_mut(), agent.last_push_ids()) {
            j.record(ep, idx, env.save_state());
        }
        let mut emit = false;
        if let Some(ret) = rec.episode_return {
            episode_counter += 1;
            writeln!(
                train_csv,
                "{},{},{},{}",
                step,
                episode_counter,
                ret,
                rec.episode_len.unwrap_or(0)
            )?;
            emit = true;
        }

        let epoch_tick = step % config.epoch_steps == 0
            && step > config.agent.warmup_steps
            && !buffer.is_empty();
        if epoch_tick {
            let probe_n = config.probe_batch.min(buffer.len()).max(1);
            let probe = probe_batch_from_replay(&buffer, probe_n, &mut rng);
            rec.avg_q = Some(average_q(&agent, &probe)?);
            if config.record_gaps {
                let samples =
                    buffer.sample_n(config.agent.batch_size, config.gap_max_n, &mut rng)?;
                let report = record_target_gaps(&agent, &samples, config.gap_max_n)?;
                rec.target_gaps = report.gaps;
                rec.mix_avg_target = Some(report.mix_avg_mean);
                rec.mix_min_target = Some(report.mix_min_mean);
            }
            if let Some(j) = journal.as_ref() {
                let samples =
                    buffer.sample_n(config.agent.batch_size, config.online_gap_n, &mut rng)?;
                let (offline, online, _gap) =
                    online_offline_gap(&agent, env.as_ref(), j, &samples, config.online_gap_n)?;
                rec.offline_target_mean = Some(offline);
                rec.online_target_mean = Some(online);
            }
            emit = true;
        }
        if emit {
            diag_csv.append(&rec)?;
        }

        if step % config.eval_every == 0 {
            let (mean, std, mean_disc) = evaluate(
                &agent,
                &config.env_id,
                config.agent.gamma,
                config.eval_episodes,
                splitmix(seed, step),
            )?;
            writeln!(eval_csv, "{step},{mean},{std},{mean_disc}")?;
            eval_steps.push(step);
            eval_means.push(mean);
            eval_disc_means.push(mean_disc);
        }
    }

    train_csv.flush()?;
    eval_csv.flush()?;
    diag_csv.flush()?;
    drop(train_csv);
    drop(eval_csv);
    drop(diag_csv);
    fs::rename(&train_tmp, dir.join("train.csv"))?;
    fs::rename(&eval_tmp, dir.join("eval.csv"))?;
    fs::rename(&diag_tmp, dir.join("diag.csv"))?;

    let mut checkpoint = Vec::new();
    save_agent_checkpoint(&agent, &config.env_id, &mut checkpoint)?;
    write_atomic(&dir.join("checkpoint.bin"), &checkpoint)?;

    let bias = if config.bias_probes > 0 {
        let mut bias_rng = ChaCha8Rng::seed_from_u64(splitmix(seed, 0xB1A5));
        Some(estimate_bias(
            &agent,
            env.as_ref(),
            config.bias_probes,
            config.bias_horizon,
            &mut bias_rng,
        )?)
    } else {
        None
    };

    Ok(SeedOutcome {
        summary: SeedSummary {
            seed,
            eval_steps,
            eval_mean_returns: eval_means,
            eval_mean_disc_returns: eval_disc_means,
            final_bias: bias.as_ref().map(|b| b.bias),
            final_predicted_q: bias.as_ref().map(|b| b.mean_predicted_q),
            final_mc_return: bias.as_ref().map(|b| b.mean_mc_return),
        },
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// Trains every seed (in parallel worker threads), writes per-seed CSVs,
/// checkpoints, plots, `summary.json` and `timing.json`, and returns the
/// aggregated summary.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    make_env(&config.env_id)?; // fail fast on a bad id
    let out_dir = config.resolved_output_dir();
    fs::create_dir_all(&out_dir)?;
    let config_copy = toml::to_string_pretty(config)
        .map_err(|e| HarnessError::Config(format!("cannot serialize config: {e}")))?;
    write_atomic(&out_dir.join("config.toml"), config_copy.as_bytes())?;

    let started = Instant::now();
    let n_seeds = config.seeds.len();
    let workers = if config.parallel_seeds == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        config.parallel_seeds
    }
    .min(n_seeds)
    .max(1);

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SeedOutcome, HarnessError>>>> =
        Mutex::new((0..n_seeds).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n_seeds {
                    break;
                }
                let seed = config.seeds[i];
                let dir = out_dir.join(format!("seed_{seed}"));
                let outcome = run_single_seed(config, seed, &dir);
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let mut outcomes = Vec::with_capacity(n_seeds);
    for slot in results.into_inner().unwrap() {
        outcomes.push(slot.expect("worker finished every slot")?);
    }

    let summary = aggregate(config, &outcomes)?;
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| HarnessError::Config(format!("cannot serialize summary: {e}")))?;
    write_atomic(&summary_path(&out_dir), json.as_bytes())?;

    // Wall-clock timings live outside the deterministic summary.
    let timing = serde_json::json!({
        "wall_clock_s": started.elapsed().as_secs_f64(),
        "per_seed_s": outcomes.iter().map(|o| o.wall_clock_s).collect::<Vec<_>>(),
        "workers": workers,
    });
    write_atomic(
        &out_dir.join("timing.json"),
        serde_json::to_string_pretty(&timing).unwrap().as_bytes(),
    )?;

    // Per-run plots: return curves always, gap curves when recorded.
    plot::emit_run_plots(&out_dir, &summary, config)?;

    Ok(summary)
}

fn aggregate(
    config: &ExperimentConfig,
    outcomes: &[SeedOutcome],
) -> Result<RunSummary, HarnessError> {
    let per_seed: Vec<SeedSummary> = outcomes.iter().map(|o| o.summary.clone()).collect();
    let eval_steps = per_seed[0].eval_steps.clone();
    for s in &per_seed {
        if s.eval_steps != eval_steps {
            return Err(HarnessError::Incomplete(
                "seeds disagree on the evaluation schedule".into(),
            ));
        }
    }
    let n = per_seed.len() as f64;
    let mut max_avg = f64::NEG_INFINITY;
    let mut max_std = 0.0;
    let mut max_step = 0;
    for (i, &step) in eval_steps.iter().enumerate() {
        let vals: Vec<f64> = per_seed.iter().map(|s| s.eval_mean_returns[i]).collect();
        let mean = vals.iter().sum::<f64>() / n;
        if mean > max_avg {
            max_avg = mean;
            max_step = step;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            max_std = var.sqrt();
        }
    }
    let mean_final_return = per_seed
        .iter()
        .map(|s| *s.eval_mean_returns.last().unwrap())
        .sum::<f64>()
        / n;
    let biases: Vec<f64> = per_seed.iter().filter_map(|s| s.final_bias).collect();
    let mean_final_bias = if biases.is_empty() {
        None
    } else {
        Some(biases.iter().sum::<f64>() / biases.len() as f64)
    };
    Ok(RunSummary {
        env_id: config.env_id.clone(),
        target_spec: config.agent.target_spec.to_string(),
        total_steps: config.total_steps,
        seeds: config.seeds.clone(),
        eval_steps,
        max_avg_return: max_avg,
        max_avg_return_std: max_std,
        max_avg_return_step: max_step,
        mean_final_return,
        mean_final_bias,
        per_seed,
    })
}
