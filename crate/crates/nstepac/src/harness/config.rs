//! Experiment configuration: a TOML file with root-level run settings and
//! an `[agent]` section, every key overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::AgentConfig;

use super::HarnessError;

/// Environment variable naming the default output root; relative
/// `output_dir`s resolve under it.
pub const OUTDIR_ENV: &str = "NSTEPAC_OUTDIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env_id: String,
    pub total_steps: u64,
    pub seeds: Vec<u64>,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub output_dir: PathBuf,
    pub replay_capacity: usize,
    /// Worker threads across seeds; 0 means one per available core.
    pub parallel_seeds: usize,
    /// Diagnostics cadence in environment steps.
    pub epoch_steps: u64,
    /// Record target gaps for i = 1..=gap_max_n each epoch.
    pub record_gaps: bool,
    pub gap_max_n: usize,
    /// States in the average-Q probe batch, resampled each epoch.
    pub probe_batch: usize,
    /// Probe rollouts for the final bias estimate (0 skips it).
    pub bias_probes: usize,
    pub bias_horizon: u64,
    /// Track the online-vs-offline expansion gap each epoch (keeps an
    /// environment-state journal alongside the replay buffer).
    pub track_online_gap: bool,
    pub online_gap_n: usize,
    pub agent: AgentConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env_id: "pendulum".into(),
            total_steps: 30_000,
            seeds: vec![1, 2, 3, 4, 5],
            eval_every: 4000,
            eval_episodes: 10,
            output_dir: PathBuf::from("run"),
            replay_capacity: 100_000,
            parallel_seeds: 0,
            epoch_steps: 4000,
            record_gaps: true,
            gap_max_n: 5,
            probe_batch: 1000,
            bias_probes: 256,
            bias_horizon: 200,
            track_online_gap: false,
            online_gap_n: 5,
            agent: AgentConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must be non-empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(HarnessError::Config("seeds must be distinct".into()));
        }
        if self.total_steps < self.agent.warmup_steps {
            return Err(HarnessError::Config(format!(
                "total_steps {} is below warmup_steps {}",
                self.total_steps, self.agent.warmup_steps
            )));
        }
        if self.eval_every == 0 || self.epoch_steps == 0 {
            return Err(HarnessError::Config(
                "eval_every and epoch_steps must be positive".into(),
            ));
        }
        if self.eval_every > self.total_steps {
            return Err(HarnessError::Config(format!(
                "eval_every {} exceeds total_steps {}; no evaluation would run",
                self.eval_every, self.total_steps
            )));
        }
        if self.eval_episodes == 0 {
            return Err(HarnessError::Config("eval_episodes must be positive".into()));
        }
        if self.replay_capacity == 0 {
            return Err(HarnessError::Config("replay_capacity must be positive".into()));
        }
        if self.gap_max_n < 1 {
            return Err(HarnessError::Config("gap_max_n must be at least 1".into()));
        }
        if self.online_gap_n < 1 {
            return Err(HarnessError::Config("online_gap_n must be at least 1".into()));
        }
        self.agent.validate()?;
        Ok(())
    }

    /// Output directory with the `NSTEPAC_OUTDIR` root applied.
    pub fn resolved_output_dir(&self) -> PathBuf {
        if self.output_dir.is_absolute() {
            return self.output_dir.clone();
        }
        match std::env::var_os(OUTDIR_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

/// Parses a config file and applies `key=value` overrides. Keys address
/// nested tables with dots (`agent.gamma=0.99`); values are parsed as
/// TOML scalars/arrays, falling back to strings.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, overrides)
}

pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig, HarnessError> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| HarnessError::Config(format!("config parse error: {e}")))?;
    for spec in overrides {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("override '{spec}' is not key=value")))?;
        apply_override(&mut table, key.trim(), value.trim())?;
    }
    let config: ExperimentConfig = toml::Table::try_into(table)
        .map_err(|e| HarnessError::Config(format!("config error: {e}")))?;
    config.validate()?;
    Ok(config)
}

fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<(), HarnessError> {
    // Parse the value as a TOML scalar/array; anything unparseable is a
    // bare string (so `agent.target_spec=mddpg:3` works unquoted).
    let parsed: toml::Value = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|t| t.get("v").cloned())
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut cur = table;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                HarnessError::Config(format!("override '{key}': '{part}' is not a table"))
            })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
