//! Agent checkpoints: a magic/version header, the environment id, the
//! agent config as TOML, progress counters, then every network as a
//! concatenated parameter snapshot tagged by role.

use std::io::{self, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::envs::make_env;
use crate::numkit::{read_snapshot, write_snapshot};

use super::{Agent, AgentConfig, AgentError};

const MAGIC: &[u8; 4] = b"NSAC";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not an agent checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint config is malformed: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> io::Result<String> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let len = u32::from_le_bytes(b4) as usize;
    if len > 1 << 20 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "string too long"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

pub fn save_agent_checkpoint<W: Write>(
    agent: &Agent,
    env_id: &str,
    w: &mut W,
) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_str(w, env_id)?;
    let config = toml::to_string(agent.config())
        .map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    write_str(w, &config)?;
    w.write_all(&agent.total_env_steps().to_le_bytes())?;
    w.write_all(&agent.critic_updates().to_le_bytes())?;
    let nets = agent.networks();
    w.write_all(&(nets.len() as u32).to_le_bytes())?;
    for (name, params) in nets {
        write_str(w, name)?;
        write_snapshot(params, w)?;
    }
    Ok(())
}

/// Rebuilds an agent (fresh optimizer moments) from a checkpoint.
/// Returns the environment id it was trained on alongside the agent.
pub fn load_agent_checkpoint<R: Read>(r: &mut R) -> Result<(String, Agent), CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let env_id = read_str(r)?;
    let config: AgentConfig = toml::from_str(&read_str(r)?)
        .map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let total_env_steps = u64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let critic_updates = u64::from_le_bytes(b8);

    let env = make_env(&env_id)?;
    // The random init is immediately overwritten by the stored snapshots.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut agent = Agent::new(config, env.spec(), &mut rng)?;

    r.read_exact(&mut b4)?;
    let n_nets = u32::from_le_bytes(b4) as usize;
    let mut nets = Vec::with_capacity(n_nets);
    for _ in 0..n_nets {
        let name = read_str(r)?;
        let params = read_snapshot(r)?;
        nets.push((name, params));
    }
    agent.restore_networks(nets)?;
    agent.total_env_steps = total_env_steps;
    agent.critic_updates = critic_updates;
    Ok((env_id, agent))
}
