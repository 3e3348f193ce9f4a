//! Experience replay preserving episode order.
//!
//! Transitions are stored consecutively in environment order in a ring
//! buffer, so a contiguous window starting at any stored transition is a
//! valid multi-step sample. Windows stop early at a terminal, at a
//! truncation, at an episode boundary, or at the newest entry (the write
//! cursor); they never wrap across the cursor and never mix episodes.

use std::io::{self, Read, Write};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay buffer is empty")]
    Unavailable,
    #[error("transition ordering violated: {0}")]
    Ordering(String),
    #[error("invalid argument: {0}")]
    BadArgument(String),
    #[error("buffer file error: {0}")]
    Io(#[from] io::Error),
    #[error("buffer file is malformed: {0}")]
    Malformed(String),
}

/// One environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
    pub episode_id: u64,
    pub step_index: u64,
}

/// A contiguous window of up to `n` transitions from one episode, plus
/// the observation to bootstrap from at the far end.
///
/// `bootstrap_valid` is false exactly when the window ended at a terminal
/// transition; a truncated or cursor-shortened window still bootstraps
/// from its cutoff observation.
#[derive(Debug, Clone)]
pub struct NStepSample {
    pub transitions: Vec<Transition>,
    pub effective_k: usize,
    pub bootstrap_obs: Vec<f64>,
    pub bootstrap_valid: bool,
}

impl NStepSample {
    pub fn first(&self) -> &Transition {
        &self.transitions[0]
    }

    /// Bootstrap observation and validity if the window were cut to
    /// `prefix` transitions (1 <= prefix <= effective_k).
    pub fn prefix_bootstrap(&self, prefix: usize) -> (&[f64], bool) {
        assert!(prefix >= 1 && prefix <= self.effective_k, "prefix out of range");
        let last = &self.transitions[prefix - 1];
        (&last.next_obs, !last.terminal)
    }
}

/// Ring-buffer experience storage; insertion order is environment order,
/// and the oldest entry is overwritten once full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    write_cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            capacity,
            storage: Vec::new(),
            write_cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Transition at logical index `i`, 0 = oldest stored.
    pub fn get(&self, i: usize) -> &Transition {
        assert!(i < self.storage.len(), "logical index out of range");
        if self.storage.len() < self.capacity {
            &self.storage[i]
        } else {
            &self.storage[(self.write_cursor + i) % self.capacity]
        }
    }

    fn newest(&self) -> Option<&Transition> {
        if self.storage.is_empty() {
            None
        } else {
            Some(self.get(self.storage.len() - 1))
        }
    }

    /// Appends a transition, enforcing environment order: episode ids
    /// never decrease, step indices are consecutive within an episode,
    /// and nothing follows a terminal or truncated step of the same
    /// episode.
    pub fn push(&mut self, t: Transition) -> Result<(), ReplayError> {
        if let Some(last) = self.newest() {
            if t.episode_id < last.episode_id {
                return Err(ReplayError::Ordering(format!(
                    "episode id went backwards: {} after {}",
                    t.episode_id, last.episode_id
                )));
            }
            if t.episode_id == last.episode_id {
                if last.terminal || last.truncated {
                    return Err(ReplayError::Ordering(format!(
                        "episode {} already ended",
                        t.episode_id
                    )));
                }
                if t.step_index != last.step_index + 1 {
                    return Err(ReplayError::Ordering(format!(
                        "step index {} does not follow {} in episode {}",
                        t.step_index, last.step_index, t.episode_id
                    )));
                }
            }
        }
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.write_cursor] = t;
        }
        self.write_cursor = (self.write_cursor + 1) % self.capacity;
        Ok(())
    }

    /// The window starting at logical index `start`, at most `n` long.
    pub fn window_at(&self, start: usize, n: usize) -> NStepSample {
        assert!(n >= 1, "window length must be at least 1");
        let mut transitions = vec![self.get(start).clone()];
        while transitions.len() < n {
            let last = transitions.last().unwrap();
            if last.terminal || last.truncated {
                break;
            }
            let next_idx = start + transitions.len();
            if next_idx >= self.storage.len() {
                break; // newest entry: the write-cursor boundary
            }
            let next = self.get(next_idx);
            if next.episode_id != last.episode_id || next.step_index != last.step_index + 1 {
                break;
            }
            transitions.push(next.clone());
        }
        let last = transitions.last().unwrap();
        let bootstrap_valid = !last.terminal;
        let bootstrap_obs = last.next_obs.clone();
        NStepSample {
            effective_k: transitions.len(),
            bootstrap_obs,
            bootstrap_valid,
            transitions,
        }
    }

    /// Draws `batch_size` windows whose start indices are uniform over
    /// all stored transitions.
    pub fn sample_n<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<NStepSample>, ReplayError> {
        if self.storage.is_empty() {
            return Err(ReplayError::Unavailable);
        }
        if n == 0 {
            return Err(ReplayError::BadArgument("window length 0".into()));
        }
        Ok((0..batch_size)
            .map(|_| self.window_at(rng.gen_range(0..self.storage.len()), n))
            .collect())
    }

    /// Raw dump in logical order; little-endian binary, same numeric
    /// format as the network snapshots.
    pub fn dump<W: Write>(&self, w: &mut W) -> Result<(), ReplayError> {
        w.write_all(b"NSRB")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.capacity as u64).to_le_bytes())?;
        w.write_all(&(self.storage.len() as u64).to_le_bytes())?;
        let (od, ad) = match self.newest() {
            Some(t) => (t.obs.len(), t.action.len()),
            None => (0, 0),
        };
        w.write_all(&(od as u32).to_le_bytes())?;
        w.write_all(&(ad as u32).to_le_bytes())?;
        for i in 0..self.storage.len() {
            let t = self.get(i);
            w.write_all(&t.episode_id.to_le_bytes())?;
            w.write_all(&t.step_index.to_le_bytes())?;
            w.write_all(&[t.terminal as u8 | ((t.truncated as u8) << 1)])?;
            w.write_all(&t.reward.to_le_bytes())?;
            for v in t.obs.iter().chain(&t.action).chain(&t.next_obs) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Self, ReplayError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"NSRB" {
            return Err(ReplayError::Malformed("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(ReplayError::Malformed("unsupported version".into()));
        }
        r.read_exact(&mut b8)?;
        let capacity = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b4)?;
        let od = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let ad = u32::from_le_bytes(b4) as usize;
        if capacity == 0 || len > capacity {
            return Err(ReplayError::Malformed("inconsistent sizes".into()));
        }
        let read_f64 = |r: &mut R| -> Result<f64, ReplayError> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let mut buf = ReplayBuffer::new(capacity);
        for _ in 0..len {
            r.read_exact(&mut b8)?;
            let episode_id = u64::from_le_bytes(b8);
            r.read_exact(&mut b8)?;
            let step_index = u64::from_le_bytes(b8);
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            let reward = read_f64(r)?;
            let mut obs = Vec::with_capacity(od);
            for _ in 0..od {
                obs.push(read_f64(r)?);
            }
            let mut action = Vec::with_capacity(ad);
            for _ in 0..ad {
                action.push(read_f64(r)?);
            }
            let mut next_obs = Vec::with_capacity(od);
            for _ in 0..od {
                next_obs.push(read_f64(r)?);
            }
            buf.push(Transition {
                obs,
                action,
                reward,
                next_obs,
                terminal: flag[0] & 1 != 0,
                truncated: flag[0] & 2 != 0,
                episode_id,
                step_index,
            })
            .map_err(|e| ReplayError::Malformed(e.to_string()))?;
        }
        Ok(buf)
    }
}

/// Discounted reward sum of a window plus the discount that applies to
/// its bootstrap term: `sum_{i < k} gamma^i r_i` and `gamma^k` (zero when
/// the window ended at a terminal).
pub fn n_step_return(sample: &NStepSample, gamma: f64) -> (f64, f64) {
    debug_assert!((0.0..=1.0).contains(&gamma));
    let mut ret = 0.0;
    let mut disc = 1.0;
    for t in &sample.transitions {
        ret += disc * t.reward;
        disc *= gamma;
    }
    let discount_to_bootstrap = if sample.bootstrap_valid { disc } else { 0.0 };
    (ret, discount_to_bootstrap)
}
