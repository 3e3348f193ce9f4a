//! Backup-target arithmetic shared by the agents and the diagnostics.
//!
//! Everything here is parameterized over the bootstrap value function
//! `q(obs)`, so the same code path serves the real target networks, the
//! analytic chain critic used in tests, and the gap recorder.

use crate::replay::NStepSample;

/// Truncated multi-step target over the `prefix`-step head of a window:
/// `sum_{j < k} gamma^j r_j + gamma^k q(s_k)`, where
/// `k = min(prefix, effective_k)` and the bootstrap term is dropped when
/// step `k` ended the episode. Prefixes that reach past a terminal all
/// collapse to the terminal-truncated return.
pub fn prefix_target(
    sample: &NStepSample,
    prefix: usize,
    gamma: f64,
    q: &mut dyn FnMut(&[f64]) -> f64,
) -> f64 {
    assert!(prefix >= 1, "prefix must be at least 1");
    let k = prefix.min(sample.effective_k);
    let mut ret = 0.0;
    let mut disc = 1.0;
    for t in &sample.transitions[..k] {
        ret += disc * t.reward;
        disc *= gamma;
    }
    let (obs, valid) = sample.prefix_bootstrap(k);
    if valid {
        ret + disc * q(obs)
    } else {
        ret
    }
}

/// Target over the whole stored window (its own effective horizon).
pub fn window_target(sample: &NStepSample, gamma: f64, q: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    prefix_target(sample, sample.effective_k, gamma, q)
}

/// The family `Q_hat^(1) .. Q_hat^(n)` over one shared window.
pub fn prefix_target_family(
    sample: &NStepSample,
    n: usize,
    gamma: f64,
    q: &mut dyn FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    (1..=n).map(|i| prefix_target(sample, i, gamma, q)).collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn min(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}
