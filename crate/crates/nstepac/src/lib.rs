//! Continuous-control reinforcement-learning lab.
//!
//! Implements DDPG, multi-step DDPG (one fixed backup length), mixed
//! multi-step DDPG (average / minimum / average-excluding-1-step mixtures
//! of backup lengths) and a twin-critic TD3 baseline on top of a
//! self-contained `f64` MLP kernel, plus the diagnostics used to measure
//! overestimation: target-gap recording, predicted-Q vs Monte-Carlo bias,
//! online-vs-offline multi-step expansion, and propagation-cost counters.

pub mod agents;
pub mod diagnostics;
pub mod envs;
pub mod harness;
pub mod numkit;
pub mod replay;
pub mod selftest;
