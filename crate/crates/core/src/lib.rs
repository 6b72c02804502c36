//! Stochastic gradient methods with momentum, step-size schedules, noisy
//! gradient oracles, Lyapunov diagnostics and a seeded Monte Carlo harness.

pub mod cli;
pub mod config;
pub mod export;
pub mod harness;
pub mod lyapunov;
pub mod optimizers;
pub mod oracles;
pub mod problems;
pub mod rng;
pub mod schedules;
