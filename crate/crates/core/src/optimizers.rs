//! Iteration kernels and the single-trajectory driver.
//!
//! Each kernel exists as a pure step (`*_step`, returns a new state) backed by
//! an in-place update that the driver uses in its inner loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lyapunov::{scalars_from_parts, LyapunovMode, LyapunovScalars};
use crate::oracles::{GradientOracle, OracleSample, SeededOracle};
use crate::problems::norm_sq;
use crate::schedules::StepSchedule;

/// `‖x‖` beyond which a trajectory counts as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("iterate diverged at k = {k}")]
    Divergence { k: u64 },
    #[error("invalid {name} = {value} at k = {k}: {reason}")]
    Parameter {
        k: u64,
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("invalid run configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterState {
    pub k: u64,
    pub x: Vec<f64>,
    /// Zero for the methods without momentum.
    pub v: Vec<f64>,
    pub x_prev: Vec<f64>,
}

impl IterState {
    pub fn new(x0: &[f64]) -> Self {
        Self {
            k: 0,
            x: x0.to_vec(),
            v: vec![0.0; x0.len()],
            x_prev: x0.to_vec(),
        }
    }

    fn finish(&mut self) -> Result<(), StepError> {
        self.k += 1;
        if self.x.iter().all(|c| c.is_finite()) && norm_sq(&self.x).sqrt() <= DIVERGENCE_NORM {
            Ok(())
        } else {
            Err(StepError::Divergence { k: self.k })
        }
    }
}

fn positive_step(k: u64, alpha: f64) -> Result<(), StepError> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(StepError::Parameter {
            k,
            name: "alpha",
            value: alpha,
            reason: "must be finite and positive",
        })
    }
}

/// Checks `μ > 0` and `μ·α ≤ 1`, returning the retention factor `1 − μα`.
fn damping_factor(k: u64, alpha: f64, mu: f64) -> Result<f64, StepError> {
    positive_step(k, alpha)?;
    if !(mu.is_finite() && mu > 0.0) {
        return Err(StepError::Parameter {
            k,
            name: "mu",
            value: mu,
            reason: "damped methods need a finite positive damping",
        });
    }
    if mu * alpha > 1.0 {
        return Err(StepError::Parameter {
            k,
            name: "mu*alpha",
            value: mu * alpha,
            reason: "must not exceed 1",
        });
    }
    Ok(1.0 - mu * alpha)
}

fn momentum_coefficient(k: u64, beta: f64) -> Result<(), StepError> {
    if (0.0..1.0).contains(&beta) {
        Ok(())
    } else {
        Err(StepError::Parameter {
            k,
            name: "beta",
            value: beta,
            reason: "must lie in [0, 1)",
        })
    }
}

/// `v ← keep·v − α·F`, then `x ← x + α·v`.
fn damped_update(s: &mut IterState, f: &[f64], alpha: f64, keep: f64) {
    s.x_prev.copy_from_slice(&s.x);
    for ((x, v), fj) in s.x.iter_mut().zip(&mut s.v).zip(f) {
        *v = keep * *v - alpha * fj;
        *x += alpha * *v;
    }
}

/// Lookahead point `x + β(x − x_prev)`.
fn lookahead(s: &IterState, beta: f64, y: &mut [f64]) {
    for ((yj, x), xp) in y.iter_mut().zip(&s.x).zip(&s.x_prev) {
        *yj = x + beta * (x - xp);
    }
}

pub fn vsgd_update(s: &mut IterState, g: &OracleSample, alpha: f64) -> Result<(), StepError> {
    positive_step(s.k + 1, alpha)?;
    s.x_prev.copy_from_slice(&s.x);
    for (x, f) in s.x.iter_mut().zip(&g.stoch_grad) {
        *x -= alpha * f;
    }
    s.finish()
}

/// `x_k = x_{k−1} − α·F(x_{k−1}, ξ_k)`.
pub fn vsgd_step(s: &IterState, g: &OracleSample, alpha: f64) -> Result<IterState, StepError> {
    let mut out = s.clone();
    vsgd_update(&mut out, g, alpha)?;
    Ok(out)
}

pub fn msgd_damped_update(s: &mut IterState, g: &OracleSample, alpha: f64, mu: f64) -> Result<(), StepError> {
    let keep = damping_factor(s.k + 1, alpha, mu)?;
    damped_update(s, &g.stoch_grad, alpha, keep);
    s.finish()
}

/// `v_k = v_{k−1} − μα·v_{k−1} − α·F(x_{k−1}, ξ_k)`, then
/// `x_k = x_{k−1} + α·v_k` with the new velocity.
pub fn msgd_damped_step(s: &IterState, g: &OracleSample, alpha: f64, mu: f64) -> Result<IterState, StepError> {
    let mut out = s.clone();
    msgd_damped_update(&mut out, g, alpha, mu)?;
    Ok(out)
}

pub fn msgd_classical_update(s: &mut IterState, g: &OracleSample, alpha: f64, beta: f64) -> Result<(), StepError> {
    positive_step(s.k + 1, alpha)?;
    momentum_coefficient(s.k + 1, beta)?;
    s.x_prev.copy_from_slice(&s.x);
    for j in 0..s.x.len() {
        s.v[j] = beta * s.v[j] - alpha * g.stoch_grad[j];
        s.x[j] += s.v[j];
    }
    s.finish()
}

/// Heavy ball: `v_k = β·v_{k−1} − α·F(x_{k−1}, ξ_k)`, `x_k = x_{k−1} + v_k`.
///
/// With constant `α` and `β = 1 − μα`, running this with step `α²` gives
/// `v_classical = α·v_damped` and the same `x` as [`msgd_damped_step`].
pub fn msgd_classical_step(s: &IterState, g: &OracleSample, alpha: f64, beta: f64) -> Result<IterState, StepError> {
    let mut out = s.clone();
    msgd_classical_update(&mut out, g, alpha, beta)?;
    Ok(out)
}

/// Momentum weight `(1 − μ_kα_k)·α_k/α_{k−1}` of the accelerated scheme.
pub fn nasgd_beta(alpha_k: f64, alpha_prev: f64, mu: f64) -> f64 {
    (1.0 - mu * alpha_k) * alpha_k / alpha_prev
}

pub fn nasgd_update(
    s: &mut IterState,
    oracle: &mut SeededOracle<'_>,
    sample: &mut OracleSample,
    y: &mut [f64],
    alpha_k: f64,
    alpha_prev: f64,
    mu: f64,
) -> Result<(), StepError> {
    let keep = damping_factor(s.k + 1, alpha_k, mu)?;
    positive_step(s.k + 1, alpha_prev)?;
    let beta = if s.k == 0 { 0.0 } else { nasgd_beta(alpha_k, alpha_prev, mu) };
    lookahead(s, beta, y);
    oracle.sample_at(s.k + 1, y, sample);
    damped_update(s, &sample.stoch_grad, alpha_k, keep);
    s.finish()
}

/// Accelerated damped step: gradient sampled at the lookahead
/// `y = x_{k−1} + β_k(x_{k−1} − x_{k−2})`, then
/// `v_k = (1 − μα_k)v_{k−1} − α_k·F(y, ξ_k)` and `x_k = x_{k−1} + α_k·v_k`.
/// The first step uses `β₁ = 0`.
pub fn nasgd_step(
    s: &IterState,
    oracle: &mut SeededOracle<'_>,
    alpha_k: f64,
    alpha_prev: f64,
    mu: f64,
) -> Result<IterState, StepError> {
    let mut out = s.clone();
    let mut sample = OracleSample::zeros(s.x.len());
    let mut y = vec![0.0; s.x.len()];
    nasgd_update(&mut out, oracle, &mut sample, &mut y, alpha_k, alpha_prev, mu)?;
    Ok(out)
}

pub fn nesterov_classical_update(
    s: &mut IterState,
    oracle: &mut SeededOracle<'_>,
    sample: &mut OracleSample,
    y: &mut [f64],
    alpha: f64,
    beta: f64,
) -> Result<(), StepError> {
    positive_step(s.k + 1, alpha)?;
    momentum_coefficient(s.k + 1, beta)?;
    lookahead(s, beta, y);
    oracle.sample_at(s.k + 1, y, sample);
    s.x_prev.copy_from_slice(&s.x);
    for (((x, v), yj), fj) in s.x.iter_mut().zip(&mut s.v).zip(y.iter()).zip(&sample.stoch_grad) {
        let next = yj - alpha * fj;
        *v = next - *x;
        *x = next;
    }
    s.finish()
}

/// `y = x_{k−1} + β(x_{k−1} − x_{k−2})`, `x_k = y − α·F(y, ξ_k)`.
pub fn nesterov_classical_step(
    s: &IterState,
    oracle: &mut SeededOracle<'_>,
    alpha: f64,
    beta: f64,
) -> Result<IterState, StepError> {
    let mut out = s.clone();
    let mut sample = OracleSample::zeros(s.x.len());
    let mut y = vec![0.0; s.x.len()];
    nesterov_classical_update(&mut out, oracle, &mut sample, &mut y, alpha, beta)?;
    Ok(out)
}

/// Step-size weighted mean of past iterates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedState {
    pub xbar: Vec<f64>,
    pub weight_sum: f64,
}

impl AveragedState {
    /// Empty average; the first update sets `xbar` to its iterate.
    pub fn new(dim: usize) -> Self {
        Self {
            xbar: vec![0.0; dim],
            weight_sum: 0.0,
        }
    }

    pub fn update(&mut self, x_prev_iterate: &[f64], alpha: f64) {
        let w = alpha / (self.weight_sum + alpha);
        for (m, x) in self.xbar.iter_mut().zip(x_prev_iterate) {
            *m += w * (x - *m);
        }
        self.weight_sum += alpha;
    }
}

/// `x̄_n = x̄_{n−1} + α_n/(W + α_n)·(x_{n−1} − x̄_{n−1})`, `W ← W + α_n`.
pub fn averaged_update(a: &AveragedState, x_prev_iterate: &[f64], alpha: f64) -> AveragedState {
    let mut out = a.clone();
    out.update(x_prev_iterate, alpha);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Method {
    Vsgd,
    /// Damped momentum, velocity updated first.
    Msgd,
    MsgdClassical { beta: f64 },
    Nasgd,
    NesterovClassical { beta: f64 },
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Vsgd => "vsgd",
            Method::Msgd => "msgd",
            Method::MsgdClassical { .. } => "msgd-classical",
            Method::Nasgd => "nasgd",
            Method::NesterovClassical { .. } => "nesterov-classical",
        }
    }

    /// Whether the kernel reads `μ_k` from the schedule.
    pub fn is_damped(&self) -> bool {
        matches!(self, Method::Msgd | Method::Nasgd)
    }
}

/// Which iterations get recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckpointPlan {
    /// Powers of two plus the last `tail` iterations.
    Geometric { tail: u64 },
    /// `per_decade` log-spaced points per decade, including every power of 10.
    Log { per_decade: u32 },
    /// The log grid plus each anchor's predecessor, for one-step differences.
    Paired { per_decade: u32 },
    /// Every `stride`-th iteration.
    Every { stride: u64 },
    /// Every `stride`-th iteration and its predecessor.
    PairedEvery { stride: u64 },
}

impl Default for CheckpointPlan {
    fn default() -> Self {
        CheckpointPlan::Geometric { tail: 8 }
    }
}

impl CheckpointPlan {
    pub fn validate(&self) -> Result<(), RunError> {
        let ok = match *self {
            CheckpointPlan::Geometric { .. } => true,
            CheckpointPlan::Log { per_decade } | CheckpointPlan::Paired { per_decade } => per_decade >= 1,
            CheckpointPlan::Every { stride } => stride >= 1,
            CheckpointPlan::PairedEvery { stride } => stride >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(RunError::Config("checkpoint density must be at least 1".into()))
        }
    }

    /// Sorted, distinct iterations in `1..=horizon`; always ends at `horizon`.
    pub fn indices(&self, horizon: u64) -> Vec<u64> {
        let mut ks = Vec::new();
        match *self {
            CheckpointPlan::Geometric { tail } => {
                let mut p = 1u64;
                while p <= horizon {
                    ks.push(p);
                    p = match p.checked_mul(2) {
                        Some(n) => n,
                        None => break,
                    };
                }
                ks.extend(horizon.saturating_sub(tail.saturating_sub(1)).max(1)..=horizon);
            }
            CheckpointPlan::Log { per_decade } | CheckpointPlan::Paired { per_decade } => {
                let anchors = log_grid(per_decade, horizon);
                if matches!(self, CheckpointPlan::Paired { .. }) {
                    ks.extend(anchors.iter().filter(|&&k| k >= 2).map(|k| k - 1));
                }
                ks.extend(anchors);
            }
            CheckpointPlan::Every { stride } => {
                ks.extend((1..=horizon / stride).map(|i| i * stride));
            }
            CheckpointPlan::PairedEvery { stride } => {
                for i in 1..=horizon / stride {
                    ks.extend([i * stride - 1, i * stride]);
                }
                ks.push(horizon - 1);
            }
        }
        ks.push(horizon);
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    /// Anchors whose predecessor is also recorded.
    pub fn anchors(&self, horizon: u64) -> Vec<u64> {
        match *self {
            CheckpointPlan::Paired { per_decade } => {
                let mut a = log_grid(per_decade, horizon);
                a.push(horizon);
                a.retain(|&k| k >= 2);
                a.sort_unstable();
                a.dedup();
                a
            }
            CheckpointPlan::PairedEvery { stride } => {
                let mut a: Vec<u64> = (1..=horizon / stride).map(|i| i * stride).collect();
                if a.last() != Some(&horizon) && horizon >= 2 {
                    a.push(horizon);
                }
                a
            }
            _ => {
                let ks = self.indices(horizon);
                ks.windows(2).filter(|w| w[1] == w[0] + 1).map(|w| w[1]).collect()
            }
        }
    }
}

fn log_grid(per_decade: u32, horizon: u64) -> Vec<u64> {
    let mut out = Vec::new();
    for j in 0.. {
        let k = 10f64.powf(j as f64 / per_decade as f64).round() as u64;
        if k > horizon {
            break;
        }
        out.push(k);
    }
    out.dedup();
    out
}

/// One recorded iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub k: u64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub alpha: f64,
    pub mu: f64,
    pub f: f64,
    pub grad_sq: f64,
    pub lyapunov: Option<LyapunovScalars>,
    /// `f(x̄_k)` when averaging is on.
    pub avg_f: Option<f64>,
    /// `Σ_{j≤k} α_j f(x_{j−1}) / Σ_{j≤k} α_j` when averaging is on.
    pub weighted_f: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub method: Method,
    pub plan: CheckpointPlan,
    pub states: Vec<Checkpoint>,
}

impl Trajectory {
    pub fn last(&self) -> &Checkpoint {
        self.states.last().expect("trajectories hold at least one checkpoint")
    }
}

/// Optional recording for [`run`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub plan: CheckpointPlan,
    pub lyapunov: Option<LyapunovMode>,
    pub averaged: bool,
}

/// Runs `iters` iterations of `method` from `x0` and records checkpoints.
/// The result depends only on the arguments.
pub fn run(
    method: Method,
    oracle: &GradientOracle,
    schedule: &dyn StepSchedule,
    x0: &[f64],
    iters: u64,
    seed: u64,
    options: &RunOptions,
) -> Result<Trajectory, RunError> {
    run_seeded(method, &mut oracle.seeded(seed), schedule, x0, iters, options)
}

pub fn run_seeded(
    method: Method,
    oracle: &mut SeededOracle<'_>,
    schedule: &dyn StepSchedule,
    x0: &[f64],
    iters: u64,
    options: &RunOptions,
) -> Result<Trajectory, RunError> {
    let problem = oracle.oracle().problem().clone();
    let d = problem.dim();
    if iters == 0 {
        return Err(RunError::Config("iters must be at least 1".into()));
    }
    if x0.len() != d {
        return Err(RunError::Config(format!("x0 has dimension {}, problem has {d}", x0.len())));
    }
    if let Some(len) = schedule.terms() {
        if len < iters {
            return Err(RunError::Config(format!("schedule covers {len} steps, run needs {iters}")));
        }
    }
    if method.is_damped() && schedule.mu(1).partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(RunError::Config(format!(
            "method {} requires coeff_mu > 0",
            method.label()
        )));
    }
    let f_star = problem.f_star();
    if options.lyapunov.is_some() && f_star.is_none() {
        return Err(RunError::Config(format!(
            "lyapunov mode needs a known minimum; {} has none",
            problem.name()
        )));
    }
    options.plan.validate()?;

    let marks = options.plan.indices(iters);
    let mut next_mark = marks.iter().copied().peekable();
    let mut states = Vec::with_capacity(marks.len());
    let mut s = IterState::new(x0);
    let mut sample = OracleSample::zeros(d);
    let mut y = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut avg = options.averaged.then(|| AveragedState::new(d));
    let mut weighted_f = 0.0;
    let mut alpha_prev = schedule.alpha(1);

    for k in 1..=iters {
        let alpha = schedule.alpha(k);
        let mu = schedule.mu(k);
        if let Some(a) = avg.as_mut() {
            weighted_f += alpha * problem.value(&s.x);
            a.update(&s.x, alpha);
        }
        match method {
            Method::Vsgd => {
                oracle.sample_at(k, &s.x, &mut sample);
                vsgd_update(&mut s, &sample, alpha)?;
            }
            Method::Msgd => {
                oracle.sample_at(k, &s.x, &mut sample);
                msgd_damped_update(&mut s, &sample, alpha, mu)?;
            }
            Method::MsgdClassical { beta } => {
                oracle.sample_at(k, &s.x, &mut sample);
                msgd_classical_update(&mut s, &sample, alpha, beta)?;
            }
            Method::Nasgd => {
                nasgd_update(&mut s, oracle, &mut sample, &mut y, alpha, alpha_prev, mu)?;
            }
            Method::NesterovClassical { beta } => {
                nesterov_classical_update(&mut s, oracle, &mut sample, &mut y, alpha, beta)?;
            }
        }
        alpha_prev = alpha;
        if next_mark.peek() == Some(&k) {
            next_mark.next();
            problem.gradient_into(&s.x, &mut grad);
            let f = problem.value(&s.x);
            let lyapunov = options
                .lyapunov
                .map(|mode| scalars_from_parts(f - f_star.unwrap_or(0.0), &grad, &s.v, mode.weight(mu)));
            let (avg_f, wf) = match &avg {
                Some(a) => (Some(problem.value(&a.xbar)), Some(weighted_f / a.weight_sum)),
                None => (None, None),
            };
            states.push(Checkpoint {
                k,
                x: s.x.clone(),
                v: s.v.clone(),
                alpha,
                mu,
                f,
                grad_sq: norm_sq(&grad),
                lyapunov,
                avg_f,
                weighted_f: wf,
            });
        }
    }
    Ok(Trajectory {
        method,
        plan: options.plan,
        states,
    })
}
