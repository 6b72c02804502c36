//! Monte Carlo experiments over seeded replicas.
//!
//! Replica `i` draws from the stream keyed by `replica_seed(master_seed, i)`.
//! Replicas may finish in any order; results are gathered by index and
//! reduced in a fixed order, so the output depends only on the config.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lyapunov::{
    descent_fit, select_lambda, select_zeta, DescentOutcome, DescentPoint, LyapunovMode,
    DEFAULT_BURN_IN_FRACTION,
};
use crate::optimizers::{run_seeded, CheckpointPlan, Method, RunError, RunOptions, StepError, Trajectory};
use crate::oracles::{
    gaussian_oracle, minibatch_oracle_with, relative_noise_oracle, GradientOracle, SamplingMode,
};
use crate::problems::{least_squares_sum, pseudo_huber, quadratic, smooth_rastrigin, FiniteSumProblem, Problem};
use crate::rng::{replica_seed, NoiseStream};
use crate::schedules::{PowerSchedule, StepSchedule};

/// Env var capping the number of worker threads.
pub const THREADS_ENV: &str = "SGDLAB_THREADS";

/// Largest tolerated share of diverged replicas.
pub const MAX_DIVERGED_FRACTION: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{diverged} of {replicas} replicas diverged (first at k = {first_k}), above the 1% tolerance")]
    Divergence { diverged: usize, replicas: usize, first_k: u64 },
    #[error("probe needs {0}")]
    Probe(String),
}

impl From<RunError> for HarnessError {
    fn from(e: RunError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Quadratic {
        spectrum: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x_star: Option<Vec<f64>>,
    },
    PseudoHuber {
        dim: usize,
    },
    SmoothRastrigin {
        dim: usize,
        amplitude: f64,
    },
    LeastSquares {
        design: Vec<Vec<f64>>,
        targets: Vec<f64>,
    },
}

/// A problem together with its finite-sum structure when it has one.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub problem: Problem,
    pub finite_sum: Option<FiniteSumProblem>,
}

impl ProblemSpec {
    pub fn build(&self) -> Result<BuiltProblem, HarnessError> {
        let err = |e: crate::problems::ProblemError| HarnessError::Config(e.to_string());
        let problem = match self {
            ProblemSpec::Quadratic { spectrum, x_star } => {
                let origin = vec![0.0; spectrum.len()];
                quadratic(spectrum, x_star.as_deref().unwrap_or(&origin)).map_err(err)?
            }
            ProblemSpec::PseudoHuber { dim } => pseudo_huber(*dim).map_err(err)?,
            ProblemSpec::SmoothRastrigin { dim, amplitude } => smooth_rastrigin(*dim, *amplitude).map_err(err)?,
            ProblemSpec::LeastSquares { design, targets } => {
                let fsp = least_squares_sum(design, targets).map_err(err)?;
                return Ok(BuiltProblem {
                    problem: fsp.aggregate().clone(),
                    finite_sum: Some(fsp),
                });
            }
        };
        Ok(BuiltProblem {
            problem,
            finite_sum: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    Gaussian {
        sigma: f64,
    },
    Relative {
        eta: f64,
    },
    Minibatch {
        batch: usize,
        #[serde(default)]
        without_replacement: bool,
    },
}

impl OracleSpec {
    pub fn build(&self, built: &BuiltProblem) -> Result<GradientOracle, HarnessError> {
        let err = |e: crate::oracles::OracleError| HarnessError::Config(e.to_string());
        match self {
            OracleSpec::Gaussian { sigma } => gaussian_oracle(&built.problem, *sigma).map_err(err),
            OracleSpec::Relative { eta } => relative_noise_oracle(&built.problem, *eta).map_err(err),
            OracleSpec::Minibatch {
                batch,
                without_replacement,
            } => {
                let fsp = built
                    .finite_sum
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("minibatch oracle needs a least_squares problem".into()))?;
                let mode = if *without_replacement {
                    SamplingMode::WithoutReplacement
                } else {
                    SamplingMode::WithReplacement
                };
                minibatch_oracle_with(fsp, *batch, mode).map_err(err)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub problem: ProblemSpec,
    pub oracle: OracleSpec,
    pub schedule: PowerSchedule,
    pub x0: Vec<f64>,
    pub horizon: u64,
    pub replicas: usize,
    pub master_seed: u64,
    pub checkpoints: CheckpointPlan,
    pub lyapunov: bool,
    pub averaged: bool,
    /// Standard deviation of a per-replica Gaussian perturbation of `x0`.
    #[serde(default)]
    pub x0_jitter: f64,
}

/// Everything an experiment needs, built and checked.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub built: BuiltProblem,
    pub oracle: GradientOracle,
    pub lyapunov_mode: Option<LyapunovMode>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<Prepared, HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.replicas < 2 {
            return bad(format!("replicas must be at least 2, got {}", self.replicas));
        }
        if self.horizon < 10 {
            return bad(format!("horizon must be at least 10, got {}", self.horizon));
        }
        if !(self.x0_jitter.is_finite() && self.x0_jitter >= 0.0) {
            return bad(format!("x0_jitter must be finite and non-negative, got {}", self.x0_jitter));
        }
        let s = &self.schedule;
        PowerSchedule::new(s.coeff_alpha, s.exp_alpha, s.coeff_mu, s.exp_mu)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.method.is_damped() && !s.has_damping() {
            return bad(format!("method {} requires mu_m > 0 (coeff_mu)", self.method.label()));
        }
        if self.method.is_damped() && s.max_mu_alpha() > 1.0 {
            return bad(format!(
                "method {} requires mu_m * alpha_c <= 1, got {}",
                self.method.label(),
                s.max_mu_alpha()
            ));
        }
        self.checkpoints.validate()?;
        let built = self.problem.build()?;
        if self.x0.len() != built.problem.dim() {
            return bad(format!(
                "x0 has dimension {}, problem has {}",
                self.x0.len(),
                built.problem.dim()
            ));
        }
        if self.x0.iter().any(|c| !c.is_finite()) {
            return bad("x0 must be finite".into());
        }
        let oracle = self.oracle.build(&built)?;
        let lyapunov_mode = if self.lyapunov {
            if built.problem.f_star().is_none() {
                return bad(format!(
                    "lyapunov mode needs a known minimum; {} has none",
                    built.problem.name()
                ));
            }
            Some(lyapunov_mode_for(&built.problem, s)?)
        } else {
            None
        };
        Ok(Prepared {
            built,
            oracle,
            lyapunov_mode,
        })
    }
}

/// Constant damping gets `ζ`, vanishing damping gets `λ`, no damping gets 0.
pub fn lyapunov_mode_for(p: &Problem, s: &PowerSchedule) -> Result<LyapunovMode, HarnessError> {
    let l = p.smoothness_l();
    let err = |e: crate::lyapunov::LyapunovError| HarnessError::Config(e.to_string());
    if !s.has_damping() {
        Ok(LyapunovMode::Constant { zeta: 0.0 })
    } else if s.exp_mu == 0.0 {
        Ok(LyapunovMode::Constant {
            zeta: select_zeta(l, s.mu_lower(), s.mu_upper()).map_err(err)?,
        })
    } else {
        let l_mu = s.class().l_mu.unwrap_or(0.0);
        Ok(LyapunovMode::Vanishing {
            lambda: select_lambda(l, l_mu).map_err(err)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub checkpoint: u64,
    pub mean_grad_sq: f64,
    pub se_grad_sq: f64,
    pub mean_gap: f64,
    pub se_gap: f64,
    pub mean_avg_gap: Option<f64>,
    pub se_avg_gap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRow {
    pub checkpoint: u64,
    pub mean_h: f64,
    pub se_h: f64,
    pub mean_h_bar: f64,
    pub mean_z_tilde: f64,
    pub mean_h_tilde: f64,
    pub se_h_tilde: f64,
}

/// Mean one-step changes at an anchor `k` whose predecessor is recorded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub k: u64,
    pub alpha: f64,
    pub mu: f64,
    /// `Ê f(x_k) − Ê f(x_{k−1})` and its standard error.
    pub delta_f: f64,
    pub delta_f_se: f64,
    pub f_prev: f64,
    pub f: f64,
    /// `Ê‖∇f(x_{k−1})‖²`.
    pub grad_sq_prev: f64,
    pub delta_h_tilde: Option<f64>,
    pub delta_h_tilde_se: Option<f64>,
    pub h_bar_prev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub rows: Vec<EstimateRow>,
    pub lyapunov: Option<Vec<LyapunovRow>>,
    pub pairs: Vec<PairedRow>,
    pub lyapunov_mode: Option<LyapunovMode>,
    pub replicas_used: usize,
    pub diverged: usize,
    /// Whether gaps are measured from the true minimum value.
    pub gap_from_minimum: bool,
}

impl MonteCarloEstimate {
    pub fn row_at(&self, k: u64) -> Option<&EstimateRow> {
        self.rows.iter().find(|r| r.checkpoint == k)
    }

    pub fn final_row(&self) -> &EstimateRow {
        self.rows.last().expect("estimates hold at least one row")
    }

    pub fn descent_points(&self) -> Option<Vec<DescentPoint>> {
        self.lyapunov.as_ref()?;
        Some(
            self.pairs
                .iter()
                .map(|p| DescentPoint {
                    k: p.k,
                    alpha: p.alpha,
                    mu: p.mu,
                    delta: p.delta_h_tilde.unwrap_or(0.0),
                    delta_se: p.delta_h_tilde_se.unwrap_or(0.0),
                    h_bar_prev: p.h_bar_prev.unwrap_or(0.0),
                })
                .collect(),
        )
    }

    /// Burn-in iteration covering the first 5% of checkpoints.
    pub fn default_burn_in(&self) -> u64 {
        let n = self.rows.len();
        let skip = (n as f64 * DEFAULT_BURN_IN_FRACTION).ceil() as usize;
        if skip == 0 {
            0
        } else {
            self.rows[skip.min(n) - 1].checkpoint
        }
    }

    /// Descent fit with the default burn-in, when Lyapunov mode was on.
    pub fn descent_fit(&self) -> Option<DescentOutcome> {
        let points = self.descent_points()?;
        let vanishing = self.lyapunov_mode.is_some_and(|m| m.is_vanishing());
        Some(descent_fit(&points, vanishing, self.default_burn_in()))
    }
}

/// Record of the accelerated method's convergence hypothesis for a config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelerationAnnotation {
    pub beta_hat: f64,
    pub mu_bar: f64,
    pub l_smooth: f64,
    pub l_beta_hat_below_mu_bar: bool,
    pub convex: bool,
    pub hypothesis_holds: bool,
}

pub fn acceleration_annotation(p: &Problem, s: &PowerSchedule) -> AccelerationAnnotation {
    let beta_hat = s.nesterov_beta_limsup();
    let mu_bar = s.mu_lower();
    let l = p.smoothness_l();
    let below = l * beta_hat < mu_bar;
    let convex = p.convexity().is_convex();
    AccelerationAnnotation {
        beta_hat,
        mu_bar,
        l_smooth: l,
        l_beta_hat_below_mu_bar: below,
        convex,
        hypothesis_holds: below || convex,
    }
}

fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
            b = b.num_threads(n.max(1));
        }
        b.build().expect("thread pool")
    })
}

fn run_replica(cfg: &ExperimentConfig, prep: &Prepared, replica: usize) -> Result<Trajectory, RunError> {
    let mut stream = NoiseStream::new(replica_seed(cfg.master_seed, replica as u64));
    let x0: Vec<f64> = if cfg.x0_jitter > 0.0 {
        stream.seek(0);
        cfg.x0
            .iter()
            .map(|x| x + cfg.x0_jitter * stream.sample::<f64, _>(StandardNormal))
            .collect()
    } else {
        cfg.x0.clone()
    };
    let mut oracle = crate::oracles::SeededOracle::from_stream(&prep.oracle, stream);
    let opts = RunOptions {
        plan: cfg.checkpoints,
        lyapunov: prep.lyapunov_mode,
        averaged: cfg.averaged,
    };
    run_seeded(cfg.method, &mut oracle, &cfg.schedule, &x0, cfg.horizon, &opts)
}

/// One replica of `cfg`, identical to the trajectory the experiment would run
/// as replica `replica`.
pub fn run_single(cfg: &ExperimentConfig, replica: usize) -> Result<Trajectory, HarnessError> {
    let prep = cfg.validate()?;
    run_replica(cfg, &prep, replica).map_err(|e| match e {
        RunError::Step(StepError::Divergence { k }) => HarnessError::Divergence {
            diverged: 1,
            replicas: 1,
            first_k: k,
        },
        other => other.into(),
    })
}

/// Fixed-order pairwise sum.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Mean and standard error, shifted by the first value so identical inputs
/// give their common value and a zero error exactly.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let shift = values[0];
    let dev: Vec<f64> = values.iter().map(|v| v - shift).collect();
    let m = pairwise_sum(&dev) / n as f64;
    let mean = shift + m;
    if n < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = dev.iter().map(|d| (d - m) * (d - m)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs every replica and aggregates checkpoint statistics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MonteCarloEstimate, HarnessError> {
    let prep = cfg.validate()?;
    let outcomes: Vec<Result<Trajectory, RunError>> = thread_pool().install(|| {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|i| run_replica(cfg, &prep, i))
            .collect()
    });
    let mut kept = Vec::with_capacity(cfg.replicas);
    let mut diverged = 0usize;
    let mut first_k = u64::MAX;
    for outcome in outcomes {
        match outcome {
            Ok(t) => kept.push(t),
            Err(RunError::Step(StepError::Divergence { k })) => {
                diverged += 1;
                first_k = first_k.min(k);
            }
            Err(e) => return Err(e.into()),
        }
    }
    if diverged as f64 > MAX_DIVERGED_FRACTION * cfg.replicas as f64 {
        return Err(HarnessError::Divergence {
            diverged,
            replicas: cfg.replicas,
            first_k,
        });
    }
    if kept.len() < 2 {
        return Err(HarnessError::Config("fewer than two replicas completed".into()));
    }
    Ok(aggregate(&kept, &prep, diverged))
}

fn aggregate(trajs: &[Trajectory], prep: &Prepared, diverged: usize) -> MonteCarloEstimate {
    let f_star = prep.built.problem.f_star();
    let base = f_star.unwrap_or(0.0);
    let n_ck = trajs[0].states.len();
    let column = |ck: usize, get: &dyn Fn(&crate::optimizers::Checkpoint) -> f64| -> Vec<f64> {
        trajs.iter().map(|t| get(&t.states[ck])).collect()
    };
    let mut rows = Vec::with_capacity(n_ck);
    let mut lyap_rows = prep.lyapunov_mode.map(|_| Vec::with_capacity(n_ck));
    for ck in 0..n_ck {
        let (mean_grad_sq, se_grad_sq) = mean_se(&column(ck, &|c| c.grad_sq));
        let (mean_gap, se_gap) = mean_se(&column(ck, &|c| c.f - base));
        let avg = trajs[0].states[ck]
            .avg_f
            .map(|_| mean_se(&column(ck, &|c| c.avg_f.unwrap_or(f64::NAN) - base)));
        rows.push(EstimateRow {
            checkpoint: trajs[0].states[ck].k,
            mean_grad_sq,
            se_grad_sq,
            mean_gap,
            se_gap,
            mean_avg_gap: avg.map(|a| a.0),
            se_avg_gap: avg.map(|a| a.1),
        });
        if let Some(lr) = lyap_rows.as_mut() {
            let ly = |get: fn(&crate::lyapunov::LyapunovScalars) -> f64| {
                mean_se(&column(ck, &|c| c.lyapunov.as_ref().map(get).unwrap_or(f64::NAN)))
            };
            let (mean_h, se_h) = ly(|s| s.h);
            let (mean_h_tilde, se_h_tilde) = ly(|s| s.h_tilde);
            lr.push(LyapunovRow {
                checkpoint: trajs[0].states[ck].k,
                mean_h,
                se_h,
                mean_h_bar: ly(|s| s.h_bar).0,
                mean_z_tilde: ly(|s| s.z_tilde).0,
                mean_h_tilde,
                se_h_tilde,
            });
        }
    }

    let mut pairs = Vec::new();
    for ck in 1..n_ck {
        let (k, kp) = (trajs[0].states[ck].k, trajs[0].states[ck - 1].k);
        if kp + 1 != k {
            continue;
        }
        let diff = |get: &dyn Fn(&crate::optimizers::Checkpoint) -> f64| -> (f64, f64) {
            let d: Vec<f64> = trajs.iter().map(|t| get(&t.states[ck]) - get(&t.states[ck - 1])).collect();
            mean_se(&d)
        };
        let (delta_f, delta_f_se) = diff(&|c| c.f);
        let lyap = prep.lyapunov_mode.map(|_| {
            let (d, se) = diff(&|c| c.lyapunov.map_or(f64::NAN, |s| s.h_tilde));
            let hb = mean_se(&column(ck - 1, &|c| c.lyapunov.map_or(f64::NAN, |s| s.h_bar))).0;
            (d, se, hb)
        });
        let st = &trajs[0].states[ck];
        pairs.push(PairedRow {
            k,
            alpha: st.alpha,
            mu: st.mu,
            delta_f,
            delta_f_se,
            f_prev: rows[ck - 1].mean_gap + base,
            f: rows[ck].mean_gap + base,
            grad_sq_prev: rows[ck - 1].mean_grad_sq,
            delta_h_tilde: lyap.map(|l| l.0),
            delta_h_tilde_se: lyap.map(|l| l.1),
            h_bar_prev: lyap.map(|l| l.2),
        });
    }

    MonteCarloEstimate {
        rows,
        lyapunov: lyap_rows,
        pairs,
        lyapunov_mode: prep.lyapunov_mode,
        replicas_used: trajs.len(),
        diverged,
        gap_from_minimum: f_star.is_some(),
    }
}

/// Running minimum of `mean_grad_sq` over the checkpoints.
///
/// A finite-horizon stand-in for `lim inf E‖∇f(x_n)‖² = 0`.
pub fn liminf_probe(est: &MonteCarloEstimate) -> Result<Vec<f64>, HarnessError> {
    if est.rows.len() < 3 {
        return Err(HarnessError::Probe("at least 3 checkpoints".into()));
    }
    Ok(running_min(est.rows.iter().map(|r| r.mean_grad_sq)))
}

pub fn running_min(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut m = f64::INFINITY;
    values
        .into_iter()
        .map(|v| {
            m = m.min(v);
            m
        })
        .collect()
}

/// Whether the running minimum strictly decreases across the given
/// checkpoints, all of which must be on the grid.
pub fn running_min_decreases(est: &MonteCarloEstimate, at: &[u64]) -> Result<bool, HarnessError> {
    let mins = liminf_probe(est)?;
    let vals = at
        .iter()
        .map(|k| {
            est.rows
                .iter()
                .position(|r| r.checkpoint == *k)
                .map(|i| mins[i])
                .ok_or_else(|| HarnessError::Probe(format!("checkpoint {k} on the grid")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(vals.windows(2).all(|w| w[1] < w[0]))
}

/// `(E f(x̄_n) − f*)·Σα / (1 + Σα²)` along the checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedProbe {
    pub checkpoints: Vec<u64>,
    pub ratios: Vec<f64>,
    pub burn_in: u64,
    pub median: f64,
    /// Maximum over the later half of the post-burn-in checkpoints.
    pub late_max: f64,
    pub bounded: bool,
}

/// Bounded means the later half of the post-burn-in ratios stays below twice
/// their median, a finite-horizon stand-in for a bounded sequence.
pub fn averaged_bound_probe(
    est: &MonteCarloEstimate,
    s: &dyn StepSchedule,
) -> Result<AveragedProbe, HarnessError> {
    if est.rows.iter().any(|r| r.mean_avg_gap.is_none()) {
        return Err(HarnessError::Probe("averaged mode".into()));
    }
    let last = est.final_row().checkpoint;
    let mut ratios = Vec::with_capacity(est.rows.len());
    let (mut sa, mut sa2) = (0.0, 0.0);
    let mut rows = est.rows.iter().peekable();
    for k in 1..=last {
        let a = s.alpha(k);
        sa += a;
        sa2 += a * a;
        if let Some(r) = rows.next_if(|r| r.checkpoint == k) {
            ratios.push(r.mean_avg_gap.unwrap_or(f64::NAN) * sa / (1.0 + sa2));
        }
    }
    let burn_in = est.default_burn_in();
    let post: Vec<f64> = est
        .rows
        .iter()
        .zip(&ratios)
        .filter(|(r, _)| r.checkpoint > burn_in)
        .map(|(_, v)| *v)
        .collect();
    if post.len() < 2 {
        return Err(HarnessError::Probe("at least 2 post-burn-in checkpoints".into()));
    }
    let mut sorted = post.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let late_max = post[n / 2..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(AveragedProbe {
        checkpoints: est.rows.iter().map(|r| r.checkpoint).collect(),
        ratios,
        burn_in,
        median,
        late_max,
        bounded: late_max <= 2.0 * median,
    })
}

/// One line of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub a: f64,
    pub b: f64,
    pub checkpoints: Vec<u64>,
    pub result: Result<EstimateRow, String>,
}

/// Runs every config in order; failures are recorded per row.
pub fn sweep(grid: &[ExperimentConfig]) -> Result<Vec<SweepRow>, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::Config("sweep grid is empty".into()));
    }
    Ok(grid
        .iter()
        .map(|cfg| {
            let out = run_experiment(cfg);
            SweepRow {
                method: cfg.method.label().to_string(),
                a: cfg.schedule.exp_alpha,
                b: cfg.schedule.exp_mu,
                checkpoints: out
                    .as_ref()
                    .map(|e| e.rows.iter().map(|r| r.checkpoint).collect())
                    .unwrap_or_default(),
                result: out.map(|e| *e.final_row()).map_err(|e| e.to_string()),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            method: Method::Vsgd,
            problem: ProblemSpec::Quadratic {
                spectrum: vec![1.0],
                x_star: None,
            },
            oracle: OracleSpec::Gaussian { sigma: 1.0 },
            schedule: PowerSchedule::step_only(0.5, 1.0).unwrap(),
            x0: vec![5.0],
            horizon: 1000,
            replicas: 8,
            master_seed: 3,
            checkpoints: CheckpointPlan::Log { per_decade: 1 },
            lyapunov: false,
            averaged: false,
            x0_jitter: 0.0,
        }
    }

    #[test]
    fn mean_se_examples() {
        assert_eq!(mean_se(&[0.1, 0.1, 0.1]), (0.1, 0.0));
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 4950.0);
    }

    #[test]
    fn zero_noise_gives_zero_errors() {
        let cfg = ExperimentConfig {
            oracle: OracleSpec::Gaussian { sigma: 0.0 },
            method: Method::Msgd,
            schedule: PowerSchedule::new(0.5, 0.7, 1.0, 0.0).unwrap(),
            lyapunov: true,
            averaged: true,
            checkpoints: CheckpointPlan::Paired { per_decade: 2 },
            ..base_config()
        };
        let est = run_experiment(&cfg).unwrap();
        for r in &est.rows {
            assert_eq!((r.se_grad_sq, r.se_gap, r.se_avg_gap), (0.0, 0.0, Some(0.0)));
        }
        let prep = cfg.validate().unwrap();
        let t = crate::optimizers::run(
            cfg.method,
            &prep.oracle,
            &cfg.schedule,
            &cfg.x0,
            cfg.horizon,
            0,
            &RunOptions {
                plan: cfg.checkpoints,
                lyapunov: prep.lyapunov_mode,
                averaged: true,
            },
        )
        .unwrap();
        for (r, c) in est.rows.iter().zip(&t.states) {
            assert_eq!(r.mean_gap, c.f);
            assert_eq!(r.mean_grad_sq, c.grad_sq);
        }
        assert!(!est.pairs.is_empty());
        assert!(est.pairs.iter().all(|p| p.delta_f_se == 0.0));
    }

    #[test]
    fn experiments_are_reproducible() {
        let a = run_experiment(&base_config()).unwrap();
        let b = run_experiment(&base_config()).unwrap();
        assert_eq!(a, b);
        let c = run_experiment(&ExperimentConfig {
            master_seed: 4,
            ..base_config()
        })
        .unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn config_validation() {
        let bad = |c: ExperimentConfig| matches!(run_experiment(&c), Err(HarnessError::Config(_)));
        assert!(bad(ExperimentConfig {
            replicas: 1,
            ..base_config()
        }));
        assert!(bad(ExperimentConfig {
            horizon: 5,
            ..base_config()
        }));
        assert!(bad(ExperimentConfig {
            method: Method::Msgd,
            ..base_config()
        }));
        assert!(bad(ExperimentConfig {
            x0: vec![1.0, 2.0],
            ..base_config()
        }));
        assert!(bad(ExperimentConfig {
            oracle: OracleSpec::Minibatch {
                batch: 1,
                without_replacement: false
            },
            ..base_config()
        }));
        let msg = run_experiment(&ExperimentConfig {
            method: Method::Msgd,
            ..base_config()
        })
        .unwrap_err()
        .to_string();
        assert!(msg.contains("mu_m"), "{msg}");
    }

    #[test]
    fn divergence_tolerance() {
        let cfg = ExperimentConfig {
            schedule: PowerSchedule::step_only(2.5, 0.0).unwrap(),
            ..base_config()
        };
        assert!(matches!(
            run_experiment(&cfg),
            Err(HarnessError::Divergence { diverged: 8, replicas: 8, .. })
        ));
    }

    #[test]
    fn liminf_examples() {
        let est = |vals: &[f64]| MonteCarloEstimate {
            rows: vals
                .iter()
                .enumerate()
                .map(|(i, v)| EstimateRow {
                    checkpoint: 10u64.pow(i as u32),
                    mean_grad_sq: *v,
                    se_grad_sq: 0.0,
                    mean_gap: 0.0,
                    se_gap: 0.0,
                    mean_avg_gap: Some(0.0),
                    se_avg_gap: Some(0.0),
                })
                .collect(),
            lyapunov: None,
            pairs: vec![],
            lyapunov_mode: None,
            replicas_used: 2,
            diverged: 0,
            gap_from_minimum: true,
        };
        assert_eq!(liminf_probe(&est(&[1.0, 1.0, 1.0])).unwrap(), vec![1.0; 3]);
        assert_eq!(
            liminf_probe(&est(&[4.0, 1.0, 2.0, 0.5])).unwrap(),
            vec![4.0, 1.0, 1.0, 0.5]
        );
        assert!(liminf_probe(&est(&[1.0, 2.0])).is_err());
        assert!(running_min_decreases(&est(&[4.0, 1.0, 0.5]), &[1, 10, 100]).unwrap());
        assert!(!running_min_decreases(&est(&[4.0, 1.0, 2.0]), &[1, 10, 100]).unwrap());
        assert!(running_min_decreases(&est(&[4.0, 1.0, 2.0]), &[1, 7]).is_err());

        let s = PowerSchedule::step_only(1.0, 0.5).unwrap();
        let p = averaged_bound_probe(&est(&[1.0, 1.0, 1.0, 1.0]), &s).unwrap();
        assert!(p.bounded && p.ratios.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn averaged_probe_on_geometric_decay() {
        let cfg = ExperimentConfig {
            oracle: OracleSpec::Gaussian { sigma: 0.0 },
            schedule: PowerSchedule::step_only(0.5, 0.0).unwrap(),
            averaged: true,
            horizon: 200,
            checkpoints: CheckpointPlan::Every { stride: 5 },
            ..base_config()
        };
        let est = run_experiment(&cfg).unwrap();
        let p = averaged_bound_probe(&est, &cfg.schedule).unwrap();
        assert!(p.bounded, "{p:?}");
        assert!(averaged_bound_probe(&run_experiment(&base_config()).unwrap(), &cfg.schedule).is_err());
    }

    #[test]
    fn sweep_rows() {
        let one = sweep(&[base_config()]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].result.as_ref().unwrap(), run_experiment(&base_config()).unwrap().final_row());
        let bad = ExperimentConfig {
            schedule: PowerSchedule::step_only(2.5, 0.0).unwrap(),
            ..base_config()
        };
        let rows = sweep(&[base_config(), bad]).unwrap();
        assert!(rows[0].result.is_ok() && rows[1].result.is_err());
        assert!(sweep(&[]).is_err());
    }

    #[test]
    fn acceleration_annotation_examples() {
        let p = pseudo_huber(2).unwrap();
        let s = PowerSchedule::new(1.0, 0.7, 1.0, 0.0).unwrap();
        let a = acceleration_annotation(&p, &s);
        assert_eq!(a.beta_hat, 1.0);
        assert!(!a.l_beta_hat_below_mu_bar && a.convex && a.hypothesis_holds);
        let r = smooth_rastrigin(2, 10.0).unwrap();
        assert!(!acceleration_annotation(&r, &s).hypothesis_holds);
    }
}
