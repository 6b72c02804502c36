//! Step-size and damping sequences, and the admissibility conditions they
//! satisfy.
//!
//! Power laws `α_k = c·k^(−a)`, `μ_k = m·k^(−b)` are classified in closed
//! form. Any schedule can additionally be probed numerically by summing its
//! first `n` terms; [`trend_check`] turns those partial sums into the same
//! yes/no questions so the two routes can be compared.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("horizon {0} is too short (need at least 10)")]
    HorizonTooShort(u64),
    #[error("horizon {requested} exceeds the {available} tabulated terms")]
    HorizonBeyondTable { requested: u64, available: u64 },
    #[error("partial sum overflowed at k = {0}")]
    Overflow(u64),
}

/// A step-size / damping sequence indexed from `k = 1`.
pub trait StepSchedule: Send + Sync {
    fn alpha(&self, k: u64) -> f64;

    /// Damping `μ_k`; zero when the schedule carries no damping.
    fn mu(&self, k: u64) -> f64;

    /// Closed-form classification, when one exists.
    fn classify(&self) -> Option<ScheduleClass> {
        None
    }

    /// Number of terms available, `None` for unbounded sequences.
    fn terms(&self) -> Option<u64> {
        None
    }
}

/// `α_k = coeff_alpha·k^(−exp_alpha)`, `μ_k = coeff_mu·k^(−exp_mu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSchedule {
    pub coeff_alpha: f64,
    pub exp_alpha: f64,
    pub coeff_mu: f64,
    pub exp_mu: f64,
}

/// Which admissibility conditions a schedule satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleClass {
    /// `α_k → 0` and `Σα_k = ∞`.
    pub diverges: bool,
    /// `Σα_k² < ∞`.
    pub square_summable: bool,
    /// `α_n·Σ_{k≤n} α_k² → 0`.
    pub thm22_condition: bool,
    /// The vanishing-damping system: `μ_k → 0`, `α_k/μ_k → 0`,
    /// `Σα_kμ_k = ∞` and `μ_{k−1} − μ_k = L_μ·α_kμ_k + o(α_kμ_k)`.
    pub damping_admissible: bool,
    /// `L_μ`, present only when `damping_admissible`.
    pub l_mu: Option<f64>,
}

/// Partial sums of a schedule up to `horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialSumReport {
    pub horizon: u64,
    pub sum_alpha: f64,
    pub sum_alpha_sq: f64,
    /// `α_n·Σ_{k≤n} α_k²`.
    pub tail_product: f64,
    /// `α_n/μ_n`, absent when `μ_n = 0`.
    pub ratio_alpha_mu: Option<f64>,
    pub sum_alpha_mu: f64,
    /// `(μ_{n−1} − μ_n)/(α_nμ_n)`, absent when `μ_n = 0`.
    pub mu_decrement_ratio: Option<f64>,
    pub alpha_last: f64,
    pub mu_last: f64,
}

impl PartialSumReport {
    /// `c_n = 1 + Σ_{k≤n} α_k²`.
    pub fn c_n(&self) -> f64 {
        1.0 + self.sum_alpha_sq
    }
}

pub fn make_power_schedule(c: f64, a: f64, m: f64, b: f64) -> Result<PowerSchedule, ScheduleError> {
    let check = |name, value: f64, ok: bool, reason| {
        if value.is_finite() && ok {
            Ok(())
        } else {
            Err(ScheduleError::InvalidParameter { name, value, reason })
        }
    };
    check("alpha.c", c, c > 0.0, "must be positive")?;
    check("alpha.a", a, (0.0..=1.5).contains(&a), "must lie in [0, 1.5]")?;
    check("mu.m", m, m >= 0.0, "must be non-negative")?;
    check("mu.b", b, (0.0..1.0).contains(&b), "must lie in [0, 1)")?;
    Ok(PowerSchedule {
        coeff_alpha: c,
        exp_alpha: a,
        coeff_mu: m,
        exp_mu: b,
    })
}

fn power(coeff: f64, k: u64, exponent: f64) -> f64 {
    if exponent == 0.0 {
        coeff
    } else {
        coeff * (k as f64).powf(-exponent)
    }
}

impl PowerSchedule {
    pub fn new(c: f64, a: f64, m: f64, b: f64) -> Result<Self, ScheduleError> {
        make_power_schedule(c, a, m, b)
    }

    /// Step-size only (`μ ≡ 0`).
    pub fn step_only(c: f64, a: f64) -> Result<Self, ScheduleError> {
        make_power_schedule(c, a, 0.0, 0.0)
    }

    pub fn has_damping(&self) -> bool {
        self.coeff_mu > 0.0
    }

    /// `inf_k μ_k`.
    pub fn mu_lower(&self) -> f64 {
        if self.exp_mu == 0.0 {
            self.coeff_mu
        } else {
            0.0
        }
    }

    /// `sup_k μ_k = μ_1`.
    pub fn mu_upper(&self) -> f64 {
        self.coeff_mu
    }

    /// `sup_k μ_k·α_k`, attained at `k = 1` for non-increasing sequences.
    pub fn max_mu_alpha(&self) -> f64 {
        self.coeff_mu * self.coeff_alpha
    }

    /// `β̂ = limsup_k (1 − μ_kα_k)·α_k/α_{k−1}` for the Nesterov iteration.
    pub fn nesterov_beta_limsup(&self) -> f64 {
        if self.exp_alpha > 0.0 || self.exp_mu > 0.0 {
            // α_k/α_{k−1} → 1 and μ_kα_k → 0, or μ_k → 0 at constant α.
            1.0
        } else {
            1.0 - self.coeff_mu * self.coeff_alpha
        }
    }

    /// Closed-form classification of the power-law family.
    pub fn class(&self) -> ScheduleClass {
        let a = self.exp_alpha;
        let b = self.exp_mu;
        let diverges = a > 0.0 && a <= 1.0;
        let square_summable = a > 0.5;
        // Open at 1/3: α_nΣα_k² tends to a positive constant there.
        let thm22_condition = a > 1.0 / 3.0;
        let damping_admissible =
            self.coeff_mu > 0.0 && b > 0.0 && a > b && a + b <= 1.0;
        // μ_{k−1} − μ_k ~ m·b·k^(−b−1) against α_kμ_k = c·m·k^(−a−b).
        let l_mu = damping_admissible.then(|| {
            if a == 1.0 {
                b / self.coeff_alpha
            } else {
                0.0
            }
        });
        ScheduleClass {
            diverges,
            square_summable,
            thm22_condition,
            damping_admissible,
            l_mu,
        }
    }
}

impl StepSchedule for PowerSchedule {
    fn alpha(&self, k: u64) -> f64 {
        power(self.coeff_alpha, k, self.exp_alpha)
    }

    fn mu(&self, k: u64) -> f64 {
        if self.coeff_mu == 0.0 {
            0.0
        } else {
            power(self.coeff_mu, k, self.exp_mu)
        }
    }

    fn classify(&self) -> Option<ScheduleClass> {
        Some(self.class())
    }
}

pub fn classify(s: &PowerSchedule) -> ScheduleClass {
    s.class()
}

/// A user-supplied finite sequence. No closed-form classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedSchedule {
    alpha: Vec<f64>,
    mu: Vec<f64>,
}

impl TabulatedSchedule {
    /// `mu` may be empty (no damping); otherwise it must match `alpha`.
    pub fn new(alpha: Vec<f64>, mu: Vec<f64>) -> Result<Self, ScheduleError> {
        if let Some(&bad) = alpha.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(ScheduleError::InvalidParameter {
                name: "alpha",
                value: bad,
                reason: "entries must be positive and finite",
            });
        }
        if !mu.is_empty() && mu.len() != alpha.len() {
            return Err(ScheduleError::InvalidParameter {
                name: "mu",
                value: mu.len() as f64,
                reason: "length must match alpha",
            });
        }
        if let Some(&bad) = mu.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(ScheduleError::InvalidParameter {
                name: "mu",
                value: bad,
                reason: "entries must be non-negative and finite",
            });
        }
        Ok(Self { alpha, mu })
    }
}

impl StepSchedule for TabulatedSchedule {
    fn alpha(&self, k: u64) -> f64 {
        self.alpha[(k - 1) as usize]
    }

    fn mu(&self, k: u64) -> f64 {
        self.mu.get((k - 1) as usize).copied().unwrap_or(0.0)
    }

    fn terms(&self) -> Option<u64> {
        Some(self.alpha.len() as u64)
    }
}

/// Exact partial sums by forward summation up to `horizon`.
pub fn numeric_probe<S: StepSchedule + ?Sized>(
    s: &S,
    horizon: u64,
) -> Result<PartialSumReport, ScheduleError> {
    Ok(numeric_probe_at(s, &[horizon])?.remove(0))
}

/// Partial sums at several horizons in a single pass. `horizons` need not be
/// sorted; reports come back in the order requested.
pub fn numeric_probe_at<S: StepSchedule + ?Sized>(
    s: &S,
    horizons: &[u64],
) -> Result<Vec<PartialSumReport>, ScheduleError> {
    if let Some(&short) = horizons.iter().find(|&&h| h < 10) {
        return Err(ScheduleError::HorizonTooShort(short));
    }
    let max_h = horizons.iter().copied().max().unwrap_or(0);
    if let Some(available) = s.terms() {
        if max_h > available {
            return Err(ScheduleError::HorizonBeyondTable {
                requested: max_h,
                available,
            });
        }
    }
    let mut order: Vec<usize> = (0..horizons.len()).collect();
    order.sort_by_key(|&i| horizons[i]);

    let mut out: Vec<Option<PartialSumReport>> = vec![None; horizons.len()];
    let (mut sum_a, mut sum_a2, mut sum_am) = (0.0f64, 0.0f64, 0.0f64);
    let mut mu_prev = f64::NAN;
    let mut next = 0;
    for k in 1..=max_h {
        let a = s.alpha(k);
        let m = s.mu(k);
        sum_a += a;
        sum_a2 += a * a;
        sum_am += a * m;
        if !(sum_a.is_finite() && sum_a2.is_finite() && sum_am.is_finite()) {
            return Err(ScheduleError::Overflow(k));
        }
        while next < order.len() && horizons[order[next]] == k {
            let (ratio, decrement) = if m > 0.0 {
                (Some(a / m), Some((mu_prev - m) / (a * m)))
            } else {
                (None, None)
            };
            out[order[next]] = Some(PartialSumReport {
                horizon: k,
                sum_alpha: sum_a,
                sum_alpha_sq: sum_a2,
                tail_product: a * sum_a2,
                ratio_alpha_mu: ratio,
                sum_alpha_mu: sum_am,
                mu_decrement_ratio: decrement,
                alpha_last: a,
                mu_last: m,
            });
            next += 1;
        }
        mu_prev = m;
    }
    Ok(out.into_iter().map(|r| r.expect("every horizon visited")).collect())
}

/// Numerical answers to the classification questions, read off partial sums
/// at `n/100`, `n/10` and `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub horizon: u64,
    /// `α` shrinks over the last decade and the decade increments of `Σα`
    /// are not shrinking.
    pub diverges: bool,
    /// `α_n·Σα_k²` is smaller at `n` than at `n/10`.
    pub tail_shrinking: bool,
    /// `μ` and `α/μ` shrink, the decade increments of `Σαμ` do not, and
    /// the decrement ratio `(μ_{k−1}−μ_k)/(α_kμ_k)` has settled.
    pub damping_admissible: bool,
    pub reports: [PartialSumReport; 3],
}

const TREND_REL_TOL: f64 = 1e-9;

pub fn trend_check<S: StepSchedule + ?Sized>(s: &S, horizon: u64) -> Result<TrendCheck, ScheduleError> {
    if horizon < 1000 {
        return Err(ScheduleError::HorizonTooShort(horizon));
    }
    let r = numeric_probe_at(s, &[horizon / 100, horizon / 10, horizon])?;
    let (early, mid, late) = (r[0], r[1], r[2]);

    let shrinks = |before: f64, after: f64| after < before * (1.0 - TREND_REL_TOL);
    let keeps_growing = |s0: f64, s1: f64, s2: f64| (s2 - s1) >= (s1 - s0) * (1.0 - TREND_REL_TOL);

    let diverges = shrinks(mid.alpha_last, late.alpha_last)
        && keeps_growing(early.sum_alpha, mid.sum_alpha, late.sum_alpha);
    let tail_shrinking = late.tail_product < mid.tail_product;

    let damping_admissible = match (
        mid.ratio_alpha_mu,
        late.ratio_alpha_mu,
        mid.mu_decrement_ratio,
        late.mu_decrement_ratio,
    ) {
        (Some(r_mid), Some(r_late), Some(d_mid), Some(d_late)) => {
            shrinks(mid.mu_last, late.mu_last)
                && shrinks(r_mid, r_late)
                && keeps_growing(early.sum_alpha_mu, mid.sum_alpha_mu, late.sum_alpha_mu)
                && d_late.is_finite()
                && (d_late - d_mid).abs() <= 0.1 * (1.0 + d_late.abs())
        }
        _ => false,
    };

    Ok(TrendCheck {
        horizon,
        diverges,
        tail_shrinking,
        damping_admissible,
        reports: [early, mid, late],
    })
}
