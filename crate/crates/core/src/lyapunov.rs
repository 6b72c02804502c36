//! Energy functions for the momentum iterations and numerical probes of the
//! descent inequalities they satisfy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::{dot, norm_sq, Problem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error("problem {0} has no known minimum value")]
    UnknownMinimum(&'static str),
    #[error("invalid {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("series length mismatch: {0}")]
    LengthMismatch(String),
    #[error("series too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },
}

/// Energy quantities of one state `(x, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovScalars {
    /// `H = f(x) − f* + ‖v‖²/2`.
    pub h: f64,
    /// `H̄ = ‖∇f(x)‖² + ‖v‖²`.
    pub h_bar: f64,
    /// `Z̃ = vᵀ∇f(x)`.
    pub z_tilde: f64,
    /// `H̃ = H + w·Z̃` with the cross-term weight `w`.
    pub h_tilde: f64,
}

/// How the cross-term weight is chosen at iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LyapunovMode {
    /// Constant damping: `w = zeta`.
    Constant { zeta: f64 },
    /// Vanishing damping: `w = lambda·μ_k`.
    Vanishing { lambda: f64 },
}

impl LyapunovMode {
    pub fn weight(&self, mu_k: f64) -> f64 {
        match *self {
            LyapunovMode::Constant { zeta } => zeta,
            LyapunovMode::Vanishing { lambda } => lambda * mu_k,
        }
    }

    pub fn is_vanishing(&self) -> bool {
        matches!(self, LyapunovMode::Vanishing { .. })
    }
}

/// Evaluates the energy scalars at `(x, v)` with cross-term weight `weight`.
pub fn scalars(p: &Problem, x: &[f64], v: &[f64], weight: f64) -> Result<LyapunovScalars, LyapunovError> {
    let f_star = p.f_star().ok_or(LyapunovError::UnknownMinimum(p.name()))?;
    let g = p.gradient(x);
    Ok(scalars_from_parts(p.value(x) - f_star, &g, v, weight))
}

pub(crate) fn scalars_from_parts(gap: f64, g: &[f64], v: &[f64], weight: f64) -> LyapunovScalars {
    let vv = norm_sq(v);
    let h = gap + 0.5 * vv;
    let z_tilde = dot(v, g);
    LyapunovScalars {
        h,
        h_bar: norm_sq(g) + vv,
        z_tilde,
        h_tilde: h + weight * z_tilde,
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), LyapunovError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(LyapunovError::InvalidParameter {
            name,
            value,
            reason: "must be finite and positive",
        })
    }
}

/// Cross-term weight for constant damping with `μ_k ∈ [mu_lo, mu_hi]`:
/// `ζ = mu_lo / (2·(mu_hi²/4 + L))`, so `ζ·(μ_k²/4 + L) ≤ mu_lo/2`.
pub fn select_zeta(l_smooth: f64, mu_lo: f64, mu_hi: f64) -> Result<f64, LyapunovError> {
    positive("l_smooth", l_smooth)?;
    positive("mu_lo", mu_lo)?;
    positive("mu_hi", mu_hi)?;
    if mu_lo > mu_hi {
        return Err(LyapunovError::InvalidParameter {
            name: "mu_lo",
            value: mu_lo,
            reason: "must not exceed mu_hi",
        });
    }
    Ok(mu_lo / (2.0 * (mu_hi * mu_hi / 4.0 + l_smooth)))
}

/// Cross-term scale for vanishing damping:
/// `λ = ½·min(1/L, 1/(L + L_μ²/4))`.
pub fn select_lambda(l_smooth: f64, l_mu: f64) -> Result<f64, LyapunovError> {
    positive("l_smooth", l_smooth)?;
    if !(l_mu.is_finite() && l_mu >= 0.0) {
        return Err(LyapunovError::InvalidParameter {
            name: "l_mu",
            value: l_mu,
            reason: "must be finite and non-negative",
        });
    }
    Ok(0.5 * (1.0 / l_smooth).min(1.0 / (l_smooth + l_mu * l_mu / 4.0)))
}

/// Largest constant step for which the deterministic damped heavy ball on a
/// convex quadratic with top eigenvalue `l_max` never increases
/// `f + ‖v‖²/2`.
///
/// Per eigenvalue `λ` the update is linear in `(√λ·x, v)` with determinant
/// `1 − μα`, and its operator norm is at most 1 iff `(1 − μα)² ≤ 1 − λα²`.
/// The worst eigenvalue is `l_max`, giving `α ≤ 2μ/(μ² + l_max)`.
pub fn energy_monotone_threshold(l_max: f64, mu: f64) -> f64 {
    2.0 * mu / (mu * mu + l_max)
}

/// One observed step of the Monte Carlo mean energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentPoint {
    pub k: u64,
    pub alpha: f64,
    pub mu: f64,
    /// `Ê[H̃_k] − Ê[H̃_{k−1}]`.
    pub delta: f64,
    /// Monte Carlo standard error of `delta`.
    pub delta_se: f64,
    /// `Ê[H̄_{k−1}]`.
    pub h_bar_prev: f64,
}

/// Constants of `Δ_k ≤ −K·α_k·Ê[H̄_{k−1}] + C·α_k²` fitted after burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentFit {
    pub k_hat: f64,
    pub c_hat: f64,
    pub violation_fraction: f64,
    pub burn_in: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DescentOutcome {
    Fitted(DescentFit),
    /// The two regressors are collinear, so `K` and `C` are not identified.
    Inconclusive { burn_in: u64, points: usize },
}

impl DescentOutcome {
    pub fn fit(&self) -> Option<&DescentFit> {
        match self {
            DescentOutcome::Fitted(f) => Some(f),
            DescentOutcome::Inconclusive { .. } => None,
        }
    }
}

/// Fraction of checkpoints excluded from the fit by default.
pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.05;

/// Fits `(K, C) ≥ 0` by least squares on the points with `k > burn_in` and
/// counts how many exceed the fitted bound by more than three standard
/// errors. With `vanishing` set the first regressor carries an extra `μ_k`.
pub fn descent_fit(points: &[DescentPoint], vanishing: bool, burn_in: u64) -> DescentOutcome {
    let kept: Vec<&DescentPoint> = points.iter().filter(|p| p.k > burn_in).collect();
    let rows: Vec<(f64, f64, f64)> = kept
        .iter()
        .map(|p| {
            let w = if vanishing { p.alpha * p.mu } else { p.alpha };
            (-w * p.h_bar_prev, p.alpha * p.alpha, p.delta)
        })
        .collect();
    let Some((k_hat, c_hat)) = nnls2(&rows) else {
        return DescentOutcome::Inconclusive {
            burn_in,
            points: kept.len(),
        };
    };
    let violations = rows
        .iter()
        .zip(&kept)
        .filter(|((x1, x2, d), p)| *d > k_hat * x1 + c_hat * x2 + 3.0 * p.delta_se)
        .count();
    let violation_fraction = if rows.is_empty() {
        0.0
    } else {
        violations as f64 / rows.len() as f64
    };
    DescentOutcome::Fitted(DescentFit {
        k_hat,
        c_hat,
        violation_fraction,
        burn_in,
    })
}

/// Non-negative least squares for `y ≈ a·x1 + b·x2`. Returns `None` when both
/// columns are non-zero and collinear.
fn nnls2(rows: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    let (mut s11, mut s12, mut s22, mut s1y, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x1, x2, y) in rows {
        s11 += x1 * x1;
        s12 += x1 * x2;
        s22 += x2 * x2;
        s1y += x1 * y;
        s2y += x2 * y;
    }
    let one = |sxy: f64, sxx: f64| if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    if s11 == 0.0 || s22 == 0.0 {
        return Some((one(s1y, s11), one(s2y, s22)));
    }
    let det = s11 * s22 - s12 * s12;
    if det <= 1e-12 * s11 * s22 {
        return None;
    }
    let a = (s22 * s1y - s12 * s2y) / det;
    let b = (s11 * s2y - s12 * s1y) / det;
    if a >= 0.0 && b >= 0.0 {
        return Some((a, b));
    }
    let sse = |a: f64, b: f64| -> f64 { rows.iter().map(|(x1, x2, y)| (y - a * x1 - b * x2).powi(2)).sum() };
    let cands = [(one(s1y, s11), 0.0), (0.0, one(s2y, s22)), (0.0, 0.0)];
    cands.into_iter().min_by(|p, q| sse(p.0, p.1).total_cmp(&sse(q.0, q.1)))
}

/// Result of checking `X_k ≤ X_{k−1} − α_k·Y_k + α_k·Z_k` along a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletReport {
    pub holds_everywhere: bool,
    /// Indices `k ≥ 1` where the inequality fails.
    pub failures: Vec<usize>,
    /// Running minimum of `Y`.
    pub running_min_y: Vec<f64>,
    /// `K = max(X₀ − min X, 0)`.
    pub k_const: f64,
    /// `K + Σ_{j≤k} α_j Z_j − Σ_{j≤k} α_j Y_j`, non-negative when the partial
    /// sum bound holds.
    pub partial_sum_slack: Vec<f64>,
}

pub const MIN_TRIPLET_LEN: usize = 10;

fn check_lengths(lens: &[(&str, usize)]) -> Result<usize, LyapunovError> {
    let n = lens[0].1;
    if let Some((name, len)) = lens.iter().find(|(_, l)| *l != n) {
        return Err(LyapunovError::LengthMismatch(format!(
            "{} has {len} entries, {} has {n}",
            name, lens[0].0
        )));
    }
    Ok(n)
}

/// Checks the triplet recursion on contiguous series.
pub fn triplet_probe(x: &[f64], y: &[f64], z: &[f64], alpha: &[f64]) -> Result<TripletReport, LyapunovError> {
    let n = check_lengths(&[("x", x.len()), ("y", y.len()), ("z", z.len()), ("alpha", alpha.len())])?;
    if n < MIN_TRIPLET_LEN {
        return Err(LyapunovError::TooShort {
            needed: MIN_TRIPLET_LEN,
            got: n,
        });
    }
    let failures: Vec<usize> = (1..n)
        .filter(|&k| x[k] > x[k - 1] - alpha[k] * y[k] + alpha[k] * z[k])
        .collect();
    let mut running_min_y = Vec::with_capacity(n);
    let mut m = f64::INFINITY;
    for &v in y {
        m = m.min(v);
        running_min_y.push(m);
    }
    let x_min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let k_const = (x[0] - x_min).max(0.0);
    let mut acc = k_const;
    let partial_sum_slack = (0..n)
        .map(|k| {
            if k > 0 {
                acc += alpha[k] * (z[k] - y[k]);
            }
            acc
        })
        .collect();
    Ok(TripletReport {
        holds_everywhere: failures.is_empty(),
        failures,
        running_min_y,
        k_const,
        partial_sum_slack,
    })
}

/// One sampled step of the triplet recursion, with an additive tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletStep {
    pub k: u64,
    pub x_prev: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub alpha: f64,
    pub tolerance: f64,
}

impl TripletStep {
    pub fn holds(&self) -> bool {
        self.x <= self.x_prev - self.alpha * self.y + self.alpha * self.z + self.tolerance
    }
}

/// Fraction of sampled steps that satisfy the recursion.
pub fn triplet_step_fraction(steps: &[TripletStep]) -> f64 {
    if steps.is_empty() {
        return 1.0;
    }
    steps.iter().filter(|s| s.holds()).count() as f64 / steps.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{quadratic, smooth_rastrigin, FiniteSumProblem};

    #[test]
    fn scalar_examples() {
        let p = quadratic(&[1.0], &[0.0]).unwrap();
        let s = scalars(&p, &[0.0], &[0.0], 0.1).unwrap();
        assert_eq!(
            s,
            LyapunovScalars {
                h: 0.0,
                h_bar: 0.0,
                z_tilde: 0.0,
                h_tilde: 0.0
            }
        );
        let s = scalars(&p, &[1.0], &[1.0], 0.1).unwrap();
        assert_eq!((s.h, s.h_bar, s.z_tilde), (1.0, 2.0, 1.0));
        assert!((s.h_tilde - 1.1).abs() < 1e-15);
        let s = scalars(&p, &[1.0], &[-1.0], 0.1).unwrap();
        assert_eq!(s.z_tilde, -1.0);
        assert!((s.h_tilde - 0.9).abs() < 1e-15);
    }

    #[test]
    fn scalars_need_known_minimum() {
        let fsp = FiniteSumProblem::from_components(vec![
            quadratic(&[1.0], &[0.0]).unwrap(),
            quadratic(&[1.0], &[1.0]).unwrap(),
        ])
        .unwrap();
        assert!(matches!(
            scalars(fsp.aggregate(), &[0.0], &[0.0], 0.1),
            Err(LyapunovError::UnknownMinimum(_))
        ));
        assert!(scalars(&smooth_rastrigin(1, 1.0).unwrap(), &[0.3], &[0.1], 0.1).is_ok());
    }

    #[test]
    fn zeta_examples() {
        assert!((select_zeta(1.0, 1.0, 1.0).unwrap() - 0.4).abs() < 1e-15);
        assert!((select_zeta(10.0, 1.0, 1.0).unwrap() - 1.0 / 20.5).abs() < 1e-15);
        assert!(select_zeta(1.0, 1e-300, 1.0).unwrap() < 1e-299);
        assert!(select_zeta(1.0, 2.0, 1.0).is_err());
        assert!(select_zeta(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(select_lambda(1.0, 0.0).unwrap(), 0.5);
        assert_eq!(select_lambda(1.0, 2.0).unwrap(), 0.25);
        assert_eq!(select_lambda(4.0, 0.0).unwrap(), 0.125);
        assert!(select_lambda(-1.0, 0.0).is_err());
    }

    #[test]
    fn energy_threshold_matches_brute_force() {
        // Spectral norm of the 2×2 update, scanned in α.
        let (l, mu) = (4.0, 1.0);
        let norm_ok = |alpha: f64| {
            let c = 1.0 - mu * alpha;
            let p = alpha * alpha * l;
            let s = l.sqrt();
            let a = [[1.0 - p, alpha * s * c], [-alpha * s, c]];
            let ata = [
                [a[0][0] * a[0][0] + a[1][0] * a[1][0], a[0][0] * a[0][1] + a[1][0] * a[1][1]],
                [0.0, a[0][1] * a[0][1] + a[1][1] * a[1][1]],
            ];
            let tr = ata[0][0] + ata[1][1];
            let det = ata[0][0] * ata[1][1] - ata[0][1] * ata[0][1];
            let top = tr / 2.0 + ((tr / 2.0).powi(2) - det).max(0.0).sqrt();
            top <= 1.0 + 1e-12
        };
        let t = energy_monotone_threshold(l, mu);
        assert!((t - 0.4).abs() < 1e-15);
        assert!(norm_ok(t * 0.999));
        assert!(norm_ok(t * 0.5));
        assert!(!norm_ok(t * 1.01));
    }

    fn point(k: u64, alpha: f64, delta: f64, h_bar_prev: f64) -> DescentPoint {
        DescentPoint {
            k,
            alpha,
            mu: 1.0,
            delta,
            delta_se: 0.0,
            h_bar_prev,
        }
    }

    #[test]
    fn stationary_series_fits_zero() {
        let pts: Vec<_> = (1..50).map(|k| point(k, 1.0 / k as f64, 0.0, 0.0)).collect();
        let fit = *descent_fit(&pts, false, 0).fit().unwrap();
        assert_eq!((fit.k_hat, fit.c_hat, fit.violation_fraction), (0.0, 0.0, 0.0));
    }

    #[test]
    fn exact_relation_is_recovered() {
        let pts: Vec<_> = (1..200)
            .map(|k| {
                let a = (k as f64).powf(-0.7);
                let hb = 10.0 / k as f64;
                point(k, a, -0.5 * a * hb + 2.0 * a * a, hb)
            })
            .collect();
        let fit = *descent_fit(&pts, false, 10).fit().unwrap();
        assert!((fit.k_hat - 0.5).abs() < 1e-9 && (fit.c_hat - 2.0).abs() < 1e-8);
        assert_eq!(fit.burn_in, 10);
    }

    #[test]
    fn collinear_regressors_are_inconclusive() {
        // H̄_{k−1} = −α_k makes −α·H̄ = α².
        let pts: Vec<_> = (1..50)
            .map(|k| {
                let a = 1.0 / k as f64;
                point(k, a, 0.1, -a)
            })
            .collect();
        assert!(matches!(descent_fit(&pts, false, 0), DescentOutcome::Inconclusive { .. }));
    }

    #[test]
    fn vanishing_mode_scales_regressor() {
        let pts: Vec<_> = (1..100)
            .map(|k| {
                let a = (k as f64).powf(-0.7);
                let mu = (k as f64).powf(-0.2);
                let hb = 1.0 / k as f64;
                DescentPoint {
                    k,
                    alpha: a,
                    mu,
                    delta: -0.3 * a * mu * hb,
                    delta_se: 0.0,
                    h_bar_prev: hb,
                }
            })
            .collect();
        let fit = *descent_fit(&pts, true, 0).fit().unwrap();
        assert!((fit.k_hat - 0.3).abs() < 1e-9);
        assert!(fit.c_hat.abs() < 1e-9);
    }

    #[test]
    fn triplet_examples() {
        let n = 20;
        let x: Vec<f64> = (1..=n).map(|k| 1.0 / k as f64).collect();
        let zeros = vec![0.0; n];
        let alpha = vec![0.3; n];
        let r = triplet_probe(&x, &zeros, &zeros, &alpha).unwrap();
        assert!(r.holds_everywhere);
        assert!((r.k_const - (1.0 - 1.0 / n as f64)).abs() < 1e-15);

        let x = vec![2.0; n];
        let y: Vec<f64> = (0..n).map(|k| k as f64).collect();
        let r = triplet_probe(&x, &y, &y, &alpha).unwrap();
        assert!(r.holds_everywhere);
        assert!(r.partial_sum_slack.iter().all(|s| *s >= 0.0));
        assert_eq!(r.running_min_y[n - 1], 0.0);

        let mut up = x.clone();
        up[5] = 3.0;
        let r = triplet_probe(&up, &zeros, &zeros, &alpha).unwrap();
        assert_eq!(r.failures, vec![5]);

        assert!(triplet_probe(&x[..5], &y[..5], &y[..5], &alpha[..5]).is_err());
        assert!(triplet_probe(&x, &y[..5], &y, &alpha).is_err());
    }

    #[test]
    fn triplet_step_tolerance() {
        let s = TripletStep {
            k: 2,
            x_prev: 1.0,
            x: 1.05,
            y: 0.0,
            z: 0.0,
            alpha: 0.1,
            tolerance: 0.1,
        };
        assert!(s.holds());
        assert!(!TripletStep { tolerance: 0.0, ..s }.holds());
        assert_eq!(triplet_step_fraction(&[s, TripletStep { tolerance: 0.0, ..s }]), 0.5);
    }
}
