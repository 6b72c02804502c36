//! Stochastic gradient oracles `F(x, ξ) = ∇f(x) − ξ`.
//!
//! Every oracle declares constants `(M, V)` with `E[ξ] = 0` and
//! `E‖ξ‖² ≤ M + V‖∇f(x)‖²`, and [`verify_bound`] checks both by Monte Carlo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::{norm_sq, FiniteSumProblem, Problem};
use crate::rng::NoiseStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid oracle parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBound {
    pub m_const: f64,
    pub v_const: f64,
}

impl NoiseBound {
    pub fn allowance(&self, grad_sq: f64) -> f64 {
        self.m_const + self.v_const * grad_sq
    }
}

/// Whether `(M, V)` follow from a proof or from a fitted estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundOrigin {
    Declared,
    Empirical,
}

/// One draw of the oracle at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSample {
    /// `F(x, ξ)`.
    pub stoch_grad: Vec<f64>,
    /// `ξ = ∇f(x) − F(x, ξ)`.
    pub noise: Vec<f64>,
    /// `∇f(x)`.
    pub gradient: Vec<f64>,
}

impl OracleSample {
    pub fn zeros(dim: usize) -> Self {
        Self {
            stoch_grad: vec![0.0; dim],
            noise: vec![0.0; dim],
            gradient: vec![0.0; dim],
        }
    }

    /// Builds `F = ∇f − ξ` from a gradient and a noise vector.
    pub fn from_parts(gradient: Vec<f64>, noise: Vec<f64>) -> Self {
        let stoch_grad = gradient.iter().zip(&noise).map(|(g, n)| g - n).collect();
        Self {
            stoch_grad,
            noise,
            gradient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    WithReplacement,
    WithoutReplacement,
}

#[derive(Debug, Clone)]
enum OracleKind {
    Gaussian { sigma: f64 },
    RelativeNoise { eta: f64 },
    Minibatch {
        fsp: FiniteSumProblem,
        batch: usize,
        mode: SamplingMode,
    },
}

/// A stochastic gradient oracle bound to a problem.
#[derive(Debug, Clone)]
pub struct GradientOracle {
    kind: OracleKind,
    problem: Problem,
    bound: NoiseBound,
    origin: BoundOrigin,
}

fn non_negative(name: &'static str, value: f64) -> Result<(), OracleError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(OracleError::InvalidParameter {
            name,
            value,
            reason: "must be finite and non-negative",
        })
    }
}

/// Isotropic Gaussian noise with per-coordinate standard deviation `sigma`.
/// Declares `M = sigma²·d`, `V = 0`.
pub fn gaussian_oracle(p: &Problem, sigma: f64) -> Result<GradientOracle, OracleError> {
    non_negative("sigma", sigma)?;
    Ok(GradientOracle {
        kind: OracleKind::Gaussian { sigma },
        problem: p.clone(),
        bound: NoiseBound {
            m_const: sigma * sigma * p.dim() as f64,
            v_const: 0.0,
        },
        origin: BoundOrigin::Declared,
    })
}

/// `ξ = eta·‖∇f(x)‖·u` with `u` uniform on the unit sphere. Declares
/// `M = 0`, `V = eta²`.
pub fn relative_noise_oracle(p: &Problem, eta: f64) -> Result<GradientOracle, OracleError> {
    non_negative("eta", eta)?;
    Ok(GradientOracle {
        kind: OracleKind::RelativeNoise { eta },
        problem: p.clone(),
        bound: NoiseBound {
            m_const: 0.0,
            v_const: eta * eta,
        },
        origin: BoundOrigin::Declared,
    })
}

/// Minibatch gradients sampled with replacement.
pub fn minibatch_oracle(fsp: &FiniteSumProblem, batch: usize) -> Result<GradientOracle, OracleError> {
    minibatch_oracle_with(fsp, batch, SamplingMode::WithReplacement)
}

/// Minibatch gradients of `batch` uniformly drawn components.
///
/// For least-squares sums the bound is closed form. Writing
/// `H = (1/S)·AᵀA`, `e = x − x_ls` and `r_ls` the optimal residual,
/// `E‖ξ‖² ≤ (1/B)·(1/S)·Σ‖a_i‖²r_i² ≤ (max‖a_i‖²/B)·((1/S)‖r_ls‖² + eᵀHe)` and
/// `eᵀHe ≤ ‖∇f‖²/λ⁺_min`, so `M = max‖a_i‖²·(1/S)‖r_ls‖²/B` and
/// `V = max‖a_i‖²/(B·λ⁺_min)`. Sampling without replacement only lowers the
/// variance. Other finite sums get an empirical bound.
pub fn minibatch_oracle_with(
    fsp: &FiniteSumProblem,
    batch: usize,
    mode: SamplingMode,
) -> Result<GradientOracle, OracleError> {
    if batch == 0 || batch > fsp.len() {
        return Err(OracleError::InvalidParameter {
            name: "batch",
            value: batch as f64,
            reason: "must lie in 1..=S",
        });
    }
    let kind = OracleKind::Minibatch {
        fsp: fsp.clone(),
        batch,
        mode,
    };
    let problem = fsp.aggregate().clone();
    match fsp.least_squares_data() {
        Some(data) => {
            let b = batch as f64;
            // Rounding slack on top of the closed form.
            let slack = 1.0 + 1e-9;
            let bound = NoiseBound {
                m_const: data.max_row_norm_sq * data.residual_mean_sq / b * slack,
                v_const: data.max_row_norm_sq / (b * data.lambda_min_positive) * slack,
            };
            Ok(GradientOracle {
                kind,
                problem,
                bound,
                origin: BoundOrigin::Declared,
            })
        }
        None => {
            let mut oracle = GradientOracle {
                kind,
                problem,
                bound: NoiseBound {
                    m_const: 0.0,
                    v_const: 0.0,
                },
                origin: BoundOrigin::Empirical,
            };
            oracle.bound = estimate_noise_bound(&oracle, EMPIRICAL_SEED);
            Ok(oracle)
        }
    }
}

const EMPIRICAL_SEED: u64 = 0xB0D5_EED5;
const EMPIRICAL_POINTS: usize = 64;
const EMPIRICAL_SAMPLES: usize = 2000;
const EMPIRICAL_HALF_WIDTH: f64 = 5.0;
const EMPIRICAL_INFLATION: f64 = 1.5;

/// Fits `E‖ξ‖² ≈ M + V‖∇f‖²` by non-negative least squares over seeded
/// points in `[−5, 5]^d`, raises `M` so the line covers every point, then
/// inflates both constants by 50%.
pub fn estimate_noise_bound(oracle: &GradientOracle, seed: u64) -> NoiseBound {
    let d = oracle.problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = OracleSample::zeros(d);
    let mut rows = Vec::with_capacity(EMPIRICAL_POINTS);
    for _ in 0..EMPIRICAL_POINTS {
        let x: Vec<f64> = (0..d)
            .map(|_| rng.random_range(-EMPIRICAL_HALF_WIDTH..EMPIRICAL_HALF_WIDTH))
            .collect();
        let mut acc = 0.0;
        for _ in 0..EMPIRICAL_SAMPLES {
            oracle.sample_into(&x, &mut rng, &mut sample);
            acc += norm_sq(&sample.noise);
        }
        rows.push((norm_sq(&sample.gradient), acc / EMPIRICAL_SAMPLES as f64));
    }
    let (m, v) = nnls_affine(&rows);
    // Lift the intercept until the line covers every measured point.
    let m = rows.iter().map(|(t, y)| y - v * t).fold(m, f64::max);
    NoiseBound {
        m_const: m * EMPIRICAL_INFLATION,
        v_const: v * EMPIRICAL_INFLATION,
    }
}

/// Non-negative least squares for `y ≈ m + v·t` over `(t, y)` pairs.
fn nnls_affine(rows: &[(f64, f64)]) -> (f64, f64) {
    let n = rows.len() as f64;
    let (st, sy) = rows.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t, b + y));
    let (mt, my) = (st / n, sy / n);
    let (sxx, sxy) = rows.iter().fold((0.0, 0.0), |(a, b), (t, y)| {
        (a + (t - mt) * (t - mt), b + (t - mt) * (y - my))
    });
    let sse = |m: f64, v: f64| rows.iter().map(|(t, y)| (y - m - v * t).powi(2)).sum::<f64>();
    let mut candidates = vec![(my.max(0.0), 0.0)];
    let tt: f64 = rows.iter().map(|(t, _)| t * t).sum();
    if tt > 0.0 {
        let ty: f64 = rows.iter().map(|(t, y)| t * y).sum();
        candidates.push((0.0, (ty / tt).max(0.0)));
    }
    if sxx > 0.0 {
        let v = sxy / sxx;
        let m = my - v * mt;
        if v >= 0.0 && m >= 0.0 {
            candidates.push((m, v));
        }
    }
    candidates
        .into_iter()
        .min_by(|a, b| sse(a.0, a.1).total_cmp(&sse(b.0, b.1)))
        .expect("at least one candidate")
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

impl GradientOracle {
    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn bound(&self) -> NoiseBound {
        self.bound
    }

    pub fn origin(&self) -> BoundOrigin {
        self.origin
    }

    /// True when every draw equals the exact gradient.
    pub fn is_deterministic(&self) -> bool {
        match &self.kind {
            OracleKind::Gaussian { sigma } => *sigma == 0.0,
            OracleKind::RelativeNoise { eta } => *eta == 0.0,
            OracleKind::Minibatch { fsp, batch, mode } => {
                fsp.len() == 1 || (*mode == SamplingMode::WithoutReplacement && *batch == fsp.len())
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            OracleKind::Gaussian { .. } => "gaussian",
            OracleKind::RelativeNoise { .. } => "relative",
            OracleKind::Minibatch { .. } => "minibatch",
        }
    }

    /// Draws `F(x, ξ)` into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R, out: &mut OracleSample) {
        let d = x.len();
        self.problem.gradient_into(x, &mut out.gradient);
        match &self.kind {
            OracleKind::Gaussian { sigma } => {
                if *sigma == 0.0 {
                    out.noise.fill(0.0);
                } else {
                    for n in out.noise.iter_mut() {
                        *n = sigma * standard_normal(rng);
                    }
                }
            }
            OracleKind::RelativeNoise { eta } => {
                let scale = eta * norm_sq(&out.gradient).sqrt();
                loop {
                    for n in out.noise.iter_mut() {
                        *n = standard_normal(rng);
                    }
                    let r = norm_sq(&out.noise).sqrt();
                    if r > 0.0 {
                        let k = scale / r;
                        out.noise.iter_mut().for_each(|n| *n *= k);
                        break;
                    }
                }
            }
            OracleKind::Minibatch { fsp, batch, mode } => {
                let s = fsp.len();
                // Accumulated in the same order and arithmetic as the
                // aggregate gradient, so a full ordered batch reproduces it
                // bit for bit.
                out.stoch_grad.fill(0.0);
                let add = |i: usize, buf: &mut Vec<f64>, acc: &mut Vec<f64>| {
                    fsp.components()[i].gradient_into(x, buf);
                    for (a, g) in acc.iter_mut().zip(buf.iter()) {
                        *a += g;
                    }
                };
                let mut buf = vec![0.0; d];
                let mut acc = std::mem::take(&mut out.stoch_grad);
                match mode {
                    SamplingMode::WithReplacement => {
                        for _ in 0..*batch {
                            add(rng.random_range(0..s), &mut buf, &mut acc);
                        }
                    }
                    SamplingMode::WithoutReplacement => {
                        let mut idx = rand::seq::index::sample(rng, s, *batch).into_vec();
                        idx.sort_unstable();
                        for i in idx {
                            add(i, &mut buf, &mut acc);
                        }
                    }
                }
                let inv = 1.0 / *batch as f64;
                acc.iter_mut().for_each(|a| *a *= inv);
                out.stoch_grad = acc;
                for j in 0..d {
                    out.noise[j] = out.gradient[j] - out.stoch_grad[j];
                }
                return;
            }
        }
        for j in 0..d {
            out.stoch_grad[j] = out.gradient[j] - out.noise[j];
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> OracleSample {
        let mut out = OracleSample::zeros(x.len());
        self.sample_into(x, rng, &mut out);
        out
    }

    /// Binds the oracle to a counter-addressed stream.
    pub fn seeded(&self, seed: u64) -> SeededOracle<'_> {
        SeededOracle {
            oracle: self,
            stream: NoiseStream::new(seed),
        }
    }
}

/// An oracle together with the random stream one trajectory consumes.
#[derive(Debug, Clone)]
pub struct SeededOracle<'a> {
    oracle: &'a GradientOracle,
    stream: NoiseStream,
}

impl<'a> SeededOracle<'a> {
    pub fn from_stream(oracle: &'a GradientOracle, stream: NoiseStream) -> Self {
        Self { oracle, stream }
    }

    pub fn oracle(&self) -> &GradientOracle {
        self.oracle
    }

    /// Draws the sample of iteration `k` at `x`.
    pub fn sample_at(&mut self, k: u64, x: &[f64], out: &mut OracleSample) {
        self.stream.seek(k);
        self.oracle.sample_into(x, &mut self.stream, out);
    }
}

/// Outcome of [`verify_bound`] at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCheck {
    pub x: Vec<f64>,
    pub grad_sq: f64,
    /// `‖mean(ξ)‖`.
    pub mean_norm: f64,
    /// `3·√(Σ_j var_j / n)`.
    pub mean_tolerance: f64,
    /// Empirical `E‖ξ‖²`.
    pub second_moment: f64,
    pub second_moment_se: f64,
    /// `M + V‖∇f‖²`.
    pub allowance: f64,
    pub unbiased: bool,
    pub bounded: bool,
}

impl PointCheck {
    pub fn passed(&self) -> bool {
        self.unbiased && self.bounded
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound: NoiseBound,
    pub samples: usize,
    pub points: Vec<PointCheck>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.points.iter().all(PointCheck::passed)
    }
}

pub const MIN_VERIFY_SAMPLES: usize = 1000;

/// Checks `E[ξ] = 0` and `E‖ξ‖² ≤ M + V‖∇f‖²` empirically at each point.
///
/// The mean passes when `‖mean(ξ)‖ ≤ 3·√(Σ_j s_j²/n)`; the second moment
/// passes within four standard errors plus a `1e-12` relative rounding slack.
pub fn verify_bound(
    o: &GradientOracle,
    points: &[Vec<f64>],
    samples: usize,
    seed: u64,
) -> BoundReport {
    let samples = samples.max(MIN_VERIFY_SAMPLES);
    let d = o.dim();
    let bound = o.bound();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = OracleSample::zeros(d);
    let n = samples as f64;
    let checks = points
        .iter()
        .map(|x| {
            let mut mean = vec![0.0; d];
            let mut m2 = vec![0.0; d];
            let (mut sq_mean, mut sq_m2) = (0.0, 0.0);
            for i in 0..samples {
                o.sample_into(x, &mut rng, &mut draw);
                let count = (i + 1) as f64;
                for j in 0..d {
                    let delta = draw.noise[j] - mean[j];
                    mean[j] += delta / count;
                    m2[j] += delta * (draw.noise[j] - mean[j]);
                }
                let s = norm_sq(&draw.noise);
                let delta = s - sq_mean;
                sq_mean += delta / count;
                sq_m2 += delta * (s - sq_mean);
            }
            let var_sum: f64 = m2.iter().map(|v| v / (n - 1.0)).sum();
            let mean_norm = norm_sq(&mean).sqrt();
            let mean_tolerance = 3.0 * (var_sum / n).sqrt();
            let second_moment_se = (sq_m2 / (n - 1.0) / n).sqrt();
            let grad_sq = norm_sq(&draw.gradient);
            let allowance = bound.allowance(grad_sq);
            PointCheck {
                x: x.clone(),
                grad_sq,
                mean_norm,
                mean_tolerance,
                second_moment: sq_mean,
                second_moment_se,
                allowance,
                unbiased: mean_norm <= mean_tolerance,
                bounded: sq_mean <= allowance + 4.0 * second_moment_se + 1e-12 * (1.0 + allowance),
            }
        })
        .collect();
    BoundReport {
        bound,
        samples,
        points: checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{least_squares_sum, pseudo_huber, quadratic, smooth_rastrigin};

    fn two_point() -> FiniteSumProblem {
        least_squares_sum(&[vec![1.0], vec![1.0]], &[1.0, -1.0]).unwrap()
    }

    #[test]
    fn zero_sigma_returns_exact_gradient() {
        let p = smooth_rastrigin(2, 10.0).unwrap();
        let o = gaussian_oracle(&p, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = [0.3, -1.2];
        let s = o.sample(&x, &mut rng);
        assert_eq!(s.stoch_grad, p.gradient(&x));
        assert!(s.noise.iter().all(|n| *n == 0.0));
        assert!(o.is_deterministic());
    }

    #[test]
    fn gaussian_declared_bound() {
        let p = quadratic(&[1.0, 1.0, 1.0], &[0.0; 3]).unwrap();
        let o = gaussian_oracle(&p, 1.0).unwrap();
        assert_eq!(o.bound(), NoiseBound { m_const: 3.0, v_const: 0.0 });
        assert!(gaussian_oracle(&p, -1.0).is_err());
        assert!(gaussian_oracle(&p, f64::NAN).is_err());
    }

    #[test]
    fn gaussian_second_moment_per_coordinate() {
        // ‖ξ‖²/(σ²d) is χ²_d/d with variance 2/d.
        let d = 3;
        let sigma = 0.5;
        let p = quadratic(&vec![1.0; d], &vec![0.0; d]).unwrap();
        let o = gaussian_oracle(&p, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += norm_sq(&o.sample(&[0.1, 0.2, 0.3], &mut rng).noise) / d as f64;
        }
        let mean = acc / n as f64;
        let se = sigma * sigma * (2.0 / d as f64).sqrt() / (n as f64).sqrt();
        assert!((mean - 0.25).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn sample_identity_holds_to_rounding() {
        let p = pseudo_huber(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for o in [
            gaussian_oracle(&p, 0.7).unwrap(),
            relative_noise_oracle(&p, 0.5).unwrap(),
        ] {
            for _ in 0..100 {
                let s = o.sample(&[1.0, -2.0, 0.5], &mut rng);
                for j in 0..3 {
                    let sum = s.stoch_grad[j] + s.noise[j];
                    assert!((sum - s.gradient[j]).abs() <= 4.0 * f64::EPSILON * (1.0 + s.noise[j].abs()));
                }
            }
        }
    }

    #[test]
    fn relative_noise_examples() {
        let p = quadratic(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        let o = relative_noise_oracle(&p, 0.5).unwrap();
        assert_eq!(o.bound(), NoiseBound { m_const: 0.0, v_const: 0.25 });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = o.sample(&[0.0, 0.0], &mut rng);
        assert!(s.noise.iter().all(|n| *n == 0.0));
        for _ in 0..100 {
            let s = o.sample(&[1.0, -3.0], &mut rng);
            let g = norm_sq(&s.gradient).sqrt();
            let xi = norm_sq(&s.noise).sqrt();
            assert!((xi - 0.5 * g).abs() <= 1e-14 * g);
        }
    }

    #[test]
    fn relative_noise_mean_is_zero() {
        let p = quadratic(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        let o = relative_noise_oracle(&p, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let x = [1.0, 1.0];
        let mut sums = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let s = o.sample(&x, &mut rng);
            for j in 0..2 {
                sums[j] += s.noise[j];
                sq[j] += s.noise[j] * s.noise[j];
            }
        }
        for j in 0..2 {
            let mean = sums[j] / n as f64;
            let se = ((sq[j] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!(mean.abs() < 3.0 * se, "coordinate {j}: {mean} vs {se}");
        }
    }

    #[test]
    fn minibatch_two_point_enumeration() {
        let fsp = two_point();
        let o = minibatch_oracle(&fsp, 1).unwrap();
        // Outcomes F ∈ {[-1], [1]} with probability ½ each: E F = 0 = ∇f(0)
        // and E‖ξ‖² = ½·1 + ½·1 = 1.
        let outcomes: Vec<f64> = fsp.components().iter().map(|c| c.gradient(&[0.0])[0]).collect();
        assert_eq!(outcomes, vec![-1.0, 1.0]);
        let mean_f: f64 = outcomes.iter().sum::<f64>() / 2.0;
        assert_eq!(mean_f, fsp.aggregate().gradient(&[0.0])[0]);
        let second: f64 = outcomes.iter().map(|f| (0.0 - f) * (0.0 - f)).sum::<f64>() / 2.0;
        assert_eq!(second, 1.0);
        assert!(o.bound().m_const >= 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let s = o.sample(&[0.0], &mut rng);
            assert!(s.stoch_grad == vec![-1.0] || s.stoch_grad == vec![1.0]);
        }
    }

    #[test]
    fn full_batch_without_replacement_is_exact() {
        let fsp = least_squares_sum(
            &[vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.1]],
            &[0.3, -0.2, 1.0],
        )
        .unwrap();
        let o = minibatch_oracle_with(&fsp, 3, SamplingMode::WithoutReplacement).unwrap();
        assert!(o.is_deterministic());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let s = o.sample(&[0.7, -0.4], &mut rng);
            assert!(s.noise.iter().all(|n| *n == 0.0), "{:?}", s.noise);
        }
        let with = minibatch_oracle(&fsp, 3).unwrap();
        let varied = (0..50).any(|_| with.sample(&[0.7, -0.4], &mut rng).noise.iter().any(|n| *n != 0.0));
        assert!(varied);
    }

    #[test]
    fn minibatch_rejects_batch_out_of_range() {
        let fsp = two_point();
        assert!(minibatch_oracle(&fsp, 0).is_err());
        assert!(minibatch_oracle(&fsp, 3).is_err());
    }

    #[test]
    fn verify_bound_examples() {
        let p = quadratic(&[1.0, 4.0], &[0.0, 0.0]).unwrap();
        let zero = gaussian_oracle(&p, 0.0).unwrap();
        let r = verify_bound(&zero, &[vec![1.0, 1.0]], 1000, 7);
        assert!(r.passed());
        assert_eq!(r.points[0].second_moment, 0.0);

        // ‖∇f‖ = 2 at x = [2, 0] for the unit quadratic.
        let unit = quadratic(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        let rel = relative_noise_oracle(&unit, 1.0).unwrap();
        let r = verify_bound(&rel, &[vec![2.0, 0.0]], 10_000, 8);
        assert!(r.passed(), "{r:?}");
        assert!((r.points[0].second_moment - 4.0).abs() < 1e-12);

        let mb = minibatch_oracle(&two_point(), 1).unwrap();
        let r = verify_bound(&mb, &[vec![0.0]], 10_000, 9);
        assert!(r.passed());
        assert_eq!(r.points[0].second_moment, 1.0);
    }

    #[test]
    fn verify_bound_catches_understated_bound() {
        let p = quadratic(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        let mut o = gaussian_oracle(&p, 1.0).unwrap();
        o.bound.m_const = 1.0;
        let r = verify_bound(&o, &[vec![0.0, 0.0]], 10_000, 10);
        assert!(!r.passed());
    }

    #[test]
    fn seeded_streams_are_reproducible() {
        let p = pseudo_huber(2).unwrap();
        let o = gaussian_oracle(&p, 1.0).unwrap();
        let mut a = o.seeded(42);
        let mut b = o.seeded(42);
        let mut c = o.seeded(43);
        let (mut sa, mut sb, mut sc) = (OracleSample::zeros(2), OracleSample::zeros(2), OracleSample::zeros(2));
        for k in 1..100 {
            a.sample_at(k, &[0.5, 0.5], &mut sa);
            b.sample_at(k, &[0.5, 0.5], &mut sb);
            c.sample_at(k, &[0.5, 0.5], &mut sc);
            assert_eq!(sa, sb);
            assert_ne!(sa, sc);
        }
    }

    #[test]
    fn empirical_bound_for_generic_sum() {
        let ls = least_squares_sum(
            &[vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0], vec![-1.0, 0.5]],
            &[1.0, 0.0, -0.5, 0.25],
        )
        .unwrap();
        let generic = FiniteSumProblem::from_components(ls.components().to_vec()).unwrap();
        let o = minibatch_oracle(&generic, 2).unwrap();
        assert_eq!(o.origin(), BoundOrigin::Empirical);
        assert!(o.bound().m_const > 0.0 || o.bound().v_const > 0.0);
        let points: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![1.0, -1.0], vec![3.0, 2.0]];
        assert!(verify_bound(&o, &points, 20_000, 12).passed());
    }

    #[test]
    fn nnls_recovers_affine_relation() {
        let rows: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 + 0.5 * i as f64)).collect();
        let (m, v) = nnls_affine(&rows);
        assert!((m - 2.0).abs() < 1e-12 && (v - 0.5).abs() < 1e-12);
        let rows: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 5.0 - 0.5 * i as f64)).collect();
        let (m, v) = nnls_affine(&rows);
        assert!(m >= 0.0 && v >= 0.0);
    }
}
