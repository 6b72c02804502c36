//! Test objectives with exact gradients and certified constants.
//!
//! Every [`Problem`] carries a global Lipschitz constant for its gradient that
//! is an upper bound (closed form, or power iteration inflated by `1e-6`),
//! its convexity class, its minimizer when known, and, for convex problems,
//! a certificate `(k0, delta)` such that `(f(x) − f*)² ≤ k0·‖∇f(x)‖²` on the
//! low-gradient region `‖∇f(x)‖² ≤ delta`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("{0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Convexity {
    StronglyConvex { mu_sc: f64 },
    Convex,
    Nonconvex,
}

impl Convexity {
    pub fn is_convex(&self) -> bool {
        !matches!(self, Convexity::Nonconvex)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x_star: Vec<f64>,
    pub f_star: f64,
}

/// `(f(x) − f*)² ≤ k0·‖∇f(x)‖²` whenever `‖∇f(x)‖² ≤ delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakConvexCert {
    pub k0: f64,
    pub delta: f64,
}

/// Data of a least-squares finite sum, with the spectral quantities needed to
/// bound minibatch noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresData {
    rows: usize,
    cols: usize,
    design: Vec<f64>,
    targets: Vec<f64>,
    /// `max_i ‖a_i‖²`.
    pub max_row_norm_sq: f64,
    /// Smallest positive eigenvalue of `(1/S)·AᵀA`.
    pub lambda_min_positive: f64,
    /// Largest eigenvalue of `(1/S)·AᵀA` from the symmetric eigensolver.
    pub lambda_max_eigen: f64,
    /// `(1/S)·‖A·x_ls − b‖²` at the least-squares solution.
    pub residual_mean_sq: f64,
}

impl LeastSquaresData {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.design[i * self.cols..(i + 1) * self.cols]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    fn residual(&self, i: usize, x: &[f64]) -> f64 {
        dot(self.row(i), x) - self.targets[i]
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Quadratic { spectrum: Vec<f64>, x_star: Vec<f64> },
    PseudoHuber,
    SmoothRastrigin { amplitude: f64 },
    LeastSquaresRow { row: Vec<f64>, target: f64 },
    LeastSquares(Arc<LeastSquaresData>),
    Average(Arc<[Problem]>),
}

/// An objective `f: ℝ^d → ℝ` with exact gradient and certified metadata.
#[derive(Debug, Clone)]
pub struct Problem {
    name: &'static str,
    kind: Kind,
    dim: usize,
    smoothness_l: f64,
    convexity: Convexity,
    minimum: Option<Minimum>,
    weak_convex_cert: Option<WeakConvexCert>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Polyak–Łojasiewicz certificate for a `mu`-strongly convex (or PL) function:
/// `f − f* ≤ ‖∇f‖²/(2mu)`, hence `(f − f*)² ≤ delta/(4mu²)·‖∇f‖²` on the region.
fn pl_certificate(mu: f64) -> WeakConvexCert {
    let delta = 1.0;
    WeakConvexCert {
        k0: delta / (4.0 * mu * mu),
        delta,
    }
}

impl Problem {
    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn smoothness_l(&self) -> f64 {
        self.smoothness_l
    }

    pub fn convexity(&self) -> Convexity {
        self.convexity
    }

    pub fn minimum(&self) -> Option<&Minimum> {
        self.minimum.as_ref()
    }

    pub fn f_star(&self) -> Option<f64> {
        self.minimum.as_ref().map(|m| m.f_star)
    }

    pub fn weak_convex_cert(&self) -> Option<WeakConvexCert> {
        self.weak_convex_cert
    }

    pub fn least_squares_data(&self) -> Option<&LeastSquaresData> {
        match &self.kind {
            Kind::LeastSquares(data) => Some(data),
            _ => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            Kind::Quadratic { spectrum, x_star } => {
                0.5 * spectrum
                    .iter()
                    .zip(x.iter().zip(x_star))
                    .map(|(l, (xi, si))| l * (xi - si) * (xi - si))
                    .sum::<f64>()
            }
            Kind::PseudoHuber => x.iter().map(|v| (1.0 + v * v).sqrt() - 1.0).sum(),
            Kind::SmoothRastrigin { amplitude } => x
                .iter()
                .map(|v| v * v + amplitude * (1.0 - (2.0 * PI * v).cos()))
                .sum(),
            Kind::LeastSquaresRow { row, target } => {
                let r = dot(row, x) - target;
                0.5 * r * r
            }
            Kind::LeastSquares(data) => {
                let s: f64 = (0..data.rows)
                    .map(|i| {
                        let r = data.residual(i, x);
                        0.5 * r * r
                    })
                    .sum();
                s / data.rows as f64
            }
            Kind::Average(parts) => {
                parts.iter().map(|p| p.value(x)).sum::<f64>() / parts.len() as f64
            }
        }
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        match &self.kind {
            Kind::Quadratic { spectrum, x_star } => {
                for i in 0..self.dim {
                    out[i] = spectrum[i] * (x[i] - x_star[i]);
                }
            }
            Kind::PseudoHuber => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v / (1.0 + v * v).sqrt();
                }
            }
            Kind::SmoothRastrigin { amplitude } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 2.0 * v + 2.0 * PI * amplitude * (2.0 * PI * v).sin();
                }
            }
            Kind::LeastSquaresRow { row, target } => {
                let r = dot(row, x) - target;
                for (o, a) in out.iter_mut().zip(row) {
                    *o = a * r;
                }
            }
            Kind::LeastSquares(data) => {
                out.fill(0.0);
                for i in 0..data.rows {
                    let r = data.residual(i, x);
                    for (o, a) in out.iter_mut().zip(data.row(i)) {
                        *o += a * r;
                    }
                }
                let inv = 1.0 / data.rows as f64;
                out.iter_mut().for_each(|o| *o *= inv);
            }
            Kind::Average(parts) => {
                out.fill(0.0);
                let mut buf = vec![0.0; self.dim];
                for p in parts.iter() {
                    p.gradient_into(x, &mut buf);
                    for (o, g) in out.iter_mut().zip(&buf) {
                        *o += g;
                    }
                }
                let inv = 1.0 / parts.len() as f64;
                out.iter_mut().for_each(|o| *o *= inv);
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.gradient_into(x, &mut g);
        g
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<(), ProblemError> {
        if x.len() == self.dim {
            Ok(())
        } else {
            Err(ProblemError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            })
        }
    }
}

/// `f(x) = ½·Σ λ_i (x_i − x*_i)²`.
pub fn quadratic(spectrum: &[f64], x_star: &[f64]) -> Result<Problem, ProblemError> {
    if spectrum.is_empty() {
        return Err(ProblemError::Invalid("spectrum must be non-empty".into()));
    }
    if spectrum.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(ProblemError::Invalid(
            "spectrum entries must be finite and non-negative".into(),
        ));
    }
    if x_star.len() != spectrum.len() {
        return Err(ProblemError::DimensionMismatch {
            expected: spectrum.len(),
            got: x_star.len(),
        });
    }
    if x_star.iter().any(|v| !v.is_finite()) {
        return Err(ProblemError::Invalid("x_star must be finite".into()));
    }
    let l_max = spectrum.iter().copied().fold(0.0, f64::max);
    if l_max == 0.0 {
        return Err(ProblemError::Invalid(
            "spectrum needs at least one positive entry".into(),
        ));
    }
    let l_min = spectrum.iter().copied().fold(f64::INFINITY, f64::min);
    let l_min_pos = spectrum
        .iter()
        .copied()
        .filter(|l| *l > 0.0)
        .fold(f64::INFINITY, f64::min);
    let convexity = if l_min > 0.0 {
        Convexity::StronglyConvex { mu_sc: l_min }
    } else {
        Convexity::Convex
    };
    Ok(Problem {
        name: "quadratic",
        kind: Kind::Quadratic {
            spectrum: spectrum.to_vec(),
            x_star: x_star.to_vec(),
        },
        dim: spectrum.len(),
        smoothness_l: l_max,
        convexity,
        minimum: Some(Minimum {
            x_star: x_star.to_vec(),
            f_star: 0.0,
        }),
        // A diagonal quadratic is PL with the smallest positive eigenvalue.
        weak_convex_cert: Some(pl_certificate(l_min_pos)),
    })
}

/// Certificate constants for the pseudo-Huber function.
pub const PSEUDO_HUBER_DELTA: f64 = 0.25;

fn pseudo_huber_k0(delta: f64) -> f64 {
    // By convexity f − f* ≤ ‖∇f‖·‖x‖, so K₀ = sup ‖x‖² on the region works.
    // Each coordinate contributes t = x²/(1 + x²) to ‖∇f‖², and x² = t/(1 − t)
    // is convex in t, so the sup sits on an axis: ‖x‖² = delta/(1 − delta).
    1.1 * delta / (1.0 - delta)
}

/// `f(x) = Σ_i (√(1 + x_i²) − 1)`: convex, 1-smooth, not strongly convex.
pub fn pseudo_huber(dim: usize) -> Result<Problem, ProblemError> {
    if dim == 0 {
        return Err(ProblemError::Invalid("dim must be at least 1".into()));
    }
    Ok(Problem {
        name: "pseudo_huber",
        kind: Kind::PseudoHuber,
        dim,
        smoothness_l: 1.0,
        convexity: Convexity::Convex,
        minimum: Some(Minimum {
            x_star: vec![0.0; dim],
            f_star: 0.0,
        }),
        weak_convex_cert: Some(WeakConvexCert {
            k0: pseudo_huber_k0(PSEUDO_HUBER_DELTA),
            delta: PSEUDO_HUBER_DELTA,
        }),
    })
}

/// `f(x) = Σ_i [x_i² + A·(1 − cos 2πx_i)]`, global minimum 0 at the origin.
pub fn smooth_rastrigin(dim: usize, amplitude: f64) -> Result<Problem, ProblemError> {
    if dim == 0 {
        return Err(ProblemError::Invalid("dim must be at least 1".into()));
    }
    if !(amplitude.is_finite() && amplitude > 0.0) {
        return Err(ProblemError::Invalid("amplitude must be positive".into()));
    }
    let curvature = 4.0 * PI * PI * amplitude;
    // f'' = 2 + 4π²A·cos(2πx) ranges over [2 − 4π²A, 2 + 4π²A].
    let convexity = if 2.0 - curvature > 0.0 {
        Convexity::StronglyConvex {
            mu_sc: 2.0 - curvature,
        }
    } else if 2.0 - curvature == 0.0 {
        Convexity::Convex
    } else {
        Convexity::Nonconvex
    };
    let weak_convex_cert = match convexity {
        Convexity::StronglyConvex { mu_sc } => Some(pl_certificate(mu_sc)),
        _ => None,
    };
    Ok(Problem {
        name: "smooth_rastrigin",
        kind: Kind::SmoothRastrigin { amplitude },
        dim,
        smoothness_l: 2.0 + curvature,
        convexity,
        minimum: Some(Minimum {
            x_star: vec![0.0; dim],
            f_star: 0.0,
        }),
        weak_convex_cert,
    })
}

/// `f = (1/S)·Σ f_i` with each component a [`Problem`] of equal dimension.
#[derive(Debug, Clone)]
pub struct FiniteSumProblem {
    components: Arc<[Problem]>,
    aggregate: Problem,
}

impl FiniteSumProblem {
    /// Generic average of arbitrary components. The aggregate's smoothness
    /// constant is the mean of the component constants (triangle inequality)
    /// and its minimum is left unknown.
    pub fn from_components(components: Vec<Problem>) -> Result<Self, ProblemError> {
        let first = components
            .first()
            .ok_or_else(|| ProblemError::Invalid("need at least one component".into()))?;
        let dim = first.dim();
        if let Some(bad) = components.iter().find(|p| p.dim() != dim) {
            return Err(ProblemError::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        let n = components.len() as f64;
        let l = components.iter().map(Problem::smoothness_l).sum::<f64>() / n;
        let convexity = if components.iter().any(|p| !p.convexity().is_convex()) {
            Convexity::Nonconvex
        } else {
            let mu: f64 = components
                .iter()
                .map(|p| match p.convexity() {
                    Convexity::StronglyConvex { mu_sc } => mu_sc,
                    _ => 0.0,
                })
                .sum::<f64>()
                / n;
            if mu > 0.0 {
                Convexity::StronglyConvex { mu_sc: mu }
            } else {
                Convexity::Convex
            }
        };
        let components: Arc<[Problem]> = components.into();
        let aggregate = Problem {
            name: "average",
            kind: Kind::Average(components.clone()),
            dim,
            smoothness_l: l,
            convexity,
            minimum: None,
            weak_convex_cert: None,
        };
        Ok(Self {
            components,
            aggregate,
        })
    }

    pub fn components(&self) -> &[Problem] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn aggregate(&self) -> &Problem {
        &self.aggregate
    }

    pub fn least_squares_data(&self) -> Option<&LeastSquaresData> {
        self.aggregate.least_squares_data()
    }
}

const POWER_ITERATION_TOL: f64 = 1e-10;
const POWER_ITERATION_MAX: usize = 1_000_000;
const POWER_ITERATION_INFLATION: f64 = 1e-6;

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_iteration(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut rho = 0.0;
    for _ in 0..POWER_ITERATION_MAX {
        let w = m * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - rho).abs() <= POWER_ITERATION_TOL * next.abs() {
            return next;
        }
        rho = next;
    }
    rho
}

/// `f_i(x) = ½(a_iᵀx − b_i)²` for the rows of `design`.
pub fn least_squares_sum(design: &[Vec<f64>], targets: &[f64]) -> Result<FiniteSumProblem, ProblemError> {
    let rows = design.len();
    if rows == 0 {
        return Err(ProblemError::Invalid("design needs at least one row".into()));
    }
    if targets.len() != rows {
        return Err(ProblemError::DimensionMismatch {
            expected: rows,
            got: targets.len(),
        });
    }
    let cols = design[0].len();
    if cols == 0 {
        return Err(ProblemError::Invalid("design rows must be non-empty".into()));
    }
    if let Some(bad) = design.iter().find(|r| r.len() != cols) {
        return Err(ProblemError::DimensionMismatch {
            expected: cols,
            got: bad.len(),
        });
    }
    if design.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(ProblemError::Invalid("design and targets must be finite".into()));
    }

    let s = rows as f64;
    let hessian = DMatrix::from_fn(cols, cols, |i, j| {
        design.iter().map(|r| r[i] * r[j]).sum::<f64>() / s
    });
    let l_power = power_iteration(&hessian);
    if l_power <= 0.0 {
        return Err(ProblemError::Invalid("design matrix is zero".into()));
    }

    let eig = SymmetricEigen::new(hessian);
    let lambda_max_eigen = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cutoff = lambda_max_eigen * 1e-12 * cols as f64;
    let lambda_min_positive = eig
        .eigenvalues
        .iter()
        .copied()
        .filter(|l| *l > cutoff)
        .fold(f64::INFINITY, f64::min);
    // x_ls = H⁺·(1/S)·Aᵀb, the minimum-norm least-squares solution.
    let rhs = nalgebra::DVector::from_fn(cols, |j, _| {
        design.iter().zip(targets).map(|(r, b)| r[j] * b).sum::<f64>() / s
    });
    let mut x_ls = nalgebra::DVector::zeros(cols);
    for (idx, lambda) in eig.eigenvalues.iter().enumerate() {
        if *lambda > cutoff {
            let q = eig.eigenvectors.column(idx);
            x_ls += q * (q.dot(&rhs) / lambda);
        }
    }
    let x_ls: Vec<f64> = x_ls.iter().copied().collect();

    let data = LeastSquaresData {
        rows,
        cols,
        design: design.iter().flatten().copied().collect(),
        targets: targets.to_vec(),
        max_row_norm_sq: design.iter().map(|r| norm_sq(r)).fold(0.0, f64::max),
        lambda_min_positive,
        lambda_max_eigen,
        residual_mean_sq: 0.0,
    };
    let residual_mean_sq = (0..rows)
        .map(|i| data.residual(i, &x_ls).powi(2))
        .sum::<f64>()
        / s;
    let data = Arc::new(LeastSquaresData {
        residual_mean_sq,
        ..data
    });

    let convexity = if lambda_min_positive.is_finite()
        && eig.eigenvalues.iter().all(|l| *l > cutoff)
    {
        Convexity::StronglyConvex {
            mu_sc: lambda_min_positive,
        }
    } else {
        Convexity::Convex
    };
    let f_star = 0.5 * residual_mean_sq;
    let aggregate = Problem {
        name: "least_squares",
        kind: Kind::LeastSquares(data),
        dim: cols,
        smoothness_l: l_power * (1.0 + POWER_ITERATION_INFLATION),
        convexity,
        minimum: Some(Minimum {
            x_star: x_ls,
            f_star,
        }),
        weak_convex_cert: Some(pl_certificate(lambda_min_positive)),
    };

    let components: Vec<Problem> = design
        .iter()
        .zip(targets)
        .map(|(row, &target)| {
            let l = norm_sq(row);
            let minimum = (l > 0.0).then(|| Minimum {
                x_star: row.iter().map(|a| a * target / l).collect(),
                f_star: 0.0,
            });
            Problem {
                name: "least_squares_row",
                kind: Kind::LeastSquaresRow {
                    row: row.clone(),
                    target,
                },
                dim: cols,
                smoothness_l: l,
                convexity: Convexity::Convex,
                minimum,
                weak_convex_cert: None,
            }
        })
        .collect();

    Ok(FiniteSumProblem {
        components: components.into(),
        aggregate,
    })
}

/// Max over coordinates of `|fd_i − ∂_i f(x)| / (1 + |∂_i f(x)|)` with
/// central differences of width `step`.
pub fn check_gradient(p: &Problem, x: &[f64], step: f64) -> f64 {
    let g = p.gradient(x);
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = p.value(&probe);
        probe[i] = x[i] - step;
        let down = p.value(&probe);
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((fd - g[i]).abs() / (1.0 + g[i].abs()));
    }
    worst
}
