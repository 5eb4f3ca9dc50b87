//! Least-squares fitting used by the calibration analyses.
//!
//! A small Levenberg–Marquardt solver with a finite-difference Jacobian,
//! plus the cosine model used for Rabi-style oscillations and a bounded
//! scalar minimizer used when refitting a single parameter.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub const DEFAULT_MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("fit did not converge after {0} iterations")]
    FitDiverged(usize),
    #[error("non-finite values in fit input")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Parameter covariance scaled by the residual variance; `None` when the
    /// normal matrix is singular or there are no spare degrees of freedom.
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Root-mean-square residual, probability units.
    pub residual_rms: f64,
    pub r_squared: f64,
    pub iterations: usize,
}

impl FitResult {
    /// One-sigma uncertainty of parameter `i`, if known.
    pub fn std_error(&self, i: usize) -> Option<f64> {
        self.covariance.as_ref().map(|c| c[i][i].max(0.0).sqrt())
    }
}

/// Residual statistics of `model` against data; used by the analyses to
/// compare a fixed hypothesis with data.
pub fn residual_rms(y: &[f64], predicted: &[f64]) -> f64 {
    let ss: f64 = y.iter().zip(predicted).map(|(a, b)| (a - b).powi(2)).sum();
    (ss / y.len().max(1) as f64).sqrt()
}

fn r_squared(y: &[f64], ss_res: f64) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        0.0
    }
}

/// Minimizes the sum of squared residuals `y - model(x, p)` starting from
/// `init`.
pub fn levenberg_marquardt<F>(x: &[f64], y: &[f64], init: &[f64], model: F, max_iterations: usize) -> Result<FitResult, FitError>
where
    F: Fn(f64, &[f64]) -> f64,
{
    if x.iter().chain(y).chain(init).any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let n = x.len();
    let m = init.len();
    let residuals = |p: &[f64]| -> DVector<f64> { DVector::from_iterator(n, x.iter().zip(y).map(|(&xi, &yi)| yi - model(xi, p))) };
    let jacobian = |p: &[f64]| -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(n, m);
        let mut probe = p.to_vec();
        for j in 0..m {
            let h = 1e-6 * (p[j].abs() + 1e-4);
            probe[j] = p[j] + h;
            let up: Vec<f64> = x.iter().map(|&xi| model(xi, &probe)).collect();
            probe[j] = p[j] - h;
            let down: Vec<f64> = x.iter().map(|&xi| model(xi, &probe)).collect();
            probe[j] = p[j];
            for i in 0..n {
                jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
            }
        }
        jac
    };

    let mut p = init.to_vec();
    let mut r = residuals(&p);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = cost < 1e-28;

    while !converged {
        if iterations >= max_iterations {
            return Err(FitError::FitDiverged(iterations));
        }
        iterations += 1;
        let jac = jacobian(&p);
        let jtj = jac.transpose() * &jac;
        // residual r = y - f, so the descent direction solves (JᵀJ + λD) δ = Jᵀr
        let jtr = jac.transpose() * &r;
        let scale = jtj.diagonal().max().max(1e-300);
        let mut improved = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for j in 0..m {
                a[(j, j)] += lambda * (jtj[(j, j)] + 1e-12 * scale);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_r = residuals(&trial);
            let trial_cost = trial_r.norm_squared();
            if trial_cost.is_finite() && trial_cost < cost {
                let small_step = step
                    .iter()
                    .zip(&p)
                    .all(|(d, v)| d.abs() <= 1e-13 * (v.abs() + 1e-13));
                let small_gain = cost - trial_cost <= 1e-15 * cost;
                p = trial;
                r = trial_r;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                converged = small_step || small_gain || cost < 1e-28;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step at any damping: we are at the minimum
            converged = true;
        }
    }

    let jac = jacobian(&p);
    let jtj = jac.transpose() * &jac;
    let covariance = if n > m {
        let s2 = cost / (n - m) as f64;
        jtj.try_inverse().map(|inv| {
            (0..m)
                .map(|i| (0..m).map(|j| inv[(i, j)] * s2).collect())
                .collect()
        })
    } else {
        None
    };
    Ok(FitResult {
        params: p,
        covariance,
        residual_rms: (cost / n.max(1) as f64).sqrt(),
        r_squared: r_squared(y, cost),
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineGuess {
    /// Cycles per unit of abscissa.
    pub frequency: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub phase: f64,
}

/// `offset + amplitude * cos(2π f x + phase)`
pub fn cosine(x: f64, offset: f64, amplitude: f64, frequency: f64, phase: f64) -> f64 {
    offset + amplitude * (2.0 * PI * frequency * x + phase).cos()
}

/// Fits `y = offset + amplitude·cos(2π f x + phase)`.
///
/// `params` of the result are `[offset, amplitude, frequency, phase]`.
pub fn fit_cosine(x: &[f64], y: &[f64], guess: CosineGuess) -> Result<FitResult, FitError> {
    if x.len() < 5 || x.len() != y.len() {
        return Err(FitError::InsufficientPoints {
            needed: 5,
            got: x.len().min(y.len()),
        });
    }
    levenberg_marquardt(
        x,
        y,
        &[guess.offset, guess.amplitude, guess.frequency, guess.phase],
        |xi, p| cosine(xi, p[0], p[1], p[2], p[3]),
        DEFAULT_MAX_ITERATIONS,
    )
}

/// Grid search over frequency; at each candidate the offset, cosine and
/// sine amplitudes are solved linearly. Returns the best candidate.
pub fn cosine_initial_guess(x: &[f64], y: &[f64], f_min: f64, f_max: f64, steps: usize) -> CosineGuess {
    let mut best = CosineGuess {
        frequency: f_min,
        amplitude: 0.0,
        offset: y.iter().sum::<f64>() / y.len().max(1) as f64,
        phase: 0.0,
    };
    let mut best_cost = f64::INFINITY;
    let steps = steps.max(2);
    for k in 0..steps {
        let f = f_min + (f_max - f_min) * k as f64 / (steps - 1) as f64;
        let design = DMatrix::from_fn(x.len(), 3, |i, j| match j {
            0 => 1.0,
            1 => (2.0 * PI * f * x[i]).cos(),
            _ => (2.0 * PI * f * x[i]).sin(),
        });
        let yv = DVector::from_column_slice(y);
        let Ok(coef) = design.clone().svd(true, true).solve(&yv, 1e-12) else {
            continue;
        };
        let cost = (&design * &coef - &yv).norm_squared();
        if cost < best_cost {
            best_cost = cost;
            let (c, a, b) = (coef[0], coef[1], coef[2]);
            // a cos + b sin = R cos(θ + φ) with R = hypot, φ = atan2(-b, a)
            best = CosineGuess {
                frequency: f,
                amplitude: a.hypot(b),
                offset: c,
                phase: (-b).atan2(a),
            };
        }
    }
    best
}

/// Minimizes a scalar function on `[lo, hi]`: coarse grid, then golden
/// section around the best grid cell. Returns `(argmin, min)`.
pub fn minimize_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64, grid: usize) -> (f64, f64) {
    let grid = grid.max(3);
    let step = (hi - lo) / (grid - 1) as f64;
    let (mut best_i, mut best_v) = (0, f64::INFINITY);
    for i in 0..grid {
        let v = f(lo + step * i as f64);
        if v < best_v {
            best_i = i;
            best_v = v;
        }
    }
    let mut a = lo + step * best_i.saturating_sub(1) as f64;
    let mut b = (lo + step * (best_i + 1) as f64).min(hi);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if (b - a).abs() <= 1e-12 * (a.abs() + b.abs()).max(1e-12) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let x = (a + b) / 2.0;
    let v = f(x);
    let grid_x = lo + step * best_i as f64;
    if v <= best_v {
        (x, v)
    } else {
        (grid_x, best_v)
    }
}
