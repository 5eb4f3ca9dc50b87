//! Pi-pulse length: a coarse Rabi oscillation and an amplified refinement
//! that repeats the pulse N times (N odd) so small errors accumulate.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::*;
use crate::fit::{cosine_initial_guess, fit_cosine, levenberg_marquardt, minimize_scalar, DEFAULT_MAX_ITERATIONS};

pub const PI_LENGTH: &str = "pi_length_ns";

static CHECKS: [ToleranceCheck; 1] = [ToleranceCheck {
    tolerance: "max_rotation_error_rad",
    figure_of_merit: "rotation_error_rad",
    bound: Bound::Max,
}];

fn durations(exps: &[Experiment]) -> Vec<f64> {
    exps.iter()
        .map(|e| match e {
            Experiment::Rabi { duration_ns, .. } => *duration_ns,
            _ => f64::NAN,
        })
        .collect()
}

/// Population after `repeats` pulses of `duration` when a pi pulse takes `pi`.
fn population(duration: f64, pi: f64, repeats: f64) -> f64 {
    (PI * repeats * duration / (2.0 * pi)).sin().powi(2)
}

fn rabi_experiments(ctx: &NodeContext, qubit: &str, durations: &[f64], repeats: u32) -> Result<Vec<Experiment>, BehaviorError> {
    let drive_ghz = ctx.param(qubit, spectroscopy::F_DRIVE)?;
    let threshold = ctx.param(qubit, readout::THRESHOLD)?;
    Ok(durations
        .iter()
        .map(|&duration_ns| Experiment::Rabi {
            qubit: qubit.to_owned(),
            drive_ghz,
            duration_ns,
            repeats,
            threshold,
        })
        .collect())
}

fn rabi_curve(ctx: &NodeContext, experiments: &[Experiment], repeats: f64) -> Result<Vec<f64>, BehaviorError> {
    let qubit = ctx.single_qubit()?;
    let pi = ctx.param(&qubit, PI_LENGTH)?;
    let ro = ReadoutModel::from_context(ctx, &qubit)?;
    Ok(durations(experiments)
        .into_iter()
        .map(|d| ro.measured(population(d, pi, repeats)))
        .collect())
}

pub struct RabiCoarse;

impl NodeBehavior for RabiCoarse {
    fn name(&self) -> &'static str {
        "rabi_coarse"
    }

    fn parameters(&self) -> &'static [&'static str] {
        &[PI_LENGTH]
    }

    fn tolerance_checks(&self) -> &'static [ToleranceCheck] {
        &CHECKS
    }

    /// Calibration points are absolute durations in ns; check points are
    /// multiples of the stored pi length.
    fn experiments(
        &self,
        ctx: &NodeContext,
        scan: &ScanTemplate,
        purpose: ScanPurpose,
    ) -> Result<(Vec<f64>, Vec<Experiment>), BehaviorError> {
        let qubit = ctx.single_qubit()?;
        let xs: Vec<f64> = match purpose {
            ScanPurpose::Calibrate => scan.points.clone(),
            ScanPurpose::CheckData => {
                let pi = ctx.param(&qubit, PI_LENGTH)?;
                scan.points.iter().map(|p| p * pi).collect()
            }
        };
        let exps = rabi_experiments(ctx, &qubit, &xs, 1)?;
        Ok((xs, exps))
    }

    fn expected_curve(&self, ctx: &NodeContext, experiments: &[Experiment]) -> Result<Vec<f64>, BehaviorError> {
        rabi_curve(ctx, experiments, 1.0)
    }

    fn refit_target(&self, ctx: &NodeContext) -> Result<RefitTarget, BehaviorError> {
        let qubit = ctx.single_qubit()?;
        let pi = ctx.param(&qubit, PI_LENGTH)?;
        Ok(RefitTarget {
            scope: qubit,
            name: PI_LENGTH,
            current: pi,
            lo: 0.5 * pi,
            hi: 1.5 * pi,
        })
    }

    fn deviation(&self, current: f64, fitted: f64) -> (&'static str, f64) {
        ("rotation_error_rad", PI * (fitted / current - 1.0).abs())
    }

    fn analyze_calibrate(
        &self,
        ctx: &NodeContext,
        data: &ScanData,
        _tolerance: &BTreeMap<String, f64>,
    ) -> Result<CalibrationAnalysis, BehaviorError> {
        let qubit = ctx.single_qubit()?;
        let ro = ReadoutModel::from_context(ctx, &qubit)?;
        let x = durations(&data.experiments);
        let y = &data.measured;
        if x.len() < 5 {
            return Ok(CalibrationAnalysis::BadData {
                reason: "too few duration points".into(),
            });
        }
        let span = x.iter().cloned().fold(0.0, f64::max);
        let spacing = (span - x.iter().cloned().fold(f64::INFINITY, f64::min)) / (x.len() - 1) as f64;
        let guess = cosine_initial_guess(&x, y, 0.25 / span, 0.5 / spacing, 400);
        let fit = fit_cosine(&x, y, guess)?;
        let (amp, f) = (fit.params[1].abs(), fit.params[2].abs());
        let noise = noise_threshold(y, data.shots);
        if 2.0 * amp < 0.5 * ro.contrast() {
            return Ok(CalibrationAnalysis::BadData {
                reason: format!("oscillation amplitude {:.3} too small", 2.0 * amp),
            });
        }
        if fit.residual_rms > noise {
            return Ok(CalibrationAnalysis::BadData {
                reason: format!("residual {:.4} above noise threshold {:.4}", fit.residual_rms, noise),
            });
        }
        let sigma_f = fit.std_error(2).unwrap_or(f64::INFINITY);
        Ok(CalibrationAnalysis::Proposed {
            params: BTreeMap::from([(PI_LENGTH.to_string(), 0.5 / f)]),
            figures_of_merit: BTreeMap::from([("rotation_error_rad".to_string(), 3.0 * PI * sigma_f / f)]),
        })
    }
}

/// Amplified pi-pulse refinement. The `repeats` option sets N (default 11).
/// Scan points are relative length offsets in units of 1/N.
pub struct RabiAmplified;

impl RabiAmplified {
    fn repeats(ctx: &NodeContext) -> u32 {
        ctx.option("repeats", 11.0).round().max(1.0) as u32
    }
}

/// Least squares of `y ≈ a + b·s` for fixed `s`; returns the cost and (a, b).
fn linear_offset_scale(s: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let design = DMatrix::from_fn(s.len(), 2, |i, j| if j == 0 { 1.0 } else { s[i] });
    let yv = DVector::from_column_slice(y);
    match design.clone().svd(true, true).solve(&yv, 1e-12) {
        Ok(c) => ((&design * &c - &yv).norm_squared(), c[0], c[1]),
        Err(_) => (f64::INFINITY, 0.0, 0.0),
    }
}

impl NodeBehavior for RabiAmplified {
    fn name(&self) -> &'static str {
        "rabi_fine"
    }

    fn parameters(&self) -> &'static [&'static str] {
        &[PI_LENGTH]
    }

    fn tolerance_checks(&self) -> &'static [ToleranceCheck] {
        &CHECKS
    }

    fn experiments(
        &self,
        ctx: &NodeContext,
        scan: &ScanTemplate,
        _purpose: ScanPurpose,
    ) -> Result<(Vec<f64>, Vec<Experiment>), BehaviorError> {
        let qubit = ctx.single_qubit()?;
        let n = Self::repeats(ctx);
        let pi = ctx.param(&qubit, PI_LENGTH)?;
        let xs: Vec<f64> = scan.points.iter().map(|p| pi * (1.0 + p / f64::from(n))).collect();
        let exps = rabi_experiments(ctx, &qubit, &xs, n)?;
        Ok((xs, exps))
    }

    fn expected_curve(&self, ctx: &NodeContext, experiments: &[Experiment]) -> Result<Vec<f64>, BehaviorError> {
        rabi_curve(ctx, experiments, f64::from(Self::repeats(ctx)))
    }

    fn refit_target(&self, ctx: &NodeContext) -> Result<RefitTarget, BehaviorError> {
        let qubit = ctx.single_qubit()?;
        let pi = ctx.param(&qubit, PI_LENGTH)?;
        let half = 0.8 / f64::from(Self::repeats(ctx));
        Ok(RefitTarget {
            scope: qubit,
            name: PI_LENGTH,
            current: pi,
            lo: pi * (1.0 - half),
            hi: pi * (1.0 + half),
        })
    }

    fn deviation(&self, current: f64, fitted: f64) -> (&'static str, f64) {
        ("rotation_error_rad", PI * (fitted / current - 1.0).abs())
    }

    fn analyze_calibrate(
        &self,
        ctx: &NodeContext,
        data: &ScanData,
        _tolerance: &BTreeMap<String, f64>,
    ) -> Result<CalibrationAnalysis, BehaviorError> {
        let qubit = ctx.single_qubit()?;
        let ro = ReadoutModel::from_context(ctx, &qubit)?;
        let seed = ctx.param(&qubit, PI_LENGTH)?;
        let n = f64::from(Self::repeats(ctx));
        let x = durations(&data.experiments);
        let y = &data.measured;
        if x.len() < 5 {
            return Ok(CalibrationAnalysis::BadData {
                reason: "too few duration points".into(),
            });
        }
        let (lo, hi) = (seed * (1.0 - 0.8 / n), seed * (1.0 + 0.8 / n));
        let cost = |pi: f64| {
            let s: Vec<f64> = x.iter().map(|&d| population(d, pi, n)).collect();
            linear_offset_scale(&s, y).0
        };
        let (pi0, _) = minimize_scalar(cost, lo, hi, 161);
        let s0: Vec<f64> = x.iter().map(|&d| population(d, pi0, n)).collect();
        let (_, a0, b0) = linear_offset_scale(&s0, y);
        let fit = levenberg_marquardt(
            &x,
            y,
            &[pi0, a0, b0],
            |d, p| p[1] + p[2] * population(d, p[0], n),
            DEFAULT_MAX_ITERATIONS,
        )?;
        let (pi, b) = (fit.params[0], fit.params[2]);
        let noise = noise_threshold(y, data.shots);
        let reason = if b < 0.5 * ro.contrast() {
            Some(format!("fringe contrast {b:.3} too small"))
        } else if fit.residual_rms > noise {
            Some(format!("residual {:.4} above noise threshold {:.4}", fit.residual_rms, noise))
        } else if !(lo..=hi).contains(&pi) {
            Some(format!("pi length {pi:.3} ns outside search window"))
        } else {
            None
        };
        if let Some(reason) = reason {
            return Ok(CalibrationAnalysis::BadData { reason });
        }
        let sigma = fit.std_error(0).unwrap_or(f64::INFINITY);
        Ok(CalibrationAnalysis::Proposed {
            params: BTreeMap::from([(PI_LENGTH.to_string(), pi)]),
            figures_of_merit: BTreeMap::from([("rotation_error_rad".to_string(), 3.0 * PI * sigma / pi)]),
        })
    }
}
