//! Qubit spectroscopy: sweep the drive frequency and fit a Lorentzian.

use std::collections::BTreeMap;

use super::*;
use crate::classify::Classification;
use crate::fit::{levenberg_marquardt, minimize_scalar, residual_rms, DEFAULT_MAX_ITERATIONS};

pub const F_DRIVE: &str = "f_drive";
pub const LINEWIDTH: &str = "linewidth_mhz";
pub const PEAK_HEIGHT: &str = "peak_height";

/// Below this the peak is not distinguishable from noise.
const MIN_USABLE_SNR: f64 = 5.0;

pub struct Spectroscopy;

static CHECKS: [ToleranceCheck; 3] = [
    ToleranceCheck {
        tolerance: "max_shift_mhz",
        figure_of_merit: "shift_mhz",
        bound: Bound::Max,
    },
    ToleranceCheck {
        tolerance: "max_shift_mhz",
        figure_of_merit: "freq_uncertainty_mhz",
        bound: Bound::Max,
    },
    ToleranceCheck {
        tolerance: "min_peak_snr",
        figure_of_merit: "peak_snr",
        bound: Bound::Min,
    },
];

fn lorentzian(delta_mhz: f64, w: f64) -> f64 {
    w * w / (w * w + delta_mhz * delta_mhz)
}

fn drives(exps: &[Experiment]) -> Vec<f64> {
    exps.iter()
        .map(|e| match e {
            Experiment::Spectroscopy { drive_ghz, .. } => *drive_ghz,
            _ => f64::NAN,
        })
        .collect()
}

impl NodeBehavior for Spectroscopy {
    fn name(&self) -> &'static str {
        "spectroscopy"
    }

    fn parameters(&self) -> &'static [&'static str] {
        &[F_DRIVE, LINEWIDTH, PEAK_HEIGHT]
    }

    fn tolerance_checks(&self) -> &'static [ToleranceCheck] {
        &CHECKS
    }

    /// Calibration points are absolute drive frequencies in GHz. Check
    /// points are offsets from the stored frequency in linewidths.
    fn experiments(
        &self,
        ctx: &NodeContext,
        scan: &ScanTemplate,
        purpose: ScanPurpose,
    ) -> Result<(Vec<f64>, Vec<Experiment>), BehaviorError> {
        let qubit = ctx.single_qubit()?;
        let threshold = ctx.param(&qubit, readout::THRESHOLD)?;
        let xs: Vec<f64> = match purpose {
            ScanPurpose::Calibrate => scan.points.clone(),
            ScanPurpose::CheckData => {
                let f = ctx.param(&qubit, F_DRIVE)?;
                let w = ctx.param(&qubit, LINEWIDTH)?;
                scan.points.iter().map(|p| f + p * w * 1e-3).collect()
            }
        };
        let exps = xs
            .iter()
            .map(|&drive_ghz| Experiment::Spectroscopy {
                qubit: qubit.clone(),
                drive_ghz,
                threshold,
            })
            .collect();
        Ok((xs, exps))
    }

    fn expected_curve(&self, ctx: &NodeContext, experiments: &[Experiment]) -> Result<Vec<f64>, BehaviorError> {
        let qubit = ctx.single_qubit()?;
        let f = ctx.param(&qubit, F_DRIVE)?;
        let w = ctx.param(&qubit, LINEWIDTH)?;
        let h = ctx.param(&qubit, PEAK_HEIGHT)?;
        let ro = ReadoutModel::from_context(ctx, &qubit)?;
        Ok(drives(experiments)
            .into_iter()
            .map(|d| ro.measured(h * lorentzian((d - f) * 1e3, w)))
            .collect())
    }

    fn refit_target(&self, ctx: &NodeContext) -> Result<RefitTarget, BehaviorError> {
        let qubit = ctx.single_qubit()?;
        let f = ctx.param(&qubit, F_DRIVE)?;
        let w = ctx.param(&qubit, LINEWIDTH)?;
        Ok(RefitTarget {
            scope: qubit,
            name: F_DRIVE,
            current: f,
            lo: f - 4.0 * w * 1e-3,
            hi: f + 4.0 * w * 1e-3,
        })
    }

    fn deviation(&self, current: f64, fitted: f64) -> (&'static str, f64) {
        ("shift_mhz", (fitted - current).abs() * 1e3)
    }

    /// As the generic classifier, but a line that moved out of the check
    /// window is a real, out-of-spec result rather than broken data. Data
    /// the generic refit rejects gets a second refit of the line center
    /// over +-50 linewidths; a good fit there means the line moved.
    fn analyze_check(
        &self,
        ctx: &NodeContext,
        data: &ScanData,
        tolerance: &BTreeMap<String, f64>,
    ) -> Result<CheckDataOutcome, BehaviorError> {
        let mut out = crate::classify::classify_check_data(self, ctx, data, tolerance)?;
        if out.classification != Classification::BadData {
            return Ok(out);
        }
        let qubit = ctx.single_qubit()?;
        let f = ctx.param(&qubit, F_DRIVE)?;
        let span = 50.0 * ctx.param(&qubit, LINEWIDTH)? * 1e-3;
        let cost = |v: f64| match self.expected_curve(&ctx.with_param(&qubit, F_DRIVE, v), &data.experiments) {
            Ok(pred) => residual_rms(&data.measured, &pred),
            Err(_) => f64::INFINITY,
        };
        let (fitted, rms) = minimize_scalar(cost, f - span, f + span, 2001);
        out.figures_of_merit.insert("wide_refit_rms".into(), rms);
        if rms <= noise_threshold(&data.measured, data.shots) {
            out.classification = Classification::OutOfSpec;
            out.figures_of_merit.insert("shift_mhz".into(), (fitted - f).abs() * 1e3);
            out.fitted_shift = Some(fitted - f);
        }
        Ok(out)
    }

    fn analyze_calibrate(
        &self,
        ctx: &NodeContext,
        data: &ScanData,
        _tolerance: &BTreeMap<String, f64>,
    ) -> Result<CalibrationAnalysis, BehaviorError> {
        let qubit = ctx.single_qubit()?;
        let ro = ReadoutModel::from_context(ctx, &qubit)?;
        let x = drives(&data.experiments);
        let y = &data.measured;
        if x.len() < 5 {
            return Ok(CalibrationAnalysis::BadData {
                reason: "too few frequency points".into(),
            });
        }
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));

        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        let a0 = sorted[sorted.len() / 2];
        let (imax, &ymax) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty");
        let b0 = ymax - a0;
        let step_mhz = (hi - lo) * 1e3 / (x.len() - 1) as f64;
        let above = y.iter().filter(|&&v| v > a0 + b0 / 2.0).count() as f64;
        let w0 = (above * step_mhz / 2.0).max(step_mhz);

        let f_ref = x[imax];
        let xs: Vec<f64> = x.iter().map(|v| (v - f_ref) * 1e3).collect();
        let fit = levenberg_marquardt(
            &xs,
            y,
            &[a0, b0, 0.0, w0],
            |d, p| p[0] + p[1] * lorentzian(d - p[2], p[3]),
            DEFAULT_MAX_ITERATIONS,
        )?;
        let (a, b, shift, w) = (fit.params[0], fit.params[1], fit.params[2], fit.params[3].abs());
        let f0 = f_ref + shift * 1e-3;

        let var = (a * (1.0 - a)).max(1.0 / f64::from(data.shots.max(1)));
        let point_sigma = (var / f64::from(data.shots.max(1))).sqrt();
        let snr = b / point_sigma;
        let uncertainty = 3.0 * fit.std_error(2).unwrap_or(f64::INFINITY);
        let noise = noise_threshold(y, data.shots);
        let reason = if !(snr >= MIN_USABLE_SNR) {
            Some(format!("peak snr {snr:.2} below {MIN_USABLE_SNR}"))
        } else if fit.residual_rms > noise {
            Some(format!("residual {:.4} above noise threshold {:.4}", fit.residual_rms, noise))
        } else if !(lo..=hi).contains(&f0) {
            Some(format!("fitted center {f0:.6} GHz outside scan"))
        } else {
            None
        };
        if let Some(reason) = reason {
            return Ok(CalibrationAnalysis::BadData { reason });
        }
        let height = if ro.contrast() > 0.0 { b / ro.contrast() } else { b };
        Ok(CalibrationAnalysis::Proposed {
            params: BTreeMap::from([
                (F_DRIVE.to_string(), f0),
                (LINEWIDTH.to_string(), w),
                (PEAK_HEIGHT.to_string(), height),
            ]),
            figures_of_merit: BTreeMap::from([
                ("peak_snr".to_string(), snr),
                ("freq_uncertainty_mhz".to_string(), uncertainty),
            ]),
        })
    }
}
