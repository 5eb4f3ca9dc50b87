//! Readout discrimination threshold.
//!
//! The root of every qubit's chain: prepare |0⟩ and |1⟩, sweep the
//! discrimination threshold, and fit the two Gaussian signal distributions.
//! The stored threshold sits midway between the fitted centers, which
//! minimizes assignment error for equal widths.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use statrs::function::erf::erfc;

use super::*;
use crate::classify::Classification;
use crate::fit::levenberg_marquardt;

pub const THRESHOLD: &str = "threshold";
pub const CENTER_0: &str = "readout_c0";
pub const CENTER_1: &str = "readout_c1";
pub const SIGMA: &str = "readout_sigma";
pub const FIDELITY: &str = "assignment_fidelity";

/// P(signal > threshold) for a Gaussian centered at `center`.
pub fn one_probability(threshold: f64, center: f64, sigma: f64) -> f64 {
    0.5 * erfc((threshold - center) / (sigma.abs().max(1e-12) * SQRT_2))
}

/// Mean of the per-state assignment fidelities at `threshold`.
pub fn assignment_fidelity(threshold: f64, c0: f64, c1: f64, sigma: f64) -> f64 {
    0.5 * (1.0 + one_probability(threshold, c1, sigma) - one_probability(threshold, c0, sigma))
}

pub struct ReadoutThreshold;

static CHECKS: [ToleranceCheck; 1] = [ToleranceCheck {
    tolerance: "min_fidelity",
    figure_of_merit: FIDELITY,
    bound: Bound::Min,
}];

fn split(data: &ScanData) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let mut ground = Vec::new();
    let mut excited = Vec::new();
    for ((exp, &x), &y) in data.experiments.iter().zip(&data.abscissa).zip(&data.measured) {
        if let Experiment::ReadoutPrep { excited: true, .. } = exp {
            excited.push((x, y));
        } else {
            ground.push((x, y));
        }
    }
    (ground, excited)
}

/// Threshold at which a falling sigmoid crosses 1/2, by linear
/// interpolation between the bracketing points.
fn half_crossing(points: &[(f64, f64)]) -> f64 {
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if (y0 - 0.5) * (y1 - 0.5) <= 0.0 && y0 != y1 {
            return x0 + (0.5 - y0) * (x1 - x0) / (y1 - y0);
        }
    }
    let mean = points.iter().map(|p| p.0).sum::<f64>() / points.len().max(1) as f64;
    mean
}

impl NodeBehavior for ReadoutThreshold {
    fn name(&self) -> &'static str {
        "readout_threshold"
    }

    fn parameters(&self) -> &'static [&'static str] {
        &[THRESHOLD, CENTER_0, CENTER_1, SIGMA]
    }

    fn tolerance_checks(&self) -> &'static [ToleranceCheck] {
        &CHECKS
    }

    /// Calibration points are absolute thresholds; check points are offsets
    /// from the stored threshold. Each point is measured for both prepared
    /// states, ground first.
    fn experiments(
        &self,
        ctx: &NodeContext,
        scan: &ScanTemplate,
        purpose: ScanPurpose,
    ) -> Result<(Vec<f64>, Vec<Experiment>), BehaviorError> {
        let qubit = ctx.single_qubit()?;
        let base = match purpose {
            ScanPurpose::Calibrate => 0.0,
            ScanPurpose::CheckData => ctx.param(&qubit, THRESHOLD)?,
        };
        let mut xs = Vec::new();
        let mut exps = Vec::new();
        for excited in [false, true] {
            for p in &scan.points {
                let threshold = base + p;
                xs.push(threshold);
                exps.push(Experiment::ReadoutPrep {
                    qubit: qubit.clone(),
                    excited,
                    threshold,
                });
            }
        }
        Ok((xs, exps))
    }

    fn expected_curve(&self, ctx: &NodeContext, experiments: &[Experiment]) -> Result<Vec<f64>, BehaviorError> {
        let qubit = ctx.single_qubit()?;
        let c0 = ctx.param(&qubit, CENTER_0)?;
        let c1 = ctx.param(&qubit, CENTER_1)?;
        let sigma = ctx.param(&qubit, SIGMA)?;
        Ok(experiments
            .iter()
            .map(|e| match e {
                Experiment::ReadoutPrep { excited, threshold, .. } => {
                    one_probability(*threshold, if *excited { c1 } else { c0 }, sigma)
                }
                _ => f64::NAN,
            })
            .collect())
    }

    fn refit_target(&self, ctx: &NodeContext) -> Result<RefitTarget, BehaviorError> {
        let qubit = ctx.single_qubit()?;
        let current = ctx.param(&qubit, THRESHOLD)?;
        let sigma = ctx.param(&qubit, SIGMA)?;
        Ok(RefitTarget {
            scope: qubit,
            name: THRESHOLD,
            current,
            lo: current - 2.0 * sigma,
            hi: current + 2.0 * sigma,
        })
    }

    fn deviation(&self, current: f64, fitted: f64) -> (&'static str, f64) {
        ("threshold_shift", (fitted - current).abs())
    }

    /// No discrimination between the prepared states is bad data; otherwise
    /// the measured fidelity at the stored threshold decides.
    fn analyze_check(
        &self,
        ctx: &NodeContext,
        data: &ScanData,
        tolerance: &BTreeMap<String, f64>,
    ) -> Result<CheckDataOutcome, BehaviorError> {
        let qubit = ctx.single_qubit()?;
        let stored = ctx.param(&qubit, THRESHOLD)?;
        let (ground, excited) = split(data);
        let mean = |v: &[(f64, f64)]| v.iter().map(|p| p.1).sum::<f64>() / v.len().max(1) as f64;
        let separation = mean(&excited) - mean(&ground);
        let threshold = noise_threshold(&data.measured, data.shots);

        let mut foms = BTreeMap::from([
            ("separation".to_string(), separation),
            ("noise_threshold".to_string(), threshold),
        ]);
        if separation <= threshold {
            return Ok(CheckDataOutcome::bad_data(foms));
        }
        let nearest = |v: &[(f64, f64)]| {
            v.iter()
                .min_by(|a, b| (a.0 - stored).abs().total_cmp(&(b.0 - stored).abs()))
                .map_or(0.0, |p| p.1)
        };
        let fidelity = 0.5 * (1.0 + nearest(&excited) - nearest(&ground));
        foms.insert(FIDELITY.to_string(), fidelity);
        let classification = if within_tolerance(&CHECKS, &foms, tolerance) {
            Classification::InSpec
        } else {
            Classification::OutOfSpec
        };
        Ok(CheckDataOutcome {
            classification,
            figures_of_merit: foms,
            fitted_shift: None,
        })
    }

    fn analyze_calibrate(
        &self,
        _ctx: &NodeContext,
        data: &ScanData,
        _tolerance: &BTreeMap<String, f64>,
    ) -> Result<CalibrationAnalysis, BehaviorError> {
        let (ground, excited) = split(data);
        if ground.len() < 3 || excited.len() < 3 {
            return Ok(CalibrationAnalysis::BadData {
                reason: "too few threshold points".into(),
            });
        }
        let step = (ground[1].0 - ground[0].0).abs().max(1e-6);
        let init = [half_crossing(&ground), half_crossing(&excited), 2.0 * step];
        let n0 = ground.len();
        let ys: Vec<f64> = ground.iter().chain(&excited).map(|p| p.1).collect();
        let ts: Vec<f64> = ground.iter().chain(&excited).map(|p| p.0).collect();
        let idx: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
        let fit = levenberg_marquardt(
            &idx,
            &ys,
            &init,
            |i, p| {
                let i = i as usize;
                let center = if i < n0 { p[0] } else { p[1] };
                one_probability(ts[i], center, p[2])
            },
            200,
        )?;
        let noise = noise_threshold(&data.measured, data.shots);
        if fit.residual_rms > noise {
            return Ok(CalibrationAnalysis::BadData {
                reason: format!("residual {:.4} above noise threshold {:.4}", fit.residual_rms, noise),
            });
        }
        let (c0, c1, sigma) = (fit.params[0], fit.params[1], fit.params[2].abs());
        let threshold = 0.5 * (c0 + c1);
        let fidelity = assignment_fidelity(threshold, c0, c1, sigma);
        Ok(CalibrationAnalysis::Proposed {
            params: BTreeMap::from([
                (THRESHOLD.to_string(), threshold),
                (CENTER_0.to_string(), c0),
                (CENTER_1.to_string(), c1),
                (SIGMA.to_string(), sigma),
            ]),
            figures_of_merit: BTreeMap::from([(FIDELITY.to_string(), fidelity)]),
        })
    }
}
