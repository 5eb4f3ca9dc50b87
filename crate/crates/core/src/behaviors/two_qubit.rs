//! Conditional-phase gate time for a coupled pair `name.qT-qC`: the first
//! qubit of the id is measured, the second is the control.

use std::collections::BTreeMap;

use super::*;
use crate::fit::{cosine_initial_guess, fit_cosine};

pub const CZ_TIME: &str = "cz_time_ns";

static CHECKS: [ToleranceCheck; 1] = [ToleranceCheck {
    tolerance: "max_rel_error",
    figure_of_merit: "rel_error",
    bound: Bound::Max,
}];

pub struct TwoQubitPhase;

fn pair(ctx: &NodeContext) -> Result<(String, String), BehaviorError> {
    match ctx.qubits().as_slice() {
        [t, c] => Ok(((*t).to_owned(), (*c).to_owned())),
        _ => Err(BehaviorError::InvalidNode {
            node: ctx.node.clone(),
            reason: "expected a pair id like name.q0-q1".into(),
        }),
    }
}

fn interactions(exps: &[Experiment]) -> Vec<f64> {
    exps.iter()
        .map(|e| match e {
            Experiment::ConditionalPhase { interaction_ns, .. } => *interaction_ns,
            _ => f64::NAN,
        })
        .collect()
}

impl NodeBehavior for TwoQubitPhase {
    fn name(&self) -> &'static str {
        "two_qubit_phase"
    }

    fn parameters(&self) -> &'static [&'static str] {
        &[CZ_TIME]
    }

    fn tolerance_checks(&self) -> &'static [ToleranceCheck] {
        &CHECKS
    }

    /// Calibration points are absolute interaction times in ns; check
    /// points are multiples of the stored gate time.
    fn experiments(
        &self,
        ctx: &NodeContext,
        scan: &ScanTemplate,
        purpose: ScanPurpose,
    ) -> Result<(Vec<f64>, Vec<Experiment>), BehaviorError> {
        let (target, control) = pair(ctx)?;
        let xs: Vec<f64> = match purpose {
            ScanPurpose::Calibrate => scan.points.clone(),
            ScanPurpose::CheckData => {
                let cz = ctx.param(ctx.scope(), CZ_TIME)?;
                scan.points.iter().map(|p| p * cz).collect()
            }
        };
        let control_drive_ghz = ctx.param(&control, spectroscopy::F_DRIVE)?;
        let control_pi_ns = ctx.param(&control, rabi::PI_LENGTH)?;
        let target_drive_ghz = ctx.param(&target, spectroscopy::F_DRIVE)?;
        let target_pi_ns = ctx.param(&target, rabi::PI_LENGTH)?;
        let threshold = ctx.param(&target, readout::THRESHOLD)?;
        let exps = xs
            .iter()
            .map(|&interaction_ns| Experiment::ConditionalPhase {
                control: control.clone(),
                target: target.clone(),
                control_drive_ghz,
                control_pi_ns,
                target_drive_ghz,
                target_pi_ns,
                interaction_ns,
                threshold,
            })
            .collect();
        Ok((xs, exps))
    }

    fn expected_curve(&self, ctx: &NodeContext, experiments: &[Experiment]) -> Result<Vec<f64>, BehaviorError> {
        let (target, _) = pair(ctx)?;
        let cz = ctx.param(ctx.scope(), CZ_TIME)?;
        let ro = ReadoutModel::from_context(ctx, &target)?;
        Ok(interactions(experiments)
            .into_iter()
            .map(|t| ro.measured((std::f64::consts::PI * t / (2.0 * cz)).sin().powi(2)))
            .collect())
    }

    fn refit_target(&self, ctx: &NodeContext) -> Result<RefitTarget, BehaviorError> {
        let cz = ctx.param(ctx.scope(), CZ_TIME)?;
        Ok(RefitTarget {
            scope: ctx.scope().to_owned(),
            name: CZ_TIME,
            current: cz,
            lo: 0.7 * cz,
            hi: 1.3 * cz,
        })
    }

    fn deviation(&self, current: f64, fitted: f64) -> (&'static str, f64) {
        ("rel_error", (fitted / current - 1.0).abs())
    }

    fn analyze_calibrate(
        &self,
        ctx: &NodeContext,
        data: &ScanData,
        _tolerance: &BTreeMap<String, f64>,
    ) -> Result<CalibrationAnalysis, BehaviorError> {
        let (target, _) = pair(ctx)?;
        let ro = ReadoutModel::from_context(ctx, &target)?;
        let x = interactions(&data.experiments);
        let y = &data.measured;
        if x.len() < 5 {
            return Ok(CalibrationAnalysis::BadData {
                reason: "too few interaction points".into(),
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
                reason: format!("phase fringe amplitude {:.3} too small", 2.0 * amp),
            });
        }
        if fit.residual_rms > noise {
            return Ok(CalibrationAnalysis::BadData {
                reason: format!("residual {:.4} above noise threshold {:.4}", fit.residual_rms, noise),
            });
        }
        let sigma_f = fit.std_error(2).unwrap_or(f64::INFINITY);
        Ok(CalibrationAnalysis::Proposed {
            params: BTreeMap::from([(CZ_TIME.to_string(), 0.5 / f)]),
            figures_of_merit: BTreeMap::from([("rel_error".to_string(), 3.0 * sigma_f / f)]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::classify::Classification;

    fn ctx() -> NodeContext {
        NodeContext::new("two_qubit_phase.q0-q1".into(), ideal_view())
    }

    fn tol() -> BTreeMap<String, f64> {
        BTreeMap::from([("max_rel_error".to_string(), 0.02)])
    }

    #[test]
    fn noiseless_round_trip() {
        let grid = scan(linspace(0.0, 120.0, 25), 2000);
        let data = truth_data(&ideal_device(), &TwoQubitPhase, &ctx(), &grid, ScanPurpose::Calibrate);
        let CalibrationAnalysis::Proposed { params, .. } = TwoQubitPhase.analyze_calibrate(&ctx(), &data, &tol()).unwrap() else {
            panic!()
        };
        assert!((params[CZ_TIME] - 40.0).abs() / 40.0 < 1e-6);
    }

    #[test]
    fn check_three_ways() {
        let check = scan(vec![0.5, 1.0, 1.5, 2.0, 2.5], 1000);
        let data = self_generated(&TwoQubitPhase, &ctx(), &check, ScanPurpose::CheckData);
        assert_eq!(TwoQubitPhase.analyze_check(&ctx(), &data, &tol()).unwrap().classification, Classification::InSpec);

        let mut off = data.clone();
        off.measured = TwoQubitPhase
            .expected_curve(&ctx().with_param("q0-q1", CZ_TIME, 42.0), &data.experiments)
            .unwrap();
        let out = TwoQubitPhase.analyze_check(&ctx(), &off, &tol()).unwrap();
        assert_eq!(out.classification, Classification::OutOfSpec);
        assert!((out.figures_of_merit["rel_error"] - 0.05).abs() < 1e-4);

        let mut flat = data.clone();
        flat.measured = vec![0.5; 5];
        assert_eq!(TwoQubitPhase.analyze_check(&ctx(), &flat, &tol()).unwrap().classification, Classification::BadData);
    }

    #[test]
    fn single_qubit_id_is_rejected() {
        let c = NodeContext::new("two_qubit_phase.q0".into(), ideal_view());
        assert!(matches!(
            TwoQubitPhase.experiments(&c, &scan(vec![1.0], 10), ScanPurpose::CheckData),
            Err(BehaviorError::InvalidNode { .. })
        ));
    }
}
