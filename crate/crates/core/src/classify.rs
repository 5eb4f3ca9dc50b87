//! Three-way classification of a small check scan.
//!
//! Data is compared with the curve predicted from the stored parameters,
//! then the node's target parameter is refit inside a window. A refit that
//! still leaves residuals above the shot-noise threshold means the data is
//! not on the expected curve family at all (bad data). Otherwise the refit
//! shift decides between in spec and out of spec.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::behaviors::{noise_threshold, within_tolerance, BehaviorError, NodeBehavior, NodeContext, ScanData};
use crate::fit::{minimize_scalar, residual_rms};

const REFIT_GRID: usize = 241;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    InSpec,
    OutOfSpec,
    BadData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckDataOutcome {
    pub classification: Classification,
    pub figures_of_merit: BTreeMap<String, f64>,
    /// Refit value minus stored value. Never set for bad data.
    pub fitted_shift: Option<f64>,
}

impl CheckDataOutcome {
    pub fn bad_data(figures_of_merit: BTreeMap<String, f64>) -> Self {
        Self {
            classification: Classification::BadData,
            figures_of_merit,
            fitted_shift: None,
        }
    }
}

pub fn classify_check_data<B: NodeBehavior + ?Sized>(
    behavior: &B,
    ctx: &NodeContext,
    data: &ScanData,
    tolerance: &BTreeMap<String, f64>,
) -> Result<CheckDataOutcome, BehaviorError> {
    let target = behavior.refit_target(ctx)?;
    let threshold = noise_threshold(&data.measured, data.shots);

    let expected_now = behavior.expected_curve(ctx, &data.experiments)?;
    let rms_now = residual_rms(&data.measured, &expected_now);

    let cost = |v: f64| -> f64 {
        let hypothesis = ctx.with_param(&target.scope, target.name, v);
        match behavior.expected_curve(&hypothesis, &data.experiments) {
            Ok(pred) => residual_rms(&data.measured, &pred),
            Err(_) => f64::INFINITY,
        }
    };
    let (mut fitted, mut rms_fit) = minimize_scalar(cost, target.lo, target.hi, REFIT_GRID);
    // the stored value is always a candidate
    if rms_now <= rms_fit {
        fitted = target.current;
        rms_fit = rms_now;
    }

    let mut foms = BTreeMap::from([
        ("residual_rms".to_string(), rms_fit),
        ("noise_threshold".to_string(), threshold),
    ]);
    if rms_fit > threshold {
        return Ok(CheckDataOutcome::bad_data(foms));
    }

    let (name, value) = behavior.deviation(target.current, fitted);
    foms.insert(name.to_string(), value);
    let classification = if within_tolerance(behavior.tolerance_checks(), &foms, tolerance) {
        Classification::InSpec
    } else {
        Classification::OutOfSpec
    };
    Ok(CheckDataOutcome {
        classification,
        figures_of_merit: foms,
        fitted_shift: Some(fitted - target.current),
    })
}
