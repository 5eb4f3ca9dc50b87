//! Simulated multi-qubit device.
//!
//! Holds hidden ground-truth parameters, a virtual clock, a seeded RNG and
//! the drift and fault processes. Nothing outside this module draws random
//! numbers, so a seed plus a sequence of calls fully determines every
//! measurement.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

/// Saturation spectroscopy peaks at half population.
const SPECTROSCOPY_PEAK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("unknown qubit {0}")]
    UnknownQubit(String),
    #[error("unknown device parameter {0}")]
    UnknownTarget(String),
    #[error("invalid device config: {0}")]
    InvalidConfig(String),
}

/// Hidden truth for one qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitTruth {
    pub label: String,
    pub f_q_ghz: f64,
    /// Ω/2π at the reference drive amplitude.
    pub rabi_rate_mhz: f64,
    /// Means of the readout signal for |0⟩ and |1⟩.
    pub readout_centers: (f64, f64),
    pub readout_sigma: f64,
    /// Contrast decay time for long pulse sequences; infinite disables it.
    pub t2_like_decay_ns: f64,
    /// Half width at half maximum of the spectroscopy line.
    pub linewidth_mhz: f64,
}

impl QubitTruth {
    pub fn pi_length_ns(&self) -> f64 {
        500.0 / self.rabi_rate_mhz
    }

    /// Probability of reading `1` given the qubit is in |0⟩ or |1⟩.
    pub fn readout_one_probability(&self, excited: bool, threshold: f64) -> f64 {
        let center = if excited { self.readout_centers.1 } else { self.readout_centers.0 };
        0.5 * erfc((threshold - center) / (self.readout_sigma * SQRT_2))
    }
}

/// Excited-state population after `repeats` identical square pulses.
///
/// Repeated rotations about one axis compose into a single rotation by the
/// summed angle, damped toward 1/2 by `exp(-total / t2)`.
pub fn excited_probability(truth: &QubitTruth, drive_ghz: f64, duration_ns: f64, repeats: u32) -> f64 {
    let detuning = 2.0 * PI * (drive_ghz - truth.f_q_ghz); // rad/ns
    let rabi = 2.0 * PI * truth.rabi_rate_mhz * 1e-3; // rad/ns
    let eff_sq = rabi * rabi + detuning * detuning;
    let total = duration_ns * f64::from(repeats.max(1));
    let coherent = rabi * rabi / eff_sq * (eff_sq.sqrt() * total / 2.0).sin().powi(2);
    let envelope = (-total / truth.t2_like_decay_ns).exp();
    (0.5 + (coherent - 0.5) * envelope).clamp(0.0, 1.0)
}

/// Lorentzian response of a weak, long drive.
pub fn spectroscopy_probability(truth: &QubitTruth, drive_ghz: f64) -> f64 {
    let delta_mhz = (drive_ghz - truth.f_q_ghz) * 1e3;
    let w = truth.linewidth_mhz;
    SPECTROSCOPY_PEAK * w * w / (w * w + delta_mhz * delta_mhz)
}

/// One experiment: fixed waveforms followed by a measurement of
/// `measured_qubit` using `threshold` to discriminate 0 from 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    /// Prepare |0⟩ or |1⟩ and measure.
    ReadoutPrep { qubit: String, excited: bool, threshold: f64 },
    Spectroscopy { qubit: String, drive_ghz: f64, threshold: f64 },
    Rabi {
        qubit: String,
        drive_ghz: f64,
        duration_ns: f64,
        repeats: u32,
        threshold: f64,
    },
    /// Excite the control with its pi pulse, run a phase sequence on the
    /// target for `interaction_ns`, measure the target.
    ConditionalPhase {
        control: String,
        target: String,
        control_drive_ghz: f64,
        control_pi_ns: f64,
        target_drive_ghz: f64,
        target_pi_ns: f64,
        interaction_ns: f64,
        threshold: f64,
    },
}

impl Experiment {
    pub fn measured_qubit(&self) -> &str {
        match self {
            Experiment::ReadoutPrep { qubit, .. }
            | Experiment::Spectroscopy { qubit, .. }
            | Experiment::Rabi { qubit, .. } => qubit,
            Experiment::ConditionalPhase { target, .. } => target,
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            Experiment::ReadoutPrep { threshold, .. }
            | Experiment::Spectroscopy { threshold, .. }
            | Experiment::Rabi { threshold, .. }
            | Experiment::ConditionalPhase { threshold, .. } => *threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualClock {
    now: f64,
    /// Seconds per shot.
    pub experiment_cost: f64,
}

impl VirtualClock {
    pub fn new(experiment_cost: f64) -> Self {
        Self { now: 0.0, experiment_cost }
    }

    pub fn starting_at(now: f64, experiment_cost: f64) -> Self {
        Self { now, experiment_cost }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    fn advance(&mut self, dt: f64) {
        debug_assert!(dt >= 0.0, "clock cannot run backwards (dt = {dt})");
        self.now += dt.max(0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jump {
    pub time_s: f64,
    /// Device parameter path, e.g. `q0.f_q_ghz`.
    pub param: String,
    pub delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DriftConfig {
    /// Random-walk step in parameter units per sqrt(second).
    pub steps: BTreeMap<String, f64>,
    pub jumps: Vec<Jump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitConfig {
    pub label: String,
    pub f_q_ghz: f64,
    pub rabi_rate_mhz: f64,
    pub readout_sep_sigma: f64,
    /// Absent means no decay.
    #[serde(default)]
    pub t2_us: Option<f64>,
    #[serde(default = "default_linewidth")]
    pub linewidth_mhz: f64,
}

fn default_linewidth() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub control: String,
    pub target: String,
    pub cz_time_ns: f64,
}

/// Device description as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub seed: u64,
    #[serde(default = "default_cost")]
    pub experiment_cost_s: f64,
    pub qubits: Vec<QubitConfig>,
    #[serde(default)]
    pub couplings: Vec<CouplingConfig>,
    #[serde(default)]
    pub drift: BTreeMap<String, f64>,
    #[serde(default)]
    pub jumps: Vec<Jump>,
}

fn default_cost() -> f64 {
    1e-4
}

impl Default for DeviceConfig {
    /// Two qubits with a coupler; no drift.
    fn default() -> Self {
        Self {
            seed: 42,
            experiment_cost_s: default_cost(),
            qubits: vec![
                QubitConfig {
                    label: "q0".into(),
                    f_q_ghz: 5.0,
                    rabi_rate_mhz: 25.0,
                    readout_sep_sigma: 4.0,
                    t2_us: Some(10.0),
                    linewidth_mhz: default_linewidth(),
                },
                QubitConfig {
                    label: "q1".into(),
                    f_q_ghz: 5.8,
                    rabi_rate_mhz: 20.0,
                    readout_sep_sigma: 4.0,
                    t2_us: Some(10.0),
                    linewidth_mhz: default_linewidth(),
                },
            ],
            couplings: vec![CouplingConfig {
                control: "q1".into(),
                target: "q0".into(),
                cz_time_ns: 40.0,
            }],
            drift: BTreeMap::new(),
            jumps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub control: String,
    pub target: String,
    pub cz_time_ns: f64,
}

#[derive(Debug, Clone)]
pub struct Device {
    qubits: Vec<QubitTruth>,
    couplings: Vec<Coupling>,
    drift: DriftConfig,
    jumps_applied: Vec<bool>,
    clock: VirtualClock,
    rng: ChaCha8Rng,
    experiments_run: u64,
    flatline: bool,
}

impl Device {
    pub fn from_config(config: &DeviceConfig) -> Result<Self, DeviceError> {
        let invalid = |m: String| DeviceError::InvalidConfig(m);
        if !(config.experiment_cost_s >= 0.0) {
            return Err(invalid("experiment_cost_s must be non-negative".into()));
        }
        let mut qubits: Vec<QubitTruth> = Vec::new();
        for q in &config.qubits {
            if qubits.iter().any(|o| o.label == q.label) {
                return Err(invalid(format!("duplicate qubit {}", q.label)));
            }
            if !(q.rabi_rate_mhz > 0.0) || !(q.linewidth_mhz > 0.0) || !(q.readout_sep_sigma >= 0.0) {
                return Err(invalid(format!("qubit {} has non-physical parameters", q.label)));
            }
            qubits.push(QubitTruth {
                label: q.label.clone(),
                f_q_ghz: q.f_q_ghz,
                rabi_rate_mhz: q.rabi_rate_mhz,
                readout_centers: (0.0, q.readout_sep_sigma),
                readout_sigma: 1.0,
                t2_like_decay_ns: q.t2_us.map_or(f64::INFINITY, |t| t * 1e3),
                linewidth_mhz: q.linewidth_mhz,
            });
        }
        let couplings = config
            .couplings
            .iter()
            .map(|c| Coupling {
                control: c.control.clone(),
                target: c.target.clone(),
                cz_time_ns: c.cz_time_ns,
            })
            .collect();
        let mut device = Self {
            qubits,
            couplings,
            drift: DriftConfig {
                steps: config.drift.clone(),
                jumps: config.jumps.clone(),
            },
            jumps_applied: vec![false; config.jumps.len()],
            clock: VirtualClock::new(config.experiment_cost_s),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            experiments_run: 0,
            flatline: false,
        };
        for (name, &step) in &config.drift {
            if !(step >= 0.0) {
                return Err(invalid(format!("drift step for {name} must be >= 0")));
            }
            device.param_mut(name)?;
        }
        for j in &config.jumps {
            device.param_mut(&j.param)?;
        }
        Ok(device)
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    /// Moves the clock forward to `now` without drift, e.g. when resuming
    /// from a snapshot taken later than the device's current time.
    pub fn resume_at(&mut self, now: f64) {
        if now > self.clock.now {
            self.clock.now = now;
        }
    }

    /// Total scan points executed since construction.
    pub fn experiments_run(&self) -> u64 {
        self.experiments_run
    }

    pub fn qubit(&self, label: &str) -> Result<&QubitTruth, DeviceError> {
        self.qubits
            .iter()
            .find(|q| q.label == label)
            .ok_or_else(|| DeviceError::UnknownQubit(label.to_owned()))
    }

    pub fn qubits(&self) -> &[QubitTruth] {
        &self.qubits
    }

    pub fn coupling(&self, control: &str, target: &str) -> Result<&Coupling, DeviceError> {
        self.couplings
            .iter()
            .find(|c| (c.control == control && c.target == target) || (c.control == target && c.target == control))
            .ok_or_else(|| DeviceError::UnknownQubit(format!("{control}-{target}")))
    }

    /// Reads a truth parameter by path (`q0.f_q_ghz`, `q1-q0.cz_time_ns`).
    pub fn param(&self, path: &str) -> Result<f64, DeviceError> {
        self.clone().param_mut(path).map(|v| *v)
    }

    fn param_mut(&mut self, path: &str) -> Result<&mut f64, DeviceError> {
        let unknown = || DeviceError::UnknownTarget(path.to_owned());
        let (owner, name) = path.split_once('.').ok_or_else(unknown)?;
        if let Some((control, target)) = owner.split_once('-') {
            let c = self
                .couplings
                .iter_mut()
                .find(|c| (c.control == control && c.target == target) || (c.control == target && c.target == control))
                .ok_or_else(unknown)?;
            return match name {
                "cz_time_ns" => Ok(&mut c.cz_time_ns),
                _ => Err(unknown()),
            };
        }
        let q = self.qubits.iter_mut().find(|q| q.label == owner).ok_or_else(unknown)?;
        match name {
            "f_q_ghz" => Ok(&mut q.f_q_ghz),
            "rabi_rate_mhz" => Ok(&mut q.rabi_rate_mhz),
            "linewidth_mhz" => Ok(&mut q.linewidth_mhz),
            _ => Err(unknown()),
        }
    }

    /// Directly shifts a truth parameter.
    pub fn shift_param(&mut self, path: &str, delta: f64) -> Result<(), DeviceError> {
        *self.param_mut(path)? += delta;
        Ok(())
    }

    /// Makes every measurement a fair coin regardless of the qubit state.
    pub fn set_flatline_readout(&mut self, on: bool) {
        self.flatline = on;
    }

    pub fn flatline_readout(&self) -> bool {
        self.flatline
    }

    /// Advances virtual time, applying scheduled jumps that fall in the
    /// window and a Gaussian random-walk step to each drifting parameter.
    pub fn advance_and_drift(&mut self, dt: f64) {
        let dt = dt.max(0.0);
        if dt == 0.0 {
            return;
        }
        self.clock.advance(dt);
        let now = self.clock.now();
        for (i, jump) in self.drift.jumps.clone().iter().enumerate() {
            if !self.jumps_applied[i] && jump.time_s <= now {
                self.jumps_applied[i] = true;
                // validated at construction
                *self.param_mut(&jump.param).expect("validated jump target") += jump.delta;
            }
        }
        let steps: Vec<(String, f64)> = self
            .drift
            .steps
            .iter()
            .filter(|(_, &s)| s > 0.0)
            .map(|(k, &s)| (k.clone(), s))
            .collect();
        for (path, step) in steps {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *self.param_mut(&path).expect("validated drift target") += step * dt.sqrt() * z;
        }
    }

    /// Noise-free probability of reading `1` for one experiment.
    pub fn measured_probability(&self, exp: &Experiment) -> Result<f64, DeviceError> {
        let q = self.qubit(exp.measured_qubit())?;
        let excited = self.excited_population(exp)?;
        if self.flatline {
            return Ok(0.5);
        }
        let p1 = q.readout_one_probability(true, exp.threshold());
        let p0 = q.readout_one_probability(false, exp.threshold());
        Ok(excited * p1 + (1.0 - excited) * p0)
    }

    fn excited_population(&self, exp: &Experiment) -> Result<f64, DeviceError> {
        Ok(match exp {
            Experiment::ReadoutPrep { qubit, excited, .. } => {
                self.qubit(qubit)?;
                if *excited {
                    1.0
                } else {
                    0.0
                }
            }
            Experiment::Spectroscopy { qubit, drive_ghz, .. } => {
                spectroscopy_probability(self.qubit(qubit)?, *drive_ghz)
            }
            Experiment::Rabi {
                qubit,
                drive_ghz,
                duration_ns,
                repeats,
                ..
            } => excited_probability(self.qubit(qubit)?, *drive_ghz, *duration_ns, *repeats),
            Experiment::ConditionalPhase {
                control,
                target,
                control_drive_ghz,
                control_pi_ns,
                target_drive_ghz,
                target_pi_ns,
                interaction_ns,
                ..
            } => {
                let coupling = self.coupling(control, target)?;
                let pc = excited_probability(self.qubit(control)?, *control_drive_ghz, *control_pi_ns, 1);
                let pt = excited_probability(self.qubit(target)?, *target_drive_ghz, *target_pi_ns, 1);
                let phase = PI * interaction_ns / coupling.cz_time_ns;
                pc * pt * (phase / 2.0).sin().powi(2)
            }
        })
    }

    /// Runs each experiment `shots` times and returns the fraction of `1`
    /// outcomes per experiment. Charges the clock for every shot.
    pub fn execute_scan(&mut self, experiments: &[Experiment], shots: u32) -> Result<Vec<f64>, DeviceError> {
        let mut out = Vec::with_capacity(experiments.len());
        for exp in experiments {
            let q = self.qubit(exp.measured_qubit())?.clone();
            let excited = self.excited_population(exp)?;
            let n = u64::from(shots);
            let ones = if self.flatline {
                draw(&mut self.rng, n, 0.5)
            } else {
                let k = draw(&mut self.rng, n, excited);
                draw(&mut self.rng, k, q.readout_one_probability(true, exp.threshold()))
                    + draw(&mut self.rng, n - k, q.readout_one_probability(false, exp.threshold()))
            };
            out.push(ones as f64 / shots.max(1) as f64);
            self.experiments_run += 1;
            let cost = f64::from(shots) * self.clock.experiment_cost;
            self.advance_and_drift(cost);
        }
        Ok(out)
    }
}

fn draw(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    if n == 0 {
        return 0;
    }
    let p = p.clamp(0.0, 1.0);
    Binomial::new(n, p).expect("p clamped to [0, 1]").sample(rng)
}
