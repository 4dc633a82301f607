//! Franson two-interferometer analyser, phenomenologically.
//!
//! Each photon of a pair enters an unbalanced Michelson interferometer with
//! a short and a long arm. Half of the light returns towards the source and
//! is lost, so each photon reaches its detector with probability 1/2, via
//! either arm with equal weight. Of the four joint path combinations the
//! short-short and long-long ones are indistinguishable and interfere with
//! phase `phi_a + phi_b`; the mixed ones form the phase-independent
//! satellite peaks at `t_b - t_a = ±Δτ`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FransonError {
    #[error("intrinsic visibility {0} outside [0, 1]")]
    InvalidVisibility(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceSpec {
    /// Single-photon coherence time after DWDM filtering.
    pub tau_s: f64,
    /// Biphoton coherence time, set by the pump laser.
    pub pump_coherence_s: f64,
}

impl Default for CoherenceSpec {
    fn default() -> Self {
        Self { tau_s: 10e-12, pump_coherence_s: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UmiSpec {
    /// Travel-time difference between the long and short arm.
    pub delta_tau_s: f64,
    pub phase: f64,
}

impl Default for UmiSpec {
    fn default() -> Self {
        Self { delta_tau_s: 340e-12, phase: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum TimingViolation {
    /// Path difference is not shorter than the biphoton coherence time.
    ExceedsPumpCoherence { arm: char, delta_tau_s: f64, pump_coherence_s: f64 },
    /// Path difference does not exceed the single-photon coherence time.
    SinglePhotonInterference { arm: char, delta_tau_s: f64, tau_s: f64 },
    /// The two path differences are not matched well inside `tau`.
    Mismatch { difference_s: f64, tolerance_s: f64 },
}

/// `|Δτ_a - Δτ_b| ≪ τ` is read as `≤ τ / MISMATCH_FACTOR`.
pub const MISMATCH_FACTOR: f64 = 10.0;

pub fn validate_timing(umi_a: &UmiSpec, umi_b: &UmiSpec, c: &CoherenceSpec) -> Vec<TimingViolation> {
    validate_timing_with(umi_a, umi_b, c, MISMATCH_FACTOR)
}

pub fn validate_timing_with(
    umi_a: &UmiSpec,
    umi_b: &UmiSpec,
    c: &CoherenceSpec,
    mismatch_factor: f64,
) -> Vec<TimingViolation> {
    let mut out = Vec::new();
    for (arm, umi) in [('a', umi_a), ('b', umi_b)] {
        if umi.delta_tau_s >= c.pump_coherence_s {
            out.push(TimingViolation::ExceedsPumpCoherence {
                arm,
                delta_tau_s: umi.delta_tau_s,
                pump_coherence_s: c.pump_coherence_s,
            });
        }
        if umi.delta_tau_s <= c.tau_s {
            out.push(TimingViolation::SinglePhotonInterference { arm, delta_tau_s: umi.delta_tau_s, tau_s: c.tau_s });
        }
    }
    let difference_s = (umi_a.delta_tau_s - umi_b.delta_tau_s).abs();
    let tolerance_s = c.tau_s / mismatch_factor;
    if difference_s > tolerance_s {
        out.push(TimingViolation::Mismatch { difference_s, tolerance_s });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    CentralInterfering,
    /// Alice long, Bob short: `t_b - t_a = -Δτ`.
    SatelliteEarly,
    /// Alice short, Bob long: `t_b - t_a = +Δτ`.
    SatelliteLate,
    /// At least one photon leaves through an undetected port.
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOutcome {
    pub kind: OutcomeKind,
    pub delay_a_s: f64,
    pub delay_b_s: f64,
}

/// Probabilities that both photons reach the detectors, by path combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTable {
    pub central: f64,
    pub satellite_early: f64,
    pub satellite_late: f64,
    pub lost: f64,
}

impl OutcomeTable {
    pub fn total(&self) -> f64 {
        self.central + self.satellite_early + self.satellite_late + self.lost
    }

    pub fn detected(&self) -> f64 {
        self.central + self.satellite_early + self.satellite_late
    }

    pub fn probability(&self, kind: OutcomeKind) -> f64 {
        match kind {
            OutcomeKind::CentralInterfering => self.central,
            OutcomeKind::SatelliteEarly => self.satellite_early,
            OutcomeKind::SatelliteLate => self.satellite_late,
            OutcomeKind::Lost => self.lost,
        }
    }

    /// Short-short and long-long share the central weight equally.
    pub fn central_short_short(&self) -> f64 {
        self.central / 2.0
    }

    pub fn central_long_long(&self) -> f64 {
        self.central / 2.0
    }
}

fn check_v0(v0: f64) -> Result<(), FransonError> {
    if (0.0..=1.0).contains(&v0) {
        Ok(())
    } else {
        Err(FransonError::InvalidVisibility(v0))
    }
}

pub fn outcome_distribution(phi_sum: f64, v0: f64) -> Result<OutcomeTable, FransonError> {
    check_v0(v0)?;
    let central = (1.0 + v0 * phi_sum.cos()) / 8.0;
    let satellite = 1.0 / 16.0;
    Ok(OutcomeTable {
        central,
        satellite_early: satellite,
        satellite_late: satellite,
        lost: 1.0 - central - 2.0 * satellite,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Path {
    Short,
    Long,
}

/// Where each photon of a pair ends up: `None` for the undetected port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairFate {
    pub alice: Option<Path>,
    pub bob: Option<Path>,
}

/// Joint port-and-path distribution including the events in which only one
/// photon reaches a detector. Marginally each photon exits the detected port
/// with probability 1/2, independent of phase.
#[derive(Debug, Clone)]
pub struct FateSampler {
    cells: [(PairFate, f64); 9],
}

impl FateSampler {
    pub fn new(phi_sum: f64, v0: f64) -> Result<Self, FransonError> {
        let table = outcome_distribution(phi_sum, v0)?;
        // Alice detected, Bob in the other port: the central amplitudes
        // interfere with opposite sign.
        let alice_only = 0.25 - v0 * phi_sum.cos() / 8.0;
        let bob_only = alice_only;
        let neither = 1.0 - table.detected() - alice_only - bob_only;
        use Path::*;
        let f = |a, b| PairFate { alice: a, bob: b };
        Ok(Self {
            cells: [
                (f(Some(Short), Some(Short)), table.central_short_short()),
                (f(Some(Long), Some(Long)), table.central_long_long()),
                (f(Some(Long), Some(Short)), table.satellite_early),
                (f(Some(Short), Some(Long)), table.satellite_late),
                (f(Some(Short), None), alice_only / 2.0),
                (f(Some(Long), None), alice_only / 2.0),
                (f(None, Some(Short)), bob_only / 2.0),
                (f(None, Some(Long)), bob_only / 2.0),
                (f(None, None), neither.max(0.0)),
            ],
        })
    }

    pub fn cells(&self) -> &[(PairFate, f64)] {
        &self.cells
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PairFate {
        let mut u: f64 = rng.random();
        for (fate, p) in &self.cells {
            if u < *p {
                return *fate;
            }
            u -= p;
        }
        self.cells[8].0
    }
}

/// Map a fate onto the coarse outcome classes.
pub fn classify(fate: PairFate, umi_a: &UmiSpec, umi_b: &UmiSpec) -> PairOutcome {
    let delay = |p: Path, umi: &UmiSpec| match p {
        Path::Short => 0.0,
        Path::Long => umi.delta_tau_s,
    };
    match (fate.alice, fate.bob) {
        (Some(a), Some(b)) => PairOutcome {
            kind: match (a, b) {
                (Path::Long, Path::Short) => OutcomeKind::SatelliteEarly,
                (Path::Short, Path::Long) => OutcomeKind::SatelliteLate,
                _ => OutcomeKind::CentralInterfering,
            },
            delay_a_s: delay(a, umi_a),
            delay_b_s: delay(b, umi_b),
        },
        _ => PairOutcome { kind: OutcomeKind::Lost, delay_a_s: 0.0, delay_b_s: 0.0 },
    }
}

/// Wrap a phase into `[0, 2π)`.
pub fn wrap_phase(phi: f64) -> f64 {
    phi.rem_euclid(2.0 * PI)
}
