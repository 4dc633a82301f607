//! Named operating points. Every number used by reproduction runs lives here.

use serde::{Deserialize, Serialize};

use crate::budget::{DarkProbs, DetectorSpec, LinkBudget};
use crate::franson::{CoherenceSpec, UmiSpec};
use crate::grid::build_plan;
use crate::montecarlo::{EmissionMode, Schedule, SimConfig};

/// Bumped whenever a preset value changes.
pub const PRESET_VERSION: u32 = 1;

pub const WINDOW_S: f64 = 250e-12;
/// Dark count probability per window, both detectors.
pub const DARK_PROBABILITY: f64 = 2.5e-7;
pub const BASELINE_LOSS_DB: f64 = 11.0;
/// Extra per-arm loss of the 150 km link.
pub const KM150_EXTRA_LOSS_DB: f64 = 16.0;
pub const FIBER_ATTENUATION_DB_PER_KM: f64 = 0.2;
pub const DEAD_TIME_S: f64 = 9e-6;
pub const JITTER_FWHM_S: f64 = 155e-12;
pub const EFFICIENCY_A: f64 = 0.28;
pub const EFFICIENCY_B: f64 = 0.20;
pub const DELTA_TAU_S: f64 = 340e-12;
pub const DEGENERATE_INDEX: u32 = 47;
pub const ALICE_CHANNELS: std::ops::RangeInclusive<u32> = 39..=46;
pub const BACK_TO_BACK_NBAR: f64 = 0.015;
pub const KM150_NBAR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    BackToBack,
    Km150,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::BackToBack => "back_to_back",
            Preset::Km150 => "km150",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "back_to_back" => Some(Preset::BackToBack),
            "km150" => Some(Preset::Km150),
            _ => None,
        }
    }

    pub fn config(self) -> SimConfig {
        match self {
            Preset::BackToBack => back_to_back(),
            Preset::Km150 => km150(),
        }
    }
}

pub fn dark() -> DarkProbs {
    DarkProbs::symmetric(DARK_PROBABILITY)
}

pub fn detector(efficiency: f64) -> DetectorSpec {
    DetectorSpec {
        efficiency,
        dark_rate_hz: DARK_PROBABILITY / WINDOW_S,
        dead_time_s: DEAD_TIME_S,
        jitter_fwhm_s: JITTER_FWHM_S,
    }
}

/// Source and detectors connected directly, 8 channel pairs.
pub fn back_to_back() -> SimConfig {
    let umi = UmiSpec { delta_tau_s: DELTA_TAU_S, phase: 0.0 };
    SimConfig {
        duration_s: 1.0,
        seed: 0,
        stream: 0,
        window_s: WINDOW_S,
        nbar: BACK_TO_BACK_NBAR,
        plan: build_plan(ALICE_CHANNELS, DEGENERATE_INDEX).expect("preset plan is valid"),
        budget: LinkBudget::symmetric_loss_db(BASELINE_LOSS_DB).expect("preset loss is valid"),
        detector_a: detector(EFFICIENCY_A),
        detector_b: detector(EFFICIENCY_B),
        umi_a: umi,
        umi_b: umi,
        coherence: CoherenceSpec::default(),
        v0: 1.0,
        phase_offsets: Vec::new(),
        record_truth: false,
        mode: EmissionMode::Thinned,
        schedule: Schedule::Concurrent,
    }
}

/// Back-to-back plus 16 dB in each arm.
pub fn km150() -> SimConfig {
    let base = back_to_back();
    SimConfig {
        nbar: KM150_NBAR,
        budget: base
            .budget
            .with_extra_loss_db(KM150_EXTRA_LOSS_DB, KM150_EXTRA_LOSS_DB)
            .expect("preset loss is valid"),
        ..base
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in [Preset::BackToBack, Preset::Km150] {
            p.config().validate().unwrap();
            assert_eq!(Preset::from_name(p.name()), Some(p));
        }
        assert_eq!(Preset::from_name("lab"), None);
    }

    #[test]
    fn preset_numbers() {
        let b = back_to_back();
        assert_eq!(b.plan.len(), 8);
        assert!((b.detector_a.dark_probability(b.window_s) - 2.5e-7).abs() < 1e-18);
        assert!((b.budget.loss_a_db() - 11.0).abs() < 1e-9);
        let k = km150();
        assert!((k.budget.loss_b_db() - 27.0).abs() < 1e-9);
        assert_eq!(k.nbar, 0.05);
    }
}
