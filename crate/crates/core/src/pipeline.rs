//! Simulate a phase scan and analyse it per channel pair.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{visibility, BudgetError, DarkProbs, OperatingPoint, PerformanceEstimate};
use crate::coincide::{
    count_coincidences, fit_fringe, raw_vs_net, AnalysisConfig, AnalysisError, CoincidenceResult, FringeFit,
    FringePoint, FringeScan, RawNet,
};
use crate::franson::TimingViolation;
use crate::montecarlo::{simulate, SimConfig, SimError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

/// `n` phases evenly spaced over one period.
pub fn phase_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * std::f64::consts::PI * k as f64 / n as f64).collect()
}

/// Closed-form prediction for the configured operating point.
pub fn analytic_estimate(cfg: &SimConfig) -> Result<PerformanceEstimate, BudgetError> {
    let dark = DarkProbs {
        a: cfg.detector_a.dark_probability(cfg.window_s),
        b: cfg.detector_b.dark_probability(cfg.window_s),
    };
    visibility(&OperatingPoint::new(cfg.nbar, cfg.window_s, dark)?, &cfg.budget)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScan {
    pub label: String,
    pub scan: FringeScan,
    /// Displaced-window counts summed over the scan.
    pub accidentals: CoincidenceResult,
    pub fit: Option<FringeFit>,
    pub raw_net: Option<RawNet>,
    pub fit_error: Option<String>,
    pub singles_rate_a: f64,
    pub singles_rate_b: f64,
    pub saturated: bool,
}

impl PairScan {
    pub fn coincidences(&self) -> u64 {
        self.scan.total_coincidences()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub phases: Vec<f64>,
    pub duration_per_point_s: f64,
    pub pairs: Vec<PairScan>,
    pub timing_violations: Vec<TimingViolation>,
}

impl ScanReport {
    pub fn total_coincidences(&self) -> u64 {
        self.pairs.iter().map(PairScan::coincidences).sum()
    }

    pub fn min_point_coincidences(&self) -> u64 {
        self.pairs
            .iter()
            .flat_map(|p| p.scan.points.iter().map(|q| q.result.coincidences))
            .min()
            .unwrap_or(0)
    }
}

/// Simulate `base` once per phase (Alice's interferometer phase) and fit
/// each pair's fringe. Streams are dropped after counting, so memory stays
/// bounded by one scan point.
pub fn run_scan(base: &SimConfig, phases: &[f64], analysis: &AnalysisConfig) -> Result<ScanReport, PipelineError> {
    let n_pairs = base.plan.len();
    let mut points: Vec<Vec<FringePoint>> = vec![Vec::with_capacity(phases.len()); n_pairs];
    let mut acc: Vec<(u64, f64)> = vec![(0, 0.0); n_pairs];
    let mut singles = vec![(0u64, 0u64, 0.0f64); n_pairs];
    let mut saturated = vec![false; n_pairs];
    let mut violations = Vec::new();
    for (i, &phi) in phases.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.umi_a.phase = phi;
        cfg.stream = i as u64;
        let out = simulate(&cfg)?;
        violations = out.timing_violations.clone();
        for k in 0..n_pairs {
            let summary = &out.pairs[k];
            let r = count_coincidences(out.alice(k), out.bob(k), analysis, summary.active_s)?;
            points[k].push(FringePoint { phase: phi, result: r });
            acc[k].0 += r.acc_estimate;
            acc[k].1 += summary.active_s;
            singles[k].0 += summary.accepted_a;
            singles[k].1 += summary.accepted_b;
            singles[k].2 += summary.active_s;
            saturated[k] |= summary.saturated();
        }
    }

    let pairs = points
        .into_iter()
        .enumerate()
        .map(|(k, pts)| {
            let scan = FringeScan { points: pts };
            let accidentals = CoincidenceResult {
                window_ps: analysis.window_ps,
                center_ps: analysis.center_ps + analysis.accidental_offset_ps,
                coincidences: acc[k].0,
                acc_estimate: acc[k].0,
                duration_s: acc[k].1,
                rate_hz: acc[k].0 as f64 / acc[k].1,
            };
            let (fit, raw_net, fit_error) = match fit_fringe(&scan) {
                Ok(f) => (Some(f), raw_vs_net(&scan, &accidentals).ok(), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            PairScan {
                label: base.plan.pairs[k].label(),
                scan,
                accidentals,
                fit,
                raw_net,
                fit_error,
                singles_rate_a: singles[k].0 as f64 / singles[k].2,
                singles_rate_b: singles[k].1 as f64 / singles[k].2,
                saturated: saturated[k],
            }
        })
        .collect();

    Ok(ScanReport {
        phases: phases.to_vec(),
        duration_per_point_s: base.duration_s,
        pairs,
        timing_violations: violations,
    })
}
