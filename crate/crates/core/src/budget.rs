//! Analytic link model: raw two-photon visibility and QBER as a function of
//! the mean pair number per window, the per-arm transmittances and the dark
//! count probabilities, plus the inverse problems built on it.
//!
//! The visibility of a Franson fringe counted in a window `w` is
//!
//! ```text
//!            n α_a α_b / 4
//! V = ------------------------------------------------
//!      n α_a α_b / 4 + 2 (n α_a / 2 + d_a)(n α_b / 2 + d_b)
//! ```
//!
//! where `n α_a α_b / 4` is the true coincidence probability at the fringe
//! maximum, `n α / 2 + d` the singles probability per window behind one
//! unbalanced interferometer, and the accidental term is the product of the
//! two singles probabilities (the factor 2 converts from fringe mean).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bell-CHSH violation requires V > 1/sqrt(2).
pub const BELL_VISIBILITY_THRESHOLD: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// QBER below 9 % is needed for key distribution, i.e. V > 0.82.
pub const QC_VISIBILITY_THRESHOLD: f64 = 0.82;

/// Above this n̄ the model ignores multi-pair orders the detectors do see.
pub const MODEL_VALIDITY_NBAR: f64 = 0.1;

/// Upper end of the n̄ search when the visibility floor is never reached.
pub const NBAR_CEILING: f64 = 1.0;

const LOSS_SEARCH_LIMIT_DB: f64 = 400.0;
const LOSS_TOLERANCE_DB: f64 = 1e-6;
const NBAR_REL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BudgetError {
    #[error("{name} = {value} is outside its valid range")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("target visibility {target} is not reached even without loss (max {best})")]
    TargetUnreachable { target: f64, best: f64 },
    #[error("visibility never falls to {target}: without dark counts it is loss independent")]
    NoFiniteRoot { target: f64 },
    #[error("loss budget {budget} dB is below the baseline {baseline} dB")]
    NegativeMargin { budget: f64, baseline: f64 },
}

fn check(name: &'static str, value: f64, ok: bool) -> Result<(), BudgetError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(BudgetError::InvalidParameter { name, value })
    }
}

/// Convert a loss in dB (positive number) to a linear transmittance.
pub fn db_to_transmittance(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

pub fn transmittance_to_db(alpha: f64) -> f64 {
    -10.0 * alpha.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub dead_time_s: f64,
    pub jitter_fwhm_s: f64,
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<(), BudgetError> {
        check("efficiency", self.efficiency, (0.0..=1.0).contains(&self.efficiency))?;
        check("dark_rate_hz", self.dark_rate_hz, self.dark_rate_hz >= 0.0)?;
        check("dead_time_s", self.dead_time_s, self.dead_time_s >= 0.0)?;
        check("jitter_fwhm_s", self.jitter_fwhm_s, self.jitter_fwhm_s >= 0.0)
    }

    /// Dark count probability in a window of length `window_s`.
    pub fn dark_probability(&self, window_s: f64) -> f64 {
        self.dark_rate_hz * window_s
    }

    /// Highest accepted count rate allowed by a non-paralyzable dead time.
    pub fn max_count_rate(&self) -> f64 {
        if self.dead_time_s > 0.0 {
            1.0 / self.dead_time_s
        } else {
            f64::INFINITY
        }
    }
}

/// Per-arm transmittance from the pair source to the detector click,
/// detector efficiency included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub alpha_a: f64,
    pub alpha_b: f64,
}

impl LinkBudget {
    pub fn new(alpha_a: f64, alpha_b: f64) -> Result<Self, BudgetError> {
        let lb = Self { alpha_a, alpha_b };
        lb.validate()?;
        Ok(lb)
    }

    pub fn from_loss_db(loss_a_db: f64, loss_b_db: f64) -> Result<Self, BudgetError> {
        Self::new(db_to_transmittance(loss_a_db), db_to_transmittance(loss_b_db))
    }

    pub fn symmetric_loss_db(loss_db: f64) -> Result<Self, BudgetError> {
        Self::from_loss_db(loss_db, loss_db)
    }

    pub fn validate(&self) -> Result<(), BudgetError> {
        check("alpha_a", self.alpha_a, self.alpha_a > 0.0 && self.alpha_a <= 1.0)?;
        check("alpha_b", self.alpha_b, self.alpha_b > 0.0 && self.alpha_b <= 1.0)
    }

    pub fn loss_a_db(&self) -> f64 {
        transmittance_to_db(self.alpha_a)
    }

    pub fn loss_b_db(&self) -> f64 {
        transmittance_to_db(self.alpha_b)
    }

    /// The same budget with additional loss in each arm.
    pub fn with_extra_loss_db(&self, extra_a_db: f64, extra_b_db: f64) -> Result<Self, BudgetError> {
        Self::from_loss_db(self.loss_a_db() + extra_a_db, self.loss_b_db() + extra_b_db)
    }
}

/// Loss breakdown from which a [`LinkBudget`] can be assembled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParts {
    pub component_loss_db: f64,
    pub fiber_length_km_a: f64,
    pub fiber_length_km_b: f64,
    pub attenuation_db_per_km: f64,
    pub efficiency_a: f64,
    pub efficiency_b: f64,
}

impl LinkParts {
    pub fn arm_loss_db(&self, fiber_km: f64, efficiency: f64) -> f64 {
        self.component_loss_db + fiber_km * self.attenuation_db_per_km + transmittance_to_db(efficiency)
    }

    pub fn to_budget(&self) -> Result<LinkBudget, BudgetError> {
        check("attenuation_db_per_km", self.attenuation_db_per_km, self.attenuation_db_per_km >= 0.0)?;
        check("fiber_length_km_a", self.fiber_length_km_a, self.fiber_length_km_a >= 0.0)?;
        check("fiber_length_km_b", self.fiber_length_km_b, self.fiber_length_km_b >= 0.0)?;
        LinkBudget::from_loss_db(
            self.arm_loss_db(self.fiber_length_km_a, self.efficiency_a),
            self.arm_loss_db(self.fiber_length_km_b, self.efficiency_b),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarkProbs {
    pub a: f64,
    pub b: f64,
}

impl DarkProbs {
    pub fn symmetric(d: f64) -> Self {
        Self { a: d, b: d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub nbar: f64,
    pub window_s: f64,
    pub dark_prob_a: f64,
    pub dark_prob_b: f64,
}

impl OperatingPoint {
    pub fn new(nbar: f64, window_s: f64, dark: DarkProbs) -> Result<Self, BudgetError> {
        let op = Self { nbar, window_s, dark_prob_a: dark.a, dark_prob_b: dark.b };
        op.validate()?;
        Ok(op)
    }

    pub fn from_detectors(
        nbar: f64,
        window_s: f64,
        det_a: &DetectorSpec,
        det_b: &DetectorSpec,
    ) -> Result<Self, BudgetError> {
        Self::new(
            nbar,
            window_s,
            DarkProbs { a: det_a.dark_probability(window_s), b: det_b.dark_probability(window_s) },
        )
    }

    pub fn validate(&self) -> Result<(), BudgetError> {
        check("nbar", self.nbar, self.nbar >= 0.0)?;
        check("window_s", self.window_s, self.window_s > 0.0)?;
        check("dark_prob_a", self.dark_prob_a, (0.0..=1.0).contains(&self.dark_prob_a))?;
        check("dark_prob_b", self.dark_prob_b, (0.0..=1.0).contains(&self.dark_prob_b))
    }

    pub fn dark(&self) -> DarkProbs {
        DarkProbs { a: self.dark_prob_a, b: self.dark_prob_b }
    }

    /// Pair emission rate per channel pair.
    pub fn pair_rate_hz(&self) -> f64 {
        self.nbar / self.window_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceEstimate {
    pub visibility: f64,
    pub qber: f64,
    /// True coincidence probability per window at the fringe maximum.
    pub true_coinc_prob: f64,
    /// Twice the accidental probability per window (the formula's denominator term).
    pub accidental_prob: f64,
    pub singles_prob_a: f64,
    pub singles_prob_b: f64,
    /// n̄ above [`MODEL_VALIDITY_NBAR`]: the formula overestimates V there.
    pub beyond_model_validity: bool,
    /// n̄ = 0: no signal, the visibility is a limit value only.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityMargins {
    pub bell_violated: bool,
    pub qc_ok: bool,
}

pub fn visibility(op: &OperatingPoint, lb: &LinkBudget) -> Result<PerformanceEstimate, BudgetError> {
    op.validate()?;
    lb.validate()?;
    Ok(visibility_unchecked(op.nbar, lb.alpha_a, lb.alpha_b, op.dark_prob_a, op.dark_prob_b))
}

fn visibility_unchecked(nbar: f64, alpha_a: f64, alpha_b: f64, d_a: f64, d_b: f64) -> PerformanceEstimate {
    let true_coinc = nbar * alpha_a * alpha_b / 4.0;
    let singles_a = nbar * alpha_a / 2.0 + d_a;
    let singles_b = nbar * alpha_b / 2.0 + d_b;
    let accidental = 2.0 * singles_a * singles_b;
    let denom = true_coinc + accidental;
    // 0/0 only for n̄ = 0 without darks; the n̄ -> 0 limit is then 1.
    let v = if denom > 0.0 { true_coinc / denom } else { 1.0 };
    PerformanceEstimate {
        visibility: v,
        qber: (1.0 - v) / 2.0,
        true_coinc_prob: true_coinc,
        accidental_prob: accidental,
        singles_prob_a: singles_a,
        singles_prob_b: singles_b,
        beyond_model_validity: nbar > MODEL_VALIDITY_NBAR,
        degenerate: nbar == 0.0,
    }
}

fn v_of(nbar: f64, lb: &LinkBudget, dark: DarkProbs) -> f64 {
    visibility_unchecked(nbar, lb.alpha_a, lb.alpha_b, dark.a, dark.b).visibility
}

pub fn qber_from_visibility(v: f64) -> Result<f64, BudgetError> {
    check("visibility", v, (0.0..=1.0).contains(&v))?;
    Ok((1.0 - v) / 2.0)
}

pub fn security_margins(v: f64) -> SecurityMargins {
    SecurityMargins { bell_violated: v > BELL_VISIBILITY_THRESHOLD, qc_ok: v > QC_VISIBILITY_THRESHOLD }
}

/// Symmetric per-arm loss (dB) at which the visibility drops to `v_target`.
pub fn max_tolerable_loss(nbar: f64, dark: DarkProbs, v_target: f64) -> Result<f64, BudgetError> {
    check("nbar", nbar, nbar > 0.0)?;
    check("v_target", v_target, (0.0..1.0).contains(&v_target))?;
    let at = |loss_db: f64| {
        let alpha = db_to_transmittance(loss_db);
        visibility_unchecked(nbar, alpha, alpha, dark.a, dark.b).visibility
    };
    let best = at(0.0);
    if best <= v_target {
        return Err(BudgetError::TargetUnreachable { target: v_target, best });
    }
    if at(LOSS_SEARCH_LIMIT_DB) >= v_target {
        return Err(BudgetError::NoFiniteRoot { target: v_target });
    }
    let (mut lo, mut hi) = (0.0, LOSS_SEARCH_LIMIT_DB);
    while hi - lo > LOSS_TOLERANCE_DB {
        let mid = 0.5 * (lo + hi);
        if at(mid) > v_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Total link length reachable with source placed mid-link.
pub fn loss_to_distance(loss_budget_db: f64, baseline_db: f64, attenuation_db_per_km: f64) -> Result<f64, BudgetError> {
    check("attenuation_db_per_km", attenuation_db_per_km, attenuation_db_per_km > 0.0)?;
    if loss_budget_db < baseline_db {
        return Err(BudgetError::NegativeMargin { budget: loss_budget_db, baseline: baseline_db });
    }
    Ok(2.0 * (loss_budget_db - baseline_db) / attenuation_db_per_km)
}

/// n̄ at which the visibility peaks: below it dark counts dominate.
pub fn peak_visibility_nbar(lb: &LinkBudget, dark: DarkProbs) -> f64 {
    2.0 * (dark.a * dark.b / (lb.alpha_a * lb.alpha_b)).sqrt()
}

/// Largest n̄ (up to [`NBAR_CEILING`]) keeping the visibility at or above `v_min`.
pub fn optimal_nbar(lb: &LinkBudget, dark: DarkProbs, v_min: f64) -> Result<f64, BudgetError> {
    optimal_nbar_bounded(lb, dark, v_min, NBAR_CEILING)
}

pub fn optimal_nbar_bounded(lb: &LinkBudget, dark: DarkProbs, v_min: f64, ceiling: f64) -> Result<f64, BudgetError> {
    lb.validate()?;
    check("v_min", v_min, (0.0..1.0).contains(&v_min))?;
    check("ceiling", ceiling, ceiling > 0.0)?;
    let peak = peak_visibility_nbar(lb, dark).min(ceiling);
    let best = if peak > 0.0 { v_of(peak, lb, dark) } else { 1.0 };
    if best < v_min {
        return Err(BudgetError::TargetUnreachable { target: v_min, best });
    }
    if v_of(ceiling, lb, dark) >= v_min {
        return Ok(ceiling);
    }
    // V is decreasing on [peak, ceiling].
    let (mut lo, mut hi) = (peak, ceiling);
    while hi - lo > NBAR_REL_TOLERANCE * hi {
        let mid = 0.5 * (lo + hi);
        if v_of(mid, lb, dark) >= v_min {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// CSV header matching [`estimate_csv_row`].
pub const ESTIMATE_CSV_HEADER: &str = "nbar,alpha_a_db,alpha_b_db,d_a,d_b,V,QBER";

pub fn estimate_csv_row(op: &OperatingPoint, lb: &LinkBudget, est: &PerformanceEstimate) -> String {
    format!(
        "{},{:.4},{:.4},{:e},{:e},{:.6},{:.6}",
        op.nbar,
        -lb.loss_a_db(),
        -lb.loss_b_db(),
        op.dark_prob_a,
        op.dark_prob_b,
        est.visibility,
        est.qber
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const D: f64 = 2.5e-7;

    fn fig4() -> LinkBudget {
        LinkBudget::symmetric_loss_db(11.0).unwrap()
    }

    fn v(nbar: f64, lb: &LinkBudget, d: f64) -> f64 {
        let op = OperatingPoint::new(nbar, 250e-12, DarkProbs::symmetric(d)).unwrap();
        visibility(&op, lb).unwrap().visibility
    }

    #[test]
    fn fig4_curve_points() {
        // Direct evaluation of the closed form.
        assert!((v(0.015, &fig4(), D) - 0.97085).abs() < 1e-4);
        assert!((v(0.10, &fig4(), D) - 0.83332).abs() < 1e-4);
        assert!(v(0.003, &fig4(), D) > 0.98);
        assert!((v(1e-9, &fig4(), 0.0) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn long_distance_prediction() {
        let lb = LinkBudget::symmetric_loss_db(27.0).unwrap();
        assert!((v(0.05, &lb, D) - 0.9083).abs() < 1e-3);
    }

    #[test]
    fn estimate_fields_are_consistent() {
        let op = OperatingPoint::new(0.015, 250e-12, DarkProbs::symmetric(D)).unwrap();
        let e = visibility(&op, &fig4()).unwrap();
        assert!((e.qber - (1.0 - e.visibility) / 2.0).abs() < 1e-15);
        assert!((e.accidental_prob - 2.0 * e.singles_prob_a * e.singles_prob_b).abs() < 1e-18);
        assert!(!e.beyond_model_validity);
        let hi = OperatingPoint { nbar: 0.3, ..op };
        assert!(visibility(&hi, &fig4()).unwrap().beyond_model_validity);
    }

    #[test]
    fn zero_nbar_is_flagged() {
        let op = OperatingPoint::new(0.0, 250e-12, DarkProbs::symmetric(D)).unwrap();
        let e = visibility(&op, &fig4()).unwrap();
        assert!(e.degenerate);
        assert_eq!(e.visibility, 0.0);
        assert_eq!(e.true_coinc_prob, 0.0);
    }

    #[test]
    fn invalid_inputs() {
        assert!(OperatingPoint::new(-1.0, 250e-12, DarkProbs::symmetric(D)).is_err());
        assert!(OperatingPoint::new(0.1, 0.0, DarkProbs::symmetric(D)).is_err());
        assert!(LinkBudget::new(0.0, 0.5).is_err());
        assert!(LinkBudget::new(1.5, 0.5).is_err());
        let det = DetectorSpec { efficiency: 1.2, dark_rate_hz: 0.0, dead_time_s: 0.0, jitter_fwhm_s: 0.0 };
        assert!(det.validate().is_err());
    }

    #[test]
    fn qber_mapping() {
        assert!((qber_from_visibility(0.82).unwrap() - 0.09).abs() < 1e-12);
        assert_eq!(qber_from_visibility(1.0).unwrap(), 0.0);
        assert_eq!(qber_from_visibility(0.0).unwrap(), 0.5);
        assert!(qber_from_visibility(1.1).is_err());
        assert!(qber_from_visibility(-0.1).is_err());
    }

    #[test]
    fn margins() {
        assert_eq!(security_margins(0.97), SecurityMargins { bell_violated: true, qc_ok: true });
        assert_eq!(security_margins(0.75), SecurityMargins { bell_violated: true, qc_ok: false });
        assert_eq!(security_margins(0.7071), SecurityMargins { bell_violated: false, qc_ok: false });
        assert_eq!(security_margins(0.82), SecurityMargins { bell_violated: true, qc_ok: false });
    }

    #[test]
    fn max_loss_near_47_db() {
        let l = max_tolerable_loss(0.05, DarkProbs::symmetric(D), 0.82).unwrap();
        assert!((l - 46.83).abs() < 0.01, "{l}");
        let tighter = max_tolerable_loss(0.05, DarkProbs::symmetric(D), 0.90).unwrap();
        assert!(tighter < l);
        assert!((tighter - 37.33).abs() < 0.01, "{tighter}");
    }

    #[test]
    fn max_loss_error_paths() {
        assert!(matches!(
            max_tolerable_loss(0.05, DarkProbs::symmetric(0.0), 0.82),
            Err(BudgetError::NoFiniteRoot { .. })
        ));
        assert!(matches!(
            max_tolerable_loss(0.5, DarkProbs::symmetric(0.0), 0.82),
            Err(BudgetError::TargetUnreachable { .. })
        ));
    }

    #[test]
    fn distance_from_loss() {
        assert!((loss_to_distance(47.0, 11.0, 0.2).unwrap() - 360.0).abs() < 1e-9);
        assert_eq!(loss_to_distance(11.0, 11.0, 0.2).unwrap(), 0.0);
        assert!((loss_to_distance(43.0, 11.0, 0.2).unwrap() - 320.0).abs() < 1e-9);
        assert!(loss_to_distance(10.0, 11.0, 0.2).is_err());
        assert!(loss_to_distance(20.0, 11.0, 0.0).is_err());
    }

    #[test]
    fn optimal_nbar_examples() {
        let n = optimal_nbar(&fig4(), DarkProbs::symmetric(D), 0.82).unwrap();
        assert!(n > 0.10 && n < 0.115, "{n}");
        assert!((v(n, &fig4(), D) - 0.82).abs() < 1e-5);
        let n90 = optimal_nbar(&fig4(), DarkProbs::symmetric(D), 0.90).unwrap();
        assert!((n90 - 0.05).abs() < 0.01, "{n90}");
        assert_eq!(optimal_nbar(&fig4(), DarkProbs::symmetric(D), 0.0).unwrap(), NBAR_CEILING);
    }

    #[test]
    fn optimal_nbar_dark_dominated() {
        let lossy = LinkBudget::symmetric_loss_db(70.0).unwrap();
        assert!(matches!(
            optimal_nbar(&lossy, DarkProbs::symmetric(D), 0.82),
            Err(BudgetError::TargetUnreachable { .. })
        ));
    }

    #[test]
    fn link_parts_assemble() {
        let parts = LinkParts {
            component_loss_db: 5.5,
            fiber_length_km_a: 75.0,
            fiber_length_km_b: 75.0,
            attenuation_db_per_km: 0.2,
            efficiency_a: 0.28,
            efficiency_b: 0.20,
        };
        let lb = parts.to_budget().unwrap();
        assert!((lb.loss_a_db() - (5.5 + 15.0 + transmittance_to_db(0.28))).abs() < 1e-9);
        assert!(lb.alpha_b < lb.alpha_a);
    }

    #[test]
    fn csv_row_shape() {
        let op = OperatingPoint::new(0.1, 250e-12, DarkProbs::symmetric(D)).unwrap();
        let e = visibility(&op, &fig4()).unwrap();
        let row = estimate_csv_row(&op, &fig4(), &e);
        assert_eq!(row.split(',').count(), ESTIMATE_CSV_HEADER.split(',').count());
        assert!(row.starts_with("0.1,-11.0000,-11.0000,"));
    }

    proptest! {
        #[test]
        fn monotone_decreasing_above_peak(
            n in 1e-4f64..1.0, dn in 0.0f64..1.0,
            la in 0.0f64..40.0, lb_ in 0.0f64..40.0,
            da in 0.0f64..1e-5, db in 0.0f64..1e-5,
        ) {
            let lb = LinkBudget::from_loss_db(la, lb_).unwrap();
            let dark = DarkProbs { a: da, b: db };
            let n = n.max(peak_visibility_nbar(&lb, dark));
            let base = v_of(n, &lb, dark);
            prop_assert!(v_of(n + dn, &lb, dark) <= base + 1e-12);
            let darker_a = DarkProbs { a: da * 2.0 + 1e-9, b: db };
            let darker_b = DarkProbs { a: da, b: db * 2.0 + 1e-9 };
            prop_assert!(v_of(n, &lb, darker_a) <= base + 1e-12);
            prop_assert!(v_of(n, &lb, darker_b) <= base + 1e-12);
            let lossier = lb.with_extra_loss_db(1.0, 1.0).unwrap();
            prop_assert!(v_of(n, &lossier, dark) <= base + 1e-12);
        }

        #[test]
        fn arm_swap_symmetry(n in 0.0f64..1.0, la in 0.0f64..40.0, lb_ in 0.0f64..40.0,
                             da in 0.0f64..1e-5, db in 0.0f64..1e-5) {
            let ab = v_of(n, &LinkBudget::from_loss_db(la, lb_).unwrap(), DarkProbs { a: da, b: db });
            let ba = v_of(n, &LinkBudget::from_loss_db(lb_, la).unwrap(), DarkProbs { a: db, b: da });
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn qber_inverse(q in 0.0f64..=0.5) {
            let v = 1.0 - 2.0 * q;
            prop_assert!((qber_from_visibility(v).unwrap() - q).abs() < 1e-12);
        }

        #[test]
        fn loss_free_of_darks_is_loss_independent(n in 1e-4f64..1.0, la in 0.0f64..60.0, lb_ in 0.0f64..60.0) {
            let got = v_of(n, &LinkBudget::from_loss_db(la, lb_).unwrap(), DarkProbs::symmetric(0.0));
            prop_assert!((got - 1.0 / (1.0 + 2.0 * n)).abs() < 1e-12);
        }

        #[test]
        fn max_loss_roundtrip(n in 0.005f64..0.08, target in 0.5f64..0.85) {
            let dark = DarkProbs::symmetric(D);
            if let Ok(loss) = max_tolerable_loss(n, dark, target) {
                let back = v_of(n, &LinkBudget::symmetric_loss_db(loss).unwrap(), dark);
                prop_assert!((back - target).abs() < 1e-3);
            }
        }
    }
}
