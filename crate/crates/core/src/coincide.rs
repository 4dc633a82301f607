//! Time-tag analysis: start-stop histograms, windowed coincidence counting
//! with displaced-window accidental estimation, and fringe fitting.
//!
//! All passes over tag streams are linear in the number of tags: both
//! inputs are sorted, so a single moving pointer into Bob's stream follows
//! Alice's tags.

use nalgebra::{Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::franson::wrap_phase;
use crate::montecarlo::TagStream;

/// Window used by the source-brightness definition and the analysis.
pub const DEFAULT_WINDOW_PS: u64 = 250;

/// Accidental window sits ten interferometer delays away from the peak.
pub const DEFAULT_ACCIDENTAL_OFFSET_PS: i64 = 3400;

/// Fits with a larger visibility error are flagged as low signal to noise.
pub const LOW_SNR_MAX_ERR: f64 = 0.1;

/// Upper bound on V while fitting; the result is clamped to 1 afterwards.
pub const FIT_VISIBILITY_BOUND: f64 = 1.2;

const MAX_FIT_ITERATIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("tag stream {0} is not sorted")]
    Unsorted(&'static str),
    #[error("histogram bin {bin} ps must be positive, at most the range {range} ps and divide 2 x range")]
    BadBinning { bin: u64, range: u64 },
    #[error("coincidence window must be positive")]
    BadWindow,
    #[error("accidental window at offset {offset} ps overlaps the {window} ps coincidence window")]
    OverlappingWindows { offset: i64, window: u64 },
    #[error("fringe scan needs at least 3 distinct phases, got {0}")]
    DegenerateScan(usize),
    #[error("fringe fit did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("duration must be positive")]
    BadDuration,
}

fn require_sorted(s: &TagStream, name: &'static str) -> Result<(), AnalysisError> {
    if s.is_sorted() {
        Ok(())
    } else {
        Err(AnalysisError::Unsorted(name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: u64,
    pub range_ps: u64,
    /// Bin `i` covers `[-range + i*bin, -range + (i+1)*bin)`; the last bin
    /// also holds `+range`.
    pub counts: Vec<u64>,
    pub total_pairs_examined: u64,
}

impl CoincidenceHistogram {
    pub fn bin_center_ps(&self, i: usize) -> f64 {
        -(self.range_ps as f64) + (i as f64 + 0.5) * self.bin_width_ps as f64
    }

    pub fn bin_of(&self, dt_ps: i64) -> Option<usize> {
        let r = self.range_ps as i64;
        if dt_ps < -r || dt_ps > r {
            return None;
        }
        Some((((dt_ps + r) / self.bin_width_ps as i64) as usize).min(self.counts.len() - 1))
    }

    /// Sum of bins whose centres fall in `[lo, hi]`.
    pub fn area(&self, lo_ps: f64, hi_ps: f64) -> u64 {
        (0..self.counts.len())
            .filter(|&i| (lo_ps..=hi_ps).contains(&self.bin_center_ps(i)))
            .map(|i| self.counts[i])
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dt_ps,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{}\n", self.bin_center_ps(i), c));
        }
        s
    }
}

/// Histogram of all `t_b - t_a` within `±range`.
pub fn histogram(a: &TagStream, b: &TagStream, bin_ps: u64, range_ps: u64) -> Result<CoincidenceHistogram, AnalysisError> {
    if bin_ps == 0 || bin_ps > range_ps || (2 * range_ps) % bin_ps != 0 {
        return Err(AnalysisError::BadBinning { bin: bin_ps, range: range_ps });
    }
    require_sorted(a, "a")?;
    require_sorted(b, "b")?;
    let mut hist = CoincidenceHistogram {
        bin_width_ps: bin_ps,
        range_ps,
        counts: vec![0; (2 * range_ps / bin_ps) as usize],
        total_pairs_examined: 0,
    };
    let r = range_ps as i64;
    let bt = &b.times_ps;
    let mut start = 0;
    for &ta in &a.times_ps {
        let ta = ta as i64;
        while start < bt.len() && (bt[start] as i64) < ta - r {
            start += 1;
        }
        for &tb in &bt[start..] {
            let dt = tb as i64 - ta;
            if dt > r {
                break;
            }
            let i = hist.bin_of(dt).expect("dt within range");
            hist.counts[i] += 1;
            hist.total_pairs_examined += 1;
        }
    }
    Ok(hist)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub window_ps: u64,
    pub center_ps: i64,
    pub accidental_offset_ps: i64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { window_ps: DEFAULT_WINDOW_PS, center_ps: 0, accidental_offset_ps: DEFAULT_ACCIDENTAL_OFFSET_PS }
    }
}

impl AnalysisConfig {
    /// Offset ten interferometer delays away from the central peak.
    pub fn for_delay(delta_tau_ps: f64) -> Self {
        Self { accidental_offset_ps: (10.0 * delta_tau_ps).round() as i64, ..Self::default() }
    }

    pub fn centered_at(self, center_ps: i64) -> Self {
        Self { center_ps, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceResult {
    pub window_ps: u64,
    pub center_ps: i64,
    pub coincidences: u64,
    pub acc_estimate: u64,
    pub duration_s: f64,
    pub rate_hz: f64,
}

impl CoincidenceResult {
    pub fn accidental_rate_hz(&self) -> f64 {
        self.acc_estimate as f64 / self.duration_s
    }
}

/// Greedy one-to-one matching of tags with `|t_b - t_a - center| <= window/2`.
pub fn match_window(a: &TagStream, b: &TagStream, window_ps: u64, center_ps: i64) -> u64 {
    let w = window_ps as i64;
    let bt = &b.times_ps;
    let mut j = 0;
    let mut n = 0;
    for &ta in &a.times_ps {
        let ta = ta as i64;
        // Doubled to keep the half window integral.
        while j < bt.len() && 2 * (bt[j] as i64 - ta - center_ps) < -w {
            j += 1;
        }
        if j < bt.len() && 2 * (bt[j] as i64 - ta - center_ps) <= w {
            n += 1;
            j += 1;
        }
    }
    n
}

pub fn count_coincidences(
    a: &TagStream,
    b: &TagStream,
    cfg: &AnalysisConfig,
    duration_s: f64,
) -> Result<CoincidenceResult, AnalysisError> {
    if cfg.window_ps == 0 {
        return Err(AnalysisError::BadWindow);
    }
    if !(duration_s > 0.0) {
        return Err(AnalysisError::BadDuration);
    }
    if cfg.accidental_offset_ps.unsigned_abs() < cfg.window_ps {
        return Err(AnalysisError::OverlappingWindows { offset: cfg.accidental_offset_ps, window: cfg.window_ps });
    }
    require_sorted(a, "a")?;
    require_sorted(b, "b")?;
    let coincidences = match_window(a, b, cfg.window_ps, cfg.center_ps);
    let acc_estimate = match_window(a, b, cfg.window_ps, cfg.center_ps + cfg.accidental_offset_ps);
    Ok(CoincidenceResult {
        window_ps: cfg.window_ps,
        center_ps: cfg.center_ps,
        coincidences,
        acc_estimate,
        duration_s,
        rate_hz: coincidences as f64 / duration_s,
    })
}

/// Accidentals expected from uncorrelated singles: `n_a n_b w / D`.
pub fn accidentals_from_rates(n_a: u64, n_b: u64, window_ps: u64, duration_s: f64) -> f64 {
    n_a as f64 * n_b as f64 * window_ps as f64 * 1e-12 / duration_s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub phase: f64,
    pub result: CoincidenceResult,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FringeScan {
    pub points: Vec<FringePoint>,
}

impl FringeScan {
    /// At least five points and no gap wider than π around the circle.
    pub fn is_well_posed(&self) -> bool {
        if self.points.len() < 5 {
            return false;
        }
        let mut phases: Vec<f64> = self.points.iter().map(|p| wrap_phase(p.phase)).collect();
        phases.sort_by(f64::total_cmp);
        let wrap_gap = phases[0] + 2.0 * std::f64::consts::PI - phases[phases.len() - 1];
        phases.windows(2).map(|w| w[1] - w[0]).chain([wrap_gap]).all(|g| g <= std::f64::consts::PI + 1e-9)
    }

    pub fn total_coincidences(&self) -> u64 {
        self.points.iter().map(|p| p.result.coincidences).sum()
    }

    /// `phase,rate,error` rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("phase,rate,error\n");
        for p in &self.points {
            let r = &p.result;
            let err = (r.coincidences.max(1) as f64).sqrt() / r.duration_s;
            s.push_str(&format!("{},{},{}\n", p.phase, r.rate_hz, err));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    /// Amplitude over mean, clamped to [0, 1].
    pub visibility: f64,
    pub visibility_err: f64,
    pub mean_rate: f64,
    pub mean_rate_err: f64,
    pub phase_offset: f64,
    pub chi2_per_dof: f64,
    /// The unclamped estimate left [0, 1].
    pub clamped: bool,
    pub low_snr: bool,
    pub well_posed: bool,
}

impl FringeFit {
    /// Two-sided interval `V ± z σ`.
    pub fn interval(&self, z: f64) -> (f64, f64) {
        (self.visibility - z * self.visibility_err, self.visibility + z * self.visibility_err)
    }
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    phase: f64,
    y: f64,
    sigma: f64,
}

fn scan_samples(scan: &FringeScan) -> Vec<Sample> {
    scan.points
        .iter()
        .map(|p| {
            let d = p.result.duration_s;
            Sample {
                phase: p.phase,
                y: p.result.coincidences as f64 / d,
                sigma: (p.result.coincidences.max(1) as f64).sqrt() / d,
            }
        })
        .collect()
}

/// Weighted least-squares fit of `R(φ) = C (1 + V cos(φ + φ0))` with
/// Poisson weights `σ = sqrt(max(counts, 1))`.
pub fn fit_fringe(scan: &FringeScan) -> Result<FringeFit, AnalysisError> {
    let mut fit = fit_samples(&scan_samples(scan))?;
    fit.well_posed = scan.is_well_posed();
    Ok(fit)
}

fn distinct_phases(samples: &[Sample]) -> usize {
    let mut p: Vec<f64> = samples.iter().map(|s| wrap_phase(s.phase)).collect();
    p.sort_by(f64::total_cmp);
    p.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
    if p.len() > 1 && (p[0] + 2.0 * std::f64::consts::PI - p[p.len() - 1]).abs() < 1e-9 {
        p.pop();
    }
    p.len()
}

fn fit_samples(samples: &[Sample]) -> Result<FringeFit, AnalysisError> {
    let distinct = distinct_phases(samples);
    if distinct < 3 {
        return Err(AnalysisError::DegenerateScan(distinct));
    }

    // Linear seed: R = a + b cos φ + c sin φ.
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for s in samples {
        let x = Vector3::new(1.0, s.phase.cos(), s.phase.sin());
        let w = 1.0 / (s.sigma * s.sigma);
        normal += w * x * x.transpose();
        rhs += w * s.y * x;
    }
    let seed = normal.try_inverse().ok_or(AnalysisError::DegenerateScan(distinct))? * rhs;
    let (a, b, c) = (seed[0], seed[1], seed[2]);

    if a <= 0.0 {
        // No signal at all: nothing to fit.
        return Ok(FringeFit {
            visibility: 0.0,
            visibility_err: 1.0,
            mean_rate: a.max(0.0),
            mean_rate_err: normal.try_inverse().map_or(f64::NAN, |m| m[(0, 0)].sqrt()),
            phase_offset: 0.0,
            chi2_per_dof: chi2_per_dof(samples, |_| a.max(0.0)),
            clamped: false,
            low_snr: true,
            well_posed: false,
        });
    }

    // b = C V cos φ0, c = -C V sin φ0.
    let mut params = Vector3::new(a, ((b * b + c * c).sqrt() / a).min(FIT_VISIBILITY_BOUND), (-c).atan2(b));
    let model = |p: &Vector3<f64>, phi: f64| p[0] * (1.0 + p[1] * (phi + p[2]).cos());
    let cost = |p: &Vector3<f64>| -> f64 {
        samples.iter().map(|s| ((s.y - model(p, s.phase)) / s.sigma).powi(2)).sum()
    };

    // Levenberg-Marquardt with V held inside [0, FIT_VISIBILITY_BOUND].
    let mut lambda = 1e-3;
    let mut current = cost(&params);
    let mut converged = false;
    for _ in 0..MAX_FIT_ITERATIONS {
        let (jtj, jtr) = normal_equations(samples, &params);
        let mut step = None;
        for _ in 0..30 {
            let mut damped = jtj;
            for i in 0..3 {
                damped[(i, i)] *= 1.0 + lambda;
            }
            let Some(inv) = damped.try_inverse() else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = params + inv * jtr;
            trial[1] = trial[1].clamp(0.0, FIT_VISIBILITY_BOUND);
            let c = cost(&trial);
            if c <= current {
                step = Some((trial, c));
                lambda = (lambda / 10.0).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
        match step {
            Some((trial, c)) => {
                let rel = (current - c) / current.max(1e-300);
                let moved = (trial - params).abs().max();
                params = trial;
                current = c;
                if rel < 1e-12 || moved < 1e-12 {
                    converged = true;
                    break;
                }
            }
            None => {
                // No downhill step: at a (possibly bounded) minimum.
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(AnalysisError::NoConvergence(MAX_FIT_ITERATIONS));
    }

    let (jtj, _) = normal_equations(samples, &params);
    let (c_err, v_err) = match jtj.try_inverse() {
        Some(cov) => (cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt()),
        None => {
            // V = 0 leaves φ0 undetermined; use the (C, V) block.
            let block = Matrix2::new(jtj[(0, 0)], jtj[(0, 1)], jtj[(1, 0)], jtj[(1, 1)]);
            block.try_inverse().map_or((f64::NAN, 1.0), |cov| (cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt()))
        }
    };
    let v = params[1];
    let visibility_err = if v_err.is_finite() && v_err > 0.0 { v_err } else { f64::MIN_POSITIVE };
    Ok(FringeFit {
        visibility: v.clamp(0.0, 1.0),
        visibility_err,
        mean_rate: params[0],
        mean_rate_err: c_err,
        phase_offset: wrap_phase(params[2]),
        chi2_per_dof: chi2_per_dof(samples, |phi| model(&params, phi)),
        clamped: !(0.0..=1.0).contains(&v),
        low_snr: visibility_err > LOW_SNR_MAX_ERR,
        well_posed: false,
    })
}

/// `JᵀWJ` and `JᵀW r` for the model at `p`.
fn normal_equations(samples: &[Sample], p: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for s in samples {
        let arg = s.phase + p[2];
        let j = Vector3::new(1.0 + p[1] * arg.cos(), p[0] * arg.cos(), -p[0] * p[1] * arg.sin());
        let w = 1.0 / (s.sigma * s.sigma);
        let r = s.y - p[0] * (1.0 + p[1] * arg.cos());
        jtj += w * j * j.transpose();
        jtr += w * r * j;
    }
    (jtj, jtr)
}

fn chi2_per_dof(samples: &[Sample], model: impl Fn(f64) -> f64) -> f64 {
    let dof = samples.len() as f64 - 3.0;
    if dof <= 0.0 {
        return f64::NAN;
    }
    samples.iter().map(|s| ((s.y - model(s.phase)) / s.sigma).powi(2)).sum::<f64>() / dof
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawNet {
    pub raw: f64,
    pub raw_err: f64,
    pub net: f64,
    pub net_err: f64,
    /// Points where subtraction went negative and was clamped to zero.
    pub clamped_points: usize,
    pub low_snr: bool,
}

/// Raw visibility and the visibility after subtracting the accidental rate
/// measured in `acc` from every scan point.
pub fn raw_vs_net(scan: &FringeScan, acc: &CoincidenceResult) -> Result<RawNet, AnalysisError> {
    if !(acc.duration_s > 0.0) {
        return Err(AnalysisError::BadDuration);
    }
    let raw = fit_fringe(scan)?;
    let acc_rate = acc.accidental_rate_hz();
    let acc_var_rate = acc.acc_estimate as f64 / (acc.duration_s * acc.duration_s);
    let mut clamped_points = 0;
    let samples: Vec<Sample> = scan
        .points
        .iter()
        .map(|p| {
            let d = p.result.duration_s;
            let mut y = p.result.coincidences as f64 / d - acc_rate;
            if y < 0.0 {
                clamped_points += 1;
                y = 0.0;
            }
            let var = p.result.coincidences.max(1) as f64 / (d * d) + acc_var_rate;
            Sample { phase: p.phase, y, sigma: var.sqrt() }
        })
        .collect();
    let net = fit_samples(&samples)?;
    Ok(RawNet {
        raw: raw.visibility,
        raw_err: raw.visibility_err,
        net: net.visibility,
        net_err: net.visibility_err,
        clamped_points,
        low_snr: net.low_snr || clamped_points > 0,
    })
}
