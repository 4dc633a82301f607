//! Event-level simulation of the multiplexed link.
//!
//! For every channel pair the source emits pairs as a homogeneous Poisson
//! process of rate `nbar / window`. Each pair picks a fate from the Franson
//! analyser distribution, surviving photons are thinned by the per-arm
//! transmittance, delayed by the interferometer arm they took and smeared by
//! Gaussian jitter. Every detector adds its own Poisson dark counts and then
//! applies a non-paralyzable dead time. Channel pairs are independent and
//! each draws from its own RNG substream, so results do not depend on how
//! the work is scheduled.
//!
//! Two emission routes exist. [`EmissionMode::Exhaustive`] draws every pair
//! and thins photon by photon. [`EmissionMode::Thinned`] draws only the pairs
//! that leave at least one photon at a detector, at the correspondingly
//! reduced rate, which is the same process in distribution and far cheaper at
//! high loss. While both detectors of a pair are dead the emission clock is
//! fast-forwarded, since nothing emitted then can be recorded.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{BudgetError, DetectorSpec, LinkBudget};
use crate::franson::{validate_timing, CoherenceSpec, FateSampler, FransonError, Path, TimingViolation, UmiSpec};
use crate::grid::ChannelPlan;

/// FWHM = 2 sqrt(2 ln 2) σ for a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Jitter samples are truncated at this many standard deviations.
const JITTER_CLAMP_SIGMA: f64 = 8.0;

/// Record count limit of one binary tag file.
pub const TAG_CAPACITY: u64 = u32::MAX as u64;

const DARK_ORIGIN: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Franson(#[from] FransonError),
    #[error("run would produce about {expected:.3e} tags, above the capacity of {capacity}")]
    CapacityExceeded { expected: f64, capacity: u64 },
    #[error("tag stream for detector {0} is not sorted")]
    Unsorted(DetectorId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Alice,
    Bob,
}

/// One detector: the ITU channel it sits behind and the side of the link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetectorId {
    pub channel: u32,
    pub arm: Arm,
}

impl DetectorId {
    pub fn alice(channel: u32) -> Self {
        Self { channel, arm: Arm::Alice }
    }

    pub fn bob(channel: u32) -> Self {
        Self { channel, arm: Arm::Bob }
    }

    /// `channel * 2 + arm`, the on-disk identifier.
    pub fn code(&self) -> u16 {
        (self.channel as u16) << 1 | matches!(self.arm, Arm::Bob) as u16
    }

    pub fn from_code(code: u16) -> Self {
        Self { channel: (code >> 1) as u32, arm: if code & 1 == 1 { Arm::Bob } else { Arm::Alice } }
    }
}

impl std::fmt::Display for DetectorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let arm = match self.arm {
            Arm::Alice => 'A',
            Arm::Bob => 'B',
        };
        write!(f, "{}{}", arm, self.channel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeTag {
    pub time_ps: u64,
    pub detector: DetectorId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    /// Sequence number of the emitted pair within its channel pair.
    Pair(u64),
    Dark,
}

impl Origin {
    fn decode(code: u64) -> Self {
        if code == DARK_ORIGIN {
            Origin::Dark
        } else {
            Origin::Pair(code)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TagStream {
    pub detector: Option<DetectorId>,
    pub times_ps: Vec<u64>,
    pub truth: Option<Vec<Origin>>,
}

impl TagStream {
    pub fn new(detector: DetectorId, times_ps: Vec<u64>) -> Self {
        Self { detector: Some(detector), times_ps, truth: None }
    }

    pub fn len(&self) -> usize {
        self.times_ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_ps.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.times_ps.windows(2).all(|w| w[0] <= w[1])
    }

    /// Smallest gap between consecutive tags.
    pub fn min_gap_ps(&self) -> Option<u64> {
        self.times_ps.windows(2).map(|w| w[1] - w[0]).min()
    }

    pub fn rate_hz(&self, duration_s: f64) -> f64 {
        self.len() as f64 / duration_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionMode {
    #[default]
    Thinned,
    Exhaustive,
}

/// How channel pairs share the run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Every pair has its own detectors and runs for the full duration.
    #[default]
    Concurrent,
    /// One pair at a time, each for an equal slice of the duration.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub duration_s: f64,
    pub seed: u64,
    /// Extra substream selector, e.g. the index of a phase-scan point.
    #[serde(default)]
    pub stream: u64,
    pub window_s: f64,
    pub nbar: f64,
    pub plan: ChannelPlan,
    pub budget: LinkBudget,
    pub detector_a: DetectorSpec,
    pub detector_b: DetectorSpec,
    pub umi_a: UmiSpec,
    pub umi_b: UmiSpec,
    #[serde(default)]
    pub coherence: CoherenceSpec,
    pub v0: f64,
    /// Extra phase per channel pair; empty means all zero.
    #[serde(default)]
    pub phase_offsets: Vec<f64>,
    #[serde(default)]
    pub record_truth: bool,
    #[serde(default)]
    pub mode: EmissionMode,
    #[serde(default)]
    pub schedule: Schedule,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration_s));
        }
        if !(self.nbar.is_finite() && self.nbar >= 0.0) {
            return bad(format!("nbar must be non-negative, got {}", self.nbar));
        }
        if !(self.window_s.is_finite() && self.window_s > 0.0) {
            return bad(format!("window must be positive, got {}", self.window_s));
        }
        if self.plan.is_empty() {
            return bad("channel plan is empty".into());
        }
        if self.plan.channels().any(|c| c > (u16::MAX >> 1) as u32) {
            return bad("channel index does not fit the detector id".into());
        }
        if !self.phase_offsets.is_empty() && self.phase_offsets.len() != self.plan.len() {
            return bad(format!(
                "{} phase offsets for {} channel pairs",
                self.phase_offsets.len(),
                self.plan.len()
            ));
        }
        if !(0.0..=1.0).contains(&self.v0) {
            return Err(FransonError::InvalidVisibility(self.v0).into());
        }
        for umi in [&self.umi_a, &self.umi_b] {
            if !(umi.delta_tau_s.is_finite() && umi.delta_tau_s > 0.0) {
                return bad(format!("interferometer delay must be positive, got {}", umi.delta_tau_s));
            }
        }
        self.budget.validate()?;
        self.detector_a.validate()?;
        self.detector_b.validate()?;
        Ok(())
    }

    pub fn pair_rate_hz(&self) -> f64 {
        self.nbar / self.window_s
    }

    pub fn phase_sum(&self, pair_index: usize) -> f64 {
        self.umi_a.phase + self.umi_b.phase + self.phase_offsets.get(pair_index).copied().unwrap_or(0.0)
    }

    pub fn active_time_s(&self) -> f64 {
        match self.schedule {
            Schedule::Concurrent => self.duration_s,
            Schedule::Sequential => self.duration_s / self.plan.len() as f64,
        }
    }

    /// Rates expected from the model for one channel pair, before any
    /// measurement: used for duration planning and capacity checks.
    pub fn expected_rates(&self) -> ExpectedRates {
        let lambda = self.pair_rate_hz();
        let raw_a = lambda * self.budget.alpha_a / 2.0 + self.detector_a.dark_rate_hz;
        let raw_b = lambda * self.budget.alpha_b / 2.0 + self.detector_b.dark_rate_hz;
        let accept = |raw: f64, det: &DetectorSpec| raw / (1.0 + raw * det.dead_time_s);
        let acc_a = accept(raw_a, &self.detector_a);
        let acc_b = accept(raw_b, &self.detector_b);
        let live_a = if raw_a > 0.0 { acc_a / raw_a } else { 1.0 };
        let live_b = if raw_b > 0.0 { acc_b / raw_b } else { 1.0 };
        let true_mean = lambda * self.budget.alpha_a * self.budget.alpha_b / 8.0;
        let accidental = acc_a * acc_b * self.window_s;
        ExpectedRates {
            raw_a_hz: raw_a,
            raw_b_hz: raw_b,
            accepted_a_hz: acc_a,
            accepted_b_hz: acc_b,
            coincidence_mean_hz: true_mean * live_a * live_b + accidental,
        }
    }

    fn check_capacity(&self) -> Result<(), SimError> {
        let r = self.expected_rates();
        let per_pair = (r.accepted_a_hz + r.accepted_b_hz) * self.active_time_s();
        let expected = per_pair * self.plan.len() as f64;
        if expected > TAG_CAPACITY as f64 {
            return Err(SimError::CapacityExceeded { expected, capacity: TAG_CAPACITY });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRates {
    pub raw_a_hz: f64,
    pub raw_b_hz: f64,
    pub accepted_a_hz: f64,
    pub accepted_b_hz: f64,
    /// Phase-averaged coincidence rate in one window, jitter ignored.
    pub coincidence_mean_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub label: String,
    pub phase_sum: f64,
    /// Pairs emitted during the active time, counting those never drawn.
    pub emitted_pairs: u64,
    pub accepted_a: u64,
    pub accepted_b: u64,
    pub active_s: f64,
    pub dead_fraction_a: f64,
    pub dead_fraction_b: f64,
}

impl PairSummary {
    pub fn singles_rate_a(&self) -> f64 {
        self.accepted_a as f64 / self.active_s
    }

    pub fn singles_rate_b(&self) -> f64 {
        self.accepted_b as f64 / self.active_s
    }

    /// A detector spends at least half of the run blind.
    pub fn saturated(&self) -> bool {
        self.dead_fraction_a >= 0.5 || self.dead_fraction_b >= 0.5
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    /// Alice then Bob for each channel pair, in plan order.
    pub streams: Vec<TagStream>,
    pub pairs: Vec<PairSummary>,
    pub timing_violations: Vec<TimingViolation>,
    pub duration_s: f64,
}

impl SimOutput {
    pub fn alice(&self, pair_index: usize) -> &TagStream {
        &self.streams[2 * pair_index]
    }

    pub fn bob(&self, pair_index: usize) -> &TagStream {
        &self.streams[2 * pair_index + 1]
    }

    pub fn any_saturated(&self) -> bool {
        self.pairs.iter().any(PairSummary::saturated)
    }
}

/// Deterministic seed for one (run, stream, channel pair) task.
pub fn substream_seed(master: u64, stream: u64, pair_index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ stream) ^ pair_index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn simulate(config: &SimConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    config.check_capacity()?;
    let violations = validate_timing(&config.umi_a, &config.umi_b, &config.coherence);
    let results: Vec<_> = (0..config.plan.len())
        .into_par_iter()
        .map(|k| simulate_pair(config, k))
        .collect::<Result<_, _>>()?;
    let mut streams = Vec::with_capacity(2 * results.len());
    let mut pairs = Vec::with_capacity(results.len());
    for (a, b, s) in results {
        streams.push(a);
        streams.push(b);
        pairs.push(s);
    }
    Ok(SimOutput { streams, pairs, timing_violations: violations, duration_s: config.duration_s })
}

/// Run one simulation per phase, setting Alice's interferometer phase and
/// using the point index as the substream selector.
pub fn simulate_scan(base: &SimConfig, phases: &[f64]) -> Result<Vec<SimOutput>, SimError> {
    phases
        .par_iter()
        .enumerate()
        .map(|(i, &phi)| {
            let mut cfg = base.clone();
            cfg.umi_a.phase = phi;
            cfg.stream = i as u64;
            simulate(&cfg)
        })
        .collect()
}

/// Tag sink for one detector: reorders the nearly sorted raw detections and
/// applies the non-paralyzable dead time.
struct Sink {
    dead_ps: u64,
    last: Option<u64>,
    pending: BinaryHeap<Reverse<(u64, u64)>>,
    times: Vec<u64>,
    truth: Option<Vec<Origin>>,
}

impl Sink {
    fn new(dead_ps: u64, record_truth: bool) -> Self {
        Self { dead_ps, last: None, pending: BinaryHeap::new(), times: Vec::new(), truth: record_truth.then(Vec::new) }
    }

    fn push(&mut self, t: u64, origin: u64) {
        // Everything in [last, last + dead) is blind regardless of what is
        // still pending, because `last` is final.
        if let Some(l) = self.last {
            if t >= l && t - l < self.dead_ps {
                return;
            }
        }
        self.pending.push(Reverse((t, origin)));
    }

    fn flush_before(&mut self, limit: u64) {
        while let Some(&Reverse((t, origin))) = self.pending.peek() {
            if t >= limit {
                break;
            }
            self.pending.pop();
            if self.last.is_none_or(|l| t >= l + self.dead_ps) {
                self.last = Some(t);
                self.times.push(t);
                if let Some(truth) = self.truth.as_mut() {
                    truth.push(Origin::decode(origin));
                }
            }
        }
    }

    fn blind_until(&self) -> Option<u64> {
        self.last.map(|l| l + self.dead_ps)
    }

    fn finish(mut self, detector: DetectorId) -> TagStream {
        self.flush_before(u64::MAX);
        TagStream { detector: Some(detector), times_ps: self.times, truth: self.truth }
    }
}

struct DarkSource {
    next_ps: f64,
    exp: Option<Exp<f64>>,
}

impl DarkSource {
    fn new(rate_hz: f64, start_ps: f64, rng: &mut impl Rng) -> Self {
        let exp = (rate_hz > 0.0).then(|| Exp::new(rate_hz * 1e-12).expect("positive dark rate"));
        let next_ps = match &exp {
            Some(e) => start_ps + e.sample(rng),
            None => f64::INFINITY,
        };
        Self { next_ps, exp }
    }

    fn drain_until(&mut self, t_ps: f64, sink: &mut Sink, rng: &mut impl Rng) {
        while self.next_ps <= t_ps {
            sink.push(self.next_ps.round() as u64, DARK_ORIGIN);
            self.next_ps += self.exp.as_ref().expect("finite next implies rate").sample(rng);
        }
    }

    fn restart_at(&mut self, t_ps: f64, rng: &mut impl Rng) {
        if self.next_ps < t_ps {
            if let Some(e) = &self.exp {
                self.next_ps = t_ps + e.sample(rng);
            }
        }
    }
}

/// A drawn pair reduced to the detections it causes (delays in ps).
#[derive(Debug, Clone, Copy)]
struct Survivors {
    alice: Option<f64>,
    bob: Option<f64>,
}

/// Conditional distribution of survivors given at least one detection.
struct SurvivorTable {
    cells: Vec<(Survivors, f64)>,
    p_any: f64,
}

impl SurvivorTable {
    fn new(fates: &FateSampler, alpha_a: f64, alpha_b: f64, delay_a_ps: f64, delay_b_ps: f64) -> Self {
        let delay = |p: Path, d: f64| match p {
            Path::Short => 0.0,
            Path::Long => d,
        };
        let mut cells = Vec::new();
        for (fate, p) in fates.cells() {
            let a = fate.alice.map(|x| delay(x, delay_a_ps));
            let b = fate.bob.map(|x| delay(x, delay_b_ps));
            let (pa, pb) = (a.map_or(0.0, |_| alpha_a), b.map_or(0.0, |_| alpha_b));
            let options = [
                (Survivors { alice: a, bob: b }, pa * pb),
                (Survivors { alice: a, bob: None }, pa * (1.0 - pb)),
                (Survivors { alice: None, bob: b }, (1.0 - pa) * pb),
            ];
            for (s, q) in options {
                if q * p > 0.0 && (s.alice.is_some() || s.bob.is_some()) {
                    cells.push((s, q * p));
                }
            }
        }
        let p_any: f64 = cells.iter().map(|c| c.1).sum();
        for c in &mut cells {
            c.1 /= p_any;
        }
        Self { cells, p_any }
    }

    fn sample(&self, rng: &mut impl Rng) -> Survivors {
        let mut u: f64 = rng.random();
        for (s, p) in &self.cells {
            if u < *p {
                return *s;
            }
            u -= p;
        }
        self.cells[self.cells.len() - 1].0
    }
}

struct Jitter {
    normal: Option<Normal<f64>>,
    clamp: f64,
}

impl Jitter {
    fn new(fwhm_s: f64) -> Self {
        // The quoted jitter is for the full system; each arm gets 1/sqrt(2).
        let sigma_ps = fwhm_s * 1e12 / FWHM_PER_SIGMA / std::f64::consts::SQRT_2;
        Self {
            normal: (sigma_ps > 0.0).then(|| Normal::new(0.0, sigma_ps).expect("finite sigma")),
            clamp: JITTER_CLAMP_SIGMA * sigma_ps,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match &self.normal {
            Some(n) => n.sample(rng).clamp(-self.clamp, self.clamp),
            None => 0.0,
        }
    }
}

fn simulate_pair(cfg: &SimConfig, k: usize) -> Result<(TagStream, TagStream, PairSummary), SimError> {
    let pair = cfg.plan.pairs[k];
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(cfg.seed, cfg.stream, k as u64));
    let duration_ps = cfg.duration_s * 1e12;
    let active_ps = cfg.active_time_s() * 1e12;
    let (t0, t1) = match cfg.schedule {
        Schedule::Concurrent => (0.0, duration_ps),
        Schedule::Sequential => (k as f64 * active_ps, (k as f64 + 1.0) * active_ps),
    };

    let phase_sum = cfg.phase_sum(k);
    let fates = FateSampler::new(phase_sum, cfg.v0)?;
    let delay_a_ps = cfg.umi_a.delta_tau_s * 1e12;
    let delay_b_ps = cfg.umi_b.delta_tau_s * 1e12;
    let (alpha_a, alpha_b) = (cfg.budget.alpha_a, cfg.budget.alpha_b);
    let table = SurvivorTable::new(&fates, alpha_a, alpha_b, delay_a_ps, delay_b_ps);
    let jitter_a = Jitter::new(cfg.detector_a.jitter_fwhm_s);
    let jitter_b = Jitter::new(cfg.detector_b.jitter_fwhm_s);

    // Detections land in [t - back, t + lead] around the emission time t.
    let back_ps = jitter_a.clamp.max(jitter_b.clamp) + 2.0;
    let lead_ps = delay_a_ps.max(delay_b_ps) + back_ps;

    let lambda_ps = cfg.pair_rate_hz() * 1e-12;
    let draw_rate = match cfg.mode {
        EmissionMode::Thinned => lambda_ps * table.p_any,
        EmissionMode::Exhaustive => lambda_ps,
    };
    let emission = (draw_rate > 0.0).then(|| Exp::new(draw_rate).expect("positive rate"));

    let dead_a = (cfg.detector_a.dead_time_s * 1e12).round() as u64;
    let dead_b = (cfg.detector_b.dead_time_s * 1e12).round() as u64;
    let mut sink_a = Sink::new(dead_a, cfg.record_truth);
    let mut sink_b = Sink::new(dead_b, cfg.record_truth);
    let mut dark_a = DarkSource::new(cfg.detector_a.dark_rate_hz, t0, &mut rng);
    let mut dark_b = DarkSource::new(cfg.detector_b.dark_rate_hz, t0, &mut rng);

    let mut drawn: u64 = 0;
    let mut skipped_ps = 0.0;
    let mut t = t0;

    let place = |t: f64, delay: f64, jitter: &Jitter, rng: &mut ChaCha8Rng| -> Option<u64> {
        let x = t + delay + jitter.sample(rng);
        (x >= 0.0 && x <= duration_ps).then(|| x.round() as u64)
    };

    if let Some(emission) = emission {
        loop {
            t += emission.sample(&mut rng);
            if t >= t1 {
                break;
            }
            dark_a.drain_until(t, &mut sink_a, &mut rng);
            dark_b.drain_until(t, &mut sink_b, &mut rng);
            let limit = (t - back_ps).max(0.0) as u64;
            sink_a.flush_before(limit);
            sink_b.flush_before(limit);

            let survivors = match cfg.mode {
                EmissionMode::Thinned => table.sample(&mut rng),
                EmissionMode::Exhaustive => {
                    let fate = fates.sample(&mut rng);
                    let keep_a = fate.alice.is_some() && rng.random::<f64>() < alpha_a;
                    let keep_b = fate.bob.is_some() && rng.random::<f64>() < alpha_b;
                    let delay = |p: Path, d: f64| if p == Path::Long { d } else { 0.0 };
                    Survivors {
                        alice: fate.alice.filter(|_| keep_a).map(|p| delay(p, delay_a_ps)),
                        bob: fate.bob.filter(|_| keep_b).map(|p| delay(p, delay_b_ps)),
                    }
                }
            };
            let id = drawn;
            drawn += 1;
            if let Some(d) = survivors.alice {
                if let Some(x) = place(t, d, &jitter_a, &mut rng) {
                    sink_a.push(x, id);
                }
            }
            if let Some(d) = survivors.bob {
                if let Some(x) = place(t, d, &jitter_b, &mut rng) {
                    sink_b.push(x, id);
                }
            }

            if let (Some(free_a), Some(free_b)) = (sink_a.blind_until(), sink_b.blind_until()) {
                let resume = free_a.min(free_b) as f64 - lead_ps;
                if resume > t && dead_a > 0 && dead_b > 0 {
                    skipped_ps += resume.min(t1) - t;
                    t = resume;
                    dark_a.restart_at(t, &mut rng);
                    dark_b.restart_at(t, &mut rng);
                }
            }
        }
    }
    dark_a.drain_until(t1, &mut sink_a, &mut rng);
    dark_b.drain_until(t1, &mut sink_b, &mut rng);

    // Pairs never drawn: all of the skipped time, plus the thinned-away part
    // of the rest when only surviving pairs were drawn.
    let mut undrawn_mean = lambda_ps * skipped_ps;
    if cfg.mode == EmissionMode::Thinned {
        undrawn_mean += lambda_ps * (1.0 - table.p_any) * (t1 - t0 - skipped_ps);
    }
    let undrawn = if undrawn_mean > 0.0 {
        Poisson::new(undrawn_mean).expect("positive mean").sample(&mut rng) as u64
    } else {
        0
    };

    let a = sink_a.finish(DetectorId::alice(pair.alice.index));
    let b = sink_b.finish(DetectorId::bob(pair.bob.index));
    let active_s = (t1 - t0) * 1e-12;
    let summary = PairSummary {
        label: pair.label(),
        phase_sum,
        emitted_pairs: drawn + undrawn,
        accepted_a: a.len() as u64,
        accepted_b: b.len() as u64,
        active_s,
        dead_fraction_a: (a.len() as f64 * cfg.detector_a.dead_time_s / active_s).min(1.0),
        dead_fraction_b: (b.len() as f64 * cfg.detector_b.dead_time_s / active_s).min(1.0),
    };
    Ok((a, b, summary))
}

/// k-way merge of sorted streams; ties keep input order.
pub fn merge_streams(streams: &[TagStream]) -> Result<Vec<TimeTag>, SimError> {
    for s in streams {
        if !s.is_sorted() {
            return Err(SimError::Unsorted(s.detector.unwrap_or(DetectorId::alice(0))));
        }
    }
    let total = streams.iter().map(TagStream::len).sum();
    let mut out = Vec::with_capacity(total);
    let mut heads: BinaryHeap<Reverse<(u64, usize, usize)>> = streams
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_empty())
        .map(|(i, s)| Reverse((s.times_ps[0], i, 0)))
        .collect();
    while let Some(Reverse((t, i, j))) = heads.pop() {
        let detector = streams[i].detector.unwrap_or(DetectorId::alice(0));
        out.push(TimeTag { time_ps: t, detector });
        if let Some(&next) = streams[i].times_ps.get(j + 1) {
            heads.push(Reverse((next, i, j + 1)));
        }
    }
    Ok(out)
}

/// Split a merged tag list back into per-detector streams, ordered by id.
pub fn split_streams(tags: &[TimeTag]) -> Vec<TagStream> {
    let mut map: std::collections::BTreeMap<DetectorId, Vec<u64>> = Default::default();
    for t in tags {
        map.entry(t.detector).or_default().push(t.time_ps);
    }
    map.into_iter().map(|(d, times)| TagStream::new(d, times)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::LinkBudget;
    use crate::grid::build_plan;
    use proptest::prelude::*;
    use std::collections::HashSet;

    pub(crate) fn ideal_config(nbar: f64, duration_s: f64) -> SimConfig {
        let det = DetectorSpec { efficiency: 1.0, dark_rate_hz: 0.0, dead_time_s: 0.0, jitter_fwhm_s: 0.0 };
        SimConfig {
            duration_s,
            seed: 1,
            stream: 0,
            window_s: 250e-12,
            nbar,
            plan: build_plan(46..=46, 47).unwrap(),
            budget: LinkBudget::new(1.0, 1.0).unwrap(),
            detector_a: det,
            detector_b: det,
            umi_a: UmiSpec::default(),
            umi_b: UmiSpec::default(),
            coherence: CoherenceSpec::default(),
            v0: 1.0,
            phase_offsets: vec![],
            record_truth: true,
            mode: EmissionMode::Exhaustive,
            schedule: Schedule::Concurrent,
        }
    }

    fn both_detected_fraction(cfg: &SimConfig) -> (f64, u64) {
        let out = simulate(cfg).unwrap();
        let ids = |s: &TagStream| -> HashSet<u64> {
            s.truth.as_ref().unwrap().iter().filter_map(|o| match o {
                Origin::Pair(i) => Some(*i),
                Origin::Dark => None,
            }).collect()
        };
        let (a, b) = (ids(out.alice(0)), ids(out.bob(0)));
        let both = a.intersection(&b).count() as f64;
        let emitted = out.pairs[0].emitted_pairs;
        (both / emitted as f64, emitted)
    }

    #[test]
    fn lossless_noiseless_pairs_give_three_eighths() {
        // P(central) + 2 P(satellite) = 1/4 + 2/16 at zero phase.
        let cfg = ideal_config(0.1, 2e-4);
        let (f, n) = both_detected_fraction(&cfg);
        let sigma = (0.375 * 0.625 / n as f64).sqrt();
        assert!((f - 0.375).abs() < 4.0 * sigma, "{f} from {n}");
    }

    #[test]
    fn dark_only_run() {
        let mut cfg = ideal_config(0.0, 100.0);
        cfg.detector_a.dark_rate_hz = 1000.0;
        cfg.detector_b.dark_rate_hz = 1000.0;
        let out = simulate(&cfg).unwrap();
        for s in &out.streams {
            let n = s.len() as f64;
            assert!((n - 1e5).abs() < 5.0 * 1e5f64.sqrt(), "{n}");
            assert!(s.truth.as_ref().unwrap().iter().all(|o| *o == Origin::Dark));
        }
    }

    #[test]
    fn same_seed_same_streams() {
        let mut cfg = ideal_config(0.05, 1e-3);
        cfg.detector_a.jitter_fwhm_s = 155e-12;
        cfg.detector_a.dark_rate_hz = 1e5;
        cfg.plan = build_plan(43..=46, 47).unwrap();
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 2;
        assert_ne!(a.streams, simulate(&cfg).unwrap().streams);
    }

    #[test]
    fn dead_time_caps_rate() {
        let mut cfg = ideal_config(1.0, 0.02);
        cfg.budget = LinkBudget::symmetric_loss_db(11.0).unwrap();
        for d in [&mut cfg.detector_a, &mut cfg.detector_b] {
            d.dead_time_s = 9e-6;
            d.dark_rate_hz = 1000.0;
            d.jitter_fwhm_s = 155e-12;
        }
        cfg.mode = EmissionMode::Thinned;
        let out = simulate(&cfg).unwrap();
        for s in &out.streams {
            assert!(s.min_gap_ps().unwrap() >= 9_000_000);
            assert!(s.rate_hz(cfg.duration_s) <= 1.0 / 9e-6);
            assert!(s.rate_hz(cfg.duration_s) > 0.9 / 9e-6);
        }
        assert!(out.any_saturated());
    }

    #[test]
    fn thinned_and_exhaustive_agree() {
        let mut cfg = ideal_config(0.05, 2e-3);
        cfg.budget = LinkBudget::symmetric_loss_db(6.0).unwrap();
        cfg.record_truth = false;
        let ex = simulate(&cfg).unwrap();
        cfg.mode = EmissionMode::Thinned;
        let th = simulate(&cfg).unwrap();
        for i in 0..2 {
            let (x, y) = (ex.streams[i].len() as f64, th.streams[i].len() as f64);
            assert!((x - y).abs() < 5.0 * (x + y).sqrt(), "{x} vs {y}");
        }
        let (x, y) = (ex.pairs[0].emitted_pairs as f64, th.pairs[0].emitted_pairs as f64);
        assert!((x - y).abs() < 5.0 * (x + y).sqrt());
    }

    #[test]
    fn sequential_schedule_uses_slots() {
        let mut cfg = ideal_config(0.01, 1e-3);
        cfg.plan = build_plan(45..=46, 47).unwrap();
        cfg.schedule = Schedule::Sequential;
        let out = simulate(&cfg).unwrap();
        let half = 5e8 as u64 + 400;
        assert!(out.alice(0).times_ps.iter().all(|&t| t < half));
        assert!(out.alice(1).times_ps.iter().all(|&t| t + 800 >= half));
        assert!((out.pairs[0].active_s - 5e-4).abs() < 1e-12);
    }

    #[test]
    fn config_errors() {
        let mut cfg = ideal_config(0.1, 1.0);
        cfg.duration_s = 0.0;
        assert!(matches!(simulate(&cfg), Err(SimError::Config(_))));
        let mut cfg = ideal_config(0.1, 1.0);
        cfg.plan = cfg.plan.truncated(0);
        assert!(matches!(simulate(&cfg), Err(SimError::Config(_))));
        let mut cfg = ideal_config(0.1, 1.0);
        cfg.phase_offsets = vec![0.0, 1.0];
        assert!(matches!(simulate(&cfg), Err(SimError::Config(_))));
        let cfg = ideal_config(10.0, 1e4);
        assert!(matches!(simulate(&cfg), Err(SimError::CapacityExceeded { .. })));
    }

    #[test]
    fn timing_violations_are_reported() {
        let mut cfg = ideal_config(0.01, 1e-4);
        cfg.umi_b.delta_tau_s = 360e-12;
        let out = simulate(&cfg).unwrap();
        assert_eq!(out.timing_violations.len(), 1);
    }

    #[test]
    fn detector_id_codes() {
        for d in [DetectorId::alice(39), DetectorId::bob(55), DetectorId::bob(0)] {
            assert_eq!(DetectorId::from_code(d.code()), d);
        }
        assert_eq!(DetectorId::bob(55).code(), 111);
    }

    #[test]
    fn merge_examples() {
        assert!(merge_streams(&[]).unwrap().is_empty());
        let a = TagStream::new(DetectorId::alice(1), vec![5]);
        let b = TagStream::new(DetectorId::bob(2), vec![3]);
        let m = merge_streams(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.iter().map(|t| t.time_ps).collect::<Vec<_>>(), vec![3, 5]);
        assert_eq!(m[0].detector, DetectorId::bob(2));
        let bad = TagStream::new(DetectorId::alice(1), vec![5, 2]);
        assert!(matches!(merge_streams(&[bad]), Err(SimError::Unsorted(_))));
        // Ties keep input order.
        let c = TagStream::new(DetectorId::bob(3), vec![5]);
        let m = merge_streams(&[a, c]).unwrap();
        assert_eq!(m[0].detector, DetectorId::alice(1));
    }

    proptest! {
        #[test]
        fn merge_matches_sort(streams in prop::collection::vec(prop::collection::vec(0u64..1000, 0..20), 0..6)) {
            let input: Vec<TagStream> = streams.iter().enumerate().map(|(i, v)| {
                let mut v = v.clone();
                v.sort();
                TagStream::new(DetectorId::alice(i as u32), v)
            }).collect();
            let merged = merge_streams(&input).unwrap();
            let mut oracle: Vec<(u64, u32)> = input.iter().enumerate()
                .flat_map(|(i, s)| s.times_ps.iter().map(move |&t| (t, i as u32))).collect();
            oracle.sort();
            let got: Vec<(u64, u32)> = merged.iter().map(|t| (t.time_ps, t.detector.channel)).collect();
            prop_assert_eq!(got, oracle);
            let back = split_streams(&merged);
            prop_assert_eq!(back.iter().map(TagStream::len).sum::<usize>(), merged.len());
        }
    }
}
