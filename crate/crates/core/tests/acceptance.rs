//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Tolerances are pinned below.

use std::process::ExitCode;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use entlink::budget::{
    loss_to_distance, max_tolerable_loss, visibility, DarkProbs, LinkBudget, OperatingPoint,
};
use entlink::coincide::{
    count_coincidences, fit_fringe, histogram, AnalysisConfig, CoincidenceHistogram, CoincidenceResult, FringeFit, FringePoint, FringeScan,
};
use entlink::franson::outcome_distribution;
use entlink::montecarlo::{simulate, SimConfig};
use entlink::pipeline::{analytic_estimate, phase_grid, run_scan, ScanReport};
use entlink::presets;

const D: f64 = 2.5e-7;
const SIGMAS: f64 = 3.0;
const PHASE_POINTS: usize = 12;
/// Mean coincidences per phase point for end-to-end fits.
const COINC_PER_POINT: f64 = 1200.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Independent closed form: `V = (n a b / 4) / (n a b / 4 + 2 (n a / 2 + d)(n b / 2 + d))`.
fn v_ref(n: f64, loss_db: f64, d: f64) -> f64 {
    let a = 10f64.powf(-loss_db / 10.0);
    let t = n * a * a / 4.0;
    t / (t + 2.0 * (n * a / 2.0 + d).powi(2))
}

/// Symmetric-arm loss at which `V` falls to `v`, solved by hand from the
/// square root of the visibility equation.
fn max_loss_ref(n: f64, d: f64, v: f64) -> f64 {
    let s = (2.0 * v).sqrt();
    let alpha = 2.0 * s * d / ((n * (1.0 - v)).sqrt() - n * s);
    -10.0 * alpha.log10()
}

fn single_pair(mut cfg: SimConfig, seed: u64) -> SimConfig {
    cfg.plan = cfg.plan.truncated(1);
    cfg.seed = seed;
    cfg
}

fn without_dead_time(mut cfg: SimConfig) -> SimConfig {
    cfg.detector_a.dead_time_s = 0.0;
    cfg.detector_b.dead_time_s = 0.0;
    cfg
}

/// Size the per-point duration from the expected rate and run a scan.
fn scan(mut cfg: SimConfig, per_point: f64) -> (ScanReport, FringeFit) {
    cfg.duration_s = per_point / cfg.expected_rates().coincidence_mean_hz;
    let rep = run_scan(&cfg, &phase_grid(PHASE_POINTS), &AnalysisConfig::default()).expect("scan runs");
    let fit = rep.pairs[0].fit.expect("fringe fits");
    (rep, fit)
}

fn mean_per_point(rep: &ScanReport) -> f64 {
    rep.total_coincidences() as f64 / (rep.pairs.len() * rep.phases.len()) as f64
}

fn criterion_1() -> Outcome {
    let lb = LinkBudget::symmetric_loss_db(11.0).unwrap();
    let v = |n: f64| visibility(&OperatingPoint::new(n, 250e-12, DarkProbs::symmetric(D)).unwrap(), &lb).unwrap().visibility;
    let (v015, v10, v003) = (v(0.015), v(0.10), v(0.003));
    let oracle = [0.015, 0.10, 0.003].iter().all(|&n| (v(n) - v_ref(n, 11.0, D)).abs() < 1e-12);
    let pass = (v015 - 0.971).abs() <= 0.005 && (v10 - 0.83).abs() <= 0.01 && v003 > 0.98 && oracle;
    outcome(pass, format!("V(0.015)={v015:.5} V(0.10)={v10:.5} V(0.003)={v003:.5} oracle_agree={oracle}"))
}

fn criterion_2() -> Outcome {
    let loss = max_tolerable_loss(0.05, DarkProbs::symmetric(D), 0.82).unwrap();
    let oracle = max_loss_ref(0.05, D, 0.82);
    let km = loss_to_distance(47.0, 11.0, 0.2).unwrap();
    let pass = (46.0..=48.0).contains(&loss) && (loss - oracle).abs() < 1e-4 && (km - 360.0).abs() < 1e-9;
    outcome(pass, format!("max_loss={loss:.4} dB (oracle {oracle:.4}) distance(47,11,0.2)={km} km"))
}

fn criterion_3() -> Outcome {
    let cfg = single_pair(presets::km150(), 3);
    let analytic = analytic_estimate(&cfg).unwrap().visibility;
    let (rep, fit) = scan(cfg, COINC_PER_POINT);
    let mean = mean_per_point(&rep);
    let pass = (0.89..=0.92).contains(&analytic)
        && (fit.visibility - analytic).abs() <= SIGMAS * fit.visibility_err
        && (0.84..=0.95).contains(&fit.visibility)
        && mean >= 1000.0;
    outcome(
        pass,
        format!(
            "analytic={analytic:.4} fit={:.4}±{:.4} mean/point={mean:.0} min/point={}",
            fit.visibility,
            fit.visibility_err,
            rep.min_point_coincidences()
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, n) in [0.003, 0.015, 0.05].into_iter().enumerate() {
        let mut cfg = single_pair(presets::back_to_back(), 40 + i as u64);
        cfg.nbar = n;
        let analytic = analytic_estimate(&cfg).unwrap().visibility;
        let (_, fit) = scan(cfg, COINC_PER_POINT);
        let z = (fit.visibility - analytic) / fit.visibility_err;
        pass &= z.abs() <= SIGMAS;
        parts.push(format!("n={n}: fit={:.4}±{:.4} analytic={analytic:.4} z={z:+.2}", fit.visibility, fit.visibility_err));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_5() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, n) in [0.3, 1.0].into_iter().enumerate() {
        let mut cfg = without_dead_time(single_pair(presets::back_to_back(), 50 + i as u64));
        cfg.nbar = n;
        let analytic = analytic_estimate(&cfg).unwrap().visibility;
        let (_, fit) = scan(cfg, 20_000.0);
        let gap = (analytic - fit.visibility) / fit.visibility_err;
        pass &= gap > SIGMAS;
        parts.push(format!("n={n}: fit={:.4}±{:.4} analytic={analytic:.4} gap={gap:.1}σ", fit.visibility, fit.visibility_err));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_6() -> Outcome {
    let base = without_dead_time(presets::back_to_back());
    let run = |pairs: usize, seed: u64| {
        let mut cfg = base.clone();
        cfg.plan = cfg.plan.truncated(pairs);
        cfg.seed = seed;
        cfg.duration_s = 0.05;
        let out = simulate(&cfg).unwrap();
        let cfgan = AnalysisConfig::default();
        let total: u64 = (0..pairs)
            .map(|k| count_coincidences(out.alice(k), out.bob(k), &cfgan, out.pairs[k].active_s).unwrap().coincidences)
            .sum();
        (total, out.any_saturated())
    };
    let (one, sat1) = run(1, 60);
    let (eight, sat8) = run(8, 61);
    let ratio = eight as f64 / one as f64;
    let rel_err = (1.0 / one as f64 + 1.0 / eight as f64).sqrt();
    let pass = (ratio / 8.0 - 1.0).abs() <= 0.05 && (ratio / 8.0 - 1.0).abs() <= SIGMAS * rel_err && !sat1 && !sat8;
    outcome(pass, format!("1 pair={one} 8 pairs={eight} ratio={ratio:.3} (stat ±{:.3}) saturated={}", 8.0 * rel_err, sat1 || sat8))
}

fn criterion_7() -> Outcome {
    let rate = |n: f64, seed: u64| {
        let mut cfg = single_pair(presets::back_to_back(), seed);
        cfg.nbar = n;
        cfg.duration_s = 2.0;
        let out = simulate(&cfg).unwrap();
        let p = &out.pairs[0];
        let c = count_coincidences(out.alice(0), out.bob(0), &AnalysisConfig::default(), p.active_s).unwrap();
        let gap = out.alice(0).min_gap_ps().min(out.bob(0).min_gap_ps());
        (p.singles_rate_a().max(p.singles_rate_b()), c.rate_hz, gap, out.any_saturated())
    };
    let limit = 1.0 / presets::DEAD_TIME_S;
    let (singles, c1, gap, saturated) = rate(1.0, 70);
    let (_, c01, _, _) = rate(0.1, 71);
    // Non-paralyzable: at most floor(T / τ) + 1 tags in T.
    let cap = ((2.0 / presets::DEAD_TIME_S).floor() + 1.0) / 2.0;
    let dead_ps = (presets::DEAD_TIME_S * 1e12).round() as u64;
    let pass = singles <= cap && gap.is_none_or(|g| g >= dead_ps) && c1 < 10.0 * c01 && saturated;
    outcome(
        pass,
        format!(
            "singles={singles:.0}/s limit={limit:.0}/s min_gap={gap:?} ps coinc(1.0)={c1:.1}/s coinc(0.1)={c01:.1}/s saturated={saturated}"
        ),
    )
}

const PEAK_POSITION_PS: f64 = 30.0;

/// Highest bin within 170 ps of `c`: (bin centre, count).
fn local_max(h: &CoincidenceHistogram, c: f64) -> (f64, f64) {
    (0..h.counts.len())
        .filter(|&i| (h.bin_center_ps(i) - c).abs() <= 170.0)
        .map(|i| (h.bin_center_ps(i), h.counts[i] as f64))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

fn criterion_8() -> Outcome {
    let mut cfg = single_pair(presets::back_to_back(), 80);
    cfg.duration_s = 150.0;
    let out = simulate(&cfg).unwrap();
    let h = histogram(out.alice(0), out.bob(0), 10, 1000).unwrap();
    // Flat floor from the outer bins, |Δt| > 600 ps.
    let outer: Vec<u64> = (0..h.counts.len()).filter(|&i| h.bin_center_ps(i).abs() > 600.0).map(|i| h.counts[i]).collect();
    let floor = outer.iter().sum::<u64>() as f64 / outer.len() as f64;
    let half = 170.0;
    let net = |c: f64| {
        let raw = h.area(c - half, c + half) as f64;
        let bins = (2.0 * half / h.bin_width_ps as f64).round();
        (raw - floor * bins, raw)
    };
    let (central, central_raw) = net(0.0);
    let (at0, _) = local_max(&h, 0.0);
    let mut pass = at0.abs() <= PEAK_POSITION_PS;
    let table = outcome_distribution(0.0, 1.0).unwrap();
    let expected = table.satellite_early / table.central;
    let mut parts = vec![format!("central={central:.0} floor/bin={floor:.2}")];
    for c in [-340.0, 340.0] {
        let (sat, sat_raw) = net(c);
        let ratio = sat / central;
        let err = ratio * (sat_raw / (sat * sat) + central_raw / (central * central)).sqrt();
        let (at, peak) = local_max(&h, c);
        let valley = h.counts[h.bin_of((c / 2.0) as i64).unwrap()] as f64;
        pass &= (ratio - expected).abs() <= SIGMAS * err && (at - c).abs() <= PEAK_POSITION_PS && peak > 2.0 * valley;
        parts.push(format!("Δt={c:+.0}: ratio={ratio:.4}±{err:.4} (expect {expected})"));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let (v_true, c, phi0) = (0.9, 500.0, 0.4);
    let trials = 100;
    let mut covered = 0;
    for _ in 0..trials {
        let points = phase_grid(PHASE_POINTS)
            .into_iter()
            .map(|phi| {
                let mean = c * (1.0 + v_true * (phi + phi0).cos());
                let n = Poisson::new(mean).unwrap().sample(&mut rng) as u64;
                FringePoint {
                    phase: phi,
                    result: CoincidenceResult {
                        window_ps: 250,
                        center_ps: 0,
                        coincidences: n,
                        acc_estimate: 0,
                        duration_s: 1.0,
                        rate_hz: n as f64,
                    },
                }
            })
            .collect();
        let fit = fit_fringe(&FringeScan { points }).unwrap();
        let (lo, hi) = fit.interval(1.96);
        covered += (lo..=hi).contains(&v_true) as usize;
    }
    let coverage = covered as f64 / trials as f64;
    outcome((0.90..=0.99).contains(&coverage), format!("95% CI coverage={coverage:.2} over {trials} scans"))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, f64, fn() -> Outcome); 9] = [
        (1, "analytic visibility", 1.0, criterion_1),
        (2, "47 dB loss bound", 1.0, criterion_2),
        (3, "150 km preset", 300.0, criterion_3),
        (4, "low-n agreement", 600.0, criterion_4),
        (5, "high-n discrepancy", 300.0, criterion_5),
        (6, "linear channel scaling", 300.0, criterion_6),
        (7, "detector saturation", 120.0, criterion_7),
        (8, "histogram structure", 120.0, criterion_8),
        (9, "fit CI coverage", 300.0, criterion_9),
    ];
    let mut failed = 0;
    for (id, name, budget_s, run) in criteria {
        let t = Instant::now();
        let o = run();
        let secs = t.elapsed().as_secs_f64();
        let pass = o.pass && secs <= budget_s;
        failed += !pass as u32;
        println!(
            "criterion {id} [{name}]: {} ({secs:.1}s of {budget_s:.0}s) {}",
            if pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("criterion 10 [absolute rates]: excluded, rates are reported but not bound");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
