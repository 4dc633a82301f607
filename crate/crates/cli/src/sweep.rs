use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use entlink::budget::qber_from_visibility;
use entlink::coincide::{fit_fringe, AnalysisConfig, CoincidenceResult, FringePoint, FringeScan};
use entlink::montecarlo::SimConfig;
use entlink::pipeline::{analytic_estimate, phase_grid, run_scan};

use crate::output::{self, opt};
use crate::scenario::{resolve, Runtime, Scenario};
use crate::{Format, Globals, ScenarioArgs};

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Number of log-spaced n̄ values.
    #[arg(long, default_value_t = 12)]
    pub points: usize,
    #[arg(long, default_value_t = 0.003)]
    pub min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub max: f64,
    /// Also simulate and fit a fringe at every n̄.
    #[arg(long)]
    pub simulate: bool,
    /// Phase points per simulated fringe.
    #[arg(long, default_value_t = 8)]
    pub phases: usize,
    /// Coincidences aimed for per n̄ value, over all pairs and phases.
    #[arg(long, default_value_t = 1e4)]
    pub target: f64,
    /// Cap on simulated seconds per phase point.
    #[arg(long, default_value_t = 2.0)]
    pub max_duration: f64,
}

pub fn log_grid(min: f64, max: f64, n: usize) -> anyhow::Result<Vec<f64>> {
    anyhow::ensure!(min > 0.0 && max >= min && n >= 1, "sweep grid needs 0 < min <= max and at least one point");
    if n == 1 {
        return Ok(vec![min]);
    }
    let step = (max / min).ln() / (n - 1) as f64;
    Ok((0..n).map(|i| if i == n - 1 { max } else { min * (step * i as f64).exp() }).collect())
}

#[derive(Debug, Default, Serialize)]
pub struct Row {
    pub nbar: f64,
    pub v_analytic: Option<f64>,
    pub qber: Option<f64>,
    pub v_fit: Option<f64>,
    pub v_fit_err: Option<f64>,
    pub duration_per_phase_s: Option<f64>,
    pub coincidences: Option<u64>,
    pub per_pair_rate_hz: Option<f64>,
    pub total_rate_hz: Option<f64>,
    pub saturated: Option<bool>,
    pub error: Option<String>,
}

#[derive(Serialize)]
struct Report<'a> {
    command: &'static str,
    scenario: &'a Scenario,
    rows: Vec<Row>,
    runtime: Runtime,
}

/// Per phase point: enough time for the target, within the cap.
pub fn adaptive_duration(cfg: &SimConfig, target: f64, phases: usize, cap_s: f64) -> f64 {
    let rate = cfg.expected_rates().coincidence_mean_hz * cfg.plan.len() as f64;
    if rate > 0.0 {
        (target / (phases as f64 * rate)).min(cap_s)
    } else {
        cap_s
    }
}

fn simulate_row(row: &mut Row, base: &SimConfig, args: &SweepArgs) -> anyhow::Result<()> {
    let mut cfg = base.clone();
    cfg.duration_s = adaptive_duration(&cfg, args.target, args.phases, args.max_duration);
    let rep = run_scan(&cfg, &phase_grid(args.phases), &AnalysisConfig::default())?;
    // All pairs are in phase: pool their counts.
    let points: Vec<FringePoint> = rep
        .phases
        .iter()
        .enumerate()
        .map(|(k, &phase)| {
            let n: u64 = rep.pairs.iter().map(|p| p.scan.points[k].result.coincidences).sum();
            let d = rep.pairs[0].scan.points[k].result.duration_s;
            FringePoint {
                phase,
                result: CoincidenceResult { coincidences: n, rate_hz: n as f64 / d, ..rep.pairs[0].scan.points[k].result },
            }
        })
        .collect();
    let total_time: f64 = points.iter().map(|p| p.result.duration_s).sum();
    let total = rep.total_coincidences();
    row.duration_per_phase_s = Some(cfg.duration_s);
    row.coincidences = Some(total);
    row.total_rate_hz = Some(total as f64 / total_time);
    row.per_pair_rate_hz = Some(total as f64 / total_time / cfg.plan.len() as f64);
    row.saturated = Some(rep.pairs.iter().any(|p| p.saturated));
    let fit = fit_fringe(&FringeScan { points })?;
    row.v_fit = Some(fit.visibility);
    row.v_fit_err = Some(fit.visibility_err);
    Ok(())
}

fn sweep_row(s: &Scenario, nbar: f64, args: &SweepArgs) -> Row {
    let mut row = Row { nbar, ..Default::default() };
    let mut cfg = s.config.clone();
    cfg.nbar = nbar;
    match analytic_estimate(&cfg) {
        Ok(e) if !e.degenerate => {
            row.v_analytic = Some(e.visibility);
            row.qber = qber_from_visibility(e.visibility).ok();
        }
        Ok(_) => {}
        Err(e) => row.error = Some(e.to_string()),
    }
    if args.simulate && row.error.is_none() {
        if let Err(e) = simulate_row(&mut row, &cfg, args) {
            row.error = Some(format!("{e:#}"));
        }
    }
    row
}

pub const CSV_HEADER: &str =
    "nbar,V_analytic,QBER,V_fit,V_fit_err,duration_per_phase_s,coincidences,per_pair_rate_hz,total_rate_hz,saturated,error";

fn csv(rows: &[Row]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.nbar,
            opt(r.v_analytic),
            opt(r.qber),
            opt(r.v_fit),
            opt(r.v_fit_err),
            opt(r.duration_per_phase_s),
            r.coincidences.map(|c| c.to_string()).unwrap_or_default(),
            opt(r.per_pair_rate_hz),
            opt(r.total_rate_hz),
            r.saturated.map(|b| b.to_string()).unwrap_or_default(),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        ));
    }
    s
}

pub fn run(g: &Globals, args: &SweepArgs) -> anyhow::Result<()> {
    let s = resolve(g, &args.scenario)?;
    anyhow::ensure!(args.phases >= 3, "--phases must be at least 3");
    let grid = log_grid(args.min, args.max, args.points)?;
    // Ordered by grid index regardless of completion order.
    let rows: Vec<Row> = grid.par_iter().map(|&n| sweep_row(&s, n, args)).collect();
    let report = Report { command: "sweep", scenario: &s, rows, runtime: s.runtime() };
    if let Some(dir) = &g.out {
        output::ensure_dir(dir)?;
        output::write(dir, "sweep.csv", &csv(&report.rows))?;
        output::write(dir, "sweep.json", &output::to_json(&report)?)?;
    }
    output::print(g.format_or(Format::Csv), &report, || csv(&report.rows))
}
