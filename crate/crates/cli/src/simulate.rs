use std::fs::File;

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};

use entlink::coincide::{count_coincidences, AnalysisConfig};
use entlink::franson::TimingViolation;
use entlink::montecarlo::{merge_streams, simulate, SimConfig};
use entlink::pipeline::phase_grid;
use entlink::tagfile;

use crate::output;
use crate::scenario::{resolve, Runtime, Scenario};
use crate::{Format, Globals, ScenarioArgs};

pub const SIDECAR: &str = "run.json";
pub const DEFAULT_OUT: &str = "entlink-out";

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Number of evenly spaced phase points; 1 runs a single point.
    #[arg(long, default_value_t = 1)]
    pub scan: usize,
    /// Alice's interferometer phase for a single point, rad.
    #[arg(long, default_value_t = 0.0)]
    pub phase: f64,
    /// Also write each scan point as CSV.
    #[arg(long)]
    pub csv: bool,
}

/// Written next to the tag files so `analyze` can pair channels and
/// recover durations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub name: String,
    pub preset: String,
    pub version: String,
    pub config: SimConfig,
    pub phases: Vec<f64>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PairRow {
    pub label: String,
    pub emitted_pairs: u64,
    pub singles_a: u64,
    pub singles_b: u64,
    pub coincidences: u64,
    pub accidentals: u64,
    pub active_s: f64,
    pub singles_rate_a_hz: f64,
    pub singles_rate_b_hz: f64,
    pub coincidence_rate_hz: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Totals {
    pub emitted_pairs: u64,
    pub singles_a: u64,
    pub singles_b: u64,
    pub coincidences: u64,
    pub accidentals: u64,
    pub coincidence_rate_hz: f64,
    pub any_saturated: bool,
}

impl Totals {
    /// Recount from the rows; a mismatch means the report is corrupt.
    pub fn check(&self, rows: &[PairRow]) -> anyhow::Result<()> {
        let sum = |f: fn(&PairRow) -> u64| rows.iter().map(f).sum::<u64>();
        anyhow::ensure!(
            self.coincidences == sum(|r| r.coincidences)
                && self.singles_a == sum(|r| r.singles_a)
                && self.singles_b == sum(|r| r.singles_b)
                && self.accidentals == sum(|r| r.accidentals)
                && self.emitted_pairs == sum(|r| r.emitted_pairs),
            "report totals disagree with the per-pair rows"
        );
        Ok(())
    }

    pub fn of(rows: &[PairRow]) -> Self {
        rows.iter().fold(Totals::default(), |t, r| Totals {
            emitted_pairs: t.emitted_pairs + r.emitted_pairs,
            singles_a: t.singles_a + r.singles_a,
            singles_b: t.singles_b + r.singles_b,
            coincidences: t.coincidences + r.coincidences,
            accidentals: t.accidentals + r.accidentals,
            coincidence_rate_hz: t.coincidence_rate_hz + r.coincidence_rate_hz,
            any_saturated: t.any_saturated || r.saturated,
        })
    }
}

#[derive(Serialize)]
struct Report<'a> {
    command: &'static str,
    scenario: &'a Scenario,
    phases: &'a [f64],
    pairs: Vec<PairRow>,
    totals: Totals,
    timing_violations: Vec<TimingViolation>,
    files: &'a [String],
    runtime: Runtime,
}

fn csv(rows: &[PairRow], totals: &Totals) -> String {
    let mut s = String::from(
        "label,emitted_pairs,singles_a,singles_b,coincidences,accidentals,coincidence_rate_hz,saturated\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.label, r.emitted_pairs, r.singles_a, r.singles_b, r.coincidences, r.accidentals, r.coincidence_rate_hz, r.saturated
        ));
    }
    let t = totals;
    s.push_str(&format!(
        "total,{},{},{},{},{},{},{}\n",
        t.emitted_pairs, t.singles_a, t.singles_b, t.coincidences, t.accidentals, t.coincidence_rate_hz, t.any_saturated
    ));
    s
}

pub fn run(g: &Globals, args: &SimulateArgs) -> anyhow::Result<()> {
    let s = resolve(g, &args.scenario)?;
    anyhow::ensure!(args.scan >= 1, "--scan must be at least 1");
    let phases = if args.scan == 1 { vec![args.phase] } else { phase_grid(args.scan) };
    let dir = g.out.clone().unwrap_or_else(|| DEFAULT_OUT.into());
    output::ensure_dir(&dir)?;

    let analysis = AnalysisConfig::for_delay(s.config.umi_a.delta_tau_s * 1e12);
    let mut rows: Vec<PairRow> =
        s.config.plan.pairs.iter().map(|p| PairRow { label: p.label(), ..Default::default() }).collect();
    let mut files = Vec::new();
    let mut violations = Vec::new();
    for (k, &phi) in phases.iter().enumerate() {
        let mut cfg = s.config.clone();
        cfg.umi_a.phase = phi;
        cfg.stream = k as u64;
        let out = simulate(&cfg).context("simulation refused or failed")?;
        violations = out.timing_violations.clone();
        for (i, row) in rows.iter_mut().enumerate() {
            let p = &out.pairs[i];
            let c = count_coincidences(out.alice(i), out.bob(i), &analysis, p.active_s)?;
            row.emitted_pairs += p.emitted_pairs;
            row.singles_a += p.accepted_a;
            row.singles_b += p.accepted_b;
            row.coincidences += c.coincidences;
            row.accidentals += c.acc_estimate;
            row.active_s += p.active_s;
            row.saturated |= p.saturated();
        }
        let tags = merge_streams(&out.streams)?;
        let name = format!("scan_{k:03}.ett");
        let path = dir.join(&name);
        tagfile::write_binary(File::create(&path).with_context(|| format!("creating {}", path.display()))?, &tags)?;
        if args.csv {
            let csv_path = dir.join(format!("scan_{k:03}.csv"));
            tagfile::write_csv(File::create(&csv_path)?, &tags)?;
        }
        files.push(name);
    }
    for r in &mut rows {
        r.singles_rate_a_hz = r.singles_a as f64 / r.active_s;
        r.singles_rate_b_hz = r.singles_b as f64 / r.active_s;
        r.coincidence_rate_hz = r.coincidences as f64 / r.active_s;
    }
    let totals = Totals::of(&rows);
    totals.check(&rows)?;

    let sidecar = Sidecar {
        name: s.name.clone(),
        preset: s.preset.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: s.config.clone(),
        phases: phases.clone(),
        files: files.clone(),
    };
    output::write(&dir, SIDECAR, &output::to_json(&sidecar)?)?;
    let report = Report {
        command: "simulate",
        scenario: &s,
        phases: &phases,
        pairs: rows,
        totals,
        timing_violations: violations,
        files: &files,
        runtime: s.runtime(),
    };
    output::write(&dir, "simulate.json", &output::to_json(&report)?)?;
    output::print(g.format_or(Format::Json), &report, || csv(&report.pairs, &report.totals))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_sum_rows() {
        let rows = vec![
            PairRow { label: "a".into(), coincidences: 3, singles_a: 5, coincidence_rate_hz: 1.5, ..Default::default() },
            PairRow { label: "b".into(), coincidences: 4, singles_a: 1, saturated: true, ..Default::default() },
        ];
        let t = Totals::of(&rows);
        assert_eq!((t.coincidences, t.singles_a), (7, 6));
        assert!(t.any_saturated);
        assert_eq!(t.coincidence_rate_hz, 1.5);
    }
}
