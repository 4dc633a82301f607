use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::Serialize;

use entlink::coincide::{
    count_coincidences, fit_fringe, histogram, raw_vs_net, AnalysisConfig, CoincidenceHistogram, CoincidenceResult,
    FringeFit, FringePoint, FringeScan, RawNet, DEFAULT_WINDOW_PS,
};
use entlink::grid::{Grid, DEFAULT_DEGENERATE_INDEX};
use entlink::montecarlo::{split_streams, DetectorId, TagStream, TimeTag};
use entlink::pipeline::analytic_estimate;
use entlink::tagfile::{self, TagFileError};

use crate::output;
use crate::simulate::{Sidecar, SIDECAR};
use crate::{Format, Globals};

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Directory written by `simulate`, or a single `.ett`/`.csv` tag file.
    pub input: PathBuf,
    /// Coincidence window, ps.
    #[arg(long, default_value_t = DEFAULT_WINDOW_PS)]
    pub window: u64,
    /// Histogram bin width, ps.
    #[arg(long, default_value_t = 10)]
    pub bin: u64,
    /// Histogram half range, ps.
    #[arg(long, default_value_t = 1000)]
    pub range: u64,
    /// Acquisition time of a lone tag file, s.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Degenerate channel used to pair detectors of a lone tag file.
    #[arg(long, default_value_t = DEFAULT_DEGENERATE_INDEX)]
    pub degenerate: u32,
}

#[derive(Serialize)]
struct PairAnalysis {
    label: String,
    alice: DetectorId,
    bob: DetectorId,
    coincidences: u64,
    accidentals: u64,
    fit: Option<FringeFit>,
    raw_net: Option<RawNet>,
    fit_error: Option<String>,
    points: Vec<FringePoint>,
}

#[derive(Serialize)]
struct Totals {
    coincidences: u64,
    accidentals: u64,
}

#[derive(Serialize)]
struct Report {
    command: &'static str,
    input: String,
    analysis: AnalysisConfig,
    phases: Vec<f64>,
    duration_s: f64,
    analytic_visibility: Option<f64>,
    pairs: Vec<PairAnalysis>,
    totals: Totals,
}

struct Input {
    phases: Vec<f64>,
    files: Vec<PathBuf>,
    duration_s: f64,
    pairs: Vec<(String, DetectorId, DetectorId)>,
    analytic: Option<f64>,
    delta_tau_ps: f64,
}

fn read_tags(path: &Path) -> Result<Vec<TimeTag>, TagFileError> {
    let f = File::open(path)?;
    if path.extension().is_some_and(|e| e == "csv") {
        tagfile::read_csv(f)
    } else {
        tagfile::read_binary(f)
    }
}

fn load_input(args: &AnalyzeArgs) -> anyhow::Result<Input> {
    if args.input.is_dir() {
        let side = args.input.join(SIDECAR);
        let text = std::fs::read_to_string(&side).with_context(|| format!("reading {}", side.display()))?;
        let sc: Sidecar = serde_json::from_str(&text).with_context(|| format!("parsing {}", side.display()))?;
        let pairs = sc
            .config
            .plan
            .pairs
            .iter()
            .map(|p| (p.label(), DetectorId::alice(p.alice.index), DetectorId::bob(p.bob.index)))
            .collect();
        return Ok(Input {
            files: sc.files.iter().map(|f| args.input.join(f)).collect(),
            phases: sc.phases,
            duration_s: args.duration.unwrap_or(sc.config.active_time_s()),
            pairs,
            analytic: analytic_estimate(&sc.config).ok().filter(|e| !e.degenerate).map(|e| e.visibility),
            delta_tau_ps: sc.config.umi_a.delta_tau_s * 1e12,
        });
    }
    let duration_s = args.duration.context("--duration is required for a lone tag file")?;
    Ok(Input {
        phases: vec![0.0],
        files: vec![args.input.clone()],
        duration_s,
        pairs: Vec::new(),
        analytic: None,
        delta_tau_ps: 340.0,
    })
}

/// Pair each Alice detector with Bob's conjugate channel.
fn infer_pairs(streams: &BTreeMap<DetectorId, TagStream>, degenerate: u32) -> Vec<(String, DetectorId, DetectorId)> {
    let grid = Grid::default();
    streams
        .keys()
        .filter(|d| d.arm == entlink::montecarlo::Arm::Alice)
        .filter_map(|a| {
            let bob = grid.conjugate(a.channel, degenerate).ok()?;
            Some((format!("{}-{}", a.channel, bob), *a, DetectorId::bob(bob)))
        })
        .collect()
}

fn add(into: &mut Option<CoincidenceHistogram>, h: CoincidenceHistogram) {
    match into {
        Some(acc) => {
            for (a, b) in acc.counts.iter_mut().zip(&h.counts) {
                *a += b;
            }
            acc.total_pairs_examined += h.total_pairs_examined;
        }
        None => *into = Some(h),
    }
}

pub fn run(g: &Globals, args: &AnalyzeArgs) -> anyhow::Result<()> {
    let mut input = load_input(args)?;
    let analysis = AnalysisConfig { window_ps: args.window, ..AnalysisConfig::for_delay(input.delta_tau_ps) };
    let empty = TagStream::default();

    let mut points: Vec<Vec<FringePoint>> = Vec::new();
    let mut hists: Vec<Option<CoincidenceHistogram>> = Vec::new();
    for (k, path) in input.files.iter().enumerate() {
        let tags = read_tags(path).with_context(|| format!("reading tag file {}", path.display()))?;
        let streams: BTreeMap<DetectorId, TagStream> =
            split_streams(&tags).into_iter().filter_map(|s| Some((s.detector?, s))).collect();
        if k == 0 && input.pairs.is_empty() {
            input.pairs = infer_pairs(&streams, args.degenerate);
            anyhow::ensure!(!input.pairs.is_empty(), "no Alice detectors with a conjugate channel in {}", path.display());
        }
        if k == 0 {
            points = vec![Vec::new(); input.pairs.len()];
            hists = vec![None; input.pairs.len()];
        }
        for (i, (_, a, b)) in input.pairs.iter().enumerate() {
            let (sa, sb) = (streams.get(a).unwrap_or(&empty), streams.get(b).unwrap_or(&empty));
            let r = count_coincidences(sa, sb, &analysis, input.duration_s)?;
            points[i].push(FringePoint { phase: input.phases[k], result: r });
            add(&mut hists[i], histogram(sa, sb, args.bin, args.range)?);
        }
    }

    let mut pairs = Vec::new();
    for (i, (label, a, b)) in input.pairs.iter().enumerate() {
        let scan = FringeScan { points: std::mem::take(&mut points[i]) };
        let accidentals: u64 = scan.points.iter().map(|p| p.result.acc_estimate).sum();
        let acc = CoincidenceResult {
            window_ps: analysis.window_ps,
            center_ps: analysis.center_ps + analysis.accidental_offset_ps,
            coincidences: accidentals,
            acc_estimate: accidentals,
            duration_s: input.duration_s * scan.points.len() as f64,
            rate_hz: accidentals as f64 / (input.duration_s * scan.points.len() as f64),
        };
        let (fit, raw_net, fit_error) = match fit_fringe(&scan) {
            Ok(f) => (Some(f), raw_vs_net(&scan, &acc).ok(), None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        pairs.push(PairAnalysis {
            label: label.clone(),
            alice: *a,
            bob: *b,
            coincidences: scan.total_coincidences(),
            accidentals,
            fit,
            raw_net,
            fit_error,
            points: scan.points,
        });
    }
    let totals = Totals {
        coincidences: pairs.iter().map(|p| p.coincidences).sum(),
        accidentals: pairs.iter().map(|p| p.accidentals).sum(),
    };
    let report = Report {
        command: "analyze",
        input: args.input.display().to_string(),
        analysis,
        phases: input.phases.clone(),
        duration_s: input.duration_s,
        analytic_visibility: input.analytic,
        pairs,
        totals,
    };

    if let Some(dir) = &g.out {
        output::ensure_dir(dir)?;
        output::write(dir, "analysis.json", &output::to_json(&report)?)?;
        for (p, h) in report.pairs.iter().zip(&hists) {
            let scan = FringeScan { points: p.points.clone() };
            output::write(dir, &format!("fringe_{}.csv", p.label), &scan.to_csv())?;
            if let Some(h) = h {
                output::write(dir, &format!("histogram_{}.csv", p.label), &h.to_csv())?;
            }
        }
    }
    output::print(g.format_or(Format::Json), &report, || csv(&report))
}

fn csv(r: &Report) -> String {
    let mut s = String::from("label,coincidences,accidentals,V,V_err,V_net,V_net_err,chi2_per_dof,low_snr,error\n");
    for p in &r.pairs {
        let f = p.fit.as_ref();
        let n = p.raw_net.as_ref();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            p.label,
            p.coincidences,
            p.accidentals,
            output::opt(f.map(|f| f.visibility)),
            output::opt(f.map(|f| f.visibility_err)),
            output::opt(n.map(|n| n.net)),
            output::opt(n.map(|n| n.net_err)),
            output::opt(f.map(|f| f.chi2_per_dof)),
            f.map(|f| f.low_snr.to_string()).unwrap_or_default(),
            p.fit_error.clone().unwrap_or_default()
        ));
    }
    s
}
