use std::ops::RangeInclusive;

use anyhow::Context;
use clap::Args;
use serde::Serialize;

use entlink::grid::{ChannelPlan, Grid, ItuChannel, DEFAULT_DEGENERATE_INDEX, DEFAULT_SPACING_GHZ};

use crate::{output, Format, Globals};

#[derive(Args)]
pub struct PlanArgs {
    /// Alice's channel indices, `first..last` inclusive.
    #[arg(long, default_value = "39..46", value_parser = parse_range)]
    pub alice: RangeInclusive<u32>,
    #[arg(long, default_value_t = DEFAULT_DEGENERATE_INDEX)]
    pub degenerate: u32,
    /// Grid spacing in GHz.
    #[arg(long, default_value_t = DEFAULT_SPACING_GHZ)]
    pub spacing: f64,
}

pub fn parse_range(s: &str) -> Result<RangeInclusive<u32>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected first..last, got {s:?}"))?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let a: u32 = a.trim().parse().map_err(|_| format!("bad start in {s:?}"))?;
    let b: u32 = b.trim().parse().map_err(|_| format!("bad end in {s:?}"))?;
    Ok(a..=b)
}

#[derive(Serialize)]
struct PlanRow {
    label: String,
    alice: ItuChannel,
    bob: ItuChannel,
}

#[derive(Serialize)]
struct PlanReport {
    degenerate_index: u32,
    spacing_ghz: f64,
    pump_frequency_thz: f64,
    pairs: Vec<PlanRow>,
}

fn csv(plan: &ChannelPlan) -> String {
    let mut s = String::from("label,alice_index,alice_thz,alice_nm,bob_index,bob_thz,bob_nm\n");
    for p in &plan.pairs {
        let (a, b) = (p.alice, p.bob);
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.label(),
            a.index,
            a.frequency_thz,
            a.wavelength_nm,
            b.index,
            b.frequency_thz,
            b.wavelength_nm
        ));
    }
    s
}

pub fn run(g: &Globals, args: &PlanArgs) -> anyhow::Result<()> {
    let grid = Grid::new(args.spacing)?;
    let plan = grid.build_plan(args.alice.clone(), args.degenerate).context("building channel plan")?;
    let report = PlanReport {
        degenerate_index: plan.degenerate_index,
        spacing_ghz: plan.spacing_ghz,
        pump_frequency_thz: plan.pump_frequency_thz()?,
        pairs: plan.pairs.iter().map(|p| PlanRow { label: p.label(), alice: p.alice, bob: p.bob }).collect(),
    };
    if let Some(dir) = &g.out {
        output::ensure_dir(dir)?;
        output::write(dir, "plan.json", &plan.to_json())?;
        output::write(dir, "plan.csv", &csv(&plan))?;
    }
    output::print(g.format_or(Format::Json), &report, || csv(&plan))
}
