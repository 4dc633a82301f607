use clap::Args;
use serde::Serialize;

use entlink::budget::{
    loss_to_distance, max_tolerable_loss, optimal_nbar, qber_from_visibility, security_margins, visibility, DarkProbs,
    OperatingPoint, SecurityMargins, QC_VISIBILITY_THRESHOLD,
};
use entlink::montecarlo::ExpectedRates;
use entlink::presets::{BASELINE_LOSS_DB, FIBER_ATTENUATION_DB_PER_KM};

use crate::output::{self, opt};
use crate::scenario::{resolve, Runtime, Scenario};
use crate::{Format, Globals, ScenarioArgs};

#[derive(Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Visibility the loss and n̄ solvers aim for.
    #[arg(long, default_value_t = QC_VISIBILITY_THRESHOLD)]
    pub v_target: f64,
}

/// A solver result or the reason it has none.
#[derive(Debug, Serialize)]
pub struct Field {
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl<E: std::fmt::Display> From<Result<f64, E>> for Field {
    fn from(r: Result<f64, E>) -> Self {
        match r {
            Ok(v) => Field { value: Some(v), error: None },
            Err(e) => Field { value: None, error: Some(e.to_string()) },
        }
    }
}

#[derive(Serialize)]
pub struct Estimate {
    pub nbar: f64,
    pub loss_a_db: f64,
    pub loss_b_db: f64,
    pub dark_prob_a: f64,
    pub dark_prob_b: f64,
    /// Absent when n̄ = 0: there is no signal to see.
    pub visibility: Option<f64>,
    pub qber: Option<f64>,
    pub security: Option<SecurityMargins>,
    pub beyond_model_validity: bool,
    pub degenerate: bool,
    pub v_target: f64,
    pub max_loss_db: Field,
    pub max_distance_km: Field,
    pub optimal_nbar: Field,
    /// Per channel pair.
    pub rates: ExpectedRates,
    pub pairs: usize,
    pub total_coincidence_rate_hz: f64,
}

#[derive(Serialize)]
struct Report<'a> {
    command: &'static str,
    scenario: &'a Scenario,
    estimate: Estimate,
    runtime: Runtime,
}

pub fn estimate(s: &Scenario, v_target: f64) -> anyhow::Result<Estimate> {
    let c = &s.config;
    let dark = DarkProbs { a: c.detector_a.dark_probability(c.window_s), b: c.detector_b.dark_probability(c.window_s) };
    let op = OperatingPoint::new(c.nbar, c.window_s, dark)?;
    let est = visibility(&op, &c.budget)?;
    let v = (!est.degenerate).then_some(est.visibility);
    let max_loss: Field = max_tolerable_loss(c.nbar, dark, v_target).into();
    let max_distance = match max_loss.value {
        Some(l) => loss_to_distance(l, BASELINE_LOSS_DB, FIBER_ATTENUATION_DB_PER_KM).into(),
        None => Field { value: None, error: Some("no loss bound".into()) },
    };
    let rates = c.expected_rates();
    Ok(Estimate {
        nbar: c.nbar,
        loss_a_db: c.budget.loss_a_db(),
        loss_b_db: c.budget.loss_b_db(),
        dark_prob_a: dark.a,
        dark_prob_b: dark.b,
        visibility: v,
        qber: v.map(qber_from_visibility).transpose()?,
        security: v.map(security_margins),
        beyond_model_validity: est.beyond_model_validity,
        degenerate: est.degenerate,
        v_target,
        max_loss_db: max_loss,
        max_distance_km: max_distance,
        optimal_nbar: optimal_nbar(&c.budget, dark, v_target).into(),
        rates,
        pairs: c.plan.len(),
        total_coincidence_rate_hz: rates.coincidence_mean_hz * c.plan.len() as f64,
    })
}

pub const CSV_HEADER: &str =
    "nbar,loss_a_db,loss_b_db,V,QBER,bell_violated,qc_ok,max_loss_db,max_distance_km,optimal_nbar,coincidence_rate_hz";

pub fn csv_row(e: &Estimate) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        e.nbar,
        e.loss_a_db,
        e.loss_b_db,
        opt(e.visibility),
        opt(e.qber),
        e.security.map(|m| m.bell_violated.to_string()).unwrap_or_default(),
        e.security.map(|m| m.qc_ok.to_string()).unwrap_or_default(),
        opt(e.max_loss_db.value),
        opt(e.max_distance_km.value),
        opt(e.optimal_nbar.value),
        e.rates.coincidence_mean_hz
    )
}

pub fn run(g: &Globals, args: &EstimateArgs) -> anyhow::Result<()> {
    let s = resolve(g, &args.scenario)?;
    let report = Report { command: "estimate", scenario: &s, estimate: estimate(&s, args.v_target)?, runtime: s.runtime() };
    let csv = || format!("{CSV_HEADER}\n{}\n", csv_row(&report.estimate));
    if let Some(dir) = &g.out {
        output::ensure_dir(dir)?;
        output::write(dir, "estimate.json", &output::to_json(&report)?)?;
        output::write(dir, "estimate.csv", &csv())?;
    }
    output::print(g.format_or(Format::Json), &report, csv)
}
