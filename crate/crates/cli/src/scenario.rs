//! Preset, config file and flag overrides resolved into one `SimConfig`.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use entlink::montecarlo::SimConfig;
use entlink::presets::{self, Preset};

use crate::{Globals, ScenarioArgs};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    preset: Option<String>,
    #[serde(default)]
    config: toml::Table,
}

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub name: String,
    pub preset: String,
    pub config: SimConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct Runtime {
    pub seed: u64,
    pub duration_s: f64,
    pub version: &'static str,
    pub preset_version: u32,
}

impl Scenario {
    pub fn runtime(&self) -> Runtime {
        Runtime {
            seed: self.config.seed,
            duration_s: self.config.duration_s,
            version: env!("CARGO_PKG_VERSION"),
            preset_version: presets::PRESET_VERSION,
        }
    }
}

fn base_config(preset: &str) -> anyhow::Result<SimConfig> {
    match preset {
        // Custom scenarios start from the back-to-back numbers.
        "custom" => Ok(presets::back_to_back()),
        name => match Preset::from_name(name) {
            Some(p) => Ok(p.config()),
            None => bail!("unknown preset {name:?}; expected back_to_back, km150 or custom"),
        },
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_file(path: &Path) -> anyhow::Result<ScenarioFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Precedence: flags, then the config file, then the preset.
pub fn resolve(g: &Globals, args: &ScenarioArgs) -> anyhow::Result<Scenario> {
    let file = match &g.config {
        Some(p) => read_file(p)?,
        None => ScenarioFile::default(),
    };
    let preset = args.preset.clone().or(file.preset).unwrap_or_else(|| "back_to_back".into());
    let mut config = base_config(&preset)?;
    if !file.config.is_empty() {
        let mut value = serde_json::to_value(&config)?;
        merge(&mut value, serde_json::to_value(&file.config)?);
        config = serde_json::from_value(value).context("applying config overrides")?;
    }
    if let Some(n) = args.nbar {
        config.nbar = n;
    }
    if let Some(d) = args.duration {
        config.duration_s = d;
    }
    if let Some(k) = args.pairs {
        if k == 0 || k > config.plan.len() {
            bail!("--pairs {k} outside 1..={}", config.plan.len());
        }
        config.plan = config.plan.truncated(k);
        if !config.phase_offsets.is_empty() {
            config.phase_offsets.truncate(k);
        }
    }
    if let Some(x) = args.extra_loss_db {
        config.budget = config.budget.with_extra_loss_db(x, x)?;
    }
    if let Some(s) = g.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(Scenario { name: file.name.unwrap_or_else(|| preset.clone()), preset, config })
}
