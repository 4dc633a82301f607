//! ITU DWDM grid arithmetic and energy-conserving channel pairing.
//!
//! Channels sit on the ITU-T G.694.1 frequency grid anchored at 190.0 THz:
//! channel `n` is centred at `190.0 THz + n * spacing`. With the default
//! 100 GHz spacing the grid covers indices 0..=100 (190.0 to 200.0 THz).
//!
//! A CW-pumped pair source emits photons whose frequencies sum to the pump
//! frequency, so a channel `n` on one side of the degenerate channel `k` is
//! correlated with channel `2k - n` on the other side.

use std::collections::HashSet;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in nm·THz.
pub const SPEED_OF_LIGHT_NM_THZ: f64 = 299_792.458;

/// Frequency of ITU channel 0.
pub const GRID_ORIGIN_THZ: f64 = 190.0;

/// Upper edge of the addressable grid.
pub const GRID_TOP_THZ: f64 = 200.0;

pub const DEFAULT_SPACING_GHZ: f64 = 100.0;

/// ITU channel closest to half the 769.88 nm pump frequency (1539.77 nm).
pub const DEFAULT_DEGENERATE_INDEX: u32 = 47;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("channel index {index} outside grid range 0..={max}")]
    IndexOutOfRange { index: i64, max: u32 },
    #[error("channel spacing must be positive and finite, got {0} GHz")]
    InvalidSpacing(f64),
    #[error("channel range {start}..={end} contains the degenerate channel {degenerate}")]
    ContainsDegenerate { start: u32, end: u32, degenerate: u32 },
    #[error("channel {0} assigned twice in plan")]
    ChannelCollision(u32),
    #[error("scenario needs {needed} channel pairs but the plan only has {available}")]
    InsufficientPairs { needed: usize, available: usize },
    #[error("throughput scenario serves exactly one user, got {0}")]
    ThroughputUsers(usize),
    #[error("plan pair {alice}-{bob} does not conserve energy around channel {degenerate}")]
    NotConjugate { alice: u32, bob: u32, degenerate: u32 },
    #[error("malformed plan document: {0}")]
    Document(String),
}

pub fn frequency_to_wavelength_nm(thz: f64) -> f64 {
    SPEED_OF_LIGHT_NM_THZ / thz
}

pub fn wavelength_to_frequency_thz(nm: f64) -> f64 {
    SPEED_OF_LIGHT_NM_THZ / nm
}

/// A frequency grid with fixed spacing anchored at 190.0 THz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    spacing_ghz: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self { spacing_ghz: DEFAULT_SPACING_GHZ }
    }
}

impl Grid {
    pub fn new(spacing_ghz: f64) -> Result<Self, GridError> {
        if !(spacing_ghz.is_finite() && spacing_ghz > 0.0) {
            return Err(GridError::InvalidSpacing(spacing_ghz));
        }
        Ok(Self { spacing_ghz })
    }

    pub fn spacing_ghz(&self) -> f64 {
        self.spacing_ghz
    }

    /// Highest valid index: the grid spans 190.0..=200.0 THz.
    pub fn max_index(&self) -> u32 {
        ((GRID_TOP_THZ - GRID_ORIGIN_THZ) * 1000.0 / self.spacing_ghz + 1e-9).floor() as u32
    }

    fn check(&self, index: i64) -> Result<u32, GridError> {
        let max = self.max_index();
        if index < 0 || index > max as i64 {
            return Err(GridError::IndexOutOfRange { index, max });
        }
        Ok(index as u32)
    }

    pub fn frequency_thz(&self, index: u32) -> Result<f64, GridError> {
        self.check(index as i64)?;
        Ok(GRID_ORIGIN_THZ + index as f64 * self.spacing_ghz / 1000.0)
    }

    pub fn channel(&self, index: u32) -> Result<ItuChannel, GridError> {
        let frequency_thz = self.frequency_thz(index)?;
        Ok(ItuChannel {
            index,
            frequency_thz,
            wavelength_nm: frequency_to_wavelength_nm(frequency_thz),
        })
    }

    /// Channel whose centre frequency pairs with `index` around `degenerate_index`.
    pub fn conjugate(&self, index: u32, degenerate_index: u32) -> Result<u32, GridError> {
        self.check(index as i64)?;
        self.check(degenerate_index as i64)?;
        self.check(2 * degenerate_index as i64 - index as i64)
    }

    /// One pair per channel in `alice`, each matched with its conjugate.
    pub fn build_plan(
        &self,
        alice: RangeInclusive<u32>,
        degenerate_index: u32,
    ) -> Result<ChannelPlan, GridError> {
        self.check(degenerate_index as i64)?;
        let (start, end) = (*alice.start(), *alice.end());
        if start <= end && alice.contains(&degenerate_index) {
            return Err(GridError::ContainsDegenerate { start, end, degenerate: degenerate_index });
        }
        let mut pairs = Vec::new();
        let mut seen = HashSet::new();
        for index in alice {
            let bob = self.conjugate(index, degenerate_index)?;
            for ch in [index, bob] {
                if !seen.insert(ch) {
                    return Err(GridError::ChannelCollision(ch));
                }
            }
            pairs.push(ChannelPair { alice: self.channel(index)?, bob: self.channel(bob)? });
        }
        Ok(ChannelPlan { degenerate_index, spacing_ghz: self.spacing_ghz, pairs })
    }

    /// Number of conjugate pairs `(k - n, k + n)`, `n >= 1`, whose channel
    /// centres both fall inside `[band_lo_nm, band_hi_nm]`.
    pub fn pair_capacity(&self, degenerate_index: u32, band_lo_nm: f64, band_hi_nm: f64) -> usize {
        let inside = |idx: i64| -> bool {
            match self.check(idx).and_then(|i| self.channel(i)) {
                Ok(ch) => ch.wavelength_nm >= band_lo_nm && ch.wavelength_nm <= band_hi_nm,
                Err(_) => false,
            }
        };
        let k = degenerate_index as i64;
        (1..)
            .take_while(|&n| inside(k - n) && inside(k + n))
            .count()
    }
}

/// Centre frequency of a channel on the default 100 GHz grid.
pub fn channel_frequency(index: u32) -> Result<f64, GridError> {
    Grid::default().frequency_thz(index)
}

pub fn conjugate_channel(index: u32, degenerate_index: u32) -> Result<u32, GridError> {
    Grid::default().conjugate(index, degenerate_index)
}

pub fn build_plan(alice: RangeInclusive<u32>, degenerate_index: u32) -> Result<ChannelPlan, GridError> {
    Grid::default().build_plan(alice, degenerate_index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItuChannel {
    pub index: u32,
    pub frequency_thz: f64,
    pub wavelength_nm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPair {
    pub alice: ItuChannel,
    pub bob: ItuChannel,
}

impl ChannelPair {
    pub fn label(&self) -> String {
        format!("{}-{}", self.alice.index, self.bob.index)
    }

    pub fn index_sum(&self) -> u32 {
        self.alice.index + self.bob.index
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlanDocument", into = "PlanDocument")]
pub struct ChannelPlan {
    pub degenerate_index: u32,
    pub spacing_ghz: f64,
    pub pairs: Vec<ChannelPair>,
}

impl ChannelPlan {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn grid(&self) -> Result<Grid, GridError> {
        Grid::new(self.spacing_ghz)
    }

    /// Pump frequency implied by the degenerate channel.
    pub fn pump_frequency_thz(&self) -> Result<f64, GridError> {
        Ok(2.0 * self.grid()?.frequency_thz(self.degenerate_index)?)
    }

    pub fn channels(&self) -> impl Iterator<Item = u32> + '_ {
        self.pairs.iter().flat_map(|p| [p.alice.index, p.bob.index])
    }

    /// Keep the first `n` pairs.
    pub fn truncated(&self, n: usize) -> ChannelPlan {
        ChannelPlan { pairs: self.pairs.iter().take(n).copied().collect(), ..self.clone() }
    }

    pub fn to_document(&self) -> PlanDocument {
        PlanDocument {
            degenerate_index: self.degenerate_index,
            spacing_ghz: self.spacing_ghz,
            pairs: self
                .pairs
                .iter()
                .map(|p| PairDocument { alice: p.alice.index, bob: p.bob.index })
                .collect(),
        }
    }

    pub fn from_document(doc: &PlanDocument) -> Result<Self, GridError> {
        let grid = Grid::new(doc.spacing_ghz)?;
        grid.check(doc.degenerate_index as i64)?;
        let mut seen = HashSet::new();
        let mut pairs = Vec::with_capacity(doc.pairs.len());
        for p in &doc.pairs {
            if p.alice + p.bob != 2 * doc.degenerate_index || p.alice == doc.degenerate_index {
                return Err(GridError::NotConjugate {
                    alice: p.alice,
                    bob: p.bob,
                    degenerate: doc.degenerate_index,
                });
            }
            for ch in [p.alice, p.bob] {
                if !seen.insert(ch) {
                    return Err(GridError::ChannelCollision(ch));
                }
            }
            pairs.push(ChannelPair { alice: grid.channel(p.alice)?, bob: grid.channel(p.bob)? });
        }
        Ok(Self { degenerate_index: doc.degenerate_index, spacing_ghz: doc.spacing_ghz, pairs })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("plan document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, GridError> {
        let doc: PlanDocument =
            serde_json::from_str(s).map_err(|e| GridError::Document(e.to_string()))?;
        Self::from_document(&doc)
    }
}

impl TryFrom<PlanDocument> for ChannelPlan {
    type Error = GridError;

    fn try_from(doc: PlanDocument) -> Result<Self, GridError> {
        Self::from_document(&doc)
    }
}

impl From<ChannelPlan> for PlanDocument {
    fn from(plan: ChannelPlan) -> Self {
        plan.to_document()
    }
}

/// JSON shape of an exported plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub degenerate_index: u32,
    pub spacing_ghz: f64,
    pub pairs: Vec<PairDocument>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDocument {
    pub alice: u32,
    pub bob: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationMode {
    /// Spectrum split between several user pairs.
    MultiUser,
    /// All pairs go to a single user pair for rate.
    Throughput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationScenario {
    pub mode: AllocationMode,
    pub users: usize,
    pub channels_per_user: usize,
}

impl AllocationScenario {
    pub fn multi_user(users: usize, channels_per_user: usize) -> Self {
        Self { mode: AllocationMode::MultiUser, users, channels_per_user }
    }

    pub fn throughput(channels: usize) -> Self {
        Self { mode: AllocationMode::Throughput, users: 1, channels_per_user: channels }
    }

    pub fn pairs_needed(&self) -> usize {
        self.users * self.channels_per_user
    }
}

/// Split a plan into disjoint per-user plans, consecutive pairs per user.
pub fn allocate(plan: &ChannelPlan, scenario: &AllocationScenario) -> Result<Vec<ChannelPlan>, GridError> {
    if scenario.mode == AllocationMode::Throughput && scenario.users != 1 {
        return Err(GridError::ThroughputUsers(scenario.users));
    }
    let needed = scenario.pairs_needed();
    if needed > plan.len() {
        return Err(GridError::InsufficientPairs { needed, available: plan.len() });
    }
    if scenario.channels_per_user == 0 {
        return Ok(vec![ChannelPlan { pairs: Vec::new(), ..plan.clone() }; scenario.users]);
    }
    Ok(plan.pairs[..needed]
        .chunks(scenario.channels_per_user)
        .map(|chunk| ChannelPlan { pairs: chunk.to_vec(), ..plan.clone() })
        .collect())
}
