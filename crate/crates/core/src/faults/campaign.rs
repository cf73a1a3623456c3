//! Fault campaigns: a cartesian grid of fault scenarios, activation windows
//! and initial glucose values over a base experiment.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fault_class, FaultKind, FaultSpec, FaultTarget, Trigger};
use crate::engine::ExperimentSpec;
use crate::error::{Error, Result};
use crate::schema::{read_json, schema_version, spec_hash};

/// A fault without its activation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultTemplate {
    pub target: FaultTarget,
    pub kind: FaultKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<Trigger>,
}

impl FaultTemplate {
    pub fn at(&self, start: f64, duration: f64) -> FaultSpec {
        FaultSpec {
            target: self.target,
            kind: self.kind,
            magnitude: self.magnitude,
            start,
            duration,
            trigger: self.trigger,
        }
    }

    pub fn class(&self) -> String {
        fault_class(self.target, self.kind)
    }
}

/// Activation windows: listed explicitly, or drawn once from the campaign
/// seed on the 5-minute grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StartDurationAxis {
    Pairs(Vec<[f64; 2]>),
    Random {
        count: usize,
        /// Inclusive bounds on the start time (min).
        start: [f64; 2],
        /// Inclusive bounds on the duration (min).
        duration: [f64; 2],
    },
}

const WINDOW_GRID: f64 = 5.0;

impl StartDurationAxis {
    pub fn pairs(&self, seed: u64) -> Result<Vec<[f64; 2]>> {
        match self {
            StartDurationAxis::Pairs(p) => Ok(p.clone()),
            StartDurationAxis::Random { count, start, duration } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut draw = |range: &[f64; 2], field: &str| -> Result<f64> {
                    let lo = (range[0] / WINDOW_GRID).ceil() as i64;
                    let hi = (range[1] / WINDOW_GRID).floor() as i64;
                    if !(range[0].is_finite() && range[1].is_finite()) || lo > hi || lo < 0 {
                        return Err(Error::config(
                            format!("$.grid.start_duration.random.{field}"),
                            "needs a non-empty, non-negative range containing a multiple of 5",
                        ));
                    }
                    Ok(rng.gen_range(lo..=hi) as f64 * WINDOW_GRID)
                };
                (0..*count)
                    .map(|_| Ok([draw(start, "start")?, draw(duration, "duration")?]))
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignGrid {
    pub fault_scenarios: Vec<FaultTemplate>,
    pub start_duration: StartDurationAxis,
    /// mg/dL
    pub initial_bgs: Vec<f64>,
}

impl CampaignGrid {
    /// `|scenarios| · |pairs| · |bgs|`.
    pub fn size(&self) -> usize {
        let pairs = match &self.start_duration {
            StartDurationAxis::Pairs(p) => p.len(),
            StartDurationAxis::Random { count, .. } => *count,
        };
        self.fault_scenarios.len() * pairs * self.initial_bgs.len()
    }
}

/// Expands the grid over `base`: scenario-major, then window, then initial
/// BG. Every spec keeps the base seed.
pub fn expand_campaign(grid: &CampaignGrid, base: &ExperimentSpec, seed: u64) -> Result<Vec<ExperimentSpec>> {
    if grid.fault_scenarios.is_empty() {
        return Err(Error::config("$.grid.fault_scenarios", "empty axis"));
    }
    if grid.initial_bgs.is_empty() {
        return Err(Error::config("$.grid.initial_bgs", "empty axis"));
    }
    let pairs = grid.start_duration.pairs(seed)?;
    if pairs.is_empty() {
        return Err(Error::config("$.grid.start_duration", "empty axis"));
    }
    let mut out = Vec::with_capacity(grid.size());
    for (i, template) in grid.fault_scenarios.iter().enumerate() {
        for [start, duration] in &pairs {
            let fault = template.at(*start, *duration);
            fault
                .validate()
                .map_err(|e| Error::config(format!("$.grid.fault_scenarios[{i}]"), e.to_string()))?;
            for bg in &grid.initial_bgs {
                let mut spec = base.clone();
                spec.initial_bg = *bg;
                spec.faults.push(fault.clone());
                out.push(spec);
            }
        }
    }
    Ok(out)
}

/// The fault-free counterparts of `specs`, one per distinct resulting spec,
/// in first-seen order.
pub fn clean_counterparts(specs: &[ExperimentSpec]) -> Vec<ExperimentSpec> {
    let mut seen = BTreeSet::new();
    specs
        .iter()
        .map(|s| ExperimentSpec {
            faults: Vec::new(),
            ..s.clone()
        })
        .filter(|s| seen.insert(spec_hash(s)))
        .collect()
}

/// A campaign document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignFile {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub name: String,
    /// Seeds the random window axis.
    #[serde(default)]
    pub seed: u64,
    pub base: ExperimentSpec,
    pub grid: CampaignGrid,
}

impl CampaignFile {
    pub fn load(path: &Path) -> Result<Self> {
        let file: Self = read_json(path)?;
        if file.schema_version != schema_version() {
            return Err(Error::config(
                "$.schema_version",
                format!("unsupported schema version {}", file.schema_version),
            ));
        }
        Ok(file)
    }

    pub fn expand(&self) -> Result<Vec<ExperimentSpec>> {
        expand_campaign(&self.grid, &self.base, self.seed)
    }
}
