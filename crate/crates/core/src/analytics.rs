//! Outcome metrics, hazard labels and campaign aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::controllers::ControllerKind;
use crate::engine::{ExperimentSpec, TraceRecord};
use crate::error::{Error, Result};
use crate::kinetics::ModelKind;
use crate::schema::{spec_hash, SCHEMA_VERSION};

pub const RANGE_LOW: f64 = 70.0;
pub const RANGE_HIGH: f64 = 180.0;
pub const SEVERE_LOW: f64 = 54.0;
/// Ketoacidosis proxy.
pub const SEVERE_HIGH: f64 = 250.0;

/// Time-in-range breakdown of one trace, in percent of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcomes {
    pub samples: usize,
    /// `[70, 180]`, both ends included.
    pub pct_in_range: f64,
    pub pct_above_180: f64,
    pub pct_below_70: f64,
    pub pct_below_54: f64,
    pub pct_above_250: f64,
    pub mean_bg: f64,
}

pub fn compute_outcomes(bg: &[f64]) -> Result<Outcomes> {
    if bg.is_empty() {
        return Err(Error::invalid("trace", "empty trace"));
    }
    let n = bg.len() as f64;
    let pct = |pred: &dyn Fn(f64) -> bool| 100.0 * bg.iter().filter(|v| pred(**v)).count() as f64 / n;
    Ok(Outcomes {
        samples: bg.len(),
        pct_in_range: pct(&|v| (RANGE_LOW..=RANGE_HIGH).contains(&v)),
        pct_above_180: pct(&|v| v > RANGE_HIGH),
        pct_below_70: pct(&|v| v < RANGE_LOW),
        pct_below_54: pct(&|v| v < SEVERE_LOW),
        pct_above_250: pct(&|v| v > SEVERE_HIGH),
        mean_bg: bg.iter().sum::<f64>() / n,
    })
}

/// Outcomes over `bg_true` of a trace.
pub fn trace_outcomes(trace: &[TraceRecord]) -> Result<Outcomes> {
    compute_outcomes(&trace.iter().map(|r| r.bg_true).collect::<Vec<_>>())
}

/// Outcomes per consecutive time bucket of `bucket` minutes, keyed by the
/// bucket's start time.
pub fn bucketed_outcomes(trace: &[TraceRecord], bucket: f64) -> Result<Vec<(f64, Outcomes)>> {
    if !(bucket.is_finite() && bucket > 0.0) {
        return Err(Error::invalid("bucket", "must be > 0"));
    }
    if trace.is_empty() {
        return Err(Error::invalid("trace", "empty trace"));
    }
    let mut groups: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for r in trace {
        groups.entry((r.t / bucket).floor() as i64).or_default().push(r.bg_true);
    }
    groups
        .into_iter()
        .map(|(k, bg)| Ok((k as f64 * bucket, compute_outcomes(&bg)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HazardLabel {
    /// Any sample below 70 mg/dL.
    pub h1: bool,
    /// Any sample above 180 mg/dL.
    pub h2: bool,
    /// Any sample below 54 mg/dL.
    pub severe_low: bool,
    /// Any sample above 250 mg/dL.
    pub severe_high: bool,
}

impl HazardLabel {
    pub fn any(&self) -> bool {
        self.h1 || self.h2
    }
}

pub fn hazard_label(bg: &[f64]) -> HazardLabel {
    HazardLabel {
        h1: bg.iter().any(|v| *v < RANGE_LOW),
        h2: bg.iter().any(|v| *v > RANGE_HIGH),
        severe_low: bg.iter().any(|v| *v < SEVERE_LOW),
        severe_high: bg.iter().any(|v| *v > SEVERE_HIGH),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single patient.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

/// Cohort summary with per-patient detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub pct_in_range: MeanSd,
    pub pct_above_180: MeanSd,
    pub pct_below_70: MeanSd,
    pub pct_below_54: MeanSd,
    pub pct_above_250: MeanSd,
    pub per_patient: Vec<Outcomes>,
}

pub fn cohort_outcomes<T: AsRef<[f64]>>(traces: &[T]) -> Result<OutcomeReport> {
    if traces.is_empty() {
        return Err(Error::invalid("cohort", "no traces"));
    }
    let per_patient = traces
        .iter()
        .map(|t| compute_outcomes(t.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let stat = |f: fn(&Outcomes) -> f64| MeanSd::of(&per_patient.iter().map(f).collect::<Vec<_>>());
    Ok(OutcomeReport {
        pct_in_range: stat(|o| o.pct_in_range),
        pct_above_180: stat(|o| o.pct_above_180),
        pct_below_70: stat(|o| o.pct_below_70),
        pct_below_54: stat(|o| o.pct_below_54),
        pct_above_250: stat(|o| o.pct_above_250),
        per_patient,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceColumn {
    BgTrue,
    Cgm,
    BasalCmd,
    BolusCmd,
    Delivered,
    Iob,
    Cho,
}

impl TraceColumn {
    pub fn get(self, r: &TraceRecord) -> f64 {
        match self {
            TraceColumn::BgTrue => r.bg_true,
            TraceColumn::Cgm => r.cgm,
            TraceColumn::BasalCmd => r.basal_cmd,
            TraceColumn::BolusCmd => r.bolus_cmd,
            TraceColumn::Delivered => r.delivered,
            TraceColumn::Iob => r.iob,
            TraceColumn::Cho => r.cho,
        }
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("mse", format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::invalid("mse", "empty series"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Mean squared difference of one column between two time-aligned traces.
pub fn compute_mse(a: &[TraceRecord], b: &[TraceRecord], column: TraceColumn) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("mse", format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if let Some((x, y)) = a.iter().zip(b).find(|(x, y)| (x.t - y.t).abs() > 1e-9) {
        return Err(Error::invalid("mse", format!("timestamps differ: {} vs {}", x.t, y.t)));
    }
    mse(
        &a.iter().map(|r| column.get(r)).collect::<Vec<_>>(),
        &b.iter().map(|r| column.get(r)).collect::<Vec<_>>(),
    )
}

/// Label used for runs without faults.
pub const CLEAN_CLASS: &str = "none";

/// Fault class of a spec: `none`, a single class, or classes joined by `+`.
pub fn spec_fault_class(spec: &ExperimentSpec) -> String {
    if spec.faults.is_empty() {
        return CLEAN_CLASS.into();
    }
    let classes: Vec<String> = spec.faults.iter().map(|f| f.class()).collect();
    classes.join("+")
}

/// What a campaign report needs from one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub spec_hash: String,
    pub model: ModelKind,
    pub controller: ControllerKind,
    pub fault_class: String,
    pub hazard: HazardLabel,
    pub outcomes: Outcomes,
}

impl RunSummary {
    pub fn new(spec: &ExperimentSpec, trace: &[TraceRecord]) -> Result<Self> {
        let bg: Vec<f64> = trace.iter().map(|r| r.bg_true).collect();
        Ok(Self {
            spec_hash: spec_hash(spec),
            model: spec.model,
            controller: spec.controller.kind,
            fault_class: spec_fault_class(spec),
            hazard: hazard_label(&bg),
            outcomes: compute_outcomes(&bg)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardGroup {
    pub model: ModelKind,
    pub controller: ControllerKind,
    /// A fault class, or `all` for the model/controller total.
    pub fault_class: String,
    pub runs: usize,
    pub h1_runs: usize,
    pub h2_runs: usize,
    pub hazard_runs: usize,
    /// Percent of runs with H1 or H2.
    pub hazard_rate: f64,
    pub mean_pct_in_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema_version: u32,
    pub runs: usize,
    pub hazard_runs: usize,
    /// Percent of all runs with H1 or H2.
    pub hazard_rate: f64,
    pub groups: Vec<HazardGroup>,
    /// Sorted hashes of every run's spec.
    pub spec_hashes: Vec<String>,
}

#[derive(Default)]
struct Tally {
    runs: usize,
    h1: usize,
    h2: usize,
    any: usize,
    tir_sum: f64,
}

impl Tally {
    fn add(&mut self, s: &RunSummary) {
        self.runs += 1;
        self.h1 += usize::from(s.hazard.h1);
        self.h2 += usize::from(s.hazard.h2);
        self.any += usize::from(s.hazard.any());
        self.tir_sum += s.outcomes.pct_in_range;
    }
}

fn percent(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

/// Aggregates run summaries; the result does not depend on their order.
pub fn campaign_report(results: &[RunSummary]) -> CampaignReport {
    let mut sorted: Vec<&RunSummary> = results.iter().collect();
    sorted.sort_by(|a, b| a.spec_hash.cmp(&b.spec_hash).then_with(|| a.fault_class.cmp(&b.fault_class)));

    let mut tallies: BTreeMap<(ModelKind, ControllerKind, String), Tally> = BTreeMap::new();
    let mut total = Tally::default();
    for s in &sorted {
        tallies
            .entry((s.model, s.controller, s.fault_class.clone()))
            .or_default()
            .add(s);
        tallies.entry((s.model, s.controller, "all".into())).or_default().add(s);
        total.add(s);
    }
    let groups = tallies
        .into_iter()
        .map(|((model, controller, fault_class), t)| HazardGroup {
            model,
            controller,
            fault_class,
            runs: t.runs,
            h1_runs: t.h1,
            h2_runs: t.h2,
            hazard_runs: t.any,
            hazard_rate: percent(t.any, t.runs),
            mean_pct_in_range: t.tir_sum / t.runs as f64,
        })
        .collect();
    CampaignReport {
        schema_version: SCHEMA_VERSION,
        runs: total.runs,
        hazard_runs: total.any,
        hazard_rate: percent(total.any, total.runs),
        groups,
        spec_hashes: sorted.iter().map(|s| s.spec_hash.clone()).collect(),
    }
}

impl CampaignReport {
    pub fn to_json(&self) -> String {
        crate::schema::to_json_pretty(self)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<6} {:<12} {:<18} {:>6} {:>6} {:>6} {:>9} {:>8}",
            "model", "controller", "fault", "runs", "H1", "H2", "hazard%", "TIR%"
        )
        .unwrap();
        for g in &self.groups {
            writeln!(
                out,
                "{:<6} {:<12} {:<18} {:>6} {:>6} {:>6} {:>9.1} {:>8.1}",
                g.model.as_str(),
                g.controller.as_str(),
                g.fault_class,
                g.runs,
                g.h1_runs,
                g.h2_runs,
                g.hazard_rate,
                g.mean_pct_in_range
            )
            .unwrap();
        }
        writeln!(out, "overall: {} runs, {} hazardous ({:.1}%)", self.runs, self.hazard_runs, self.hazard_rate).unwrap();
        out
    }
}

/// Text table of a cohort report in the layout of a mean±sd outcome table.
pub fn outcome_table(rows: &[(&str, &OutcomeReport)]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<14} {:>16} {:>16} {:>16} {:>16} {:>16}",
        "", "70-180", ">180", "<70", "<54", ">250"
    )
    .unwrap();
    for (name, r) in rows {
        let cell = |m: &MeanSd| format!("{:.2}±{:.2}", m.mean, m.sd);
        writeln!(
            out,
            "{:<14} {:>16} {:>16} {:>16} {:>16} {:>16}",
            name,
            cell(&r.pct_in_range),
            cell(&r.pct_above_180),
            cell(&r.pct_below_70),
            cell(&r.pct_below_54),
            cell(&r.pct_above_250)
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counting_example() {
        let mut bg = vec![100.0; 9];
        bg.extend([200.0; 3]);
        let o = compute_outcomes(&bg).unwrap();
        assert_eq!((o.pct_in_range, o.pct_above_180, o.pct_below_70), (75.0, 25.0, 0.0));
    }

    #[test]
    fn constant_and_low_samples() {
        assert_eq!(compute_outcomes(&[120.0; 10]).unwrap().pct_in_range, 100.0);
        let bg = [120.0, 50.0, 130.0];
        let o = compute_outcomes(&bg).unwrap();
        assert!(o.pct_below_70 > 0.0 && o.pct_below_54 > 0.0);
        assert!(hazard_label(&bg).h1);
    }

    #[test]
    fn boundaries_are_in_range() {
        let o = compute_outcomes(&[70.0, 180.0]).unwrap();
        assert_eq!(o.pct_in_range, 100.0);
        let h = hazard_label(&[70.0, 180.0]);
        assert!(!h.any());
    }

    #[test]
    fn empty_rejected() {
        assert!(compute_outcomes(&[]).is_err());
    }

    #[test]
    fn mse_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-12);
        assert!(mse(&a, &b[..2]).is_err());
    }

    fn summary(hash: &str, class: &str, bg: &[f64]) -> RunSummary {
        RunSummary {
            spec_hash: hash.into(),
            model: ModelKind::Mvp,
            controller: ControllerKind::Openaps,
            fault_class: class.into(),
            hazard: hazard_label(bg),
            outcomes: compute_outcomes(bg).unwrap(),
        }
    }

    #[test]
    fn report_groups_and_permutation_invariance() {
        let runs = vec![
            summary("a", "cgm-add", &[120.0, 60.0]),
            summary("b", "cgm-add", &[120.0]),
            summary("c", "none", &[190.0]),
            summary("d", "none", &[120.0]),
        ];
        let r = campaign_report(&runs);
        assert_eq!(r.runs, 4);
        assert_eq!(r.hazard_rate, 50.0);
        let add = r.groups.iter().find(|g| g.fault_class == "cgm-add").unwrap();
        assert_eq!((add.runs, add.h1_runs, add.hazard_rate), (2, 1, 50.0));
        let mut rev = runs.clone();
        rev.reverse();
        assert_eq!(campaign_report(&rev).to_json(), r.to_json());
        assert!(r.to_table().contains("cgm-add"));
    }

    proptest! {
        #[test]
        fn buckets_partition(bg in proptest::collection::vec(20.0f64..450.0, 1..200)) {
            let o = compute_outcomes(&bg).unwrap();
            prop_assert!((o.pct_in_range + o.pct_above_180 + o.pct_below_70 - 100.0).abs() < 1e-9);
            prop_assert!(o.pct_below_54 <= o.pct_below_70);
            prop_assert!(o.pct_above_250 <= o.pct_above_180);
            let h = hazard_label(&bg);
            prop_assert!(!h.severe_low || h.h1);
            prop_assert!(!h.severe_high || h.h2);
        }
    }
}
