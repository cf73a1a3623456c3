//! The closed loop: patient → CGM → fault taps → controller → pump → patient,
//! at a 5-minute control cadence with five 1-minute Euler substeps.

pub mod batch;
pub mod replay;
pub mod spec;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controllers::{build_controller, calculate_iob, Controller, Observation, PumpEvent, PumpHistory, Rationale};
use crate::devices::{pump_deliver, PumpConfig, Sensor};
use crate::error::{Error, Result};
use crate::faults::{FaultInjector, FaultTarget, TriggerContext};
use crate::kinetics::VirtualPatient;
pub use replay::{replay_bg, replay_bg_with_pump, replay_insulin, ReplayDecision, ReplaySetup};
pub use spec::{
    BolusTiming, BuiltinProfile, ControllerOverrides, ControllerSpec, ExperimentSpec, MealEvent, ProfileRef,
    ResolvedExperiment,
};

/// Minutes between controller decisions.
pub const CONTROL_INTERVAL: f64 = 5.0;
/// Euler substeps per control interval.
pub const SUBSTEPS: usize = 5;
const SUBSTEP: f64 = CONTROL_INTERVAL / SUBSTEPS as f64;
/// CGM samples kept for the controller.
const CGM_HISTORY_LEN: usize = 36;

/// One row per control step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// min
    pub t: f64,
    /// mg/dL
    pub bg_true: f64,
    /// CGM as seen by the controller, after faults and clipping (mg/dL).
    pub cgm: f64,
    /// Controller command before the pump (U/hr).
    pub basal_cmd: f64,
    /// Controller command before the pump (U).
    pub bolus_cmd: f64,
    /// Mean rate reaching the patient over the step (U/min).
    pub delivered: f64,
    /// U
    pub iob: f64,
    /// Carbohydrate eaten during the step (g).
    pub cho: f64,
    pub fault_active: bool,
    pub rationale: Rationale,
}

/// Number of control steps covering `duration` minutes.
pub fn step_count(duration: f64) -> usize {
    (duration / CONTROL_INTERVAL - 1e-9).ceil().max(0.0) as usize
}

/// Meals grouped by the substep they fall in.
#[derive(Debug, Clone, Default)]
pub(crate) struct MealSchedule {
    meals: Vec<MealEvent>,
}

impl MealSchedule {
    pub(crate) fn new(meals: &[MealEvent]) -> Self {
        let mut meals = meals.to_vec();
        meals.sort_by(|a, b| a.time.total_cmp(&b.time));
        Self { meals }
    }

    pub(crate) fn in_window(&self, from: f64, to: f64) -> impl Iterator<Item = &MealEvent> {
        self.meals.iter().filter(move |m| m.time >= from && m.time < to)
    }

    /// Grams eaten during `[from, to)`.
    pub(crate) fn cho_between(&self, from: f64, to: f64) -> f64 {
        self.in_window(from, to).map(|m| m.cho).sum()
    }

    /// Feeds the meals of one control step to the patient and integrates the
    /// step's substeps at the given rates.
    pub(crate) fn integrate_step(&self, patient: &mut VirtualPatient, t: f64, rates: &[f64; SUBSTEPS]) {
        for (j, rate) in rates.iter().enumerate() {
            let from = t + j as f64 * SUBSTEP;
            for m in self.in_window(from, from + SUBSTEP) {
                patient.ingest(m.cho);
            }
            patient.substep(*rate, SUBSTEP);
        }
    }
}

/// A closed-loop simulation advanced one control step at a time.
pub struct ClosedLoop {
    spec: ExperimentSpec,
    patient: VirtualPatient,
    controller: Box<dyn Controller>,
    sensor: Sensor,
    pump: PumpConfig,
    faults: FaultInjector,
    meals: MealSchedule,
    cgm_history: Vec<f64>,
    pump_history: PumpHistory,
    step: usize,
    n_steps: usize,
}

impl ClosedLoop {
    pub fn new(resolved: ResolvedExperiment) -> Result<Self> {
        let ResolvedExperiment {
            spec,
            profile,
            controller,
            pump,
        } = resolved;
        let initial_rate = controller.basal_rate / 60.0;
        let patient = VirtualPatient::at_rest(profile, spec.initial_bg, initial_rate, spec.hypo_risk)?;
        let faults = FaultInjector::new(&spec.faults)?;
        let sensor = Sensor::new(spec.sensor.clone(), spec.seed)?;
        let controller = build_controller(spec.controller.kind, controller)?;
        Ok(Self {
            meals: MealSchedule::new(&spec.meals),
            n_steps: step_count(spec.duration),
            spec,
            patient,
            controller,
            sensor,
            pump,
            faults,
            cgm_history: Vec::with_capacity(CGM_HISTORY_LEN),
            pump_history: PumpHistory::new(),
            step: 0,
        })
    }

    /// Resolves `spec` (file references relative to `base_dir`) and builds the loop.
    pub fn from_spec(spec: &ExperimentSpec, base_dir: Option<&Path>) -> Result<Self> {
        Self::new(spec.resolve(base_dir)?)
    }

    pub fn spec(&self) -> &ExperimentSpec {
        &self.spec
    }

    pub fn controller(&self) -> &dyn Controller {
        self.controller.as_ref()
    }

    pub fn patient(&self) -> &VirtualPatient {
        &self.patient
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.n_steps
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.n_steps
    }

    /// Runs one control step; `Ok(None)` once the run is complete.
    pub fn step(&mut self) -> Result<Option<TraceRecord>> {
        if self.is_done() {
            return Ok(None);
        }
        let k = self.step;
        let t = k as f64 * CONTROL_INTERVAL;
        let bg_true = self.patient.bg();

        let clean = self.sensor.read(bg_true);
        let ctx = TriggerContext { bg: clean };
        let (faulted, cgm_fault) = self.faults.apply(FaultTarget::Cgm, clean, t, ctx);
        let cgm = self.sensor.config().clip(faulted);
        if self.cgm_history.is_empty() {
            self.cgm_history.extend([cgm, cgm]);
        }
        self.cgm_history.push(cgm);
        if self.cgm_history.len() > CGM_HISTORY_LEN {
            self.cgm_history.remove(0);
        }

        let cho = self.meals.cho_between(t, t + CONTROL_INTERVAL);
        let announced = (cho > 0.0 && self.spec.meals_announced()).then_some(cho);
        let iob = calculate_iob(&self.pump_history, t, self.controller.config());
        let decision = self.controller.decide(&Observation {
            now: t,
            cgm_history: &self.cgm_history,
            meal_cho: announced,
            pump_history: &self.pump_history,
        })?;

        let delivery = pump_deliver(&decision, &self.pump);
        let mean = delivery.mean_u_per_min(CONTROL_INTERVAL);
        let (faulted_rate, insulin_fault) = self.faults.apply(FaultTarget::Insulin, mean, t, ctx);
        // `delivered` is the exact per-substep rate whenever the step is
        // uniform, which keeps replays of the trace bit-identical.
        let (rates, delivered) = if insulin_fault {
            let r = faulted_rate.clamp(0.0, self.pump.max_rate_u_per_min(CONTROL_INTERVAL));
            ([r; SUBSTEPS], r)
        } else {
            match self.spec.bolus_timing {
                BolusTiming::SpreadOverStep => ([mean; SUBSTEPS], mean),
                BolusTiming::FrontLoaded => {
                    let basal = delivery.basal_u_per_hr / 60.0;
                    let mut r = [basal; SUBSTEPS];
                    r[0] = basal + delivery.bolus_u / SUBSTEP;
                    (r, mean)
                }
            }
        };

        self.pump_history.push(PumpEvent {
            t,
            basal: delivery.basal_u_per_hr,
            bolus: delivery.bolus_u,
        })?;
        self.pump_history.prune_before(t - self.controller.config().dia);

        self.meals.integrate_step(&mut self.patient, t, &rates);
        self.step += 1;
        if !self.patient.is_finite() {
            return Err(Error::NonFiniteState { step: k });
        }
        Ok(Some(TraceRecord {
            t,
            bg_true,
            cgm,
            basal_cmd: decision.basal,
            bolus_cmd: decision.bolus,
            delivered,
            iob,
            cho,
            fault_active: cgm_fault || insulin_fault,
            rationale: decision.diagnostics.rationale,
        }))
    }

    /// Runs the remaining steps.
    pub fn run(&mut self) -> Result<Vec<TraceRecord>> {
        let mut out = Vec::with_capacity(self.n_steps - self.step);
        while let Some(r) = self.step()? {
            out.push(r);
        }
        Ok(out)
    }
}

/// Runs `spec` to completion. File references resolve relative to the
/// working directory.
pub fn run_closed_loop(spec: &ExperimentSpec) -> Result<Vec<TraceRecord>> {
    ClosedLoop::from_spec(spec, None)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::ControllerKind;
    use crate::devices::SensorConfig;
    use crate::faults::{FaultKind, FaultSpec};
    use crate::kinetics::{ModelKind, MvpProfile};
    use crate::units::MICROUNITS_PER_UNIT;

    fn fixed(model: ModelKind, bg: f64, minutes: f64) -> ExperimentSpec {
        let mut s = ExperimentSpec::new(model, ControllerKind::FixedBasal, bg, minutes);
        s.sensor = SensorConfig::noiseless();
        s
    }

    #[test]
    fn record_count_and_cadence() {
        let recs = run_closed_loop(&fixed(ModelKind::Mvp, 120.0, 750.0)).unwrap();
        assert_eq!(recs.len(), 150);
        for (k, r) in recs.iter().enumerate() {
            assert_eq!(r.t, 5.0 * k as f64);
        }
    }

    #[test]
    fn mvp_fixed_point_holds() {
        // 1 U/hr is an exact pump quantum, so the pump delivers it untouched.
        let p = MvpProfile::nominal();
        let bg_star = p.steady_state_bg(MICROUNITS_PER_UNIT / 60.0);
        let mut s = fixed(ModelKind::Mvp, bg_star, 1440.0);
        s.controller.settings.basal_rate = Some(1.0);
        for r in run_closed_loop(&s).unwrap() {
            assert!((r.bg_true - bg_star).abs() < 0.5, "{} at t={}", r.bg_true, r.t);
            assert!((r.delivered - 1.0 / 60.0).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let mut s = ExperimentSpec::new(ModelKind::Mvp, ControllerKind::Openaps, 150.0, 600.0);
        s.meals.push(MealEvent { time: 60.0, cho: 50.0 });
        s.seed = 7;
        assert_eq!(run_closed_loop(&s).unwrap(), run_closed_loop(&s).unwrap());
    }

    #[test]
    fn seed_changes_only_noise_columns_without_noise() {
        let mut a = fixed(ModelKind::Uva, 120.0, 300.0);
        a.seed = 1;
        let mut b = a.clone();
        b.seed = 2;
        assert_eq!(run_closed_loop(&a).unwrap(), run_closed_loop(&b).unwrap());
    }

    #[test]
    fn meals_announced_to_basal_bolus_only() {
        let mut s = ExperimentSpec::new(ModelKind::Mvp, ControllerKind::BasalBolus, 120.0, 60.0);
        s.sensor = SensorConfig::noiseless();
        s.meals.push(MealEvent { time: 12.0, cho: 60.0 });
        let recs = run_closed_loop(&s).unwrap();
        assert_eq!(recs[2].cho, 60.0);
        assert!(recs[2].bolus_cmd > 0.0);
        assert_eq!(recs[2].rationale, Rationale::MealBolus);

        s.controller.kind = ControllerKind::Openaps;
        let recs = run_closed_loop(&s).unwrap();
        assert_eq!(recs[2].bolus_cmd, 0.0);
        s.announce_meals = Some(true);
        let recs = run_closed_loop(&s).unwrap();
        assert!(recs[2].bolus_cmd > 0.0);
    }

    #[test]
    fn front_loaded_and_spread_deliver_the_same_mean() {
        let mut s = ExperimentSpec::new(ModelKind::Mvp, ControllerKind::BasalBolus, 120.0, 60.0);
        s.sensor = SensorConfig::noiseless();
        s.meals.push(MealEvent { time: 0.0, cho: 40.0 });
        let spread = run_closed_loop(&s).unwrap();
        s.bolus_timing = BolusTiming::FrontLoaded;
        let front = run_closed_loop(&s).unwrap();
        assert!((spread[0].delivered - front[0].delivered).abs() < 1e-12);
        assert_ne!(spread[3].bg_true, front[3].bg_true);
    }

    #[test]
    fn insulin_truncate_zeroes_delivery() {
        let mut s = fixed(ModelKind::Mvp, 120.0, 60.0);
        s.faults.push(FaultSpec {
            target: FaultTarget::Insulin,
            kind: FaultKind::Truncate,
            magnitude: None,
            start: 10.0,
            duration: 20.0,
            trigger: None,
        });
        let recs = run_closed_loop(&s).unwrap();
        for r in &recs {
            let inside = r.t >= 10.0 && r.t < 30.0;
            assert_eq!(r.fault_active, inside);
            assert_eq!(r.delivered == 0.0, inside);
        }
    }

    #[test]
    fn empty_fault_list_is_identity() {
        let s = ExperimentSpec::new(ModelKind::Uva, ControllerKind::Openaps, 180.0, 300.0);
        let mut with = s.clone();
        with.faults.push(FaultSpec {
            target: FaultTarget::Cgm,
            kind: FaultKind::Add,
            magnitude: Some(50.0),
            start: 1000.0,
            duration: 0.0,
            trigger: None,
        });
        with.duration = 300.0;
        let a = run_closed_loop(&s).unwrap();
        let b = run_closed_loop(&with).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stepwise_equals_batch() {
        let s = ExperimentSpec::new(ModelKind::Mvp, ControllerKind::Openaps, 200.0, 100.0);
        let mut lp = ClosedLoop::from_spec(&s, None).unwrap();
        let mut rows = Vec::new();
        while let Some(r) = lp.step().unwrap() {
            rows.push(r);
        }
        assert!(lp.is_done());
        assert_eq!(rows, run_closed_loop(&s).unwrap());
    }
}
