//! Open-loop replays: recorded insulin through a patient model, or recorded
//! BG through a controller.

use serde::{Deserialize, Serialize};

use super::{MealEvent, MealSchedule, CONTROL_INTERVAL, SUBSTEPS};
use crate::controllers::{build_controller, ControllerConfig, ControllerKind, Observation, PumpEvent, PumpHistory, Rationale};
use crate::devices::{pump_deliver, PumpConfig};
use crate::error::{ensure_finite, Error, Result};
use crate::kinetics::{PatientProfile, VirtualPatient};

/// Initial conditions for [`replay_insulin`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplaySetup {
    /// mg/dL
    pub initial_bg: f64,
    /// Rate the insulin compartments start in equilibrium with (U/min).
    pub initial_insulin: f64,
    #[serde(default)]
    pub hypo_risk: bool,
}

/// Checks that samples sit on the 5-minute control grid starting at 0.
fn check_cadence(times: &[f64]) -> Result<()> {
    for (k, t) in times.iter().enumerate() {
        let expected = k as f64 * CONTROL_INTERVAL;
        if (t - expected).abs() > 1e-6 {
            return Err(Error::Trace(format!(
                "sample {k} at t={t} min, expected {expected} (control cadence is {CONTROL_INTERVAL} min)"
            )));
        }
    }
    Ok(())
}

/// Drives the patient with recorded insulin (`(t, U/min)` pairs, one per
/// control step) and returns BG at each sample time.
pub fn replay_insulin(
    profile: &PatientProfile,
    setup: &ReplaySetup,
    insulin: &[(f64, f64)],
    meals: &[MealEvent],
) -> Result<Vec<f64>> {
    let times: Vec<f64> = insulin.iter().map(|(t, _)| *t).collect();
    check_cadence(&times)?;
    let mut patient = VirtualPatient::at_rest(*profile, setup.initial_bg, setup.initial_insulin, setup.hypo_risk)?;
    let schedule = MealSchedule::new(meals);
    let mut bg = Vec::with_capacity(insulin.len());
    for (k, (t, rate)) in insulin.iter().enumerate() {
        ensure_finite("insulin", *rate)?;
        bg.push(patient.bg());
        schedule.integrate_step(&mut patient, *t, &[*rate; SUBSTEPS]);
        if !patient.is_finite() {
            return Err(Error::NonFiniteState { step: k });
        }
    }
    Ok(bg)
}

/// One controller decision made against a recorded BG value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayDecision {
    pub t: f64,
    /// U/hr
    pub basal: f64,
    /// U
    pub bolus: f64,
    /// Mean commanded rate over the step (U/min).
    pub rate: f64,
    pub rationale: Rationale,
}

/// Feeds recorded BG (`(t, mg/dL)` pairs) to a controller, assuming every
/// command is delivered as issued. Meals are announced at their step.
pub fn replay_bg(
    kind: ControllerKind,
    config: &ControllerConfig,
    bg: &[(f64, f64)],
    meals: &[MealEvent],
) -> Result<Vec<ReplayDecision>> {
    replay_decisions(kind, config, None, bg, meals)
}

/// Like [`replay_bg`], but commands pass through `pump` as in the closed
/// loop: the pump history holds what was delivered and `rate` is the
/// delivered mean.
pub fn replay_bg_with_pump(
    kind: ControllerKind,
    config: &ControllerConfig,
    pump: &PumpConfig,
    bg: &[(f64, f64)],
    meals: &[MealEvent],
) -> Result<Vec<ReplayDecision>> {
    replay_decisions(kind, config, Some(pump), bg, meals)
}

fn replay_decisions(
    kind: ControllerKind,
    config: &ControllerConfig,
    pump: Option<&PumpConfig>,
    bg: &[(f64, f64)],
    meals: &[MealEvent],
) -> Result<Vec<ReplayDecision>> {
    let times: Vec<f64> = bg.iter().map(|(t, _)| *t).collect();
    check_cadence(&times)?;
    let mut controller = build_controller(kind, config.clone())?;
    let schedule = MealSchedule::new(meals);
    let mut cgm_history = Vec::with_capacity(bg.len() + 2);
    let mut pump_history = PumpHistory::new();
    let mut out = Vec::with_capacity(bg.len());
    for (t, value) in bg {
        if cgm_history.is_empty() {
            cgm_history.extend([*value, *value]);
        }
        cgm_history.push(*value);
        let cho = schedule.cho_between(*t, t + CONTROL_INTERVAL);
        let decision = controller.decide(&Observation {
            now: *t,
            cgm_history: &cgm_history,
            meal_cho: (cho > 0.0).then_some(cho),
            pump_history: &pump_history,
        })?;
        let (basal, bolus) = match pump {
            Some(p) => {
                let d = pump_deliver(&decision, p);
                (d.basal_u_per_hr, d.bolus_u)
            }
            None => (decision.basal, decision.bolus),
        };
        pump_history.push(PumpEvent { t: *t, basal, bolus })?;
        pump_history.prune_before(t - config.dia);
        out.push(ReplayDecision {
            t: *t,
            basal: decision.basal,
            bolus: decision.bolus,
            rate: basal / 60.0 + bolus / CONTROL_INTERVAL,
            rationale: decision.diagnostics.rationale,
        });
    }
    Ok(out)
}
