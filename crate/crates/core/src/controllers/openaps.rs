//! Predictive temp-basal controller in the style of OpenAPS `determine-basal`.
//!
//! ```text
//! deviation   = 6 · (ΔCGM_5min - BGI),   BGI = -ISF · activity · 5
//! eventual BG = CGM - ISF · IOB + deviation
//! ```
//!
//! Decision order: low-glucose suspend; rising but eventual < target (cancel
//! temp); falling but eventual > target (cancel temp); eventual > target
//! (high temp); eventual < target (low or zero temp); otherwise profile basal.
//! Temp rates are `basal + 2 · (eventual - target) / (ISF · 0.5 h)`.

use super::{
    calculate_iob, insulin_activity, ControlDecision, Controller, ControllerConfig, ControllerKind, Diagnostics,
    Observation, PumpHistory, Rationale,
};
use crate::error::{ensure_finite, Error, Result};

pub const MIN_HISTORY: usize = 3;
/// CGM cadence assumed by the deviation estimate (min).
const CGM_INTERVAL: f64 = 5.0;
/// Horizon over which the 5-minute deviation is extrapolated (min).
const DEVIATION_HORIZON: f64 = 30.0;
const TEMP_GAIN: f64 = 2.0;

/// Least-squares slope (mg/dL per sample) of the last three readings.
fn trend(history: &[f64]) -> f64 {
    let n = history.len();
    (history[n - 1] - history[n - 3]) / 2.0
}

pub fn openaps_decide(
    cgm_history: &[f64],
    history: &PumpHistory,
    now: f64,
    current_temp_basal: Option<f64>,
    config: &ControllerConfig,
) -> Result<ControlDecision> {
    if cgm_history.len() < MIN_HISTORY {
        return Err(Error::InsufficientHistory {
            needed: MIN_HISTORY,
            got: cgm_history.len(),
        });
    }
    for v in cgm_history {
        ensure_finite("cgm_history", *v)?;
    }
    let n = cgm_history.len();
    let cgm = cgm_history[n - 1];
    let iob = calculate_iob(history, now, config);
    let activity = insulin_activity(history, now, config);
    let bgi = -config.isf * activity * CGM_INTERVAL;
    let delta = cgm - cgm_history[n - 2];
    let deviation = DEVIATION_HORIZON / CGM_INTERVAL * (delta - bgi);
    let eventual_bg = cgm - config.isf * iob + deviation;

    let (basal, rationale) = dispatch(cgm, eventual_bg, trend(cgm_history), current_temp_basal, config);
    Ok(ControlDecision {
        basal: basal.clamp(0.0, config.max_basal),
        bolus: 0.0,
        diagnostics: Diagnostics {
            iob,
            eventual_bg,
            deviation,
            rationale,
        },
    })
}

/// Recommended temp rate (U/hr) for a given eventual BG, before clipping.
pub(crate) fn temp_rate(eventual_bg: f64, config: &ControllerConfig) -> f64 {
    config.basal_rate
        + TEMP_GAIN * (eventual_bg - config.bg_target) / (config.isf * config.temp_duration / 60.0)
}

fn dispatch(
    cgm: f64,
    eventual_bg: f64,
    slope: f64,
    current_temp: Option<f64>,
    config: &ControllerConfig,
) -> (f64, Rationale) {
    let target = config.bg_target;
    if cgm < config.suspend_threshold {
        return (0.0, Rationale::LowGlucoseSuspend);
    }
    if slope > 0.0 && eventual_bg < target {
        return (config.basal_rate, Rationale::RisingButLow);
    }
    if slope < 0.0 && eventual_bg > target {
        return (config.basal_rate, Rationale::FallingButHigh);
    }
    if eventual_bg > target {
        return (temp_rate(eventual_bg, config), Rationale::HighTemp);
    }
    if eventual_bg < target {
        let rate = temp_rate(eventual_bg, config);
        if rate > 0.0 {
            return (rate, Rationale::LowTemp);
        }
        return if current_temp == Some(0.0) {
            (0.0, Rationale::ZeroTempExtend)
        } else {
            (0.0, Rationale::ZeroTemp)
        };
    }
    (config.basal_rate, Rationale::AtTarget)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TempBasal {
    rate: f64,
    expires_at: f64,
}

/// Stateful wrapper tracking the running temp basal and its expiry.
#[derive(Debug, Clone)]
pub struct OpenApsController {
    config: ControllerConfig,
    temp: Option<TempBasal>,
}

impl OpenApsController {
    pub fn new(config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, temp: None })
    }

    /// Rate of the running temp basal at `now`, if any.
    pub fn current_temp(&self, now: f64) -> Option<f64> {
        self.temp.filter(|t| now < t.expires_at).map(|t| t.rate)
    }
}

impl Controller for OpenApsController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Openaps
    }

    fn config(&self) -> &ControllerConfig {
        &self.config
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<ControlDecision> {
        let current = self.current_temp(obs.now);
        let mut decision = openaps_decide(obs.cgm_history, obs.pump_history, obs.now, current, &self.config)?;
        self.temp = match decision.diagnostics.rationale {
            Rationale::RisingButLow | Rationale::FallingButHigh | Rationale::AtTarget => None,
            _ => Some(TempBasal {
                rate: decision.basal,
                expires_at: obs.now + self.config.temp_duration,
            }),
        };
        // Announced meals get a carb-ratio bolus.
        if let Some(cho) = obs.meal_cho.filter(|c| *c > 0.0) {
            decision.bolus = (cho / self.config.cr).clamp(0.0, self.config.max_bolus);
        }
        Ok(decision)
    }
}
