use serde::{Deserialize, Serialize};

use super::ControllerConfig;
use crate::error::{ensure_finite, Error, Result};

/// Shape of the insulin-on-board decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IobCurve {
    /// Remaining fraction `1 - age/DIA`.
    Linear,
    /// Exponential action curve with activity peaking at `peak` minutes and
    /// ending at DIA.
    Exponential { peak: f64 },
}

impl IobCurve {
    /// Fraction of a dose still on board `age` minutes after delivery.
    pub fn remaining(self, age: f64, dia: f64) -> f64 {
        if age < 0.0 {
            return 1.0;
        }
        if age >= dia {
            return 0.0;
        }
        match self {
            IobCurve::Linear => 1.0 - age / dia,
            IobCurve::Exponential { peak } => {
                let (tau, a, s) = exp_shape(peak, dia);
                1.0 - s
                    * (1.0 - a)
                    * ((age * age / (tau * dia * (1.0 - a)) - age / tau - 1.0) * (-age / tau).exp()
                        + 1.0)
            }
        }
    }

    /// Fraction of a dose acting per minute at `age` (the negative derivative
    /// of [`IobCurve::remaining`]).
    pub fn activity(self, age: f64, dia: f64) -> f64 {
        if !(0.0..dia).contains(&age) {
            return 0.0;
        }
        match self {
            IobCurve::Linear => 1.0 / dia,
            IobCurve::Exponential { peak } => {
                let (tau, _, s) = exp_shape(peak, dia);
                s / (tau * tau) * age * (1.0 - age / dia) * (-age / tau).exp()
            }
        }
    }
}

fn exp_shape(peak: f64, dia: f64) -> (f64, f64, f64) {
    let tau = peak * (1.0 - peak / dia) / (1.0 - 2.0 * peak / dia);
    let a = 2.0 * tau / dia;
    let s = 1.0 / (1.0 - a + (1.0 + a) * (-dia / tau).exp());
    (tau, a, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpEvent {
    /// Minutes since simulation start.
    pub t: f64,
    /// Basal rate running from `t` until the next event (U/hr).
    pub basal: f64,
    /// Bolus delivered at `t` (U).
    pub bolus: f64,
}

/// Delivered insulin, ordered by strictly increasing timestamp.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PumpHistory {
    events: Vec<PumpEvent>,
}

impl PumpHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<PumpEvent>) -> Result<Self> {
        let mut h = Self::new();
        for e in events {
            h.push(e)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, event: PumpEvent) -> Result<()> {
        ensure_finite("pump_history.t", event.t)?;
        ensure_finite("pump_history.basal", event.basal)?;
        ensure_finite("pump_history.bolus", event.bolus)?;
        if let Some(last) = self.events.last() {
            if event.t <= last.t {
                return Err(Error::invalid(
                    "pump_history",
                    format!("timestamps must increase strictly ({} after {})", event.t, last.t),
                ));
            }
        }
        self.events.push(event);
        Ok(())
    }

    pub fn events(&self) -> &[PumpEvent] {
        &self.events
    }

    pub fn last(&self) -> Option<&PumpEvent> {
        self.events.last()
    }

    /// Drops events whose whole delivery interval ended before `cutoff`.
    pub fn prune_before(&mut self, cutoff: f64) {
        let keep_from = self
            .events
            .windows(2)
            .take_while(|w| w[1].t < cutoff)
            .count();
        self.events.drain(..keep_from);
    }

    /// `(age, units)` of each delivery at `now`, basal counted net of the
    /// profile basal rate.
    fn deliveries(&self, now: f64, profile_basal: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.events.iter().enumerate().filter_map(move |(i, e)| {
            if e.t > now {
                return None;
            }
            let end = self.events.get(i + 1).map_or(now, |n| n.t.min(now));
            let net_basal = (e.basal - profile_basal) * (end - e.t).max(0.0) / 60.0;
            Some((now - e.t, net_basal + e.bolus))
        })
    }
}

/// Insulin on board (U) at `now`.
pub fn calculate_iob(history: &PumpHistory, now: f64, config: &ControllerConfig) -> f64 {
    history
        .deliveries(now, config.basal_rate)
        .map(|(age, units)| units * config.iob_curve.remaining(age, config.dia))
        .sum()
}

/// Insulin acting right now (U/min).
pub fn insulin_activity(history: &PumpHistory, now: f64, config: &ControllerConfig) -> f64 {
    history
        .deliveries(now, config.basal_rate)
        .map(|(age, units)| units * config.iob_curve.activity(age, config.dia))
        .sum()
}
