//! Software-implemented fault injection on the CGM and insulin signal paths.
//!
//! A fault replaces a signal with zero (truncate), freezes it at the last
//! value seen before activation (hold), or offsets it by a fixed magnitude
//! (add/sub) while the simulation clock is inside `[start, start+duration)`
//! and the optional trigger predicate holds.

pub mod campaign;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_nonnegative, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTarget {
    Cgm,
    Insulin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Truncate,
    Hold,
    Add,
    Sub,
}

impl FaultKind {
    pub fn needs_magnitude(self) -> bool {
        matches!(self, FaultKind::Add | FaultKind::Sub)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    BgAbove(f64),
    BgBelow(f64),
}

impl Trigger {
    pub fn holds(self, bg: f64) -> bool {
        match self {
            Trigger::BgAbove(level) => bg > level,
            Trigger::BgBelow(level) => bg < level,
        }
    }
}

/// Glucose context the trigger predicate is evaluated against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerContext {
    pub bg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub target: FaultTarget,
    pub kind: FaultKind,
    /// Offset in signal units (mg/dL for CGM, U/min for insulin); add/sub only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
    /// Minutes.
    pub start: f64,
    /// Minutes.
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<Trigger>,
}

impl FaultSpec {
    pub fn validate(&self) -> Result<()> {
        ensure_nonnegative("fault.start", self.start)?;
        ensure_nonnegative("fault.duration", self.duration)?;
        match (self.kind.needs_magnitude(), self.magnitude) {
            (true, Some(m)) => ensure_finite("fault.magnitude", m)?,
            (true, None) => return Err(Error::invalid("fault.magnitude", "required for add/sub faults")),
            (false, Some(_)) => {
                return Err(Error::invalid("fault.magnitude", "only add/sub faults take a magnitude"))
            }
            (false, None) => {}
        }
        if let Some(Trigger::BgAbove(v) | Trigger::BgBelow(v)) = self.trigger {
            ensure_finite("fault.trigger", v)?;
        }
        Ok(())
    }

    pub fn in_window(&self, now: f64) -> bool {
        now >= self.start && now < self.start + self.duration
    }

    pub fn is_active(&self, now: f64, ctx: TriggerContext) -> bool {
        self.in_window(now) && self.trigger.is_none_or(|t| t.holds(ctx.bg))
    }

    /// Short class label such as `cgm-hold`.
    pub fn class(&self) -> String {
        fault_class(self.target, self.kind)
    }
}

pub fn fault_class(target: FaultTarget, kind: FaultKind) -> String {
    let t = match target {
        FaultTarget::Cgm => "cgm",
        FaultTarget::Insulin => "insulin",
    };
    let k = match kind {
        FaultKind::Truncate => "truncate",
        FaultKind::Hold => "hold",
        FaultKind::Add => "add",
        FaultKind::Sub => "sub",
    };
    format!("{t}-{k}")
}

/// Applies one fault to one sample. `last_clean_value` is the signal sampled
/// at the last instant before activation; hold returns it (or the current
/// value if the fault is active from the first sample). The result is not
/// clipped; devices re-clip downstream.
pub fn apply_fault(
    spec: &FaultSpec,
    signal_value: f64,
    now: f64,
    last_clean_value: Option<f64>,
    ctx: TriggerContext,
) -> (f64, bool) {
    if !spec.is_active(now, ctx) {
        return (signal_value, false);
    }
    let out = match spec.kind {
        FaultKind::Truncate => 0.0,
        FaultKind::Hold => last_clean_value.unwrap_or(signal_value),
        FaultKind::Add => signal_value + spec.magnitude.unwrap_or(0.0),
        FaultKind::Sub => signal_value - spec.magnitude.unwrap_or(0.0),
    };
    (out, true)
}

#[derive(Debug, Clone)]
struct FaultState {
    spec: FaultSpec,
    last_clean: Option<f64>,
    held: Option<f64>,
    was_active: bool,
}

/// Per-simulation fault state: hold buffers and activation flags.
#[derive(Debug, Clone, Default)]
pub struct FaultInjector {
    faults: Vec<FaultState>,
}

impl FaultInjector {
    pub fn new(specs: &[FaultSpec]) -> Result<Self> {
        let faults = specs
            .iter()
            .map(|s| {
                s.validate()?;
                Ok(FaultState {
                    spec: s.clone(),
                    last_clean: None,
                    held: None,
                    was_active: false,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { faults })
    }

    pub fn is_empty(&self) -> bool {
        self.faults.is_empty()
    }

    /// Passes `value` through every fault on `target` in order, returning the
    /// faulted value and whether any of them was active.
    pub fn apply(&mut self, target: FaultTarget, value: f64, now: f64, ctx: TriggerContext) -> (f64, bool) {
        let mut v = value;
        let mut any = false;
        for f in self.faults.iter_mut().filter(|f| f.spec.target == target) {
            let active = f.spec.is_active(now, ctx);
            if active && !f.was_active {
                f.held = Some(f.last_clean.unwrap_or(v));
            }
            let (out, on) = apply_fault(&f.spec, v, now, f.held, ctx);
            if !active {
                f.last_clean = Some(v);
            }
            f.was_active = active;
            any |= on;
            v = out;
        }
        (v, any)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::SensorConfig;
    use proptest::prelude::*;

    fn spec(target: FaultTarget, kind: FaultKind, magnitude: Option<f64>, start: f64, duration: f64) -> FaultSpec {
        FaultSpec {
            target,
            kind,
            magnitude,
            start,
            duration,
            trigger: None,
        }
    }

    const CTX: TriggerContext = TriggerContext { bg: 120.0 };

    fn run(injector: &mut FaultInjector, target: FaultTarget, stream: &[f64]) -> Vec<f64> {
        stream
            .iter()
            .enumerate()
            .map(|(i, v)| injector.apply(target, *v, i as f64 * 5.0, CTX).0)
            .collect()
    }

    #[test]
    fn hold_freezes_previous_value() {
        let mut inj = FaultInjector::new(&[spec(FaultTarget::Cgm, FaultKind::Hold, None, 5.0, 10.0)]).unwrap();
        assert_eq!(
            run(&mut inj, FaultTarget::Cgm, &[100.0, 105.0, 110.0, 115.0]),
            vec![100.0, 100.0, 100.0, 115.0]
        );
    }

    #[test]
    fn truncate_zeroes_insulin() {
        let s = spec(FaultTarget::Insulin, FaultKind::Truncate, None, 0.0, 60.0);
        assert_eq!(apply_fault(&s, 0.05, 10.0, None, CTX), (0.0, true));
    }

    #[test]
    fn add_then_clip() {
        let sensor = SensorConfig::default();
        let s = spec(FaultTarget::Cgm, FaultKind::Add, Some(80.0), 0.0, 60.0);
        let (v, on) = apply_fault(&s, 120.0, 0.0, None, CTX);
        assert!(on);
        assert_eq!(sensor.clip(v), 200.0);
        let (v, _) = apply_fault(&s, 350.0, 0.0, None, CTX);
        assert_eq!(sensor.clip(v), 400.0);
    }

    #[test]
    fn zero_duration_is_identity() {
        let mut inj = FaultInjector::new(&[spec(FaultTarget::Cgm, FaultKind::Truncate, None, 10.0, 0.0)]).unwrap();
        let stream = [100.0, 105.0, 110.0, 115.0, 120.0];
        assert_eq!(run(&mut inj, FaultTarget::Cgm, &stream), stream.to_vec());
    }

    #[test]
    fn trigger_gates_activation() {
        let mut s = spec(FaultTarget::Cgm, FaultKind::Truncate, None, 0.0, 100.0);
        s.trigger = Some(Trigger::BgAbove(150.0));
        assert_eq!(apply_fault(&s, 120.0, 5.0, None, TriggerContext { bg: 120.0 }), (120.0, false));
        assert_eq!(apply_fault(&s, 160.0, 5.0, None, TriggerContext { bg: 160.0 }), (0.0, true));
    }

    #[test]
    fn other_target_untouched() {
        let mut inj = FaultInjector::new(&[spec(FaultTarget::Insulin, FaultKind::Truncate, None, 0.0, 100.0)]).unwrap();
        assert_eq!(inj.apply(FaultTarget::Cgm, 123.0, 0.0, CTX), (123.0, false));
    }

    #[test]
    fn validation() {
        assert!(spec(FaultTarget::Cgm, FaultKind::Add, None, 0.0, 1.0).validate().is_err());
        assert!(spec(FaultTarget::Cgm, FaultKind::Hold, Some(3.0), 0.0, 1.0).validate().is_err());
        assert!(spec(FaultTarget::Cgm, FaultKind::Hold, None, 0.0, -1.0).validate().is_err());
        assert!(spec(FaultTarget::Cgm, FaultKind::Sub, Some(3.0), 0.0, 1.0).validate().is_ok());
    }

    fn kind_strategy() -> impl Strategy<Value = (FaultKind, Option<f64>)> {
        prop_oneof![
            Just((FaultKind::Truncate, None)),
            Just((FaultKind::Hold, None)),
            (1.0f64..100.0).prop_map(|m| (FaultKind::Add, Some(m))),
            (1.0f64..100.0).prop_map(|m| (FaultKind::Sub, Some(m))),
        ]
    }

    proptest! {
        #[test]
        fn changes_only_inside_window(
            (kind, magnitude) in kind_strategy(),
            start in 0.0f64..100.0,
            duration in 0.0f64..100.0,
            stream in proptest::collection::vec(40.0f64..400.0, 1..40),
        ) {
            let s = spec(FaultTarget::Cgm, kind, magnitude, start, duration);
            let mut inj = FaultInjector::new(&[s]).unwrap();
            for (i, v) in stream.iter().enumerate() {
                let (out, active) = inj.apply(FaultTarget::Cgm, *v, i as f64 * 5.0, CTX);
                if out != *v {
                    prop_assert!(active);
                }
            }
        }

        #[test]
        fn truncate_is_idempotent(v in 0.0f64..500.0, now in 0.0f64..50.0) {
            let s = spec(FaultTarget::Cgm, FaultKind::Truncate, None, 0.0, 50.0);
            let (once, _) = apply_fault(&s, v, now, None, CTX);
            let (twice, _) = apply_fault(&s, once, now, None, CTX);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn add_then_sub_restores(v in 100.0f64..300.0, m in 0.0f64..99.0) {
            let sensor = SensorConfig::default();
            let add = spec(FaultTarget::Cgm, FaultKind::Add, Some(m), 0.0, 10.0);
            let sub = spec(FaultTarget::Cgm, FaultKind::Sub, Some(m), 0.0, 10.0);
            let (up, _) = apply_fault(&add, v, 0.0, None, CTX);
            let (back, _) = apply_fault(&sub, sensor.clip(up), 0.0, None, CTX);
            prop_assert!((sensor.clip(back) - v).abs() < 1e-9);
        }
    }
}
