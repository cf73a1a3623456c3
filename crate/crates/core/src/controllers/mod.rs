//! Insulin controllers behind a common decision interface.

mod basal_bolus;
mod iob;
mod openaps;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Error, Result};
pub use basal_bolus::{basal_bolus_decide, BasalBolusController};
pub use iob::{calculate_iob, insulin_activity, IobCurve, PumpEvent, PumpHistory};
pub use openaps::{openaps_decide, OpenApsController};

/// Fraction of body weight giving total daily dose (U/kg/day).
pub const TDD_PER_KG: f64 = 0.55;
/// Grams of carbohydrate per U, numerator of the carb ratio.
pub const CARB_RULE: f64 = 450.0;
/// mg/dL per U, numerator of the correction factor.
pub const CORRECTION_RULE: f64 = 1700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DosingParams {
    /// Total daily dose (U/day).
    pub tdd: f64,
    /// Carb ratio (g/U).
    pub cr: f64,
    /// Correction factor (mg/dL per U).
    pub cf: f64,
    /// Insulin sensitivity factor (mg/dL per U).
    pub isf: f64,
}

/// Weight-based dosing rules: TDD = 0.55·BW, CR = 450/TDD, CF = ISF = 1700/TDD.
pub fn derive_dosing_params(bw: f64) -> Result<DosingParams> {
    ensure_positive("bw", bw)?;
    let tdd = TDD_PER_KG * bw;
    Ok(dosing_from_tdd(tdd))
}

pub(crate) fn dosing_from_tdd(tdd: f64) -> DosingParams {
    DosingParams {
        tdd,
        cr: CARB_RULE / tdd,
        cf: CORRECTION_RULE / tdd,
        isf: CORRECTION_RULE / tdd,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    BasalBolus,
    Openaps,
    FixedBasal,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::BasalBolus => "basal_bolus",
            ControllerKind::Openaps => "openaps",
            ControllerKind::FixedBasal => "fixed_basal",
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// mg/dL
    pub bg_target: f64,
    /// Target range `[low, high]` in mg/dL.
    pub bg_range: [f64; 2],
    /// mg/dL per U
    pub isf: f64,
    /// g/U
    pub cr: f64,
    /// mg/dL per U
    pub cf: f64,
    /// Profile basal rate (U/hr).
    pub basal_rate: f64,
    /// Steady-state insulin rate per kg (pmol/kg/min).
    pub u_2ss: f64,
    /// kg
    pub bw: f64,
    /// Duration of insulin action (min).
    pub dia: f64,
    /// U/hr
    pub max_basal: f64,
    /// U
    pub max_bolus: f64,
    pub iob_curve: IobCurve,
    /// CGM below this (mg/dL) forces a zero temp basal.
    pub suspend_threshold: f64,
    /// CGM above this (mg/dL) adds a correction to meal boluses.
    pub correction_threshold: f64,
    /// Temp basal duration (min).
    pub temp_duration: f64,
}

impl ControllerConfig {
    /// Defaults from body weight and a profile basal rate (U/hr).
    pub fn from_body_weight(bw: f64, basal_rate: f64) -> Result<Self> {
        let dosing = derive_dosing_params(bw)?;
        ensure_positive("basal_rate", basal_rate)?;
        let config = Self {
            bg_target: 120.0,
            bg_range: [70.0, 180.0],
            isf: dosing.isf,
            cr: dosing.cr,
            cf: dosing.cf,
            basal_rate,
            u_2ss: basal_u_2ss(basal_rate, bw),
            bw,
            dia: 240.0,
            max_basal: 4.0 * basal_rate,
            max_bolus: 15.0,
            iob_curve: IobCurve::Linear,
            suspend_threshold: 70.0,
            correction_threshold: 150.0,
            temp_duration: 30.0,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("isf", self.isf),
            ("cr", self.cr),
            ("cf", self.cf),
            ("dia", self.dia),
            ("max_basal", self.max_basal),
            ("max_bolus", self.max_bolus),
            ("bw", self.bw),
            ("temp_duration", self.temp_duration),
        ] {
            ensure_positive(name, v)?;
        }
        for (name, v) in [
            ("bg_target", self.bg_target),
            ("basal_rate", self.basal_rate),
            ("u_2ss", self.u_2ss),
            ("suspend_threshold", self.suspend_threshold),
            ("correction_threshold", self.correction_threshold),
        ] {
            ensure_finite(name, v)?;
        }
        let [low, high] = self.bg_range;
        if !(low < self.bg_target && self.bg_target < high) {
            return Err(Error::invalid(
                "bg_range",
                format!("need low < bg_target < high, got {low} < {} < {high}", self.bg_target),
            ));
        }
        if let IobCurve::Exponential { peak } = self.iob_curve {
            if !(peak > 0.0 && 2.0 * peak < self.dia) {
                return Err(Error::invalid("iob_curve.peak", "need 0 < peak < dia/2"));
            }
        }
        Ok(())
    }
}

/// u_2ss (pmol/kg/min) equivalent to a basal rate in U/hr.
pub fn basal_u_2ss(basal_rate: f64, bw: f64) -> f64 {
    basal_rate / 60.0 * crate::units::PMOL_PER_UNIT / bw
}

/// The branch a controller took for one decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rationale {
    FixedBasal,
    BasalOnly,
    MealBolus,
    MealBolusCorrection,
    LowGlucoseSuspend,
    RisingButLow,
    FallingButHigh,
    HighTemp,
    LowTemp,
    ZeroTemp,
    ZeroTempExtend,
    AtTarget,
}

impl Rationale {
    pub const ALL: [Rationale; 12] = [
        Rationale::FixedBasal,
        Rationale::BasalOnly,
        Rationale::MealBolus,
        Rationale::MealBolusCorrection,
        Rationale::LowGlucoseSuspend,
        Rationale::RisingButLow,
        Rationale::FallingButHigh,
        Rationale::HighTemp,
        Rationale::LowTemp,
        Rationale::ZeroTemp,
        Rationale::ZeroTempExtend,
        Rationale::AtTarget,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Rationale::FixedBasal => "fixed-basal",
            Rationale::BasalOnly => "basal-only",
            Rationale::MealBolus => "meal-bolus",
            Rationale::MealBolusCorrection => "meal-bolus-correction",
            Rationale::LowGlucoseSuspend => "low-glucose-suspend",
            Rationale::RisingButLow => "rising-but-low",
            Rationale::FallingButHigh => "falling-but-high",
            Rationale::HighTemp => "high-temp",
            Rationale::LowTemp => "low-temp",
            Rationale::ZeroTemp => "zero-temp",
            Rationale::ZeroTempExtend => "zero-temp-extend",
            Rationale::AtTarget => "at-target",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl std::fmt::Display for Rationale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// U
    pub iob: f64,
    /// mg/dL
    pub eventual_bg: f64,
    /// mg/dL
    pub deviation: f64,
    pub rationale: Rationale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    /// U/hr
    pub basal: f64,
    /// U
    pub bolus: f64,
    pub diagnostics: Diagnostics,
}

/// Everything a controller may look at when deciding.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    /// Minutes since simulation start.
    pub now: f64,
    /// CGM readings at the control cadence, oldest first, current last.
    pub cgm_history: &'a [f64],
    /// Carbohydrates announced at this step (g).
    pub meal_cho: Option<f64>,
    pub pump_history: &'a PumpHistory,
}

impl Observation<'_> {
    pub fn cgm(&self) -> Option<f64> {
        self.cgm_history.last().copied()
    }
}

pub trait Controller: Send {
    fn kind(&self) -> ControllerKind;
    fn config(&self) -> &ControllerConfig;
    fn decide(&mut self, obs: &Observation<'_>) -> Result<ControlDecision>;
}

/// Always commands the profile basal rate.
#[derive(Debug, Clone)]
pub struct FixedBasalController {
    config: ControllerConfig,
}

impl FixedBasalController {
    pub fn new(config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }
}

impl Controller for FixedBasalController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::FixedBasal
    }

    fn config(&self) -> &ControllerConfig {
        &self.config
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<ControlDecision> {
        let cgm = obs.cgm().unwrap_or(f64::NAN);
        Ok(ControlDecision {
            basal: self.config.basal_rate.clamp(0.0, self.config.max_basal),
            bolus: 0.0,
            diagnostics: Diagnostics {
                iob: calculate_iob(obs.pump_history, obs.now, &self.config),
                eventual_bg: cgm,
                deviation: 0.0,
                rationale: Rationale::FixedBasal,
            },
        })
    }
}

pub fn build_controller(kind: ControllerKind, config: ControllerConfig) -> Result<Box<dyn Controller>> {
    Ok(match kind {
        ControllerKind::BasalBolus => Box::new(BasalBolusController::new(config)?),
        ControllerKind::Openaps => Box::new(OpenApsController::new(config)?),
        ControllerKind::FixedBasal => Box::new(FixedBasalController::new(config)?),
    })
}
