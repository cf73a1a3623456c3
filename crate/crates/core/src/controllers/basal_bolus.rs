use super::{calculate_iob, ControlDecision, Controller, ControllerConfig, ControllerKind, Diagnostics, Observation, Rationale};
use crate::error::{ensure_finite, ensure_nonnegative, Error, Result};
use crate::units::PMOL_PER_UNIT;

/// Basal from the steady-state rate, bolus only at announced meals:
///
/// ```text
/// basal = u_2ss · BW / 6000                      (U/min)
/// bolus = CHO/CR                                 if CGM <= 150
///       = CHO/CR + (CGM - target)/CF             if CGM > 150
/// ```
///
/// `basal` is reported in U/hr. Both outputs are clipped to the configured
/// maxima.
pub fn basal_bolus_decide(cgm: f64, meal_cho: Option<f64>, config: &ControllerConfig) -> Result<ControlDecision> {
    ensure_nonnegative("cgm", cgm)?;
    let basal_u_per_min = config.u_2ss * config.bw / PMOL_PER_UNIT;
    let basal = (basal_u_per_min * 60.0).clamp(0.0, config.max_basal);

    let (bolus, rationale) = match meal_cho {
        None => (0.0, Rationale::BasalOnly),
        Some(cho) => {
            ensure_finite("meal_cho", cho)?;
            if cho < 0.0 {
                return Err(Error::invalid("meal_cho", format!("must be >= 0, got {cho}")));
            }
            if cho == 0.0 {
                (0.0, Rationale::BasalOnly)
            } else if cgm <= config.correction_threshold {
                (cho / config.cr, Rationale::MealBolus)
            } else {
                (
                    cho / config.cr + (cgm - config.bg_target) / config.cf,
                    Rationale::MealBolusCorrection,
                )
            }
        }
    };

    Ok(ControlDecision {
        basal,
        bolus: bolus.clamp(0.0, config.max_bolus),
        diagnostics: Diagnostics {
            iob: 0.0,
            eventual_bg: cgm,
            deviation: 0.0,
            rationale,
        },
    })
}

/// Stateless wrapper of [`basal_bolus_decide`].
#[derive(Debug, Clone)]
pub struct BasalBolusController {
    config: ControllerConfig,
}

impl BasalBolusController {
    pub fn new(config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }
}

impl Controller for BasalBolusController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::BasalBolus
    }

    fn config(&self) -> &ControllerConfig {
        &self.config
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<ControlDecision> {
        let cgm = obs.cgm().ok_or(Error::InsufficientHistory { needed: 1, got: 0 })?;
        let mut decision = basal_bolus_decide(cgm, obs.meal_cho, &self.config)?;
        decision.diagnostics.iob = calculate_iob(obs.pump_history, obs.now, &self.config);
        Ok(decision)
    }
}
