//! CGM sensor and insulin pump models sitting between controller and patient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controllers::ControlDecision;
use crate::error::{ensure_finite, ensure_nonnegative, ensure_positive, Error, Result};
use crate::units::PMOL_PER_UNIT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Standard deviation of additive Gaussian noise (mg/dL).
    pub noise_sd: f64,
    /// Reportable range `[min, max]` (mg/dL).
    pub range: [f64; 2],
    /// Minutes between readings.
    pub sample_interval: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            noise_sd: 2.0,
            range: [39.0, 400.0],
            sample_interval: 5.0,
        }
    }
}

impl SensorConfig {
    pub fn noiseless() -> Self {
        Self {
            noise_sd: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_nonnegative("sensor.noise_sd", self.noise_sd)?;
        ensure_positive("sensor.sample_interval", self.sample_interval)?;
        ensure_finite("sensor.range[0]", self.range[0])?;
        ensure_finite("sensor.range[1]", self.range[1])?;
        if self.range[0] >= self.range[1] {
            return Err(Error::invalid("sensor.range", "min must be below max"));
        }
        Ok(())
    }

    pub fn clip(&self, value: f64) -> f64 {
        value.clamp(self.range[0], self.range[1])
    }
}

/// `clip(true_bg + N(0, sd²), range)`. No random draw is made when `sd` is 0.
pub fn cgm_read(true_bg: f64, config: &SensorConfig, rng: &mut ChaCha8Rng) -> f64 {
    let noise = if config.noise_sd > 0.0 {
        Normal::new(0.0, config.noise_sd)
            .expect("validated noise sd")
            .sample(rng)
    } else {
        0.0
    };
    config.clip(true_bg + noise)
}

/// A seeded CGM.
#[derive(Debug, Clone)]
pub struct Sensor {
    config: SensorConfig,
    rng: ChaCha8Rng,
}

impl Sensor {
    pub fn new(config: SensorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &SensorConfig {
        &self.config
    }

    pub fn read(&mut self, true_bg: f64) -> f64 {
        cgm_read(true_bg, &self.config, &mut self.rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InsulinUnit {
    #[serde(rename = "U/min")]
    UnitsPerMin,
    #[serde(rename = "pmol/min")]
    PmolPerMin,
}

impl InsulinUnit {
    /// Amount in this unit's numerator corresponding to `units` U.
    pub fn from_units(self, units: f64) -> f64 {
        match self {
            InsulinUnit::UnitsPerMin => units,
            InsulinUnit::PmolPerMin => units * PMOL_PER_UNIT,
        }
    }

    pub fn to_units(self, amount: f64) -> f64 {
        match self {
            InsulinUnit::UnitsPerMin => amount,
            InsulinUnit::PmolPerMin => amount / PMOL_PER_UNIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PumpConfig {
    /// U/hr
    pub max_basal: f64,
    /// U
    pub max_bolus: f64,
    /// Basal quantum (U/hr); commanded rates are rounded down to a multiple.
    pub basal_resolution: f64,
    pub output_unit: InsulinUnit,
}

impl Default for PumpConfig {
    fn default() -> Self {
        Self {
            max_basal: 25.0,
            max_bolus: 25.0,
            basal_resolution: 0.025,
            output_unit: InsulinUnit::UnitsPerMin,
        }
    }
}

impl PumpConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("pump.max_basal", self.max_basal)?;
        ensure_positive("pump.max_bolus", self.max_bolus)?;
        ensure_positive("pump.basal_resolution", self.basal_resolution)?;
        Ok(())
    }

    /// Rounds a basal rate down to the pump quantum and clips it to limits.
    pub fn quantize_basal(&self, basal: f64) -> f64 {
        let clipped = basal.clamp(0.0, self.max_basal);
        // The epsilon keeps exact multiples from falling one quantum short.
        let steps = (clipped / self.basal_resolution + 1e-9).floor();
        (steps * self.basal_resolution).min(clipped)
    }

    /// Largest deliverable rate (U/min) when a bolus is spread over `step` minutes.
    pub fn max_rate_u_per_min(&self, step: f64) -> f64 {
        self.max_basal / 60.0 + self.max_bolus / step
    }
}

/// What the pump actually delivers for one decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    /// Quantized, clipped basal (U/hr).
    pub basal_u_per_hr: f64,
    /// Clipped bolus (U).
    pub bolus_u: f64,
    /// Basal rate in the pump's output unit (per minute).
    pub basal_rate: f64,
    /// Bolus amount in the output unit's numerator (U or pmol).
    pub bolus_amount: f64,
    pub unit: InsulinUnit,
}

impl Delivery {
    /// Average rate (U/min) over a control step of `step` minutes.
    pub fn mean_u_per_min(&self, step: f64) -> f64 {
        self.basal_u_per_hr / 60.0 + self.bolus_u / step
    }
}

pub fn pump_deliver(decision: &ControlDecision, config: &PumpConfig) -> Delivery {
    let basal_u_per_hr = config.quantize_basal(decision.basal);
    let bolus_u = decision.bolus.clamp(0.0, config.max_bolus);
    Delivery {
        basal_u_per_hr,
        bolus_u,
        basal_rate: config.output_unit.from_units(basal_u_per_hr / 60.0),
        bolus_amount: config.output_unit.from_units(bolus_u),
        unit: config.output_unit,
    }
}
