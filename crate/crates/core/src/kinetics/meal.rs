//! Gut absorption shared by both patient models.
//!
//! Each ingested meal contributes `CH · t · exp(-t/τm) / τm²` (mg per minute
//! per unit volume) at `t` minutes after ingestion. The curve integrates to
//! `CH` and peaks at `t = τm`.

use serde::{Deserialize, Serialize};

/// Meals older than this many absorption time constants are dropped.
pub const MEAL_HORIZON_TAUS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveMeal {
    /// Minutes since ingestion.
    pub elapsed: f64,
    /// Carbohydrate mass in mg.
    pub carbs_mg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MealQueue {
    meals: Vec<ActiveMeal>,
}

/// Absorption rate of a single meal, before division by the distribution volume.
pub fn absorption_rate(carbs_mg: f64, elapsed: f64, tau_m: f64) -> f64 {
    if elapsed <= 0.0 {
        return 0.0;
    }
    carbs_mg * elapsed * (-elapsed / tau_m).exp() / (tau_m * tau_m)
}

impl MealQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ingest_grams(&mut self, carbs_g: f64) {
        if carbs_g > 0.0 {
            self.meals.push(ActiveMeal {
                elapsed: 0.0,
                carbs_mg: carbs_g * 1000.0,
            });
        }
    }

    pub fn meals(&self) -> &[ActiveMeal] {
        &self.meals
    }

    pub fn is_empty(&self) -> bool {
        self.meals.is_empty()
    }

    /// Summed absorption rate (mg/min) over all active meals.
    pub fn appearance(&self, tau_m: f64) -> f64 {
        self.meals
            .iter()
            .map(|m| absorption_rate(m.carbs_mg, m.elapsed, tau_m))
            .sum()
    }

    pub fn advance(&mut self, dt: f64, tau_m: f64) {
        let horizon = MEAL_HORIZON_TAUS * tau_m;
        for meal in &mut self.meals {
            meal.elapsed += dt;
        }
        self.meals.retain(|m| m.elapsed <= horizon);
    }

    pub(crate) fn all_finite(&self) -> bool {
        self.meals
            .iter()
            .all(|m| m.elapsed.is_finite() && m.carbs_mg.is_finite())
    }
}
