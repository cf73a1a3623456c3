//! Virtual patient models and a unit-normalizing wrapper used by the loop.

pub mod meal;
pub mod mvp;
pub mod uva;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_nonnegative, Result};
use crate::units::{PMOL_PER_UNIT, MICROUNITS_PER_UNIT};
pub use meal::MealQueue;
pub use mvp::{MvpProfile, MvpState};
pub use uva::{UvaProfile, UvaState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mvp,
    Uva,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mvp => "mvp",
            ModelKind::Uva => "uva",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "snake_case")]
pub enum PatientProfile {
    Mvp(MvpProfile),
    Uva(UvaProfile),
}

impl PatientProfile {
    pub fn kind(&self) -> ModelKind {
        match self {
            PatientProfile::Mvp(_) => ModelKind::Mvp,
            PatientProfile::Uva(_) => ModelKind::Uva,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PatientProfile::Mvp(p) => p.validate(),
            PatientProfile::Uva(p) => p.validate(),
        }
    }

    /// Body weight carried by the profile, if the model has one.
    pub fn body_weight(&self) -> Option<f64> {
        match self {
            PatientProfile::Mvp(_) => None,
            PatientProfile::Uva(p) => Some(p.bw),
        }
    }

    /// The patient's own steady-state basal rate in U/hr.
    ///
    /// For MVP this is the rate that holds BG at `bg_target`; for UVA it is
    /// the rate that holds plasma insulin at its basal level (and glucose at
    /// the patient's basal glucose).
    pub fn steady_state_basal(&self, bg_target: f64) -> Result<f64> {
        match self {
            PatientProfile::Mvp(p) => Ok(p.steady_state_dose(bg_target)? / MICROUNITS_PER_UNIT * 60.0),
            PatientProfile::Uva(p) => Ok(p.basal_rate_pmol() / PMOL_PER_UNIT * 60.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum PatientState {
    Mvp(MvpState),
    Uva(UvaState),
}

/// A patient model advanced one Euler substep at a time, taking insulin in U/min.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualPatient {
    profile: PatientProfile,
    hypo_risk: bool,
    state: PatientState,
}

impl VirtualPatient {
    /// Insulin compartments at equilibrium for `insulin_u_per_min`, glucose at `bg`.
    pub fn at_rest(profile: PatientProfile, bg: f64, insulin_u_per_min: f64, hypo_risk: bool) -> Result<Self> {
        profile.validate()?;
        ensure_nonnegative("initial_bg", bg)?;
        ensure_nonnegative("initial insulin rate", insulin_u_per_min)?;
        let state = match &profile {
            PatientProfile::Mvp(p) => {
                PatientState::Mvp(MvpState::at_rest(p, bg, insulin_u_per_min * MICROUNITS_PER_UNIT))
            }
            PatientProfile::Uva(p) => PatientState::Uva(UvaState::at_rest(
                p,
                bg,
                insulin_u_per_min * PMOL_PER_UNIT,
                hypo_risk,
            )),
        };
        Ok(Self {
            profile,
            hypo_risk,
            state,
        })
    }

    pub fn profile(&self) -> &PatientProfile {
        &self.profile
    }

    pub fn bg(&self) -> f64 {
        match (&self.state, &self.profile) {
            (PatientState::Mvp(s), _) => s.bg,
            (PatientState::Uva(s), PatientProfile::Uva(p)) => uva::uva_observe_bg(s, p),
            _ => unreachable!("state and profile models always agree"),
        }
    }

    pub fn ingest(&mut self, carbs_g: f64) {
        match &mut self.state {
            PatientState::Mvp(s) => s.meals.ingest_grams(carbs_g),
            PatientState::Uva(s) => s.meals.ingest_grams(carbs_g),
        }
    }

    /// One explicit Euler substep of `h` minutes at a constant insulin rate.
    pub fn substep(&mut self, insulin_u_per_min: f64, h: f64) {
        match (&mut self.state, &self.profile) {
            (PatientState::Mvp(s), PatientProfile::Mvp(p)) => {
                mvp::euler_substep(s, p, insulin_u_per_min * MICROUNITS_PER_UNIT, h)
            }
            (PatientState::Uva(s), PatientProfile::Uva(p)) => {
                uva::euler_substep(s, p, insulin_u_per_min * PMOL_PER_UNIT, h, self.hypo_risk)
            }
            _ => unreachable!("state and profile models always agree"),
        }
    }

    pub fn is_finite(&self) -> bool {
        match &self.state {
            PatientState::Mvp(s) => s.validate().is_ok(),
            PatientState::Uva(s) => s.validate().is_ok(),
        }
    }
}
