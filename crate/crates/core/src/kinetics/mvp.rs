//! Medtronic Virtual Patient glucose-insulin model.
//!
//! Three first-order lags carry subcutaneous insulin to plasma and on to an
//! insulin effect; blood glucose follows a minimal-model balance with meal
//! appearance from [`MealQueue`]:
//!
//! ```text
//! dI_sc/dt  = -(I_sc - ID/C_I) / τ1
//! dI_p/dt   = -(I_p - I_sc) / τ2
//! dI_eff/dt = -p2 · (I_eff - S_I · I_p)
//! dBG/dt    = -(GEZI + I_eff) · BG + EGP + R_A
//! R_A       = Σ CH · t · exp(-t/τm) / (V_G · τm²)
//! ```
//!
//! Insulin concentrations are µU/mL, so `ID` is µU/min and `C_I` is mL/min.
//! Meal appearance uses `t · exp(-t/τm)`; a constant `exp(-1/τm)` factor would
//! make `R_A` grow linearly without bound.

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::meal::MealQueue;
use crate::error::{ensure_nonnegative, ensure_positive, Error, Result};

/// Default Euler substep in minutes.
pub const SUBSTEP_MIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvpProfile {
    /// Insulin clearance (mL/min).
    pub c_i: f64,
    /// Subcutaneous transport time constant (min).
    pub tau_1: f64,
    /// Plasma transport time constant (min).
    pub tau_2: f64,
    /// Glucose distribution volume (dL).
    pub v_g: f64,
    /// Insulin action rate (1/min).
    pub p_2: f64,
    /// Endogenous glucose production (mg/dL/min).
    pub egp: f64,
    /// Glucose effectiveness at zero insulin (1/min).
    pub gezi: f64,
    /// Insulin sensitivity (mL/µU/min).
    pub s_i: f64,
    /// Meal absorption time constant (min).
    pub tau_m: f64,
}

impl MvpProfile {
    pub const FIELDS: [&'static str; 9] = [
        "c_i", "tau_1", "tau_2", "v_g", "p_2", "egp", "gezi", "s_i", "tau_m",
    ];

    pub const UNITS: [(&'static str, &'static str); 9] = [
        ("c_i", "mL/min"),
        ("tau_1", "min"),
        ("tau_2", "min"),
        ("v_g", "dL"),
        ("p_2", "1/min"),
        ("egp", "mg/dL/min"),
        ("gezi", "1/min"),
        ("s_i", "mL/uU/min"),
        ("tau_m", "min"),
    ];

    /// Population-average adult parameters.
    pub fn nominal() -> Self {
        Self {
            c_i: 2010.0,
            tau_1: 49.0,
            tau_2: 47.0,
            v_g: 253.0,
            p_2: 0.0106,
            egp: 1.33,
            gezi: 0.0022,
            s_i: 8.11e-4,
            tau_m: 40.0,
        }
    }

    pub fn values(&self) -> [f64; 9] {
        [
            self.c_i, self.tau_1, self.tau_2, self.v_g, self.p_2, self.egp, self.gezi, self.s_i,
            self.tau_m,
        ]
    }

    pub fn from_values(v: [f64; 9]) -> Self {
        Self {
            c_i: v[0],
            tau_1: v[1],
            tau_2: v[2],
            v_g: v[3],
            p_2: v[4],
            egp: v[5],
            gezi: v[6],
            s_i: v[7],
            tau_m: v[8],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in Self::FIELDS.iter().zip(self.values()) {
            ensure_positive(name, value)?;
        }
        Ok(())
    }

    /// Equilibrium BG (mg/dL) under a constant insulin dose (µU/min) and no meals.
    pub fn steady_state_bg(&self, dose_uu_per_min: f64) -> f64 {
        self.egp / (self.gezi + self.s_i * dose_uu_per_min / self.c_i)
    }

    /// Constant dose (µU/min) that holds BG at `bg`.
    pub fn steady_state_dose(&self, bg: f64) -> Result<f64> {
        ensure_positive("bg", bg)?;
        let dose = self.c_i * (self.egp / bg - self.gezi) / self.s_i;
        if dose < 0.0 {
            return Err(Error::invalid(
                "bg",
                format!(
                    "{bg} mg/dL is above the zero-insulin equilibrium {:.3}",
                    self.egp / self.gezi
                ),
            ));
        }
        Ok(dose)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvpState {
    /// Subcutaneous insulin (µU/mL).
    pub i_sc: f64,
    /// Plasma insulin (µU/mL).
    pub i_p: f64,
    /// Insulin effect (1/min).
    pub i_eff: f64,
    /// Blood glucose (mg/dL).
    pub bg: f64,
    pub meals: MealQueue,
}

impl MvpState {
    /// Insulin compartments at equilibrium for `dose` (µU/min), glucose at `bg`.
    pub fn at_rest(profile: &MvpProfile, bg: f64, dose_uu_per_min: f64) -> Self {
        let i_sc = dose_uu_per_min / profile.c_i;
        Self {
            i_sc,
            i_p: i_sc,
            i_eff: profile.s_i * i_sc,
            bg,
            meals: MealQueue::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_nonnegative("i_sc", self.i_sc)?;
        ensure_nonnegative("i_p", self.i_p)?;
        ensure_nonnegative("i_eff", self.i_eff)?;
        ensure_nonnegative("bg", self.bg)?;
        if !self.meals.all_finite() {
            return Err(Error::NonFinite {
                field: "meal_queue".into(),
            });
        }
        if self.meals.meals().iter().any(|m| m.elapsed < 0.0) {
            return Err(Error::invalid("meal_queue", "negative elapsed time"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvpDerivative {
    pub d_i_sc: f64,
    pub d_i_p: f64,
    pub d_i_eff: f64,
    pub d_bg: f64,
}

/// Meal appearance R_A in mg/dL/min.
pub fn mvp_meal_appearance(meals: &MealQueue, profile: &MvpProfile) -> f64 {
    meals.appearance(profile.tau_m) / profile.v_g
}

pub fn mvp_derivatives(
    state: &MvpState,
    profile: &MvpProfile,
    insulin_dose_rate: f64,
) -> Result<MvpDerivative> {
    profile.validate()?;
    state.validate()?;
    ensure_nonnegative("insulin_dose_rate", insulin_dose_rate)?;
    Ok(raw_derivatives(state, profile, insulin_dose_rate))
}

fn raw_derivatives(state: &MvpState, p: &MvpProfile, dose: f64) -> MvpDerivative {
    let r_a = mvp_meal_appearance(&state.meals, p);
    MvpDerivative {
        d_i_sc: -(state.i_sc - dose / p.c_i) / p.tau_1,
        d_i_p: -(state.i_p - state.i_sc) / p.tau_2,
        d_i_eff: -p.p_2 * (state.i_eff - p.s_i * state.i_p),
        d_bg: -(p.gezi + state.i_eff) * state.bg + p.egp + r_a,
    }
}

/// Advances the state by `dt` minutes with explicit Euler on 1-minute substeps.
pub fn mvp_step(
    state: &MvpState,
    profile: &MvpProfile,
    insulin_dose_rate: f64,
    dt: f64,
) -> Result<MvpState> {
    mvp_step_with(state, profile, insulin_dose_rate, dt, SUBSTEP_MIN)
}

/// As [`mvp_step`] with an explicit internal substep.
pub fn mvp_step_with(
    state: &MvpState,
    profile: &MvpProfile,
    insulin_dose_rate: f64,
    dt: f64,
    substep: f64,
) -> Result<MvpState> {
    ensure_positive("dt", dt)?;
    ensure_positive("substep", substep)?;
    profile.validate()?;
    state.validate()?;
    ensure_nonnegative("insulin_dose_rate", insulin_dose_rate)?;

    let mut s = state.clone();
    let mut remaining = dt;
    while remaining > 1e-12 {
        let h = substep.min(remaining);
        euler_substep(&mut s, profile, insulin_dose_rate, h);
        remaining -= h;
    }
    Ok(s)
}

pub(crate) fn euler_substep(s: &mut MvpState, p: &MvpProfile, dose: f64, h: f64) {
    let d = raw_derivatives(s, p, dose);
    s.i_sc += h * d.d_i_sc;
    s.i_p += h * d.d_i_p;
    s.i_eff += h * d.d_i_eff;
    s.bg += h * d.d_bg;
    if s.bg < 0.0 {
        debug!("clamping negative BG {} to 0", s.bg);
        s.bg = 0.0;
    }
    s.meals.advance(h, p.tau_m);
}

/// Relative half-width of the uniform sampling box around nominal values.
pub const COHORT_SPREAD: f64 = 0.3;

/// Seed and size of the cohort used by the bundled experiments.
pub const DEFAULT_COHORT_SEED: u64 = 2024;
pub const DEFAULT_COHORT_SIZE: usize = 20;

/// Deterministically samples `n` profiles uniformly within ±30% of
/// [`MvpProfile::nominal`], parameter by parameter.
pub fn mvp_default_cohort(n: usize, seed: u64) -> Result<Vec<MvpProfile>> {
    if n == 0 {
        return Err(Error::invalid("n", "cohort size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nominal = MvpProfile::nominal().values();
    let cohort = (0..n)
        .map(|_| {
            let mut v = nominal;
            for x in &mut v {
                *x *= rng.gen_range(1.0 - COHORT_SPREAD..=1.0 + COHORT_SPREAD);
            }
            MvpProfile::from_values(v)
        })
        .collect();
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare(bg: f64) -> MvpState {
        MvpState {
            i_sc: 0.0,
            i_p: 0.0,
            i_eff: 0.0,
            bg,
            meals: MealQueue::new(),
        }
    }

    #[test]
    fn glucose_balance_without_insulin() {
        let p = MvpProfile {
            egp: 1.0,
            gezi: 0.005,
            ..MvpProfile::nominal()
        };
        let d = mvp_derivatives(&bare(100.0), &p, 0.0).unwrap();
        assert!((d.d_bg - 0.5).abs() < 1e-12);
        assert_eq!(d.d_i_sc, 0.0);
    }

    #[test]
    fn subcutaneous_fixed_point() {
        let p = MvpProfile::nominal();
        let dose = 20_000.0;
        let mut s = bare(120.0);
        s.i_sc = dose / p.c_i;
        let d = mvp_derivatives(&s, &p, dose).unwrap();
        assert!(d.d_i_sc.abs() < 1e-15);
    }

    #[test]
    fn meal_appearance_peak() {
        let p = MvpProfile {
            v_g: 150.0,
            tau_m: 40.0,
            ..MvpProfile::nominal()
        };
        let mut q = MealQueue::new();
        q.ingest_grams(50.0);
        q.advance(40.0, p.tau_m);
        let r_a = mvp_meal_appearance(&q, &p);
        assert!((r_a - 3.0657).abs() < 1e-3, "{r_a}");
    }

    #[test]
    fn equilibrium_is_stationary() {
        let p = MvpProfile::nominal();
        let mut s = bare(p.egp / p.gezi);
        for _ in 0..100 {
            let next = mvp_step(&s, &p, 0.0, 5.0).unwrap();
            assert!((next.bg - s.bg).abs() < 1e-9);
            s = next;
        }
    }

    #[test]
    fn impulse_decays_monotonically() {
        let p = MvpProfile::nominal();
        let mut s = mvp_step(&bare(120.0), &p, 1.0e6, 5.0).unwrap();
        let mut last = s.i_sc;
        for _ in 0..200 {
            s = mvp_step(&s, &p, 0.0, 5.0).unwrap();
            assert!(s.i_sc <= last && s.i_sc >= 0.0);
            last = s.i_sc;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn basal_converges_to_algebraic_fixed_point() {
        let p = MvpProfile::nominal();
        let dose = 1.2e6 / 60.0;
        let expected = p.egp / (p.gezi + p.s_i * dose / p.c_i);
        let mut s = bare(200.0);
        for _ in 0..(24 * 12) {
            s = mvp_step(&s, &p, dose, 5.0).unwrap();
        }
        assert!((s.bg - expected).abs() < 0.5, "{} vs {}", s.bg, expected);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = MvpProfile::nominal();
        assert!(mvp_step(&bare(100.0), &p, 0.0, 0.0).is_err());
        assert!(mvp_step(&bare(100.0), &p, 0.0, -1.0).is_err());
        let mut bad = p;
        bad.tau_1 = f64::NAN;
        match mvp_derivatives(&bare(100.0), &bad, 0.0) {
            Err(Error::NonFinite { field }) => assert_eq!(field, "tau_1"),
            other => panic!("unexpected {other:?}"),
        }
        let mut s = bare(100.0);
        s.i_p = f64::INFINITY;
        match mvp_derivatives(&s, &p, 0.0) {
            Err(Error::NonFinite { field }) => assert_eq!(field, "i_p"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(mvp_derivatives(&bare(100.0), &p, -1.0).is_err());
    }

    #[test]
    fn cohort_is_deterministic_and_valid() {
        assert_eq!(
            mvp_default_cohort(1, 42).unwrap(),
            mvp_default_cohort(1, 42).unwrap()
        );
        let a = mvp_default_cohort(20, 7).unwrap();
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|p| p.validate().is_ok()));
        let b = mvp_default_cohort(20, 8).unwrap();
        assert_ne!(a, b);
        assert!(mvp_default_cohort(0, 1).is_err());
    }

    #[test]
    fn steady_state_dose_round_trips() {
        let p = MvpProfile::nominal();
        let dose = p.steady_state_dose(120.0).unwrap();
        assert!((p.steady_state_bg(dose) - 120.0).abs() < 1e-9);
        assert!(p.steady_state_dose(p.egp / p.gezi + 1.0).is_err());
    }
}
