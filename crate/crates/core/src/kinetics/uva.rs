//! Reduced UVA-Padova glucose kinetics.
//!
//! Two glucose compartments (plasma `G_p`, tissue `G_t`) exchange mass at
//! rates `k1`, `k2`. Endogenous production is `kp1 - kp2·G_p - kp3·X_L`,
//! floored at zero, where `X_L` is a first-order delayed copy of plasma
//! insulin concentration. Insulin-dependent utilization follows a
//! Michaelis-Menten law modulated by remote insulin action `X`:
//!
//! ```text
//! dG_p/dt = EGP + Ra - U_ii - k1·G_p + k2·G_t
//! dG_t/dt = -U_id + k1·G_p - k2·G_t
//! U_id    = (Vm0 + Vmx·X) · G_t / (Km0 + G_t)
//! dX_L/dt = -ki · (X_L - I)
//! dX/dt   = -p2u · X + p2u · (I - Ib)
//! I       = I_p / V_i
//! ```
//!
//! Subcutaneous insulin travels through two compartments (`kd`, `ka`) into
//! plasma, where it is cleared at rate `ke`. Masses are per kg body weight;
//! the insulin input is pmol/min for the whole body.

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::meal::MealQueue;
use crate::error::{ensure_finite, ensure_nonnegative, ensure_positive, Error, Result};

/// Glucose (mg/dL) below which the optional hypoglycemia risk factor applies.
pub const HYPO_THRESHOLD: f64 = 60.0;
const HYPO_RISK_GAIN: f64 = 10.0;
const HYPO_RISK_EXPONENT: f64 = 1.44;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UvaProfile {
    /// Plasma to tissue glucose rate (1/min).
    pub k_1: f64,
    /// Tissue to plasma glucose rate (1/min).
    pub k_2: f64,
    /// Extrapolated EGP at zero glucose and insulin (mg/kg/min).
    pub kp_1: f64,
    /// Liver glucose effectiveness (1/min).
    pub kp_2: f64,
    /// Liver insulin action (mg/kg/min per pmol/L).
    pub kp_3: f64,
    /// Delayed insulin action rate (1/min).
    pub k_i: f64,
    /// Insulin-independent utilization (mg/kg/min).
    pub u_ii: f64,
    /// Glucose distribution volume (dL/kg).
    pub v_g: f64,
    /// Basal plasma glucose mass (mg/kg).
    pub g_pb: f64,
    /// Body weight (kg).
    pub bw: f64,
    /// Insulin distribution volume (L/kg).
    pub v_i: f64,
    /// First subcutaneous transfer rate (1/min).
    pub k_d: f64,
    /// Subcutaneous to plasma absorption rate (1/min).
    pub k_a: f64,
    /// Plasma insulin clearance (1/min).
    pub k_e: f64,
    /// Basal Michaelis-Menten utilization capacity (mg/kg/min).
    pub v_m0: f64,
    /// Insulin sensitivity of utilization (mg/kg/min per pmol/L).
    pub v_mx: f64,
    /// Michaelis-Menten constant (mg/kg).
    pub k_m0: f64,
    /// Remote insulin action rate (1/min).
    pub p_2u: f64,
    /// Basal plasma insulin concentration (pmol/L).
    pub i_b: f64,
    /// Meal absorption time constant (min).
    pub tau_m: f64,
}

impl UvaProfile {
    pub const FIELDS: [&'static str; 20] = [
        "k_1", "k_2", "kp_1", "kp_2", "kp_3", "k_i", "u_ii", "v_g", "g_pb", "bw", "v_i", "k_d",
        "k_a", "k_e", "v_m0", "v_mx", "k_m0", "p_2u", "i_b", "tau_m",
    ];

    pub const UNITS: [(&'static str, &'static str); 20] = [
        ("k_1", "1/min"),
        ("k_2", "1/min"),
        ("kp_1", "mg/kg/min"),
        ("kp_2", "1/min"),
        ("kp_3", "mg/kg/min per pmol/L"),
        ("k_i", "1/min"),
        ("u_ii", "mg/kg/min"),
        ("v_g", "dL/kg"),
        ("g_pb", "mg/kg"),
        ("bw", "kg"),
        ("v_i", "L/kg"),
        ("k_d", "1/min"),
        ("k_a", "1/min"),
        ("k_e", "1/min"),
        ("v_m0", "mg/kg/min"),
        ("v_mx", "mg/kg/min per pmol/L"),
        ("k_m0", "mg/kg"),
        ("p_2u", "1/min"),
        ("i_b", "pmol/L"),
        ("tau_m", "min"),
    ];

    /// Synthetic adult fixture, basal glucose 120 mg/dL, basal insulin
    /// 1.2 pmol/kg/min.
    pub fn adult_fixture() -> Self {
        Self {
            k_1: 0.065,
            k_2: 0.079,
            kp_1: 0.0,
            kp_2: 0.0021,
            kp_3: 0.005,
            k_i: 0.0079,
            u_ii: 1.0,
            v_g: 1.88,
            g_pb: 1.88 * 120.0,
            bw: 75.0,
            v_i: 0.05,
            k_d: 0.0164,
            k_a: 0.0182,
            k_e: 0.24,
            v_m0: 2.5,
            v_mx: 0.02,
            k_m0: 225.59,
            p_2u: 0.0331,
            i_b: 100.0,
            tau_m: 40.0,
        }
        .with_basal_consistency()
    }

    pub fn values(&self) -> [f64; 20] {
        [
            self.k_1, self.k_2, self.kp_1, self.kp_2, self.kp_3, self.k_i, self.u_ii, self.v_g,
            self.g_pb, self.bw, self.v_i, self.k_d, self.k_a, self.k_e, self.v_m0, self.v_mx,
            self.k_m0, self.p_2u, self.i_b, self.tau_m,
        ]
    }

    pub fn from_values(v: [f64; 20]) -> Self {
        Self {
            k_1: v[0],
            k_2: v[1],
            kp_1: v[2],
            kp_2: v[3],
            kp_3: v[4],
            k_i: v[5],
            u_ii: v[6],
            v_g: v[7],
            g_pb: v[8],
            bw: v[9],
            v_i: v[10],
            k_d: v[11],
            k_a: v[12],
            k_e: v[13],
            v_m0: v[14],
            v_mx: v[15],
            k_m0: v[16],
            p_2u: v[17],
            i_b: v[18],
            tau_m: v[19],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in Self::FIELDS.iter().zip(self.values()) {
            ensure_positive(name, value)?;
        }
        if self.kp_1 <= self.kp_2 * self.g_pb {
            return Err(Error::invalid(
                "kp_1",
                "must exceed kp_2·g_pb so that basal production is positive",
            ));
        }
        Ok(())
    }

    /// Plasma insulin concentration (pmol/L) at equilibrium under `rate` pmol/min.
    pub fn steady_state_insulin(&self, rate_pmol_per_min: f64) -> f64 {
        rate_pmol_per_min / (self.bw * self.k_e * self.v_i)
    }

    /// Insulin infusion (pmol/min) that holds plasma insulin at `i_b`.
    pub fn basal_rate_pmol(&self) -> f64 {
        self.u_2ss() * self.bw
    }

    /// Steady-state insulin rate per kg (pmol/kg/min).
    pub fn u_2ss(&self) -> f64 {
        self.k_e * self.i_b * self.v_i
    }

    /// Basal glucose concentration (mg/dL).
    pub fn basal_bg(&self) -> f64 {
        self.g_pb / self.v_g
    }

    /// Tissue glucose (mg/kg) balancing plasma glucose `g_p` at remote action `x`.
    ///
    /// Positive root of `k2·Gt² + (k2·Km0 + V - k1·Gp)·Gt - k1·Gp·Km0 = 0`
    /// with `V = Vm0 + Vmx·x` (times the hypoglycemia risk factor if enabled).
    pub fn tissue_equilibrium(&self, g_p: f64, x: f64, hypo_risk: bool) -> f64 {
        let v = self.utilization_capacity(x, g_p / self.v_g, hypo_risk).max(0.0);
        let a = self.k_2;
        let b = self.k_2 * self.k_m0 + v - self.k_1 * g_p;
        let c = -self.k_1 * g_p * self.k_m0;
        let disc = (b * b - 4.0 * a * c).sqrt();
        // Citardauq form avoids cancellation when b > 0.
        if b >= 0.0 {
            if disc + b == 0.0 {
                0.0
            } else {
                -2.0 * c / (b + disc)
            }
        } else {
            (-b + disc) / (2.0 * a)
        }
    }

    /// Recomputes `kp_1` so that the basal state (`g_pb`, `i_b`) is an equilibrium.
    pub fn with_basal_consistency(mut self) -> Self {
        let g_tb = self.tissue_equilibrium(self.g_pb, 0.0, false);
        let u_idb = self.v_m0 * g_tb / (self.k_m0 + g_tb);
        let egp_b = self.u_ii + u_idb;
        self.kp_1 = egp_b + self.kp_2 * self.g_pb + self.kp_3 * self.i_b;
        self
    }

    fn utilization_capacity(&self, x: f64, bg: f64, hypo_risk: bool) -> f64 {
        let mult = if hypo_risk { hypo_risk_factor(bg) } else { 1.0 };
        self.v_m0 + self.v_mx * x * mult
    }
}

/// Multiplier on `Vmx` below [`HYPO_THRESHOLD`]:
/// `1 + 10 · (ln(60)^1.44 - ln(G)^1.44)²`, and exactly 1 at or above it.
pub fn hypo_risk_factor(bg: f64) -> f64 {
    if bg >= HYPO_THRESHOLD {
        return 1.0;
    }
    let g = bg.max(1.0);
    let d = HYPO_THRESHOLD.ln().powf(HYPO_RISK_EXPONENT) - g.ln().powf(HYPO_RISK_EXPONENT);
    1.0 + HYPO_RISK_GAIN * d * d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UvaState {
    /// Plasma glucose (mg/kg).
    pub g_p: f64,
    /// Tissue glucose (mg/kg).
    pub g_t: f64,
    /// Delayed insulin action on the liver (pmol/L).
    pub x_l: f64,
    /// Remote insulin action on utilization (pmol/L).
    pub x: f64,
    /// Subcutaneous insulin (pmol/kg).
    pub i_sc1: f64,
    pub i_sc2: f64,
    /// Plasma insulin (pmol/kg).
    pub i_p: f64,
    pub meals: MealQueue,
}

impl UvaState {
    /// Equilibrium insulin state for `rate` pmol/min with plasma glucose set from
    /// `bg` and tissue glucose at its conditional equilibrium.
    pub fn at_rest(profile: &UvaProfile, bg: f64, rate_pmol_per_min: f64, hypo_risk: bool) -> Self {
        let p = profile;
        let per_kg = rate_pmol_per_min / p.bw;
        let i_p = per_kg / p.k_e;
        let insulin = i_p / p.v_i;
        let x = insulin - p.i_b;
        let g_p = bg * p.v_g;
        Self {
            g_p,
            g_t: p.tissue_equilibrium(g_p, x, hypo_risk),
            x_l: insulin,
            x,
            i_sc1: per_kg / p.k_d,
            i_sc2: per_kg / p.k_a,
            i_p,
            meals: MealQueue::new(),
        }
    }

    /// The basal equilibrium of `profile`.
    pub fn basal(profile: &UvaProfile) -> Self {
        Self::at_rest(profile, profile.basal_bg(), profile.basal_rate_pmol(), false)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_nonnegative("g_p", self.g_p)?;
        ensure_nonnegative("g_t", self.g_t)?;
        ensure_finite("x_l", self.x_l)?;
        ensure_finite("x", self.x)?;
        ensure_nonnegative("i_sc1", self.i_sc1)?;
        ensure_nonnegative("i_sc2", self.i_sc2)?;
        ensure_nonnegative("i_p", self.i_p)?;
        if !self.meals.all_finite() {
            return Err(Error::NonFinite {
                field: "meal_queue".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UvaDerivative {
    pub d_g_p: f64,
    pub d_g_t: f64,
    pub d_x_l: f64,
    pub d_x: f64,
    pub d_i_sc1: f64,
    pub d_i_sc2: f64,
    pub d_i_p: f64,
}

impl UvaDerivative {
    pub fn max_abs(&self) -> f64 {
        [
            self.d_g_p, self.d_g_t, self.d_x_l, self.d_x, self.d_i_sc1, self.d_i_sc2, self.d_i_p,
        ]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Endogenous glucose production (mg/kg/min), never negative.
pub fn uva_egp(profile: &UvaProfile, g_p: f64, x_l: f64) -> f64 {
    (profile.kp_1 - profile.kp_2 * g_p - profile.kp_3 * x_l).max(0.0)
}

pub fn uva_derivatives(
    state: &UvaState,
    profile: &UvaProfile,
    insulin_rate: f64,
) -> Result<UvaDerivative> {
    uva_derivatives_with(state, profile, insulin_rate, false)
}

pub fn uva_derivatives_with(
    state: &UvaState,
    profile: &UvaProfile,
    insulin_rate: f64,
    hypo_risk: bool,
) -> Result<UvaDerivative> {
    profile.validate()?;
    state.validate()?;
    ensure_nonnegative("insulin_rate", insulin_rate)?;
    Ok(raw_derivatives(state, profile, insulin_rate, hypo_risk))
}

fn raw_derivatives(s: &UvaState, p: &UvaProfile, rate: f64, hypo_risk: bool) -> UvaDerivative {
    let insulin = s.i_p / p.v_i;
    let egp = uva_egp(p, s.g_p, s.x_l);
    let capacity = p.utilization_capacity(s.x, s.g_p / p.v_g, hypo_risk);
    let u_id = (capacity * s.g_t / (p.k_m0 + s.g_t)).max(0.0);
    let r_a = s.meals.appearance(p.tau_m) / p.bw;
    UvaDerivative {
        d_g_p: egp + r_a - p.u_ii - p.k_1 * s.g_p + p.k_2 * s.g_t,
        d_g_t: -u_id + p.k_1 * s.g_p - p.k_2 * s.g_t,
        d_x_l: -p.k_i * (s.x_l - insulin),
        d_x: -p.p_2u * s.x + p.p_2u * (insulin - p.i_b),
        d_i_sc1: -p.k_d * s.i_sc1 + rate / p.bw,
        d_i_sc2: p.k_d * s.i_sc1 - p.k_a * s.i_sc2,
        d_i_p: p.k_a * s.i_sc2 - p.k_e * s.i_p,
    }
}

/// Blood glucose concentration (mg/dL).
pub fn uva_observe_bg(state: &UvaState, profile: &UvaProfile) -> f64 {
    state.g_p / profile.v_g
}

pub fn uva_step(state: &UvaState, profile: &UvaProfile, insulin_rate: f64, dt: f64) -> Result<UvaState> {
    uva_step_with(state, profile, insulin_rate, dt, super::mvp::SUBSTEP_MIN, false)
}

pub fn uva_step_with(
    state: &UvaState,
    profile: &UvaProfile,
    insulin_rate: f64,
    dt: f64,
    substep: f64,
    hypo_risk: bool,
) -> Result<UvaState> {
    ensure_positive("dt", dt)?;
    ensure_positive("substep", substep)?;
    profile.validate()?;
    state.validate()?;
    ensure_nonnegative("insulin_rate", insulin_rate)?;
    let mut s = state.clone();
    let mut remaining = dt;
    while remaining > 1e-12 {
        let h = substep.min(remaining);
        euler_substep(&mut s, profile, insulin_rate, h, hypo_risk);
        remaining -= h;
    }
    Ok(s)
}

pub(crate) fn euler_substep(s: &mut UvaState, p: &UvaProfile, rate: f64, h: f64, hypo_risk: bool) {
    let d = raw_derivatives(s, p, rate, hypo_risk);
    s.g_p += h * d.d_g_p;
    s.g_t += h * d.d_g_t;
    s.x_l += h * d.d_x_l;
    s.x += h * d.d_x;
    s.i_sc1 += h * d.d_i_sc1;
    s.i_sc2 += h * d.d_i_sc2;
    s.i_p += h * d.d_i_p;
    if s.g_p < 0.0 || s.g_t < 0.0 {
        debug!("clamping negative glucose mass ({}, {})", s.g_p, s.g_t);
    }
    s.g_p = s.g_p.max(0.0);
    s.g_t = s.g_t.max(0.0);
    s.i_sc1 = s.i_sc1.max(0.0);
    s.i_sc2 = s.i_sc2.max(0.0);
    s.i_p = s.i_p.max(0.0);
    s.meals.advance(h, p.tau_m);
}

/// Deterministic cohort: the adult fixture with body weight, glucose exchange,
/// liver, utilization, clearance and absorption parameters perturbed
/// uniformly within ±30%, basal glucose drawn from 100..140 mg/dL, and `kp_1`
/// re-derived so each patient's basal state is an equilibrium.
pub fn uva_default_cohort(n: usize, seed: u64) -> Result<Vec<UvaProfile>> {
    if n == 0 {
        return Err(Error::invalid("n", "cohort size must be at least 1"));
    }
    let spread = super::mvp::COHORT_SPREAD;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = UvaProfile::adult_fixture();
    let cohort = (0..n)
        .map(|_| {
            let mut p = base;
            for field in [
                &mut p.bw, &mut p.k_1, &mut p.k_2, &mut p.kp_2, &mut p.kp_3, &mut p.k_i,
                &mut p.v_mx, &mut p.p_2u, &mut p.k_e, &mut p.tau_m,
            ] {
                *field *= rng.gen_range(1.0 - spread..=1.0 + spread);
            }
            p.g_pb = p.v_g * rng.gen_range(100.0..=140.0);
            p.with_basal_consistency()
        })
        .collect();
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Solves the tissue balance by fixed-point iteration, independent of the
    /// quadratic root used in the implementation.
    fn tissue_by_iteration(p: &UvaProfile, g_p: f64) -> f64 {
        let mut g_t = g_p * p.k_1 / p.k_2;
        for _ in 0..10_000 {
            let u_id = p.v_m0 * g_t / (p.k_m0 + g_t);
            g_t = (p.k_1 * g_p - u_id) / p.k_2;
        }
        g_t
    }

    #[test]
    fn basal_fixture_is_stationary() {
        let p = UvaProfile::adult_fixture();
        let g_tb = tissue_by_iteration(&p, p.g_pb);
        let u_idb = p.v_m0 * g_tb / (p.k_m0 + g_tb);
        // Oracle: kp_1 chosen so production balances consumption at basal.
        let kp_1 = p.u_ii + u_idb + p.kp_2 * p.g_pb + p.kp_3 * p.i_b;
        assert!((kp_1 - p.kp_1).abs() < 1e-9);

        let s = UvaState::basal(&p);
        assert!((s.g_t - g_tb).abs() < 1e-9);
        let d = uva_derivatives(&s, &p, p.basal_rate_pmol()).unwrap();
        assert!(d.max_abs() < 1e-9, "{d:?}");
    }

    #[test]
    fn delayed_action_relaxes_at_k_i() {
        let p = UvaProfile::adult_fixture();
        let mut s = UvaState::basal(&p);
        let target = s.i_p / p.v_i;
        s.x_l = 0.0;
        let s1 = uva_step(&s, &p, p.basal_rate_pmol(), 1.0).unwrap();
        let expected = target * p.k_i;
        assert!((s1.x_l - expected).abs() < 1e-12);
        for _ in 0..2000 {
            s = uva_step(&s, &p, p.basal_rate_pmol(), 1.0).unwrap();
        }
        assert!((s.x_l - target).abs() < 1e-3);
    }

    #[test]
    fn production_floors_at_zero() {
        let p = UvaProfile::adult_fixture();
        let g_p = 10.0 * p.kp_1 / p.kp_2;
        assert_eq!(uva_egp(&p, g_p, 0.0), 0.0);
        let mut s = UvaState::basal(&p);
        s.g_p = g_p;
        let d = uva_derivatives(&s, &p, 0.0).unwrap();
        assert!(d.d_g_p < 0.0);
    }

    #[test]
    fn observed_bg() {
        let p = UvaProfile {
            v_g: 1.88,
            ..UvaProfile::adult_fixture()
        };
        let mut s = UvaState::basal(&p);
        s.g_p = 300.0;
        assert!((uva_observe_bg(&s, &p) - 159.574_468).abs() < 1e-5);
        s.g_p = 0.0;
        assert_eq!(uva_observe_bg(&s, &p), 0.0);
        s.g_p = 1.88 * 120.0;
        assert!((uva_observe_bg(&s, &p) - 120.0).abs() < 1e-12);
    }

    #[test]
    fn insulin_lowers_glucose_pointwise() {
        let p = UvaProfile::adult_fixture();
        let mut zero = UvaState::basal(&p);
        let mut basal = zero.clone();
        for _ in 0..150 {
            zero = uva_step(&zero, &p, 0.0, 5.0).unwrap();
            basal = uva_step(&basal, &p, p.basal_rate_pmol(), 5.0).unwrap();
            assert!(uva_observe_bg(&zero, &p) >= uva_observe_bg(&basal, &p));
        }
    }

    #[test]
    fn hypo_factor_is_one_above_threshold() {
        assert_eq!(hypo_risk_factor(60.0), 1.0);
        assert_eq!(hypo_risk_factor(200.0), 1.0);
        assert!(hypo_risk_factor(40.0) > hypo_risk_factor(55.0));
        assert!(hypo_risk_factor(0.0).is_finite());
    }

    #[test]
    fn cohort_profiles_are_basal_consistent() {
        let cohort = uva_default_cohort(20, 3).unwrap();
        assert_eq!(cohort, uva_default_cohort(20, 3).unwrap());
        for p in &cohort {
            p.validate().unwrap();
            let d = uva_derivatives(&UvaState::basal(p), p, p.basal_rate_pmol()).unwrap();
            assert!(d.max_abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_finite_with_field() {
        let p = UvaProfile::adult_fixture();
        let mut s = UvaState::basal(&p);
        s.x = f64::NAN;
        match uva_derivatives(&s, &p, 0.0) {
            Err(Error::NonFinite { field }) => assert_eq!(field, "x"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(uva_step(&UvaState::basal(&p), &p, 0.0, 0.0).is_err());
    }
}
