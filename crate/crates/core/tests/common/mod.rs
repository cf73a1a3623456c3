#![allow(dead_code)]

use aps_testbed::controllers::ControllerKind;
use aps_testbed::engine::spec::{ExperimentSpec, MealEvent, ProfileRef};
use aps_testbed::kinetics::{ModelKind, MvpProfile, PatientProfile};
use aps_testbed::schema::ProfileFile;

pub const DAY: f64 = 1440.0;

/// Profile with free parameters moved away from nominal, fixed ones nominal.
pub fn sysid_truth() -> MvpProfile {
    MvpProfile {
        egp: 1.2,
        gezi: 0.0026,
        s_i: 9.0e-4,
        ..MvpProfile::nominal()
    }
}

/// Closed-loop MVP run over `days` with three meals a day.
pub fn multi_day_spec(profile: &MvpProfile, days: usize, noise_sd: f64, seed: u64) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(ModelKind::Mvp, ControllerKind::Openaps, 120.0, days as f64 * DAY);
    spec.profile = ProfileRef::Inline(ProfileFile::from_profile("truth", &PatientProfile::Mvp(*profile)));
    spec.sensor.noise_sd = noise_sd;
    spec.seed = seed;
    spec.meals = (0..days)
        .flat_map(|d| {
            [(7.0, 50.0), (12.5, 70.0), (18.5, 80.0)].map(|(h, cho)| MealEvent {
                time: d as f64 * DAY + h * 60.0,
                cho,
            })
        })
        .collect();
    spec
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}
