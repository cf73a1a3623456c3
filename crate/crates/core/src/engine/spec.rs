use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controllers::{basal_u_2ss, ControllerConfig, ControllerKind, IobCurve};
use crate::devices::{InsulinUnit, PumpConfig, SensorConfig};
use crate::error::{Error, Result};
use crate::faults::FaultSpec;
use crate::kinetics::{mvp, uva, ModelKind, MvpProfile, PatientProfile, UvaProfile};
use crate::schema::{schema_version, ProfileFile};

/// Body weight assumed for MVP patients, whose profiles carry none (kg).
pub const DEFAULT_BODY_WEIGHT: f64 = 75.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinProfile {
    MvpNominal,
    UvaAdult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileRef {
    Builtin(BuiltinProfile),
    /// Path to a profile JSON, relative to the experiment file.
    File(String),
    Inline(ProfileFile),
    /// Member `index` of the deterministic default cohort.
    Cohort { seed: u64, n: usize, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MealEvent {
    /// Minutes since simulation start.
    pub time: f64,
    /// Grams of carbohydrate.
    pub cho: f64,
}

/// Optional controller settings; anything left out is derived from body
/// weight and the patient profile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bg_target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bg_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basal_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_2ss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dia: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_basal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_bolus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iob_curve: Option<IobCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suspend_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    #[serde(default, skip_serializing_if = "is_default")]
    pub settings: ControllerOverrides,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

fn is_false(v: &bool) -> bool {
    !*v
}

/// How a bolus is spread across its control interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BolusTiming {
    /// Evenly over the five 1-minute substeps.
    #[default]
    SpreadOverStep,
    /// Entirely within the first substep.
    FrontLoaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub model: ModelKind,
    pub profile: ProfileRef,
    /// Enables the UVA low-glucose utilization risk factor.
    #[serde(default, skip_serializing_if = "is_false")]
    pub hypo_risk: bool,
    pub controller: ControllerSpec,
    /// kg; defaults to the profile's weight (UVA) or 75 kg (MVP).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_weight: Option<f64>,
    #[serde(default)]
    pub sensor: SensorConfig,
    /// Defaults to a pump whose output unit matches the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump: Option<PumpConfig>,
    #[serde(default)]
    pub meals: Vec<MealEvent>,
    /// mg/dL
    pub initial_bg: f64,
    /// Minutes.
    pub duration: f64,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "is_default")]
    pub bolus_timing: BolusTiming,
    /// Whether meals are announced to the controller. Defaults to true for
    /// basal-bolus and false otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub announce_meals: Option<bool>,
}

impl ExperimentSpec {
    /// A minimal experiment on a builtin profile with default devices.
    pub fn new(model: ModelKind, controller: ControllerKind, initial_bg: f64, duration: f64) -> Self {
        let profile = match model {
            ModelKind::Mvp => ProfileRef::Builtin(BuiltinProfile::MvpNominal),
            ModelKind::Uva => ProfileRef::Builtin(BuiltinProfile::UvaAdult),
        };
        Self {
            schema_version: schema_version(),
            model,
            profile,
            hypo_risk: false,
            controller: ControllerSpec {
                kind: controller,
                settings: ControllerOverrides::default(),
            },
            body_weight: None,
            sensor: SensorConfig::default(),
            pump: None,
            meals: Vec::new(),
            initial_bg,
            duration,
            faults: Vec::new(),
            seed: 0,
            bolus_timing: BolusTiming::default(),
            announce_meals: None,
        }
    }

    /// The same experiment with file profile references inlined, so it can
    /// be re-run without the files it came from.
    pub fn self_contained(&self, base_dir: Option<&Path>) -> Result<ExperimentSpec> {
        let mut spec = self.clone();
        if let ProfileRef::File(path) = &self.profile {
            let profile = self.resolve_profile_for_model(base_dir)?;
            let name = Path::new(path)
                .file_stem()
                .map_or_else(|| path.clone(), |s| s.to_string_lossy().into_owned());
            spec.profile = ProfileRef::Inline(ProfileFile::from_profile(name, &profile));
        }
        Ok(spec)
    }

    pub fn meals_announced(&self) -> bool {
        self.announce_meals
            .unwrap_or(self.controller.kind == ControllerKind::BasalBolus)
    }

    /// Validates every field and resolves profile, controller and pump
    /// settings. File references are relative to `base_dir`.
    pub fn resolve(&self, base_dir: Option<&Path>) -> Result<ResolvedExperiment> {
        self.check()?;
        let profile = self.resolve_profile_for_model(base_dir)?;
        if profile.kind() != self.model {
            return Err(Error::config(
                "$.profile",
                format!("profile is for model {}, experiment uses {}", profile.kind(), self.model),
            ));
        }
        if self.hypo_risk && self.model != ModelKind::Uva {
            return Err(Error::config("$.hypo_risk", "only the uva model supports hypo_risk"));
        }

        let expected_unit = match self.model {
            ModelKind::Mvp => InsulinUnit::UnitsPerMin,
            ModelKind::Uva => InsulinUnit::PmolPerMin,
        };
        let pump = match &self.pump {
            Some(p) => {
                if p.output_unit != expected_unit {
                    return Err(Error::config(
                        "$.pump.output_unit",
                        format!("model {} takes insulin in {:?}", self.model, expected_unit),
                    ));
                }
                p.validate().map_err(|e| Error::config("$.pump", e.to_string()))?;
                p.clone()
            }
            None => PumpConfig {
                output_unit: expected_unit,
                ..PumpConfig::default()
            },
        };
        self.sensor
            .validate()
            .map_err(|e| Error::config("$.sensor", e.to_string()))?;

        let controller = resolve_controller(&self.controller.settings, &profile, self.body_weight)?;
        Ok(ResolvedExperiment {
            spec: self.clone(),
            profile,
            controller,
            pump,
        })
    }

    fn check(&self) -> Result<()> {
        if self.schema_version != schema_version() {
            return Err(Error::config(
                "$.schema_version",
                format!("unsupported schema version {}", self.schema_version),
            ));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::config("$.duration", "must be > 0"));
        }
        if !(self.initial_bg.is_finite() && self.initial_bg > 0.0) {
            return Err(Error::config("$.initial_bg", "must be > 0"));
        }
        if let Some(bw) = self.body_weight {
            if !(bw.is_finite() && bw > 0.0) {
                return Err(Error::config("$.body_weight", "must be > 0"));
            }
        }
        for (i, m) in self.meals.iter().enumerate() {
            if !(m.time.is_finite() && m.time >= 0.0 && m.time < self.duration) {
                return Err(Error::config(
                    format!("$.meals[{i}].time"),
                    format!("must lie in [0, {})", self.duration),
                ));
            }
            if !(m.cho.is_finite() && m.cho >= 0.0) {
                return Err(Error::config(format!("$.meals[{i}].cho"), "must be >= 0"));
            }
        }
        for (i, f) in self.faults.iter().enumerate() {
            f.validate()
                .map_err(|e| Error::config(format!("$.faults[{i}]"), e.to_string()))?;
        }
        Ok(())
    }
}

pub fn resolve_profile(r: &ProfileRef, base_dir: Option<&Path>) -> Result<PatientProfile> {
    match r {
        ProfileRef::Builtin(BuiltinProfile::MvpNominal) => Ok(PatientProfile::Mvp(MvpProfile::nominal())),
        ProfileRef::Builtin(BuiltinProfile::UvaAdult) => Ok(PatientProfile::Uva(UvaProfile::adult_fixture())),
        ProfileRef::Inline(f) => f.to_profile(),
        ProfileRef::File(path) => {
            let full = match base_dir {
                Some(dir) => dir.join(path),
                None => path.into(),
            };
            if !full.exists() {
                return Err(Error::config("$.profile.file", format!("{} does not exist", full.display())));
            }
            ProfileFile::load(&full)?.to_profile()
        }
        ProfileRef::Cohort { .. } => Err(Error::config(
            "$.profile.cohort",
            "cohort references need the experiment model; use resolve_cohort_profile",
        )),
    }
}

fn resolve_cohort(model: ModelKind, seed: u64, n: usize, index: usize) -> Result<PatientProfile> {
    if index >= n {
        return Err(Error::config("$.profile.cohort.index", format!("{index} out of range for n = {n}")));
    }
    let profile = match model {
        ModelKind::Mvp => PatientProfile::Mvp(mvp::mvp_default_cohort(n, seed)?[index]),
        ModelKind::Uva => PatientProfile::Uva(uva::uva_default_cohort(n, seed)?[index]),
    };
    Ok(profile)
}

impl ExperimentSpec {
    pub(crate) fn resolve_profile_for_model(&self, base_dir: Option<&Path>) -> Result<PatientProfile> {
        match &self.profile {
            ProfileRef::Cohort { seed, n, index } => resolve_cohort(self.model, *seed, *n, *index),
            other => resolve_profile(other, base_dir),
        }
    }
}

fn resolve_controller(o: &ControllerOverrides, profile: &PatientProfile, bw: Option<f64>) -> Result<ControllerConfig> {
    let bw = bw.or(profile.body_weight()).unwrap_or(DEFAULT_BODY_WEIGHT);
    let bg_target = o.bg_target.unwrap_or(120.0);
    let basal_rate = match o.basal_rate {
        Some(b) => b,
        None => profile
            .steady_state_basal(bg_target)
            .map_err(|e| Error::config("$.controller.settings.basal_rate", e.to_string()))?,
    };
    let mut c = ControllerConfig::from_body_weight(bw, basal_rate)
        .map_err(|e| Error::config("$.controller.settings", e.to_string()))?;
    c.bg_target = bg_target;
    macro_rules! apply {
        ($($field:ident),*) => { $( if let Some(v) = o.$field { c.$field = v; } )* };
    }
    apply!(bg_range, isf, cr, cf, dia, max_basal, max_bolus, iob_curve, suspend_threshold);
    c.u_2ss = o.u_2ss.unwrap_or_else(|| basal_u_2ss(basal_rate, bw));
    c.validate()
        .map_err(|e| Error::config("$.controller.settings", e.to_string()))?;
    Ok(c)
}

/// An experiment with every reference resolved and every setting filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedExperiment {
    pub spec: ExperimentSpec,
    pub profile: PatientProfile,
    pub controller: ControllerConfig,
    pub pump: PumpConfig,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_json;

    #[test]
    fn json_round_trip_and_defaults() {
        let text = r#"{
            "model": "mvp",
            "profile": {"builtin": "mvp_nominal"},
            "controller": {"kind": "openaps"},
            "meals": [{"time": 60, "cho": 50}],
            "initial_bg": 120,
            "duration": 750
        }"#;
        let spec: ExperimentSpec = parse_json(text).unwrap();
        assert_eq!(spec.schema_version, 1);
        assert!(!spec.meals_announced());
        let r = spec.resolve(None).unwrap();
        assert_eq!(r.pump.output_unit, InsulinUnit::UnitsPerMin);
        assert_eq!(r.controller.bw, 75.0);
        let again: ExperimentSpec = parse_json(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn unit_mismatch_is_config_error() {
        let mut spec = ExperimentSpec::new(ModelKind::Uva, ControllerKind::BasalBolus, 120.0, 100.0);
        spec.pump = Some(PumpConfig::default());
        match spec.resolve(None) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "$.pump.output_unit"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn meal_outside_run_rejected() {
        let mut spec = ExperimentSpec::new(ModelKind::Mvp, ControllerKind::BasalBolus, 120.0, 100.0);
        spec.meals.push(MealEvent { time: 100.0, cho: 10.0 });
        match spec.resolve(None) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "$.meals[0].time"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_profile_file_is_config_error() {
        let mut spec = ExperimentSpec::new(ModelKind::Mvp, ControllerKind::BasalBolus, 120.0, 100.0);
        spec.profile = ProfileRef::File("no/such/profile.json".into());
        assert!(matches!(spec.resolve(None), Err(Error::Config { .. })));
    }

    #[test]
    fn model_profile_mismatch() {
        let mut spec = ExperimentSpec::new(ModelKind::Mvp, ControllerKind::BasalBolus, 120.0, 100.0);
        spec.profile = ProfileRef::Builtin(BuiltinProfile::UvaAdult);
        assert!(matches!(spec.resolve(None), Err(Error::Config { .. })));
    }

    #[test]
    fn uva_controller_defaults_follow_profile() {
        let spec = ExperimentSpec::new(ModelKind::Uva, ControllerKind::BasalBolus, 120.0, 100.0);
        let r = spec.resolve(None).unwrap();
        assert!((r.controller.u_2ss - 1.2).abs() < 1e-12);
        assert!((r.controller.basal_rate - 0.9).abs() < 1e-12);
    }
}
