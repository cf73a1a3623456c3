//! Versioned on-disk documents: profiles, provenance hashing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kinetics::{ModelKind, MvpProfile, PatientProfile, UvaProfile};

pub const SCHEMA_VERSION: u32 = 1;

pub(crate) fn schema_version() -> u32 {
    SCHEMA_VERSION
}

/// A patient profile as stored on disk: a flat parameter map plus units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub model: ModelKind,
    pub name: String,
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub units: BTreeMap<String, String>,
}

impl ProfileFile {
    pub fn from_profile(name: impl Into<String>, profile: &PatientProfile) -> Self {
        let (fields, values, units): (&[&str], Vec<f64>, &[(&str, &str)]) = match profile {
            PatientProfile::Mvp(p) => (&MvpProfile::FIELDS, p.values().to_vec(), &MvpProfile::UNITS),
            PatientProfile::Uva(p) => (&UvaProfile::FIELDS, p.values().to_vec(), &UvaProfile::UNITS),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            model: profile.kind(),
            name: name.into(),
            params: fields.iter().map(|f| f.to_string()).zip(values).collect(),
            units: units.iter().map(|(k, u)| (k.to_string(), u.to_string())).collect(),
        }
    }

    /// Converts to a validated profile; the parameter set must match the
    /// model's fields exactly.
    pub fn to_profile(&self) -> Result<PatientProfile> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "$.schema_version",
                format!("unsupported schema version {}", self.schema_version),
            ));
        }
        let fields: &[&str] = match self.model {
            ModelKind::Mvp => &MvpProfile::FIELDS,
            ModelKind::Uva => &UvaProfile::FIELDS,
        };
        for key in self.params.keys() {
            if !fields.contains(&key.as_str()) {
                return Err(Error::config(
                    format!("$.params.{key}"),
                    format!("unknown parameter for model {}", self.model),
                ));
            }
        }
        let mut values = Vec::with_capacity(fields.len());
        for f in fields {
            match self.params.get(*f) {
                Some(v) => values.push(*v),
                None => return Err(Error::config(format!("$.params.{f}"), "missing parameter")),
            }
        }
        let profile = match self.model {
            ModelKind::Mvp => PatientProfile::Mvp(MvpProfile::from_values(values.try_into().expect("9 fields"))),
            ModelKind::Uva => PatientProfile::Uva(UvaProfile::from_values(values.try_into().expect("20 fields"))),
        };
        profile.validate().map_err(|e| match e {
            Error::InvalidParameter { field, reason } => Error::config(format!("$.params.{field}"), reason),
            Error::NonFinite { field } => Error::config(format!("$.params.{field}"), "not finite"),
            other => other,
        })?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Reads and deserializes a JSON document, mapping schema violations to
/// [`Error::Config`] with a JSON path.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text)
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let path = if path == "." { "$".to_string() } else { format!("$.{path}") };
        Error::config(path, inner.to_string())
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable document");
    s.push('\n');
    s
}

/// Hex SHA-256 of the compact JSON encoding.
pub fn spec_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable document");
    hex::encode(Sha256::digest(bytes))
}
