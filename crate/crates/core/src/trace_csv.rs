//! Trace persistence: CSV with `#` provenance comments, or JSON.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controllers::Rationale;
use crate::engine::{ExperimentSpec, TraceRecord};
use crate::error::{Error, Result};
use crate::schema::SCHEMA_VERSION;

pub const HEADER: [&str; 10] = [
    "t_min",
    "bg_true",
    "cgm",
    "basal_cmd_Uhr",
    "bolus_cmd_U",
    "delivered_Umin",
    "iob_U",
    "cho_g",
    "fault_active",
    "rationale",
];

/// Formats like C's `%g`: six significant digits, trailing zeros removed,
/// scientific notation outside `[1e-4, 1e6)`.
pub fn format_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// A trace with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ExperimentSpec>,
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    pub fn new(spec: Option<ExperimentSpec>, records: Vec<TraceRecord>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            spec,
            records,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# schema_version: {}", self.schema_version).unwrap();
        if let Some(spec) = &self.spec {
            let json = serde_json::to_string(spec).expect("serializable spec");
            writeln!(out, "# spec: {json}").unwrap();
        }
        out.push_str(&HEADER.join(","));
        out.push('\n');
        for r in &self.records {
            let cols = [
                format_g(r.t),
                format_g(r.bg_true),
                format_g(r.cgm),
                format_g(r.basal_cmd),
                format_g(r.bolus_cmd),
                format_g(r.delivered),
                format_g(r.iob),
                format_g(r.cho),
                u8::from(r.fault_active).to_string(),
                r.rationale.as_str().to_string(),
            ];
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        crate::schema::to_json_pretty(self)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut schema_version = None;
        let mut spec = None;
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let body = line.trim_start_matches('#').trim();
            if let Some(v) = body.strip_prefix("schema_version:") {
                let v = v.trim().parse().map_err(|_| Error::Trace(format!("bad schema_version `{v}`")))?;
                schema_version = Some(v);
            } else if let Some(json) = body.strip_prefix("spec:") {
                let parsed = serde_json::from_str(json.trim())
                    .map_err(|e| Error::Trace(format!("embedded spec: {e}")))?;
                spec = Some(parsed);
            }
        }
        let schema_version = schema_version.unwrap_or(SCHEMA_VERSION);
        if schema_version != SCHEMA_VERSION {
            return Err(Error::Trace(format!("unsupported schema version {schema_version}")));
        }

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Trace(e.to_string()))?;
        if header.iter().ne(HEADER.iter().copied()) {
            return Err(Error::Trace(format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
        }
        let mut records = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::Trace(e.to_string()))?;
            let num = |c: usize| -> Result<f64> {
                row[c]
                    .parse()
                    .map_err(|_| Error::Trace(format!("row {}: `{}` is not a number in {}", i + 1, &row[c], HEADER[c])))
            };
            let fault_active = match &row[8] {
                "0" => false,
                "1" => true,
                other => return Err(Error::Trace(format!("row {}: fault_active `{other}`", i + 1))),
            };
            let rationale = Rationale::parse(&row[9])
                .ok_or_else(|| Error::Trace(format!("row {}: unknown rationale `{}`", i + 1, &row[9])))?;
            records.push(TraceRecord {
                t: num(0)?,
                bg_true: num(1)?,
                cgm: num(2)?,
                basal_cmd: num(3)?,
                bolus_cmd: num(4)?,
                delivered: num(5)?,
                iob: num(6)?,
                cho: num(7)?,
                fault_active,
                rationale,
            });
        }
        Ok(Self {
            schema_version,
            spec,
            records,
        })
    }

    /// Reads a CSV or JSON trace, chosen by extension.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            crate::schema::parse_json(&text)
        } else {
            Self::parse_csv(&text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::ControllerKind;
    use crate::kinetics::ModelKind;

    #[test]
    fn percent_g_formatting() {
        let cases = [
            (0.0, "0"),
            (120.0, "120"),
            (123.456789, "123.457"),
            (0.015, "0.015"),
            (1.0 / 60.0, "0.0166667"),
            (1234567.0, "1.23457e+06"),
            (0.0000123, "1.23e-05"),
            (-4.5, "-4.5"),
            (999999.7, "1e+06"),
            (100000.0, "100000"),
            (0.0001, "0.0001"),
        ];
        for (x, s) in cases {
            assert_eq!(format_g(x), s, "{x}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let spec = ExperimentSpec::new(ModelKind::Mvp, ControllerKind::BasalBolus, 120.0, 10.0);
        let rec = TraceRecord {
            t: 5.0,
            bg_true: 120.5,
            cgm: 119.25,
            basal_cmd: 0.9,
            bolus_cmd: 4.5,
            delivered: 0.915,
            iob: 0.0,
            cho: 50.0,
            fault_active: true,
            rationale: Rationale::MealBolus,
        };
        let file = TraceFile::new(Some(spec), vec![rec]);
        let text = file.to_csv();
        assert!(text.contains("\nt_min,bg_true,cgm,basal_cmd_Uhr,bolus_cmd_U,delivered_Umin,iob_U,cho_g,fault_active,rationale\n"));
        assert!(text.ends_with("5,120.5,119.25,0.9,4.5,0.915,0,50,1,meal-bolus\n"));
        assert_eq!(TraceFile::parse_csv(&text).unwrap(), file);
    }

    #[test]
    fn malformed_rows_rejected() {
        let text = format!("{}\n1,2,3,4,5,6,7,8,2,at-target\n", HEADER.join(","));
        assert!(matches!(TraceFile::parse_csv(&text), Err(Error::Trace(_))));
        assert!(TraceFile::parse_csv("a,b\n1,2\n").is_err());
    }
}
