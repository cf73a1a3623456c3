use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{Format, ReplayArgs, ReplayMode};
use crate::analytics::{hazard_label, mse, trace_outcomes, HazardLabel, Outcomes};
use crate::engine::batch::{run_campaign, CampaignOutcome};
use crate::engine::replay::{replay_bg_with_pump, replay_insulin, ReplaySetup};
use crate::engine::spec::{ExperimentSpec, MealEvent};
use crate::engine::ClosedLoop;
use crate::error::{Error, Result};
use crate::faults::campaign::{clean_counterparts, CampaignFile};
use crate::kinetics::{mvp, uva, ModelKind, PatientProfile};
use crate::schema::{parse_json, read_json, spec_hash, to_json_pretty, ProfileFile, SCHEMA_VERSION};
use crate::sysid::{fit_profile, BgSignal, FitResult, FitSpec, FitTrace};
use crate::trace_csv::{format_g, TraceFile};

fn base_dir(path: &Path) -> Option<&Path> {
    path.parent().filter(|p| !p.as_os_str().is_empty())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "out".to_string(), |s| s.to_string_lossy().into_owned())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = base_dir(path) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Reads an experiment from a spec file or from a trace that embeds one.
pub(crate) fn load_experiment(path: &Path) -> Result<ExperimentSpec> {
    let is_csv = path.extension().is_some_and(|e| e == "csv");
    if is_csv {
        let file = TraceFile::read(path)?;
        return file
            .spec
            .ok_or_else(|| Error::config("$.spec", format!("{} has no embedded spec", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = parse_json(&text)?;
    if value.get("records").is_some() {
        let file: TraceFile = parse_json(&text)?;
        return file.spec.ok_or_else(|| Error::config("$.spec", "trace has no embedded spec"));
    }
    parse_json(&text)
}

/// Outcome document written next to every simulated trace.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationOutput {
    pub schema_version: u32,
    pub spec_hash: String,
    pub spec: ExperimentSpec,
    pub rows: usize,
    pub outcomes: Outcomes,
    pub hazard: HazardLabel,
    #[serde(skip)]
    pub trace_path: PathBuf,
}

pub(crate) fn simulate(experiment: &Path, seed: Option<u64>, out: &Path, format: Format) -> Result<SimulationOutput> {
    let mut spec = load_experiment(experiment)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let spec = spec.self_contained(base_dir(experiment))?;
    let records = ClosedLoop::from_spec(&spec, None)?.run()?;
    let bg: Vec<f64> = records.iter().map(|r| r.bg_true).collect();
    let name = stem(experiment);
    let trace_path = out.join(format!("{name}.{}", format.ext()));
    let output = SimulationOutput {
        schema_version: SCHEMA_VERSION,
        spec_hash: spec_hash(&spec),
        rows: records.len(),
        outcomes: trace_outcomes(&records)?,
        hazard: hazard_label(&bg),
        spec: spec.clone(),
        trace_path: trace_path.clone(),
    };
    let file = TraceFile::new(Some(spec), records);
    let text = match format {
        Format::Csv => file.to_csv(),
        Format::Json => file.to_json(),
    };
    write(&trace_path, &text)?;
    write(&out.join(format!("{name}.outcomes.json")), &to_json_pretty(&output))?;
    Ok(output)
}

#[derive(Debug, Clone, Serialize)]
struct ReplayRow {
    t: f64,
    recorded: f64,
    replayed: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rationale: Option<&'static str>,
}

#[derive(Debug, Clone, Serialize)]
struct ReplayDoc<'a> {
    schema_version: u32,
    mode: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    spec: Option<&'a ExperimentSpec>,
    mse: f64,
    rows: &'a [ReplayRow],
}

/// Summary of a replay run.
#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub samples: usize,
    pub mse: f64,
    pub path: PathBuf,
}

fn meals_from_trace(file: &TraceFile) -> Vec<MealEvent> {
    match &file.spec {
        Some(spec) => spec.meals.clone(),
        None => file
            .records
            .iter()
            .filter(|r| r.cho > 0.0)
            .map(|r| MealEvent { time: r.t, cho: r.cho })
            .collect(),
    }
}

pub(crate) fn replay(args: &ReplayArgs, out: &Path, format: Format) -> Result<ReplayOutput> {
    let file = TraceFile::read(&args.trace)?;
    if file.records.is_empty() {
        return Err(Error::Trace("trace has no records".into()));
    }
    let meals = meals_from_trace(&file);
    let records = &file.records;
    let (mode, rows) = match args.mode {
        ReplayMode::Insulin => {
            let (profile, setup) = insulin_replay_setup(args, &file)?;
            let insulin: Vec<(f64, f64)> = records.iter().map(|r| (r.t, r.delivered)).collect();
            let bg = replay_insulin(&profile, &setup, &insulin, &meals)?;
            let rows: Vec<ReplayRow> = records
                .iter()
                .zip(bg)
                .map(|(r, b)| ReplayRow {
                    t: r.t,
                    recorded: r.bg_true,
                    replayed: b,
                    rationale: None,
                })
                .collect();
            ("insulin", rows)
        }
        ReplayMode::Bg => {
            let spec = match &args.config {
                Some(path) => load_experiment(path)?,
                None => file
                    .spec
                    .clone()
                    .ok_or_else(|| Error::config("--config", "trace has no embedded spec; pass an experiment file"))?,
            };
            let base = args.config.as_deref().and_then(base_dir);
            let resolved = spec.resolve(base)?;
            let signal = BgSignal::from(args.signal);
            let bg: Vec<(f64, f64)> = records
                .iter()
                .map(|r| {
                    let v = match signal {
                        BgSignal::Cgm => r.cgm,
                        BgSignal::BgTrue => r.bg_true,
                    };
                    (r.t, v)
                })
                .collect();
            let announced = if spec.meals_announced() { meals.as_slice() } else { &[] };
            let decisions =
                replay_bg_with_pump(spec.controller.kind, &resolved.controller, &resolved.pump, &bg, announced)?;
            let rows: Vec<ReplayRow> = records
                .iter()
                .zip(decisions)
                .map(|(r, d)| ReplayRow {
                    t: r.t,
                    recorded: r.delivered,
                    replayed: d.rate,
                    rationale: Some(d.rationale.as_str()),
                })
                .collect();
            ("bg", rows)
        }
    };
    let recorded: Vec<f64> = rows.iter().map(|r| r.recorded).collect();
    let replayed: Vec<f64> = rows.iter().map(|r| r.replayed).collect();
    let err = mse(&recorded, &replayed)?;

    let path = out.join(format!("{}.replay-{mode}.{}", stem(&args.trace), format.ext()));
    let text = match format {
        Format::Json => to_json_pretty(&ReplayDoc {
            schema_version: SCHEMA_VERSION,
            mode,
            spec: file.spec.as_ref(),
            mse: err,
            rows: &rows,
        }),
        Format::Csv => {
            let mut s = String::new();
            writeln!(s, "# schema_version: {SCHEMA_VERSION}").unwrap();
            if let Some(spec) = &file.spec {
                writeln!(s, "# spec: {}", serde_json::to_string(spec).expect("serializable spec")).unwrap();
            }
            writeln!(s, "# mse: {err:e}").unwrap();
            s.push_str(if mode == "bg" { "t,recorded,replayed,rationale\n" } else { "t,recorded,replayed\n" });
            for r in &rows {
                write!(s, "{},{},{}", format_g(r.t), format_g(r.recorded), format_g(r.replayed)).unwrap();
                if let Some(why) = r.rationale {
                    write!(s, ",{why}").unwrap();
                }
                s.push('\n');
            }
            s
        }
    };
    write(&path, &text)?;
    Ok(ReplayOutput {
        samples: rows.len(),
        mse: err,
        path,
    })
}

fn insulin_replay_setup(args: &ReplayArgs, file: &TraceFile) -> Result<(PatientProfile, ReplaySetup)> {
    let first = &file.records[0];
    match (&args.config, &file.spec) {
        (Some(path), _) => {
            let profile = ProfileFile::load(path)?.to_profile()?;
            let setup = ReplaySetup {
                initial_bg: first.bg_true,
                initial_insulin: first.delivered,
                hypo_risk: file.spec.as_ref().is_some_and(|s| s.hypo_risk),
            };
            Ok((profile, setup))
        }
        (None, Some(spec)) => {
            let resolved = spec.resolve(None)?;
            let setup = ReplaySetup {
                initial_bg: spec.initial_bg,
                initial_insulin: resolved.controller.basal_rate / 60.0,
                hypo_risk: spec.hypo_risk,
            };
            Ok((resolved.profile, setup))
        }
        (None, None) => Err(Error::config(
            "--config",
            "trace has no embedded spec; pass a profile file",
        )),
    }
}

#[derive(Debug, Serialize)]
struct FitReport<'a> {
    schema_version: u32,
    trace: String,
    fitspec: &'a FitSpec,
    result: &'a FitResult,
}

pub(crate) fn fit(
    trace: &Path,
    fitspec: &Path,
    out_profile: Option<&Path>,
    signal: BgSignal,
    out: &Path,
) -> Result<FitResult> {
    let spec: FitSpec = read_json(fitspec)?;
    spec.fixed_profile()?;
    let file = TraceFile::read(trace)?;
    let fit_trace = FitTrace::from_trace_file(&file, signal)?;
    let result = fit_profile(&spec, &fit_trace)?;
    let name = stem(trace);
    let profile_path = out_profile.map_or_else(|| out.join(format!("{name}.profile.json")), Path::to_path_buf);
    let profile_file = ProfileFile::from_profile(format!("fit-{name}"), &PatientProfile::Mvp(result.profile));
    write(&profile_path, &to_json_pretty(&profile_file))?;
    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        trace: trace.display().to_string(),
        fitspec: &spec,
        result: &result,
    };
    write(&out.join(format!("{name}.fit.json")), &to_json_pretty(&report))?;
    Ok(result)
}

fn report_line(label: &str, o: &CampaignOutcome) {
    println!(
        "{label}: {} runs ({} simulated, {} reused), hazard rate {:.1}%",
        o.report.runs, o.simulated, o.skipped, o.report.hazard_rate
    );
}

pub(crate) fn campaign(path: &Path, parallelism: usize, seed: Option<u64>, with_clean: bool, out: &Path) -> Result<()> {
    let mut file = CampaignFile::load(path)?;
    if let Some(seed) = seed {
        file.seed = seed;
    }
    let specs = file.expand()?;
    let base = base_dir(path);
    let clean = with_clean.then(|| clean_counterparts(&specs));
    if let Some(clean) = &clean {
        for s in clean {
            s.resolve(base)?;
        }
    }
    let faulted = run_campaign(&specs, base, out, parallelism)?;
    print!("{}", faulted.report.to_table());
    report_line(&file.name, &faulted);
    if let Some(clean) = clean {
        let c = run_campaign(&clean, base, &out.join("clean"), parallelism)?;
        report_line(&format!("{} (no faults)", file.name), &c);
    }
    Ok(())
}

pub(crate) fn cohort(n: usize, seed: u64, model: ModelKind, out: &Path) -> Result<Vec<PathBuf>> {
    let profiles: Vec<PatientProfile> = match model {
        ModelKind::Mvp => mvp::mvp_default_cohort(n, seed)?
            .into_iter()
            .map(PatientProfile::Mvp)
            .collect(),
        ModelKind::Uva => uva::uva_default_cohort(n, seed)?
            .into_iter()
            .map(PatientProfile::Uva)
            .collect(),
    };
    let width = n.to_string().len();
    profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let name = format!("{model}-{seed}-{i:0width$}");
            let path = out.join(format!("{name}.json"));
            write(&path, &to_json_pretty(&ProfileFile::from_profile(name, p)))?;
            Ok(path)
        })
        .collect()
}
