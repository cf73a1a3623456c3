use aps_testbed::analytics::{campaign_report, RunSummary};
use aps_testbed::controllers::{ControllerKind, Rationale};
use aps_testbed::devices::SensorConfig;
use aps_testbed::engine::batch::{run_batch, run_campaign};
use aps_testbed::engine::run_closed_loop;
use aps_testbed::engine::spec::{ExperimentSpec, MealEvent, ProfileRef};
use aps_testbed::faults::campaign::{clean_counterparts, CampaignGrid, FaultTemplate, StartDurationAxis};
use aps_testbed::faults::campaign::expand_campaign;
use aps_testbed::faults::{FaultKind, FaultSpec, FaultTarget};
use aps_testbed::kinetics::mvp::{DEFAULT_COHORT_SEED, DEFAULT_COHORT_SIZE};
use aps_testbed::kinetics::ModelKind;
use tempfile::TempDir;

fn summaries(specs: &[ExperimentSpec]) -> Vec<RunSummary> {
    run_batch(specs, None, 4)
        .unwrap()
        .into_iter()
        .zip(specs)
        .map(|(trace, spec)| RunSummary::new(spec, &trace.unwrap()).unwrap())
        .collect()
}

#[test]
fn clean_campaign_on_steady_state_is_hazard_free() {
    let mut base = ExperimentSpec::new(ModelKind::Mvp, ControllerKind::FixedBasal, 120.0, 1440.0);
    base.sensor = SensorConfig::noiseless();
    let grid = CampaignGrid {
        fault_scenarios: vec![FaultTemplate {
            target: FaultTarget::Cgm,
            kind: FaultKind::Hold,
            magnitude: None,
            trigger: None,
        }],
        start_duration: StartDurationAxis::Pairs(vec![[0.0, 0.0], [300.0, 0.0]]),
        initial_bgs: vec![100.0, 120.0, 140.0],
    };
    let specs = expand_campaign(&grid, &base, 0).unwrap();
    let dir = TempDir::new().unwrap();
    let out = run_campaign(&specs, None, dir.path(), 2).unwrap();
    assert_eq!(out.report.runs, 6);
    assert_eq!(out.report.hazard_rate, 0.0);
}

#[test]
fn cgm_forced_to_floor_suspends_and_hazard_follows_true_bg() {
    let mut spec = ExperimentSpec::new(ModelKind::Mvp, ControllerKind::Openaps, 120.0, 600.0);
    spec.sensor = SensorConfig::noiseless();
    spec.faults.push(FaultSpec {
        target: FaultTarget::Cgm,
        kind: FaultKind::Sub,
        magnitude: Some(400.0),
        start: 0.0,
        duration: 600.0,
        trigger: None,
    });
    let trace = run_closed_loop(&spec).unwrap();
    for r in &trace {
        assert_eq!(r.cgm, 39.0);
        assert!(r.fault_active);
        assert_eq!(r.rationale, Rationale::LowGlucoseSuspend);
        assert_eq!(r.delivered, 0.0);
    }
    let s = RunSummary::new(&spec, &trace).unwrap();
    // the sensor reads hypoglycemia the whole time, the patient never has it
    assert!(!s.hazard.h1);
    assert!(s.hazard.h2);
    let report = campaign_report(&[s]);
    assert_eq!(report.hazard_rate, 100.0);
    assert_eq!(report.groups.iter().find(|g| g.fault_class == "cgm-sub").unwrap().h1_runs, 0);
}

#[test]
fn faults_raise_hazard_over_clean_on_default_cohort() {
    let scenarios = [
        (FaultTarget::Cgm, FaultKind::Truncate, None),
        (FaultTarget::Cgm, FaultKind::Add, Some(80.0)),
        (FaultTarget::Cgm, FaultKind::Sub, Some(80.0)),
        (FaultTarget::Insulin, FaultKind::Hold, None),
        (FaultTarget::Insulin, FaultKind::Add, Some(0.03)),
        (FaultTarget::Insulin, FaultKind::Truncate, None),
    ];
    let mut specs = Vec::new();
    for index in 0..DEFAULT_COHORT_SIZE {
        let mut base = ExperimentSpec::new(ModelKind::Mvp, ControllerKind::Openaps, 120.0, 750.0);
        base.profile = ProfileRef::Cohort {
            seed: DEFAULT_COHORT_SEED,
            n: DEFAULT_COHORT_SIZE,
            index,
        };
        base.meals.push(MealEvent { time: 60.0, cho: 20.0 });
        for (target, kind, magnitude) in scenarios {
            let mut s = base.clone();
            s.faults.push(FaultSpec {
                target,
                kind,
                magnitude,
                start: 120.0,
                duration: 240.0,
                trigger: None,
            });
            specs.push(s);
        }
    }
    let faulted = campaign_report(&summaries(&specs));
    let clean = campaign_report(&summaries(&clean_counterparts(&specs)));
    assert_eq!(faulted.runs, 120);
    assert_eq!(clean.runs, 20);
    assert!(faulted.hazard_rate > clean.hazard_rate, "{} vs {}", faulted.hazard_rate, clean.hazard_rate);
}

#[test]
fn report_ignores_run_order() {
    let mut specs = Vec::new();
    for bg in [90.0, 150.0, 250.0] {
        for kind in [FaultKind::Truncate, FaultKind::Hold] {
            let mut s = ExperimentSpec::new(ModelKind::Uva, ControllerKind::BasalBolus, bg, 300.0);
            s.faults.push(FaultSpec {
                target: FaultTarget::Insulin,
                kind,
                magnitude: None,
                start: 30.0,
                duration: 120.0,
                trigger: None,
            });
            specs.push(s);
        }
    }
    let mut runs = summaries(&specs);
    let forward = campaign_report(&runs);
    runs.reverse();
    let backward = campaign_report(&runs);
    assert_eq!(forward.groups, backward.groups);
    assert_eq!(forward.hazard_rate, backward.hazard_rate);
}
