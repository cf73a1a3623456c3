use aps_testbed::controllers::{
    build_controller, calculate_iob, openaps_decide, ControllerConfig, ControllerKind, Observation, PumpEvent,
    PumpHistory, Rationale,
};
use aps_testbed::kinetics::mvp::{mvp_step, mvp_step_with, MvpProfile, MvpState};
use aps_testbed::kinetics::uva::{uva_egp, uva_observe_bg, uva_step, UvaProfile, UvaState};
use proptest::prelude::*;

const STEP: f64 = 5.0;

fn mvp_trajectory(profile: &MvpProfile, bg0: f64, doses: &[f64], meal_g: f64, substep: f64) -> Vec<f64> {
    let mut s = MvpState::at_rest(profile, bg0, doses[0]);
    if meal_g > 0.0 {
        s.meals.ingest_grams(meal_g);
    }
    let mut out = vec![s.bg];
    for d in doses {
        s = mvp_step_with(&s, profile, *d, STEP, substep).unwrap();
        out.push(s.bg);
    }
    out
}

fn dose_seq(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..60_000.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mvp_relaxes_monotonically_without_insulin(bg0 in 1.0f64..600.0) {
        let p = MvpProfile::nominal();
        let target = p.egp / p.gezi;
        let mut s = MvpState::at_rest(&p, bg0, 0.0);
        let mut gap = (s.bg - target).abs();
        for _ in 0..500 {
            s = mvp_step(&s, &p, 0.0, STEP).unwrap();
            let g = (s.bg - target).abs();
            prop_assert!(g <= gap + 1e-9);
            gap = g;
        }
    }

    #[test]
    fn mvp_cascade_stays_nonnegative(doses in dose_seq(60), bg0 in 40.0f64..400.0) {
        let p = MvpProfile::nominal();
        let mut s = MvpState::at_rest(&p, bg0, 0.0);
        for d in &doses {
            s = mvp_step(&s, &p, *d, STEP).unwrap();
            prop_assert!(s.i_sc >= 0.0 && s.i_p >= 0.0 && s.i_eff >= 0.0 && s.bg >= 0.0);
        }
    }

    #[test]
    fn meal_appearance_is_linear_in_carbs(cho in 1.0f64..150.0, t in 0.0f64..400.0) {
        let p = MvpProfile::nominal();
        let mut one = MvpState::at_rest(&p, 120.0, 0.0);
        let mut two = one.clone();
        one.meals.ingest_grams(cho);
        two.meals.ingest_grams(2.0 * cho);
        one.meals.advance(t, p.tau_m);
        two.meals.advance(t, p.tau_m);
        let (a, b) = (one.meals.appearance(p.tau_m), two.meals.appearance(p.tau_m));
        prop_assert!((b - 2.0 * a).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn more_insulin_never_raises_mvp_bg(
        base in dose_seq(80),
        extra in dose_seq(80),
        meal in 0.0f64..100.0,
    ) {
        let p = MvpProfile::nominal();
        let more: Vec<f64> = base.iter().zip(&extra).map(|(a, b)| a + b).collect();
        let mut start = base.clone();
        start[0] = more[0];
        let low = mvp_trajectory(&p, 140.0, &start, meal, 1.0);
        let high = mvp_trajectory(&p, 140.0, &more, meal, 1.0);
        for (l, h) in low.iter().zip(&high) {
            prop_assert!(*h <= *l + 1e-9);
        }
    }

    #[test]
    fn uva_stays_nonnegative_and_insulin_monotone(rates in proptest::collection::vec(0.0f64..2000.0, 60), bump in 0.0f64..2000.0) {
        let p = UvaProfile::adult_fixture();
        let mut a = UvaState::basal(&p);
        let mut b = a.clone();
        for r in &rates {
            a = uva_step(&a, &p, *r, STEP).unwrap();
            b = uva_step(&b, &p, *r + bump, STEP).unwrap();
            for s in [&a, &b] {
                prop_assert!(s.g_p >= 0.0 && s.g_t >= 0.0 && s.i_sc1 >= 0.0 && s.i_sc2 >= 0.0 && s.i_p >= 0.0);
            }
            prop_assert!(uva_observe_bg(&b, &p) <= uva_observe_bg(&a, &p) + 1e-9);
        }
    }

    #[test]
    fn uva_egp_nonincreasing(g in 0.0f64..800.0, x in -50.0f64..500.0, dg in 0.0f64..100.0, dx in 0.0f64..100.0) {
        let p = UvaProfile::adult_fixture();
        let e = uva_egp(&p, g, x);
        prop_assert!(e >= 0.0);
        prop_assert!(uva_egp(&p, g + dg, x) <= e);
        prop_assert!(uva_egp(&p, g, x + dx) <= e);
    }
}

#[test]
fn halving_the_substep_barely_moves_mvp() {
    let p = MvpProfile::nominal();
    let steps = (750.0 / STEP) as usize;
    let dose = p.steady_state_dose(120.0).unwrap();
    let doses: Vec<f64> = (0..steps).map(|k| if (12..18).contains(&k) { 4.0 * dose } else { dose }).collect();
    let coarse = mvp_trajectory(&p, 120.0, &doses, 60.0, 1.0);
    let fine = mvp_trajectory(&p, 120.0, &doses, 60.0, 0.5);
    let sup = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(sup < 0.5, "sup-norm change {sup}");
}

fn config() -> ControllerConfig {
    ControllerConfig::from_body_weight(75.0, 1.0).unwrap()
}

fn history_from(rates: &[(f64, f64)]) -> PumpHistory {
    let events = rates
        .iter()
        .enumerate()
        .map(|(k, (basal, bolus))| PumpEvent {
            t: k as f64 * STEP,
            basal: *basal,
            bolus: *bolus,
        })
        .collect();
    PumpHistory::from_events(events).unwrap()
}

fn pump_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    proptest::collection::vec((0.0f64..5.0, prop_oneof![Just(0.0), 0.0f64..3.0]), 0..48)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// The branch taken is the first whose condition holds, in documented order.
    #[test]
    fn openaps_branch_exclusivity(
        cgm in proptest::collection::vec(39.0f64..400.0, 3..10),
        pump in pump_strategy(),
    ) {
        let c = config();
        let history = history_from(&pump);
        let now = pump.len() as f64 * STEP;
        let d = openaps_decide(&cgm, &history, now, None, &c).unwrap();
        let n = cgm.len();
        let slope = (cgm[n - 1] - cgm[n - 3]) / 2.0;
        let ev = d.diagnostics.eventual_bg;
        let expected = if cgm[n - 1] < c.suspend_threshold {
            Rationale::LowGlucoseSuspend
        } else if slope > 0.0 && ev < c.bg_target {
            Rationale::RisingButLow
        } else if slope < 0.0 && ev > c.bg_target {
            Rationale::FallingButHigh
        } else if ev > c.bg_target {
            Rationale::HighTemp
        } else if ev < c.bg_target {
            let rate = c.basal_rate + 2.0 * (ev - c.bg_target) / (c.isf * 0.5);
            if rate > 0.0 { Rationale::LowTemp } else { Rationale::ZeroTemp }
        } else {
            Rationale::AtTarget
        };
        prop_assert_eq!(d.diagnostics.rationale, expected);
        let iob = calculate_iob(&history, now, &c);
        prop_assert!((d.diagnostics.iob - iob).abs() < 1e-12);
    }

    #[test]
    fn openaps_response_is_monotone(a in 70.0f64..400.0, b in 70.0f64..400.0) {
        let c = config();
        let h = PumpHistory::new();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let d_lo = openaps_decide(&[lo; 3], &h, 0.0, None, &c).unwrap();
        let d_hi = openaps_decide(&[hi; 3], &h, 0.0, None, &c).unwrap();
        prop_assert!(d_hi.diagnostics.eventual_bg >= d_lo.diagnostics.eventual_bg);
        prop_assert!(d_hi.basal >= d_lo.basal);
    }

    #[test]
    fn suspend_dominates(
        prior in proptest::collection::vec(39.0f64..400.0, 2..8),
        low in 39.0f64..69.99,
        pump in pump_strategy(),
    ) {
        let c = config();
        let mut cgm = prior;
        cgm.push(low);
        let history = history_from(&pump);
        let now = pump.len() as f64 * STEP;
        let d = openaps_decide(&cgm, &history, now, Some(3.0), &c).unwrap();
        prop_assert_eq!(d.basal, 0.0);
        prop_assert_eq!(d.diagnostics.rationale, Rationale::LowGlucoseSuspend);
    }

    #[test]
    fn basal_bolus_is_stateless(
        inputs in proptest::collection::vec((39.0f64..400.0, prop_oneof![Just(None), (0.0f64..120.0).prop_map(Some)]), 1..20),
    ) {
        let c = config();
        let history = PumpHistory::new();
        let decide = |ctl: &mut Box<dyn aps_testbed::controllers::Controller>, (cgm, cho): (f64, Option<f64>)| {
            let h = [cgm; 3];
            ctl.decide(&Observation { now: 0.0, cgm_history: &h, meal_cho: cho, pump_history: &history }).unwrap()
        };
        let mut warm = build_controller(ControllerKind::BasalBolus, c.clone()).unwrap();
        for input in &inputs {
            let _ = decide(&mut warm, *input);
        }
        for input in inputs.iter().rev() {
            let mut fresh = build_controller(ControllerKind::BasalBolus, c.clone()).unwrap();
            prop_assert_eq!(decide(&mut warm, *input), decide(&mut fresh, *input));
        }
    }

    #[test]
    fn decisions_respect_limits(
        cgm in proptest::collection::vec(39.0f64..400.0, 3..10),
        cho in prop_oneof![Just(None), (0.0f64..300.0).prop_map(Some)],
        pump in pump_strategy(),
        max_basal in 0.5f64..10.0,
        max_bolus in 0.5f64..30.0,
    ) {
        let mut c = config();
        c.max_basal = max_basal;
        c.max_bolus = max_bolus;
        let history = history_from(&pump);
        let now = pump.len() as f64 * STEP;
        for kind in [ControllerKind::BasalBolus, ControllerKind::Openaps, ControllerKind::FixedBasal] {
            let mut ctl = build_controller(kind, c.clone()).unwrap();
            let d = ctl.decide(&Observation { now, cgm_history: &cgm, meal_cho: cho, pump_history: &history }).unwrap();
            prop_assert!(d.basal >= 0.0 && d.basal <= max_basal, "{kind:?} basal {}", d.basal);
            prop_assert!(d.bolus >= 0.0 && d.bolus <= max_bolus, "{kind:?} bolus {}", d.bolus);
        }
    }
}
