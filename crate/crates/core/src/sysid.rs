//! MVP profile estimation from recorded BG, insulin and meals.
//!
//! With the insulin lags, clearance and meal constants fixed, the glucose
//! equation is linear in the remaining parameters:
//!
//! ```text
//! dBG/dt - R_A = EGP · 1 + GEZI · (-BG) + S_I · (-h · BG)
//! ```
//!
//! where `h` is the insulin effect per unit sensitivity, obtained by running
//! the insulin cascade with `S_I = 1`. Ordinary least squares on these
//! regressors gives (EGP, GEZI, S_I).

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controllers::CORRECTION_RULE;
use crate::engine::{MealEvent, MealSchedule};
use crate::error::{Error, Result};
use crate::kinetics::mvp::SUBSTEP_MIN;
use crate::kinetics::{MealQueue, ModelKind, MvpProfile, MvpState};
use crate::schema::schema_version;
use crate::trace_csv::TraceFile;
use crate::units::MICROUNITS_PER_UNIT;

pub const MIN_SAMPLES: usize = 100;
/// Names of the regression coefficients, in column order.
pub const FREE_PARAMS: [&str; 3] = ["egp", "gezi", "s_i"];
pub const FIXED_PARAMS: [&str; 6] = ["c_i", "tau_1", "tau_2", "p_2", "tau_m", "v_g"];
/// Relative singular-value cutoff below which a direction is unidentifiable.
const RANK_TOL: f64 = 1e-10;
/// Fitted values are floored here to keep the profile valid.
const POSITIVE_FLOOR: f64 = 1e-12;

/// BG, insulin and meals on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// Minutes between samples; a whole number of model substeps.
    pub cadence: f64,
    /// mg/dL at each sample.
    pub bg: Vec<f64>,
    /// U/min held from each sample to the next.
    pub insulin: Vec<f64>,
    pub meals: Vec<MealEvent>,
    /// Rate the insulin compartments are in equilibrium with at t = 0 (U/min).
    pub initial_insulin: f64,
}

/// Which BG column of a trace file to fit against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BgSignal {
    #[default]
    Cgm,
    BgTrue,
}

impl FitTrace {
    pub fn new(cadence: f64, bg: Vec<f64>, insulin: Vec<f64>, meals: Vec<MealEvent>, initial_insulin: f64) -> Result<Self> {
        let substeps = cadence / SUBSTEP_MIN;
        if !(cadence.is_finite() && cadence > 0.0) || (substeps - substeps.round()).abs() > 1e-9 {
            return Err(Error::Trace(format!(
                "cadence {cadence} min is not a whole number of {SUBSTEP_MIN}-minute substeps"
            )));
        }
        if bg.len() != insulin.len() {
            return Err(Error::Trace(format!("{} BG samples but {} insulin samples", bg.len(), insulin.len())));
        }
        if bg.len() < MIN_SAMPLES {
            return Err(Error::Trace(format!("trace has {} samples, need at least {MIN_SAMPLES}", bg.len())));
        }
        if let Some(v) = bg.iter().chain(&insulin).find(|v| !v.is_finite()) {
            return Err(Error::Trace(format!("non-finite sample {v}")));
        }
        if insulin.iter().any(|v| *v < 0.0) || initial_insulin < 0.0 {
            return Err(Error::Trace("negative insulin rate".into()));
        }
        Ok(Self {
            cadence,
            bg,
            insulin,
            meals,
            initial_insulin,
        })
    }

    /// Builds a fit trace from a loop-engine trace. Meals and the initial
    /// insulin rate come from the embedded spec when present; otherwise
    /// meals are read off the `cho_g` column and the first delivered rate is
    /// taken as the initial one.
    pub fn from_trace_file(file: &TraceFile, signal: BgSignal) -> Result<Self> {
        let recs = &file.records;
        if recs.len() < 2 {
            return Err(Error::Trace("trace too short".into()));
        }
        let cadence = recs[1].t - recs[0].t;
        for (k, r) in recs.iter().enumerate() {
            if (r.t - recs[0].t - k as f64 * cadence).abs() > 1e-6 {
                return Err(Error::Trace(format!("non-uniform cadence at row {}", k + 1)));
            }
        }
        let (meals, initial) = match &file.spec {
            Some(spec) => {
                let resolved = spec.resolve(None)?;
                (spec.meals.clone(), resolved.controller.basal_rate / 60.0)
            }
            None => (
                recs.iter()
                    .filter(|r| r.cho > 0.0)
                    .map(|r| MealEvent { time: r.t - recs[0].t, cho: r.cho })
                    .collect(),
                recs[0].delivered,
            ),
        };
        let bg = recs
            .iter()
            .map(|r| match signal {
                BgSignal::Cgm => r.cgm,
                BgSignal::BgTrue => r.bg_true,
            })
            .collect();
        Self::new(cadence, bg, recs.iter().map(|r| r.delivered).collect(), meals, initial)
    }

    pub fn len(&self) -> usize {
        self.bg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bg.is_empty()
    }

    fn substeps(&self) -> usize {
        (self.cadence / SUBSTEP_MIN).round() as usize
    }

    fn samples_per_day(&self) -> f64 {
        1440.0 / self.cadence
    }
}

/// Insulin effect per unit S_I (µU/mL) and meal appearance (mg/dL/min) at
/// every model substep, as the Euler update starting there sees them.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    /// Substeps per sample.
    pub substeps: usize,
    pub h: Vec<f64>,
    pub r_a: Vec<f64>,
}

impl Cascade {
    pub fn h_at_sample(&self, k: usize) -> f64 {
        self.h[k * self.substeps]
    }

    pub fn r_a_at_sample(&self, k: usize) -> f64 {
        self.r_a[k * self.substeps]
    }
}

pub fn simulate_cascade(fixed: &MvpProfile, trace: &FitTrace) -> Cascade {
    let schedule = MealSchedule::new(&trace.meals);
    let mut meals = MealQueue::new();
    let dose0 = trace.initial_insulin * MICROUNITS_PER_UNIT / fixed.c_i;
    let (mut i_sc, mut i_p, mut e) = (dose0, dose0, dose0);
    let m = trace.substeps();
    let mut h = Vec::with_capacity(trace.len() * m);
    let mut r_a = Vec::with_capacity(trace.len() * m);
    for (k, rate) in trace.insulin.iter().enumerate() {
        let dose = rate * MICROUNITS_PER_UNIT;
        for j in 0..m {
            let from = k as f64 * trace.cadence + j as f64 * SUBSTEP_MIN;
            for meal in schedule.in_window(from, from + SUBSTEP_MIN) {
                meals.ingest_grams(meal.cho);
            }
            h.push(e);
            r_a.push(meals.appearance(fixed.tau_m) / fixed.v_g);
            let d_sc = -(i_sc - dose / fixed.c_i) / fixed.tau_1;
            let d_p = -(i_p - i_sc) / fixed.tau_2;
            let d_e = -fixed.p_2 * (e - i_p);
            i_sc += SUBSTEP_MIN * d_sc;
            i_p += SUBSTEP_MIN * d_p;
            e += SUBSTEP_MIN * d_e;
            meals.advance(SUBSTEP_MIN, fixed.tau_m);
        }
    }
    Cascade { substeps: m, h, r_a }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivative {
    /// `(BG[k+1] - BG[k-1]) / 2Δ`, one-sided at the ends.
    #[default]
    Central,
    /// `(BG[k+1] - BG[k]) / Δ`; the last sample is dropped. At a cadence of
    /// one substep this matches the Euler update exactly.
    Forward,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MealHandling {
    /// Subtract R_A computed from the meal records.
    #[default]
    Records,
    /// Ignore the records and drop samples from the onset of any rise
    /// steeper than `rise_threshold` (mg/dL/min) until 8·τm later.
    Exclude { rise_threshold: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorOptions {
    pub derivative: Derivative,
    pub meals: MealHandling,
}

/// Design matrix `[1, -BG, -h·BG]` and target `dBG/dt - R_A`, each row
/// averaged over the difference window of its sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub design: DMatrix<f64>,
    pub target: DVector<f64>,
    /// Sample index of each row.
    pub rows: Vec<usize>,
}

/// Sample window `[a, b]` whose difference quotient estimates the slope at `k`.
fn window(k: usize, range: &Range<usize>, scheme: Derivative) -> Option<(usize, usize)> {
    let last = range.end - 1;
    match scheme {
        Derivative::Forward => (k < last).then_some((k, k + 1)),
        Derivative::Central if k == range.start => Some((k, k + 1)),
        Derivative::Central if k == last => Some((k - 1, k)),
        Derivative::Central => Some((k - 1, k + 1)),
    }
}

/// BG at substep `j` of window `[a, b]`, interpolated through its samples.
fn interpolate(bg: &[f64], a: usize, b: usize, x: f64) -> f64 {
    if b == a + 1 {
        return bg[a] + x * (bg[b] - bg[a]);
    }
    // Lagrange through x = 0, 1, 2.
    let (y0, y1, y2) = (bg[a], bg[a + 1], bg[a + 2]);
    y0 * (x - 1.0) * (x - 2.0) / 2.0 - y1 * x * (x - 2.0) + y2 * x * (x - 1.0) / 2.0
}

/// Samples inside inferred meal windows.
fn meal_mask(bg: &[f64], range: &Range<usize>, dt: f64, threshold: f64, tau_m: f64) -> Vec<bool> {
    let mut excluded = vec![false; bg.len()];
    let span = (8.0 * tau_m / dt).ceil() as usize;
    let mut k = range.start + 1;
    while k < range.end {
        if (bg[k] - bg[k - 1]) / dt > threshold {
            let mut onset = k - 1;
            while onset > range.start && bg[onset] > bg[onset - 1] {
                onset -= 1;
            }
            let end = (onset + span + 1).min(range.end);
            excluded[onset..end].iter_mut().for_each(|x| *x = true);
            k = end.max(k + 1);
        } else {
            k += 1;
        }
    }
    excluded
}

pub fn build_regressors(
    trace: &FitTrace,
    fixed: &MvpProfile,
    options: &RegressorOptions,
    range: Range<usize>,
) -> Result<Regression> {
    if range.end > trace.len() || range.len() < MIN_SAMPLES {
        return Err(Error::Trace(format!(
            "regression window {range:?} needs at least {MIN_SAMPLES} samples within {}",
            trace.len()
        )));
    }
    let cascade = simulate_cascade(fixed, trace);
    let mask = match options.meals {
        MealHandling::Records => vec![false; trace.len()],
        MealHandling::Exclude { rise_threshold } => {
            meal_mask(&trace.bg, &range, trace.cadence, rise_threshold, fixed.tau_m)
        }
    };
    let m = cascade.substeps;
    let mut rows = Vec::with_capacity(range.len());
    let mut x = Vec::with_capacity(3 * range.len());
    let mut y = Vec::with_capacity(range.len());
    for k in range.clone() {
        if mask[k] {
            continue;
        }
        let Some((a, b)) = window(k, &range, options.derivative) else {
            continue;
        };
        // Average each term over the Euler substeps spanning the window, with
        // BG interpolated between samples, so the regressors describe the same
        // interval as the difference quotient.
        let n = (b - a) * m;
        let (mut bg_sum, mut hbg_sum, mut ra_sum) = (0.0, 0.0, 0.0);
        for j in 0..n {
            let bg = interpolate(&trace.bg, a, b, j as f64 / m as f64);
            let idx = a * m + j;
            bg_sum += bg;
            hbg_sum += cascade.h[idx] * bg;
            ra_sum += cascade.r_a[idx];
        }
        let r_a = match options.meals {
            MealHandling::Records => ra_sum / n as f64,
            MealHandling::Exclude { .. } => 0.0,
        };
        let slope = (trace.bg[b] - trace.bg[a]) / ((b - a) as f64 * trace.cadence);
        rows.push(k);
        x.extend([1.0, -bg_sum / n as f64, -hbg_sum / n as f64]);
        y.push(slope - r_a);
    }
    if rows.len() < FREE_PARAMS.len() {
        return Err(Error::Trace(format!("only {} usable samples after meal exclusion", rows.len())));
    }
    Ok(Regression {
        design: DMatrix::from_row_slice(rows.len(), 3, &x),
        target: DVector::from_vec(y),
        rows,
    })
}

/// Minimum-norm least squares with rank detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    /// (EGP, GEZI, S_I)
    pub coef: [f64; 3],
    pub rank: usize,
    /// Of the column-normalized design matrix, descending.
    pub singular_values: Vec<f64>,
    /// Parameters involved in a rank-deficient direction.
    pub unidentifiable: Vec<String>,
}

pub fn ols(reg: &Regression) -> OlsFit {
    let x = &reg.design;
    let norms: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).norm()).collect();
    let mut scaled = x.clone();
    for (j, n) in norms.iter().enumerate() {
        if *n > 0.0 {
            scaled.column_mut(j).scale_mut(1.0 / n);
        }
    }
    let svd = scaled.svd(true, true);
    let u = svd.u.as_ref().expect("computed U");
    let v_t = svd.v_t.as_ref().expect("computed Vᵀ");
    let s_max = svd.singular_values.max();
    let tol = (s_max * RANK_TOL).max(f64::MIN_POSITIVE);

    let mut z = DVector::zeros(x.ncols());
    let mut rank = 0;
    let mut unidentifiable = std::collections::BTreeSet::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        let v = v_t.row(i).transpose();
        if *s > tol {
            rank += 1;
            z += &v * (u.column(i).dot(&reg.target) / s);
        } else {
            for (j, c) in v.iter().enumerate() {
                if c.abs() > 1e-6 {
                    unidentifiable.insert(FREE_PARAMS[j].to_string());
                }
            }
        }
    }
    let mut coef = [0.0; 3];
    for j in 0..3 {
        coef[j] = if norms[j] > 0.0 { z[j] / norms[j] } else { 0.0 };
    }
    let mut singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    OlsFit {
        coef,
        rank,
        singular_values,
        unidentifiable: unidentifiable.into_iter().collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineOptions {
    pub max_iter: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { max_iter: 400 }
    }
}

fn default_train_window() -> f64 {
    10.0
}

fn default_model() -> ModelKind {
    ModelKind::Mvp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    /// Overrides for the fixed parameters; the rest stay nominal.
    #[serde(default)]
    pub fixed_params: BTreeMap<String, f64>,
    /// Days.
    #[serde(default = "default_train_window")]
    pub train_window: f64,
    /// Days after the training window; `None` uses the rest of the trace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_window: Option<f64>,
    #[serde(default)]
    pub regressors: RegressorOptions,
    /// Nelder-Mead on the replay error over all but `c_i` and `v_g`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineOptions>,
}

impl Default for FitSpec {
    fn default() -> Self {
        Self {
            schema_version: schema_version(),
            model: ModelKind::Mvp,
            fixed_params: BTreeMap::new(),
            train_window: default_train_window(),
            eval_window: None,
            regressors: RegressorOptions::default(),
            refine: None,
        }
    }
}

impl FitSpec {
    /// Nominal profile with the fixed-parameter overrides applied.
    pub fn fixed_profile(&self) -> Result<MvpProfile> {
        if self.model != ModelKind::Mvp {
            return Err(Error::config("$.model", "only mvp profiles can be fitted"));
        }
        if self.schema_version != schema_version() {
            return Err(Error::config(
                "$.schema_version",
                format!("unsupported schema version {}", self.schema_version),
            ));
        }
        if !(self.train_window.is_finite() && self.train_window > 0.0) {
            return Err(Error::config("$.train_window", "must be > 0"));
        }
        if let Some(w) = self.eval_window {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::config("$.eval_window", "must be >= 0"));
            }
        }
        let mut values = MvpProfile::nominal().values();
        for (key, v) in &self.fixed_params {
            let Some(i) = FIXED_PARAMS
                .contains(&key.as_str())
                .then(|| MvpProfile::FIELDS.iter().position(|f| f == key))
                .flatten()
            else {
                return Err(Error::config(format!("$.fixed_params.{key}"), "not a fixed parameter"));
            };
            values[i] = *v;
        }
        let p = MvpProfile::from_values(values);
        p.validate()
            .map_err(|e| Error::config("$.fixed_params", e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualDiagnostics {
    pub samples: usize,
    pub rms: f64,
    pub max_abs: f64,
    /// Largest |cos| between the residual and a regressor column.
    pub normal_equation: f64,
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub profile: MvpProfile,
    /// Unclamped regression coefficients (EGP, GEZI, S_I).
    pub raw_coef: [f64; 3],
    /// Coefficients floored to stay positive.
    pub clamped: Vec<String>,
    /// Observed total daily dose over the training window (U/day).
    pub tdd: f64,
    /// mg/dL per U
    pub isf: f64,
    /// (mg/dL)²
    pub train_mse: f64,
    /// (mg/dL)²; absent when the trace has no samples after training.
    pub eval_mse: Option<f64>,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub refined: bool,
    pub diagnostics: ResidualDiagnostics,
}

/// Open-loop BG under `profile`, insulin from the start of the trace and BG
/// reset to the observed value at `window.start`.
pub fn replay_window(profile: &MvpProfile, trace: &FitTrace, window: Range<usize>) -> Vec<f64> {
    let schedule = MealSchedule::new(&trace.meals);
    let mut s = MvpState::at_rest(profile, trace.bg[0], trace.initial_insulin * MICROUNITS_PER_UNIT);
    let mut out = Vec::with_capacity(window.len());
    for k in 0..window.end {
        if k == window.start {
            s.bg = trace.bg[k];
        }
        if k >= window.start {
            out.push(s.bg);
        }
        let dose = trace.insulin[k] * MICROUNITS_PER_UNIT;
        for j in 0..trace.substeps() {
            let from = k as f64 * trace.cadence + j as f64 * SUBSTEP_MIN;
            for m in schedule.in_window(from, from + SUBSTEP_MIN) {
                s.meals.ingest_grams(m.cho);
            }
            crate::kinetics::mvp::euler_substep(&mut s, profile, dose, SUBSTEP_MIN);
        }
    }
    out
}

fn window_mse(profile: &MvpProfile, trace: &FitTrace, window: Range<usize>) -> f64 {
    let observed = &trace.bg[window.clone()];
    let predicted = replay_window(profile, trace, window);
    let n = observed.len() as f64;
    observed.iter().zip(&predicted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n
}

pub fn fit_profile(spec: &FitSpec, trace: &FitTrace) -> Result<FitResult> {
    let fixed = spec.fixed_profile()?;
    let per_day = trace.samples_per_day();
    let n_train = ((spec.train_window * per_day).round() as usize).min(trace.len());
    if n_train < MIN_SAMPLES {
        return Err(Error::Trace(format!(
            "training window holds {n_train} samples, need at least {MIN_SAMPLES}"
        )));
    }
    let eval_end = match spec.eval_window {
        Some(days) => (n_train + (days * per_day).round() as usize).min(trace.len()),
        None => trace.len(),
    };

    let reg = build_regressors(trace, &fixed, &spec.regressors, 0..n_train)?;
    let fit = ols(&reg);
    if fit.rank < FREE_PARAMS.len() {
        return Err(Error::Unidentifiable(fit.unidentifiable.join(", ")));
    }

    let theta = DVector::from_column_slice(&fit.coef);
    let residual = &reg.target - &reg.design * &theta;
    let r_norm = residual.norm();
    let normal_equation = (0..3)
        .map(|j| {
            let c = reg.design.column(j);
            let denom = c.norm() * r_norm;
            if denom > 0.0 {
                (c.dot(&residual) / denom).abs()
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let diagnostics = ResidualDiagnostics {
        samples: reg.rows.len(),
        rms: (residual.norm_squared() / residual.len() as f64).sqrt(),
        max_abs: residual.amax(),
        normal_equation,
        singular_values: fit.singular_values.clone(),
    };

    let mut clamped = Vec::new();
    let mut free = fit.coef;
    for (v, name) in free.iter_mut().zip(FREE_PARAMS) {
        if *v < POSITIVE_FLOOR {
            *v = POSITIVE_FLOOR;
            clamped.push(name.to_string());
        }
    }
    let mut profile = MvpProfile {
        egp: free[0],
        gezi: free[1],
        s_i: free[2],
        ..fixed
    };

    let mut train_mse = window_mse(&profile, trace, 0..n_train);
    let mut refined = false;
    if let Some(opts) = spec.refine {
        let (candidate, mse) = refine(&profile, trace, 0..n_train, opts.max_iter);
        if mse < train_mse {
            profile = candidate;
            train_mse = mse;
            refined = true;
        }
    }

    let eval_mse = (eval_end > n_train).then(|| window_mse(&profile, trace, n_train..eval_end));
    let days = n_train as f64 / per_day;
    let tdd = trace.insulin[..n_train].iter().sum::<f64>() * trace.cadence / days;
    let isf = if tdd > 0.0 { CORRECTION_RULE / tdd } else { f64::INFINITY };
    Ok(FitResult {
        profile,
        raw_coef: fit.coef,
        clamped,
        tdd,
        isf,
        train_mse,
        eval_mse,
        train_samples: n_train,
        eval_samples: eval_end - n_train,
        refined,
        diagnostics,
    })
}

/// Indices into [`MvpProfile::values`] that the refinement moves.
const REFINED: [usize; 7] = [5, 6, 7, 1, 2, 4, 8];

fn refine(start: &MvpProfile, trace: &FitTrace, window: Range<usize>, max_iter: usize) -> (MvpProfile, f64) {
    let base = start.values();
    let to_profile = |x: &[f64]| {
        let mut v = base;
        for (i, xi) in REFINED.iter().zip(x) {
            v[*i] = xi.exp();
        }
        MvpProfile::from_values(v)
    };
    let cost = |x: &[f64]| {
        let p = to_profile(x);
        let mse = window_mse(&p, trace, window.clone());
        if mse.is_finite() {
            mse
        } else {
            f64::INFINITY
        }
    };
    let x0: Vec<f64> = REFINED.iter().map(|i| base[*i].ln()).collect();
    let (x, f) = nelder_mead(cost, &x0, 0.05, max_iter);
    (to_profile(&x), f)
}

/// Downhill simplex with the standard reflection/expansion/contraction/shrink
/// coefficients. Returns the best vertex and its value.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += if x[i] != 0.0 { step * x[i].abs().max(1.0) } else { step };
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect() };
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() <= 1e-12 * simplex[0].1.abs().max(1e-12) {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let reflected = combine(&centroid, &worst, -1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = combine(&centroid, &worst, -2.0);
            let fe = f(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let contracted = if fr < simplex[n].1 {
                combine(&centroid, &worst, -0.5)
            } else {
                combine(&centroid, &worst, 0.5)
            };
            let fc = f(&contracted);
            if fc < fr.min(simplex[n].1) {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x = combine(&best, &v.0, 0.5);
                    let fx = f(&x);
                    *v = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}
