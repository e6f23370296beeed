//! Classical comparison methods: Kaplan–Meier, Cox proportional hazards
//! with static or time-dependent winner status, person-years logistic
//! regression, and the discrete-time hazard likelihood-ratio test.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::numeric::{
    chi2_sf, logistic_fit, maximize, name_divergence, Coefficient, NewtonOptions, Objective,
    Standardizer,
};

// ---------------------------------------------------------------------------
// Kaplan–Meier
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmPoint {
    pub time: f64,
    pub survival: f64,
    pub at_risk: usize,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmCurve {
    pub points: Vec<KmPoint>,
    /// Smallest time with survival ≤ 0.5, up to rounding in the product.
    pub median: Option<f64>,
}

impl KmCurve {
    /// Survival just after `t`.
    pub fn survival_at(&self, t: f64) -> f64 {
        self.points
            .iter()
            .take_while(|p| p.time <= t)
            .last()
            .map_or(1.0, |p| p.survival)
    }
}

/// Product-limit estimator over `(time, died)` pairs. Deaths tied with
/// censorings are processed first.
pub fn km(times: &[(f64, bool)]) -> Result<KmCurve> {
    if times.is_empty() {
        return Err(Error::EmptyInput(
            "Kaplan–Meier needs at least one time".into(),
        ));
    }
    if let Some(&(t, _)) = times.iter().find(|(t, _)| !(*t >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "negative survival time {t}"
        )));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut at_risk = sorted.len();
    let mut survival = 1.0;
    let mut points = Vec::new();
    let mut median = None;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let mut events = 0;
        let mut leaving = 0;
        while i < sorted.len() && sorted[i].0 == t {
            events += usize::from(sorted[i].1);
            leaving += 1;
            i += 1;
        }
        if events > 0 {
            survival *= 1.0 - events as f64 / at_risk as f64;
            if median.is_none() && survival <= 0.5 + 1e-12 {
                median = Some(t);
            }
        }
        points.push(KmPoint {
            time: t,
            survival,
            at_risk,
            events,
        });
        at_risk -= leaving;
    }
    Ok(KmCurve { points, median })
}

// ---------------------------------------------------------------------------
// Subjects and Cox models
// ---------------------------------------------------------------------------

/// One nominated performer on the calendar-year time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalSubject {
    pub id: String,
    pub birth: f64,
    pub exit: f64,
    pub died: bool,
    /// Nomination dates, ascending.
    pub nominations: Vec<f64>,
    /// Win dates, ascending.
    pub wins: Vec<f64>,
    pub female: Option<bool>,
}

impl SurvivalSubject {
    pub fn first_win(&self) -> Option<f64> {
        self.wins.first().copied()
    }

    pub fn first_nomination(&self) -> Option<f64> {
        self.nominations.first().copied()
    }
}

/// Whether sex is recorded for everyone and takes both values.
pub fn sex_varies(subjects: &[SurvivalSubject]) -> bool {
    subjects.iter().all(|s| s.female.is_some())
        && subjects.iter().any(|s| s.female == Some(true))
        && subjects.iter().any(|s| s.female == Some(false))
}

/// Nominated performers of a dataset as survival subjects. Sex is read off
/// the nomination category.
pub fn subjects_from_dataset(dataset: &Dataset) -> Vec<SurvivalSubject> {
    let mut noms: BTreeMap<&str, Vec<&crate::domain::Nomination>> = BTreeMap::new();
    for n in &dataset.nominations {
        noms.entry(n.performer_id.as_str()).or_default().push(n);
    }
    dataset
        .performers
        .iter()
        .filter_map(|p| {
            let list = noms.get(p.id.as_str())?;
            let (exit, died) = p.exit();
            let mut nominations: Vec<f64> = list.iter().map(|n| n.award_date.as_year()).collect();
            nominations.sort_by(|a, b| a.total_cmp(b));
            let mut wins: Vec<f64> = list
                .iter()
                .filter(|n| n.won)
                .map(|n| n.award_date.as_year())
                .collect();
            wins.sort_by(|a, b| a.total_cmp(b));
            Some(SurvivalSubject {
                id: p.id.clone(),
                birth: p.birth.as_year(),
                exit: exit.as_year(),
                died,
                nominations,
                wins,
                female: Some(list[0].category.is_female()),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WinnerStatus {
    /// Ever-winner, fixed over the whole follow-up.
    Static,
    /// Winner only from the first win onwards.
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeZero {
    Birthday,
    NominationDay,
}

/// Clock used for risk sets. With `Age`, subjects still enter at time zero
/// but are compared with others of the same age.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeScale {
    #[default]
    SinceTimeZero,
    Age,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieMethod {
    Efron,
    Breslow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Covariate {
    YearOfBirth,
    Sex,
    /// Nominations up to the current time.
    Nominations,
    /// Wins up to the current time.
    Wins,
}

impl Covariate {
    pub fn name(self) -> &'static str {
        match self {
            Covariate::YearOfBirth => "year_of_birth",
            Covariate::Sex => "female",
            Covariate::Nominations => "nominations",
            Covariate::Wins => "wins",
        }
    }
}

pub const WINNER: &str = "winner";

#[derive(Debug, Clone, PartialEq)]
pub struct CoxSpec {
    pub status: WinnerStatus,
    pub time_zero: TimeZero,
    pub covariates: Vec<Covariate>,
    pub tie_method: TieMethod,
    pub time_scale: TimeScale,
}

impl CoxSpec {
    pub fn new(
        status: WinnerStatus,
        time_zero: TimeZero,
        covariates: Vec<Covariate>,
        tie_method: TieMethod,
    ) -> Result<Self> {
        if status == WinnerStatus::Static && time_zero == TimeZero::NominationDay {
            return Err(Error::InvalidArgument(
                "static winner status with nomination-day time zero is not supported".into(),
            ));
        }
        Ok(CoxSpec {
            status,
            time_zero,
            covariates,
            tie_method,
            time_scale: TimeScale::SinceTimeZero,
        })
    }

    pub fn with_time_scale(mut self, time_scale: TimeScale) -> Self {
        self.time_scale = time_scale;
        self
    }

    pub fn names(&self) -> Vec<String> {
        std::iter::once(WINNER.to_string())
            .chain(self.covariates.iter().map(|c| c.name().to_string()))
            .collect()
    }
}

/// Counting-process row: at risk on `(start, stop]`, event at `stop`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub start: f64,
    pub stop: f64,
    pub event: bool,
    pub x: Vec<f64>,
}

fn count_upto(dates: &[f64], t: f64) -> f64 {
    dates.iter().filter(|&&d| d <= t).count() as f64
}

/// Splits each subject's follow-up at the dates where a covariate changes.
pub fn cox_episodes(subjects: &[SurvivalSubject], spec: &CoxSpec) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    for s in subjects {
        let origin = match spec.time_zero {
            TimeZero::Birthday => s.birth,
            TimeZero::NominationDay => match s.first_nomination() {
                Some(t) => t,
                None => continue,
            },
        };
        if s.exit <= origin {
            continue;
        }
        let clock = match spec.time_scale {
            TimeScale::SinceTimeZero => origin,
            TimeScale::Age => s.birth,
        };
        let mut cuts: Vec<f64> = Vec::new();
        if spec.status == WinnerStatus::Dynamic {
            cuts.extend(s.first_win());
        }
        for c in &spec.covariates {
            match c {
                Covariate::Nominations => cuts.extend(&s.nominations),
                Covariate::Wins => cuts.extend(&s.wins),
                _ => {}
            }
        }
        cuts.retain(|&t| t > origin && t < s.exit);
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.dedup();
        let mut bounds = vec![origin];
        bounds.extend(cuts);
        bounds.push(s.exit);
        for w in bounds.windows(2) {
            let (a, b) = (w[0], w[1]);
            let winner = match spec.status {
                WinnerStatus::Static => !s.wins.is_empty(),
                WinnerStatus::Dynamic => s.first_win().is_some_and(|f| f <= a),
            };
            let mut x = vec![f64::from(u8::from(winner))];
            for c in &spec.covariates {
                x.push(match c {
                    Covariate::YearOfBirth => s.birth,
                    Covariate::Sex => match s.female {
                        Some(f) => f64::from(u8::from(f)),
                        None => {
                            return Err(Error::InvalidArgument(format!(
                                "subject `{}` has no sex recorded",
                                s.id
                            )))
                        }
                    },
                    Covariate::Nominations => count_upto(&s.nominations, a),
                    Covariate::Wins => count_upto(&s.wins, a),
                });
            }
            out.push(Episode {
                start: a - clock,
                stop: b - clock,
                event: s.died && b == s.exit,
                x,
            });
        }
    }
    Ok(out)
}

/// Cox partial likelihood over counting-process episodes.
#[derive(Debug, Clone)]
pub struct CoxData {
    episodes: Vec<Episode>,
    /// Distinct event times, ascending, with the indices of the events there.
    event_times: Vec<(f64, Vec<usize>)>,
    tie_method: TieMethod,
}

impl CoxData {
    pub fn new(episodes: Vec<Episode>, tie_method: TieMethod) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::EmptyInput("no episodes at risk".into()));
        }
        let mut by_time: BTreeMap<u64, (f64, Vec<usize>)> = BTreeMap::new();
        for (i, e) in episodes.iter().enumerate() {
            if e.event {
                by_time
                    .entry(e.stop.to_bits())
                    .or_insert_with(|| (e.stop, Vec::new()))
                    .1
                    .push(i);
            }
        }
        let mut event_times: Vec<(f64, Vec<usize>)> = by_time.into_values().collect();
        event_times.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(CoxData {
            episodes,
            event_times,
            tie_method,
        })
    }

    pub fn n_events(&self) -> usize {
        self.event_times.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn width(&self) -> usize {
        self.episodes[0].x.len()
    }

    /// Log partial likelihood at `beta` (original covariate scale).
    pub fn loglik(&self, beta: &[f64]) -> f64 {
        let rows: Vec<&[f64]> = self.episodes.iter().map(|e| e.x.as_slice()).collect();
        partial_likelihood(self, &rows, &DVector::from_row_slice(beta), false).0
    }
}

/// Returns `(loglik, score, information)`; the derivatives are skipped
/// when `loglik_only`.
fn partial_likelihood(
    data: &CoxData,
    rows: &[&[f64]],
    beta: &DVector<f64>,
    loglik_only: bool,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let k = beta.len();
    let eta: Vec<f64> = rows
        .iter()
        .map(|x| x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum())
        .collect();
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();

    let mut ll = 0.0;
    let mut g = DVector::zeros(k);
    let mut h = DMatrix::zeros(k, k);
    let mut s1 = vec![0.0; k];
    let mut s2 = vec![0.0; k * k];
    let mut d1 = vec![0.0; k];
    let mut d2 = vec![0.0; k * k];
    for (t, deaths) in &data.event_times {
        let mut s0 = 0.0;
        s1.iter_mut().for_each(|v| *v = 0.0);
        s2.iter_mut().for_each(|v| *v = 0.0);
        for (i, e) in data.episodes.iter().enumerate() {
            if e.start < *t && *t <= e.stop {
                s0 += w[i];
                if !loglik_only {
                    let x = rows[i];
                    for a in 0..k {
                        s1[a] += w[i] * x[a];
                        for b in 0..=a {
                            s2[a * k + b] += w[i] * x[a] * x[b];
                        }
                    }
                }
            }
        }
        let d = deaths.len();
        let mut d0 = 0.0;
        d1.iter_mut().for_each(|v| *v = 0.0);
        d2.iter_mut().for_each(|v| *v = 0.0);
        for &i in deaths {
            ll += eta[i] - shift;
            d0 += w[i];
            if !loglik_only {
                let x = rows[i];
                for a in 0..k {
                    g[a] += x[a];
                    d1[a] += w[i] * x[a];
                    for b in 0..=a {
                        d2[a * k + b] += w[i] * x[a] * x[b];
                    }
                }
            }
        }
        for l in 0..d {
            let f = match data.tie_method {
                TieMethod::Efron => l as f64 / d as f64,
                TieMethod::Breslow => 0.0,
            };
            let den = s0 - f * d0;
            ll -= den.ln();
            if loglik_only {
                continue;
            }
            for a in 0..k {
                let ma = (s1[a] - f * d1[a]) / den;
                g[a] -= ma;
                for b in 0..=a {
                    let mb = (s1[b] - f * d1[b]) / den;
                    h[(a, b)] += (s2[a * k + b] - f * d2[a * k + b]) / den - ma * mb;
                }
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
    (ll, g, h)
}

struct CoxObjective<'a> {
    data: &'a CoxData,
    rows: Vec<&'a [f64]>,
}

impl Objective for CoxObjective<'_> {
    fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    fn evaluate(&self, beta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        partial_likelihood(self.data, &self.rows, beta, false)
    }
}

#[derive(Debug, Clone)]
pub struct CoxFit {
    pub coefficients: Vec<Coefficient>,
    pub loglik: f64,
    pub iterations: usize,
    pub n_events: usize,
}

impl CoxFit {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    /// `1 - HR` for the winner covariate with its Wald interval.
    pub fn mortality_reduction(&self, level: f64) -> MortalityReduction {
        MortalityReduction::from_coefficient(
            self.coefficient(WINNER)
                .expect("winner covariate is always fitted"),
            level,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MortalityReduction {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub p_value: f64,
}

impl MortalityReduction {
    pub fn from_coefficient(c: &Coefficient, level: f64) -> Self {
        let (lo, hi) = c.wald_ci(level);
        MortalityReduction {
            estimate: 1.0 - c.coef.exp(),
            lower: 1.0 - hi.exp(),
            upper: 1.0 - lo.exp(),
            p_value: c.p_value,
        }
    }
}

/// Fits a Cox model by Newton iteration on the partial likelihood.
/// Covariates that never vary are held at zero and reported with `HR = 1`.
pub fn cox_fit(data: &CoxData, names: &[String]) -> Result<CoxFit> {
    let k = data.width();
    let raw: Vec<Vec<f64>> = data.episodes.iter().map(|e| e.x.clone()).collect();
    let scaler = Standardizer::fit(&raw, k);
    let varying: Vec<usize> = (0..k)
        .filter(|&j| raw.iter().any(|r| r[j] != raw[0][j]))
        .collect();
    let reduced: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| {
            varying
                .iter()
                .map(|&j| (r[j] - scaler.mean[j]) / scaler.scale[j])
                .collect()
        })
        .collect();
    let objective = CoxObjective {
        data,
        rows: reduced.iter().map(Vec::as_slice).collect(),
    };
    let opt = maximize(
        &objective,
        DVector::zeros(varying.len()),
        NewtonOptions::default(),
    )
    .map_err(|e| {
        let varying_names: Vec<String> = varying.iter().map(|&j| names[j].clone()).collect();
        name_divergence(e, &varying_names)
    })?;
    let cov = if varying.is_empty() {
        DMatrix::zeros(0, 0)
    } else {
        opt.covariance()?
    };
    let mut coefficients: Vec<Coefficient> = names
        .iter()
        .map(|n| Coefficient {
            name: n.clone(),
            coef: 0.0,
            se: f64::INFINITY,
            z: 0.0,
            p_value: 1.0,
        })
        .collect();
    for (pos, &j) in varying.iter().enumerate() {
        let s = scaler.scale[j];
        coefficients[j] = Coefficient::new(
            names[j].clone(),
            opt.beta[pos] / s,
            cov[(pos, pos)].sqrt() / s,
        );
    }
    Ok(CoxFit {
        coefficients,
        loglik: opt.loglik,
        iterations: opt.iterations,
        n_events: data.n_events(),
    })
}

/// Builds episodes for `spec` and fits the model.
pub fn cox_analysis(subjects: &[SurvivalSubject], spec: &CoxSpec) -> Result<CoxFit> {
    let episodes = cox_episodes(subjects, spec)?;
    let data = CoxData::new(episodes, spec.tie_method)?;
    cox_fit(&data, &spec.names())
}

// ---------------------------------------------------------------------------
// Person-years
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PyCovariate {
    Age,
    CalendarYear,
    Sex,
}

impl PyCovariate {
    pub fn name(self) -> &'static str {
        match self {
            PyCovariate::Age => "age",
            PyCovariate::CalendarYear => "calendar_year",
            PyCovariate::Sex => "female",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonYear {
    pub subject: usize,
    pub start: f64,
    pub died: bool,
    pub winner: bool,
    pub age: f64,
}

/// One record per whole year of follow-up from time zero; the last,
/// possibly partial, year carries the death indicator.
pub fn expand_person_years(subjects: &[SurvivalSubject], time_zero: TimeZero) -> Vec<PersonYear> {
    let mut out = Vec::new();
    for (idx, s) in subjects.iter().enumerate() {
        let origin = match time_zero {
            TimeZero::Birthday => s.birth,
            TimeZero::NominationDay => match s.first_nomination() {
                Some(t) => t,
                None => continue,
            },
        };
        let mut k = 0.0;
        while origin + k < s.exit {
            let start = origin + k;
            let end = (start + 1.0).min(s.exit);
            let last = end >= s.exit;
            out.push(PersonYear {
                subject: idx,
                start,
                died: last && s.died,
                winner: s.first_win().is_some_and(|f| f <= start + 1e-9),
                age: start - s.birth,
            });
            k += 1.0;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct PersonYearsFit {
    pub coefficients: Vec<Coefficient>,
    pub records: usize,
    pub deaths: usize,
}

impl PersonYearsFit {
    pub fn winner(&self) -> &Coefficient {
        self.coefficients
            .iter()
            .find(|c| c.name == WINNER)
            .expect("winner column present")
    }

    pub fn mortality_reduction(&self, level: f64) -> MortalityReduction {
        MortalityReduction::from_coefficient(self.winner(), level)
    }
}

/// Logistic regression of yearly death on time-updated winner status and
/// the requested covariates.
pub fn person_years(
    subjects: &[SurvivalSubject],
    time_zero: TimeZero,
    covariates: &[PyCovariate],
) -> Result<PersonYearsFit> {
    let records = expand_person_years(subjects, time_zero);
    if records.is_empty() {
        return Err(Error::EmptyInput("person-year expansion is empty".into()));
    }
    let mut names = vec!["(intercept)".to_string(), WINNER.to_string()];
    names.extend(covariates.iter().map(|c| c.name().to_string()));
    let mut x = Vec::with_capacity(records.len());
    let mut y = Vec::with_capacity(records.len());
    for r in &records {
        let mut row = vec![1.0, f64::from(u8::from(r.winner))];
        for c in covariates {
            row.push(match c {
                PyCovariate::Age => r.age,
                PyCovariate::CalendarYear => r.start,
                PyCovariate::Sex => match subjects[r.subject].female {
                    Some(f) => f64::from(u8::from(f)),
                    None => {
                        return Err(Error::InvalidArgument(format!(
                            "subject `{}` has no sex recorded",
                            subjects[r.subject].id
                        )))
                    }
                },
            });
        }
        x.push(row);
        y.push(r.died);
    }
    let fit = logistic_fit(&names, &x, &y)?;
    Ok(PersonYearsFit {
        coefficients: fit.coefficients,
        records: records.len(),
        deaths: y.iter().filter(|&&d| d).count(),
    })
}

// ---------------------------------------------------------------------------
// Discrete-time hazard model
// ---------------------------------------------------------------------------

/// Nomination and win counts per age decade (30s, 60s, 70s) accumulated
/// before the year of possible death.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HistoryKey {
    pub death_age: u32,
    pub nominations: [u8; 3],
    pub wins: [u8; 3],
}

impl HistoryKey {
    /// Key of the nomination-only model.
    pub fn reduced(self) -> HistoryKey {
        HistoryKey {
            wins: [0; 3],
            ..self
        }
    }
}

/// One subject at risk of dying at `key.death_age`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistoryRecord {
    pub key: HistoryKey,
    pub died: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub deaths: u64,
    pub at_risk: u64,
}

impl Cell {
    pub fn rate(&self) -> f64 {
        if self.at_risk == 0 {
            0.0
        } else {
            self.deaths as f64 / self.at_risk as f64
        }
    }

    /// Binomial log-likelihood at the cell MLE, with `0·log 0 = 0`.
    pub fn loglik(&self) -> f64 {
        let h = self.rate();
        let d = self.deaths as f64;
        let s = (self.at_risk - self.deaths) as f64;
        let a = if d > 0.0 { d * h.ln() } else { 0.0 };
        let b = if s > 0.0 { s * (1.0 - h).ln() } else { 0.0 };
        a + b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteHazardModel {
    pub cells: BTreeMap<HistoryKey, Cell>,
    pub loglik: f64,
}

/// The cells of the full (nomination and win history) model. The reduced
/// model's cells are the projections onto nomination history.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLayout {
    pub full: BTreeSet<HistoryKey>,
}

impl CellLayout {
    pub fn reduced(&self) -> BTreeSet<HistoryKey> {
        self.full.iter().map(|k| k.reduced()).collect()
    }

    pub fn degrees_of_freedom(&self) -> i64 {
        self.full.len() as i64 - self.reduced().len() as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HazardLrt {
    pub chi2: f64,
    pub df: u32,
    pub p_value: f64,
    pub full: DiscreteHazardModel,
    pub reduced: DiscreteHazardModel,
}

pub fn tally_cells(
    records: &[HistoryRecord],
    keys: &BTreeSet<HistoryKey>,
    project: impl Fn(HistoryKey) -> HistoryKey,
) -> DiscreteHazardModel {
    let mut cells: BTreeMap<HistoryKey, Cell> = keys
        .iter()
        .map(|&k| {
            (
                k,
                Cell {
                    deaths: 0,
                    at_risk: 0,
                },
            )
        })
        .collect();
    for r in records {
        if let Some(cell) = cells.get_mut(&project(r.key)) {
            cell.at_risk += 1;
            cell.deaths += u64::from(r.died);
        }
    }
    let loglik = cells.values().map(Cell::loglik).sum();
    DiscreteHazardModel { cells, loglik }
}

/// Likelihood-ratio test of win history given nomination history.
/// Subjects whose full key is outside the layout have structurally zero
/// risk and are left out of both models.
pub fn discrete_hazard_lrt(records: &[HistoryRecord], layout: &CellLayout) -> Result<HazardLrt> {
    let df = layout.degrees_of_freedom();
    if df <= 0 {
        return Err(Error::DegenerateModel(format!(
            "{} full cells against {} reduced cells",
            layout.full.len(),
            layout.reduced().len()
        )));
    }
    let inside: Vec<HistoryRecord> = records
        .iter()
        .copied()
        .filter(|r| layout.full.contains(&r.key))
        .collect();
    let full = tally_cells(&inside, &layout.full, |k| k);
    let reduced = tally_cells(&inside, &layout.reduced(), HistoryKey::reduced);
    let chi2 = (2.0 * (full.loglik - reduced.loglik)).max(0.0);
    Ok(HazardLrt {
        chi2,
        df: df as u32,
        p_value: chi2_sf(chi2, df as f64),
        full,
        reduced,
    })
}
