//! Data-generating process in which death ages are fixed before any award
//! is decided, so winning has no effect on lifetime, yet healthier
//! performers accumulate more nominations and wins. Replications run each
//! analysis method on fresh cohorts and collect p-values.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clogit::{ClogitData, Design, DesignConfig, NomageBasis};
use crate::domain::{
    AwardStratum, CandidateRecord, Category, Dataset, DateStamp, Nomination, Performer,
};
use crate::error::{Error, Result};
use crate::gestimation::{apply_exclusion_rule, g_estimate, GEstimate, SearchGrid};
use crate::numeric::{ks_uniform, mean, normal_quantile, quantile};
use crate::rpsaftm::Psi;
use crate::survival::{
    cox_analysis, discrete_hazard_lrt, person_years, tally_cells, CellLayout, Covariate, CoxSpec,
    DiscreteHazardModel, HistoryKey, HistoryRecord, PyCovariate, SurvivalSubject, TieMethod,
    TimeScale, TimeZero, WinnerStatus, WINNER,
};

/// Age decades in which nominations happen: 30–39, 60–69, 70–79.
pub const DECADES: [u32; 3] = [30, 60, 70];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// 60s selection favours previous winners among the less healthy.
    NominationAffectedByWins,
    /// 60s selection ignores winning history.
    NominationIndependentOfWins,
}

impl Scenario {
    /// Selection weight in the 60s pool for `group` (0-based) by previous
    /// winner status.
    pub fn weight_60s(self, group: usize, previous_winner: bool) -> f64 {
        match (self, group, previous_winner) {
            (_, 0, _) => 0.0,
            (Scenario::NominationAffectedByWins, 1, true) => 8.0,
            (Scenario::NominationAffectedByWins, 1, false) => 1.0,
            (Scenario::NominationAffectedByWins, _, true) => 9.0,
            (Scenario::NominationAffectedByWins, _, false) => 7.0,
            (Scenario::NominationIndependentOfWins, 1, _) => 8.0,
            (Scenario::NominationIndependentOfWins, _, _) => 9.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::NominationAffectedByWins => "table3",
            Scenario::NominationIndependentOfWins => "table8",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table3" | "affected" => Ok(Scenario::NominationAffectedByWins),
            "table8" | "independent" => Ok(Scenario::NominationIndependentOfWins),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Caps {
    pub max_nominations: u32,
    pub max_wins: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub birth_years: (i32, i32),
    pub births_per_year: u32,
    /// `(sick_age, death_age)` per health group.
    pub age_patterns: [(u32, u32); 3],
    pub award_years: (i32, i32),
    /// Nominees drawn per award from each decade in [`DECADES`].
    pub quota: [usize; 3],
    /// Linear-predictor terms for current 30s, 60s and 70s nominees.
    pub decade_coefs: [f64; 3],
    /// Per previous nomination and per previous win.
    pub history_coef: f64,
    pub caps: Option<Caps>,
    pub scenario: Scenario,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        SimConfig {
            birth_years: (1830, 1999),
            births_per_year: 5,
            age_patterns: [(60, 70), (70, 80), (80, 90)],
            award_years: (1927, 2004),
            quota: [2, 2, 1],
            decade_coefs: [0.5, 1.0, 2.0],
            history_coef: 0.5,
            caps: None,
            scenario,
            seed,
        }
    }

    pub fn with_caps(mut self, max_nominations: u32, max_wins: u32) -> Self {
        self.caps = Some(Caps {
            max_nominations,
            max_wins,
        });
        self
    }

    /// Generator for replication `rep`: the master seed with its own stream.
    pub fn rng(&self, rep: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimNomination {
    pub year: i32,
    /// Index into [`DECADES`].
    pub decade: usize,
    pub won: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimPerformer {
    pub id: usize,
    pub birth_year: i32,
    /// Health group, 0-based.
    pub group: usize,
    pub sick_age: u32,
    pub death_age: u32,
    pub nominations: Vec<SimNomination>,
}

impl SimPerformer {
    pub fn death_year(&self) -> i32 {
        self.birth_year + self.death_age as i32
    }

    fn healthy_in(&self, year: i32) -> bool {
        year < self.birth_year + self.sick_age as i32
    }

    pub fn wins(&self) -> usize {
        self.nominations.iter().filter(|n| n.won).count()
    }

    pub fn first_win(&self) -> Option<i32> {
        self.nominations.iter().find(|n| n.won).map(|n| n.year)
    }

    /// Nominations and wins per decade in award years before `year`.
    pub fn history_before(&self, year: i32) -> ([u8; 3], [u8; 3]) {
        let mut n = [0u8; 3];
        let mut a = [0u8; 3];
        for nom in self.nominations.iter().filter(|x| x.year < year) {
            n[nom.decade] += 1;
            a[nom.decade] += u8::from(nom.won);
        }
        (n, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimAward {
    pub year: i32,
    pub nominees: Vec<usize>,
    pub winner: usize,
    /// Winning probabilities of `nominees`, in order.
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShortStratum {
    pub year: i32,
    pub decade: usize,
    pub wanted: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimCohort {
    pub performers: Vec<SimPerformer>,
    pub awards: Vec<SimAward>,
    pub short_strata: Vec<ShortStratum>,
}

/// Performers with uniformly assigned age patterns.
pub fn generate_cohort<R: Rng>(config: &SimConfig, rng: &mut R) -> SimCohort {
    let mut performers = Vec::new();
    for year in config.birth_years.0..=config.birth_years.1 {
        for _ in 0..config.births_per_year {
            let group = rng.gen_range(0..3);
            let (sick_age, death_age) = config.age_patterns[group];
            performers.push(SimPerformer {
                id: performers.len(),
                birth_year: year,
                group,
                sick_age,
                death_age,
                nominations: Vec::new(),
            });
        }
    }
    SimCohort {
        performers,
        awards: Vec::new(),
        short_strata: Vec::new(),
    }
}

/// Softmax over linear predictors.
pub fn softmax(eta: &[f64]) -> Vec<f64> {
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn decade_of(age: i32) -> Option<usize> {
    DECADES
        .iter()
        .position(|&d| age >= d as i32 && age < d as i32 + 10)
}

/// Runs one award per year: quota draws per decade, then a softmax winner.
pub fn run_awards<R: Rng>(cohort: &mut SimCohort, config: &SimConfig, rng: &mut R) {
    for year in config.award_years.0..=config.award_years.1 {
        let mut nominees: Vec<usize> = Vec::new();
        for (decade, &wanted) in config.quota.iter().enumerate() {
            let mut pool: Vec<(usize, f64)> = cohort
                .performers
                .iter()
                .filter(|p| p.healthy_in(year) && decade_of(year - p.birth_year) == Some(decade))
                .filter(|p| match config.caps {
                    Some(c) => {
                        (p.nominations.len() as u32) < c.max_nominations
                            && (p.wins() as u32) < c.max_wins
                    }
                    None => true,
                })
                .map(|p| {
                    let w = if decade == 1 {
                        config.scenario.weight_60s(p.group, p.wins() > 0)
                    } else {
                        1.0
                    };
                    (p.id, w)
                })
                .filter(|&(_, w)| w > 0.0)
                .collect();
            if pool.len() < wanted {
                cohort.short_strata.push(ShortStratum {
                    year,
                    decade,
                    wanted,
                    available: pool.len(),
                });
            }
            for _ in 0..wanted.min(pool.len()) {
                let dist = WeightedIndex::new(pool.iter().map(|p| p.1))
                    .expect("pool weights are positive");
                let (id, _) = pool.swap_remove(dist.sample(rng));
                nominees.push(id);
            }
        }
        if nominees.is_empty() {
            continue;
        }
        let eta: Vec<f64> = nominees
            .iter()
            .map(|&id| {
                let p = &cohort.performers[id];
                let decade = decade_of(year - p.birth_year).expect("nominee is in a decade");
                let history = p.nominations.len() + p.wins();
                config.decade_coefs[decade] + config.history_coef * history as f64
            })
            .collect();
        let probabilities = softmax(&eta);
        let pick = WeightedIndex::new(&probabilities)
            .expect("softmax weights are positive")
            .sample(rng);
        for (k, &id) in nominees.iter().enumerate() {
            let p = &mut cohort.performers[id];
            let decade = decade_of(year - p.birth_year).expect("nominee is in a decade");
            p.nominations.push(SimNomination {
                year,
                decade,
                won: k == pick,
            });
        }
        cohort.awards.push(SimAward {
            year,
            winner: nominees[pick],
            nominees,
            probabilities,
        });
    }
}

/// Cohort and awards for replication `rep`.
pub fn simulate_cohort(config: &SimConfig, rep: u64) -> SimCohort {
    let mut rng = config.rng(rep);
    let mut cohort = generate_cohort(config, &mut rng);
    run_awards(&mut cohort, config, &mut rng);
    cohort
}

// ---------------------------------------------------------------------------
// Views of a cohort for each analysis
// ---------------------------------------------------------------------------

/// Nominated performers on the calendar-year axis; awards fall on 1 January.
pub fn survival_subjects(cohort: &SimCohort) -> Vec<SurvivalSubject> {
    cohort
        .performers
        .iter()
        .filter(|p| !p.nominations.is_empty())
        .map(|p| SurvivalSubject {
            id: p.id.to_string(),
            birth: p.birth_year as f64,
            exit: p.death_year() as f64,
            died: true,
            nominations: p.nominations.iter().map(|n| n.year as f64).collect(),
            wins: p
                .nominations
                .iter()
                .filter(|n| n.won)
                .map(|n| n.year as f64)
                .collect(),
            female: None,
        })
        .collect()
}

/// The nominated part of a cohort as an ordinary dataset: births, awards and
/// deaths on 1 January, deaths after `censor_date` unobserved.
pub fn cohort_dataset(cohort: &SimCohort, censor_date: DateStamp) -> Dataset {
    let jan1 = |y: i32| DateStamp::from_ymd(y, 1, 1).expect("year in range");
    let performers = cohort
        .performers
        .iter()
        .filter(|p| !p.nominations.is_empty())
        .map(|p| {
            let death = jan1(p.death_year());
            Performer {
                id: format!("p{}", p.id),
                name: format!("Performer {}", p.id),
                birth: jan1(p.birth_year),
                death: (death <= censor_date).then_some(death),
                censor_date,
            }
        })
        .collect();
    let nominations = cohort
        .awards
        .iter()
        .enumerate()
        .flat_map(|(i, award)| {
            award.nominees.iter().map(move |&id| Nomination {
                performer_id: format!("p{id}"),
                award_index: i as u32 + 1,
                award_date: jan1(award.year),
                category: Category::LeadActor,
                won: id == award.winner,
            })
        })
        .collect();
    Dataset {
        performers,
        nominations,
    }
}

pub const AGE60: &str = "age60";
pub const AGE70: &str = "age70";

/// Award strata with age-decade indicators as extra covariates and no
/// administrative censoring.
pub fn award_strata(cohort: &SimCohort) -> Result<Vec<AwardStratum>> {
    let far = DateStamp::from_year(3000.0);
    cohort
        .awards
        .iter()
        .enumerate()
        .map(|(i, award)| {
            let date = DateStamp::from_year(award.year as f64);
            let candidates = award
                .nominees
                .iter()
                .map(|&id| {
                    let p = &cohort.performers[id];
                    let age = award.year - p.birth_year;
                    let decade = decade_of(age).expect("nominee is in a decade");
                    let before = p.nominations.iter().filter(|n| n.year < award.year);
                    let death = DateStamp::from_year(p.death_year() as f64);
                    CandidateRecord {
                        award_index: i as u32 + 1,
                        performer_id: id.to_string(),
                        treated: id == award.winner,
                        nomage: age as f64,
                        numprenom: before.clone().count() as u32,
                        numprewin: before.filter(|n| n.won).count() as u32,
                        extra: vec![
                            (AGE60.into(), f64::from(u8::from(decade == 1))),
                            (AGE70.into(), f64::from(u8::from(decade == 2))),
                        ],
                        observed: death.years_since(date),
                        first_win: p.first_win().map(|y| DateStamp::from_year(y as f64)),
                        award_date: date,
                        censor_date: far,
                        death_observed: true,
                    }
                })
                .collect();
            AwardStratum::new(i as u32 + 1, candidates)
        })
        .collect()
}

/// Design matching the winning mechanism: decade indicators and the number
/// of previous nominations.
pub fn rpsaftm_design() -> DesignConfig {
    DesignConfig {
        nomage_basis: NomageBasis::Omit,
        include_numprenom: true,
        extra_covariates: vec![AGE60.into(), AGE70.into()],
    }
}

/// At-risk records for death at each age in the layout.
pub fn history_records(cohort: &SimCohort, config: &SimConfig) -> Vec<HistoryRecord> {
    let ages: BTreeSet<u32> = config.age_patterns[..2].iter().map(|p| p.1).collect();
    let mut out = Vec::new();
    for p in &cohort.performers {
        for &age in &ages {
            if p.death_age < age {
                continue;
            }
            let (nominations, wins) = p.history_before(p.birth_year + age as i32);
            out.push(HistoryRecord {
                key: HistoryKey {
                    death_age: age,
                    nominations,
                    wins,
                },
                died: p.death_age == age,
            });
        }
    }
    out
}

/// Cells reachable by a performer who can die at the given age: death at
/// 70 only after 30s nominations, death at 80 after 30s and 60s
/// nominations, at most `cap` nominations in total.
pub fn restricted_layout(cap: u8) -> CellLayout {
    let mut full = BTreeSet::new();
    for n30 in 0..=cap {
        for a30 in 0..=n30 {
            full.insert(HistoryKey {
                death_age: 70,
                nominations: [n30, 0, 0],
                wins: [a30, 0, 0],
            });
            for n60 in 0..=cap - n30 {
                for a60 in 0..=n60 {
                    full.insert(HistoryKey {
                        death_age: 80,
                        nominations: [n30, n60, 0],
                        wins: [a30, a60, 0],
                    });
                }
            }
        }
    }
    CellLayout { full }
}

// ---------------------------------------------------------------------------
// Methods and replication
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    CoxStaticBirthday,
    CoxDynamicBirthday,
    CoxDynamicNomination,
    PersonYears,
    RpsaftmGtest,
    DiscreteHazardLrt,
    /// Dynamic, nomination day, with nomination and win counts.
    CoxHistoryAdjusted,
}

impl Method {
    pub const TABLE: [Method; 5] = [
        Method::CoxStaticBirthday,
        Method::CoxDynamicBirthday,
        Method::CoxDynamicNomination,
        Method::PersonYears,
        Method::RpsaftmGtest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CoxStaticBirthday => "cox-static-birthday",
            Method::CoxDynamicBirthday => "cox-dynamic-birthday",
            Method::CoxDynamicNomination => "cox-dynamic-nomination",
            Method::PersonYears => "person-years",
            Method::RpsaftmGtest => "rpsaftm-gtest",
            Method::DiscreteHazardLrt => "discrete-hazard-lrt",
            Method::CoxHistoryAdjusted => "cox-history-adjusted",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Method::CoxStaticBirthday,
            Method::CoxDynamicBirthday,
            Method::CoxDynamicNomination,
            Method::PersonYears,
            Method::RpsaftmGtest,
            Method::DiscreteHazardLrt,
            Method::CoxHistoryAdjusted,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

impl Method {
    /// Winner status and time zero as labelled in comparison tables.
    pub fn labels(self) -> (&'static str, &'static str) {
        match self {
            Method::CoxStaticBirthday => ("static", "birthday"),
            Method::CoxDynamicBirthday => ("dynamic", "birthday"),
            _ => ("dynamic", "nomination-day"),
        }
    }

    /// The Cox specification behind a Cox method. Sex enters only where the
    /// data record it.
    pub fn cox_spec(self, with_sex: bool) -> Option<CoxSpec> {
        use Covariate::*;
        let sex = with_sex.then_some(Sex);
        let (status, time_zero, covariates, scale) = match self {
            Method::CoxStaticBirthday => (
                WinnerStatus::Static,
                TimeZero::Birthday,
                vec![],
                TimeScale::SinceTimeZero,
            ),
            Method::CoxDynamicBirthday => (
                WinnerStatus::Dynamic,
                TimeZero::Birthday,
                sex.into_iter().chain([YearOfBirth]).collect(),
                TimeScale::SinceTimeZero,
            ),
            Method::CoxDynamicNomination => (
                WinnerStatus::Dynamic,
                TimeZero::NominationDay,
                sex.into_iter().chain([YearOfBirth]).collect(),
                TimeScale::Age,
            ),
            Method::CoxHistoryAdjusted => (
                WinnerStatus::Dynamic,
                TimeZero::NominationDay,
                [Nominations, Wins]
                    .into_iter()
                    .chain(sex)
                    .chain([YearOfBirth])
                    .collect(),
                TimeScale::SinceTimeZero,
            ),
            _ => return None,
        };
        Some(
            CoxSpec::new(status, time_zero, covariates, TieMethod::Efron)
                .expect("dynamic specs are always valid")
                .with_time_scale(scale),
        )
    }

    pub fn py_covariates(with_sex: bool) -> Vec<PyCovariate> {
        let mut covs = vec![PyCovariate::Age, PyCovariate::CalendarYear];
        if with_sex {
            covs.push(PyCovariate::Sex);
        }
        covs
    }
}

/// p-value of one method on one cohort.
pub fn method_p_value(method: Method, cohort: &SimCohort, config: &SimConfig) -> Result<f64> {
    match method {
        Method::CoxStaticBirthday
        | Method::CoxDynamicBirthday
        | Method::CoxDynamicNomination
        | Method::CoxHistoryAdjusted => {
            let spec = method.cox_spec(false).expect("cox method");
            let fit = cox_analysis(&survival_subjects(cohort), &spec)?;
            Ok(fit.coefficient(WINNER).expect("winner fitted").p_value)
        }
        Method::PersonYears => Ok(person_years(
            &survival_subjects(cohort),
            TimeZero::NominationDay,
            &Method::py_covariates(false),
        )?
        .winner()
        .p_value),
        Method::RpsaftmGtest => {
            let (strata, _) = apply_exclusion_rule(&award_strata(cohort)?);
            let design = Design::prepare(&strata, &rpsaftm_design())?;
            Ok(ClogitData::new(&strata, Psi::ZERO, &design)?
                .score_test(0.0)?
                .p_value)
        }
        Method::DiscreteHazardLrt => {
            let cap = config
                .caps
                .map_or(2, |c| c.max_nominations.min(u8::MAX as u32) as u8);
            Ok(
                discrete_hazard_lrt(&history_records(cohort, config), &restricted_layout(cap))?
                    .p_value,
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    /// p-values of successful replications, in replication order.
    pub p_values: Vec<f64>,
    pub failures: usize,
    pub mean_p: f64,
    /// Counts over ten equal-width bins of `[0, 1]`.
    pub histogram: [usize; 10],
}

impl MethodSummary {
    pub fn ks_uniform(&self) -> (f64, f64) {
        ks_uniform(&self.p_values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub n_reps: usize,
    pub summaries: Vec<MethodSummary>,
}

impl Replication {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

pub fn histogram(p_values: &[f64]) -> [usize; 10] {
    let mut h = [0usize; 10];
    for &p in p_values {
        h[((p * 10.0) as usize).min(9)] += 1;
    }
    h
}

/// Runs `n_reps` independent cohorts and every method on each.
pub fn replicate(config: &SimConfig, n_reps: usize, methods: &[Method]) -> Result<Replication> {
    let results: Vec<Vec<Result<f64>>> = (0..n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let cohort = simulate_cohort(config, rep);
            methods
                .iter()
                .map(|&m| method_p_value(m, &cohort, config))
                .collect()
        })
        .collect();
    let mut summaries = Vec::with_capacity(methods.len());
    for (j, &method) in methods.iter().enumerate() {
        let mut p_values = Vec::with_capacity(n_reps);
        let mut failures = 0;
        for r in &results {
            match &r[j] {
                Ok(p) => p_values.push(*p),
                Err(e) => {
                    log::debug!("{method}: {e}");
                    failures += 1;
                }
            }
        }
        if n_reps > 0 && failures as f64 > 0.05 * n_reps as f64 {
            return Err(Error::Unreliable {
                method: method.to_string(),
                failed: failures,
                total: n_reps,
            });
        }
        if failures > 0 {
            log::warn!("{method}: {failures} of {n_reps} replications failed and were excluded");
        }
        summaries.push(MethodSummary {
            method,
            mean_p: mean(&p_values),
            histogram: histogram(&p_values),
            p_values,
            failures,
        });
    }
    Ok(Replication { n_reps, summaries })
}

// ---------------------------------------------------------------------------
// Mortality tables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MortalityCell {
    pub key: HistoryKey,
    pub deaths: u64,
    pub at_risk: u64,
    /// Pooled rate, total deaths over total at risk.
    pub rate: f64,
    /// Normal-approximation 95% interval of the pooled rate.
    pub ci: (f64, f64),
    /// 2.5% and 97.5% percentiles of the per-replication rates.
    pub percentile_range: (f64, f64),
    pub replications_present: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MortalityTables {
    /// Cells keyed by nomination and win history.
    pub full: Vec<MortalityCell>,
    /// Cells keyed by nomination history only.
    pub reduced: Vec<MortalityCell>,
    pub omitted: Vec<HistoryKey>,
}

impl MortalityTables {
    pub fn full_cell(&self, key: &HistoryKey) -> Option<&MortalityCell> {
        self.full.iter().find(|c| &c.key == key)
    }

    pub fn reduced_cell(&self, key: &HistoryKey) -> Option<&MortalityCell> {
        self.reduced.iter().find(|c| &c.key == key)
    }
}

/// Cell mortality rates over `n_reps` replications of the restricted design.
pub fn mortality_tables(config: &SimConfig, n_reps: usize) -> Result<MortalityTables> {
    let cap = match config.caps {
        Some(c) => c.max_nominations.min(u8::MAX as u32) as u8,
        None => {
            return Err(Error::InvalidArgument(
                "mortality tables need nomination caps".into(),
            ))
        }
    };
    let layout = restricted_layout(cap);
    let reduced_keys = layout.reduced();
    let per_rep: Vec<_> = (0..n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let cohort = simulate_cohort(config, rep);
            let records: Vec<HistoryRecord> = history_records(&cohort, config)
                .into_iter()
                .filter(|r| layout.full.contains(&r.key))
                .collect();
            (
                tally_cells(&records, &layout.full, |k| k),
                tally_cells(&records, &reduced_keys, HistoryKey::reduced),
            )
        })
        .collect();
    let mut omitted = Vec::new();
    let full: Vec<&DiscreteHazardModel> = per_rep.iter().map(|r| &r.0).collect();
    let reduced: Vec<&DiscreteHazardModel> = per_rep.iter().map(|r| &r.1).collect();
    let full = summarize_cells(&full, &layout.full, &mut omitted);
    let reduced = summarize_cells(&reduced, &reduced_keys, &mut omitted);
    Ok(MortalityTables {
        full,
        reduced,
        omitted,
    })
}

fn summarize_cells(
    models: &[&DiscreteHazardModel],
    keys: &BTreeSet<HistoryKey>,
    omitted: &mut Vec<HistoryKey>,
) -> Vec<MortalityCell> {
    let mut out = Vec::new();
    for key in keys {
        let mut deaths = 0;
        let mut at_risk = 0;
        let mut rates = Vec::new();
        for m in models {
            let c = m.cells[key];
            deaths += c.deaths;
            at_risk += c.at_risk;
            if c.at_risk > 0 {
                rates.push(c.rate());
            }
        }
        if at_risk == 0 {
            omitted.push(*key);
            continue;
        }
        let rate = deaths as f64 / at_risk as f64;
        let half = normal_quantile(0.975) * (rate * (1.0 - rate) / at_risk as f64).sqrt();
        rates.sort_by(|a, b| a.total_cmp(b));
        out.push(MortalityCell {
            key: *key,
            deaths,
            at_risk,
            rate,
            ci: (rate - half, rate + half),
            percentile_range: (quantile(&rates, 0.025), quantile(&rates, 0.975)),
            replications_present: rates.len(),
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Coverage of the null effect
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub covered: usize,
    pub evaluated: usize,
    pub failures: usize,
}

impl Coverage {
    pub fn rate(&self) -> f64 {
        self.covered as f64 / self.evaluated as f64
    }
}

/// g-estimate on replication `rep` of a null cohort.
pub fn null_g_estimate(
    config: &SimConfig,
    rep: u64,
    grid: &SearchGrid,
    level: f64,
) -> Result<GEstimate> {
    let cohort = simulate_cohort(config, rep);
    let (strata, _) = apply_exclusion_rule(&award_strata(&cohort)?);
    g_estimate(&strata, &rpsaftm_design(), grid, level)
}

/// Fraction of replications whose interval contains zero.
pub fn null_coverage(config: &SimConfig, n_reps: usize, grid: &SearchGrid, level: f64) -> Coverage {
    let outcomes: Vec<Option<bool>> = (0..n_reps as u64)
        .into_par_iter()
        .map(|rep| match null_g_estimate(config, rep, grid, level) {
            Ok(g) => Some(g.covers(0.0)),
            Err(Error::NoEstimate { .. }) => Some(false),
            Err(e) => {
                log::debug!("replication {rep}: {e}");
                None
            }
        })
        .collect();
    Coverage {
        covered: outcomes.iter().filter(|o| **o == Some(true)).count(),
        evaluated: outcomes.iter().filter(|o| o.is_some()).count(),
        failures: outcomes.iter().filter(|o| o.is_none()).count(),
    }
}

/// Per-decade nominee counts by health group and previous-winner status
/// in the 60s pool: `[group][previous_winner]`.
pub fn sixties_selection_tally(cohort: &SimCohort) -> [[usize; 2]; 3] {
    let mut t = [[0usize; 2]; 3];
    for p in &cohort.performers {
        for (k, n) in p.nominations.iter().enumerate() {
            if n.decade == 1 {
                let prev = p.nominations[..k].iter().any(|x| x.won);
                t[p.group][usize::from(prev)] += 1;
            }
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::chi2_sf;

    #[test]
    fn cohort_size_and_group_balance() {
        let config = SimConfig::new(Scenario::NominationAffectedByWins, 1);
        let mut pooled = [0usize; 3];
        for rep in 0..20 {
            let c = generate_cohort(&config, &mut config.rng(rep));
            assert_eq!(c.performers.len(), 850);
            let mut counts = [0usize; 3];
            c.performers.iter().for_each(|p| counts[p.group] += 1);
            let e = 850.0 / 3.0;
            let chi2: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
            assert!(chi2_sf(chi2, 2.0) > 1e-4);
            (0..3).for_each(|g| pooled[g] += counts[g]);
        }
        let e = 17000.0 / 3.0;
        let chi2: f64 = pooled.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        assert!(chi2_sf(chi2, 2.0) > 1e-3);

        let mut empty = config.clone();
        empty.births_per_year = 0;
        let c = simulate_cohort(&empty, 0);
        assert!(c.performers.is_empty() && c.awards.is_empty());
    }

    #[test]
    fn softmax_normalizes_and_is_shift_invariant() {
        let p = softmax(&[0.5, 0.5, 1.0, 1.0, 2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let q = softmax(&[10.5, 10.5, 11.0, 11.0, 12.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-15);
        }
        // 70s vs 30s nominee without history
        let r = softmax(&[0.5, 2.0]);
        assert!((r[1] / r[0] - 1.5f64.exp()).abs() < 1e-12);
        assert!((1.5f64.exp() - 4.48).abs() < 0.01);
    }

    #[test]
    fn award_probabilities_and_eligibility() {
        let config = SimConfig::new(Scenario::NominationAffectedByWins, 5);
        let c = simulate_cohort(&config, 0);
        assert_eq!(c.awards.len(), 78);
        for a in &c.awards {
            assert!((a.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.nominees.contains(&a.winner));
            for &id in &a.nominees {
                let p = &c.performers[id];
                assert!(a.year < p.birth_year + p.sick_age as i32);
                assert!(decade_of(a.year - p.birth_year).is_some());
            }
            assert_eq!(a.nominees.len(), 5);
        }
        // group 1 never appears in the 60s or 70s
        for p in c.performers.iter().filter(|p| p.group == 0) {
            assert!(p.nominations.iter().all(|n| n.decade == 0));
        }
    }

    #[test]
    fn group_two_eligibility_window() {
        let config = SimConfig::new(Scenario::NominationAffectedByWins, 0);
        let p = SimPerformer {
            id: 0,
            birth_year: 1900,
            group: 1,
            sick_age: 70,
            death_age: 80,
            nominations: vec![],
        };
        let years: Vec<i32> = (config.award_years.0..=config.award_years.1)
            .filter(|&y| p.healthy_in(y) && decade_of(y - p.birth_year) == Some(1))
            .collect();
        assert_eq!(years, (1960..=1969).collect::<Vec<_>>());
    }

    #[test]
    fn previous_winners_favoured_in_sixties_under_affected_scenario() {
        let mut affected = [[0usize; 2]; 3];
        let config = SimConfig::new(Scenario::NominationAffectedByWins, 9);
        for rep in 0..40 {
            let t = sixties_selection_tally(&simulate_cohort(&config, rep));
            for g in 0..3 {
                for w in 0..2 {
                    affected[g][w] += t[g][w];
                }
            }
        }
        assert_eq!(affected[0], [0, 0]);
        let frac = |g: usize| affected[g][1] as f64 / (affected[g][0] + affected[g][1]) as f64;
        assert!(frac(1) > 1.5 * frac(2), "{affected:?}");
    }

    #[test]
    fn deterministic_replay() {
        let config = SimConfig::new(Scenario::NominationAffectedByWins, 42);
        assert_eq!(simulate_cohort(&config, 3), simulate_cohort(&config, 3));
        assert_ne!(simulate_cohort(&config, 3), simulate_cohort(&config, 4));
        let a = replicate(
            &config,
            6,
            &[Method::RpsaftmGtest, Method::CoxStaticBirthday],
        )
        .unwrap();
        let b = replicate(
            &config,
            6,
            &[Method::RpsaftmGtest, Method::CoxStaticBirthday],
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn winners_never_change_death_ages() {
        let config = SimConfig::new(Scenario::NominationAffectedByWins, 17);
        let a = simulate_cohort(&config, 0);
        let mut reseeded = config.clone();
        reseeded.decade_coefs = [0.0; 3];
        reseeded.history_coef = 0.0;
        let b = simulate_cohort(&reseeded, 0);
        let ages = |c: &SimCohort| c.performers.iter().map(|p| p.death_age).collect::<Vec<_>>();
        assert_eq!(ages(&a), ages(&b));
    }

    #[test]
    fn caps_limit_history() {
        let config = SimConfig::new(Scenario::NominationAffectedByWins, 3).with_caps(2, 2);
        let c = simulate_cohort(&config, 0);
        assert!(c.performers.iter().all(|p| p.nominations.len() <= 2));
    }

    #[test]
    fn restricted_layout_has_twelve_degrees_of_freedom() {
        let layout = restricted_layout(2);
        let at = |age| layout.full.iter().filter(|k| k.death_age == age).count();
        assert_eq!((at(70), at(80)), (6, 15));
        assert_eq!(layout.reduced().len(), 9);
        assert_eq!(layout.degrees_of_freedom(), 12);
    }

    #[test]
    fn strata_match_cohort() {
        let config = SimConfig::new(Scenario::NominationAffectedByWins, 2);
        let c = simulate_cohort(&config, 0);
        let strata = award_strata(&c).unwrap();
        assert_eq!(strata.len(), c.awards.len());
        for (s, a) in strata.iter().zip(&c.awards) {
            let w = s.winner();
            assert_eq!(w.performer_id, a.winner.to_string());
            let p = &c.performers[a.winner];
            assert!((w.observed - (p.death_year() - a.year) as f64).abs() < 0.01);
        }
    }

    #[test]
    fn cohort_dataset_reproduces_strata() {
        let config = SimConfig::new(Scenario::NominationAffectedByWins, 4);
        let c = simulate_cohort(&config, 0);
        let far = DateStamp::from_ymd(3000, 1, 1).unwrap();
        let from_data = cohort_dataset(&c, far).strata().unwrap();
        let direct = award_strata(&c).unwrap();
        assert_eq!(from_data.len(), direct.len());
        for (a, b) in from_data.iter().zip(&direct) {
            for (x, y) in a.candidates.iter().zip(&b.candidates) {
                assert_eq!(x.performer_id, format!("p{}", y.performer_id));
                assert_eq!(x.treated, y.treated);
                assert_eq!(x.numprenom, y.numprenom);
                assert!(x.death_observed);
                assert!((x.observed - y.observed).abs() < 0.01);
                assert!((x.nomage - y.nomage).abs() < 0.01);
            }
        }

        let censored = cohort_dataset(&c, DateStamp::from_ymd(2007, 7, 25).unwrap());
        assert!(censored.performers.iter().any(|p| p.death.is_none()));
        assert!(censored.strata().is_ok());
    }
}
