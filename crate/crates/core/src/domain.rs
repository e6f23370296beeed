//! Performers, nominations and the per-award candidate strata that every
//! analysis consumes. Calendar arithmetic is done in whole days; anything
//! reported in years is `days / 365.25`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Days since 1970-01-01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DateStamp(pub i64);

const UNIX_EPOCH_CE_DAYS: i64 = 719_163;

impl DateStamp {
    pub fn from_ymd(year: i32, month: u32, day: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(year, month, day).map(Self::from_naive)
    }

    pub fn from_naive(date: NaiveDate) -> Self {
        DateStamp(date.num_days_from_ce() as i64 - UNIX_EPOCH_CE_DAYS)
    }

    pub fn to_naive(self) -> NaiveDate {
        NaiveDate::from_num_days_from_ce_opt((self.0 + UNIX_EPOCH_CE_DAYS) as i32)
            .expect("date stamp within chrono range")
    }

    /// Date stamp for a fractional calendar year on the 365.25-day grid,
    /// used by the year-granular simulation.
    pub fn from_year(year: f64) -> Self {
        DateStamp(((year - 1970.0) * DAYS_PER_YEAR).round() as i64)
    }

    pub fn days_since(self, earlier: DateStamp) -> i64 {
        self.0 - earlier.0
    }

    pub fn years_since(self, earlier: DateStamp) -> f64 {
        days_to_years(self.days_since(earlier))
    }

    /// Calendar time in fractional years (1970.0 at the epoch).
    pub fn as_year(self) -> f64 {
        1970.0 + days_to_years(self.0)
    }
}

impl fmt::Display for DateStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_naive().format("%Y-%m-%d"))
    }
}

impl FromStr for DateStamp {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
            .map(Self::from_naive)
            .map_err(|e| format!("invalid ISO-8601 date `{s}`: {e}"))
    }
}

pub fn days_to_years(days: i64) -> f64 {
    days as f64 / DAYS_PER_YEAR
}

#[derive(Debug, Clone, PartialEq)]
pub struct Performer {
    pub id: String,
    pub name: String,
    pub birth: DateStamp,
    pub death: Option<DateStamp>,
    pub censor_date: DateStamp,
}

impl Performer {
    /// Date the performer leaves observation and whether that exit is a death.
    pub fn exit(&self) -> (DateStamp, bool) {
        match self.death {
            Some(d) if d <= self.censor_date => (d, true),
            _ => (self.censor_date, false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    LeadActor,
    LeadActress,
    SupportingActor,
    SupportingActress,
}

impl Category {
    pub fn is_female(self) -> bool {
        matches!(self, Category::LeadActress | Category::SupportingActress)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::LeadActor => "lead-actor",
            Category::LeadActress => "lead-actress",
            Category::SupportingActor => "supporting-actor",
            Category::SupportingActress => "supporting-actress",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lead-actor" => Ok(Category::LeadActor),
            "lead-actress" => Ok(Category::LeadActress),
            "supporting-actor" => Ok(Category::SupportingActor),
            "supporting-actress" => Ok(Category::SupportingActress),
            other => Err(format!("unknown category `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nomination {
    pub performer_id: String,
    pub award_index: u32,
    pub award_date: DateStamp,
    pub category: Category,
    pub won: bool,
}

/// Performers plus their nominations, as ingested.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub performers: Vec<Performer>,
    pub nominations: Vec<Nomination>,
}

impl Dataset {
    pub fn performer_index(&self) -> HashMap<&str, &Performer> {
        self.performers.iter().map(|p| (p.id.as_str(), p)).collect()
    }

    pub fn strata(&self) -> Result<Vec<AwardStratum>> {
        build_candidate_records(&self.performers, &self.nominations)
    }
}

/// One nominee of one award: treatment indicator, covariates and residual
/// lifetime measured from the award date.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub award_index: u32,
    pub performer_id: String,
    /// Won this award.
    pub treated: bool,
    /// Age at the award date in years.
    pub nomage: f64,
    /// Nominations strictly before this award date (all categories).
    pub numprenom: u32,
    /// Wins strictly before this award date.
    pub numprewin: u32,
    /// Additional named covariates (simulation age-group indicators, etc).
    pub extra: Vec<(String, f64)>,
    /// Observed, possibly censored, residual lifetime in years after the award.
    pub observed: f64,
    pub first_win: Option<DateStamp>,
    pub award_date: DateStamp,
    pub censor_date: DateStamp,
    pub death_observed: bool,
}

impl CandidateRecord {
    pub fn covariate(&self, name: &str) -> Option<f64> {
        match name {
            "nomage" => Some(self.nomage),
            "numprenom" => Some(self.numprenom as f64),
            "numprewin" => Some(self.numprewin as f64),
            _ => self.extra.iter().find(|(n, _)| n == name).map(|(_, v)| *v),
        }
    }

    /// First win strictly before this award (set B of the latent-time map).
    pub fn previously_won(&self) -> bool {
        matches!(self.first_win, Some(f) if f < self.award_date)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AwardStratum {
    pub award_index: u32,
    pub candidates: Vec<CandidateRecord>,
}

impl AwardStratum {
    /// Builds a stratum, checking the single-winner invariant.
    pub fn new(award_index: u32, candidates: Vec<CandidateRecord>) -> Result<Self> {
        let winners = candidates.iter().filter(|c| c.treated).count();
        if winners != 1 {
            return Err(Error::MalformedStratum {
                award_index,
                winners,
            });
        }
        Ok(AwardStratum {
            award_index,
            candidates,
        })
    }

    pub fn n(&self) -> usize {
        self.candidates.len()
    }

    pub fn winner(&self) -> &CandidateRecord {
        self.candidates
            .iter()
            .find(|c| c.treated)
            .expect("stratum has exactly one winner")
    }

    /// A size-one stratum has a constant conditional likelihood.
    pub fn is_informative(&self) -> bool {
        self.candidates.len() >= 2
    }
}

/// Turns raw nominations into award strata with computed residual lifetimes,
/// first-win dates and nomination history.
pub fn build_candidate_records(
    performers: &[Performer],
    nominations: &[Nomination],
) -> Result<Vec<AwardStratum>> {
    let by_id: HashMap<&str, &Performer> = performers.iter().map(|p| (p.id.as_str(), p)).collect();

    let mut seen = HashSet::new();
    let mut history: HashMap<&str, Vec<&Nomination>> = HashMap::new();
    for nom in nominations {
        if !by_id.contains_key(nom.performer_id.as_str()) {
            return Err(Error::UnknownPerformer(nom.performer_id.clone()));
        }
        if !seen.insert((nom.performer_id.as_str(), nom.award_index)) {
            return Err(Error::DuplicateNomination {
                performer_id: nom.performer_id.clone(),
                award_index: nom.award_index,
            });
        }
        history
            .entry(nom.performer_id.as_str())
            .or_default()
            .push(nom);
    }

    let first_win: HashMap<&str, DateStamp> = history
        .iter()
        .filter_map(|(id, noms)| {
            noms.iter()
                .filter(|n| n.won)
                .map(|n| n.award_date)
                .min()
                .map(|d| (*id, d))
        })
        .collect();

    let mut grouped: BTreeMap<u32, Vec<CandidateRecord>> = BTreeMap::new();
    for nom in nominations {
        let performer = by_id[nom.performer_id.as_str()];
        let d = nom.award_date;
        if let Some(death) = performer.death {
            if death < d {
                return Err(Error::DiedBeforeAward {
                    performer_id: nom.performer_id.clone(),
                    award_index: nom.award_index,
                });
            }
        }
        let own = &history[nom.performer_id.as_str()];
        let numprenom = own.iter().filter(|n| n.award_date < d).count() as u32;
        let numprewin = own.iter().filter(|n| n.won && n.award_date < d).count() as u32;
        let (exit, death_observed) = performer.exit();
        if exit < d {
            return Err(Error::InconsistentRecord(format!(
                "performer `{}` leaves observation before award {}",
                performer.id, nom.award_index
            )));
        }
        grouped
            .entry(nom.award_index)
            .or_default()
            .push(CandidateRecord {
                award_index: nom.award_index,
                performer_id: nom.performer_id.clone(),
                treated: nom.won,
                nomage: d.years_since(performer.birth),
                numprenom,
                numprewin,
                extra: Vec::new(),
                observed: exit.years_since(d),
                first_win: first_win.get(nom.performer_id.as_str()).copied(),
                award_date: d,
                censor_date: performer.censor_date,
                death_observed,
            });
    }

    grouped
        .into_iter()
        .map(|(i, cands)| AwardStratum::new(i, cands))
        .collect()
}
