//! Reading and writing the canonical two-section dataset file.
//!
//! ```text
//! [performers]
//! performer_id	name	birth_date	death_date
//! brando	Marlon Brando	1924-04-03	2004-07-01
//! [nominations]
//! performer_id	award_index	award_date	category	won
//! brando	77	1952-03-20	lead-actor	0
//! ```
//!
//! Fields are tab separated, dates are ISO-8601, an empty `death_date`
//! means alive at the censor date. Blank lines and lines starting with `#`
//! are ignored; the column header line after each section marker is
//! optional.
#![allow(clippy::tabs_in_doc_comments)]

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};

use crate::domain::{Category, Dataset, DateStamp, Nomination, Performer};
use crate::error::{Error, Result};

pub const PERFORMERS_SECTION: &str = "[performers]";
pub const NOMINATIONS_SECTION: &str = "[nominations]";
const PERFORMER_HEADER: [&str; 4] = ["performer_id", "name", "birth_date", "death_date"];
const NOMINATION_HEADER: [&str; 5] = [
    "performer_id",
    "award_index",
    "award_date",
    "category",
    "won",
];

pub fn default_censor_date() -> DateStamp {
    DateStamp::from_ymd(2007, 7, 25).expect("valid date")
}

/// A nomination or award dropped at ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusion {
    pub performer_id: String,
    pub award_index: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub performers: usize,
    pub winners: usize,
    pub nonwinning_nominees: usize,
    pub censored: usize,
    pub nominations: usize,
    pub awards: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    pub exclusions: Vec<Exclusion>,
    pub summary: IngestSummary,
}

/// Parses without applying the died-before-announcement rule.
pub fn parse_dataset(text: &str, censor_date: DateStamp) -> Result<Dataset> {
    #[derive(PartialEq)]
    enum State {
        Start,
        Performers,
        Nominations,
    }
    let mut state = State::Start;
    let mut performers: Vec<Performer> = Vec::new();
    let mut nominations: Vec<Nomination> = Vec::new();
    let mut performer_line: HashMap<String, usize> = HashMap::new();
    let mut nomination_lines = Vec::new();
    let mut seen_nom = HashSet::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        match line.trim() {
            PERFORMERS_SECTION => {
                if state != State::Start {
                    return Err(perr("unexpected [performers] section".into()));
                }
                state = State::Performers;
                continue;
            }
            NOMINATIONS_SECTION => {
                if state != State::Performers {
                    return Err(perr("[nominations] must follow [performers]".into()));
                }
                state = State::Nominations;
                continue;
            }
            _ => {}
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        match state {
            State::Start => {
                return Err(perr(format!("expected `{PERFORMERS_SECTION}`")));
            }
            State::Performers => {
                if fields == PERFORMER_HEADER {
                    continue;
                }
                // a trailing empty death_date may lose its tab
                if !(3..=4).contains(&fields.len()) {
                    return Err(perr(format!(
                        "performer row needs 4 fields, found {}",
                        fields.len()
                    )));
                }
                let id = fields[0];
                if id.is_empty() {
                    return Err(perr("empty performer_id".into()));
                }
                let birth: DateStamp = fields[2].parse().map_err(perr)?;
                let death = match fields.get(3).copied().unwrap_or("") {
                    "" => None,
                    s => Some(s.parse::<DateStamp>().map_err(perr)?),
                };
                if death.is_some_and(|d| d < birth) {
                    return Err(perr(format!("performer `{id}` dies before birth")));
                }
                if let Some(prev) = performer_line.insert(id.to_string(), line_no) {
                    return Err(perr(format!(
                        "performer `{id}` already defined at line {prev}"
                    )));
                }
                performers.push(Performer {
                    id: id.to_string(),
                    name: fields[1].to_string(),
                    birth,
                    death,
                    censor_date,
                });
            }
            State::Nominations => {
                if fields == NOMINATION_HEADER {
                    continue;
                }
                if fields.len() != 5 {
                    return Err(perr(format!(
                        "nomination row needs 5 fields, found {}",
                        fields.len()
                    )));
                }
                let id = fields[0];
                if !performer_line.contains_key(id) {
                    return Err(perr(format!("unknown performer `{id}`")));
                }
                let award_index: u32 =
                    fields[1].parse().ok().filter(|&i| i >= 1).ok_or_else(|| {
                        perr(format!(
                            "award_index `{}` is not a positive integer",
                            fields[1]
                        ))
                    })?;
                let award_date: DateStamp = fields[2].parse().map_err(perr)?;
                let category: Category = fields[3].parse().map_err(perr)?;
                let won = match fields[4] {
                    "0" => false,
                    "1" => true,
                    other => return Err(perr(format!("won must be 0 or 1, found `{other}`"))),
                };
                if !seen_nom.insert((id.to_string(), award_index)) {
                    return Err(perr(format!(
                        "duplicate nomination of `{id}` for award {award_index}"
                    )));
                }
                nomination_lines.push(line_no);
                nominations.push(Nomination {
                    performer_id: id.to_string(),
                    award_index,
                    award_date,
                    category,
                    won,
                });
            }
        }
    }

    match state {
        State::Start => {
            return Err(Error::Parse {
                line: last_line.max(1),
                message: format!("missing `{PERFORMERS_SECTION}` section"),
            })
        }
        State::Performers => {
            return Err(Error::Parse {
                line: last_line.max(1),
                message: format!("missing `{NOMINATIONS_SECTION}` section"),
            })
        }
        State::Nominations => {}
    }

    let mut award_dates: HashMap<u32, (DateStamp, usize)> = HashMap::new();
    for (nom, &line) in nominations.iter().zip(&nomination_lines) {
        let (date, first) = *award_dates
            .entry(nom.award_index)
            .or_insert((nom.award_date, line));
        if date != nom.award_date {
            return Err(Error::Parse {
                line,
                message: format!(
                    "award {} dated {} but {} at line {first}",
                    nom.award_index, nom.award_date, date
                ),
            });
        }
    }

    Ok(Dataset {
        performers,
        nominations,
    })
}

/// Drops nominations of performers who died before the award was announced.
/// An award whose winner is dropped goes entirely, as do performers left
/// without any nomination.
pub fn apply_ingest_rules(dataset: Dataset) -> (Dataset, Vec<Exclusion>) {
    let deaths: HashMap<&str, Option<DateStamp>> = dataset
        .performers
        .iter()
        .map(|p| (p.id.as_str(), p.death))
        .collect();
    let died_before =
        |n: &Nomination| deaths[n.performer_id.as_str()].is_some_and(|d| d < n.award_date);

    let mut exclusions = Vec::new();
    let mut dead_awards = BTreeSet::new();
    for n in dataset.nominations.iter().filter(|n| died_before(n)) {
        exclusions.push(Exclusion {
            performer_id: n.performer_id.clone(),
            award_index: n.award_index,
            reason: "died before the award was announced".into(),
        });
        if n.won {
            dead_awards.insert(n.award_index);
        }
    }
    for n in &dataset.nominations {
        if dead_awards.contains(&n.award_index) && !died_before(n) {
            exclusions.push(Exclusion {
                performer_id: n.performer_id.clone(),
                award_index: n.award_index,
                reason: "award winner died before the announcement".into(),
            });
        }
    }

    let nominations: Vec<Nomination> = dataset
        .nominations
        .into_iter()
        .filter(|n| !died_before(n) && !dead_awards.contains(&n.award_index))
        .collect();
    let nominated: HashSet<&str> = nominations
        .iter()
        .map(|n| n.performer_id.as_str())
        .collect();
    let performers: Vec<Performer> = dataset
        .performers
        .iter()
        .filter(|p| nominated.contains(p.id.as_str()))
        .cloned()
        .collect();
    (
        Dataset {
            performers,
            nominations,
        },
        exclusions,
    )
}

pub fn summarize(dataset: &Dataset) -> IngestSummary {
    let winners: HashSet<&str> = dataset
        .nominations
        .iter()
        .filter(|n| n.won)
        .map(|n| n.performer_id.as_str())
        .collect();
    let awards: HashSet<u32> = dataset.nominations.iter().map(|n| n.award_index).collect();
    let censored = dataset.performers.iter().filter(|p| !p.exit().1).count();
    IngestSummary {
        performers: dataset.performers.len(),
        winners: winners.len(),
        nonwinning_nominees: dataset.performers.len() - winners.len(),
        censored,
        nominations: dataset.nominations.len(),
        awards: awards.len(),
    }
}

/// Parses, applies the exclusion rules and logs what was dropped.
pub fn ingest_str(text: &str, censor_date: DateStamp) -> Result<Ingested> {
    let (dataset, exclusions) = apply_ingest_rules(parse_dataset(text, censor_date)?);
    for e in &exclusions {
        warn!(
            "excluded `{}` from award {}: {}",
            e.performer_id, e.award_index, e.reason
        );
    }
    let summary = summarize(&dataset);
    info!(
        "{} performers: {} winners, {} nonwinning nominees, {} censored",
        summary.performers, summary.winners, summary.nonwinning_nominees, summary.censored
    );
    Ok(Ingested {
        dataset,
        exclusions,
        summary,
    })
}

pub fn ingest(path: impl AsRef<Path>, censor_date: DateStamp) -> Result<Ingested> {
    ingest_str(&std::fs::read_to_string(path)?, censor_date)
}

/// Canonical serialization; the censor date is not written.
pub fn serialize_dataset(dataset: &Dataset) -> String {
    let mut out = String::new();
    out.push_str(PERFORMERS_SECTION);
    out.push('\n');
    out.push_str(&PERFORMER_HEADER.join("\t"));
    out.push('\n');
    for p in &dataset.performers {
        let death = p.death.map(|d| d.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{}\t{}\t{}\t{}", p.id, p.name, p.birth, death);
    }
    out.push_str(NOMINATIONS_SECTION);
    out.push('\n');
    out.push_str(&NOMINATION_HEADER.join("\t"));
    out.push('\n');
    for n in &dataset.nominations {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            n.performer_id,
            n.award_index,
            n.award_date,
            n.category,
            u8::from(n.won)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# sample
[performers]
performer_id\tname\tbirth_date\tdeath_date
a\tAnn\t1920-01-01\t1980-01-01
b\tBob\t1925-06-01\t
c\tCal\t1918-03-03\t1959-12-01
d\tDee\t1930-01-01\t

[nominations]
a\t1\t1960-01-01\tlead-actress\t1
b\t1\t1960-01-01\tlead-actress\t0
c\t1\t1960-01-01\tlead-actress\t0
b\t2\t1961-01-01\tlead-actress\t1
d\t2\t1961-01-01\tlead-actress\t0
";

    fn censor() -> DateStamp {
        default_censor_date()
    }

    #[test]
    fn parses_and_excludes_dead_nominee() {
        let ing = ingest_str(SAMPLE, censor()).unwrap();
        assert_eq!(
            ing.exclusions,
            vec![Exclusion {
                performer_id: "c".into(),
                award_index: 1,
                reason: "died before the award was announced".into()
            }]
        );
        assert_eq!(ing.dataset.performers.len(), 3);
        assert_eq!(
            ing.summary,
            IngestSummary {
                performers: 3,
                winners: 2,
                nonwinning_nominees: 1,
                censored: 2,
                nominations: 4,
                awards: 2,
            }
        );
        assert_eq!(ing.dataset.performers[1].censor_date, censor());
    }

    #[test]
    fn posthumous_winner_drops_award() {
        let text = SAMPLE.replace(
            "c\t1\t1960-01-01\tlead-actress\t0",
            "c\t3\t1962-01-01\tlead-actor\t1",
        );
        let ing = ingest_str(&text, censor()).unwrap();
        assert_eq!(ing.exclusions.len(), 1);
        assert!(ing.dataset.nominations.iter().all(|n| n.award_index != 3));
    }

    #[test]
    fn round_trip_is_identity() {
        let ds = parse_dataset(SAMPLE, censor()).unwrap();
        let again = parse_dataset(&serialize_dataset(&ds), censor()).unwrap();
        assert_eq!(ds, again);
        assert_eq!(serialize_dataset(&ds), serialize_dataset(&again));
    }

    #[test]
    fn empty_file_fails_at_line_one() {
        assert!(matches!(
            parse_dataset("", censor()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn missing_trailing_death_date_field_is_alive() {
        let stripped = SAMPLE.replace("1925-06-01\t\n", "1925-06-01\n");
        assert_ne!(stripped, SAMPLE);
        assert_eq!(
            parse_dataset(&stripped, censor()).unwrap(),
            parse_dataset(SAMPLE, censor()).unwrap()
        );
        let short = SAMPLE.replace("b\tBob\t1925-06-01\t\n", "b\tBob\n");
        assert!(matches!(
            parse_dataset(&short, censor()),
            Err(Error::Parse { line: 5, .. })
        ));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad_cat = SAMPLE.replace(
            "d\t2\t1961-01-01\tlead-actress",
            "d\t2\t1961-01-01\tdirector",
        );
        assert!(matches!(
            parse_dataset(&bad_cat, censor()),
            Err(Error::Parse { line: 14, .. })
        ));
        let dup = format!(
            "{SAMPLE}a\t2\t1961-01-01\tlead-actress\t0\na\t2\t1961-01-01\tlead-actress\t0\n"
        );
        assert!(matches!(
            parse_dataset(&dup, censor()),
            Err(Error::Parse { line: 16, .. })
        ));
        let bad_won = SAMPLE.replace(
            "d\t2\t1961-01-01\tlead-actress\t0",
            "d\t2\t1961-01-01\tlead-actress\t2",
        );
        assert!(matches!(
            parse_dataset(&bad_won, censor()),
            Err(Error::Parse { line: 14, .. })
        ));
        let bad_date = SAMPLE.replace("1925-06-01", "1925-13-01");
        assert!(matches!(
            parse_dataset(&bad_date, censor()),
            Err(Error::Parse { line: 5, .. })
        ));
        let zero_idx = SAMPLE.replace("d\t2\t", "d\t0\t");
        assert!(matches!(
            parse_dataset(&zero_idx, censor()),
            Err(Error::Parse { line: 14, .. })
        ));
    }

    #[test]
    fn ingested_dataset_builds_strata() {
        let ing = ingest_str(SAMPLE, censor()).unwrap();
        let strata = ing.dataset.strata().unwrap();
        assert_eq!(strata.len(), 2);
        assert!(strata
            .iter()
            .all(|s| s.candidates.iter().filter(|c| c.treated).count() == 1));
    }
}
