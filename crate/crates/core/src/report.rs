//! Report assembly: comparison tables, the sensitivity table, the θ-curve
//! and diagnostics as tab-separated text, plus a manifest recording the
//! dataset hash, seed, version, configuration and the operations each row
//! came from. Serialization is byte-deterministic.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::gestimation::{Diagnostics, GEstimate, SensitivityRow, SurvivalAdvantage, ThetaPoint};
use crate::io::serialize_dataset;
use crate::simulation::{Method, MortalityTables, Replication};
use crate::survival::{cox_analysis, person_years, sex_varies, subjects_from_dataset, TimeZero};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Section {
    Comparison,
    Sensitivity,
    ThetaCurve,
    Diagnostics,
    PValues,
    Cells,
}

impl Section {
    pub const ALL: [Section; 6] = [
        Section::Comparison,
        Section::Sensitivity,
        Section::ThetaCurve,
        Section::Diagnostics,
        Section::PValues,
        Section::Cells,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Section::Comparison => "comparison.tsv",
            Section::Sensitivity => "sensitivity.tsv",
            Section::ThetaCurve => "theta_curve.tsv",
            Section::Diagnostics => "diagnostics.tsv",
            Section::PValues => "pvalues.tsv",
            Section::Cells => "cells.tsv",
        }
    }

    pub fn name(self) -> &'static str {
        self.file_name().trim_end_matches(".tsv")
    }
}

/// One line of a comparison table: a mortality reduction in percent, a
/// mean p-value, or a structural-model quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub status: String,
    pub time_zero: String,
    pub quantity: String,
    pub estimate: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub p_value: Option<f64>,
    /// Operation that produced the row.
    pub source: String,
}

fn label(method: Method) -> &'static str {
    match method {
        Method::PersonYears => "PY",
        Method::RpsaftmGtest => "RPSAFTM",
        Method::DiscreteHazardLrt => "LRT",
        Method::CoxHistoryAdjusted => "PH2",
        _ => "PH",
    }
}

/// The observational comparison rows for a dataset: PH static and dynamic
/// fits, person-years, and the history-adjusted PH2 fit.
pub fn compare_dataset(dataset: &Dataset, level: f64) -> Result<Vec<ComparisonRow>> {
    let subjects = subjects_from_dataset(dataset);
    if subjects.is_empty() {
        return Err(Error::EmptyInput("no nominated performers".into()));
    }
    let with_sex = sex_varies(&subjects);
    let mut rows = Vec::new();
    for method in [
        Method::CoxStaticBirthday,
        Method::CoxDynamicBirthday,
        Method::CoxDynamicNomination,
        Method::PersonYears,
        Method::CoxHistoryAdjusted,
    ] {
        let reduction = match method.cox_spec(with_sex) {
            Some(spec) => cox_analysis(&subjects, &spec)?.mortality_reduction(level),
            None => person_years(
                &subjects,
                TimeZero::NominationDay,
                &Method::py_covariates(with_sex),
            )?
            .mortality_reduction(level),
        };
        let (status, time_zero) = method.labels();
        rows.push(ComparisonRow {
            method: label(method).into(),
            status: status.into(),
            time_zero: time_zero.into(),
            quantity: "mortality_reduction_pct".into(),
            estimate: 100.0 * reduction.estimate,
            lower: Some(100.0 * reduction.lower),
            upper: Some(100.0 * reduction.upper),
            p_value: Some(reduction.p_value),
            source: method.as_str().into(),
        });
    }
    Ok(rows)
}

/// Mean p-value rows of a simulation study.
pub fn compare_replication(rep: &Replication) -> Vec<ComparisonRow> {
    rep.summaries
        .iter()
        .map(|s| {
            let (status, time_zero) = s.method.labels();
            ComparisonRow {
                method: label(s.method).into(),
                status: status.into(),
                time_zero: time_zero.into(),
                quantity: "mean_p".into(),
                estimate: s.mean_p,
                lower: None,
                upper: None,
                p_value: None,
                source: format!("replicate:{}", s.method),
            }
        })
        .collect()
}

/// Test of no latent-time association at ψ = 0.
pub fn null_test_row(point: &ThetaPoint) -> ComparisonRow {
    ComparisonRow {
        method: "RPSAFTM".into(),
        status: "dynamic".into(),
        time_zero: "nomination-day".into(),
        quantity: "theta_at_psi0".into(),
        estimate: point.theta_hat,
        lower: None,
        upper: None,
        p_value: Some(point.p_value),
        source: "score_test".into(),
    }
}

/// ψ̂ with its interval, and the survival advantage when available.
pub fn estimate_rows(g: &GEstimate, advantage: Option<&SurvivalAdvantage>) -> Vec<ComparisonRow> {
    let row = |quantity: &str, estimate, lower, upper, p_value, source: &str| ComparisonRow {
        method: "RPSAFTM".into(),
        status: "dynamic".into(),
        time_zero: "nomination-day".into(),
        quantity: quantity.into(),
        estimate,
        lower: Some(lower),
        upper: Some(upper),
        p_value,
        source: source.into(),
    };
    let mut rows = vec![
        row(
            "psi",
            g.psi_hat,
            g.ci.0,
            g.ci.1,
            Some(g.p_at_estimate),
            "g_estimate",
        ),
        row(
            "survival_multiplier",
            g.survival_multiplier(),
            (-g.ci.1).exp(),
            (-g.ci.0).exp(),
            None,
            "g_estimate",
        ),
    ];
    if let Some(a) = advantage {
        rows.push(row(
            "survival_advantage_years",
            a.years,
            a.ci_years.0,
            a.ci_years.1,
            None,
            "survival_advantage",
        ));
    }
    rows
}

/// Everything a report can hold; absent sections stay `None`.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub comparison: Option<Vec<ComparisonRow>>,
    pub sensitivity: Option<Vec<SensitivityRow>>,
    pub theta_curve: Option<Vec<ThetaPoint>>,
    pub diagnostics: Option<Diagnostics>,
    pub replication: Option<Replication>,
    pub cells: Option<MortalityTables>,
}

impl ReportInputs {
    fn present(&self) -> BTreeSet<Section> {
        let mut s = BTreeSet::new();
        if self.comparison.is_some() {
            s.insert(Section::Comparison);
        }
        if self.sensitivity.is_some() {
            s.insert(Section::Sensitivity);
        }
        if self.theta_curve.is_some() {
            s.insert(Section::ThetaCurve);
        }
        if self.diagnostics.is_some() {
            s.insert(Section::Diagnostics);
        }
        if self.replication.is_some() {
            s.insert(Section::PValues);
        }
        if self.cells.is_some() {
            s.insert(Section::Cells);
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    pub dataset_sha256: Option<String>,
    pub seed: Option<u64>,
    /// Ordered configuration echo.
    pub config: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hash of the canonical serialization, so equal datasets hash equally
/// regardless of input formatting.
pub fn dataset_hash(dataset: &Dataset) -> String {
    sha256_hex(serialize_dataset(dataset).as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    /// `(file name, contents)` for each present section, in a fixed order.
    pub tables: Vec<(Section, String)>,
    pub manifest: String,
}

/// Assembles the report. Every section in `required` must be present;
/// an input with no sections at all is always incomplete.
pub fn build_report(
    inputs: &ReportInputs,
    metadata: &Metadata,
    required: &[Section],
) -> Result<ReportBundle> {
    let present = inputs.present();
    let missing: Vec<String> = if present.is_empty() {
        let wanted: Vec<Section> = if required.is_empty() {
            Section::ALL.to_vec()
        } else {
            required.to_vec()
        };
        wanted.iter().map(|s| s.name().to_string()).collect()
    } else {
        required
            .iter()
            .filter(|s| !present.contains(s))
            .map(|s| s.name().to_string())
            .collect()
    };
    if !missing.is_empty() {
        return Err(Error::PartialReport(missing));
    }

    let mut tables = Vec::new();
    let mut operations = BTreeSet::new();
    if let Some(rows) = &inputs.comparison {
        operations.extend(rows.iter().map(|r| r.source.clone()));
        tables.push((Section::Comparison, comparison_tsv(rows)));
    }
    if let Some(rows) = &inputs.sensitivity {
        operations.insert("sensitivity_analysis".to_string());
        tables.push((Section::Sensitivity, sensitivity_tsv(rows)));
    }
    if let Some(curve) = &inputs.theta_curve {
        operations.insert("g_estimate".to_string());
        tables.push((Section::ThetaCurve, theta_curve_tsv(curve)));
    }
    if let Some(d) = &inputs.diagnostics {
        operations.insert("diagnostics".to_string());
        tables.push((Section::Diagnostics, diagnostics_tsv(d)));
    }
    if let Some(r) = &inputs.replication {
        operations.extend(
            r.summaries
                .iter()
                .map(|s| format!("replicate:{}", s.method)),
        );
        tables.push((Section::PValues, pvalues_tsv(r)));
    }
    if let Some(c) = &inputs.cells {
        operations.insert("mortality_tables".to_string());
        tables.push((Section::Cells, cells_tsv(c)));
    }

    let mut m = String::new();
    let _ = writeln!(m, "toolkit_version\t{VERSION}");
    let _ = writeln!(
        m,
        "dataset_sha256\t{}",
        metadata.dataset_sha256.as_deref().unwrap_or("NA")
    );
    let _ = writeln!(
        m,
        "seed\t{}",
        metadata.seed.map_or("NA".to_string(), |s| s.to_string())
    );
    for (k, v) in &metadata.config {
        let _ = writeln!(m, "config\t{}\t{}", clean(k), clean(v));
    }
    for op in &operations {
        let _ = writeln!(m, "operation\t{op}");
    }
    for w in &metadata.warnings {
        let _ = writeln!(m, "warning\t{}", clean(w));
    }
    for (section, body) in &tables {
        let rows = body.lines().count().saturating_sub(1);
        let _ = writeln!(
            m,
            "file\t{}\t{rows}\t{}",
            section.file_name(),
            sha256_hex(body.as_bytes())
        );
    }
    Ok(ReportBundle {
        tables,
        manifest: m,
    })
}

impl ReportBundle {
    /// Writes every table plus `manifest.txt` into `dir`, creating it.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (section, body) in &self.tables {
            let path = dir.join(section.file_name());
            std::fs::write(&path, body)?;
            written.push(path);
        }
        let path = dir.join("manifest.txt");
        std::fs::write(&path, &self.manifest)?;
        written.push(path);
        Ok(written)
    }

    pub fn table(&self, section: Section) -> Option<&str> {
        self.tables
            .iter()
            .find(|(s, _)| *s == section)
            .map(|(_, b)| b.as_str())
    }
}

/// Shortest round-trip text; exponent form for very small magnitudes.
fn num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else if v != 0.0 && v.abs() < 1e-4 {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

fn comparison_tsv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(
        "method\tstatus\ttime_zero\tquantity\testimate\tlower\tupper\tp_value\tsource\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.method,
            r.status,
            r.time_zero,
            r.quantity,
            num(r.estimate),
            opt(r.lower),
            opt(r.upper),
            opt(r.p_value),
            r.source
        );
    }
    out
}

fn sensitivity_tsv(rows: &[SensitivityRow]) -> String {
    let mut out = String::from(
        "odds_ratio\ttheta_star\tpsi_hat\tpsi_lower\tpsi_upper\tsurvival_multiplier\tadvantage_years\tadvantage_lower\tadvantage_upper\tstatus\n",
    );
    for r in rows {
        match &r.outcome {
            Ok((g, a)) => {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\tok",
                    num(r.odds_ratio),
                    num(r.theta_star),
                    num(g.psi_hat),
                    num(g.ci.0),
                    num(g.ci.1),
                    num(g.survival_multiplier()),
                    num(a.years),
                    num(a.ci_years.0),
                    num(a.ci_years.1)
                );
            }
            Err(e) => {
                let _ = writeln!(
                    out,
                    "{}\t{}\tNA\tNA\tNA\tNA\tNA\tNA\tNA\t{}",
                    num(r.odds_ratio),
                    num(r.theta_star),
                    clean(&e.to_string())
                );
            }
        }
    }
    out
}

fn theta_curve_tsv(curve: &[ThetaPoint]) -> String {
    let mut out = String::from("psi\ttheta_hat\tp_value\n");
    for p in curve {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            num(p.psi),
            num(p.theta_hat),
            num(p.p_value)
        );
    }
    out
}

fn diagnostics_tsv(d: &Diagnostics) -> String {
    let mut out =
        String::from("group\tnomage_lower\tnomage_upper\twinners\tn\tmin\tq1\tmedian\tq3\tmax\n");
    for r in &d.rows {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.group,
            num(r.nomage_range.0),
            num(r.nomage_range.1),
            u8::from(r.winners),
            s.n,
            num(s.min),
            num(s.q1),
            num(s.median),
            num(s.q3),
            num(s.max)
        );
    }
    out
}

fn pvalues_tsv(r: &Replication) -> String {
    let mut out = String::from("method\tindex\tp_value\n");
    for s in &r.summaries {
        for (i, p) in s.p_values.iter().enumerate() {
            let _ = writeln!(out, "{}\t{i}\t{}", s.method, num(*p));
        }
    }
    out
}

fn cells_tsv(t: &MortalityTables) -> String {
    let mut out = String::from(
        "model\tdeath_age\tn30\ta30\tn60\ta60\tn70\ta70\tdeaths\tat_risk\trate\tlower\tupper\tp2_5\tp97_5\treplications\n",
    );
    for (model, cells) in [("full", &t.full), ("reduced", &t.reduced)] {
        for c in cells {
            let k = &c.key;
            let wins = |i: usize| {
                if model == "full" {
                    k.wins[i].to_string()
                } else {
                    "-".to_string()
                }
            };
            let _ = writeln!(
                out,
                "{model}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                k.death_age,
                k.nominations[0],
                wins(0),
                k.nominations[1],
                wins(1),
                k.nominations[2],
                wins(2),
                c.deaths,
                c.at_risk,
                num(c.rate),
                num(c.ci.0),
                num(c.ci.1),
                num(c.percentile_range.0),
                num(c.percentile_range.1),
                c.replications_present
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gestimation::FiveNumber;

    fn sample_inputs() -> ReportInputs {
        ReportInputs {
            comparison: Some(vec![ComparisonRow {
                method: "PH".into(),
                status: "static".into(),
                time_zero: "birthday".into(),
                quantity: "mortality_reduction_pct".into(),
                estimate: 19.0,
                lower: Some(6.0),
                upper: Some(31.0),
                p_value: Some(3.2e-7),
                source: "cox-static-birthday".into(),
            }]),
            theta_curve: Some(vec![
                ThetaPoint {
                    psi: -0.1,
                    theta_hat: 0.01,
                    p_value: 0.4,
                },
                ThetaPoint {
                    psi: 0.0,
                    theta_hat: -0.002,
                    p_value: 0.9,
                },
            ]),
            diagnostics: Some(Diagnostics {
                rows: vec![crate::gestimation::DiagnosticRow {
                    group: 1,
                    nomage_range: (20.0, 35.5),
                    winners: true,
                    summary: FiveNumber::of(&[1.0, 2.0, 3.0]),
                }],
                warnings: vec![],
            }),
            ..Default::default()
        }
    }

    fn meta() -> Metadata {
        Metadata {
            dataset_sha256: Some("ab".into()),
            seed: Some(7),
            config: vec![("level".into(), "0.95".into())],
            warnings: vec!["w1".into()],
        }
    }

    #[test]
    fn empty_input_is_partial() {
        let err = build_report(&ReportInputs::default(), &meta(), &[]).unwrap_err();
        match err {
            Error::PartialReport(missing) => assert_eq!(missing.len(), Section::ALL.len()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_required_sections_are_listed() {
        let err = build_report(
            &sample_inputs(),
            &meta(),
            &[Section::Comparison, Section::Sensitivity, Section::Cells],
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::PartialReport(vec!["sensitivity".into(), "cells".into()])
        );
    }

    #[test]
    fn serialization_is_deterministic() {
        let a = build_report(&sample_inputs(), &meta(), &[Section::ThetaCurve]).unwrap();
        let b = build_report(&sample_inputs(), &meta(), &[Section::ThetaCurve]).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let files = a.write_to(dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(manifest, a.manifest);
        assert!(manifest.contains("seed\t7\n"));
        assert!(manifest.contains("operation\tcox-static-birthday\n"));
        assert!(manifest.contains("operation\tg_estimate\n"));
        assert!(manifest.contains(&format!("toolkit_version\t{VERSION}\n")));
    }

    #[test]
    fn table_contents() {
        let r = build_report(&sample_inputs(), &meta(), &[]).unwrap();
        let cmp = r.table(Section::Comparison).unwrap();
        assert_eq!(
            cmp.lines().nth(1).unwrap(),
            "PH\tstatic\tbirthday\tmortality_reduction_pct\t19\t6\t31\t3.2e-7\tcox-static-birthday"
        );
        let curve = r.table(Section::ThetaCurve).unwrap();
        assert_eq!(
            curve,
            "psi\ttheta_hat\tp_value\n-0.1\t0.01\t0.4\n0\t-0.002\t0.9\n"
        );
        let diag = r.table(Section::Diagnostics).unwrap();
        assert_eq!(
            diag.lines().nth(1).unwrap(),
            "1\t20\t35.5\t1\t3\t1\t1.5\t2\t2.5\t3"
        );
        assert!(r.manifest.contains("file\ttheta_curve.tsv\t2\t"));
    }

    #[test]
    fn num_formatting() {
        assert_eq!(num(f64::NAN), "NA");
        assert_eq!(num(f64::INFINITY), "inf");
        assert_eq!(num(0.0), "0");
        assert_eq!(num(-0.1127), "-0.1127");
        assert_eq!(num(1.5e-9), "1.5e-9");
    }
}
