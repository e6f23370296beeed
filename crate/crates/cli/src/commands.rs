use log::{info, warn};

use rpsaft::clogit::{DesignConfig, NomageBasis};
use rpsaft::gestimation::{
    apply_exclusion_rule, diagnostics, g_estimate, sensitivity_analysis, survival_advantage,
    PsiProblem, SearchGrid, SensitivityConfig,
};
use rpsaft::io::{ingest, serialize_dataset, Ingested};
use rpsaft::report::{
    build_report, compare_dataset, compare_replication, dataset_hash, estimate_rows, null_test_row,
    ComparisonRow, Metadata, ReportInputs, Section,
};
use rpsaft::simulation::{
    cohort_dataset, mortality_tables, replicate, simulate_cohort, Method, SimConfig,
};
use rpsaft::survival::{
    cox_analysis, sex_varies, subjects_from_dataset, Covariate, CoxSpec, TieMethod, TimeZero,
    WinnerStatus,
};
use rpsaft::Error;

use crate::{Cli, Command, DataArgs, SearchArgs, StatusArg, TimeZeroArg};

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or flag combinations.
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Outcome = Result<(), Failure>;

pub fn parse_basis(s: &str) -> Result<NomageBasis, String> {
    match s {
        "poly3" => Ok(NomageBasis::CubicPolynomial),
        _ => {
            let k = s
                .strip_prefix("spline:")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .ok_or_else(|| {
                    format!("basis must be `poly3` or `spline:K` with K >= 1, got `{s}`")
                })?;
            Ok(NomageBasis::CubicSpline { knots: k })
        }
    }
}

fn basis_name(b: &NomageBasis) -> String {
    match b {
        NomageBasis::CubicPolynomial => "poly3".into(),
        NomageBasis::CubicSpline { knots } => format!("spline:{knots}"),
        NomageBasis::Omit => "none".into(),
    }
}

fn check_level(level: f64) -> Outcome {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "--level {level} must lie in (0, 1)"
        )))
    }
}

fn grid(search: &SearchArgs, default: (f64, f64)) -> Result<SearchGrid, Failure> {
    check_level(search.level)?;
    let (lo, hi) = search.range.unwrap_or(default);
    SearchGrid::new(lo, hi, search.step).map_err(|e| Failure::Usage(e.to_string()))
}

struct Loaded {
    ingested: Ingested,
    meta: Metadata,
}

fn load(data: &DataArgs) -> Result<Loaded, Failure> {
    let ingested = ingest(&data.data, data.censor_date)?;
    let mut meta = Metadata {
        dataset_sha256: Some(dataset_hash(&ingested.dataset)),
        ..Default::default()
    };
    meta.config
        .push(("data".into(), data.data.display().to_string()));
    meta.config
        .push(("censor_date".into(), data.censor_date.to_string()));
    meta.warnings.extend(ingested.exclusions.iter().map(|e| {
        format!(
            "excluded `{}` from award {}: {}",
            e.performer_id, e.award_index, e.reason
        )
    }));
    Ok(Loaded { ingested, meta })
}

fn echo_search(meta: &mut Metadata, g: &SearchGrid, search: &SearchArgs) {
    meta.config
        .push(("range".into(), format!("{},{}", g.lo, g.hi)));
    meta.config.push(("step".into(), g.step.to_string()));
    meta.config.push(("level".into(), search.level.to_string()));
    meta.config
        .push(("basis".into(), basis_name(&search.basis)));
}

fn design(search: &SearchArgs) -> DesignConfig {
    DesignConfig {
        nomage_basis: search.basis.clone(),
        ..DesignConfig::default()
    }
}

fn emit(cli: &Cli, inputs: &ReportInputs, meta: &Metadata, required: &[Section]) -> Outcome {
    let bundle = build_report(inputs, meta, required)?;
    let written = bundle.write_to(&cli.out)?;
    info!(
        "wrote {} report files to {}",
        written.len(),
        cli.out.display()
    );
    Ok(())
}

fn print_rows(rows: &[ComparisonRow]) {
    println!(
        "{:<8} {:<8} {:<15} {:<26} {:>10} {:>22} {:>10}",
        "method", "status", "time_zero", "quantity", "estimate", "interval", "p"
    );
    for r in rows {
        let interval = match (r.lower, r.upper) {
            (Some(a), Some(b)) => format!("({a:.4}, {b:.4})"),
            _ => String::new(),
        };
        let p = r.p_value.map_or(String::new(), |p| format!("{p:.4}"));
        println!(
            "{:<8} {:<8} {:<15} {:<26} {:>10.4} {:>22} {:>10}",
            r.method, r.status, r.time_zero, r.quantity, r.estimate, interval, p
        );
    }
}

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Gestimate { data, search } => gestimate(cli, data, search),
        Command::Sensitivity {
            data,
            search,
            odds_ratios,
        } => sensitivity(cli, data, search, odds_ratios),
        Command::Compare {
            data,
            level,
            status,
            time_zero,
        } => compare(cli, data, *level, *status, *time_zero),
        Command::Simulate {
            scenario,
            reps,
            seed,
            methods,
            caps,
        } => {
            let mut config = SimConfig::new(*scenario, *seed);
            if let Some((n, w)) = caps {
                config = config.with_caps(*n, *w);
            }
            let methods = if methods.is_empty() {
                Method::TABLE.to_vec()
            } else {
                methods.clone()
            };
            simulate(cli, &config, *reps, &methods)
        }
        Command::Simtables {
            scenario,
            caps,
            reps,
            seed,
        } => {
            let config = SimConfig::new(*scenario, *seed).with_caps(caps.0, caps.1);
            simtables(cli, &config, *reps)
        }
        Command::Diagnose {
            data,
            search,
            groups,
            psi,
        } => diagnose(cli, data, search, *groups, *psi),
        Command::Synth {
            scenario,
            seed,
            rep,
            censor_date,
            output,
        } => {
            let cohort = simulate_cohort(&SimConfig::new(*scenario, *seed), *rep);
            let dataset = cohort_dataset(&cohort, *censor_date);
            std::fs::write(output, serialize_dataset(&dataset)).map_err(Error::from)?;
            info!(
                "wrote {} performers and {} nominations to {}",
                dataset.performers.len(),
                dataset.nominations.len(),
                output.display()
            );
            Ok(())
        }
    }
}

fn gestimate(cli: &Cli, data: &DataArgs, search: &SearchArgs) -> Outcome {
    let grid = grid(search, (-0.5, 0.5))?;
    let Loaded { ingested, mut meta } = load(data)?;
    echo_search(&mut meta, &grid, search);
    let strata_all = ingested.dataset.strata()?;
    let (strata, excluded) = apply_exclusion_rule(&strata_all);
    info!(
        "exclusion rule dropped {} records and {} awards",
        excluded.dropped_records.len(),
        excluded.dropped_strata.len()
    );
    let config = design(search);
    let at_null = PsiProblem::new(&strata, &config, 0.0)?.evaluate(0.0)?;
    let g = g_estimate(&strata, &config, &grid, search.level)?;
    for w in &g.warnings {
        warn!("{w}");
    }
    meta.warnings.extend(g.warnings.iter().cloned());
    let advantage = survival_advantage(&strata_all, g.psi_hat, g.ci)?;

    let mut rows = vec![null_test_row(&at_null)];
    rows.extend(estimate_rows(&g, Some(&advantage)));
    print_rows(&rows);
    let inputs = ReportInputs {
        comparison: Some(rows),
        theta_curve: Some(g.theta_curve.clone()),
        ..Default::default()
    };
    emit(
        cli,
        &inputs,
        &meta,
        &[Section::Comparison, Section::ThetaCurve],
    )
}

fn sensitivity(cli: &Cli, data: &DataArgs, search: &SearchArgs, odds_ratios: &[f64]) -> Outcome {
    let grid = grid(search, (-1.0, 1.0))?;
    if let Some(bad) = odds_ratios.iter().find(|&&o| !(o > 0.0 && o.is_finite())) {
        return Err(Failure::Usage(format!("odds ratio {bad} must be positive")));
    }
    let Loaded { ingested, mut meta } = load(data)?;
    echo_search(&mut meta, &grid, search);
    meta.config.push((
        "theta_star_or".into(),
        odds_ratios
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(","),
    ));
    let strata_all = ingested.dataset.strata()?;
    let (strata, _) = apply_exclusion_rule(&strata_all);
    let rows = sensitivity_analysis(
        &strata,
        &strata_all,
        &design(search),
        &SensitivityConfig {
            odds_ratios: odds_ratios.to_vec(),
        },
        &grid,
        search.level,
    );
    println!(
        "{:>6} {:>9} {:>22} {:>8} {:>20}",
        "OR", "theta*", "psi interval", "adv", "adv interval"
    );
    let mut failed = 0;
    for r in &rows {
        match &r.outcome {
            Ok((g, a)) => {
                for w in &g.warnings {
                    let w = format!("OR {}: {w}", r.odds_ratio);
                    warn!("{w}");
                    meta.warnings.push(w);
                }
                println!(
                    "{:>6} {:>9.4} {:>22} {:>8.1} {:>20}",
                    r.odds_ratio,
                    r.theta_star,
                    format!("({:.4}, {:.4})", g.ci.0, g.ci.1),
                    a.years,
                    format!("({:.1}, {:.1})", a.ci_years.0, a.ci_years.1)
                );
            }
            Err(e) => {
                failed += 1;
                let w = format!("OR {}: {e}", r.odds_ratio);
                warn!("{w}");
                meta.warnings.push(w);
            }
        }
    }
    let inputs = ReportInputs {
        sensitivity: Some(rows),
        ..Default::default()
    };
    emit(cli, &inputs, &meta, &[Section::Sensitivity])?;
    if failed > 0 {
        return Err(Failure::Run(Error::DegenerateModel(format!(
            "{failed} of {} sensitivity rows failed",
            odds_ratios.len()
        ))));
    }
    Ok(())
}

fn compare(
    cli: &Cli,
    data: &DataArgs,
    level: f64,
    status: Option<StatusArg>,
    time_zero: Option<TimeZeroArg>,
) -> Outcome {
    check_level(level)?;
    let spec = match (status, time_zero) {
        (Some(s), Some(t)) => {
            let status = match s {
                StatusArg::Static => WinnerStatus::Static,
                StatusArg::Dynamic => WinnerStatus::Dynamic,
            };
            let time_zero = match t {
                TimeZeroArg::Birthday => TimeZero::Birthday,
                TimeZeroArg::NominationDay => TimeZero::NominationDay,
            };
            // covariates are filled in once the data are known
            Some(
                CoxSpec::new(status, time_zero, vec![], TieMethod::Efron)
                    .map_err(|e| Failure::Usage(e.to_string()))?,
            )
        }
        _ => None,
    };
    let Loaded { ingested, mut meta } = load(data)?;
    meta.config.push(("level".into(), level.to_string()));
    let rows = match spec {
        None => compare_dataset(&ingested.dataset, level)?,
        Some(mut spec) => {
            let subjects = subjects_from_dataset(&ingested.dataset);
            if spec.status == WinnerStatus::Dynamic {
                if sex_varies(&subjects) {
                    spec.covariates.push(Covariate::Sex);
                }
                spec.covariates.push(Covariate::YearOfBirth);
            }
            meta.config.push(("spec".into(), format!("{spec:?}")));
            let fit = cox_analysis(&subjects, &spec)?;
            let r = fit.mortality_reduction(level);
            vec![ComparisonRow {
                method: "PH".into(),
                status: format!("{:?}", spec.status).to_lowercase(),
                time_zero: match spec.time_zero {
                    TimeZero::Birthday => "birthday".into(),
                    TimeZero::NominationDay => "nomination-day".into(),
                },
                quantity: "mortality_reduction_pct".into(),
                estimate: 100.0 * r.estimate,
                lower: Some(100.0 * r.lower),
                upper: Some(100.0 * r.upper),
                p_value: Some(r.p_value),
                source: "cox_fit".into(),
            }]
        }
    };
    print_rows(&rows);
    let inputs = ReportInputs {
        comparison: Some(rows),
        ..Default::default()
    };
    emit(cli, &inputs, &meta, &[Section::Comparison])
}

fn sim_meta(config: &SimConfig, reps: usize) -> Metadata {
    let mut meta = Metadata {
        seed: Some(config.seed),
        ..Default::default()
    };
    meta.config
        .push(("scenario".into(), config.scenario.as_str().into()));
    meta.config.push(("reps".into(), reps.to_string()));
    meta.config.push((
        "caps".into(),
        config.caps.map_or("none".into(), |c| {
            format!("{},{}", c.max_nominations, c.max_wins)
        }),
    ));
    meta
}

fn simulate(cli: &Cli, config: &SimConfig, reps: usize, methods: &[Method]) -> Outcome {
    if reps == 0 {
        return Err(Failure::Usage("--reps must be positive".into()));
    }
    let mut meta = sim_meta(config, reps);
    meta.config.push((
        "methods".into(),
        methods
            .iter()
            .map(|m| m.as_str())
            .collect::<Vec<_>>()
            .join(","),
    ));
    let rep = replicate(config, reps, methods)?;
    println!(
        "{:<24} {:>8} {:>8} {:>9}  histogram (deciles)",
        "method", "mean p", "KS p", "failures"
    );
    for s in &rep.summaries {
        let hist: Vec<String> = s.histogram.iter().map(usize::to_string).collect();
        println!(
            "{:<24} {:>8.4} {:>8.4} {:>9}  {}",
            s.method.as_str(),
            s.mean_p,
            s.ks_uniform().1,
            s.failures,
            hist.join(" ")
        );
        if s.failures > 0 {
            meta.warnings.push(format!(
                "{}: {} of {reps} replications failed",
                s.method, s.failures
            ));
        }
    }
    let inputs = ReportInputs {
        comparison: Some(compare_replication(&rep)),
        replication: Some(rep),
        ..Default::default()
    };
    emit(
        cli,
        &inputs,
        &meta,
        &[Section::Comparison, Section::PValues],
    )
}

fn simtables(cli: &Cli, config: &SimConfig, reps: usize) -> Outcome {
    if reps == 0 {
        return Err(Failure::Usage("--reps must be positive".into()));
    }
    let meta = sim_meta(config, reps);
    let tables = mortality_tables(config, reps)?;
    println!(
        "{:<8} {:>4}  {:<22} {:>8} {:>20} {:>9}",
        "model", "age", "N30 A30 N60 A60 N70 A70", "rate", "95% CI", "at risk"
    );
    for (model, cells) in [("full", &tables.full), ("reduced", &tables.reduced)] {
        for c in cells {
            let k = &c.key;
            let hist = if model == "full" {
                format!(
                    "{} {} {} {} {} {}",
                    k.nominations[0],
                    k.wins[0],
                    k.nominations[1],
                    k.wins[1],
                    k.nominations[2],
                    k.wins[2]
                )
            } else {
                format!(
                    "{} - {} - {} -",
                    k.nominations[0], k.nominations[1], k.nominations[2]
                )
            };
            println!(
                "{:<8} {:>4}  {:<22} {:>8.4} {:>20} {:>9}",
                model,
                k.death_age,
                hist,
                c.rate,
                format!("({:.4}, {:.4})", c.ci.0, c.ci.1),
                c.at_risk
            );
        }
    }
    let inputs = ReportInputs {
        cells: Some(tables),
        ..Default::default()
    };
    emit(cli, &inputs, &meta, &[Section::Cells])
}

fn diagnose(
    cli: &Cli,
    data: &DataArgs,
    search: &SearchArgs,
    groups: usize,
    psi: Option<f64>,
) -> Outcome {
    if groups < 2 {
        return Err(Failure::Usage("--groups must be at least 2".into()));
    }
    let grid = grid(search, (-0.5, 0.5))?;
    let Loaded { ingested, mut meta } = load(data)?;
    meta.config.push(("groups".into(), groups.to_string()));
    let strata_all = ingested.dataset.strata()?;
    let (strata, _) = apply_exclusion_rule(&strata_all);
    let psi = match psi {
        Some(p) => p,
        None => {
            echo_search(&mut meta, &grid, search);
            let g = g_estimate(&strata, &design(search), &grid, search.level)?;
            info!("using psi_hat = {:.4}", g.psi_hat);
            g.psi_hat
        }
    };
    meta.config.push(("psi".into(), psi.to_string()));
    let d = diagnostics(&strata, psi, groups)?;
    for w in &d.warnings {
        warn!("{w}");
    }
    meta.warnings.extend(d.warnings.iter().cloned());
    println!(
        "{:>5} {:>16} {:>7} {:>5} {:>8} {:>8} {:>8}",
        "group", "nomage", "winners", "n", "q1", "median", "q3"
    );
    for r in &d.rows {
        println!(
            "{:>5} {:>16} {:>7} {:>5} {:>8.2} {:>8.2} {:>8.2}",
            r.group,
            format!("[{:.1}, {:.1}]", r.nomage_range.0, r.nomage_range.1),
            r.winners,
            r.summary.n,
            r.summary.q1,
            r.summary.median,
            r.summary.q3
        );
    }
    let inputs = ReportInputs {
        diagnostics: Some(d),
        ..Default::default()
    };
    emit(cli, &inputs, &meta, &[Section::Diagnostics])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_round_trips_through_its_name() {
        for s in ["poly3", "spline:4"] {
            assert_eq!(basis_name(&parse_basis(s).unwrap()), s);
        }
        for bad in ["spline:0", "spline:x", "cubic"] {
            assert!(parse_basis(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn levels_outside_the_unit_interval_are_usage_errors() {
        assert!(check_level(0.9).is_ok());
        for bad in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(matches!(check_level(bad), Err(Failure::Usage(_))));
        }
    }
}
