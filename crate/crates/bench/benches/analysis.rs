use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rpsaft::clogit::{ClogitData, Design};
use rpsaft::gestimation::{apply_exclusion_rule, g_estimate, SearchGrid};
use rpsaft::rpsaftm::Psi;
use rpsaft::simulation::{
    award_strata, method_p_value, rpsaftm_design, simulate_cohort, survival_subjects, Method,
    Scenario, SimConfig,
};
use rpsaft::survival::cox_analysis;

fn config() -> SimConfig {
    SimConfig::new(Scenario::NominationAffectedByWins, 20100101)
}

fn clogit_fit(c: &mut Criterion) {
    let cohort = simulate_cohort(&config(), 0);
    let (strata, _) = apply_exclusion_rule(&award_strata(&cohort).unwrap());
    let design = Design::prepare(&strata, &rpsaftm_design()).unwrap();
    c.bench_function("clogit_fit", |b| {
        b.iter(|| {
            ClogitData::new(black_box(&strata), Psi(-0.1), &design)
                .unwrap()
                .fit(0.0)
                .unwrap()
        })
    });
}

fn g_estimate_grid(c: &mut Criterion) {
    let cohort = simulate_cohort(&config(), 0);
    let (strata, _) = apply_exclusion_rule(&award_strata(&cohort).unwrap());
    let mut group = c.benchmark_group("g_estimate");
    group.sample_size(10);
    for step in [0.01, 0.001] {
        let grid = SearchGrid::new(-0.5, 0.5, step).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(step), &grid, |b, grid| {
            b.iter(|| g_estimate(black_box(&strata), &rpsaftm_design(), grid, 0.95).unwrap())
        });
    }
    group.finish();
}

fn cox_fit(c: &mut Criterion) {
    let subjects = survival_subjects(&simulate_cohort(&config(), 0));
    let mut group = c.benchmark_group("cox_fit");
    for method in [Method::CoxStaticBirthday, Method::CoxDynamicNomination] {
        let spec = method.cox_spec(false).unwrap();
        group.bench_function(method.as_str(), |b| {
            b.iter(|| cox_analysis(black_box(&subjects), &spec).unwrap())
        });
    }
    group.finish();
}

fn replication(c: &mut Criterion) {
    let config = config();
    c.bench_function("replication_all_methods", |b| {
        let mut rep = 0;
        b.iter(|| {
            let cohort = simulate_cohort(&config, rep);
            rep += 1;
            Method::TABLE
                .iter()
                .map(|&m| method_p_value(m, &cohort, &config).unwrap())
                .sum::<f64>()
        })
    });
}

criterion_group!(benches, clogit_fit, g_estimate_grid, cox_fit, replication);
criterion_main!(benches);
