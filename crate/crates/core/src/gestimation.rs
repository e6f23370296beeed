//! g-estimation of the structural effect: exclusion of prior winners,
//! the root of `theta_hat(psi)`, test-inversion intervals, the survival
//! advantage on the years scale, sensitivity analysis and diagnostics.

use rayon::prelude::*;

use crate::clogit::{ClogitData, Design, DesignConfig, LATENT_COLUMN};
use crate::domain::AwardStratum;
use crate::error::{Error, Result};
use crate::numeric::quantile;
use crate::rpsaftm::{censored_latent, Psi};
use crate::survival::km;

const ROOT_TOLERANCE: f64 = 1e-6;
const CI_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExclusionReport {
    /// `(award_index, performer_id)` of every removed record.
    pub dropped_records: Vec<(u32, String)>,
    /// Awards removed entirely.
    pub dropped_strata: Vec<u32>,
}

/// Drops candidates who had already won; awards whose winner had already
/// won, or that are left with fewer than two candidates, drop out.
pub fn apply_exclusion_rule(strata: &[AwardStratum]) -> (Vec<AwardStratum>, ExclusionReport) {
    let mut report = ExclusionReport::default();
    let mut kept = Vec::with_capacity(strata.len());
    for s in strata {
        let (keep, drop): (Vec<_>, Vec<_>) = s
            .candidates
            .iter()
            .cloned()
            .partition(|c| !c.previously_won());
        report
            .dropped_records
            .extend(drop.into_iter().map(|c| (c.award_index, c.performer_id)));
        if keep.len() >= 2 && keep.iter().any(|c| c.treated) {
            kept.push(AwardStratum {
                award_index: s.award_index,
                candidates: keep,
            });
        } else {
            report.dropped_strata.push(s.award_index);
        }
    }
    (kept, report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            lo: -0.5,
            hi: 0.5,
            step: 0.001,
        }
    }
}

impl SearchGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo < hi) || !(step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "search grid needs lo < hi and step > 0, got ({lo}, {hi}, {step})"
            )));
        }
        Ok(SearchGrid { lo, hi, step })
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        let mut pts: Vec<f64> = (0..=n).map(|i| self.lo + i as f64 * self.step).collect();
        if self.hi - pts[n] > 1e-9 * self.step {
            pts.push(self.hi);
        }
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaPoint {
    pub psi: f64,
    /// Fitted latent-time coefficient minus the null value.
    pub theta_hat: f64,
    /// Score-test p-value of the null value.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GEstimate {
    pub psi_hat: f64,
    pub p_at_estimate: f64,
    pub ci: (f64, f64),
    /// Set when an interval end reached the edge of the search grid.
    pub ci_clipped: (bool, bool),
    pub theta_curve: Vec<ThetaPoint>,
    pub level: f64,
    pub theta_star: f64,
    /// No sign change of `theta_hat`; the estimate is the maximal-p grid point.
    pub from_grid_maximum: bool,
    pub warnings: Vec<String>,
}

impl GEstimate {
    /// `exp(-psi_hat)`: factor by which winning stretches remaining life.
    pub fn survival_multiplier(&self) -> f64 {
        Psi(self.psi_hat).survival_multiplier()
    }

    pub fn covers(&self, psi: f64) -> bool {
        self.ci.0 <= psi && psi <= self.ci.1
    }
}

/// The model at one value of `psi`, prepared for repeated evaluation.
pub struct PsiProblem<'a> {
    strata: &'a [AwardStratum],
    design: Design,
    theta_star: f64,
}

impl<'a> PsiProblem<'a> {
    pub fn new(strata: &'a [AwardStratum], config: &DesignConfig, theta_star: f64) -> Result<Self> {
        Ok(PsiProblem {
            strata,
            design: Design::prepare(strata, config)?,
            theta_star,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn evaluate(&self, psi: f64) -> Result<ThetaPoint> {
        let data = ClogitData::new(self.strata, Psi(psi), &self.design)?;
        match data.fit(self.theta_star) {
            Ok(fit) => Ok(ThetaPoint {
                psi,
                theta_hat: fit.theta.coef,
                p_value: fit.p_value,
            }),
            // latent time separates winners: theta_hat is infinite but the
            // score test at the null is still defined
            Err(Error::MonotoneLikelihood(col)) if col == LATENT_COLUMN => {
                let score = data.score_test(self.theta_star)?;
                Ok(ThetaPoint {
                    psi,
                    theta_hat: f64::INFINITY.copysign(score.score),
                    p_value: score.p_value,
                })
            }
            Err(e) => Err(e),
        }
    }

    pub fn p_value(&self, psi: f64) -> Result<f64> {
        let data = ClogitData::new(self.strata, Psi(psi), &self.design)?;
        Ok(data.score_test(self.theta_star)?.p_value)
    }

    pub fn curve(&self, grid: &SearchGrid) -> Result<Vec<ThetaPoint>> {
        grid.points()
            .into_par_iter()
            .map(|psi| self.evaluate(psi))
            .collect()
    }
}

/// Primary analysis: tests `theta = 0`.
pub fn g_estimate(
    strata: &[AwardStratum],
    config: &DesignConfig,
    search: &SearchGrid,
    level: f64,
) -> Result<GEstimate> {
    g_estimate_under(strata, config, search, level, 0.0)
}

/// g-estimation with the latent-time coefficient held at `theta_star`
/// under the null.
pub fn g_estimate_under(
    strata: &[AwardStratum],
    config: &DesignConfig,
    search: &SearchGrid,
    level: f64,
    theta_star: f64,
) -> Result<GEstimate> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "level {level} outside (0, 1)"
        )));
    }
    let problem = PsiProblem::new(strata, config, theta_star)?;
    let curve = problem.curve(search)?;
    invert(&problem, curve, level, theta_star)
}

fn invert(
    problem: &PsiProblem,
    curve: Vec<ThetaPoint>,
    level: f64,
    theta_star: f64,
) -> Result<GEstimate> {
    let alpha = 1.0 - level;
    let mut warnings = problem.design.warnings.clone();
    let imax = curve
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.p_value.total_cmp(&b.1.p_value))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::EmptyInput("empty search grid".into()))?;
    let max_p = curve[imax].p_value;
    check_unimodal(&curve, imax, alpha)?;

    let bracket = nearest_sign_change(&curve, imax);
    let (psi_hat, p_hat, from_grid_maximum) = match bracket {
        Some(i) => {
            let psi = bisect_root(problem, curve[i], curve[i + 1])?;
            (psi, problem.p_value(psi)?, false)
        }
        None => {
            if max_p < alpha {
                return Err(Error::NoEstimate { max_p, alpha });
            }
            warnings
                .push("theta_hat has no sign change on the grid; using the maximal p-value".into());
            (curve[imax].psi, max_p, true)
        }
    };
    if p_hat < alpha {
        return Err(Error::NoEstimate {
            max_p: p_hat.max(max_p),
            alpha,
        });
    }

    // first grid point on each side of the estimate that is rejected
    let below = curve
        .iter()
        .rposition(|c| c.psi < psi_hat && c.p_value < alpha);
    let above = curve
        .iter()
        .position(|c| c.psi > psi_hat && c.p_value < alpha);
    let lo = match below {
        Some(i) => {
            let inner = curve[i + 1].psi.min(psi_hat);
            bisect_level(problem, curve[i].psi, inner, alpha)?
        }
        None => curve[0].psi,
    };
    let hi = match above {
        Some(i) => {
            let inner = curve[i - 1].psi.max(psi_hat);
            bisect_level(problem, curve[i].psi, inner, alpha)?
        }
        None => curve[curve.len() - 1].psi,
    };
    let ci_clipped = (below.is_none(), above.is_none());
    if ci_clipped.0 || ci_clipped.1 {
        warnings.push("confidence interval reaches the edge of the search grid".into());
    }
    Ok(GEstimate {
        psi_hat,
        p_at_estimate: p_hat,
        ci: (lo.min(psi_hat), hi.max(psi_hat)),
        ci_clipped,
        theta_curve: curve,
        level,
        theta_star,
        from_grid_maximum,
        warnings,
    })
}

/// The accepted grid points, `p >= alpha`, must form one run around the
/// maximum; wiggles among rejected points cannot change the interval.
fn check_unimodal(curve: &[ThetaPoint], imax: usize, alpha: f64) -> Result<()> {
    let accepted: Vec<usize> = (0..curve.len())
        .filter(|&i| curve[i].p_value >= alpha)
        .collect();
    let contiguous = accepted.windows(2).all(|w| w[1] == w[0] + 1)
        && (accepted.is_empty() || accepted.contains(&imax));
    if contiguous {
        Ok(())
    } else {
        Err(Error::AmbiguousInversion {
            curve: curve
                .iter()
                .map(|c| (c.psi, c.theta_hat, c.p_value))
                .collect(),
        })
    }
}

/// Index `i` of the sign-change bracket `[i, i+1]` closest to `imax`.
fn nearest_sign_change(curve: &[ThetaPoint], imax: usize) -> Option<usize> {
    let changes = |i: usize| {
        let (a, b) = (curve[i].theta_hat, curve[i + 1].theta_hat);
        a == 0.0 || (a < 0.0) != (b < 0.0)
    };
    (0..curve.len().saturating_sub(1))
        .filter(|&i| changes(i))
        .min_by_key(|&i| {
            let d = if i < imax { imax - (i + 1) } else { i - imax };
            (d, i)
        })
}

fn bisect_root(problem: &PsiProblem, a: ThetaPoint, b: ThetaPoint) -> Result<f64> {
    if a.theta_hat == 0.0 {
        return Ok(a.psi);
    }
    if b.theta_hat == 0.0 {
        return Ok(b.psi);
    }
    let (mut lo, mut hi) = (a, b);
    for _ in 0..200 {
        let mid = 0.5 * (lo.psi + hi.psi);
        let m = problem.evaluate(mid)?;
        if m.theta_hat.abs() < ROOT_TOLERANCE || hi.psi - lo.psi < 1e-12 {
            return Ok(mid);
        }
        if (m.theta_hat < 0.0) == (lo.theta_hat < 0.0) {
            lo = m;
        } else {
            hi = m;
        }
    }
    Ok(0.5 * (lo.psi + hi.psi))
}

/// Boundary between a rejected point `outer` and an accepted point `inner`.
fn bisect_level(problem: &PsiProblem, outer: f64, inner: f64, alpha: f64) -> Result<f64> {
    let (mut out, mut inn) = (outer, inner);
    while (out - inn).abs() > CI_TOLERANCE {
        let mid = 0.5 * (out + inn);
        if problem.p_value(mid)? >= alpha {
            inn = mid;
        } else {
            out = mid;
        }
    }
    Ok(inn)
}

// ---------------------------------------------------------------------------
// Survival advantage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalAdvantage {
    pub years: f64,
    pub ci_years: (f64, f64),
    pub median_actual: f64,
    pub median_latent: f64,
}

/// KM median of actual minus latent residual lifetime among performers who
/// won on their first nomination, at `psi` and at the interval ends.
pub fn survival_advantage(
    strata_all: &[AwardStratum],
    psi_hat: f64,
    ci: (f64, f64),
) -> Result<SurvivalAdvantage> {
    let (actual, latent) = advantage_at(strata_all, psi_hat)?;
    let at_lo = advantage_at(strata_all, ci.0)?;
    let at_hi = advantage_at(strata_all, ci.1)?;
    let a = at_lo.0 - at_lo.1;
    let b = at_hi.0 - at_hi.1;
    Ok(SurvivalAdvantage {
        years: actual - latent,
        ci_years: (a.min(b), a.max(b)),
        median_actual: actual,
        median_latent: latent,
    })
}

fn advantage_at(strata: &[AwardStratum], psi: f64) -> Result<(f64, f64)> {
    let mut actual = Vec::new();
    let mut latent = Vec::new();
    for c in strata.iter().flat_map(|s| &s.candidates) {
        if c.treated && c.numprenom == 0 {
            actual.push((c.observed, c.death_observed));
            let lt = censored_latent(c, Psi(psi))?;
            latent.push((lt.u_star_star, !lt.censored));
        }
    }
    if actual.is_empty() {
        return Err(Error::EmptyInput("no first-nomination winners".into()));
    }
    let m_actual = km(&actual)?
        .median
        .ok_or_else(|| Error::UndefinedMedian("actual residual lifetime".into()))?;
    let m_latent = km(&latent)?.median.ok_or_else(|| {
        Error::UndefinedMedian(format!("latent residual lifetime at psi = {psi}"))
    })?;
    Ok((m_actual, m_latent))
}

// ---------------------------------------------------------------------------
// Sensitivity analysis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityConfig {
    /// Odds ratios `exp(10·theta*)` for a ten-year latent-lifetime advantage.
    pub odds_ratios: Vec<f64>,
}

impl SensitivityConfig {
    pub fn theta_star(odds_ratio: f64) -> f64 {
        odds_ratio.ln() / 10.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub odds_ratio: f64,
    pub theta_star: f64,
    pub outcome: std::result::Result<(GEstimate, SurvivalAdvantage), Error>,
}

/// Repeats the inversion for each null value; failures stay in their row.
pub fn sensitivity_analysis(
    strata: &[AwardStratum],
    strata_all: &[AwardStratum],
    config: &DesignConfig,
    sens: &SensitivityConfig,
    search: &SearchGrid,
    level: f64,
) -> Vec<SensitivityRow> {
    sens.odds_ratios
        .iter()
        .map(|&or| {
            let theta_star = if or == 1.0 {
                0.0
            } else {
                SensitivityConfig::theta_star(or)
            };
            let outcome = if or > 0.0 {
                g_estimate_under(strata, config, search, level, theta_star).and_then(|g| {
                    let adv = survival_advantage(strata_all, g.psi_hat, g.ci)?;
                    Ok((g, adv))
                })
            } else {
                Err(Error::InvalidArgument(format!(
                    "odds ratio {or} must be positive"
                )))
            };
            SensitivityRow {
                odds_ratio: or,
                theta_star,
                outcome,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub n: usize,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return FiveNumber {
                min: f64::NAN,
                q1: f64::NAN,
                median: f64::NAN,
                q3: f64::NAN,
                max: f64::NAN,
                n: 0,
            };
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        FiveNumber {
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
            n: v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub group: usize,
    /// Nomage range `[lo, hi]` of the group.
    pub nomage_range: (f64, f64),
    pub winners: bool,
    pub summary: FiveNumber,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub rows: Vec<DiagnosticRow>,
    pub warnings: Vec<String>,
}

/// Five-number summaries of `U**(psi)` for winners and non-winners within
/// nomage quantile groups.
pub fn diagnostics(strata: &[AwardStratum], psi_hat: f64, groups: usize) -> Result<Diagnostics> {
    if groups < 2 {
        return Err(Error::InvalidArgument("need at least two groups".into()));
    }
    let records: Vec<_> = strata.iter().flat_map(|s| &s.candidates).collect();
    if records.is_empty() {
        return Err(Error::EmptyInput("no candidates".into()));
    }
    let mut ages: Vec<f64> = records.iter().map(|c| c.nomage).collect();
    ages.sort_by(|a, b| a.total_cmp(b));
    let mut cuts: Vec<f64> = (1..groups)
        .map(|j| quantile(&ages, j as f64 / groups as f64))
        .collect();
    cuts.dedup();
    cuts.retain(|&c| {
        c > ages[0] && c < ages[ages.len() - 1] || c == ages[ages.len() - 1] && c > ages[0]
    });
    let mut warnings = Vec::new();
    let effective = cuts.len() + 1;
    if effective < groups {
        warnings.push(format!(
            "nomage quantiles collapse: {effective} effective group(s) instead of {groups}"
        ));
    }
    let group_of = |age: f64| cuts.iter().filter(|&&c| age > c).count();
    let mut cells: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; effective];
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); effective];
    for c in &records {
        let g = group_of(c.nomage);
        let u = censored_latent(c, Psi(psi_hat))?.u_star_star;
        cells[g][usize::from(c.treated)].push(u);
        ranges[g].0 = ranges[g].0.min(c.nomage);
        ranges[g].1 = ranges[g].1.max(c.nomage);
    }
    let mut rows = Vec::with_capacity(2 * effective);
    for (g, cell) in cells.iter().enumerate() {
        for winners in [true, false] {
            let summary = FiveNumber::of(&cell[usize::from(winners)]);
            if summary.n == 0 {
                warnings.push(format!(
                    "group {} has no {}",
                    g + 1,
                    if winners { "winners" } else { "non-winners" }
                ));
            }
            rows.push(DiagnosticRow {
                group: g + 1,
                nomage_range: ranges[g],
                winners,
                summary,
            });
        }
    }
    Ok(Diagnostics { rows, warnings })
}
