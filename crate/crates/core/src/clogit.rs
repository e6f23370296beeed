//! Conditional logistic regression over award strata with exactly one winner
//! (McFadden's choice model), with the coefficient on the censored latent
//! time `U**(psi)` as the parameter of interest.
//!
//! For each stratum the contribution is `eta_winner - log(sum_j exp(eta_j))`
//! with `eta_j = beta·W_j + (theta + offset)·U**_j`. Per-stratum intercepts
//! cancel, so covariates may be centred freely.

use nalgebra::{DMatrix, DVector};

use crate::domain::{AwardStratum, CandidateRecord};
use crate::error::{Error, Result};
use crate::numeric::{
    chi2_sf, invert_spd, maximize, name_divergence, quantile, Coefficient, NewtonOptions,
    Objective, Standardizer,
};
use crate::rpsaftm::{censored_latent, Psi};

pub const LATENT_COLUMN: &str = "u_star_star";

#[derive(Debug, Clone, PartialEq)]
pub enum NomageBasis {
    /// nomage, nomage², nomage³.
    CubicPolynomial,
    /// Truncated-power cubic spline with knots at equally spaced quantiles.
    CubicSpline { knots: usize },
    /// No nomage terms; age enters only through `extra_covariates`.
    Omit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignConfig {
    pub nomage_basis: NomageBasis,
    pub include_numprenom: bool,
    /// Names resolved through [`CandidateRecord::covariate`].
    pub extra_covariates: Vec<String>,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            nomage_basis: NomageBasis::CubicPolynomial,
            include_numprenom: true,
            extra_covariates: Vec::new(),
        }
    }
}

/// A [`DesignConfig`] resolved against a whole dataset: spline knots are
/// fixed here, not per stratum.
#[derive(Debug, Clone)]
pub struct Design {
    pub config: DesignConfig,
    pub knots: Vec<f64>,
    /// Covariate names, excluding the latent-time column.
    pub names: Vec<String>,
    pub warnings: Vec<String>,
}

impl Design {
    pub fn prepare(strata: &[AwardStratum], config: &DesignConfig) -> Result<Design> {
        if let NomageBasis::CubicSpline { knots } = config.nomage_basis {
            if !(1..=4).contains(&knots) {
                return Err(Error::InvalidArgument(format!(
                    "spline needs 1 to 4 knots, got {knots}"
                )));
            }
        }
        let mut ages: Vec<f64> = strata
            .iter()
            .flat_map(|s| s.candidates.iter().map(|c| c.nomage))
            .collect();
        ages.sort_by(|a, b| a.total_cmp(b));
        let knots = match config.nomage_basis {
            NomageBasis::CubicSpline { knots } if !ages.is_empty() => (1..=knots)
                .map(|j| quantile(&ages, j as f64 / (knots + 1) as f64))
                .collect(),
            _ => Vec::new(),
        };
        let mut names = Vec::new();
        match config.nomage_basis {
            NomageBasis::CubicPolynomial => {
                names.extend(["nomage", "nomage.square", "nomage.cubic"].map(String::from))
            }
            NomageBasis::CubicSpline { .. } => {
                names.extend(["nomage", "nomage.square", "nomage.cubic"].map(String::from));
                names.extend((1..=knots.len()).map(|k| format!("nomage.knot{k}")));
            }
            NomageBasis::Omit => {}
        }
        if config.include_numprenom {
            names.push("numprenom".into());
        }
        names.extend(config.extra_covariates.iter().cloned());

        let mut design = Design {
            config: config.clone(),
            knots,
            names,
            warnings: Vec::new(),
        };
        let rows: Vec<Vec<f64>> = strata
            .iter()
            .flat_map(|s| s.candidates.iter())
            .map(|c| design.raw_row(c))
            .collect::<Result<_>>()?;
        for (i, name) in design.names.iter().enumerate() {
            let constant = rows.windows(2).all(|w| w[0][i] == w[1][i]);
            if constant {
                design
                    .warnings
                    .push(format!("column `{name}` is constant across the dataset"));
            }
        }
        if ages.first() == ages.last() && config.nomage_basis != NomageBasis::Omit {
            design
                .warnings
                .push("nomage is identical for every candidate; basis is degenerate".into());
        }
        Ok(design)
    }

    fn raw_row(&self, c: &CandidateRecord) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(self.names.len());
        let x = c.nomage;
        if self.config.nomage_basis != NomageBasis::Omit {
            row.extend([x, x * x, x * x * x]);
            row.extend(self.knots.iter().map(|k| (x - k).max(0.0).powi(3)));
        }
        if self.config.include_numprenom {
            row.push(c.numprenom as f64);
        }
        for name in &self.config.extra_covariates {
            row.push(c.covariate(name).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "candidate `{}` lacks covariate `{name}`",
                    c.performer_id
                ))
            })?);
        }
        Ok(row)
    }

    /// All column names in design order, the latent time last.
    pub fn column_names(&self) -> Vec<String> {
        let mut n = self.names.clone();
        n.push(LATENT_COLUMN.into());
        n
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub performer_id: String,
    pub treated: bool,
    /// Covariates on the original scale followed by `U**(psi)`.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumDesign {
    pub award_index: u32,
    pub rows: Vec<DesignRow>,
    /// False for single-candidate strata, whose likelihood term is constant.
    pub informative: bool,
}

pub fn build_design(stratum: &AwardStratum, psi: Psi, design: &Design) -> Result<StratumDesign> {
    let rows = stratum
        .candidates
        .iter()
        .map(|c| {
            let mut values = design.raw_row(c)?;
            values.push(censored_latent(c, psi)?.u_star_star);
            Ok(DesignRow {
                performer_id: c.performer_id.clone(),
                treated: c.treated,
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StratumDesign {
        award_index: stratum.award_index,
        informative: rows.len() >= 2,
        rows,
    })
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: Vec<Coefficient>,
    /// Coefficient on `U**`, net of any offset.
    pub theta: Coefficient,
    /// Covariance over `(beta, theta)` on the original scale.
    pub covariance: DMatrix<f64>,
    pub loglik: f64,
    /// Score statistic for `theta = 0` (i.e. total coefficient = offset).
    pub score_stat: f64,
    pub p_value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTest {
    pub statistic: f64,
    pub p_value: f64,
    /// Score of the latent coefficient at the null; its sign is the side
    /// of the null on which the likelihood rises.
    pub score: f64,
}

/// One stratum prepared for the likelihood: standardized rows, the winner's
/// position and the raw latent times.
#[derive(Debug, Clone)]
struct StratumRows {
    x: Vec<Vec<f64>>,
    u: Vec<f64>,
    winner: usize,
}

/// Conditional-logit data at a fixed `psi`. Columns are the standardized
/// covariates followed by the standardized latent time.
#[derive(Debug, Clone)]
pub struct ClogitData {
    strata: Vec<StratumRows>,
    /// Maps original-scale rows to working rows, `x_w = T x`.
    transform: DMatrix<f64>,
    names: Vec<String>,
    warnings: Vec<String>,
}

impl ClogitData {
    pub fn new(strata: &[AwardStratum], psi: Psi, design: &Design) -> Result<Self> {
        let designs = strata
            .iter()
            .map(|s| build_design(s, psi, design))
            .collect::<Result<Vec<_>>>()?;
        Self::from_designs(&designs, design)
    }

    pub fn from_designs(designs: &[StratumDesign], design: &Design) -> Result<Self> {
        let informative: Vec<&StratumDesign> = designs.iter().filter(|d| d.informative).collect();
        if informative.len() < 2 {
            return Err(Error::TooFewStrata {
                found: informative.len(),
                needed: 2,
            });
        }
        // scale by within-stratum spread, the only variation the
        // conditional likelihood sees
        let deviations: Vec<Vec<f64>> = informative
            .iter()
            .flat_map(|d| {
                let n = d.rows.len() as f64;
                let width = d.rows[0].values.len();
                let centre: Vec<f64> = (0..width)
                    .map(|i| d.rows.iter().map(|r| r.values[i]).sum::<f64>() / n)
                    .collect();
                d.rows.iter().map(move |r| {
                    r.values
                        .iter()
                        .zip(&centre)
                        .map(|(v, c)| v - c)
                        .collect::<Vec<f64>>()
                })
            })
            .collect();
        let k = design.width();
        let transform = working_transform(&deviations, k + 1);

        let strata = informative
            .iter()
            .map(|d| {
                let winner = d
                    .rows
                    .iter()
                    .position(|r| r.treated)
                    .expect("stratum has a winner");
                StratumRows {
                    x: d.rows
                        .iter()
                        .map(|r| {
                            (&transform * DVector::from_column_slice(&r.values))
                                .iter()
                                .copied()
                                .collect()
                        })
                        .collect(),
                    u: d.rows.iter().map(|r| r.values[k]).collect(),
                    winner,
                }
            })
            .collect();
        Ok(ClogitData {
            strata,
            transform,
            names: design.column_names(),
            warnings: design.warnings.clone(),
        })
    }

    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    fn width(&self) -> usize {
        self.names.len()
    }

    /// Conditional log-likelihood at original-scale `(beta, theta)` with the
    /// latent-time coefficient shifted by `offset`.
    pub fn loglik(&self, beta: &[f64], theta: f64, offset: f64) -> f64 {
        let mut params = beta.to_vec();
        params.push(theta);
        let std_params = self
            .transform
            .transpose()
            .lu()
            .solve(&DVector::from_vec(params))
            .expect("working transform is invertible");
        Likelihood {
            data: self,
            offset,
            fixed_theta: None,
        }
        .evaluate(&std_params)
        .0
    }

    /// Unconstrained fit with `offset·U**` added to every linear predictor,
    /// plus the score test of `theta = 0`.
    pub fn fit(&self, theta_offset: f64) -> Result<FitResult> {
        let full = Likelihood {
            data: self,
            offset: theta_offset,
            fixed_theta: None,
        };
        let opt = maximize(
            &full,
            DVector::zeros(self.width()),
            NewtonOptions::default(),
        )
        .map_err(|e| name_divergence(e, &self.names))?;
        let cov_std = invert_spd(&opt.information)?;
        let k = self.width();
        let tt = self.transform.transpose();
        let beta = &tt * &opt.beta;
        let cov = &tt * cov_std * &self.transform;
        let coefs: Vec<Coefficient> = (0..k)
            .map(|i| Coefficient::new(self.names[i].clone(), beta[i], cov[(i, i)].sqrt()))
            .collect();
        let score = self.score_test(theta_offset)?;
        let (theta, beta) = coefs.split_last().expect("latent column present");
        Ok(FitResult {
            beta: beta.to_vec(),
            theta: theta.clone(),
            covariance: cov,
            loglik: opt.loglik,
            score_stat: score.statistic,
            p_value: score.p_value,
            converged: true,
            iterations: opt.iterations,
            warnings: self.warnings.clone(),
        })
    }

    /// Score test of `theta = theta_null` with `beta` profiled out.
    pub fn score_test(&self, theta_null: f64) -> Result<ScoreTest> {
        let k = self.width();
        let su = 1.0 / self.transform[(k - 1, k - 1)];
        let constrained = Likelihood {
            data: self,
            offset: 0.0,
            fixed_theta: Some(theta_null * su),
        };
        let opt = maximize(
            &constrained,
            DVector::zeros(k - 1),
            NewtonOptions::default(),
        )
        .map_err(|e| name_divergence(e, &self.names))?;
        let mut at = opt.beta.clone().resize_vertically(k, 0.0);
        at[k - 1] = theta_null * su;
        let (_, score, info) = Likelihood {
            data: self,
            offset: 0.0,
            fixed_theta: None,
        }
        .evaluate(&at);
        let inv = invert_spd(&info)?;
        let statistic = (score[k - 1].powi(2) * inv[(k - 1, k - 1)]).max(0.0);
        Ok(ScoreTest {
            statistic,
            p_value: chi2_sf(statistic, 1.0),
            score: score[k - 1],
        })
    }
}

/// Whitens the covariate block against its within-stratum covariance so
/// that collinear columns such as polynomial terms get well-conditioned
/// working coefficients; the latent column, last, is only scaled. Falls back
/// to per-column scaling when the covariance is singular.
fn working_transform(deviations: &[Vec<f64>], width: usize) -> DMatrix<f64> {
    let scale = Standardizer::fit(deviations, width).scale;
    let n = deviations.len().max(1) as f64;
    let p = width - 1;
    let mut t = DMatrix::from_diagonal(&DVector::from_iterator(
        width,
        scale.iter().map(|s| 1.0 / s),
    ));
    if p >= 2 {
        // scaled deviations have zero mean within each stratum
        let mut cov = DMatrix::<f64>::zeros(p, p);
        for r in deviations {
            for i in 0..p {
                for j in 0..=i {
                    cov[(i, j)] += r[i] / scale[i] * r[j] / scale[j] / n;
                }
            }
        }
        let cov = DMatrix::from_fn(p, p, |i, j| cov[(i.max(j), i.min(j))]);
        if let Some(chol) = cov.cholesky() {
            let l = chol.l();
            let well_posed = (0..p).all(|i| l[(i, i)] > 1e-6);
            if let (true, Some(l_inv)) = (well_posed, l.try_inverse()) {
                let block = l_inv * t.view((0, 0), (p, p));
                t.view_mut((0, 0), (p, p)).copy_from(&block);
            }
        }
    }
    t
}

/// Likelihood over standardized parameters. With `fixed_theta` set the
/// latent coefficient is held at that (standardized) value and only the
/// covariate coefficients are free.
struct Likelihood<'a> {
    data: &'a ClogitData,
    offset: f64,
    fixed_theta: Option<f64>,
}

impl Objective for Likelihood<'_> {
    fn dim(&self) -> usize {
        match self.fixed_theta {
            Some(_) => self.data.width() - 1,
            None => self.data.width(),
        }
    }

    fn evaluate(&self, params: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let k = self.data.width();
        let free = self.dim();
        let coef: Vec<f64> = match self.fixed_theta {
            Some(t) => params.iter().copied().chain(std::iter::once(t)).collect(),
            None => params.iter().copied().collect(),
        };
        let mut ll = 0.0;
        let mut g = DVector::zeros(free);
        let mut h = DMatrix::zeros(free, free);
        let mut eta = Vec::new();
        let mut xbar = vec![0.0; k];
        for s in &self.data.strata {
            eta.clear();
            eta.extend(s.x.iter().zip(&s.u).map(|(x, u)| {
                x.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>() + self.offset * u
            }));
            let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = eta.iter().map(|e| (e - m).exp()).sum();
            ll += eta[s.winner] - m - denom.ln();
            xbar.iter_mut().for_each(|v| *v = 0.0);
            for (x, e) in s.x.iter().zip(&eta) {
                let w = (e - m).exp() / denom;
                for i in 0..k {
                    xbar[i] += w * x[i];
                }
            }
            for i in 0..free {
                g[i] += s.x[s.winner][i] - xbar[i];
            }
            for (x, e) in s.x.iter().zip(&eta) {
                let w = (e - m).exp() / denom;
                for i in 0..free {
                    let di = x[i] - xbar[i];
                    for j in 0..=i {
                        h[(i, j)] += w * di * (x[j] - xbar[j]);
                    }
                }
            }
        }
        for i in 0..free {
            for j in 0..i {
                h[(j, i)] = h[(i, j)];
            }
        }
        (ll, g, h)
    }
}

pub fn fit(
    strata: &[AwardStratum],
    psi: Psi,
    design: &Design,
    theta_offset: f64,
) -> Result<FitResult> {
    ClogitData::new(strata, psi, design)?.fit(theta_offset)
}

pub fn score_test(
    strata: &[AwardStratum],
    psi: Psi,
    design: &Design,
    theta_null: f64,
) -> Result<ScoreTest> {
    ClogitData::new(strata, psi, design)?.score_test(theta_null)
}
