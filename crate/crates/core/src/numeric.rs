//! Shared numerical machinery: a damped Newton maximizer for concave
//! log-likelihoods, a plain logistic regression, and the distribution tails
//! used for p-values.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Log-likelihood with analytic first and second derivatives.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Returns `(loglik, score, information)` where information is the
    /// negative Hessian.
    fn evaluate(&self, beta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>);

    fn loglik(&self, beta: &DVector<f64>) -> f64 {
        self.evaluate(beta).0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub score_tol: f64,
    pub step_tol: f64,
    /// Any |coefficient| above this (on the standardized scale) is treated
    /// as divergence of a monotone likelihood.
    pub divergence: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iter: 100,
            score_tol: 1e-8,
            step_tol: 1e-10,
            divergence: 30.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonFit {
    pub beta: DVector<f64>,
    pub loglik: f64,
    pub score: DVector<f64>,
    pub information: DMatrix<f64>,
    pub iterations: usize,
}

impl NewtonFit {
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        invert_spd(&self.information)
    }
}

const DIVERGENCE_PREFIX: &str = "working index ";

/// Replaces the working index in a monotone-likelihood error with the
/// corresponding column name.
pub fn name_divergence(e: Error, names: &[String]) -> Error {
    match e {
        Error::MonotoneLikelihood(msg) => {
            let named = msg
                .strip_prefix(DIVERGENCE_PREFIX)
                .and_then(|i| i.parse::<usize>().ok())
                .and_then(|i| names.get(i))
                .cloned();
            Error::MonotoneLikelihood(named.unwrap_or(msg))
        }
        other => other,
    }
}

/// Newton iteration with step halving, started at `start`.
pub fn maximize<O: Objective>(
    objective: &O,
    start: DVector<f64>,
    opts: NewtonOptions,
) -> Result<NewtonFit> {
    let fit = newton(objective, start, opts)?;
    if !fit.beta.is_empty() && fit.beta.amax() > opts.divergence {
        return Err(Error::MonotoneLikelihood(format!(
            "{DIVERGENCE_PREFIX}{}",
            fit.beta.iamax()
        )));
    }
    Ok(fit)
}

fn newton<O: Objective>(
    objective: &O,
    start: DVector<f64>,
    opts: NewtonOptions,
) -> Result<NewtonFit> {
    let mut beta = start;
    let (mut ll, mut score, mut info) = objective.evaluate(&beta);
    if objective.dim() == 0 {
        return Ok(NewtonFit {
            beta,
            loglik: ll,
            score,
            information: info,
            iterations: 0,
        });
    }
    for iter in 0..opts.max_iter {
        if score.amax() < opts.score_tol {
            return Ok(NewtonFit {
                beta,
                loglik: ll,
                score,
                information: info,
                iterations: iter,
            });
        }
        let step = solve_spd(&info, &score)?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &beta + &step * scale;
            let eval = objective.evaluate(&trial);
            if eval.0.is_finite() && eval.0 >= ll - 1e-12 * ll.abs().max(1.0) {
                accepted = Some((trial, eval));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, (nll, nscore, ninfo))) = accepted else {
            return Err(Error::NonConvergence {
                iterations: iter,
                max_score: score.amax(),
                last: beta.iter().copied().collect(),
            });
        };
        let change = (&next - &beta).amax();
        beta = next;
        ll = nll;
        score = nscore;
        info = ninfo;
        if beta.amax() > opts.divergence {
            return Err(Error::MonotoneLikelihood(format!(
                "{DIVERGENCE_PREFIX}{}",
                beta.iamax()
            )));
        }
        if change < opts.step_tol {
            return Ok(NewtonFit {
                beta,
                loglik: ll,
                score,
                information: info,
                iterations: iter + 1,
            });
        }
    }
    if score.amax() < opts.score_tol {
        return Ok(NewtonFit {
            beta,
            loglik: ll,
            score,
            information: info,
            iterations: opts.max_iter,
        });
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        max_score: score.amax(),
        last: beta.iter().copied().collect(),
    })
}

fn checked_cholesky(a: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let chol = a.clone().cholesky().ok_or_else(|| {
        Error::RankDeficient("information matrix is not positive definite".into())
    })?;
    let l = chol.l_dirty();
    let diag: Vec<f64> = (0..a.nrows()).map(|i| l[(i, i)] * l[(i, i)]).collect();
    let top = diag.iter().copied().fold(0.0, f64::max);
    if diag.iter().any(|&d| !(d > top * 1e-11)) {
        return Err(Error::RankDeficient(
            "information matrix is numerically singular".into(),
        ));
    }
    Ok(chol)
}

pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(checked_cholesky(a)?.solve(b))
}

pub fn invert_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = checked_cholesky(a)?.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Upper tail of the chi-square distribution.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    let dist = ChiSquared::new(df).expect("positive degrees of freedom");
    dist.sf(x).clamp(0.0, 1.0)
}

/// Two-sided normal p-value for a z statistic.
pub fn normal_two_sided(z: f64) -> f64 {
    let n = Normal::standard();
    (2.0 * n.sf(z.abs())).clamp(0.0, 1.0)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Sample quantile with linear interpolation between order statistics
/// (the default definition in most statistics packages).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// One-sample Kolmogorov–Smirnov test against Uniform(0, 1).
/// Returns `(D, p)` using the asymptotic distribution with the usual
/// small-sample correction.
pub fn ks_uniform(sample: &[f64]) -> (f64, f64) {
    let mut xs: Vec<f64> = sample.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    (d, kolmogorov_sf(lambda))
}

fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Column centring and scaling. Columns with zero spread are left unscaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>], width: usize) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; width];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; width];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn identity(width: usize) -> Self {
        Standardizer {
            mean: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Maps coefficients and covariance from the standardized scale back to
    /// the original covariate scale (slopes only; centring affects intercepts).
    pub fn unscale(&self, beta: &DVector<f64>, cov: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let k = beta.len();
        let b = DVector::from_iterator(k, (0..k).map(|i| beta[i] / self.scale[i]));
        let c = DMatrix::from_fn(k, k, |i, j| cov[(i, j)] / (self.scale[i] * self.scale[j]));
        (b, c)
    }
}

/// Coefficient summary with a Wald test.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient {
    pub name: String,
    pub coef: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
}

impl Coefficient {
    pub fn new(name: impl Into<String>, coef: f64, se: f64) -> Self {
        let z = coef / se;
        Coefficient {
            name: name.into(),
            coef,
            se,
            z,
            p_value: normal_two_sided(z),
        }
    }

    pub fn exp_coef(&self) -> f64 {
        self.coef.exp()
    }

    /// Wald interval on the coefficient scale.
    pub fn wald_ci(&self, level: f64) -> (f64, f64) {
        let q = normal_quantile(0.5 + level / 2.0);
        (self.coef - q * self.se, self.coef + q * self.se)
    }
}

/// Binary logistic regression `P(y = 1) = 1 / (1 + exp(-x·b))`; `x` should
/// carry its own intercept column when one is wanted.
pub struct LogisticProblem<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [bool],
}

impl Objective for LogisticProblem<'_> {
    fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    fn evaluate(&self, beta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let k = self.dim();
        let mut ll = 0.0;
        let mut g = DVector::zeros(k);
        let mut h = DMatrix::zeros(k, k);
        for (row, &y) in self.x.iter().zip(self.y) {
            let eta: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            // log(1 + e^eta) computed stably
            let softplus = if eta > 0.0 {
                eta + (-eta).exp().ln_1p()
            } else {
                eta.exp().ln_1p()
            };
            ll += if y { eta - softplus } else { -softplus };
            let p = 1.0 / (1.0 + (-eta).exp());
            let r = if y { 1.0 - p } else { -p };
            let w = p * (1.0 - p);
            for i in 0..k {
                g[i] += r * row[i];
                for j in 0..=i {
                    h[(i, j)] += w * row[i] * row[j];
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                h[(j, i)] = h[(i, j)];
            }
        }
        (ll, g, h)
    }
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coefficients: Vec<Coefficient>,
    pub loglik: f64,
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
}

/// Fits a logistic regression. Columns are standardized internally, except
/// a column named `"(intercept)"`, and reported on the original scale.
pub fn logistic_fit(names: &[String], x: &[Vec<f64>], y: &[bool]) -> Result<LogisticFit> {
    if x.is_empty() {
        return Err(Error::EmptyInput("logistic regression without rows".into()));
    }
    let width = names.len();
    let mut std = Standardizer::fit(x, width);
    for (i, n) in names.iter().enumerate() {
        if n == "(intercept)" {
            std.mean[i] = 0.0;
            std.scale[i] = 1.0;
        }
    }
    // centring shifts the intercept; keep centring only when an intercept exists
    let has_intercept = names.iter().any(|n| n == "(intercept)");
    if !has_intercept {
        std.mean.iter_mut().for_each(|m| *m = 0.0);
    }
    let xs: Vec<Vec<f64>> = x.iter().map(|r| std.apply(r)).collect();
    let problem = LogisticProblem { x: &xs, y };
    let fit = maximize(&problem, DVector::zeros(width), NewtonOptions::default())
        .map_err(|e| name_divergence(e, names))?;
    let cov = fit.covariance()?;
    let (mut beta, cov) = std.unscale(&fit.beta, &cov);
    let mut cov = cov;
    if has_intercept {
        // undo centring: intercept_orig = b0 - sum(b_j * mean_j / scale_j)
        let ic = names.iter().position(|n| n == "(intercept)").unwrap();
        let shift: f64 = (0..width)
            .filter(|&j| j != ic)
            .map(|j| beta[j] * std.mean[j])
            .sum();
        beta[ic] -= shift;
        // covariance of the shifted intercept: a' C a with a = e_ic - mean
        let mut a = DVector::zeros(width);
        for j in 0..width {
            a[j] = if j == ic { 1.0 } else { -std.mean[j] };
        }
        let ca = &cov * &a;
        let var_ic = a.dot(&ca);
        for j in 0..width {
            if j != ic {
                cov[(ic, j)] = ca[j];
                cov[(j, ic)] = ca[j];
            }
        }
        cov[(ic, ic)] = var_ic;
    }
    let coefficients = names
        .iter()
        .enumerate()
        .map(|(i, n)| Coefficient::new(n.clone(), beta[i], cov[(i, i)].sqrt()))
        .collect();
    Ok(LogisticFit {
        coefficients,
        loglik: fit.loglik,
        covariance: cov,
        iterations: fit.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi2_and_normal_tails() {
        assert!((chi2_sf(3.841458820694124, 1.0) - 0.05).abs() < 1e-10);
        assert_eq!(chi2_sf(0.0, 3.0), 1.0);
        assert!((normal_two_sided(1.959963984540054) - 0.05).abs() < 1e-10);
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert!((quantile(&xs, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&xs, 1.0 / 3.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ks_accepts_uniform_grid_and_rejects_skew() {
        let grid: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let (d, p) = ks_uniform(&grid);
        assert!(d <= 0.0005 + 1e-12);
        assert!(p > 0.99);
        let skew: Vec<f64> = grid.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&skew).1 < 1e-6);
    }

    #[test]
    fn logistic_matches_closed_form_two_group() {
        // y ~ intercept + group; MLE reproduces group log-odds exactly
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (g, n, k) in [(0.0, 40, 10), (1.0, 60, 36)] {
            for i in 0..n {
                x.push(vec![1.0, g]);
                y.push(i < k);
            }
        }
        let names = vec!["(intercept)".to_string(), "g".to_string()];
        let fit = logistic_fit(&names, &x, &y).unwrap();
        let l0 = (10.0f64 / 30.0).ln();
        let l1 = (36.0f64 / 24.0).ln();
        assert!((fit.coefficients[0].coef - l0).abs() < 1e-9);
        assert!((fit.coefficients[1].coef - (l1 - l0)).abs() < 1e-9);
        let se = (1.0 / 10.0 + 1.0 / 30.0 + 1.0 / 36.0 + 1.0 / 24.0f64).sqrt();
        assert!((fit.coefficients[1].se - se).abs() < 1e-8);
    }

    #[test]
    fn separation_is_reported() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<bool> = (0..10).map(|i| i >= 5).collect();
        let names = vec!["(intercept)".to_string(), "x".to_string()];
        assert!(logistic_fit(&names, &x, &y).is_err());
    }
}
