//! Latent failure-time transform of the rank-preserving structural AFT model
//! and artificial censoring of the transformed times.
//!
//! Winning for the first time multiplies the remaining lifetime by
//! `exp(-psi)`, so the counterfactual "never won" residual lifetime of a
//! candidate whose first win is at or after the award date is
//! `(F - D) + exp(psi) * (T - (F - D))`. Candidates who never won, or had
//! already won before the award, keep their observed time.

use crate::domain::{days_to_years, CandidateRecord, DateStamp};
use crate::error::{Error, Result};

/// Slack allowed between a first win and the end of follow-up.
pub const CONSISTENCY_TOLERANCE_YEARS: f64 = 2.0 / crate::domain::DAYS_PER_YEAR;

/// Log-scale effect of winning on remaining lifetime; zero means no effect.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Psi(pub f64);

impl Psi {
    pub const ZERO: Psi = Psi(0.0);

    /// Multiplier applied to remaining lifetime by winning.
    pub fn survival_multiplier(self) -> f64 {
        (-self.0).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentTime {
    pub u: f64,
    pub c_psi: f64,
    pub u_star_star: f64,
    pub censored: bool,
}

pub fn latent_time(
    observed: f64,
    first_win: Option<DateStamp>,
    award_date: DateStamp,
    psi: Psi,
) -> Result<f64> {
    if observed < 0.0 {
        return Err(Error::InconsistentRecord(format!(
            "negative residual lifetime {observed}"
        )));
    }
    match first_win {
        Some(f) if f >= award_date => {
            let lag = days_to_years(f.days_since(award_date));
            if lag > observed + CONSISTENCY_TOLERANCE_YEARS {
                return Err(Error::InconsistentRecord(format!(
                    "first win {lag:.4} years after the award but follow-up ends at {observed:.4}"
                )));
            }
            Ok(transform(observed, lag, psi))
        }
        _ => Ok(observed),
    }
}

/// `lag + exp(psi) * (observed - lag)` for a first win `lag` years after the award.
pub(crate) fn transform(observed: f64, lag: f64, psi: Psi) -> f64 {
    if psi.0 == 0.0 {
        return observed;
    }
    lag + psi.0.exp() * (observed - lag)
}

pub fn artificial_censor_time(
    censor_date: DateStamp,
    award_date: DateStamp,
    first_win: Option<DateStamp>,
    psi: Psi,
) -> Result<f64> {
    let days = censor_date.days_since(award_date);
    if days < 0 {
        return Err(Error::InvalidCensoring { days: -days });
    }
    let base = days_to_years(days);
    match first_win {
        Some(f) if f < award_date => Ok(base),
        // never-winners share the winners' rule
        _ => Ok(base.min(base * psi.0.exp())),
    }
}

pub fn censored_latent(record: &CandidateRecord, psi: Psi) -> Result<LatentTime> {
    let u = latent_time(record.observed, record.first_win, record.award_date, psi)?;
    let c_psi =
        artificial_censor_time(record.censor_date, record.award_date, record.first_win, psi)?;
    let u_star_star = u.min(c_psi);
    let censored = u_star_star < u - 1e-12 || !record.death_observed;
    Ok(LatentTime {
        u,
        c_psi,
        u_star_star,
        censored,
    })
}
