//! Flow estimation, normalization and validation statistics.
//!
//! All functions are pure. The flow pipeline is:
//!
//! 1. correct raw MAU for platform penetration ([`adjust_mau`]),
//! 2. scale the relative MAU change by the official diaspora stock ([`delta_ua`]),
//! 3. express each country's change as a share of the total ([`shares`]).
//!
//! Trend comparisons against border-crossing data use [`weekly_changes`],
//! [`normalize_series`] and [`compare_trends`]; the language proxy is checked
//! with [`pearson`].

pub mod special;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    ArrivalSeries, CountryCode, DiasporaStock, DomainError, Epoch, MauSeries, PenetrationRate,
    WeekIndex,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("baseline MAU is zero; relative change is undefined")]
    ZeroBaseline,
    #[error("invalid MAU value {0}")]
    InvalidMau(f64),
    #[error("deltas sum to zero; shares are undefined")]
    ZeroTotal,
    #[error("no countries to compute shares over")]
    EmptyShares,
    #[error("prewar MAU {mau} exceeds population {population}")]
    PenetrationAboveOne { mau: u64, population: u64 },
    #[error("population must be positive")]
    ZeroPopulation,
    #[error("series is empty")]
    EmptySeries,
    #[error("series is all zeros and no normalizer was given")]
    ZeroMax,
    #[error("normalizer must be positive and finite, got {0}")]
    InvalidNormalizer(f64),
    #[error("normalized value {value} at position {position} is outside [0, 1]")]
    NormalizedOutOfRange { position: usize, value: f64 },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("input lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("series for {0} has no baseline week")]
    MissingBaseline(CountryCode),
    #[error("series have no weeks in common")]
    DisjointWeeks,
}

/// Penetration-adjusted MAU: `mau / rate`.
pub fn adjust_mau(mau: u64, rate: &PenetrationRate) -> f64 {
    rate.adjust(mau as f64)
}

/// Platform penetration as prewar MAU over the population aged 13 and over.
pub fn estimate_penetration(
    country: CountryCode,
    mau_prewar: u64,
    population_13plus: u64,
) -> Result<PenetrationRate, EstimateError> {
    if population_13plus == 0 {
        return Err(EstimateError::ZeroPopulation);
    }
    if mau_prewar > population_13plus {
        return Err(EstimateError::PenetrationAboveOne {
            mau: mau_prewar,
            population: population_13plus,
        });
    }
    let rate = mau_prewar as f64 / population_13plus as f64;
    Ok(PenetrationRate::new(country, rate)?)
}

/// Stock-scaled change: `stock * (now - baseline) / baseline`.
///
/// MAU inputs are reals so that adjusted series can be used directly; the
/// penetration rate cancels in the ratio, so both bounds give the same value
/// up to rounding.
pub fn delta_ua(stock: &DiasporaStock, mau_now: f64, mau_baseline: f64) -> Result<f64, EstimateError> {
    for v in [mau_now, mau_baseline] {
        if !v.is_finite() || v < 0.0 {
            return Err(EstimateError::InvalidMau(v));
        }
    }
    if mau_baseline == 0.0 {
        return Err(EstimateError::ZeroBaseline);
    }
    // Multiply before dividing: with integer inputs the product is exact and
    // the result is exact whenever the quotient is an integer.
    Ok(stock.stock as f64 * (mau_now - mau_baseline) / mau_baseline)
}

/// Result of [`shares`].
#[derive(Clone, Debug, PartialEq)]
pub struct ShareTable {
    pub shares: BTreeMap<CountryCode, f64>,
    pub total: f64,
    /// Set when the deltas do not all have the same sign, in which case
    /// individual shares can fall outside `[0, 1]`.
    pub mixed_signs: bool,
}

/// Each country's fraction of the summed change.
pub fn shares(deltas: &BTreeMap<CountryCode, f64>) -> Result<ShareTable, EstimateError> {
    if deltas.is_empty() {
        return Err(EstimateError::EmptyShares);
    }
    for (c, v) in deltas {
        c.as_destination()?;
        if !v.is_finite() {
            return Err(EstimateError::NonFinite);
        }
    }
    let total: f64 = deltas.values().sum();
    if total == 0.0 {
        return Err(EstimateError::ZeroTotal);
    }
    let has_pos = deltas.values().any(|&v| v > 0.0);
    let has_neg = deltas.values().any(|&v| v < 0.0);
    let mixed_signs = has_pos && has_neg;
    if mixed_signs {
        warn!("share inputs have mixed signs; shares may fall outside [0, 1]");
    }
    Ok(ShareTable {
        shares: deltas.iter().map(|(&c, &v)| (c, v / total)).collect(),
        total,
        mixed_signs,
    })
}

/// Divides each value by `normalizer`, or by the series maximum when none is given.
///
/// Every output must land in `[0, 1]`.
pub fn normalize_values(values: &[f64], normalizer: Option<f64>) -> Result<(Vec<f64>, f64), EstimateError> {
    if values.is_empty() {
        return Err(EstimateError::EmptySeries);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EstimateError::NonFinite);
    }
    let norm = match normalizer {
        Some(n) if n.is_finite() && n > 0.0 => n,
        Some(n) => return Err(EstimateError::InvalidNormalizer(n)),
        None => {
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max <= 0.0 {
                return Err(EstimateError::ZeroMax);
            }
            max
        }
    };
    let out: Vec<f64> = values.iter().map(|v| v / norm).collect();
    if let Some((position, &value)) = out
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(EstimateError::NormalizedOutOfRange { position, value });
    }
    Ok((out, norm))
}

/// Weekly values scaled into `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSeries {
    pub country: CountryCode,
    pub values: BTreeMap<WeekIndex, f64>,
    pub normalizer: f64,
}

pub fn normalize_series(
    country: CountryCode,
    series: &BTreeMap<WeekIndex, f64>,
    normalizer: Option<f64>,
) -> Result<NormalizedSeries, EstimateError> {
    let raw: Vec<f64> = series.values().copied().collect();
    let (scaled, normalizer) = normalize_values(&raw, normalizer)?;
    Ok(NormalizedSeries {
        country,
        values: series.keys().copied().zip(scaled).collect(),
        normalizer,
    })
}

/// Pearson correlation with its two-sided t-test p-value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Sample Pearson correlation of `x` and `y`.
///
/// Moments are accumulated in a single streaming pass (Welford updates). The
/// p-value tests `r = 0` against Student's t with `n - 2` degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult, EstimateError> {
    if x.len() != y.len() {
        return Err(EstimateError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(EstimateError::TooFewPoints { needed: 3, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EstimateError::NonFinite);
    }

    let (mut mean_x, mut mean_y) = (0.0, 0.0);
    let (mut m2_x, mut m2_y, mut co) = (0.0, 0.0, 0.0);
    for (k, (&xi, &yi)) in x.iter().zip(y).enumerate() {
        let count = (k + 1) as f64;
        let dx = xi - mean_x;
        mean_x += dx / count;
        let dy = yi - mean_y;
        mean_y += dy / count;
        m2_x += dx * (xi - mean_x);
        m2_y += dy * (yi - mean_y);
        co += dx * (yi - mean_y);
    }
    if m2_x <= 0.0 || m2_y <= 0.0 {
        return Err(EstimateError::ZeroVariance);
    }
    let r = (co / (m2_x.sqrt() * m2_y.sqrt())).clamp(-1.0, 1.0);

    let df = (n - 2) as f64;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        special::student_t_two_sided(t, df)
    };
    Ok(CorrelationResult { r, p_value, n })
}

/// Cumulative change from the baseline week: `MAU(w_k) - MAU(w0)` for every `k > 0`.
pub fn weekly_changes(series: &MauSeries) -> Result<BTreeMap<WeekIndex, f64>, EstimateError> {
    if series.len() < 2 {
        return Err(EstimateError::TooFewPoints {
            needed: 2,
            got: series.len(),
        });
    }
    let base = series
        .get(WeekIndex::BASELINE)
        .ok_or(EstimateError::MissingBaseline(series.country()))?;
    Ok(series
        .values()
        .range(WeekIndex(1)..)
        .map(|(&w, &v)| (w, v - base))
        .collect())
}

/// Week-over-week change for every week after the first.
pub fn weekly_increments(series: &MauSeries) -> Result<BTreeMap<WeekIndex, f64>, EstimateError> {
    if series.len() < 2 {
        return Err(EstimateError::TooFewPoints {
            needed: 2,
            got: series.len(),
        });
    }
    Ok(series
        .values()
        .iter()
        .zip(series.values().iter().skip(1))
        .map(|((_, prev), (&w, cur))| (w, cur - prev))
        .collect())
}

/// Cumulative arrivals at the start of each requested week.
///
/// Weeks with no data on or before their start date are omitted.
pub fn resample_arrivals(
    arrivals: &ArrivalSeries,
    epoch: Epoch,
    weeks: impl IntoIterator<Item = WeekIndex>,
) -> BTreeMap<WeekIndex, f64> {
    weeks
        .into_iter()
        .filter_map(|w| {
            let date: NaiveDate = epoch.week_start(w);
            // A week boundary past the end of the data has no observation.
            let (last, _) = arrivals.last()?;
            if date > last {
                return None;
            }
            arrivals.as_of(date).map(|v| (w, v as f64))
        })
        .collect()
}

/// Per-week absolute gap between two normalized trends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendComparison {
    pub gaps: BTreeMap<WeekIndex, f64>,
    pub max_gap_week: WeekIndex,
    pub max_gap: f64,
}

pub fn compare_trends(
    fb: &NormalizedSeries,
    unhcr: &NormalizedSeries,
) -> Result<TrendComparison, EstimateError> {
    let gaps: BTreeMap<WeekIndex, f64> = fb
        .values
        .iter()
        .filter_map(|(w, a)| unhcr.values.get(w).map(|b| (*w, (a - b).abs())))
        .collect();
    // First week wins ties.
    let (max_gap_week, max_gap) = gaps
        .iter()
        .fold(None, |best: Option<(WeekIndex, f64)>, (&w, &g)| match best {
            Some((_, bg)) if bg >= g => best,
            _ => Some((w, g)),
        })
        .ok_or(EstimateError::DisjointWeeks)?;
    Ok(TrendComparison {
        gaps,
        max_gap_week,
        max_gap,
    })
}
