//! Core value types shared by ingestion, estimation and simulation.
//!
//! Everything here is an immutable value. Constructors validate their
//! invariants so downstream code can rely on them without re-checking.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid country code {0:?}: expected two ASCII uppercase letters")]
    InvalidCountry(String),
    #[error("country {0} is the origin and cannot be used as a destination")]
    OriginAsDestination(CountryCode),
    #[error("invalid language tag {0:?}")]
    InvalidLanguage(String),
    #[error("penetration rate {rate} for {country} is outside (0, 1]")]
    InvalidPenetration { country: CountryCode, rate: f64 },
    #[error("invalid value {value} for {what}")]
    InvalidValue { what: &'static str, value: f64 },
    #[error("duplicate week {0} in series")]
    DuplicateWeek(WeekIndex),
    #[error("cumulative arrivals for {country} decrease on {date} ({previous} -> {value})")]
    NonMonotoneArrivals {
        country: CountryCode,
        date: NaiveDate,
        previous: u64,
        value: u64,
    },
    #[error("duplicate date {date} in arrival series for {country}")]
    DuplicateDate { country: CountryCode, date: NaiveDate },
}

/// ISO 3166-1 alpha-2 country code.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    /// Ukraine, reserved as the origin of all flows.
    pub const ORIGIN: CountryCode = CountryCode(*b"UA");

    pub fn new(code: &str) -> Result<Self, DomainError> {
        let bytes = code.as_bytes();
        if bytes.len() == 2 && bytes.iter().all(u8::is_ascii_uppercase) {
            Ok(CountryCode([bytes[0], bytes[1]]))
        } else {
            Err(DomainError::InvalidCountry(code.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        // Only ever built from validated ASCII.
        std::str::from_utf8(&self.0).expect("country code is ASCII")
    }

    pub fn is_origin(&self) -> bool {
        *self == Self::ORIGIN
    }

    /// Returns the code unchanged unless it is the reserved origin.
    pub fn as_destination(self) -> Result<Self, DomainError> {
        if self.is_origin() {
            Err(DomainError::OriginAsDestination(self))
        } else {
            Ok(self)
        }
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CountryCode({})", self.as_str())
    }
}

impl FromStr for CountryCode {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CountryCode::new(s)
    }
}

impl Serialize for CountryCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CountryCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        CountryCode::new(&s).map_err(serde::de::Error::custom)
    }
}

/// Audience language attribute, e.g. `uk` for Ukrainian.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct LanguageTag(String);

impl LanguageTag {
    pub fn new(tag: &str) -> Result<Self, DomainError> {
        let ok = (2..=8).contains(&tag.len())
            && tag
                .chars()
                .all(|c| c.is_ascii_lowercase() || c == '-' || c.is_ascii_digit())
            && tag.starts_with(|c: char| c.is_ascii_lowercase());
        if ok {
            Ok(LanguageTag(tag.to_string()))
        } else {
            Err(DomainError::InvalidLanguage(tag.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for LanguageTag {
    fn default() -> Self {
        LanguageTag("uk".to_string())
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for LanguageTag {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LanguageTag::new(s)
    }
}

impl Serialize for LanguageTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for LanguageTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        LanguageTag::new(&s).map_err(serde::de::Error::custom)
    }
}

/// Week number relative to the epoch week `w0`; negative weeks are prewar.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeekIndex(pub i32);

impl WeekIndex {
    pub const BASELINE: WeekIndex = WeekIndex(0);

    pub fn index(self) -> i32 {
        self.0
    }
}

impl fmt::Display for WeekIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

impl FromStr for WeekIndex {
    type Err = std::num::ParseIntError;

    /// Accepts `5`, `w5`, `-1` or `w-1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix('w').unwrap_or(s);
        digits.parse().map(WeekIndex)
    }
}

/// Start date of week `w0`. Weeks are 7-day bins counted from this date.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Epoch(pub NaiveDate);

impl Epoch {
    pub fn new(date: NaiveDate) -> Self {
        Epoch(date)
    }

    pub fn date(self) -> NaiveDate {
        self.0
    }

    pub fn week_of(self, date: NaiveDate) -> WeekIndex {
        make_week_index(date, self.0)
    }

    pub fn week_of_timestamp(self, at: DateTime<Utc>) -> WeekIndex {
        self.week_of(at.date_naive())
    }

    /// First day of `week`.
    pub fn week_start(self, week: WeekIndex) -> NaiveDate {
        self.0 + Duration::days(7 * i64::from(week.0))
    }
}

impl Default for Epoch {
    fn default() -> Self {
        Epoch(NaiveDate::from_ymd_opt(2022, 2, 24).expect("valid date"))
    }
}

impl fmt::Display for Epoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `floor((date - epoch) / 7 days)`.
pub fn make_week_index(date: NaiveDate, epoch: NaiveDate) -> WeekIndex {
    let days = (date - epoch).num_days();
    WeekIndex(days.div_euclid(7) as i32)
}

/// One audience estimate for a (country, language, week) triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MauObservation {
    pub country: CountryCode,
    pub language: LanguageTag,
    pub week: WeekIndex,
    pub epoch: Epoch,
    pub mau: u64,
    pub collected_at: DateTime<Utc>,
}

impl MauObservation {
    pub fn key(&self) -> ObservationKey {
        ObservationKey {
            country: self.country,
            language: self.language.clone(),
            week: self.week,
        }
    }
}

/// Uniqueness key of an observation within a snapshot store.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObservationKey {
    pub country: CountryCode,
    pub language: LanguageTag,
    pub week: WeekIndex,
}

impl fmt::Display for ObservationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.country, self.language, self.week)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    Original,
    Adjusted,
}

/// Weekly MAU values for one country.
///
/// Original series hold raw audience counts. Adjusted series hold the
/// penetration-corrected values and so may be fractional.
#[derive(Clone, Debug, PartialEq)]
pub struct MauSeries {
    country: CountryCode,
    kind: SeriesKind,
    values: BTreeMap<WeekIndex, f64>,
}

impl MauSeries {
    /// Builds an original series; rejects duplicate weeks.
    pub fn original<I>(country: CountryCode, points: I) -> Result<Self, DomainError>
    where
        I: IntoIterator<Item = (WeekIndex, u64)>,
    {
        let mut values = BTreeMap::new();
        for (week, mau) in points {
            if values.insert(week, mau as f64).is_some() {
                return Err(DomainError::DuplicateWeek(week));
            }
        }
        Ok(MauSeries {
            country,
            kind: SeriesKind::Original,
            values,
        })
    }

    /// Applies the penetration correction to every point.
    pub fn adjusted(&self, rate: &PenetrationRate) -> MauSeries {
        MauSeries {
            country: self.country,
            kind: SeriesKind::Adjusted,
            values: self
                .values
                .iter()
                .map(|(&w, &v)| (w, rate.adjust(v)))
                .collect(),
        }
    }

    pub fn country(&self) -> CountryCode {
        self.country
    }

    pub fn kind(&self) -> SeriesKind {
        self.kind
    }

    pub fn get(&self, week: WeekIndex) -> Option<f64> {
        self.values.get(&week).copied()
    }

    pub fn values(&self) -> &BTreeMap<WeekIndex, f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Official count of the diaspora residing in a country.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiasporaStock {
    pub country: CountryCode,
    pub stock: u64,
    pub reference_year: i32,
}

/// Share of a population that uses the platform, in `(0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PenetrationRate {
    country: CountryCode,
    rate: f64,
}

impl PenetrationRate {
    pub fn new(country: CountryCode, rate: f64) -> Result<Self, DomainError> {
        if rate.is_finite() && rate > 0.0 && rate <= 1.0 {
            Ok(PenetrationRate { country, rate })
        } else {
            Err(DomainError::InvalidPenetration { country, rate })
        }
    }

    pub fn country(&self) -> CountryCode {
        self.country
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Divides `value` by the rate.
    pub fn adjust(&self, value: f64) -> f64 {
        value / self.rate
    }
}

/// Cumulative arrivals by calendar date for one country.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalSeries {
    country: CountryCode,
    values: BTreeMap<NaiveDate, u64>,
}

impl ArrivalSeries {
    /// Builds a series, rejecting duplicate dates and decreasing totals.
    pub fn new<I>(country: CountryCode, points: I) -> Result<Self, DomainError>
    where
        I: IntoIterator<Item = (NaiveDate, u64)>,
    {
        let mut values = BTreeMap::new();
        for (date, value) in points {
            if values.insert(date, value).is_some() {
                return Err(DomainError::DuplicateDate { country, date });
            }
        }
        let mut previous: Option<u64> = None;
        for (&date, &value) in &values {
            if let Some(prev) = previous {
                if value < prev {
                    return Err(DomainError::NonMonotoneArrivals {
                        country,
                        date,
                        previous: prev,
                        value,
                    });
                }
            }
            previous = Some(value);
        }
        Ok(ArrivalSeries { country, values })
    }

    pub fn country(&self) -> CountryCode {
        self.country
    }

    pub fn values(&self) -> &BTreeMap<NaiveDate, u64> {
        &self.values
    }

    /// Latest cumulative total on or before `date`.
    pub fn as_of(&self, date: NaiveDate) -> Option<u64> {
        self.values.range(..=date).next_back().map(|(_, &v)| v)
    }

    pub fn last(&self) -> Option<(NaiveDate, u64)> {
        self.values.iter().next_back().map(|(&d, &v)| (d, v))
    }
}

/// Which MAU series a flow estimate was computed from.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    /// Raw audience counts.
    Lower,
    /// Penetration-adjusted counts.
    Upper,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bound::Lower => "lower",
            Bound::Upper => "upper",
        })
    }
}

impl FromStr for Bound {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lower" => Ok(Bound::Lower),
            "upper" => Ok(Bound::Upper),
            other => Err(format!("unknown bound {other:?}")),
        }
    }
}

/// Estimated change in the diaspora of one destination country.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowEstimate {
    pub country: CountryCode,
    pub baseline_week: WeekIndex,
    pub week: WeekIndex,
    pub bound: Bound,
    /// MAU at the baseline week, in the bound's units.
    pub mau_baseline: f64,
    /// MAU at the target week, in the bound's units.
    pub mau_target: f64,
    /// Absolute MAU change between the two weeks, in the bound's units.
    pub mau_change: f64,
    /// Stock-scaled change in persons; may be negative.
    pub delta_ua: f64,
    /// Fraction of the change summed over all included countries.
    pub share: f64,
}
