//! Acquisition and persistence of audience estimates and official statistics.

pub mod client;
pub mod loaders;
pub mod store;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{error, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CountryCode, Epoch, LanguageTag, MauObservation, WeekIndex};
pub use client::{AudienceClient, ClientError, HttpAudienceClient, RawResponse, RecordingClient, ReplayClient};
pub use loaders::{
    load_diaspora, load_penetration, load_population, load_unhcr, save_diaspora, save_penetration,
    save_unhcr, LoadError, RowIssue,
};
pub use store::{AppendOutcome, AppendSummary, ScanFilter, SnapshotStore, StoreError};

/// The platform does not allow accounts below this age.
pub const MIN_PLATFORM_AGE: u8 = 13;

/// Default number of concurrent fetches.
pub const DEFAULT_FAN_OUT: usize = 4;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("minimum age {0} is below the platform floor of 13")]
    MinAgeBelowFloor(u8),
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("quota exceeded for {key}: {message}")]
    Quota { key: String, message: String },
    #[error("permission denied for {key}: {message}")]
    Permission { key: String, message: String },
    #[error("API error {status} for {key}: {message}")]
    Api { key: String, status: u16, message: String },
    #[error("malformed response for {key}: {message}")]
    Malformed { key: String, message: String, payload: String },
    #[error("response for {key} was collected in {actual}, expected {expected}")]
    WeekMismatch {
        key: String,
        expected: WeekIndex,
        actual: WeekIndex,
    },
    #[error(transparent)]
    Client(#[from] ClientError),
}

impl IngestError {
    /// Transport problems (as opposed to bad input or bad data).
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            IngestError::Transport { .. }
                | IngestError::Client(ClientError::Transport(_))
                | IngestError::Quota { .. }
                | IngestError::Permission { .. }
                | IngestError::Api { .. }
        )
    }
}

/// Targeting for one audience estimate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "QueryRepr", into = "QueryRepr")]
pub struct AudienceQuery {
    country: CountryCode,
    language: LanguageTag,
    min_age: u8,
}

#[derive(Serialize, Deserialize)]
struct QueryRepr {
    country: CountryCode,
    language: LanguageTag,
    min_age: u8,
}

impl TryFrom<QueryRepr> for AudienceQuery {
    type Error = IngestError;

    fn try_from(r: QueryRepr) -> Result<Self, Self::Error> {
        AudienceQuery::new(r.country, r.language, r.min_age)
    }
}

impl From<AudienceQuery> for QueryRepr {
    fn from(q: AudienceQuery) -> Self {
        QueryRepr {
            country: q.country,
            language: q.language,
            min_age: q.min_age,
        }
    }
}

impl AudienceQuery {
    pub fn new(country: CountryCode, language: LanguageTag, min_age: u8) -> Result<Self, IngestError> {
        if min_age < MIN_PLATFORM_AGE {
            return Err(IngestError::MinAgeBelowFloor(min_age));
        }
        Ok(AudienceQuery {
            country,
            language,
            min_age,
        })
    }

    /// Ukrainian-language audience aged 13+ in `country`.
    pub fn ukrainian_speakers(country: CountryCode) -> Self {
        AudienceQuery {
            country,
            language: LanguageTag::default(),
            min_age: MIN_PLATFORM_AGE,
        }
    }

    pub fn country(&self) -> CountryCode {
        self.country
    }

    pub fn language(&self) -> &LanguageTag {
        &self.language
    }

    pub fn min_age(&self) -> u8 {
        self.min_age
    }
}

/// Bounded exponential backoff for transport failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Same attempt budget, no sleeping.
    pub fn immediate() -> Self {
        RetryPolicy {
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            ..Self::default()
        }
    }

    /// Delay before retry number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Deserialize)]
struct EstimateBody {
    data: Vec<EstimateEntry>,
}

#[derive(Deserialize)]
struct EstimateEntry {
    estimate_mau: i64,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Deserialize)]
struct ErrorDetail {
    #[serde(default)]
    code: i64,
    #[serde(default)]
    message: String,
}

// Error codes the marketing API uses for rate limiting.
const QUOTA_CODES: [i64; 4] = [4, 17, 613, 80004];
// Authorization and permission errors.
const PERMISSION_CODES: [i64; 3] = [10, 190, 200];

enum Attempt {
    Done(u64),
    Retry(String),
}

fn interpret(key: &str, raw: &RawResponse) -> Result<Attempt, IngestError> {
    if (200..300).contains(&raw.status) {
        let parsed: EstimateBody = serde_json::from_str(&raw.body).map_err(|e| malformed(key, raw, e.to_string()))?;
        let entry = parsed
            .data
            .first()
            .ok_or_else(|| malformed(key, raw, "empty data array".into()))?;
        let mau = u64::try_from(entry.estimate_mau)
            .map_err(|_| malformed(key, raw, format!("negative estimate {}", entry.estimate_mau)))?;
        return Ok(Attempt::Done(mau));
    }
    if raw.status >= 500 {
        return Ok(Attempt::Retry(format!("HTTP {}", raw.status)));
    }
    let detail = serde_json::from_str::<ErrorBody>(&raw.body).ok().map(|b| b.error);
    let code = detail.as_ref().map_or(0, |d| d.code);
    let message = detail.map_or_else(|| raw.body.clone(), |d| d.message);
    let key = key.to_string();
    if raw.status == 429 || QUOTA_CODES.contains(&code) {
        Err(IngestError::Quota { key, message })
    } else if raw.status == 401 || raw.status == 403 || PERMISSION_CODES.contains(&code) {
        Err(IngestError::Permission { key, message })
    } else {
        Err(IngestError::Api {
            key,
            status: raw.status,
            message,
        })
    }
}

fn malformed(key: &str, raw: &RawResponse, message: String) -> IngestError {
    error!("malformed response for {key}: {message}; payload: {}", raw.body);
    IngestError::Malformed {
        key: key.to_string(),
        message,
        payload: raw.body.clone(),
    }
}

/// Fetches one audience estimate for `week`.
///
/// Transport failures and 5xx responses are retried per `policy`; quota,
/// permission and malformed responses fail immediately. The observation's
/// week is derived from the collection timestamp and must equal `week`.
pub fn fetch_audience<C: AudienceClient + ?Sized>(
    client: &C,
    query: &AudienceQuery,
    week: WeekIndex,
    epoch: Epoch,
    policy: &RetryPolicy,
) -> Result<MauObservation, IngestError> {
    let key = format!("{}-{}-{}", query.country(), query.language(), week);
    let attempts = policy.max_attempts.max(1);
    let mut last_failure = String::new();
    for attempt in 1..=attempts {
        let outcome = match client.request(query, week) {
            Ok(raw) => match interpret(&key, &raw)? {
                Attempt::Done(mau) => {
                    let actual = epoch.week_of_timestamp(raw.collected_at);
                    if actual != week {
                        return Err(IngestError::WeekMismatch {
                            key,
                            expected: week,
                            actual,
                        });
                    }
                    return Ok(MauObservation {
                        country: query.country(),
                        language: query.language().clone(),
                        week,
                        epoch,
                        mau,
                        collected_at: raw.collected_at,
                    });
                }
                Attempt::Retry(reason) => reason,
            },
            Err(e) if e.is_retryable() => e.to_string(),
            Err(e) => return Err(e.into()),
        };
        warn!("attempt {attempt}/{attempts} for {key} failed: {outcome}");
        last_failure = outcome;
        if attempt < attempts {
            thread::sleep(policy.delay(attempt));
        }
    }
    Err(IngestError::Transport {
        attempts,
        message: last_failure,
    })
}

/// Runs [`fetch_audience`] for every request with at most `fan_out` in flight.
///
/// Results come back in request order.
pub fn fetch_many<C: AudienceClient + ?Sized>(
    client: &C,
    requests: &[(AudienceQuery, WeekIndex)],
    epoch: Epoch,
    policy: &RetryPolicy,
    fan_out: usize,
) -> Vec<Result<MauObservation, IngestError>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<MauObservation, IngestError>>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();
    let workers = fan_out.clamp(1, requests.len().max(1));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((query, week)) = requests.get(i) else { break };
                let result = fetch_audience(client, query, *week, epoch, policy);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every request is processed"))
        .collect()
}
