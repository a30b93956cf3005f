//! Audience-estimate clients.
//!
//! [`HttpAudienceClient`] talks to a live endpoint; [`ReplayClient`] serves
//! responses recorded earlier by [`RecordingClient`]. Callers only see the
//! [`AudienceClient`] trait, so the whole pipeline runs offline against a
//! fixture directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::AudienceQuery;
use crate::domain::WeekIndex;

pub const ENV_API_TOKEN: &str = "FLOWLENS_API_TOKEN";
pub const ENV_API_BASE_URL: &str = "FLOWLENS_API_BASE_URL";
pub const ENV_REPLAY_DIR: &str = "FLOWLENS_REPLAY_DIR";

/// Undecoded response as received (or recorded).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub status: u16,
    pub body: String,
    pub collected_at: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum ClientError {
    /// Connection-level failure; worth retrying.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no recorded response at {0}")]
    MissingFixture(PathBuf),
    #[error("unreadable fixture {path}: {message}")]
    BadFixture { path: PathBuf, message: String },
    #[error("client configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ClientError::Transport(_))
    }
}

pub trait AudienceClient: Send + Sync {
    /// Requests the audience estimate for `query`. `week` selects the
    /// recorded collection round in replay mode; live clients ignore it and
    /// return the current estimate.
    fn request(&self, query: &AudienceQuery, week: WeekIndex) -> Result<RawResponse, ClientError>;
}

impl<C: AudienceClient + ?Sized> AudienceClient for &C {
    fn request(&self, query: &AudienceQuery, week: WeekIndex) -> Result<RawResponse, ClientError> {
        (**self).request(query, week)
    }
}

impl<C: AudienceClient + ?Sized> AudienceClient for Box<C> {
    fn request(&self, query: &AudienceQuery, week: WeekIndex) -> Result<RawResponse, ClientError> {
        (**self).request(query, week)
    }
}

/// On-disk form of one recorded exchange.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    pub query: AudienceQuery,
    pub week: WeekIndex,
    pub collected_at: DateTime<Utc>,
    pub status: u16,
    pub body: String,
}

/// `<dir>/<COUNTRY>-<language>-w<week>.json`
pub fn fixture_path(dir: &Path, query: &AudienceQuery, week: WeekIndex) -> PathBuf {
    dir.join(format!(
        "{}-{}-w{}.json",
        query.country(),
        query.language(),
        week.index()
    ))
}

pub fn write_fixture(dir: &Path, fixture: &Fixture) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = fixture_path(dir, &fixture.query, fixture.week);
    let mut text = serde_json::to_string_pretty(fixture).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

/// Serves recorded responses from a directory.
#[derive(Clone, Debug)]
pub struct ReplayClient {
    dir: PathBuf,
}

impl ReplayClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReplayClient { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl AudienceClient for ReplayClient {
    fn request(&self, query: &AudienceQuery, week: WeekIndex) -> Result<RawResponse, ClientError> {
        let path = fixture_path(&self.dir, query, week);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(ClientError::MissingFixture(path))
            }
            Err(e) => return Err(e.into()),
        };
        let fixture: Fixture = serde_json::from_str(&text).map_err(|e| ClientError::BadFixture {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if fixture.query != *query || fixture.week != week {
            return Err(ClientError::BadFixture {
                path,
                message: "recorded query does not match the request".into(),
            });
        }
        Ok(RawResponse {
            status: fixture.status,
            body: fixture.body,
            collected_at: fixture.collected_at,
        })
    }
}

/// Forwards to an inner client and records every response it gets.
pub struct RecordingClient<C> {
    inner: C,
    dir: PathBuf,
}

impl<C> RecordingClient<C> {
    pub fn new(inner: C, dir: impl Into<PathBuf>) -> Self {
        RecordingClient {
            inner,
            dir: dir.into(),
        }
    }
}

impl<C: AudienceClient> AudienceClient for RecordingClient<C> {
    fn request(&self, query: &AudienceQuery, week: WeekIndex) -> Result<RawResponse, ClientError> {
        let response = self.inner.request(query, week)?;
        let fixture = Fixture {
            query: query.clone(),
            week,
            collected_at: response.collected_at,
            status: response.status,
            body: response.body.clone(),
        };
        write_fixture(&self.dir, &fixture)?;
        Ok(response)
    }
}

/// Live client for a delivery-estimate endpoint.
///
/// Sends `GET {base}/delivery_estimate?targeting_spec=<json>&optimization_goal=REACH`
/// with a bearer token; the body is returned undecoded.
pub struct HttpAudienceClient {
    base_url: String,
    token: String,
    http: reqwest::blocking::Client,
}

impl HttpAudienceClient {
    pub fn new(base_url: impl Into<String>, token: impl Into<String>) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(HttpAudienceClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token: token.into(),
            http,
        })
    }

    /// Reads the endpoint and token from `FLOWLENS_API_BASE_URL` / `FLOWLENS_API_TOKEN`.
    pub fn from_env() -> Result<Self, ClientError> {
        let base = std::env::var(ENV_API_BASE_URL)
            .map_err(|_| ClientError::Config(format!("{ENV_API_BASE_URL} is not set")))?;
        let token = std::env::var(ENV_API_TOKEN)
            .map_err(|_| ClientError::Config(format!("{ENV_API_TOKEN} is not set")))?;
        Self::new(base, token)
    }

    fn targeting_spec(query: &AudienceQuery) -> String {
        serde_json::json!({
            "geo_locations": { "countries": [query.country().as_str()] },
            "languages": [query.language().as_str()],
            "age_min": query.min_age(),
        })
        .to_string()
    }
}

impl AudienceClient for HttpAudienceClient {
    fn request(&self, query: &AudienceQuery, _week: WeekIndex) -> Result<RawResponse, ClientError> {
        let url = format!("{}/delivery_estimate", self.base_url);
        let response = self
            .http
            .get(url)
            .bearer_auth(&self.token)
            .query(&[
                ("targeting_spec", Self::targeting_spec(query)),
                ("optimization_goal", "REACH".to_string()),
            ])
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let collected_at = Utc::now();
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(RawResponse {
            status,
            body,
            collected_at,
        })
    }
}
