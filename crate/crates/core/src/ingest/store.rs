//! Append-only snapshot store: one JSON-encoded [`MauObservation`] per line.
//!
//! A store has a single writer (appends take `&mut self`); any number of
//! readers may open the same file independently. Re-appending an identical
//! record is a no-op, while a different MAU for an existing key is rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::domain::{CountryCode, Epoch, LanguageTag, MauObservation, MauSeries, ObservationKey, WeekIndex};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("conflicting record for {key}: stored MAU {existing}, new MAU {incoming}")]
    Conflict {
        key: ObservationKey,
        existing: u64,
        incoming: u64,
    },
    #[error("record for {key} uses epoch {incoming}, store uses {store}")]
    EpochMismatch {
        key: ObservationKey,
        store: Epoch,
        incoming: Epoch,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AppendOutcome {
    Inserted,
    Duplicate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AppendSummary {
    pub inserted: usize,
    pub duplicates: usize,
}

/// Selects observations in [`SnapshotStore::scan`]. Empty filter matches all.
#[derive(Clone, Debug, Default)]
pub struct ScanFilter {
    pub countries: Option<BTreeSet<CountryCode>>,
    pub language: Option<LanguageTag>,
    pub weeks: Option<RangeInclusive<WeekIndex>>,
}

impl ScanFilter {
    pub fn language(language: LanguageTag) -> Self {
        ScanFilter {
            language: Some(language),
            ..Default::default()
        }
    }

    fn matches(&self, obs: &MauObservation) -> bool {
        self.countries.as_ref().is_none_or(|s| s.contains(&obs.country))
            && self.language.as_ref().is_none_or(|l| *l == obs.language)
            && self.weeks.as_ref().is_none_or(|r| r.contains(&obs.week))
    }
}

#[derive(Debug)]
pub struct SnapshotStore {
    path: PathBuf,
    records: BTreeMap<ObservationKey, MauObservation>,
    epoch: Option<Epoch>,
}

impl SnapshotStore {
    /// Opens the store at `path`, loading any existing records. A missing
    /// file is an empty store; it is created on first append.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let mut store = SnapshotStore {
            path,
            records: BTreeMap::new(),
            epoch: None,
        };
        let text = match fs::read_to_string(&store.path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(store),
            Err(source) => {
                return Err(StoreError::Io {
                    path: store.path,
                    source,
                })
            }
        };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let obs: MauObservation = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                path: store.path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if store.check(&obs).map_err(|e| StoreError::Corrupt {
                path: store.path.clone(),
                line: i + 1,
                message: e.to_string(),
            })? == AppendOutcome::Inserted
            {
                store.epoch.get_or_insert(obs.epoch);
                store.records.insert(obs.key(), obs);
            }
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn epoch(&self) -> Option<Epoch> {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn check(&self, obs: &MauObservation) -> Result<AppendOutcome, StoreError> {
        let key = obs.key();
        if let Some(epoch) = self.epoch {
            if epoch != obs.epoch {
                return Err(StoreError::EpochMismatch {
                    key,
                    store: epoch,
                    incoming: obs.epoch,
                });
            }
        }
        match self.records.get(&key) {
            None => Ok(AppendOutcome::Inserted),
            Some(existing) if existing.mau == obs.mau => Ok(AppendOutcome::Duplicate),
            Some(existing) => Err(StoreError::Conflict {
                key,
                existing: existing.mau,
                incoming: obs.mau,
            }),
        }
    }

    pub fn append(&mut self, obs: MauObservation) -> Result<AppendOutcome, StoreError> {
        let summary = self.append_all([obs])?;
        Ok(if summary.inserted == 1 {
            AppendOutcome::Inserted
        } else {
            AppendOutcome::Duplicate
        })
    }

    /// Appends a batch. The whole batch is validated first, so a conflict
    /// anywhere leaves the file untouched.
    pub fn append_all(
        &mut self,
        batch: impl IntoIterator<Item = MauObservation>,
    ) -> Result<AppendSummary, StoreError> {
        let mut summary = AppendSummary::default();
        let mut pending: BTreeMap<ObservationKey, MauObservation> = BTreeMap::new();
        let mut epoch = self.epoch;
        for obs in batch {
            let key = obs.key();
            if let Some(e) = epoch {
                if e != obs.epoch {
                    return Err(StoreError::EpochMismatch {
                        key,
                        store: e,
                        incoming: obs.epoch,
                    });
                }
            }
            epoch = Some(obs.epoch);
            let prior = self.records.get(&key).or_else(|| pending.get(&key));
            match prior {
                Some(p) if p.mau == obs.mau => summary.duplicates += 1,
                Some(p) => {
                    return Err(StoreError::Conflict {
                        key,
                        existing: p.mau,
                        incoming: obs.mau,
                    })
                }
                None => {
                    pending.insert(key, obs);
                }
            }
        }
        if pending.is_empty() {
            return Ok(summary);
        }

        let mut lines = String::new();
        for obs in pending.values() {
            lines.push_str(&serde_json::to_string(obs).expect("observation serializes"));
            lines.push('\n');
        }
        let io_err = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err)?;
        file.write_all(lines.as_bytes()).map_err(io_err)?;
        file.sync_data().map_err(io_err)?;

        summary.inserted = pending.len();
        self.epoch = epoch;
        self.records.extend(pending);
        Ok(summary)
    }

    /// Matching observations in (country, language, week) order.
    pub fn scan(&self, filter: &ScanFilter) -> Vec<MauObservation> {
        self.records.values().filter(|o| filter.matches(o)).cloned().collect()
    }

    /// Original MAU series per country for one language.
    pub fn series(&self, language: &LanguageTag) -> BTreeMap<CountryCode, MauSeries> {
        let mut points: BTreeMap<CountryCode, Vec<(WeekIndex, u64)>> = BTreeMap::new();
        for obs in self.records.values().filter(|o| o.language == *language) {
            points.entry(obs.country).or_default().push((obs.week, obs.mau));
        }
        points
            .into_iter()
            .map(|(c, p)| (c, MauSeries::original(c, p).expect("store keys are unique")))
            .collect()
    }
}
