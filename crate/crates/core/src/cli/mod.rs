//! Command implementations behind the `flowlens` binary.
//!
//! Every command is a plain function over a config struct so it can be
//! driven from tests and examples without going through argument parsing.
//! Output files land in one directory with fixed names; each write also
//! records a checksum and timestamp in `manifest.json`, which is the only
//! file that changes between identical runs.

mod args;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{Bound, CountryCode, Epoch, FlowEstimate, LanguageTag, MauObservation, WeekIndex};
use crate::estimator::{self, CorrelationResult, EstimateError};
use crate::ingest::{
    self, AudienceClient, AudienceQuery, ClientError, HttpAudienceClient, IngestError, LoadError,
    RecordingClient, ReplayClient, RetryPolicy, SnapshotStore, StoreError,
};
use crate::simulate::{self, ScenarioConfig, SimError};

pub use args::{run, Cli};
pub use report::{cmd_report, ReportConfig, ReportSummary};

pub const FLOW_ESTIMATES: &str = "flow_estimates.csv";
pub const ESTIMATE_EXCLUSIONS: &str = "estimate_exclusions.csv";
pub const VALIDATION: &str = "validation.json";
pub const FIG1_SCATTER: &str = "fig1_scatter.csv";
pub const FIG2_SHARES: &str = "fig2_shares.csv";
pub const FIG3_RIBBONS: &str = "fig3_ribbons.csv";
pub const TREND_COMPARISON: &str = "trend_comparison.csv";
pub const PLOT_SPEC: &str = "plot_spec.json";
pub const BIAS_REPORT: &str = "bias_report.csv";
pub const MANIFEST: &str = "manifest.json";

pub const DEFAULT_MIN_SHARE: f64 = 0.02;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Simulate(#[from] SimError),
    #[error("{0}")]
    Input(String),
    #[error("missing upstream output {0}; run the command that produces it first")]
    MissingOutput(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    /// 0 success, 1 validation or input error, 2 transport error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Ingest(e) if e.is_transport() => 2,
            CliError::Client(e) if e.is_retryable() => 2,
            _ => 1,
        }
    }
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Options shared by every command.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalConfig {
    pub epoch: Epoch,
    pub store: PathBuf,
    pub replay_dir: Option<PathBuf>,
    pub out: PathBuf,
}

impl GlobalConfig {
    pub fn new(store: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        GlobalConfig {
            epoch: Epoch::default(),
            store: store.into(),
            replay_dir: None,
            out: out.into(),
        }
    }

    pub fn with_replay_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.replay_dir = Some(dir.into());
        self
    }

    fn open_store(&self) -> Result<SnapshotStore, CliError> {
        Ok(SnapshotStore::open(&self.store)?)
    }
}

/// A country left out of a table, and why.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Exclusion {
    pub country: CountryCode,
    /// `all`, `lower`, `upper`, or a figure name.
    pub scope: String,
    pub reason: String,
}

impl Exclusion {
    fn new(country: CountryCode, scope: &str, reason: impl Into<String>) -> Self {
        Exclusion {
            country,
            scope: scope.to_string(),
            reason: reason.into(),
        }
    }
}

/// A named file body waiting to be written.
pub(crate) struct Output {
    name: &'static str,
    bytes: Vec<u8>,
}

pub(crate) fn csv_bytes<T: Serialize>(header: Option<&[&str]>, rows: &[T]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(header.is_none())
        .from_writer(Vec::new());
    if let Some(h) = header {
        w.write_record(h).expect("in-memory write");
    }
    for row in rows {
        w.serialize(row).expect("rows serialize");
    }
    w.into_inner().expect("in-memory flush")
}

pub(crate) fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_vec_pretty(value).expect("value serializes");
    text.push(b'\n');
    text
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Manifest {
    files: BTreeMap<String, ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    command: String,
    sha256: String,
    bytes: u64,
    written_at: String,
}

/// Writes every output (each via a temporary file and rename), then
/// updates the manifest. Nothing is written if the output directory
/// cannot be created.
pub(crate) fn write_outputs(out: &Path, command: &str, outputs: &[Output]) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(out).map_err(io_at(out))?;
    let mut paths = Vec::new();
    for o in outputs {
        let path = out.join(o.name);
        let tmp = out.join(format!(".{}.tmp", o.name));
        fs::write(&tmp, &o.bytes).map_err(io_at(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_at(&path))?;
        paths.push(path);
    }

    let manifest_path = out.join(MANIFEST);
    let mut manifest: Manifest = fs::read(&manifest_path)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or_default();
    let now = Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true);
    for o in outputs {
        manifest.files.insert(
            o.name.to_string(),
            ManifestEntry {
                command: command.to_string(),
                sha256: hex::encode(Sha256::digest(&o.bytes)),
                bytes: o.bytes.len() as u64,
                written_at: now.clone(),
            },
        );
    }
    fs::write(&manifest_path, json_bytes(&manifest)).map_err(io_at(&manifest_path))?;
    Ok(paths)
}

// ---------------------------------------------------------------- collect

/// The EU member states plus the origin.
pub const DEFAULT_COUNTRIES: [&str; 28] = [
    "AT", "BE", "BG", "CY", "CZ", "DE", "DK", "EE", "ES", "FI", "FR", "GR", "HR", "HU", "IE", "IT",
    "LT", "LU", "LV", "MT", "NL", "PL", "PT", "RO", "SE", "SI", "SK", "UA",
];

pub fn default_countries() -> Vec<CountryCode> {
    DEFAULT_COUNTRIES
        .iter()
        .map(|c| CountryCode::new(c).expect("valid code"))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectConfig {
    pub countries: Vec<CountryCode>,
    /// Weeks to replay. Ignored in live mode, which always collects the current week.
    pub weeks: Vec<WeekIndex>,
    pub language: LanguageTag,
    pub min_age: u8,
    pub fan_out: usize,
    pub retry: RetryPolicy,
    /// Live mode only: also save every response under this directory.
    pub record_dir: Option<PathBuf>,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            countries: default_countries(),
            weeks: (0..=5).map(WeekIndex).collect(),
            language: LanguageTag::default(),
            min_age: ingest::MIN_PLATFORM_AGE,
            fan_out: ingest::DEFAULT_FAN_OUT,
            retry: RetryPolicy::default(),
            record_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollectSummary {
    pub requested: usize,
    pub inserted: usize,
    pub duplicates: usize,
}

/// Fetches one observation per (country, week) and appends it to the store.
///
/// Uses the replay directory when one is configured, otherwise the live
/// client from the environment. Successful observations are stored even if
/// other requests fail; the first failure is then returned.
pub fn cmd_collect(global: &GlobalConfig, config: &CollectConfig) -> Result<CollectSummary, CliError> {
    let queries = config
        .countries
        .iter()
        .map(|&c| AudienceQuery::new(c, config.language.clone(), config.min_age))
        .collect::<Result<Vec<_>, _>>()?;

    let (client, weeks): (Box<dyn AudienceClient>, Vec<WeekIndex>) = match &global.replay_dir {
        Some(dir) => (Box::new(ReplayClient::new(dir)), config.weeks.clone()),
        None => {
            let live = HttpAudienceClient::from_env()?;
            let week = global.epoch.week_of(Utc::now().date_naive());
            match &config.record_dir {
                Some(dir) => (Box::new(RecordingClient::new(live, dir)), vec![week]),
                None => (Box::new(live), vec![week]),
            }
        }
    };

    let requests: Vec<(AudienceQuery, WeekIndex)> = queries
        .iter()
        .flat_map(|q| weeks.iter().map(move |&w| (q.clone(), w)))
        .collect();
    let results = ingest::fetch_many(&client, &requests, global.epoch, &config.retry, config.fan_out);

    let mut observations: Vec<MauObservation> = Vec::new();
    let mut first_error = None;
    for result in results {
        match result {
            Ok(obs) => observations.push(obs),
            Err(e) => {
                warn!("{e}");
                first_error.get_or_insert(e);
            }
        }
    }
    let mut store = global.open_store()?;
    let summary = store.append_all(observations)?;
    info!(
        "collected {} requests: {} new, {} unchanged",
        requests.len(),
        summary.inserted,
        summary.duplicates
    );
    if let Some(e) = first_error {
        return Err(e.into());
    }
    Ok(CollectSummary {
        requested: requests.len(),
        inserted: summary.inserted,
        duplicates: summary.duplicates,
    })
}

// --------------------------------------------------------------- estimate

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateConfig {
    pub diaspora: PathBuf,
    pub penetration: PathBuf,
    pub baseline_week: WeekIndex,
    pub target_week: WeekIndex,
    pub language: LanguageTag,
}

/// One line of `flow_estimates.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub country: CountryCode,
    pub bound: Bound,
    pub baseline_week: WeekIndex,
    pub target_week: WeekIndex,
    pub mau_baseline: f64,
    pub mau_target: f64,
    pub mau_change: f64,
    pub delta_ua: f64,
    pub share: f64,
}

impl From<&FlowEstimate> for FlowRow {
    fn from(e: &FlowEstimate) -> Self {
        FlowRow {
            country: e.country,
            bound: e.bound,
            baseline_week: e.baseline_week,
            target_week: e.week,
            mau_baseline: e.mau_baseline,
            mau_target: e.mau_target,
            mau_change: e.mau_change,
            delta_ua: e.delta_ua,
            share: e.share,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    /// Sorted by country, then bound.
    pub estimates: Vec<FlowEstimate>,
    pub exclusions: Vec<Exclusion>,
}

impl EstimateReport {
    pub fn get(&self, country: CountryCode, bound: Bound) -> Option<&FlowEstimate> {
        self.estimates.iter().find(|e| e.country == country && e.bound == bound)
    }
}

/// Flow estimates for both bounds without touching the filesystem beyond reading inputs.
pub fn compute_estimates(global: &GlobalConfig, config: &EstimateConfig) -> Result<EstimateReport, CliError> {
    let store = global.open_store()?;
    let stocks = ingest::load_diaspora(&config.diaspora)?;
    let rates = ingest::load_penetration(&config.penetration)?;
    let series = store.series(&config.language);
    let (bw, tw) = (config.baseline_week, config.target_week);
    if bw >= tw {
        return Err(CliError::Input(format!("target week {tw} must come after baseline week {bw}")));
    }

    let mut exclusions = Vec::new();
    let mut lower: BTreeMap<CountryCode, (f64, f64, f64, f64)> = BTreeMap::new();
    let mut upper: BTreeMap<CountryCode, (f64, f64, f64, f64)> = BTreeMap::new();
    for (&country, s) in &series {
        if country.is_origin() {
            exclusions.push(Exclusion::new(country, "all", "origin country"));
            continue;
        }
        let (Some(base), Some(now)) = (s.get(bw), s.get(tw)) else {
            let missing = if s.get(bw).is_none() { bw } else { tw };
            exclusions.push(Exclusion::new(country, "all", format!("no observation for {missing}")));
            continue;
        };
        if base == 0.0 {
            exclusions.push(Exclusion::new(country, "all", format!("zero audience in {bw}")));
            continue;
        }
        let Some(stock) = stocks.get(&country) else {
            exclusions.push(Exclusion::new(country, "all", "no diaspora stock"));
            continue;
        };
        let delta = estimator::delta_ua(stock, now, base)?;
        lower.insert(country, (base, now, now - base, delta));
        match rates.get(&country) {
            Some(rate) => {
                let (b, n) = (rate.adjust(base), rate.adjust(now));
                // Adjusting the integer change keeps upper >= lower for growth.
                let change = rate.adjust(now - base);
                upper.insert(country, (b, n, change, estimator::delta_ua(stock, n, b)?));
            }
            None => exclusions.push(Exclusion::new(country, "upper", "no penetration rate")),
        }
    }
    for &country in stocks.keys() {
        if !series.contains_key(&country) {
            exclusions.push(Exclusion::new(country, "all", "no audience observations"));
        }
    }
    if lower.is_empty() {
        return Err(CliError::Input(format!(
            "no country has observations for both {bw} and {tw}"
        )));
    }

    let mut estimates = Vec::new();
    for (bound, rows) in [(Bound::Lower, &lower), (Bound::Upper, &upper)] {
        if rows.is_empty() {
            continue;
        }
        let deltas = rows.iter().map(|(&c, v)| (c, v.3)).collect();
        let table = estimator::shares(&deltas)?;
        for (&country, &(mau_baseline, mau_target, mau_change, delta_ua)) in rows {
            estimates.push(FlowEstimate {
                country,
                baseline_week: bw,
                week: tw,
                bound,
                mau_baseline,
                mau_target,
                mau_change,
                delta_ua,
                share: table.shares[&country],
            });
        }
    }
    estimates.sort_by_key(|e| (e.country, e.bound));
    exclusions.sort();
    Ok(EstimateReport { estimates, exclusions })
}

/// Writes `flow_estimates.csv` (full table, both bounds) and `estimate_exclusions.csv`.
pub fn cmd_estimate(global: &GlobalConfig, config: &EstimateConfig) -> Result<EstimateReport, CliError> {
    let report = compute_estimates(global, config)?;
    let rows: Vec<FlowRow> = report.estimates.iter().map(FlowRow::from).collect();
    write_outputs(
        &global.out,
        "estimate",
        &[
            Output {
                name: FLOW_ESTIMATES,
                bytes: csv_bytes(None, &rows),
            },
            Output {
                name: ESTIMATE_EXCLUSIONS,
                bytes: csv_bytes(Some(&["country", "scope", "reason"]), &report.exclusions),
            },
        ],
    )?;
    Ok(report)
}

// --------------------------------------------------------------- validate

#[derive(Clone, Debug, PartialEq)]
pub struct ValidateConfig {
    pub diaspora: PathBuf,
    pub penetration: PathBuf,
    pub prewar_week: WeekIndex,
    pub language: LanguageTag,
    /// Population aged 13+ per country; when given, the origin's penetration
    /// is estimated from its prewar audience.
    pub population: Option<PathBuf>,
}

/// One point of the diaspora-versus-audience scatter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub country: CountryCode,
    pub diaspora_stock: u64,
    pub mau_original: f64,
    pub mau_adjusted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OriginPenetration {
    pub country: CountryCode,
    pub mau: u64,
    pub population_13plus: u64,
    pub rate: f64,
}

/// Contents of `validation.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub prewar_week: WeekIndex,
    pub original: CorrelationResult,
    pub adjusted: CorrelationResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_penetration: Option<OriginPenetration>,
    pub exclusions: Vec<Exclusion>,
    #[serde(skip)]
    pub scatter: Vec<ScatterRow>,
}

/// Correlates prewar audiences (raw and adjusted) with diaspora stocks.
///
/// Only countries with an observation, a stock and a rate take part, so both
/// correlations use the same set.
pub fn compute_validation(global: &GlobalConfig, config: &ValidateConfig) -> Result<ValidationReport, CliError> {
    let store = global.open_store()?;
    let stocks = ingest::load_diaspora(&config.diaspora)?;
    let rates = ingest::load_penetration(&config.penetration)?;
    let series = store.series(&config.language);
    let week = config.prewar_week;

    let mut exclusions = Vec::new();
    let mut scatter = Vec::new();
    for (&country, s) in &series {
        if country.is_origin() {
            continue;
        }
        let Some(mau) = s.get(week) else {
            exclusions.push(Exclusion::new(country, "validation", format!("no observation for {week}")));
            continue;
        };
        let Some(stock) = stocks.get(&country) else {
            exclusions.push(Exclusion::new(country, "validation", "no diaspora stock"));
            continue;
        };
        let Some(rate) = rates.get(&country) else {
            exclusions.push(Exclusion::new(country, "validation", "no penetration rate"));
            continue;
        };
        scatter.push(ScatterRow {
            country,
            diaspora_stock: stock.stock,
            mau_original: mau,
            mau_adjusted: rate.adjust(mau),
        });
    }
    for &country in stocks.keys() {
        if !series.contains_key(&country) {
            exclusions.push(Exclusion::new(country, "validation", "no audience observations"));
        }
    }
    exclusions.sort();

    let x: Vec<f64> = scatter.iter().map(|r| r.diaspora_stock as f64).collect();
    let original = estimator::pearson(&x, &scatter.iter().map(|r| r.mau_original).collect::<Vec<_>>())?;
    let adjusted = estimator::pearson(&x, &scatter.iter().map(|r| r.mau_adjusted).collect::<Vec<_>>())?;

    let origin_penetration = match &config.population {
        None => None,
        Some(path) => {
            let population = ingest::load_population(path)?;
            let origin = CountryCode::ORIGIN;
            let mau = series
                .get(&origin)
                .and_then(|s| s.get(week))
                .ok_or_else(|| CliError::Input(format!("no {origin} observation for {week}")))?
                as u64;
            let pop = *population
                .get(&origin)
                .ok_or_else(|| CliError::Input(format!("no population for {origin}")))?;
            let rate = estimator::estimate_penetration(origin, mau, pop)?;
            Some(OriginPenetration {
                country: origin,
                mau,
                population_13plus: pop,
                rate: rate.rate(),
            })
        }
    };

    Ok(ValidationReport {
        prewar_week: week,
        original,
        adjusted,
        origin_penetration,
        exclusions,
        scatter,
    })
}

/// Writes `validation.json` and `fig1_scatter.csv`.
pub fn cmd_validate(global: &GlobalConfig, config: &ValidateConfig) -> Result<ValidationReport, CliError> {
    let report = compute_validation(global, config)?;
    write_outputs(
        &global.out,
        "validate",
        &[
            Output {
                name: VALIDATION,
                bytes: json_bytes(&report),
            },
            Output {
                name: FIG1_SCATTER,
                bytes: csv_bytes(None, &report.scatter),
            },
        ],
    )?;
    Ok(report)
}

// --------------------------------------------------------------- simulate

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateSummary {
    pub agents: u64,
    pub platform_users: u64,
    pub exports: simulate::SimulationExports,
    pub bias: Vec<simulate::BiasRow>,
}

/// Runs a scenario file and writes its exports plus `bias_report.csv` under the output directory.
pub fn cmd_simulate(global: &GlobalConfig, scenario: &Path) -> Result<SimulateSummary, CliError> {
    let config = ScenarioConfig::load(scenario)?;
    let dataset = simulate::run_scenario(&config)?;
    let exports = dataset.export(&global.out)?;
    let estimates = simulate::synthetic_estimates(&dataset)?;
    let bias = simulate::estimator_bias_report(&dataset, &estimates);
    write_outputs(
        &global.out,
        "simulate",
        &[Output {
            name: BIAS_REPORT,
            bytes: csv_bytes(Some(&["country", "week", "estimated", "true_net_inflow", "bias"]), &bias),
        }],
    )?;
    Ok(SimulateSummary {
        agents: dataset.total_agents(),
        platform_users: dataset.platform_users(),
        exports,
        bias,
    })
}
