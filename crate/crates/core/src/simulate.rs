//! Ground-truth displacement simulator with a platform-sampling layer.
//!
//! Agents live in discrete days and move instantaneously at day boundaries.
//! A platform user counts towards a country's MAU on day `d` if they were
//! present there on any day in `[d - window + 1, d]` (truncated at day 0), so
//! a user who crossed borders inside the window is counted once per country.
//! Running the estimator over the synthetic MAU and comparing against true
//! presence measures how much of an estimated flow is window overlap.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveTime, TimeZone, Utc};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    ArrivalSeries, CountryCode, DiasporaStock, Epoch, LanguageTag, MauObservation, MauSeries,
    PenetrationRate, WeekIndex,
};
use crate::estimator::{delta_ua, EstimateError};
use crate::ingest::{loaders, SnapshotStore, StoreError};

pub const DEFAULT_WINDOW_DAYS: u32 = 30;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown country {0}")]
    UnknownCountry(CountryCode),
    #[error("country {0} listed twice")]
    DuplicateCountry(CountryCode),
    #[error("cohort in {country} has negative size {size}")]
    NegativeCohort { country: CountryCode, size: i64 },
    #[error("flow on day {day} has negative count {count}")]
    NegativeFlow { day: u32, count: i64 },
    #[error("flow on day {day} moves {from} to itself")]
    SelfFlow { day: u32, from: CountryCode },
    #[error("flow on day {day} needs {requested} agents in {from}, only {available} present")]
    InsufficientAgents {
        day: u32,
        from: CountryCode,
        requested: u64,
        available: u64,
    },
    #[error("day {day} is outside the horizon of {horizon} days")]
    DayOutOfRange { day: u32, horizon: u32 },
    #[error("penetration {0} is outside [0, 1]")]
    InvalidPenetration(f64),
    #[error("window must be at least one day")]
    EmptyWindow,
    #[error("horizon must be at least one day")]
    EmptyHorizon,
    #[error("scenario file {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn default_origin() -> CountryCode {
    CountryCode::ORIGIN
}

fn default_window() -> u32 {
    DEFAULT_WINDOW_DAYS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub country: CountryCode,
    pub size: i64,
}

/// Moves `count` agents from `from` to `to` at the start of `day`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub day: u32,
    pub from: CountryCode,
    pub to: CountryCode,
    pub count: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub countries: Vec<CountryCode>,
    #[serde(default = "default_origin")]
    pub origin: CountryCode,
    /// Probability that any agent is a platform user.
    pub origin_penetration: f64,
    pub cohorts: Vec<Cohort>,
    #[serde(default)]
    pub flows: Vec<Flow>,
    pub horizon_days: u32,
    pub seed: u64,
    #[serde(default = "default_window")]
    pub window_days: u32,
    #[serde(default)]
    pub epoch: Epoch,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| SimError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut seen = BTreeSet::new();
        for c in &self.countries {
            if !seen.insert(*c) {
                return Err(SimError::DuplicateCountry(*c));
            }
        }
        let known = |c: &CountryCode| {
            if seen.contains(c) {
                Ok(())
            } else {
                Err(SimError::UnknownCountry(*c))
            }
        };
        known(&self.origin)?;
        if !(0.0..=1.0).contains(&self.origin_penetration) {
            return Err(SimError::InvalidPenetration(self.origin_penetration));
        }
        if self.horizon_days == 0 {
            return Err(SimError::EmptyHorizon);
        }
        if self.window_days == 0 {
            return Err(SimError::EmptyWindow);
        }
        for cohort in &self.cohorts {
            known(&cohort.country)?;
            if cohort.size < 0 {
                return Err(SimError::NegativeCohort {
                    country: cohort.country,
                    size: cohort.size,
                });
            }
        }
        for flow in &self.flows {
            known(&flow.from)?;
            known(&flow.to)?;
            if flow.count < 0 {
                return Err(SimError::NegativeFlow {
                    day: flow.day,
                    count: flow.count,
                });
            }
            if flow.from == flow.to {
                return Err(SimError::SelfFlow {
                    day: flow.day,
                    from: flow.from,
                });
            }
            if flow.day >= self.horizon_days {
                return Err(SimError::DayOutOfRange {
                    day: flow.day,
                    horizon: self.horizon_days,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Agent {
    pub id: u32,
    pub is_platform_user: bool,
    /// `(day, country)` entries with strictly increasing days; the agent
    /// stays in a country until the next entry.
    pub location_history: Vec<(u32, CountryCode)>,
}

impl Agent {
    pub fn location_on(&self, day: u32) -> CountryCode {
        let i = self.location_history.partition_point(|&(d, _)| d <= day);
        self.location_history[i.saturating_sub(1)].1
    }

    /// Distinct countries the agent occupied on any day in `first..=last`.
    pub fn countries_between(&self, first: u32, last: u32) -> impl Iterator<Item = CountryCode> + '_ {
        let start = self.location_history.partition_point(|&(d, _)| d <= first).saturating_sub(1);
        let mut seen: Vec<CountryCode> = Vec::with_capacity(2);
        self.location_history[start..]
            .iter()
            .take_while(move |&&(d, _)| d <= last)
            .filter_map(move |&(_, c)| {
                if seen.contains(&c) {
                    None
                } else {
                    seen.push(c);
                    Some(c)
                }
            })
    }

    fn move_to(&mut self, day: u32, to: CountryCode) {
        match self.location_history.last_mut() {
            Some(last) if last.0 == day => last.1 = to,
            _ => self.location_history.push((day, to)),
        }
    }
}

/// Simulator state: every agent with its full itinerary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct World {
    pub countries: Vec<CountryCode>,
    pub agents: Vec<Agent>,
}

/// Output of [`run_scenario`].
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedDataset {
    pub config: ScenarioConfig,
    pub world: World,
    /// `presence[day][i]`: agents in `countries[i]` on `day`.
    presence: Vec<Vec<u64>>,
    /// `arrivals[day][i]`: cumulative moves into `countries[i]` up to `day`.
    arrivals: Vec<Vec<u64>>,
    /// Synthetic MAU at each week start, per country.
    mau: BTreeMap<CountryCode, MauSeries>,
}

/// Runs a scenario. The result depends only on the config (including its seed).
pub fn run_scenario(config: &ScenarioConfig) -> Result<SimulatedDataset, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let countries = config.countries.clone();
    let slot: BTreeMap<CountryCode, usize> = countries.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let horizon = config.horizon_days;

    let mut agents = Vec::new();
    for cohort in &config.cohorts {
        for _ in 0..cohort.size {
            let is_platform_user = rng.gen_bool(config.origin_penetration);
            agents.push(Agent {
                id: agents.len() as u32,
                is_platform_user,
                location_history: vec![(0, cohort.country)],
            });
        }
    }

    let mut location: Vec<CountryCode> = agents.iter().map(|a| a.location_history[0].1).collect();
    let mut net_moves = vec![vec![0i64; countries.len()]; horizon as usize];
    let mut move_ins = vec![vec![0u64; countries.len()]; horizon as usize];

    let mut flows = config.flows.clone();
    flows.sort_by_key(|f| f.day);
    for flow in &flows {
        let candidates: Vec<usize> = location
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == flow.from)
            .map(|(i, _)| i)
            .collect();
        let requested = flow.count as u64;
        if requested > candidates.len() as u64 {
            return Err(SimError::InsufficientAgents {
                day: flow.day,
                from: flow.from,
                requested,
                available: candidates.len() as u64,
            });
        }
        let mut picked: Vec<usize> = index::sample(&mut rng, candidates.len(), flow.count as usize)
            .into_iter()
            .map(|k| candidates[k])
            .collect();
        picked.sort_unstable();
        for i in picked {
            agents[i].move_to(flow.day, flow.to);
            location[i] = flow.to;
        }
        let day = flow.day as usize;
        net_moves[day][slot[&flow.from]] -= flow.count;
        net_moves[day][slot[&flow.to]] += flow.count;
        move_ins[day][slot[&flow.to]] += requested;
    }

    let mut presence = Vec::with_capacity(horizon as usize);
    let mut arrivals = Vec::with_capacity(horizon as usize);
    let mut today = vec![0i64; countries.len()];
    // Start from the cohorts; day-0 moves overwrite the agents' first entry.
    for cohort in &config.cohorts {
        today[slot[&cohort.country]] += cohort.size;
    }
    for (i, v) in net_moves[0].iter().enumerate() {
        today[i] += v;
    }
    let mut cumulative = move_ins[0].clone();
    presence.push(today.iter().map(|&v| v as u64).collect::<Vec<u64>>());
    arrivals.push(cumulative.clone());
    for day in 1..horizon as usize {
        for i in 0..countries.len() {
            today[i] += net_moves[day][i];
            cumulative[i] += move_ins[day][i];
        }
        presence.push(today.iter().map(|&v| v as u64).collect());
        arrivals.push(cumulative.clone());
    }

    let world = World { countries, agents };
    let mut dataset = SimulatedDataset {
        config: config.clone(),
        world,
        presence,
        arrivals,
        mau: BTreeMap::new(),
    };
    dataset.mau = dataset.compute_mau_series();
    Ok(dataset)
}

/// Distinct platform users present in `country` on any day of the trailing window ending on `day`.
pub fn observe_mau(
    dataset: &SimulatedDataset,
    country: CountryCode,
    day: u32,
    window_days: u32,
) -> Result<u64, SimError> {
    if !dataset.world.countries.contains(&country) {
        return Err(SimError::UnknownCountry(country));
    }
    if window_days == 0 {
        return Err(SimError::EmptyWindow);
    }
    dataset.check_day(day)?;
    let first = (day + 1).saturating_sub(window_days);
    Ok(dataset
        .world
        .agents
        .iter()
        .filter(|a| a.is_platform_user)
        .filter(|a| a.countries_between(first, day).any(|c| c == country))
        .count() as u64)
}

impl SimulatedDataset {
    fn check_day(&self, day: u32) -> Result<(), SimError> {
        if day >= self.config.horizon_days {
            Err(SimError::DayOutOfRange {
                day,
                horizon: self.config.horizon_days,
            })
        } else {
            Ok(())
        }
    }

    fn slot(&self, country: CountryCode) -> Result<usize, SimError> {
        self.world
            .countries
            .iter()
            .position(|&c| c == country)
            .ok_or(SimError::UnknownCountry(country))
    }

    pub fn epoch(&self) -> Epoch {
        self.config.epoch
    }

    pub fn total_agents(&self) -> u64 {
        self.world.agents.len() as u64
    }

    pub fn platform_users(&self) -> u64 {
        self.world.agents.iter().filter(|a| a.is_platform_user).count() as u64
    }

    /// Week starts inside the horizon: `w0, w1, ...` on days `0, 7, ...`.
    pub fn weeks(&self) -> Vec<WeekIndex> {
        (0..self.config.horizon_days)
            .step_by(7)
            .map(|d| WeekIndex((d / 7) as i32))
            .collect()
    }

    pub fn week_day(week: WeekIndex) -> u32 {
        7 * week.0 as u32
    }

    /// All agents in `country` on `day` (ground truth, platform users or not).
    pub fn presence(&self, country: CountryCode, day: u32) -> Result<u64, SimError> {
        self.check_day(day)?;
        Ok(self.presence[day as usize][self.slot(country)?])
    }

    /// Cumulative arrivals into `country` up to and including `day`.
    pub fn cumulative_arrivals(&self, country: CountryCode, day: u32) -> Result<u64, SimError> {
        self.check_day(day)?;
        Ok(self.arrivals[day as usize][self.slot(country)?])
    }

    /// Change in true presence between `w0` and `week`.
    pub fn true_net_inflow(&self, country: CountryCode, week: WeekIndex) -> Result<i64, SimError> {
        let now = self.presence(country, Self::week_day(week))?;
        let base = self.presence(country, 0)?;
        Ok(now as i64 - base as i64)
    }

    /// Platform users present anywhere during the window ending on `day`, each counted once.
    pub fn distinct_platform_users(&self, day: u32, window_days: u32) -> Result<u64, SimError> {
        self.check_day(day)?;
        let first = (day + 1).saturating_sub(window_days.max(1));
        Ok(self
            .world
            .agents
            .iter()
            .filter(|a| a.is_platform_user && a.countries_between(first, day).next().is_some())
            .count() as u64)
    }

    pub fn mau_series(&self) -> &BTreeMap<CountryCode, MauSeries> {
        &self.mau
    }

    fn compute_mau_series(&self) -> BTreeMap<CountryCode, MauSeries> {
        let weeks = self.weeks();
        let window = self.config.window_days;
        let mut counts: BTreeMap<CountryCode, Vec<(WeekIndex, u64)>> = self
            .world
            .countries
            .iter()
            .map(|&c| (c, weeks.iter().map(|&w| (w, 0)).collect()))
            .collect();
        for agent in self.world.agents.iter().filter(|a| a.is_platform_user) {
            for (k, &week) in weeks.iter().enumerate() {
                let day = Self::week_day(week);
                let first = (day + 1).saturating_sub(window);
                for c in agent.countries_between(first, day) {
                    counts.get_mut(&c).expect("known country")[k].1 += 1;
                }
            }
        }
        counts
            .into_iter()
            .map(|(c, points)| (c, MauSeries::original(c, points).expect("weeks are distinct")))
            .collect()
    }

    /// Synthetic store records, one per country and week, stamped at midnight UTC of the week start.
    pub fn observations(&self, language: &LanguageTag) -> Vec<MauObservation> {
        let epoch = self.epoch();
        self.mau
            .values()
            .flat_map(|series| {
                series.values().iter().map(move |(&week, &mau)| MauObservation {
                    country: series.country(),
                    language: language.clone(),
                    week,
                    epoch,
                    mau: mau as u64,
                    collected_at: Utc.from_utc_datetime(&epoch.week_start(week).and_time(NaiveTime::MIN)),
                })
            })
            .collect()
    }

    /// True day-0 presence of every destination, as an official stock would report it.
    pub fn diaspora_stocks(&self) -> BTreeMap<CountryCode, DiasporaStock> {
        let year = chrono::Datelike::year(&self.epoch().date()) - 1;
        self.destinations()
            .map(|c| {
                let stock = self.presence(c, 0).expect("known country");
                (
                    c,
                    DiasporaStock {
                        country: c,
                        stock,
                        reference_year: year,
                    },
                )
            })
            .collect()
    }

    /// The configured penetration for every destination, if it is a valid rate.
    pub fn penetration_rates(&self) -> BTreeMap<CountryCode, PenetrationRate> {
        self.destinations()
            .filter_map(|c| PenetrationRate::new(c, self.config.origin_penetration).ok().map(|r| (c, r)))
            .collect()
    }

    /// Daily cumulative arrivals for every destination.
    pub fn arrival_series(&self) -> BTreeMap<CountryCode, ArrivalSeries> {
        let epoch = self.epoch().date();
        self.destinations()
            .map(|c| {
                let i = self.slot(c).expect("known country");
                let points = self
                    .arrivals
                    .iter()
                    .enumerate()
                    .map(|(d, row)| (epoch + Duration::days(d as i64), row[i]));
                (c, ArrivalSeries::new(c, points).expect("arrivals are cumulative"))
            })
            .collect()
    }

    fn destinations(&self) -> impl Iterator<Item = CountryCode> + '_ {
        let origin = self.config.origin;
        self.world.countries.iter().copied().filter(move |&c| c != origin)
    }

    /// Writes the dataset in the ingestion formats plus a presence table.
    pub fn export(&self, dir: &Path) -> Result<SimulationExports, SimError> {
        fs::create_dir_all(dir)?;
        let paths = SimulationExports::in_dir(dir);

        if paths.store.exists() {
            fs::remove_file(&paths.store)?;
        }
        let mut store = SnapshotStore::open(&paths.store)?;
        store.append_all(self.observations(&LanguageTag::default()))?;

        loaders::save_diaspora(fs::File::create(&paths.diaspora)?, &self.diaspora_stocks())?;
        loaders::save_penetration(fs::File::create(&paths.penetration)?, &self.penetration_rates())?;
        loaders::save_unhcr(fs::File::create(&paths.arrivals)?, &self.arrival_series())?;

        let mut presence = csv::Writer::from_path(&paths.presence).map_err(io::Error::other)?;
        presence
            .write_record(["day", "country", "present", "cumulative_arrivals"])
            .map_err(io::Error::other)?;
        for (day, (row, arr)) in self.presence.iter().zip(&self.arrivals).enumerate() {
            for (i, c) in self.world.countries.iter().enumerate() {
                presence
                    .write_record([day.to_string(), c.to_string(), row[i].to_string(), arr[i].to_string()])
                    .map_err(io::Error::other)?;
            }
        }
        presence.flush()?;
        Ok(paths)
    }
}

/// File locations written by [`SimulatedDataset::export`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimulationExports {
    pub store: PathBuf,
    pub diaspora: PathBuf,
    pub penetration: PathBuf,
    pub arrivals: PathBuf,
    pub presence: PathBuf,
}

impl SimulationExports {
    pub fn in_dir(dir: &Path) -> Self {
        SimulationExports {
            store: dir.join("sim_store.jsonl"),
            diaspora: dir.join("sim_diaspora.csv"),
            penetration: dir.join("sim_penetration.csv"),
            arrivals: dir.join("sim_unhcr.csv"),
            presence: dir.join("sim_presence.csv"),
        }
    }
}

/// Stock-scaled flow estimates for every destination and week after `w0`,
/// using true day-0 presence as the stock.
///
/// Countries with no baseline audience are skipped.
pub fn synthetic_estimates(
    dataset: &SimulatedDataset,
) -> Result<BTreeMap<(CountryCode, WeekIndex), f64>, SimError> {
    let stocks = dataset.diaspora_stocks();
    let mut out = BTreeMap::new();
    for (country, stock) in &stocks {
        let series = &dataset.mau[country];
        let Some(base) = series.get(WeekIndex::BASELINE).filter(|&b| b > 0.0) else {
            continue;
        };
        for (&week, &now) in series.values().range(WeekIndex(1)..) {
            out.insert((*country, week), delta_ua(stock, now, base)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub country: CountryCode,
    pub week: WeekIndex,
    pub estimated: f64,
    pub true_net_inflow: i64,
    pub bias: f64,
}

/// Estimated minus true net inflow for each estimate the dataset can score.
pub fn estimator_bias_report(
    dataset: &SimulatedDataset,
    estimates: &BTreeMap<(CountryCode, WeekIndex), f64>,
) -> Vec<BiasRow> {
    estimates
        .iter()
        .filter_map(|(&(country, week), &estimated)| {
            let truth = dataset.true_net_inflow(country, week).ok()?;
            Some(BiasRow {
                country,
                week,
                estimated,
                true_net_inflow: truth,
                bias: estimated - truth as f64,
            })
        })
        .collect()
}

pub fn write_bias_report(path: &Path, rows: &[BiasRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(io::Error::other)?;
    for row in rows {
        w.serialize(row).map_err(io::Error::other)?;
    }
    w.flush()
}
