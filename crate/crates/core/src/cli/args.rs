use std::ffi::OsString;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use log::error;

use super::{
    cmd_collect, cmd_estimate, cmd_report, cmd_simulate, cmd_validate, default_countries, CollectConfig,
    EstimateConfig, GlobalConfig, ReportConfig, ValidateConfig, DEFAULT_MIN_SHARE,
};
use crate::domain::{CountryCode, Epoch, LanguageTag, WeekIndex};
use crate::ingest::{self, client::ENV_REPLAY_DIR, RetryPolicy};

/// Week list: `0..5` (inclusive) or `0,2,5`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeekList(pub Vec<WeekIndex>);

impl FromStr for WeekList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let week = |t: &str| t.trim().parse::<WeekIndex>().map_err(|e| format!("bad week {t:?}: {e}"));
        if let Some((a, b)) = s.split_once("..") {
            let (a, b) = (week(a)?, week(b)?);
            if a > b {
                return Err(format!("empty week range {s}"));
            }
            return Ok(WeekList((a.0..=b.0).map(WeekIndex).collect()));
        }
        s.split(',').map(week).collect::<Result<_, _>>().map(WeekList)
    }
}

#[derive(Debug, Parser)]
#[command(name = "flowlens", version, about = "Displacement flow estimates from advertising audience counts")]
pub struct Cli {
    /// First day of week w0.
    #[arg(long, global = true, default_value = "2022-02-24")]
    epoch_date: NaiveDate,
    /// Snapshot store (JSON lines).
    #[arg(long, global = true, default_value = "flowlens_store.jsonl")]
    store: PathBuf,
    /// Serve audience requests from recorded responses.
    #[arg(long, global = true, env = ENV_REPLAY_DIR)]
    replay_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fetch audience counts into the store.
    Collect {
        #[arg(long, value_delimiter = ',')]
        countries: Option<Vec<CountryCode>>,
        /// Replay weeks, e.g. `0..5` or `0,5`.
        #[arg(long, default_value = "0..5")]
        weeks: WeekList,
        #[arg(long, default_value = "uk")]
        language: LanguageTag,
        #[arg(long, default_value_t = ingest::MIN_PLATFORM_AGE)]
        min_age: u8,
        #[arg(long, default_value_t = ingest::DEFAULT_FAN_OUT)]
        fan_out: usize,
        /// Live mode: save every response here for later replay.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Flow estimates and shares for both bounds.
    Estimate {
        #[arg(long)]
        diaspora: PathBuf,
        #[arg(long)]
        penetration: PathBuf,
        #[arg(long, default_value = "w0")]
        baseline_week: WeekIndex,
        #[arg(long, default_value = "w5")]
        target_week: WeekIndex,
        #[arg(long, default_value = "uk")]
        language: LanguageTag,
    },
    /// Correlate prewar audiences with diaspora stocks.
    Validate {
        #[arg(long)]
        diaspora: PathBuf,
        #[arg(long)]
        penetration: PathBuf,
        #[arg(long, default_value = "w0")]
        prewar_week: WeekIndex,
        #[arg(long, default_value = "uk")]
        language: LanguageTag,
        /// Population aged 13+; estimates the origin's penetration.
        #[arg(long)]
        population: Option<PathBuf>,
    },
    /// Run a synthetic scenario and report estimator bias.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Write plot data for the figures.
    Report {
        #[arg(long)]
        penetration: PathBuf,
        #[arg(long)]
        unhcr: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_SHARE)]
        min_share: f64,
        #[arg(long, default_value = "uk")]
        language: LanguageTag,
    },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), super::CliError> {
    let global = GlobalConfig {
        epoch: Epoch::new(cli.epoch_date),
        store: cli.store,
        replay_dir: cli.replay_dir,
        out: cli.out,
    };
    match cli.command {
        Command::Collect {
            countries,
            weeks,
            language,
            min_age,
            fan_out,
            record,
        } => {
            let s = cmd_collect(
                &global,
                &CollectConfig {
                    countries: countries.unwrap_or_else(default_countries),
                    weeks: weeks.0,
                    language,
                    min_age,
                    fan_out,
                    retry: RetryPolicy::default(),
                    record_dir: record,
                },
            )?;
            println!("{} requests, {} new, {} unchanged", s.requested, s.inserted, s.duplicates);
        }
        Command::Estimate {
            diaspora,
            penetration,
            baseline_week,
            target_week,
            language,
        } => {
            let r = cmd_estimate(
                &global,
                &EstimateConfig {
                    diaspora,
                    penetration,
                    baseline_week,
                    target_week,
                    language,
                },
            )?;
            println!("{} estimates, {} exclusions", r.estimates.len(), r.exclusions.len());
        }
        Command::Validate {
            diaspora,
            penetration,
            prewar_week,
            language,
            population,
        } => {
            let r = cmd_validate(
                &global,
                &ValidateConfig {
                    diaspora,
                    penetration,
                    prewar_week,
                    language,
                    population,
                },
            )?;
            println!(
                "original r={:.4} p={:.3e}; adjusted r={:.4} p={:.3e}; n={}",
                r.original.r, r.original.p_value, r.adjusted.r, r.adjusted.p_value, r.adjusted.n
            );
            if let Some(p) = r.origin_penetration {
                println!("{} penetration {:.4}", p.country, p.rate);
            }
        }
        Command::Simulate { scenario } => {
            let s = cmd_simulate(&global, &scenario)?;
            let worst = s.bias.iter().map(|b| b.bias.abs()).fold(0.0, f64::max);
            println!(
                "{} agents ({} platform users); largest absolute bias {}",
                s.agents, s.platform_users, worst
            );
        }
        Command::Report {
            penetration,
            unhcr,
            min_share,
            language,
        } => {
            let r = cmd_report(
                &global,
                &ReportConfig {
                    penetration,
                    unhcr,
                    min_share,
                    language,
                },
            )?;
            println!("{} countries displayed, {} exclusion notes", r.shares.len(), r.exclusions.len());
        }
    }
    Ok(())
}
