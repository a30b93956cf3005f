use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{TimeZone, Utc};
use flowlens::cli::{
    self, cmd_collect, cmd_estimate, cmd_report, cmd_simulate, cmd_validate, CliError, CollectConfig,
    EstimateConfig, GlobalConfig, ReportConfig, ValidateConfig,
};
use flowlens::domain::{Bound, CountryCode, Epoch, LanguageTag, MauObservation, WeekIndex};
use flowlens::ingest::SnapshotStore;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn c(s: &str) -> CountryCode {
    CountryCode::new(s).unwrap()
}

fn replay_global(dir: &Path) -> GlobalConfig {
    GlobalConfig::new(dir.join("store.jsonl"), dir.join("out")).with_replay_dir(fixtures().join("replay"))
}

fn estimate_config() -> EstimateConfig {
    EstimateConfig {
        diaspora: fixtures().join("diaspora_eu_2021.csv"),
        penetration: fixtures().join("penetration_eu.csv"),
        baseline_week: WeekIndex(0),
        target_week: WeekIndex(5),
        language: LanguageTag::default(),
    }
}

fn validate_config(diaspora: PathBuf) -> ValidateConfig {
    ValidateConfig {
        diaspora,
        penetration: fixtures().join("penetration_eu.csv"),
        prewar_week: WeekIndex(0),
        language: LanguageTag::default(),
        population: None,
    }
}

fn report_config(unhcr: PathBuf) -> ReportConfig {
    ReportConfig {
        penetration: fixtures().join("penetration_eu.csv"),
        unhcr,
        min_share: cli::DEFAULT_MIN_SHARE,
        language: LanguageTag::default(),
    }
}

fn collected(dir: &Path) -> GlobalConfig {
    let global = replay_global(dir);
    cmd_collect(&global, &CollectConfig::default()).unwrap();
    global
}

#[test]
fn collect_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let global = replay_global(dir.path());
    let first = cmd_collect(&global, &CollectConfig::default()).unwrap();
    assert_eq!(first.inserted, 168);
    let bytes = fs::read(&global.store).unwrap();
    assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 168);

    let second = cmd_collect(&global, &CollectConfig::default()).unwrap();
    assert_eq!((second.inserted, second.duplicates), (0, 168));
    assert_eq!(fs::read(&global.store).unwrap(), bytes);
}

#[test]
fn conflicting_recording_is_named_and_store_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let global = collected(dir.path());
    let before = fs::read(&global.store).unwrap();

    let altered = dir.path().join("altered");
    fs::create_dir(&altered).unwrap();
    for entry in fs::read_dir(fixtures().join("replay")).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), altered.join(entry.file_name())).unwrap();
    }
    let target = altered.join("PL-uk-w5.json");
    let text = fs::read_to_string(&target).unwrap().replace("524365", "524366");
    fs::write(&target, text).unwrap();

    let global = GlobalConfig {
        replay_dir: Some(altered),
        ..global
    };
    let err = cmd_collect(&global, &CollectConfig::default()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("PL-uk-w5"), "{err}");
    assert_eq!(fs::read(&global.store).unwrap(), before);
}

fn observation(country: &str, week: i32, mau: u64) -> MauObservation {
    let epoch = Epoch::default();
    MauObservation {
        country: c(country),
        language: LanguageTag::default(),
        week: WeekIndex(week),
        epoch,
        mau,
        collected_at: Utc.from_utc_datetime(&epoch.week_start(WeekIndex(week)).and_hms_opt(6, 0, 0).unwrap()),
    }
}

#[test]
fn two_country_toy_store_splits_evenly() {
    let dir = tempfile::tempdir().unwrap();
    let global = GlobalConfig::new(dir.path().join("store.jsonl"), dir.path().join("out"));
    let mut store = SnapshotStore::open(&global.store).unwrap();
    store
        .append_all([
            observation("PL", 0, 100),
            observation("PL", 5, 200),
            observation("DE", 0, 50),
            observation("DE", 5, 100),
        ])
        .unwrap();
    let diaspora = dir.path().join("d.csv");
    fs::write(&diaspora, "country,stock,reference_year\nPL,1000,2021\nDE,1000,2021\n").unwrap();
    let penetration = dir.path().join("p.csv");
    fs::write(&penetration, "country,rate\nPL,0.5\nDE,0.5\n").unwrap();

    let report = cmd_estimate(
        &global,
        &EstimateConfig {
            diaspora,
            penetration,
            ..estimate_config()
        },
    )
    .unwrap();
    for e in &report.estimates {
        assert_eq!(e.share, 0.5);
        assert_eq!(e.delta_ua, 1000.0);
    }
    assert_eq!(report.estimates.len(), 4);
    assert!(global.out.join(cli::FLOW_ESTIMATES).is_file());
}

#[test]
fn fixture_bounds_are_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let global = collected(dir.path());
    let report = cmd_estimate(&global, &estimate_config()).unwrap();
    let countries: BTreeSet<_> = report.estimates.iter().map(|e| e.country).collect();
    assert_eq!(countries.len(), 27);
    for country in countries {
        let lower = report.get(country, Bound::Lower).unwrap();
        let upper = report.get(country, Bound::Upper).unwrap();
        assert!(upper.mau_change >= lower.mau_change, "{country}");
        // The rate cancels in the stock-scaled change.
        assert!((upper.delta_ua - lower.delta_ua).abs() <= 1e-12 * lower.delta_ua.abs().max(1.0));
    }
    assert!(report.exclusions.iter().any(|x| x.country == CountryCode::ORIGIN));
}

#[test]
fn exact_multiple_correlates_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let global = GlobalConfig::new(dir.path().join("store.jsonl"), dir.path().join("out"));
    let mut store = SnapshotStore::open(&global.store).unwrap();
    let mut csv = String::from("country,stock,reference_year\n");
    for (i, country) in ["AT", "BE", "CZ", "DE", "PL"].iter().enumerate() {
        let stock = 1000 * (i as u64 + 1) * (i as u64 + 2);
        store.append(observation(country, 0, stock * 3)).unwrap();
        csv.push_str(&format!("{country},{stock},2021\n"));
    }
    let diaspora = dir.path().join("d.csv");
    fs::write(&diaspora, csv).unwrap();
    let penetration = dir.path().join("p.csv");
    fs::write(&penetration, "country,rate\nAT,0.5\nBE,0.5\nCZ,0.5\nDE,0.5\nPL,0.5\n").unwrap();
    let report = cmd_validate(
        &global,
        &ValidateConfig {
            penetration,
            ..validate_config(diaspora)
        },
    )
    .unwrap();
    assert!((report.original.r - 1.0).abs() < 1e-12);
    assert!((report.adjusted.r - 1.0).abs() < 1e-12);
}

#[test]
fn shuffled_diaspora_labels_weaken_the_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let global = collected(dir.path());
    let real = cmd_validate(&global, &validate_config(fixtures().join("diaspora_eu_2021.csv"))).unwrap();

    // Rotate stocks by one position across countries.
    let text = fs::read_to_string(fixtures().join("diaspora_eu_2021.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let mut shuffled = String::from("country,stock,reference_year\n");
    for (i, row) in rows.iter().enumerate() {
        let stock = rows[(i + 1) % rows.len()][1];
        shuffled.push_str(&format!("{},{},{}\n", row[0], stock, row[2]));
    }
    let path = dir.path().join("shuffled.csv");
    fs::write(&path, shuffled).unwrap();
    let fake = cmd_validate(&global, &validate_config(path)).unwrap();
    assert!(fake.original.r.abs() < real.original.r.abs());
    assert!(fake.adjusted.r.abs() < real.adjusted.r.abs());
}

#[test]
fn report_needs_upstream_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let global = collected(dir.path());
    let err = cmd_report(&global, &report_config(fixtures().join("unhcr_arrivals.csv"))).unwrap_err();
    assert!(matches!(err, CliError::MissingOutput(_)), "{err}");
    assert_eq!(err.exit_code(), 1);
}

fn full_run(dir: &Path) -> GlobalConfig {
    let global = collected(dir);
    cmd_estimate(&global, &estimate_config()).unwrap();
    cmd_validate(&global, &validate_config(fixtures().join("diaspora_eu_2021.csv"))).unwrap();
    global
}

#[test]
fn report_overlays_only_countries_with_crossing_data() {
    let dir = tempfile::tempdir().unwrap();
    let global = full_run(dir.path());
    let summary = cmd_report(&global, &report_config(fixtures().join("unhcr_arrivals.csv"))).unwrap();
    let overlaid: BTreeSet<_> = summary
        .ribbons
        .iter()
        .filter(|r| r.unhcr.is_some())
        .map(|r| r.country.as_str().to_string())
        .collect();
    assert_eq!(overlaid, BTreeSet::from(["HU".to_string(), "PL".to_string()]));
    for r in &summary.ribbons {
        assert!(0.0 <= r.lower && r.lower <= r.upper && r.upper <= 1.0, "{r:?}");
    }
    let hu_max = summary.trends.iter().find(|t| t.country.as_str() == "HU" && t.is_max_gap).unwrap();
    assert_eq!(hu_max.week, WeekIndex(1));
    for name in [cli::FIG2_SHARES, cli::FIG3_RIBBONS, cli::TREND_COMPARISON, cli::PLOT_SPEC, cli::MANIFEST] {
        assert!(global.out.join(name).is_file(), "{name}");
    }
    let spec: serde_json::Value = serde_json::from_slice(&fs::read(global.out.join(cli::PLOT_SPEC)).unwrap()).unwrap();
    assert_eq!(spec["figures"][0]["x"]["scale"], "log");
}

#[test]
fn every_input_country_is_shown_or_excluded() {
    let dir = tempfile::tempdir().unwrap();
    let global = full_run(dir.path());
    let summary = cmd_report(&global, &report_config(fixtures().join("unhcr_arrivals.csv"))).unwrap();
    let mut seen: BTreeSet<CountryCode> = summary.shares.iter().map(|r| r.country).collect();
    seen.extend(summary.exclusions.iter().map(|x| x.country));
    let store = SnapshotStore::open(&global.store).unwrap();
    for country in store.series(&LanguageTag::default()).keys() {
        assert!(seen.contains(country), "{country}");
    }
    let shown: Vec<_> = summary.shares.iter().map(|r| r.country.as_str()).take(3).collect();
    assert_eq!(shown, ["PL", "DE", "CZ"]);
    assert!(summary.shares.iter().all(|r| r.share_lower > 0.02));
}

#[test]
fn empty_overlap_fails_without_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    let global = full_run(dir.path());
    let late = dir.path().join("late.csv");
    fs::write(&late, "date,country,cumulative_arrivals\n2023-01-01,PL,10\n2023-01-02,PL,20\n").unwrap();
    let err = cmd_report(&global, &report_config(late)).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    for name in [cli::FIG2_SHARES, cli::FIG3_RIBBONS, cli::TREND_COMPARISON, cli::PLOT_SPEC] {
        assert!(!global.out.join(name).exists(), "{name}");
    }
}

#[test]
fn simulated_exports_feed_the_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let global = GlobalConfig::new(out.join("sim_store.jsonl"), &out);
    let summary = cmd_simulate(&global, &fixtures().join("scenarios/direct.json")).unwrap();
    assert!(summary.bias.iter().all(|b| b.bias == 0.0));
    assert!(out.join(cli::BIAS_REPORT).is_file());

    let report = cmd_estimate(
        &global,
        &EstimateConfig {
            diaspora: summary.exports.diaspora.clone(),
            penetration: summary.exports.penetration.clone(),
            ..estimate_config()
        },
    )
    .unwrap();
    let pl = report.get(c("PL"), Bound::Lower).unwrap();
    let truth = summary
        .bias
        .iter()
        .find(|b| b.country == c("PL") && b.week == WeekIndex(5))
        .unwrap()
        .true_net_inflow;
    assert_eq!(pl.delta_ua, truth as f64);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let store = dir.path().join("s.jsonl");
    let code = cli::run([
        "flowlens".as_ref(),
        "--store".as_ref(),
        store.as_os_str(),
        "estimate".as_ref(),
        "--diaspora".as_ref(),
        missing.as_os_str(),
        "--penetration".as_ref(),
        missing.as_os_str(),
    ]);
    assert_eq!(code, 1);
    assert_eq!(cli::run(["flowlens", "simulate"]), 1);
}
