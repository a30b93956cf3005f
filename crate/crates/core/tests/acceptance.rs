//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so every criterion is reported even if
//! an earlier one fails; the process exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use flowlens::cli::{
    self, cmd_collect, cmd_estimate, cmd_report, cmd_validate, CollectConfig, EstimateConfig, GlobalConfig,
    ReportConfig, ValidateConfig,
};
use flowlens::domain::{Bound, CountryCode, DiasporaStock, LanguageTag, PenetrationRate, WeekIndex};
use flowlens::estimator::{self, adjust_mau, delta_ua, normalize_values, pearson, shares};
use flowlens::ingest;
use flowlens::simulate::{self, observe_mau, run_scenario, Cohort, Flow, ScenarioConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn c(s: &str) -> CountryCode {
    CountryCode::new(s).unwrap()
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let took = started.elapsed();
    check(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

const CASES: u32 = 1000;

fn runner(seed: u8) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases: CASES,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::from_seed(proptest::test_runner::RngAlgorithm::ChaCha, &[seed; 32]),
    )
}

fn run_prop<S: Strategy>(
    name: &str,
    seed: u8,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(seed)
        .run(&strategy, test)
        .map_err(|e| format!("{name}: {e}"))
}

fn stock(country: CountryCode, n: u64) -> DiasporaStock {
    DiasporaStock {
        country,
        stock: n,
        reference_year: 2021,
    }
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let pl = c("PL");

    run_prop(
        "adjustment",
        1,
        (0u64..10_000_000, 0u64..10_000_000, 1e-3f64..=1.0),
        |(a, b, r)| {
            let rate = PenetrationRate::new(pl, r).unwrap();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(adjust_mau(lo, &rate) <= adjust_mau(hi, &rate));
            prop_assert!(adjust_mau(a, &rate) >= a as f64);
            prop_assert_eq!(adjust_mau(a, &PenetrationRate::new(pl, 1.0).unwrap()), a as f64);
            prop_assert!((adjust_mau(a, &rate) * r - a as f64).abs() <= 1e-9 * (a as f64).max(1.0));
            Ok(())
        },
    )?;

    run_prop(
        "stock-scaled change",
        2,
        (0u64..5_000_000, 1u64..1000, 1u64..10_000_000, 0u64..10_000_000),
        |(s, k, base, now)| {
            let one = delta_ua(&stock(pl, s), now as f64, base as f64).unwrap();
            let scaled = delta_ua(&stock(pl, s * k), now as f64, base as f64).unwrap();
            prop_assert!((scaled - k as f64 * one).abs() <= 1e-9 * scaled.abs().max(1.0));
            prop_assert_eq!(delta_ua(&stock(pl, s), base as f64, base as f64).unwrap(), 0.0);
            Ok(())
        },
    )?;

    let deltas = proptest::collection::btree_map(
        proptest::sample::select(cli::DEFAULT_COUNTRIES[..27].to_vec()),
        1e-3f64..1e7,
        1..27,
    );
    run_prop("shares", 3, (deltas, 1e-6f64..1e6), |(d, k)| {
        let d: BTreeMap<CountryCode, f64> = d.into_iter().map(|(k, v)| (c(k), v)).collect();
        let base = shares(&d).unwrap();
        let sum: f64 = base.shares.values().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        let scaled = shares(&d.iter().map(|(&c, &v)| (c, v * k)).collect()).unwrap();
        for (country, s) in &base.shares {
            prop_assert!((scaled.shares[country] - s).abs() <= 1e-12);
        }
        Ok(())
    })?;

    run_prop(
        "normalization",
        4,
        proptest::collection::vec(0.0f64..1e9, 1..40).prop_filter("positive max", |v| v.iter().any(|&x| x > 0.0)),
        |v| {
            let (out, _) = normalize_values(&v, None).unwrap();
            let argmax = |xs: &[f64]| {
                xs.iter()
                    .enumerate()
                    .fold(0, |best, (i, &x)| if x > xs[best] { i } else { best })
            };
            prop_assert_eq!(argmax(&out), argmax(&v));
            prop_assert_eq!(out.iter().copied().fold(f64::MIN, f64::max), 1.0);
            prop_assert!(out.iter().all(|&x| (0.0..=1.0).contains(&x)));
            Ok(())
        },
    )?;

    within(started, Duration::from_secs(5))?;
    Ok(format!("4 identity suites x {CASES} cases in {:?}", started.elapsed()))
}

/// Textbook two-pass correlation.
fn two_pass_r(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(5..=50);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let noise = rng.gen_range(0.0..3.0);
        let y: Vec<f64> = x.iter().map(|v| v * 0.3 + noise * rng.gen_range(-50.0..50.0)).collect();
        let got = pearson(&x, &y).map_err(|e| e.to_string())?;
        let diff = (got.r - two_pass_r(&x, &y)).abs();
        worst = worst.max(diff);
        check(diff <= 1e-12, || format!("r differs from oracle by {diff:e} at n={n}"))?;
        if got.r.abs() > 0.9 && n >= 20 {
            check(got.p_value < 1e-4, || format!("p={} for r={} n={n}", got.p_value, got.r))?;
        }
    }
    for _ in 0..100 {
        let n = rng.gen_range(3..=50);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let (a, b) = (rng.gen_range(0.1..50.0), rng.gen_range(-1e3..1e3));
        let up: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let down: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
        let r_up = pearson(&x, &up).map_err(|e| e.to_string())?.r;
        let r_down = pearson(&x, &down).map_err(|e| e.to_string())?.r;
        check((r_up - 1.0).abs() <= 1e-12 && (r_down + 1.0).abs() <= 1e-12, || {
            format!("affine data gave r={r_up}, {r_down}")
        })?;
    }
    // Strongly correlated samples at n >= 20 must always be significant.
    for _ in 0..100 {
        let n = rng.gen_range(20..=50);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-10.0..10.0)).collect();
        let got = pearson(&x, &y).map_err(|e| e.to_string())?;
        if got.r.abs() > 0.9 {
            check(got.p_value < 1e-4, || format!("p={} for r={} n={n}", got.p_value, got.r))?;
        }
    }
    within(started, Duration::from_secs(5))?;
    Ok(format!("max |r - oracle| = {worst:e}"))
}

fn fixture_globals(dir: &Path) -> GlobalConfig {
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

fn validate_config() -> ValidateConfig {
    ValidateConfig {
        diaspora: fixtures().join("diaspora_eu_2021.csv"),
        penetration: fixtures().join("penetration_eu.csv"),
        prewar_week: WeekIndex(0),
        language: LanguageTag::default(),
        population: Some(fixtures().join("ua_population.csv")),
    }
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let global = fixture_globals(dir.path());
    cmd_collect(&global, &CollectConfig::default()).map_err(|e| e.to_string())?;
    let v = cli::compute_validation(&global, &validate_config()).map_err(|e| e.to_string())?;
    check((0.92..=0.94).contains(&v.adjusted.r), || format!("adjusted r={}", v.adjusted.r))?;
    check(v.adjusted.p_value < 1e-4, || format!("adjusted p={}", v.adjusted.p_value))?;
    check(v.adjusted.r >= v.original.r, || {
        format!("adjusted r={} below original r={}", v.adjusted.r, v.original.r)
    })?;

    let est = cli::compute_estimates(&global, &estimate_config()).map_err(|e| e.to_string())?;
    let share = |k: &str| est.get(c(k), Bound::Lower).map(|e| e.share).unwrap_or(f64::NAN);
    let (pl, de, cz) = (share("PL"), share("DE"), share("CZ"));
    check(pl > de && de > cz, || format!("order PL={pl} DE={de} CZ={cz}"))?;
    check((0.31..=0.35).contains(&pl), || format!("PL share {pl}"))?;
    within(started, Duration::from_secs(10))?;
    Ok(format!(
        "r original={:.4} adjusted={:.4} (p={:.1e}); shares PL={pl:.3} DE={de:.3} CZ={cz:.3}",
        v.original.r, v.adjusted.r, v.adjusted.p_value
    ))
}

fn recovery_scenario() -> ScenarioConfig {
    let destinations = ["PL", "DE", "CZ", "SK", "HU", "RO", "IT", "ES", "FR", "AT"];
    let mut countries = vec![CountryCode::ORIGIN];
    countries.extend(destinations.iter().map(|d| c(d)));
    let mut cohorts = vec![Cohort {
        country: CountryCode::ORIGIN,
        size: 81_500,
    }];
    cohorts.extend(destinations.iter().enumerate().map(|(i, d)| Cohort {
        country: c(d),
        size: 500 + 300 * i as i64,
    }));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let flows = (0..60)
        .map(|k| Flow {
            day: rng.gen_range(1..70),
            from: CountryCode::ORIGIN,
            to: c(destinations[k % destinations.len()]),
            count: rng.gen_range(50..1000),
        })
        .collect();
    ScenarioConfig {
        countries,
        origin: CountryCode::ORIGIN,
        origin_penetration: 1.0,
        cohorts,
        flows,
        horizon_days: 70,
        seed: 4,
        window_days: 30,
        epoch: Default::default(),
    }
}

fn criterion_4() -> Outcome {
    let started = Instant::now();
    let config = recovery_scenario();
    let dataset = run_scenario(&config).map_err(|e| e.to_string())?;
    check(dataset.total_agents() == 100_000, || format!("{} agents", dataset.total_agents()))?;
    check(dataset.weeks().len() == 10, || format!("{} weeks", dataset.weeks().len()))?;
    let estimates = simulate::synthetic_estimates(&dataset).map_err(|e| e.to_string())?;
    let report = simulate::estimator_bias_report(&dataset, &estimates);
    check(report.len() == 10 * 9, || format!("{} scored estimates", report.len()))?;
    for row in &report {
        check(row.estimated.fract() == 0.0 && row.estimated as i64 == row.true_net_inflow, || {
            format!("{} {}: estimated {} true {}", row.country, row.week, row.estimated, row.true_net_inflow)
        })?;
    }
    within(started, Duration::from_secs(10))?;
    Ok(format!("{} country-weeks exact, 10^5 agents in {:?}", report.len(), started.elapsed()))
}

fn criterion_5() -> Outcome {
    let started = Instant::now();
    let (cohort, move_day, horizon, window) = (1_500i64, 10u32, 90u32, 30u32);
    let config = ScenarioConfig {
        countries: vec![CountryCode::ORIGIN, c("PL")],
        origin: CountryCode::ORIGIN,
        origin_penetration: 1.0,
        cohorts: vec![Cohort {
            country: CountryCode::ORIGIN,
            size: cohort,
        }],
        flows: vec![Flow {
            day: move_day,
            from: CountryCode::ORIGIN,
            to: c("PL"),
            count: cohort,
        }],
        horizon_days: horizon,
        seed: 9,
        window_days: window,
        epoch: Default::default(),
    };
    let dataset = run_scenario(&config).map_err(|e| e.to_string())?;
    for day in 0..horizon {
        let summed: i64 = config
            .countries
            .iter()
            .map(|&k| observe_mau(&dataset, k, day, window).map(|v| v as i64))
            .sum::<Result<i64, _>>()
            .map_err(|e| e.to_string())?;
        let distinct = dataset.distinct_platform_users(day, window).map_err(|e| e.to_string())? as i64;

        // Brute force: walk every agent through every day of the window.
        let first = (day + 1).saturating_sub(window);
        let mut brute_sum = 0i64;
        let mut brute_distinct = 0i64;
        for agent in dataset.world.agents.iter().filter(|a| a.is_platform_user) {
            let mut visited: Vec<CountryCode> = Vec::new();
            for d in first..=day {
                let here = agent.location_on(d);
                if !visited.contains(&here) {
                    visited.push(here);
                }
            }
            brute_sum += visited.len() as i64;
            brute_distinct += i64::from(!visited.is_empty());
        }
        let expected = if (move_day..=move_day + window - 2).contains(&day) { cohort } else { 0 };
        check(summed - distinct == expected && brute_sum - brute_distinct == expected && summed == brute_sum, || {
            format!("day {day}: simulator {summed}-{distinct}, brute force {brute_sum}-{brute_distinct}, expected {expected}")
        })?;
    }
    Ok(format!(
        "overlap of {cohort} on days {move_day}..={} and 0 elsewhere over {horizon} days in {:?}",
        move_day + window - 2,
        started.elapsed()
    ))
}

fn pipeline(dir: &Path) -> Result<PathBuf, String> {
    let global = fixture_globals(dir);
    let e = |x: cli::CliError| x.to_string();
    cmd_collect(&global, &CollectConfig::default()).map_err(e)?;
    cmd_estimate(&global, &estimate_config()).map_err(e)?;
    cmd_validate(&global, &validate_config()).map_err(e)?;
    cmd_report(
        &global,
        &ReportConfig {
            penetration: fixtures().join("penetration_eu.csv"),
            unhcr: fixtures().join("unhcr_arrivals.csv"),
            min_share: cli::DEFAULT_MIN_SHARE,
            language: LanguageTag::default(),
        },
    )
    .map_err(e)?;
    Ok(global.out)
}

fn criterion_6() -> Outcome {
    let started = Instant::now();
    let (a, b) = (
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    );
    let (out_a, out_b) = (pipeline(a.path())?, pipeline(b.path())?);
    let names = |dir: &Path| -> Result<Vec<String>, String> {
        let mut v: Vec<String> = fs::read_dir(dir)
            .map_err(|e| e.to_string())?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        v.retain(|n| n != cli::MANIFEST);
        v.sort();
        Ok(v)
    };
    let files = names(&out_a)?;
    check(files == names(&out_b)?, || "different file sets".into())?;
    for expected in [cli::FIG1_SCATTER, cli::FIG2_SHARES, cli::FIG3_RIBBONS, cli::FLOW_ESTIMATES, cli::VALIDATION] {
        check(files.iter().any(|f| f == expected), || format!("{expected} missing"))?;
    }
    for name in &files {
        let (x, y) = (fs::read(out_a.join(name)), fs::read(out_b.join(name)));
        check(matches!((&x, &y), (Ok(x), Ok(y)) if x == y), || format!("{name} differs"))?;
    }
    let store_a = fs::read(a.path().join("store.jsonl")).map_err(|e| e.to_string())?;
    let store_b = fs::read(b.path().join("store.jsonl")).map_err(|e| e.to_string())?;
    check(store_a == store_b, || "stores differ".into())?;
    within(started, Duration::from_secs(30))?;
    Ok(format!("{} output files byte-identical in {:?}", files.len(), started.elapsed()))
}

fn criterion_7() -> Outcome {
    let population = ingest::load_population(&fixtures().join("ua_population.csv")).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let global = fixture_globals(dir.path());
    cmd_collect(
        &global,
        &CollectConfig {
            countries: vec![CountryCode::ORIGIN],
            weeks: vec![WeekIndex(0)],
            ..CollectConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let store = ingest::SnapshotStore::open(&global.store).map_err(|e| e.to_string())?;
    let mau = store.series(&LanguageTag::default())[&CountryCode::ORIGIN]
        .get(WeekIndex(0))
        .ok_or("no origin observation")? as u64;
    let pop = population[&CountryCode::ORIGIN];
    let rate = estimator::estimate_penetration(CountryCode::ORIGIN, mau, pop)
        .map_err(|e| e.to_string())?
        .rate();
    check((0.38..=0.42).contains(&rate), || format!("rate {rate}"))?;
    let by_hand = 14_600_000.0 / 36_500_000.0;
    check(mau == 14_600_000 && pop == 36_500_000 && rate == by_hand, || {
        format!("{mau} / {pop} = {rate}, expected {by_hand}")
    })?;
    Ok(format!("{mau} / {pop} = {rate}"))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("equation identities", criterion_1),
        ("pearson oracle equivalence", criterion_2),
        ("fixture reproduction", criterion_3),
        ("simulator exact recovery", criterion_4),
        ("double-counting law", criterion_5),
        ("end-to-end determinism", criterion_6),
        ("penetration estimation", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
