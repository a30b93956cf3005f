//! collect, estimate, validate and report over the recorded fixtures.
//!
//! Usage: `cargo run --example full_pipeline [OUT_DIR]`

use std::path::{Path, PathBuf};

use flowlens::cli::{
    cmd_collect, cmd_estimate, cmd_report, cmd_validate, CollectConfig, EstimateConfig, GlobalConfig, ReportConfig,
    ValidateConfig, DEFAULT_MIN_SHARE,
};
use flowlens::domain::{LanguageTag, WeekIndex};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("flowlens-pipeline"));
    if out.exists() {
        std::fs::remove_dir_all(&out)?;
    }
    let global = GlobalConfig::new(out.join("store.jsonl"), &out).with_replay_dir(fixtures.join("replay"));
    let diaspora = fixtures.join("diaspora_eu_2021.csv");
    let penetration = fixtures.join("penetration_eu.csv");

    let collected = cmd_collect(&global, &CollectConfig::default())?;
    println!("collect: {} observations", collected.inserted);
    let estimates = cmd_estimate(
        &global,
        &EstimateConfig {
            diaspora: diaspora.clone(),
            penetration: penetration.clone(),
            baseline_week: WeekIndex(0),
            target_week: WeekIndex(5),
            language: LanguageTag::default(),
        },
    )?;
    println!("estimate: {} rows", estimates.estimates.len());
    let validation = cmd_validate(
        &global,
        &ValidateConfig {
            diaspora,
            penetration: penetration.clone(),
            prewar_week: WeekIndex(0),
            language: LanguageTag::default(),
            population: Some(fixtures.join("ua_population.csv")),
        },
    )?;
    println!("validate: adjusted r = {:.3}", validation.adjusted.r);
    let report = cmd_report(
        &global,
        &ReportConfig {
            penetration,
            unhcr: fixtures.join("unhcr_arrivals.csv"),
            min_share: DEFAULT_MIN_SHARE,
            language: LanguageTag::default(),
        },
    )?;
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
