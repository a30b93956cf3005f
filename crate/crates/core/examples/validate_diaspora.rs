//! Correlate prewar audiences with official diaspora stocks, raw and penetration-adjusted.

use std::path::Path;

use flowlens::cli::{cmd_collect, compute_validation, CollectConfig, GlobalConfig, ValidateConfig};
use flowlens::domain::{LanguageTag, WeekIndex};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let work = tempfile::tempdir()?;
    let work = work.path();
    let global = GlobalConfig::new(work.join("store.jsonl"), work.join("out")).with_replay_dir(fixtures.join("replay"));
    cmd_collect(&global, &CollectConfig::default())?;

    let report = compute_validation(
        &global,
        &ValidateConfig {
            diaspora: fixtures.join("diaspora_eu_2021.csv"),
            penetration: fixtures.join("penetration_eu.csv"),
            prewar_week: WeekIndex(0),
            language: LanguageTag::default(),
            population: None,
        },
    )?;
    println!("n = {}", report.adjusted.n);
    println!("original  r = {:.4}  p = {:.2e}", report.original.r, report.original.p_value);
    println!("adjusted  r = {:.4}  p = {:.2e}", report.adjusted.r, report.adjusted.p_value);
    for row in report.scatter.iter().take(5) {
        println!(
            "{}  stock {:>7}  mau {:>7}  adjusted {:>9.0}",
            row.country, row.diaspora_stock, row.mau_original, row.mau_adjusted
        );
    }
    Ok(())
}
