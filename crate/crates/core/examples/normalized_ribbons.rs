//! Normalized weekly change for Poland as a lower/upper ribbon, against border-crossing totals.

use std::path::Path;

use flowlens::domain::{CountryCode, Epoch, MauSeries, WeekIndex};
use flowlens::estimator::{compare_trends, normalize_series, resample_arrivals, weekly_changes};
use flowlens::ingest::{self, fetch_audience, AudienceQuery, ReplayClient, RetryPolicy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let pl = CountryCode::new("PL")?;
    let client = ReplayClient::new(fixtures.join("replay"));
    let epoch = Epoch::default();
    let mut points = Vec::new();
    for w in 0..=5 {
        let obs = fetch_audience(&client, &AudienceQuery::ukrainian_speakers(pl), WeekIndex(w), epoch, &RetryPolicy::default())?;
        points.push((obs.week, obs.mau));
    }
    let original = MauSeries::original(pl, points)?;
    let rate = ingest::load_penetration(&fixtures.join("penetration_eu.csv"))?[&pl];
    let adjusted = original.adjusted(&rate);

    // Both bounds share the adjusted maximum so the lower bound stays below it.
    let upper = normalize_series(pl, &weekly_changes(&adjusted)?, None)?;
    let lower = normalize_series(pl, &weekly_changes(&original)?, Some(upper.normalizer))?;

    let arrivals = &ingest::load_unhcr(&fixtures.join("unhcr_arrivals.csv"))?[&pl];
    let crossings = normalize_series(pl, &resample_arrivals(arrivals, epoch, upper.values.keys().copied()), None)?;
    println!("week   lower  upper  crossings");
    for (w, hi) in &upper.values {
        println!("{w:>4}  {:.3}  {hi:.3}  {:.3}", lower.values[w], crossings.values[w]);
    }
    let cmp = compare_trends(&upper, &crossings)?;
    println!("largest gap {:.3} in {}", cmp.max_gap, cmp.max_gap_week);
    Ok(())
}
