//! Platform penetration in the origin country from its prewar audience and census population.

use std::path::Path;

use flowlens::domain::{CountryCode, Epoch, WeekIndex};
use flowlens::estimator::{adjust_mau, estimate_penetration};
use flowlens::ingest::{self, fetch_audience, AudienceQuery, ReplayClient, RetryPolicy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let origin = CountryCode::ORIGIN;
    let obs = fetch_audience(
        &ReplayClient::new(fixtures.join("replay")),
        &AudienceQuery::ukrainian_speakers(origin),
        WeekIndex(0),
        Epoch::default(),
        &RetryPolicy::default(),
    )?;
    let population = ingest::load_population(&fixtures.join("ua_population.csv"))?[&origin];
    let rate = estimate_penetration(origin, obs.mau, population)?;
    println!("{origin}: {} users / {population} aged 13+ = {:.3}", obs.mau, rate.rate());
    println!("a raw count of 1000 users stands for {:.0} people", adjust_mau(1000, &rate));
    Ok(())
}
