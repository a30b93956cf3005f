//! Stock-scaled flow estimates and destination shares, week 0 to week 5.

use std::collections::BTreeMap;
use std::path::Path;

use flowlens::domain::{CountryCode, LanguageTag, WeekIndex};
use flowlens::estimator::{delta_ua, shares};
use flowlens::ingest::{self, fetch_many, AudienceQuery, ReplayClient, RetryPolicy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let stocks = ingest::load_diaspora(&fixtures.join("diaspora_eu_2021.csv"))?;

    let client = ReplayClient::new(fixtures.join("replay"));
    let requests: Vec<_> = stocks
        .keys()
        .flat_map(|&c| {
            let q = AudienceQuery::ukrainian_speakers(c);
            [(q.clone(), WeekIndex(0)), (q, WeekIndex(5))]
        })
        .collect();
    let mut mau: BTreeMap<(CountryCode, WeekIndex), f64> = BTreeMap::new();
    for obs in fetch_many(&client, &requests, Default::default(), &RetryPolicy::default(), 4) {
        let obs = obs?;
        mau.insert((obs.country, obs.week), obs.mau as f64);
    }

    let mut deltas = BTreeMap::new();
    for (&country, stock) in &stocks {
        let base = mau[&(country, WeekIndex(0))];
        let now = mau[&(country, WeekIndex(5))];
        deltas.insert(country, delta_ua(stock, now, base)?);
    }
    let table = shares(&deltas)?;
    let mut ranked: Vec<_> = table.shares.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(a.1));
    println!("language {}; estimated total {:.0}", LanguageTag::default(), table.total);
    for (country, share) in ranked.iter().take(8) {
        println!("{country}  {:>10.0}  {:5.1}%", deltas[*country], **share * 100.0);
    }
    Ok(())
}
