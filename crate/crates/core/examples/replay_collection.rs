//! Collect every recorded audience estimate concurrently and append it to a store.

use std::path::Path;

use flowlens::domain::{CountryCode, Epoch, WeekIndex};
use flowlens::ingest::{fetch_many, AudienceQuery, ReplayClient, RetryPolicy, SnapshotStore, DEFAULT_FAN_OUT};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let client = ReplayClient::new(fixtures.join("replay"));

    let requests: Vec<_> = ["PL", "DE", "CZ", "HU"]
        .iter()
        .flat_map(|c| {
            let query = AudienceQuery::ukrainian_speakers(CountryCode::new(c).unwrap());
            (0..=5).map(move |w| (query.clone(), WeekIndex(w)))
        })
        .collect();
    let results = fetch_many(&client, &requests, Epoch::default(), &RetryPolicy::default(), DEFAULT_FAN_OUT);
    let observations = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let dir = tempfile::tempdir()?;
    let mut store = SnapshotStore::open(dir.path().join("store.jsonl"))?;
    let summary = store.append_all(observations.clone())?;
    println!("stored {} observations", summary.inserted);
    for obs in observations.iter().filter(|o| o.week == WeekIndex(5)) {
        println!("{}  {:>8}  collected {}", obs.key(), obs.mau, obs.collected_at);
    }
    // A second append of the same data is a no-op.
    let again = store.append_all(observations)?;
    println!("re-run: {} new, {} unchanged", again.inserted, again.duplicates);
    Ok(())
}

