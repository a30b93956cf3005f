//! How much of an estimated inflow is transit traffic counted in two countries at once.

use flowlens::domain::CountryCode;
use flowlens::simulate::{estimator_bias_report, run_scenario, synthetic_estimates, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/scenarios/transit.json");
    let config = ScenarioConfig::load(&path)?;
    let dataset = run_scenario(&config)?;
    let estimates = synthetic_estimates(&dataset)?;
    let pl = CountryCode::new("PL")?;
    println!("week  estimated  true  bias   (PL is a transit country for 200 of 500 arrivals)");
    for row in estimator_bias_report(&dataset, &estimates).iter().filter(|r| r.country == pl) {
        println!("{:>4}  {:>9}  {:>4}  {:>4}", row.week, row.estimated, row.true_net_inflow, row.bias);
    }
    Ok(())
}
