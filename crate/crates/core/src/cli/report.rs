//! Plot-data files for the three figures.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    csv_bytes, json_bytes, write_outputs, CliError, Exclusion, FlowRow, GlobalConfig, Output,
    ValidationReport, ESTIMATE_EXCLUSIONS, FIG1_SCATTER, FIG2_SHARES, FIG3_RIBBONS, FLOW_ESTIMATES,
    PLOT_SPEC, TREND_COMPARISON, VALIDATION,
};
use crate::domain::{Bound, CountryCode, LanguageTag, WeekIndex};
use crate::estimator::{self, EstimateError, NormalizedSeries};
use crate::ingest;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportConfig {
    pub penetration: PathBuf,
    pub unhcr: PathBuf,
    /// Countries at or below this share are left out of the bar chart.
    pub min_share: f64,
    pub language: LanguageTag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShareRow {
    pub country: CountryCode,
    pub share_lower: f64,
    pub share_upper: Option<f64>,
    pub delta_ua_lower: f64,
    pub delta_ua_upper: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RibbonRow {
    pub country: CountryCode,
    pub week: WeekIndex,
    pub lower: f64,
    pub upper: f64,
    pub unhcr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub country: CountryCode,
    pub week: WeekIndex,
    pub gap: f64,
    pub is_max_gap: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportSummary {
    pub shares: Vec<ShareRow>,
    pub ribbons: Vec<RibbonRow>,
    pub trends: Vec<TrendRow>,
    pub exclusions: Vec<Exclusion>,
    pub files: Vec<PathBuf>,
}

fn require(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingOutput(path))
    }
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let bad = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(bad)?;
    reader.deserialize().collect::<Result<Vec<T>, _>>().map_err(bad)
}

/// Builds the bar, ribbon and trend tables from earlier outputs plus the
/// store, then writes them with a plot spec. Every table is computed before
/// anything is written, so a failure leaves the output directory as it was.
pub fn cmd_report(global: &GlobalConfig, config: &ReportConfig) -> Result<ReportSummary, CliError> {
    let out = &global.out;
    let flows: Vec<FlowRow> = read_csv(&require(out.join(FLOW_ESTIMATES))?)?;
    let mut exclusions: Vec<Exclusion> = read_csv(&require(out.join(ESTIMATE_EXCLUSIONS))?)?;
    let validation_path = require(out.join(VALIDATION))?;
    require(out.join(FIG1_SCATTER))?;
    let validation: ValidationReport = serde_json::from_slice(
        &fs::read(&validation_path).map_err(|source| CliError::Io {
            path: validation_path.clone(),
            source,
        })?,
    )
    .map_err(|e| CliError::Input(format!("{}: {e}", validation_path.display())))?;
    exclusions.extend(validation.exclusions.iter().cloned());

    // Bar chart.
    let mut by_country: BTreeMap<CountryCode, (Option<&FlowRow>, Option<&FlowRow>)> = BTreeMap::new();
    for row in &flows {
        let slot = by_country.entry(row.country).or_default();
        match row.bound {
            Bound::Lower => slot.0 = Some(row),
            Bound::Upper => slot.1 = Some(row),
        }
    }
    let mut shares = Vec::new();
    for (&country, (lower, upper)) in &by_country {
        let Some(lower) = lower else {
            continue;
        };
        if lower.share > config.min_share {
            shares.push(ShareRow {
                country,
                share_lower: lower.share,
                share_upper: upper.map(|u| u.share),
                delta_ua_lower: lower.delta_ua,
                delta_ua_upper: upper.map(|u| u.delta_ua),
            });
        } else {
            exclusions.push(Exclusion::new(
                country,
                "fig2",
                format!("share {} at or below {}", lower.share, config.min_share),
            ));
        }
    }
    shares.sort_by(|a, b| b.share_lower.total_cmp(&a.share_lower).then(a.country.cmp(&b.country)));
    let target_week = flows.iter().map(|r| r.target_week).max();

    // Ribbons and border-crossing overlay.
    let store = global.open_store()?;
    let series = store.series(&config.language);
    let rates = ingest::load_penetration(&config.penetration)?;
    let arrivals = ingest::load_unhcr(&config.unhcr)?;
    let displayed: BTreeSet<CountryCode> = shares.iter().map(|r| r.country).collect();

    let mut ribbons = Vec::new();
    let mut trends = Vec::new();
    for &country in &displayed {
        let Some(original) = series.get(&country) else {
            exclusions.push(Exclusion::new(country, "fig3", "no audience observations"));
            continue;
        };
        let Some(rate) = rates.get(&country) else {
            exclusions.push(Exclusion::new(country, "fig3", "no penetration rate"));
            continue;
        };
        let mut orig_change = estimator::weekly_changes(original)?;
        let mut adj_change = estimator::weekly_changes(&original.adjusted(rate))?;
        if let Some(t) = target_week {
            orig_change.retain(|w, _| *w <= t);
            adj_change.retain(|w, _| *w <= t);
        }
        let ribbon = estimator::normalize_series(country, &adj_change, None)
            .and_then(|upper| Ok((estimator::normalize_series(country, &orig_change, Some(upper.normalizer))?, upper)));
        let (lower, upper) = match ribbon {
            Ok(pair) => pair,
            Err(e) => {
                exclusions.push(Exclusion::new(country, "fig3", format!("cannot normalize: {e}")));
                continue;
            }
        };

        let overlay = match arrivals.get(&country) {
            None => None,
            Some(a) => {
                let weekly = estimator::resample_arrivals(a, global.epoch, upper.values.keys().copied());
                if weekly.is_empty() {
                    return Err(EstimateError::DisjointWeeks.into());
                }
                let unhcr = estimator::normalize_series(country, &weekly, None)?;
                let cmp = estimator::compare_trends(&upper, &unhcr)?;
                trends.extend(cmp.gaps.iter().map(|(&week, &gap)| TrendRow {
                    country,
                    week,
                    gap,
                    is_max_gap: week == cmp.max_gap_week,
                }));
                Some(unhcr)
            }
        };
        ribbons.extend(ribbon_rows(&lower, &upper, overlay.as_ref()));
    }
    for &country in arrivals.keys() {
        if !displayed.contains(&country) {
            exclusions.push(Exclusion::new(country, "fig3", "overlay dropped: country not displayed"));
        }
    }
    exclusions.sort();
    exclusions.dedup();

    let spec = plot_spec(&validation, config.min_share, &exclusions);
    let files = write_outputs(
        out,
        "report",
        &[
            Output {
                name: FIG2_SHARES,
                bytes: csv_bytes(
                    Some(&["country", "share_lower", "share_upper", "delta_ua_lower", "delta_ua_upper"]),
                    &shares,
                ),
            },
            Output {
                name: FIG3_RIBBONS,
                bytes: csv_bytes(Some(&["country", "week", "lower", "upper", "unhcr"]), &ribbons),
            },
            Output {
                name: TREND_COMPARISON,
                bytes: csv_bytes(Some(&["country", "week", "gap", "is_max_gap"]), &trends),
            },
            Output {
                name: PLOT_SPEC,
                bytes: json_bytes(&spec),
            },
        ],
    )?;
    Ok(ReportSummary {
        shares,
        ribbons,
        trends,
        exclusions,
        files,
    })
}

fn ribbon_rows(lower: &NormalizedSeries, upper: &NormalizedSeries, unhcr: Option<&NormalizedSeries>) -> Vec<RibbonRow> {
    upper
        .values
        .iter()
        .filter_map(|(&week, &hi)| {
            Some(RibbonRow {
                country: upper.country,
                week,
                lower: *lower.values.get(&week)?,
                upper: hi,
                unhcr: unhcr.and_then(|u| u.values.get(&week).copied()),
            })
        })
        .collect()
}

fn plot_spec(validation: &ValidationReport, min_share: f64, exclusions: &[Exclusion]) -> serde_json::Value {
    json!({
        "figures": [
            {
                "id": "fig1",
                "file": FIG1_SCATTER,
                "kind": "scatter",
                "x": {"column": "diaspora_stock", "label": "Ukrainian diaspora stock", "scale": "log"},
                "y": {"columns": ["mau_original", "mau_adjusted"], "label": "Ukrainian-speaking monthly active users", "scale": "log"},
                "label": "country",
                "annotations": {
                    "week": validation.prewar_week.to_string(),
                    "r_original": validation.original.r,
                    "r_adjusted": validation.adjusted.r,
                    "n": validation.adjusted.n,
                },
            },
            {
                "id": "fig2",
                "file": FIG2_SHARES,
                "kind": "bar",
                "x": {"column": "country", "label": "Destination country"},
                "y": {"columns": ["share_lower", "share_upper"], "label": "Share of estimated arrivals", "scale": "linear"},
                "filter": {"column": "share_lower", "greater_than": min_share},
                "order": "share_lower descending",
            },
            {
                "id": "fig3",
                "file": FIG3_RIBBONS,
                "kind": "ribbon",
                "facet": "country",
                "x": {"column": "week", "label": "Week since epoch"},
                "y": {"min": "lower", "max": "upper", "label": "Normalized cumulative change", "scale": "log"},
                "overlay": {"column": "unhcr", "label": "Normalized border crossings"},
            },
        ],
        "exclusions": exclusions,
    })
}
