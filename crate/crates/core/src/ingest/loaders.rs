//! CSV readers and writers for official statistics.
//!
//! | file        | header                                   |
//! |-------------|------------------------------------------|
//! | diaspora    | `country,stock,reference_year`           |
//! | penetration | `country,rate`                           |
//! | UNHCR       | `date,country,cumulative_arrivals`       |
//! | population  | `country,population_13plus,reference_year` |
//!
//! Loaders validate every row and report all rejected rows together, each
//! with its 1-based line number.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

use crate::domain::{ArrivalSeries, CountryCode, DiasporaStock, PenetrationRate};

pub const DIASPORA_HEADER: [&str; 3] = ["country", "stock", "reference_year"];
pub const PENETRATION_HEADER: [&str; 2] = ["country", "rate"];
pub const UNHCR_HEADER: [&str; 3] = ["date", "country", "cumulative_arrivals"];
pub const POPULATION_HEADER: [&str; 3] = ["country", "population_13plus", "reference_year"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{source_name}: {source}")]
    Io {
        source_name: String,
        #[source]
        source: io::Error,
    },
    #[error("{source_name}: expected header {expected:?}, found {found:?}")]
    Header {
        source_name: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("{source_name}: {} rejected row(s): {}", issues.len(), join(issues))]
    Rows {
        source_name: String,
        issues: Vec<RowIssue>,
    },
}

impl LoadError {
    pub fn issues(&self) -> &[RowIssue] {
        match self {
            LoadError::Rows { issues, .. } => issues,
            _ => &[],
        }
    }
}

fn join(issues: &[RowIssue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

struct Rows<R: Read> {
    name: String,
    reader: csv::Reader<R>,
    issues: Vec<RowIssue>,
}

impl<R: Read> Rows<R> {
    fn open(name: &str, input: R, header: &[&str]) -> Result<Self, LoadError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let found: Vec<String> = reader
            .headers()
            .map_err(|e| LoadError::Io {
                source_name: name.to_string(),
                source: io::Error::other(e),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        if found != header {
            return Err(LoadError::Header {
                source_name: name.to_string(),
                expected: header.iter().map(|s| s.to_string()).collect(),
                found,
            });
        }
        Ok(Rows {
            name: name.to_string(),
            reader,
            issues: Vec::new(),
        })
    }

    /// Calls `f` on each record with its line number; `f`'s errors become row issues.
    fn for_each(&mut self, mut f: impl FnMut(u64, &csv::StringRecord) -> Result<(), String>) {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {
                    let line = record.position().map_or(0, |p| p.line());
                    if let Err(message) = f(line, &record) {
                        self.issues.push(RowIssue { line, message });
                    }
                }
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    self.issues.push(RowIssue {
                        line,
                        message: e.to_string(),
                    });
                    if !matches!(e.kind(), csv::ErrorKind::UnequalLengths { .. }) {
                        break;
                    }
                }
            }
        }
    }

    fn finish(self) -> Result<(), LoadError> {
        if self.issues.is_empty() {
            Ok(())
        } else {
            Err(LoadError::Rows {
                source_name: self.name,
                issues: self.issues,
            })
        }
    }
}

fn field<'a>(record: &'a csv::StringRecord, i: usize, name: &str) -> Result<&'a str, String> {
    match record.get(i) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(format!("missing {name}")),
    }
}

fn country(record: &csv::StringRecord, i: usize) -> Result<CountryCode, String> {
    CountryCode::new(field(record, i, "country")?).map_err(|e| e.to_string())
}

fn parse<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, name: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    let raw = field(record, i, name)?;
    raw.parse().map_err(|e| format!("invalid {name} {raw:?}: {e}"))
}

fn open_file(path: &Path) -> Result<File, LoadError> {
    File::open(path).map_err(|source| LoadError::Io {
        source_name: path.display().to_string(),
        source,
    })
}

fn non_negative_count(record: &csv::StringRecord, i: usize, name: &str) -> Result<u64, String> {
    let value: i64 = parse(record, i, name)?;
    u64::try_from(value).map_err(|_| format!("{name} must be non-negative, got {value}"))
}

pub fn read_diaspora<R: Read>(name: &str, input: R) -> Result<BTreeMap<CountryCode, DiasporaStock>, LoadError> {
    let mut rows = Rows::open(name, input, &DIASPORA_HEADER)?;
    let mut out = BTreeMap::new();
    let mut first_seen: BTreeMap<CountryCode, u64> = BTreeMap::new();
    rows.for_each(|line, rec| {
        let country = country(rec, 0)?;
        let stock = non_negative_count(rec, 1, "stock")?;
        let reference_year = parse(rec, 2, "reference_year")?;
        if let Some(first) = first_seen.get(&country) {
            return Err(format!("duplicate country {country} (first on line {first})"));
        }
        first_seen.insert(country, line);
        out.insert(
            country,
            DiasporaStock {
                country,
                stock,
                reference_year,
            },
        );
        Ok(())
    });
    rows.finish()?;
    Ok(out)
}

pub fn load_diaspora(path: &Path) -> Result<BTreeMap<CountryCode, DiasporaStock>, LoadError> {
    read_diaspora(&path.display().to_string(), open_file(path)?)
}

pub fn read_penetration<R: Read>(name: &str, input: R) -> Result<BTreeMap<CountryCode, PenetrationRate>, LoadError> {
    let mut rows = Rows::open(name, input, &PENETRATION_HEADER)?;
    let mut out = BTreeMap::new();
    let mut first_seen: BTreeMap<CountryCode, u64> = BTreeMap::new();
    rows.for_each(|line, rec| {
        let country = country(rec, 0)?;
        let rate: f64 = parse(rec, 1, "rate")?;
        let rate = PenetrationRate::new(country, rate).map_err(|e| e.to_string())?;
        if let Some(first) = first_seen.get(&country) {
            return Err(format!("duplicate country {country} (first on line {first})"));
        }
        first_seen.insert(country, line);
        out.insert(country, rate);
        Ok(())
    });
    rows.finish()?;
    Ok(out)
}

pub fn load_penetration(path: &Path) -> Result<BTreeMap<CountryCode, PenetrationRate>, LoadError> {
    read_penetration(&path.display().to_string(), open_file(path)?)
}

/// Population aged 13 and over, keyed by country.
pub fn read_population<R: Read>(name: &str, input: R) -> Result<BTreeMap<CountryCode, u64>, LoadError> {
    let mut rows = Rows::open(name, input, &POPULATION_HEADER)?;
    let mut out = BTreeMap::new();
    rows.for_each(|_, rec| {
        let country = country(rec, 0)?;
        let population = non_negative_count(rec, 1, "population_13plus")?;
        let _year: i32 = parse(rec, 2, "reference_year")?;
        if out.insert(country, population).is_some() {
            return Err(format!("duplicate country {country}"));
        }
        Ok(())
    });
    rows.finish()?;
    Ok(out)
}

pub fn load_population(path: &Path) -> Result<BTreeMap<CountryCode, u64>, LoadError> {
    read_population(&path.display().to_string(), open_file(path)?)
}

pub fn read_unhcr<R: Read>(name: &str, input: R) -> Result<BTreeMap<CountryCode, ArrivalSeries>, LoadError> {
    let mut rows = Rows::open(name, input, &UNHCR_HEADER)?;
    let mut points: BTreeMap<CountryCode, BTreeMap<NaiveDate, (u64, u64)>> = BTreeMap::new();
    rows.for_each(|line, rec| {
        let date: NaiveDate = parse(rec, 0, "date")?;
        let country = country(rec, 1)?;
        let value = non_negative_count(rec, 2, "cumulative_arrivals")?;
        let per_country = points.entry(country).or_default();
        if let Some((_, first)) = per_country.get(&date) {
            return Err(format!("duplicate date {date} for {country} (first on line {first})"));
        }
        per_country.insert(date, (value, line));
        Ok(())
    });
    // Monotonicity is a property of the whole series, checked in date order.
    for (country, series) in &points {
        let mut previous: Option<(NaiveDate, u64)> = None;
        for (&date, &(value, line)) in series {
            if let Some((prev_date, prev)) = previous {
                if value < prev {
                    rows.issues.push(RowIssue {
                        line,
                        message: format!(
                            "cumulative arrivals for {country} decrease on {date} ({prev} on {prev_date} -> {value})"
                        ),
                    });
                }
            }
            previous = Some((date, value));
        }
    }
    rows.issues.sort_by_key(|i| i.line);
    rows.finish()?;
    Ok(points
        .into_iter()
        .map(|(c, series)| {
            let s = ArrivalSeries::new(c, series.into_iter().map(|(d, (v, _))| (d, v)))
                .expect("validated above");
            (c, s)
        })
        .collect())
}

pub fn load_unhcr(path: &Path) -> Result<BTreeMap<CountryCode, ArrivalSeries>, LoadError> {
    read_unhcr(&path.display().to_string(), open_file(path)?)
}

fn writer<W: Write>(out: W, header: &[&str]) -> io::Result<csv::Writer<W>> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(io::Error::other)?;
    Ok(w)
}

pub fn save_diaspora<W: Write>(out: W, stocks: &BTreeMap<CountryCode, DiasporaStock>) -> io::Result<()> {
    let mut w = writer(out, &DIASPORA_HEADER)?;
    for s in stocks.values() {
        w.write_record([
            s.country.to_string(),
            s.stock.to_string(),
            s.reference_year.to_string(),
        ])
        .map_err(io::Error::other)?;
    }
    w.flush()
}

pub fn save_penetration<W: Write>(out: W, rates: &BTreeMap<CountryCode, PenetrationRate>) -> io::Result<()> {
    let mut w = writer(out, &PENETRATION_HEADER)?;
    for r in rates.values() {
        // `{}` on f64 prints the shortest string that parses back to the same value.
        w.write_record([r.country().to_string(), r.rate().to_string()])
            .map_err(io::Error::other)?;
    }
    w.flush()
}

pub fn save_unhcr<W: Write>(out: W, arrivals: &BTreeMap<CountryCode, ArrivalSeries>) -> io::Result<()> {
    let mut rows: Vec<(NaiveDate, CountryCode, u64)> = arrivals
        .values()
        .flat_map(|s| s.values().iter().map(move |(&d, &v)| (d, s.country(), v)))
        .collect();
    rows.sort();
    let mut w = writer(out, &UNHCR_HEADER)?;
    for (d, c, v) in rows {
        w.write_record([d.to_string(), c.to_string(), v.to_string()])
            .map_err(io::Error::other)?;
    }
    w.flush()
}
