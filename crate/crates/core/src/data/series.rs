//! Hourly consumption series: CSV ingestion and synthetic households.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::windows::HourWindow;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reading {
    pub timestamp: NaiveDateTime,
    pub kwh: f64,
}

/// One household's readings, strictly increasing at one-hour spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct HourlySeries {
    pub household_id: String,
    pub readings: Vec<Reading>,
}

impl HourlySeries {
    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn kwh(&self) -> impl Iterator<Item = f64> + '_ {
        self.readings.iter().map(|r| r.kwh)
    }
}

const TIMESTAMP_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
];

pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let s = raw.trim();
    let s = s.strip_suffix('Z').unwrap_or(s);
    let ts = TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            // bare hour: 2021-01-01T05
            let (date, hour) = s.split_once('T')?;
            let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()?;
            date.and_hms_opt(hour.parse().ok()?, 0, 0)
        })?;
    (ts.minute() == 0 && ts.second() == 0 && ts.nanosecond() == 0).then_some(ts)
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Vec<HourlySeries>> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file)
}

/// Reads `household_id,timestamp,kwh` records (any column order, header
/// required). Errors cite the 1-based data row, not counting the header.
pub fn ingest_reader(reader: impl Read) -> Result<Vec<HourlySeries>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Ingest {
            row: 0,
            message: format!("missing column `{name}`"),
        })
    };
    let (c_id, c_ts, c_kwh) = (col("household_id")?, col("timestamp")?, col("kwh")?);

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(usize, Reading)>> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let bad = |message: String| Error::Ingest { row, message };
        let id = field(c_id).to_string();
        if id.is_empty() {
            return Err(bad("empty household_id".into()));
        }
        let timestamp =
            parse_timestamp(field(c_ts)).ok_or_else(|| bad(format!("unparseable timestamp `{}`", field(c_ts))))?;
        let kwh: f64 = field(c_kwh)
            .parse()
            .map_err(|_| bad(format!("unparseable kwh `{}`", field(c_kwh))))?;
        if !kwh.is_finite() || kwh < 0.0 {
            return Err(bad(format!("kwh must be a non-negative number, got {kwh}")));
        }
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            Vec::new()
        });
        entry.push((row, Reading { timestamp, kwh }));
    }

    order
        .into_iter()
        .map(|id| {
            let mut rs = rows.remove(&id).unwrap_or_default();
            rs.sort_by_key(|(row, r)| (r.timestamp, *row));
            for pair in rs.windows(2) {
                let ((_, a), (row, b)) = (&pair[0], &pair[1]);
                if a.timestamp == b.timestamp {
                    return Err(Error::Ingest {
                        row: *row,
                        message: format!("duplicate reading for household {id} at {}", b.timestamp),
                    });
                }
                if b.timestamp - a.timestamp != Duration::hours(1) {
                    return Err(Error::Ingest {
                        row: *row,
                        message: format!("gap in household {id} between {} and {}", a.timestamp, b.timestamp),
                    });
                }
            }
            Ok(HourlySeries {
                household_id: id,
                readings: rs.into_iter().map(|(_, r)| r).collect(),
            })
        })
        .collect()
}

/// Writes series in the ingestion schema.
pub fn write_series_csv(path: impl AsRef<Path>, series: &[HourlySeries]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["household_id", "timestamp", "kwh"])?;
    for s in series {
        for r in &s.readings {
            w.write_record([
                s.household_id.as_str(),
                &r.timestamp.format("%Y-%m-%dT%H:%M:%S").to_string(),
                &crate::fmt::sig12(r.kwh),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Diurnal template for a synthetic household.
///
/// Hours inside `low` sit at `low_level`, hours inside `high` at `high_level`
/// and everything else at `mid_level`, all relative to `base_kwh`. Daily
/// weekend and seasonal factors plus multiplicative hourly noise are applied
/// on top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadShape {
    pub low: HourWindow,
    pub high: HourWindow,
    pub base_kwh: f64,
    pub low_level: f64,
    pub mid_level: f64,
    pub high_level: f64,
    pub noise: f64,
    pub weekend_amplitude: f64,
    pub seasonal_amplitude: f64,
}

impl Default for LoadShape {
    fn default() -> Self {
        Self {
            low: HourWindow { start: 4, len: 6 },
            high: HourWindow { start: 18, len: 7 },
            base_kwh: 1.0,
            low_level: 0.35,
            mid_level: 0.9,
            high_level: 1.6,
            noise: 0.08,
            weekend_amplitude: 0.08,
            seasonal_amplitude: 0.15,
        }
    }
}

impl LoadShape {
    pub fn hourly_level(&self, hour: usize) -> f64 {
        if self.low.contains(hour) {
            self.low_level
        } else if self.high.contains(hour) {
            self.high_level
        } else {
            self.mid_level
        }
    }

    /// Per-household variation of the default shape; windows stay fixed.
    pub fn jittered(&self, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut j = |lo: f64, hi: f64| rng.random_range(lo..hi);
        Self {
            base_kwh: self.base_kwh * j(0.6, 1.8),
            low_level: self.low_level * j(0.85, 1.15),
            mid_level: self.mid_level * j(0.9, 1.1),
            high_level: self.high_level * j(0.85, 1.15),
            ..self.clone()
        }
    }
}

pub fn synthesize_household(id: &str, days: usize, seed: u64, shape: &LoadShape) -> Result<HourlySeries> {
    if days < 1 {
        return Err(Error::invalid("synthesize_household: days must be >= 1"));
    }
    let mut rng = seed::rng(seed);
    let hourly = Normal::new(0.0, shape.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let daily = Normal::new(0.0, 0.05).map_err(|e| Error::invalid(e.to_string()))?;
    let start = NaiveDate::from_ymd_opt(2021, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start date");
    let floor = 0.01 * shape.base_kwh;
    let mut readings = Vec::with_capacity(days * 24);
    for day in 0..days {
        // 2021-01-01 was a Friday
        let weekend = matches!(day % 7, 1 | 2);
        let season = 1.0 + shape.seasonal_amplitude * (2.0 * std::f64::consts::PI * day as f64 / 365.0).cos();
        let week = if weekend { 1.0 + shape.weekend_amplitude } else { 1.0 };
        let day_factor = season * week * (1.0 + daily.sample(&mut rng));
        for hour in 0..24 {
            let noise = 1.0 + hourly.sample(&mut rng);
            let kwh = (shape.base_kwh * shape.hourly_level(hour) * day_factor * noise).max(floor);
            readings.push(Reading {
                timestamp: start + Duration::hours((day * 24 + hour) as i64),
                kwh,
            });
        }
    }
    Ok(HourlySeries {
        household_id: id.to_string(),
        readings,
    })
}

/// `households` jittered households with seeds derived from `master_seed`.
pub fn synthesize_population(households: usize, days: usize, master_seed: u64) -> Result<Vec<HourlySeries>> {
    let base = LoadShape::default();
    (0..households)
        .map(|h| {
            let shape = base.jittered(seed::derive(master_seed, &[seed::stream::SYNTH, h as u64, 0]));
            let s = seed::derive(master_seed, &[seed::stream::SYNTH, h as u64, 1]);
            synthesize_household(&format!("house-{:02}", h + 1), days, s, &shape)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_for(households: usize, hours: usize) -> String {
        let mut s = String::from("household_id,timestamp,kwh\n");
        for h in 0..households {
            for t in 0..hours {
                let ts = NaiveDate::from_ymd_opt(2022, 3, 1)
                    .unwrap()
                    .and_hms_opt(0, 0, 0)
                    .unwrap()
                    + Duration::hours(t as i64);
                s.push_str(&format!(
                    "h{h},{},{}\n",
                    ts.format("%Y-%m-%dT%H:%M:%S"),
                    0.5 + t as f64 / 100.0
                ));
            }
        }
        s
    }

    #[test]
    fn ingest_counts_rows_per_household() {
        let series = ingest_reader(csv_for(2, 48).as_bytes()).unwrap();
        assert_eq!(series.len(), 2);
        assert!(series.iter().all(|s| s.len() == 48));
        assert_eq!(series[0].household_id, "h0");
    }

    #[test]
    fn ingest_sorts_by_timestamp() {
        let data = "household_id,timestamp,kwh\na,2022-01-01T01:00:00,2\na,2022-01-01T00:00:00,1\n";
        let s = ingest_reader(data.as_bytes()).unwrap();
        assert_eq!(s[0].kwh().collect::<Vec<_>>(), vec![1.0, 2.0]);
    }

    #[test]
    fn negative_kwh_cites_row() {
        let mut lines: Vec<String> = csv_for(1, 10).lines().map(String::from).collect();
        // data row 7 is line index 7 (header at index 0)
        lines[7] = lines[7].rsplit_once(',').map(|(a, _)| format!("{a},-0.1")).unwrap();
        let err = ingest_reader(lines.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Ingest { row: 7, .. }), "{err}");
        assert!(err.to_string().contains("row 7"));
    }

    #[test]
    fn ingest_rejects_bad_input() {
        let missing = "household,timestamp,kwh\na,2022-01-01T00:00:00,1\n";
        assert!(ingest_reader(missing.as_bytes())
            .unwrap_err()
            .to_string()
            .contains("household_id"));
        let bad_ts = "household_id,timestamp,kwh\na,yesterday,1\n";
        assert!(matches!(
            ingest_reader(bad_ts.as_bytes()),
            Err(Error::Ingest { row: 1, .. })
        ));
        let dup = "household_id,timestamp,kwh\na,2022-01-01T00:00:00,1\na,2022-01-01T00:00:00,2\n";
        assert!(matches!(
            ingest_reader(dup.as_bytes()),
            Err(Error::Ingest { row: 2, .. })
        ));
        let gap = "household_id,timestamp,kwh\na,2022-01-01T00:00:00,1\na,2022-01-01T02:00:00,2\n";
        assert!(ingest_reader(gap.as_bytes()).unwrap_err().to_string().contains("gap"));
        let sub_hour = "household_id,timestamp,kwh\na,2022-01-01T00:30:00,1\n";
        assert!(ingest_reader(sub_hour.as_bytes()).is_err());
    }

    #[test]
    fn timestamp_variants() {
        for s in [
            "2022-01-01T05:00:00",
            "2022-01-01T05:00",
            "2022-01-01 05:00:00",
            "2022-01-01T05",
            "2022-01-01T05:00:00Z",
        ] {
            assert_eq!(parse_timestamp(s).unwrap().hour(), 5, "{s}");
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_sized() {
        let shape = LoadShape::default();
        let a = synthesize_household("x", 30, 9, &shape).unwrap();
        let b = synthesize_household("x", 30, 9, &shape).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 720);
        assert!(a.kwh().all(|v| v > 0.0));
        assert!(synthesize_household("x", 0, 9, &shape).is_err());
    }

    #[test]
    fn high_window_mean_exceeds_low_window_mean() {
        let shape = LoadShape::default();
        let s = synthesize_household("x", 365, 4, &shape).unwrap();
        let (mut hi, mut lo, mut nh, mut nl) = (0.0, 0.0, 0, 0);
        for (i, v) in s.kwh().enumerate() {
            let h = i % 24;
            if shape.high.contains(h) {
                hi += v;
                nh += 1;
            } else if shape.low.contains(h) {
                lo += v;
                nl += 1;
            }
        }
        assert!(hi / nh as f64 > lo / nl as f64);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let pop = synthesize_population(2, 3, 1).unwrap();
        write_series_csv(&p, &pop).unwrap();
        let back = ingest_csv(&p).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in pop.iter().zip(&back) {
            assert_eq!(a.household_id, b.household_id);
            for (x, y) in a.kwh().zip(b.kwh()) {
                assert!((x - y).abs() <= 1e-11 * x.abs());
            }
        }
    }
}
