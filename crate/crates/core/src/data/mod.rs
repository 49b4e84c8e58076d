//! Load-profile data pipeline: ingestion or synthesis of hourly series,
//! daily segmentation, usage-window detection, anomaly injection and
//! per-client dataset preparation.

pub mod anomaly;
pub mod dataset;
pub mod series;
pub mod windows;

pub use anomaly::{inject_drop, inject_spike, AnomalyConfig, AnomalyKind, Injection, KindWeights, SpikeDirection};
pub use dataset::{
    build_dataset, normalize, prepare_clients, split, ClientData, LabeledDataset, PipelineConfig, Samples, Scaling,
};
pub use series::{
    ingest_csv, ingest_reader, synthesize_household, synthesize_population, write_series_csv, HourlySeries, LoadShape,
};
pub use windows::{detect_usage_windows, HourWindow, UsageWindows};

pub const HOURS: usize = 24;

/// One day of hourly consumption.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadProfile {
    pub values: [f64; HOURS],
    pub day_index: usize,
}

/// Cuts a series into consecutive 24-hour profiles; a trailing partial day is
/// dropped.
pub fn segment_daily(series: &HourlySeries) -> Vec<LoadProfile> {
    let kwh: Vec<f64> = series.kwh().collect();
    kwh.chunks_exact(HOURS)
        .enumerate()
        .map(|(day_index, chunk)| {
            let mut values = [0.0; HOURS];
            values.copy_from_slice(chunk);
            LoadProfile { values, day_index }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDate};
    use series::Reading;

    fn series_of(n: usize) -> HourlySeries {
        let t0 = NaiveDate::from_ymd_opt(2020, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        HourlySeries {
            household_id: "h".into(),
            readings: (0..n)
                .map(|i| Reading {
                    timestamp: t0 + Duration::hours(i as i64),
                    kwh: i as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn segmentation_counts() {
        assert_eq!(segment_daily(&series_of(72)).len(), 3);
        let p = segment_daily(&series_of(70));
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].values[0], 24.0);
        assert_eq!(p[1].values[23], 47.0);
        assert_eq!(p[1].day_index, 1);
        assert!(segment_daily(&series_of(0)).is_empty());
        assert_eq!(segment_daily(&series_of(25_560)).len(), 1_065);
    }
}
