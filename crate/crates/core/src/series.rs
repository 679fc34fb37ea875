//! Univariate daily series: CSV ingestion, synthetic generation, chronological
//! splitting, z-score scaling and supervised windowing.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("file not found: {0}")]
    MissingFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}: {message}")]
    ParseError { row: usize, message: String },
    #[error("row {row}: timestamp is not after the previous one")]
    NonMonotoneTimestamps { row: usize },
    #[error("row {row}: value is not finite")]
    NonFiniteValue { row: usize },
    #[error("series needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("timestamps and values differ in length ({timestamps} vs {values})")]
    LengthMismatch { timestamps: usize, values: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("train fraction must lie strictly inside (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("split at {at} of {len} leaves a segment shorter than 2 points")]
    SplitTooShort { at: usize, len: usize },
    #[error("training segment has zero variance")]
    ZeroVariance,
    #[error("window {window} must satisfy 1 <= w < {len}")]
    WindowTooLarge { window: usize, len: usize },
}

/// Ordered (date, value) record. Timestamps strictly increase and every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    timestamps: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(timestamps: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self, SeriesError> {
        if timestamps.len() != values.len() {
            return Err(SeriesError::LengthMismatch {
                timestamps: timestamps.len(),
                values: values.len(),
            });
        }
        if values.len() < 2 {
            return Err(SeriesError::TooShort(values.len()));
        }
        for (i, pair) in timestamps.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(SeriesError::NonMonotoneTimestamps { row: i + 2 });
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::NonFiniteValue { row: i + 1 });
        }
        Ok(Self { timestamps, values })
    }

    /// Daily series starting at `start`.
    pub fn daily(start: NaiveDate, values: Vec<f64>) -> Result<Self, SeriesError> {
        let timestamps = (0..values.len())
            .map(|i| start + Days::new(i as u64))
            .collect();
        Self::new(timestamps, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            timestamps: self.timestamps.clone(),
            values,
        }
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    timestamp: String,
    value: String,
}

/// Reads a `timestamp,value` CSV with ISO-8601 dates.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeries, SeriesError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(SeriesError::MissingFile(path.display().to_string()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| SeriesError::ParseError {
            row: 0,
            message: e.to_string(),
        })?;

    let headers = reader.headers().map_err(|e| SeriesError::ParseError {
        row: 0,
        message: e.to_string(),
    })?;
    if headers.len() != 2 || &headers[0] != "timestamp" || &headers[1] != "value" {
        return Err(SeriesError::ParseError {
            row: 0,
            message: "expected header `timestamp,value`".into(),
        });
    }

    let mut timestamps: Vec<NaiveDate> = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.deserialize::<CsvRow>().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| SeriesError::ParseError {
            row,
            message: e.to_string(),
        })?;
        let date = NaiveDate::parse_from_str(&record.timestamp, DATE_FORMAT).map_err(|e| {
            SeriesError::ParseError {
                row,
                message: format!("bad date {:?}: {e}", record.timestamp),
            }
        })?;
        let value: f64 = record.value.parse().map_err(|_| SeriesError::ParseError {
            row,
            message: format!("bad value {:?}", record.value),
        })?;
        if !value.is_finite() {
            return Err(SeriesError::NonFiniteValue { row });
        }
        if let Some(prev) = timestamps.last() {
            if date <= *prev {
                return Err(SeriesError::NonMonotoneTimestamps { row });
            }
        }
        timestamps.push(date);
        values.push(value);
    }
    TimeSeries::new(timestamps, values)
}

/// Writes the series using the same schema `load_csv` reads.
pub fn write_csv(ts: &TimeSeries, path: impl AsRef<Path>) -> Result<(), SeriesError> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "timestamp,value")?;
    for (date, value) in ts.timestamps.iter().zip(&ts.values) {
        writeln!(out, "{},{}", date.format(DATE_FORMAT), value)?;
    }
    out.flush()?;
    Ok(())
}

/// Parameters of the synthetic seasonal generator.
///
/// `value(t) = level + amplitude * sin(2*pi*t / period) + trend_slope * t + e(t)`
/// where `e` is an AR(1) process with coefficient `ar_coeff` and innovation
/// standard deviation `noise_std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub length: usize,
    pub period: f64,
    pub level: f64,
    pub amplitude: f64,
    pub trend_slope: f64,
    pub noise_std: f64,
    pub ar_coeff: f64,
    pub start: NaiveDate,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            length: 2000,
            period: 365.0,
            level: 100.0,
            amplitude: 40.0,
            trend_slope: 0.005,
            noise_std: 1.0,
            ar_coeff: 0.7,
            start: NaiveDate::from_ymd_opt(1998, 1, 2).expect("valid date"),
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SeriesError> {
        let bad = |m: &str| Err(SeriesError::InvalidSpec(m.to_string()));
        if !(self.period > 0.0) {
            return bad("period must be positive");
        }
        if (self.length as f64) < 2.0 * self.period {
            return bad("length must be at least two periods");
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative");
        }
        if !(0.0..1.0).contains(&self.ar_coeff) {
            return bad("ar_coeff must lie in [0, 1)");
        }
        if ![self.level, self.amplitude, self.trend_slope]
            .iter()
            .all(|v| v.is_finite())
        {
            return bad("level, amplitude and trend_slope must be finite");
        }
        Ok(())
    }

    /// Deterministic part of the signal at step `t`.
    pub fn deterministic_component(&self, t: usize) -> f64 {
        let t = t as f64;
        self.level + self.amplitude * (2.0 * PI * t / self.period).sin() + self.trend_slope * t
    }
}

pub fn synthesize(spec: &SynthSpec) -> Result<TimeSeries, SeriesError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    // stationary start for the AR(1) noise
    let mut noise = if spec.noise_std > 0.0 {
        normal.sample(&mut rng) * spec.noise_std / (1.0 - spec.ar_coeff * spec.ar_coeff).sqrt()
    } else {
        0.0
    };
    let mut values = Vec::with_capacity(spec.length);
    for t in 0..spec.length {
        if t > 0 {
            noise = spec.ar_coeff * noise + spec.noise_std * normal.sample(&mut rng);
        }
        values.push(spec.deterministic_component(t) + noise);
    }
    TimeSeries::daily(spec.start, values)
}

/// Chronological split at `floor(train_frac * N)`.
pub fn split(ts: &TimeSeries, train_frac: f64) -> Result<(TimeSeries, TimeSeries), SeriesError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(SeriesError::InvalidFraction(train_frac));
    }
    let at = (train_frac * ts.len() as f64).floor() as usize;
    if at < 2 || ts.len() - at < 2 {
        return Err(SeriesError::SplitTooShort { at, len: ts.len() });
    }
    let head = TimeSeries {
        timestamps: ts.timestamps[..at].to_vec(),
        values: ts.values[..at].to_vec(),
    };
    let tail = TimeSeries {
        timestamps: ts.timestamps[at..].to_vec(),
        values: ts.values[at..].to_vec(),
    };
    Ok((head, tail))
}

/// Z-score parameters. `std` uses the population convention (divide by N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: f64,
    pub std: f64,
}

impl ScalerParams {
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    #[inline]
    pub fn scale(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    #[inline]
    pub fn unscale(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }

    pub fn scale_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.scale(v)).collect()
    }

    pub fn unscale_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.unscale(v)).collect()
    }
}

pub fn fit_scaler(train: &TimeSeries) -> Result<ScalerParams, SeriesError> {
    let n = train.len() as f64;
    let mean = train.values.iter().sum::<f64>() / n;
    let var = train.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(SeriesError::ZeroVariance);
    }
    Ok(ScalerParams { mean, std })
}

pub fn apply(ts: &TimeSeries, sp: &ScalerParams) -> TimeSeries {
    ts.with_values(sp.scale_all(&ts.values))
}

pub fn invert(ts: &TimeSeries, sp: &ScalerParams) -> TimeSeries {
    ts.with_values(sp.unscale_all(&ts.values))
}

/// Supervised (window, next value) pairs. Window `i` covers `[i, i + w)`
/// and its target is the value at `i + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub window: usize,
}

impl WindowedDataset {
    pub fn from_values(values: &[f64], w: usize) -> Result<Self, SeriesError> {
        if w == 0 || w >= values.len() {
            return Err(SeriesError::WindowTooLarge {
                window: w,
                len: values.len(),
            });
        }
        let n = values.len() - w;
        let inputs = (0..n).map(|i| values[i..i + w].to_vec()).collect();
        let targets = values[w..].to_vec();
        Ok(Self {
            inputs,
            targets,
            window: w,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

pub fn make_windows(ts: &TimeSeries, w: usize) -> Result<WindowedDataset, SeriesError> {
    WindowedDataset::from_values(&ts.values, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: &[f64]) -> TimeSeries {
        TimeSeries::daily(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), values.to_vec()).unwrap()
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_minimal_csv() {
        let f = write("timestamp,value\n2020-01-01,1.5\n2020-01-02,2.5\n");
        let ts = load_csv(f.path()).unwrap();
        assert_eq!(ts.len(), 2);
        assert_eq!(ts.values(), &[1.5, 2.5]);
    }

    #[test]
    fn load_rejects_swapped_dates() {
        let f = write("timestamp,value\n2020-01-02,1\n2020-01-01,2\n");
        assert!(matches!(
            load_csv(f.path()),
            Err(SeriesError::NonMonotoneTimestamps { row: 2 })
        ));
    }

    #[test]
    fn load_reports_bad_rows() {
        let f = write("timestamp,value\n2020-01-01,1\n2020-01-02,abc\n");
        assert!(matches!(load_csv(f.path()), Err(SeriesError::ParseError { row: 2, .. })));
        let f = write("timestamp,value\n2020-01-01,1\n2020-01-02,NaN\n");
        assert!(matches!(load_csv(f.path()), Err(SeriesError::NonFiniteValue { row: 2 })));
        assert!(matches!(
            load_csv("/definitely/not/here.csv"),
            Err(SeriesError::MissingFile(_))
        ));
    }

    #[test]
    fn load_full_length_record() {
        let start = NaiveDate::from_ymd_opt(1998, 1, 2).unwrap();
        let values: Vec<f64> = (0..9321).map(|i| 1000.0 + i as f64).collect();
        let ts = TimeSeries::daily(start, values).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ts, f.path()).unwrap();
        let back = load_csv(f.path()).unwrap();
        assert_eq!(back.len(), 9321);
        assert_eq!(back, ts);
    }

    #[test]
    fn noiseless_synth_is_pure_sinusoid() {
        let spec = SynthSpec {
            length: 730,
            period: 365.0,
            level: 0.0,
            amplitude: 2.5,
            trend_slope: 0.0,
            noise_std: 0.0,
            ..SynthSpec::default()
        };
        let ts = synthesize(&spec).unwrap();
        let max = ts.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((max - 2.5).abs() < 1e-3);
        assert!(max <= 2.5 + 1e-12);
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec::default();
        assert_eq!(synthesize(&spec).unwrap(), synthesize(&spec).unwrap());
        let other = SynthSpec { seed: 7, ..spec.clone() };
        assert_ne!(synthesize(&spec).unwrap(), synthesize(&other).unwrap());
    }

    #[test]
    fn synth_ar_coefficient_recovered() {
        let spec = SynthSpec {
            length: 1000,
            period: 365.0,
            level: 0.0,
            amplitude: 1.0,
            trend_slope: 0.0,
            noise_std: 0.1,
            ar_coeff: 0.7,
            seed: 42,
            ..SynthSpec::default()
        };
        let ts = synthesize(&spec).unwrap();
        let resid: Vec<f64> = ts
            .values()
            .iter()
            .enumerate()
            .map(|(t, v)| v - (2.0 * PI * t as f64 / 365.0).sin())
            .collect();
        // lag-1 sample autocorrelation
        let n = resid.len() as f64;
        let mean = resid.iter().sum::<f64>() / n;
        let denom: f64 = resid.iter().map(|r| (r - mean).powi(2)).sum();
        let numer: f64 = resid.windows(2).map(|p| (p[0] - mean) * (p[1] - mean)).sum();
        let rho = numer / denom;
        assert!((rho - 0.7).abs() < 0.1, "lag-1 autocorrelation {rho}");
    }

    #[test]
    fn synth_rejects_bad_specs() {
        let short = SynthSpec { length: 100, ..SynthSpec::default() };
        assert!(matches!(synthesize(&short), Err(SeriesError::InvalidSpec(_))));
        let neg = SynthSpec { noise_std: -1.0, ..SynthSpec::default() };
        assert!(synthesize(&neg).is_err());
    }

    #[test]
    fn split_sizes() {
        let ts = series(&[0.0; 10]);
        let (a, b) = split(&ts, 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));

        let start = NaiveDate::from_ymd_opt(1998, 1, 2).unwrap();
        let long = TimeSeries::daily(start, vec![1.0; 9321]).unwrap();
        let (a, b) = split(&long, 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (7456, 1865));
        assert!(a.timestamps().last().unwrap() < b.timestamps().first().unwrap());

        assert!(matches!(split(&ts, 1.0), Err(SeriesError::InvalidFraction(_))));
        assert!(matches!(split(&ts, 0.0), Err(SeriesError::InvalidFraction(_))));
    }

    #[test]
    fn scaler_two_points() {
        let ts = series(&[1.0, 3.0]);
        let sp = fit_scaler(&ts).unwrap();
        assert_eq!(sp.mean, 2.0);
        assert_eq!(sp.std, 1.0);
        assert_eq!(apply(&ts, &sp).values(), &[-1.0, 1.0]);
    }

    #[test]
    fn scaler_rejects_constant() {
        assert!(matches!(fit_scaler(&series(&[4.0, 4.0, 4.0])), Err(SeriesError::ZeroVariance)));
    }

    #[test]
    fn scaler_ignores_test_segment() {
        let ts = synthesize(&SynthSpec::default()).unwrap();
        let (train, test) = split(&ts, 0.8).unwrap();
        let sp = fit_scaler(&train).unwrap();
        let mutated: Vec<f64> = test.values().iter().map(|v| v * 10.0 + 3.0).collect();
        let _ = TimeSeries::new(test.timestamps().to_vec(), mutated).unwrap();
        assert_eq!(fit_scaler(&train).unwrap(), sp);
        let scaled = apply(&train, &sp);
        let n = scaled.len() as f64;
        let mean = scaled.values().iter().sum::<f64>() / n;
        let var = scaled.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn windows_by_hand() {
        let ds = make_windows(&series(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(ds.inputs, vec![vec![1.0, 2.0], vec![2.0, 3.0]]);
        assert_eq!(ds.targets, vec![3.0, 4.0]);
        assert!(matches!(
            make_windows(&series(&[1.0, 2.0, 3.0, 4.0]), 4),
            Err(SeriesError::WindowTooLarge { .. })
        ));
        let long: Vec<f64> = (0..9321).map(f64::from).collect();
        assert_eq!(WindowedDataset::from_values(&long, 15).unwrap().len(), 9321 - 15);
    }

    proptest! {
        #[test]
        fn scaler_round_trip(values in prop::collection::vec(-1e4f64..1e4, 2..64)) {
            let ts = series(&values);
            if let Ok(sp) = fit_scaler(&ts) {
                let back = invert(&apply(&ts, &sp), &sp);
                for (a, b) in back.values().iter().zip(ts.values()) {
                    prop_assert!((a - b).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn window_targets_align(len in 3usize..80, w in 1usize..40) {
            prop_assume!(w < len);
            let values: Vec<f64> = (0..len).map(|i| (i as f64).sin()).collect();
            let ds = WindowedDataset::from_values(&values, w).unwrap();
            prop_assert_eq!(ds.len(), len - w);
            for i in 0..ds.len() {
                prop_assert_eq!(ds.targets[i], values[i + w]);
                prop_assert_eq!(&ds.inputs[i][..], &values[i..i + w]);
            }
        }
    }
}
