//! Time-series panels: CSV and binary I/O, imputation, scaling, splitting,
//! windowing, per-partition slicing and a synthetic traffic generator.

mod container;
mod csvio;
mod impute;
mod prep;
mod synth;

use std::ops::Range;

use chrono::{Datelike, Duration, NaiveDateTime, Timelike, Weekday};

pub use container::{read_container, read_panel_binary, read_windows_binary, write_container, write_panel_binary, write_windows_binary, Container};
pub use csvio::{parse_timestamp, read_panel_csv, write_panel_csv};
pub use impute::{impute, impute_with, DayClass, ImputeMethod, ImputeOptions};
pub use prep::{
    fit_scaler, make_windows, slice_for_partition, split, split_ranges, FeatureScaler, SplitFractions, WindowedDataset,
};
pub use synth::{generate_synthetic, CongestionWindow, FundamentalDiagram, SyntheticData, SyntheticScenario};

/// Ticks are five minutes apart.
pub const TICK_MINUTES: i64 = 5;
pub const TICKS_PER_DAY: usize = 288;

pub const SPEED: usize = 0;
pub const FLOW: usize = 1;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
    #[error("feature entirely missing: {0}")]
    FeatureEntirelyMissing(String),
    #[error("degenerate feature scale: {0}")]
    DegenerateScale(String),
    #[error("series too short: need {needed} ticks, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("missing node {0}")]
    MissingNode(String),
    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),
    #[error("invalid panel: {0}")]
    Invalid(String),
    #[error("container error: {0}")]
    Container(String),
}

/// Values on a regular 5-minute grid, laid out `[time][node][feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    start: NaiveDateTime,
    sensor_ids: Vec<String>,
    feature_names: Vec<String>,
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl TimeSeriesPanel {
    pub fn new(
        start: NaiveDateTime,
        sensor_ids: Vec<String>,
        feature_names: Vec<String>,
        values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self, DataError> {
        let width = sensor_ids.len() * feature_names.len();
        if width == 0 {
            return Err(DataError::Invalid("panel needs at least one node and one feature".into()));
        }
        if values.len() % width != 0 || missing.len() != values.len() {
            return Err(DataError::Invalid(format!(
                "{} values / {} mask entries do not fit {} nodes × {} features",
                values.len(),
                missing.len(),
                sensor_ids.len(),
                feature_names.len()
            )));
        }
        if start.minute() as i64 % TICK_MINUTES != 0 || start.second() != 0 {
            return Err(DataError::Invalid(format!("start {start} is not on the 5-minute grid")));
        }
        if values.iter().zip(&missing).any(|(v, &m)| !m && !v.is_finite()) {
            return Err(DataError::Invalid("observed value is not finite".into()));
        }
        Ok(Self {
            start,
            sensor_ids,
            feature_names,
            values,
            missing,
        })
    }

    /// Fully observed panel.
    pub fn from_values(
        start: NaiveDateTime,
        sensor_ids: Vec<String>,
        feature_names: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self, DataError> {
        let missing = vec![false; values.len()];
        Self::new(start, sensor_ids, feature_names, values, missing)
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn n_times(&self) -> usize {
        self.values.len() / (self.n_nodes() * self.n_features())
    }

    pub fn n_nodes(&self) -> usize {
        self.sensor_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn sensor_ids(&self) -> &[String] {
        &self.sensor_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.sensor_ids.iter().position(|s| s == id)
    }

    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.start + Duration::minutes(TICK_MINUTES * t as i64)
    }

    /// Tick of day in `0..288`.
    pub fn tick_of_day(&self, t: usize) -> usize {
        let ts = self.timestamp(t);
        (ts.hour() * 60 + ts.minute()) as usize / TICK_MINUTES as usize
    }

    pub fn weekday(&self, t: usize) -> Weekday {
        self.timestamp(t).weekday()
    }

    pub fn is_weekend(&self, t: usize) -> bool {
        matches!(self.weekday(t), Weekday::Sat | Weekday::Sun)
    }

    fn idx(&self, t: usize, n: usize, f: usize) -> usize {
        (t * self.n_nodes() + n) * self.n_features() + f
    }

    pub fn get(&self, t: usize, n: usize, f: usize) -> f64 {
        self.values[self.idx(t, n, f)]
    }

    pub fn is_missing(&self, t: usize, n: usize, f: usize) -> bool {
        self.missing[self.idx(t, n, f)]
    }

    pub fn set(&mut self, t: usize, n: usize, f: usize, v: f64) {
        let i = self.idx(t, n, f);
        self.values[i] = v;
        self.missing[i] = false;
    }

    pub fn set_missing(&mut self, t: usize, n: usize, f: usize) {
        let i = self.idx(t, n, f);
        self.values[i] = f64::NAN;
        self.missing[i] = true;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Contiguous tick range, start shifted accordingly.
    pub fn slice_time(&self, range: Range<usize>) -> Self {
        let w = self.n_nodes() * self.n_features();
        Self {
            start: self.timestamp(range.start),
            sensor_ids: self.sensor_ids.clone(),
            feature_names: self.feature_names.clone(),
            values: self.values[range.start * w..range.end * w].to_vec(),
            missing: self.missing[range.start * w..range.end * w].to_vec(),
        }
    }

    /// Columns for `nodes`, in the given order.
    pub fn select_nodes(&self, nodes: &[usize]) -> Self {
        let nf = self.n_features();
        let mut values = Vec::with_capacity(self.n_times() * nodes.len() * nf);
        let mut missing = Vec::with_capacity(values.capacity());
        for t in 0..self.n_times() {
            for &n in nodes {
                let i = self.idx(t, n, 0);
                values.extend_from_slice(&self.values[i..i + nf]);
                missing.extend_from_slice(&self.missing[i..i + nf]);
            }
        }
        Self {
            start: self.start,
            sensor_ids: nodes.iter().map(|&n| self.sensor_ids[n].clone()).collect(),
            feature_names: self.feature_names.clone(),
            values,
            missing,
        }
    }

    /// Reorders columns to follow `ids`.
    pub fn reorder_nodes(&self, ids: &[String]) -> Result<Self, DataError> {
        let nodes = ids
            .iter()
            .map(|id| self.node_index(id).ok_or_else(|| DataError::MissingNode(id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.select_nodes(&nodes))
    }

    /// Keeps only the given features, in order.
    pub fn select_features(&self, features: &[usize]) -> Self {
        let nf = self.n_features();
        let cells = self.n_times() * self.n_nodes();
        let mut values = Vec::with_capacity(cells * features.len());
        let mut missing = Vec::with_capacity(values.capacity());
        for c in 0..cells {
            for &f in features {
                values.push(self.values[c * nf + f]);
                missing.push(self.missing[c * nf + f]);
            }
        }
        Self {
            start: self.start,
            sensor_ids: self.sensor_ids.clone(),
            feature_names: features.iter().map(|&f| self.feature_names[f].clone()).collect(),
            values,
            missing,
        }
    }

    /// Appends tick `t` as `N` rows of the chosen feature columns.
    pub fn frame(&self, t: usize, features: &[usize], out: &mut Vec<f64>) {
        for n in 0..self.n_nodes() {
            let i = self.idx(t, n, 0);
            for &f in features {
                out.push(self.values[i + f]);
            }
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use chrono::NaiveDate;

    pub(crate) fn t0() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2018, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
    }

    fn small() -> TimeSeriesPanel {
        let values = (0..3 * 2 * 2).map(|i| i as f64).collect();
        TimeSeriesPanel::from_values(t0(), vec!["a".into(), "b".into()], vec!["speed".into(), "flow".into()], values)
            .unwrap()
    }

    #[test]
    fn layout_and_slicing() {
        let p = small();
        assert_eq!(p.n_times(), 3);
        assert_eq!(p.get(1, 1, 0), 6.0);
        let s = p.slice_time(1..3);
        assert_eq!(s.n_times(), 2);
        assert_eq!(s.get(0, 1, 0), 6.0);
        assert_eq!(s.start(), t0() + Duration::minutes(5));
        let r = p.select_nodes(&[1, 0]);
        assert_eq!(r.sensor_ids(), &["b".to_string(), "a".to_string()]);
        assert_eq!(r.get(1, 0, 1), 7.0);
        let f = p.select_features(&[1]);
        assert_eq!(f.get(2, 1, 0), 11.0);
    }

    #[test]
    fn calendar_helpers() {
        let p = small();
        // 2018-01-01 is a Monday
        assert_eq!(p.weekday(0), Weekday::Mon);
        assert!(!p.is_weekend(0));
        assert_eq!(p.tick_of_day(2), 2);
    }

    #[test]
    fn rejects_bad_shapes_and_offgrid_start() {
        assert!(TimeSeriesPanel::from_values(t0(), vec!["a".into()], vec!["speed".into(), "flow".into()], vec![1.0; 3])
            .is_err());
        let off = t0() + Duration::minutes(3);
        assert!(TimeSeriesPanel::from_values(off, vec!["a".into()], vec!["speed".into()], vec![1.0]).is_err());
    }
}
