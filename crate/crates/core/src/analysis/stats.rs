use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AnalysisError;

/// Tukey box-plot summary; quartiles interpolate linearly between order
/// statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    /// `(index, value)` of points beyond 1.5·IQR from the box.
    pub outliers: Vec<(usize, f64)>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mae_distribution_stats(values: &[f64]) -> Result<BoxStats, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.5), quantile(&sorted, 0.75));
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || sorted.iter().copied().filter(|&v| v >= lo && v <= hi);
    Ok(BoxStats {
        n: values.len(),
        min: sorted[0],
        q1,
        median,
        q3,
        max: sorted[sorted.len() - 1],
        lower_whisker: inside().fold(f64::INFINITY, f64::min),
        upper_whisker: inside().fold(f64::NEG_INFINITY, f64::max),
        outliers: values
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, v)| v < lo || v > hi)
            .collect(),
    })
}

/// `group,n,min,q1,median,q3,max,lower_whisker,upper_whisker,outliers`, with
/// outlier values joined by `;`.
pub fn write_box_stats_csv(path: &Path, groups: &[(String, BoxStats)]) -> Result<(), AnalysisError> {
    let err = |e: csv::Error| AnalysisError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record([
        "group",
        "n",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "lower_whisker",
        "upper_whisker",
        "outliers",
    ])
    .map_err(err)?;
    for (g, s) in groups {
        let outliers: Vec<String> = s.outliers.iter().map(|(_, v)| v.to_string()).collect();
        w.write_record([
            g.clone(),
            s.n.to_string(),
            s.min.to_string(),
            s.q1.to_string(),
            s.median.to_string(),
            s.q3.to_string(),
            s.max.to_string(),
            s.lower_whisker.to_string(),
            s.upper_whisker.to_string(),
            outliers.join(";"),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| AnalysisError::Io(format!("{}: {e}", path.display())))
}
