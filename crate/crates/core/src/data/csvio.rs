use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::{DataError, TimeSeriesPanel, TICK_MINUTES};

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// ISO-8601 local time (`2018-01-01T08:05:00`, seconds optional, space
/// separator accepted) or RFC 3339 with an offset, converted to UTC.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in [TS_FORMAT, "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.naive_utc())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io(format!("{}: {e}", path.display()))
}

/// Long format `timestamp,sensor_id,<feature>...`; empty fields are missing.
///
/// Sensors are ordered by id. Ticks span the first to the last timestamp;
/// absent rows become missing entries.
pub fn read_panel_csv(path: &Path) -> Result<TimeSeriesPanel, DataError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| io_err(path, e))?.clone();
    if header.len() < 3 || &header[0] != "timestamp" || &header[1] != "sensor_id" {
        return Err(DataError::Schema {
            line: 1,
            message: "expected header timestamp,sensor_id,<feature>...".into(),
        });
    }
    let features: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut rows: Vec<(NaiveDateTime, String, Vec<Option<f64>>, usize)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| DataError::Schema {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(DataError::Schema {
                line,
                message: format!("expected {} fields, got {}", header.len(), rec.len()),
            });
        }
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| DataError::Schema {
            line,
            message: format!("bad timestamp {:?}", &rec[0]),
        })?;
        if rec[1].is_empty() {
            return Err(DataError::Schema {
                line,
                message: "empty sensor_id".into(),
            });
        }
        let mut vals = Vec::with_capacity(features.len());
        for field in rec.iter().skip(2) {
            if field.is_empty() {
                vals.push(None);
            } else {
                let v: f64 = field.parse().map_err(|_| DataError::Schema {
                    line,
                    message: format!("bad number {field:?}"),
                })?;
                if !v.is_finite() {
                    return Err(DataError::Schema {
                        line,
                        message: format!("non-finite value {field:?}"),
                    });
                }
                vals.push(Some(v));
            }
        }
        rows.push((ts, rec[1].to_string(), vals, line));
    }
    let Some(start) = rows.iter().map(|r| r.0).min() else {
        return Err(DataError::Schema {
            line: 1,
            message: "no data rows".into(),
        });
    };
    let end = rows.iter().map(|r| r.0).max().expect("non-empty");
    let ids: Vec<String> = rows.iter().map(|r| r.1.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let node_of: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n_times = ((end - start).num_minutes() / TICK_MINUTES) as usize + 1;
    let (nn, nf) = (ids.len(), features.len());
    let mut values = vec![f64::NAN; n_times * nn * nf];
    let mut missing = vec![true; values.len()];
    let mut seen = vec![false; n_times * nn];
    for (ts, id, vals, line) in &rows {
        let minutes = (*ts - start).num_minutes();
        if minutes % TICK_MINUTES != 0 || (*ts - start).num_seconds() % 60 != 0 {
            return Err(DataError::Schema {
                line: *line,
                message: format!("timestamp {ts} is off the 5-minute grid"),
            });
        }
        let t = (minutes / TICK_MINUTES) as usize;
        let n = node_of[id.as_str()];
        if std::mem::replace(&mut seen[t * nn + n], true) {
            return Err(DataError::Schema {
                line: *line,
                message: format!("duplicate row for {id} at {ts}"),
            });
        }
        for (f, v) in vals.iter().enumerate() {
            if let Some(v) = v {
                let i = (t * nn + n) * nf + f;
                values[i] = *v;
                missing[i] = false;
            }
        }
    }
    TimeSeriesPanel::new(start, ids, features, values, missing).map_err(|e| match e {
        DataError::Invalid(m) => DataError::Schema { line: 2, message: m },
        other => other,
    })
}

pub fn write_panel_csv(path: &Path, panel: &TimeSeriesPanel) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header = vec!["timestamp".to_string(), "sensor_id".to_string()];
    header.extend(panel.feature_names().iter().cloned());
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    let mut rec = Vec::with_capacity(header.len());
    for t in 0..panel.n_times() {
        let ts = panel.timestamp(t).format(TS_FORMAT).to_string();
        for (n, id) in panel.sensor_ids().iter().enumerate() {
            rec.clear();
            rec.push(ts.clone());
            rec.push(id.clone());
            for f in 0..panel.n_features() {
                rec.push(if panel.is_missing(t, n, f) {
                    String::new()
                } else {
                    format!("{}", panel.get(t, n, f))
                });
            }
            w.write_record(&rec).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn round_trip_with_missing_and_absent_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ts.csv");
        fs::write(
            &p,
            "timestamp,sensor_id,speed,flow\n\
             2018-01-01T00:00:00,b,60,100\n\
             2018-01-01T00:00:00,a,61,\n\
             2018-01-01T00:10:00,a,62,120\n",
        )
        .unwrap();
        let panel = read_panel_csv(&p).unwrap();
        assert_eq!(panel.sensor_ids(), &["a".to_string(), "b".to_string()]);
        assert_eq!(panel.n_times(), 3);
        assert_eq!(panel.get(0, 0, 0), 61.0);
        assert!(panel.is_missing(0, 0, 1));
        assert!(panel.is_missing(1, 0, 0));
        assert!(panel.is_missing(2, 1, 1));
        assert_eq!(panel.missing_count(), 7);
        let q = dir.path().join("out.csv");
        write_panel_csv(&q, &panel).unwrap();
        let back = read_panel_csv(&q).unwrap();
        assert_eq!(back.missing_mask(), panel.missing_mask());
        assert_eq!(back.start(), panel.start());
        for (a, b) in back.values().iter().zip(panel.values()) {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn schema_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ts.csv");
        fs::write(&p, "timestamp,sensor_id,speed\n2018-01-01T00:00:00,a,60\n2018-01-01T00:03:00,a,60\n").unwrap();
        assert!(matches!(read_panel_csv(&p), Err(DataError::Schema { line: 3, .. })));
        fs::write(&p, "timestamp,sensor_id,speed\n2018-01-01T00:00:00,a,fast\n").unwrap();
        assert!(matches!(read_panel_csv(&p), Err(DataError::Schema { line: 2, .. })));
        fs::write(&p, "time,id,speed\n").unwrap();
        assert!(matches!(read_panel_csv(&p), Err(DataError::Schema { line: 1, .. })));
        fs::write(&p, "timestamp,sensor_id,speed\n2018-01-01T00:00:00,a,1\n2018-01-01T00:00:00,a,2\n").unwrap();
        assert!(matches!(read_panel_csv(&p), Err(DataError::Schema { line: 3, .. })));
    }

    #[test]
    fn timestamp_forms() {
        let a = parse_timestamp("2018-01-01T08:05:00").unwrap();
        assert_eq!(parse_timestamp("2018-01-01 08:05").unwrap(), a);
        assert_eq!(parse_timestamp("2018-01-01T09:05:00+01:00").unwrap(), a);
        assert!(parse_timestamp("yesterday").is_none());
    }
}
