use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{DataError, TimeSeriesPanel, TICKS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMethod {
    #[default]
    TemporalMean,
    TemporalMedian,
    LinearInterpolation,
}

/// Calendar grouping for the temporal slot statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DayClass {
    /// Weekdays pooled together, weekends pooled together.
    #[default]
    WeekdayWeekend,
    /// One slot per day of the week.
    DayOfWeek,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImputeOptions {
    pub method: ImputeMethod,
    pub day_class: DayClass,
    /// Ticks whose observations feed the statistics; `None` uses the whole
    /// panel.
    pub reference: Option<Range<usize>>,
}

/// [`impute_with`] pooling over the whole panel.
pub fn impute(panel: &TimeSeriesPanel, method: ImputeMethod) -> Result<TimeSeriesPanel, DataError> {
    impute_with(
        panel,
        &ImputeOptions {
            method,
            ..ImputeOptions::default()
        },
    )
}

struct Fallbacks {
    node_mean: Vec<Option<f64>>, // [node][feature]
    global_mean: Vec<f64>,
}

fn mean_of(vals: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, c) = vals.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (c > 0).then(|| s / c as f64)
}

fn median_of(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn observed(panel: &TimeSeriesPanel, ticks: Range<usize>, n: usize, f: usize) -> impl Iterator<Item = f64> + '_ {
    ticks.filter(move |&t| !panel.is_missing(t, n, f)).map(move |t| panel.get(t, n, f))
}

fn fallbacks(panel: &TimeSeriesPanel, reference: Range<usize>) -> Result<Fallbacks, DataError> {
    let (nn, nf, nt) = (panel.n_nodes(), panel.n_features(), panel.n_times());
    let mut node_mean = vec![None; nn * nf];
    let mut global_mean = vec![0.0; nf];
    for f in 0..nf {
        for n in 0..nn {
            node_mean[n * nf + f] = mean_of(observed(panel, reference.clone(), n, f));
        }
        let global = mean_of((0..nn).flat_map(|n| observed(panel, reference.clone(), n, f)))
            .or_else(|| mean_of((0..nn).flat_map(|n| observed(panel, 0..nt, n, f))));
        global_mean[f] = global.ok_or_else(|| DataError::FeatureEntirelyMissing(panel.feature_names()[f].clone()))?;
    }
    Ok(Fallbacks { node_mean, global_mean })
}

/// Fills every missing entry; the result has an all-false mask.
///
/// Temporal methods use the `(node, feature, tick of day, day class)` slot
/// statistic over the reference ticks, falling back to the node's feature
/// mean and then the global feature mean. Linear interpolation works along
/// time per node and feature, extending the nearest observation at the edges.
pub fn impute_with(panel: &TimeSeriesPanel, opts: &ImputeOptions) -> Result<TimeSeriesPanel, DataError> {
    let nt = panel.n_times();
    let reference = opts.reference.clone().unwrap_or(0..nt);
    if reference.end > nt || reference.start > reference.end {
        return Err(DataError::Invalid(format!("reference range {reference:?} outside 0..{nt}")));
    }
    let fb = fallbacks(panel, reference.clone())?;
    let mut out = panel.clone();
    if panel.missing_count() == 0 {
        return Ok(out);
    }
    let (nn, nf) = (panel.n_nodes(), panel.n_features());
    let fallback = |n: usize, f: usize| fb.node_mean[n * nf + f].unwrap_or(fb.global_mean[f]);
    match opts.method {
        ImputeMethod::TemporalMean | ImputeMethod::TemporalMedian => {
            let classes = match opts.day_class {
                DayClass::WeekdayWeekend => 2,
                DayClass::DayOfWeek => 7,
            };
            let class_of = |t: usize| match opts.day_class {
                DayClass::WeekdayWeekend => usize::from(panel.is_weekend(t)),
                DayClass::DayOfWeek => panel.weekday(t).num_days_from_monday() as usize,
            };
            let slot = |t: usize| class_of(t) * TICKS_PER_DAY + panel.tick_of_day(t);
            let n_slots = classes * TICKS_PER_DAY;
            for n in 0..nn {
                for f in 0..nf {
                    if (0..nt).all(|t| !panel.is_missing(t, n, f)) {
                        continue;
                    }
                    let mut pools: Vec<Vec<f64>> = vec![Vec::new(); n_slots];
                    for t in reference.clone() {
                        if !panel.is_missing(t, n, f) {
                            pools[slot(t)].push(panel.get(t, n, f));
                        }
                    }
                    let stats: Vec<Option<f64>> = pools
                        .iter_mut()
                        .map(|p| match opts.method {
                            ImputeMethod::TemporalMean => mean_of(p.iter().copied()),
                            _ => median_of(p),
                        })
                        .collect();
                    for t in 0..nt {
                        if panel.is_missing(t, n, f) {
                            out.set(t, n, f, stats[slot(t)].unwrap_or_else(|| fallback(n, f)));
                        }
                    }
                }
            }
        }
        ImputeMethod::LinearInterpolation => {
            for n in 0..nn {
                for f in 0..nf {
                    let obs: Vec<usize> = (0..nt).filter(|&t| !panel.is_missing(t, n, f)).collect();
                    if obs.is_empty() {
                        let v = fallback(n, f);
                        for t in 0..nt {
                            out.set(t, n, f, v);
                        }
                        continue;
                    }
                    let mut next = 0;
                    for t in 0..nt {
                        while next < obs.len() && obs[next] < t {
                            next += 1;
                        }
                        if !panel.is_missing(t, n, f) {
                            continue;
                        }
                        let v = match (next.checked_sub(1).map(|i| obs[i]), obs.get(next)) {
                            (Some(a), Some(&b)) => {
                                let (va, vb) = (panel.get(a, n, f), panel.get(b, n, f));
                                va + (vb - va) * (t - a) as f64 / (b - a) as f64
                            }
                            (Some(a), None) => panel.get(a, n, f),
                            (None, Some(&b)) => panel.get(b, n, f),
                            (None, None) => unreachable!("obs is non-empty"),
                        };
                        out.set(t, n, f, v);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDate};

    fn panel(values: Vec<f64>, missing: Vec<bool>, start_hour: u32) -> TimeSeriesPanel {
        let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap().and_hms_opt(start_hour, 0, 0).unwrap();
        TimeSeriesPanel::new(start, vec!["a".into()], vec!["speed".into()], values, missing).unwrap()
    }

    #[test]
    fn nothing_missing_is_identity() {
        let p = panel(vec![1.0, 2.0, 3.0], vec![false; 3], 0);
        for m in [ImputeMethod::TemporalMean, ImputeMethod::TemporalMedian, ImputeMethod::LinearInterpolation] {
            assert_eq!(impute(&p, m).unwrap(), p);
        }
    }

    #[test]
    fn interpolation_midpoint_and_edges() {
        let p = panel(vec![f64::NAN, 10.0, f64::NAN, 30.0, f64::NAN], vec![true, false, true, false, true], 0);
        let out = impute(&p, ImputeMethod::LinearInterpolation).unwrap();
        assert_eq!(out.values(), &[10.0, 10.0, 20.0, 30.0, 30.0]);
        assert_eq!(out.missing_count(), 0);
    }

    /// Three Mondays at 08:00 with everything else observed at a constant.
    fn three_mondays(day_class: DayClass, method: ImputeMethod) -> f64 {
        let weeks = 3;
        let nt = weeks * 7 * TICKS_PER_DAY;
        let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let mut values = vec![50.0; nt];
        let mut missing = vec![false; nt];
        let at = |w: usize| w * 7 * TICKS_PER_DAY + 8 * 12;
        values[at(0)] = 60.0;
        values[at(1)] = f64::NAN;
        missing[at(1)] = true;
        values[at(2)] = 70.0;
        let p = TimeSeriesPanel::new(start, vec!["a".into()], vec!["speed".into()], values, missing).unwrap();
        assert_eq!(p.timestamp(at(1)), start + Duration::days(7) + Duration::hours(8));
        let out = impute_with(
            &p,
            &ImputeOptions {
                method,
                day_class,
                reference: None,
            },
        )
        .unwrap();
        out.get(at(1), 0, 0)
    }

    #[test]
    fn monday_slot_mean_by_day_of_week() {
        assert_eq!(three_mondays(DayClass::DayOfWeek, ImputeMethod::TemporalMean), 65.0);
        assert_eq!(three_mondays(DayClass::DayOfWeek, ImputeMethod::TemporalMedian), 65.0);
    }

    #[test]
    fn weekday_pool_includes_other_weekdays() {
        // 08:00 weekday observations: 60, 70 and twelve 50s
        let expect = (60.0 + 70.0 + 12.0 * 50.0) / 14.0;
        assert!((three_mondays(DayClass::WeekdayWeekend, ImputeMethod::TemporalMean) - expect).abs() < 1e-12);
        assert_eq!(three_mondays(DayClass::WeekdayWeekend, ImputeMethod::TemporalMedian), 50.0);
    }

    #[test]
    fn empty_slot_falls_back_to_node_then_global_mean() {
        let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        // node a: [missing, 4, 6]; node b: all missing
        let values = vec![f64::NAN, f64::NAN, 4.0, f64::NAN, 6.0, f64::NAN];
        let missing = vec![true, true, false, true, false, true];
        let p = TimeSeriesPanel::new(start, vec!["a".into(), "b".into()], vec!["speed".into()], values, missing).unwrap();
        let out = impute(&p, ImputeMethod::TemporalMean).unwrap();
        assert_eq!(out.get(0, 0, 0), 5.0);
        assert_eq!(out.get(1, 1, 0), 5.0);
        assert_eq!(out.missing_count(), 0);
    }

    #[test]
    fn entirely_missing_feature_is_an_error() {
        let p = panel(vec![f64::NAN; 2], vec![true; 2], 0);
        assert!(matches!(
            impute(&p, ImputeMethod::TemporalMean),
            Err(DataError::FeatureEntirelyMissing(_))
        ));
    }

    #[test]
    fn reference_range_limits_statistics() {
        // the same tick of day two days apart; only the first day is reference
        let nt = 2 * TICKS_PER_DAY;
        let mut values = vec![1.0; nt];
        let mut missing = vec![false; nt];
        values[TICKS_PER_DAY] = f64::NAN;
        missing[TICKS_PER_DAY] = true;
        values[0] = 10.0;
        let p = panel(values, missing, 0);
        let out = impute_with(
            &p,
            &ImputeOptions {
                reference: Some(0..TICKS_PER_DAY),
                ..ImputeOptions::default()
            },
        )
        .unwrap();
        assert_eq!(out.get(TICKS_PER_DAY, 0, 0), 10.0);
    }
}
