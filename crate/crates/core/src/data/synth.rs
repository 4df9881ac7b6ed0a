use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{TimeSeriesPanel, TICKS_PER_DAY, TICK_MINUTES};
use crate::graph::SensorMeta;

/// Triangular speed-density relation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalDiagram {
    pub free_flow_mph: f64,
    /// Backward wave speed of the congested branch.
    pub wave_speed_mph: f64,
    /// Vehicles per mile across all lanes.
    pub jam_density: f64,
}

impl Default for FundamentalDiagram {
    fn default() -> Self {
        Self {
            free_flow_mph: 65.0,
            wave_speed_mph: 12.0,
            jam_density: 540.0,
        }
    }
}

impl FundamentalDiagram {
    /// Vehicles per 5 minutes at the critical density.
    pub fn capacity(&self) -> f64 {
        self.congested_flow(self.free_flow_mph)
    }

    pub fn critical_density(&self) -> f64 {
        self.wave_speed_mph * self.jam_density / (self.free_flow_mph + self.wave_speed_mph)
    }

    /// Density on the congested branch at speed `v`: `k = w·k_j / (v + w)`.
    pub fn congested_density(&self, speed: f64) -> f64 {
        self.wave_speed_mph * self.jam_density / (speed.max(0.0) + self.wave_speed_mph)
    }

    /// Flow per 5 minutes on the congested branch at speed `v`.
    pub fn congested_flow(&self, speed: f64) -> f64 {
        speed.max(0.0) * self.congested_density(speed) * TICK_MINUTES as f64 / 60.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionWindow {
    pub start_minute: u32,
    pub duration_minutes: u32,
    /// Fraction of the gap between free-flow and minimum speed lost at the
    /// peak of the window.
    pub severity: f64,
    pub weekdays_only: bool,
    /// Affected clusters; empty means all.
    #[serde(default)]
    pub clusters: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScenario {
    pub n_nodes: usize,
    pub clusters: usize,
    pub days: usize,
    pub start: NaiveDateTime,
    pub congestion: Vec<CongestionWindow>,
    /// Standard deviation of additive speed noise, mph.
    pub noise: f64,
    pub missing_rate: f64,
    pub seed: u64,
    pub diagram: FundamentalDiagram,
    pub min_speed_mph: f64,
    pub node_spacing_miles: f64,
    pub cluster_spacing_miles: f64,
    /// Delay of congestion onset from the downstream to the upstream end of
    /// a corridor.
    pub max_lag_minutes: f64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            n_nodes: 24,
            clusters: 2,
            days: 14,
            start: NaiveDate::from_ymd_opt(2018, 1, 1)
                .expect("valid date")
                .and_hms_opt(0, 0, 0)
                .expect("valid time"),
            congestion: vec![
                CongestionWindow {
                    start_minute: 7 * 60,
                    duration_minutes: 150,
                    severity: 0.7,
                    weekdays_only: true,
                    clusters: vec![0],
                },
                CongestionWindow {
                    start_minute: 16 * 60 + 30,
                    duration_minutes: 150,
                    severity: 0.8,
                    weekdays_only: true,
                    clusters: Vec::new(),
                },
            ],
            noise: 1.0,
            missing_rate: 0.0,
            seed: 7,
            diagram: FundamentalDiagram::default(),
            min_speed_mph: 10.0,
            node_spacing_miles: 0.6,
            cluster_spacing_miles: 30.0,
            max_lag_minutes: 25.0,
        }
    }
}

/// Generator output with the ground truth used to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub meta: Vec<SensorMeta>,
    pub panel: TimeSeriesPanel,
    pub cluster_of: Vec<usize>,
    /// `[time][node]`: inside a congestion window (shape ≥ 0.5).
    pub congested: Vec<bool>,
}

const RAMP_MINUTES: f64 = 20.0;

fn window_shape(minute_of_day: f64, start: f64, duration: f64) -> f64 {
    let end = start + duration;
    if minute_of_day <= start || minute_of_day >= end {
        return 0.0;
    }
    let rise = ((minute_of_day - start) / RAMP_MINUTES).min(1.0);
    let fall = ((end - minute_of_day) / RAMP_MINUTES).min(1.0);
    let x = rise.min(fall);
    x * x * (3.0 - 2.0 * x)
}

fn bump(hour: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((hour - center) / width).powi(2)).exp()
}

fn demand_fraction(hour: f64, weekend: bool) -> f64 {
    if weekend {
        0.12 + 0.45 * bump(hour, 13.5, 3.0)
    } else {
        0.12 + 0.6 * bump(hour, 8.0, 1.5) + 0.3 * bump(hour, 12.5, 2.0) + 0.62 * bump(hour, 17.5, 1.8)
    }
}

/// Two-feature (`speed`, `flow`) panel over clustered corridors.
///
/// Nodes `0..n` are split into contiguous clusters placed
/// `cluster_spacing_miles` apart; each cluster is a corridor with nodes
/// `node_spacing_miles` apart, downstream end last.
pub fn generate_synthetic(scenario: &SyntheticScenario) -> SyntheticData {
    let s = scenario;
    let fd = s.diagram;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let clusters = s.clusters.max(1);
    let n = s.n_nodes;
    let cluster_of: Vec<usize> = (0..n).map(|i| i * clusters / n.max(1)).collect();
    let members = |c: usize| (0..n).filter(|&i| cluster_of[i] == c).collect::<Vec<_>>();

    let mut meta = Vec::with_capacity(n);
    let mut lag = vec![0.0; n];
    let mut node_severity = vec![1.0; n];
    let miles_per_deg_lat = 69.0;
    for c in 0..clusters {
        let m = members(c);
        let base_lat = 34.0 + c as f64 * s.cluster_spacing_miles / miles_per_deg_lat;
        let base_lon = -118.3;
        let lon_scale = miles_per_deg_lat * base_lat.to_radians().cos();
        for (pos, &i) in m.iter().enumerate() {
            let jitter: f64 = rng.gen_range(-0.05..0.05);
            let lat = base_lat + jitter / miles_per_deg_lat;
            let lon = base_lon + pos as f64 * s.node_spacing_miles / lon_scale;
            let mut sm = SensorMeta::new(&format!("S{i:03}"), lat, lon);
            sm.district = format!("D{}", c + 1);
            sm.sensor_type = if rng.gen_bool(0.8) { "ML" } else { "OR" }.to_string();
            sm.lane_type = if rng.gen_bool(0.5) { "HOV" } else { "GP" }.to_string();
            meta.push(sm);
            let upstream = if m.len() > 1 { 1.0 - pos as f64 / (m.len() - 1) as f64 } else { 0.0 };
            lag[i] = upstream * s.max_lag_minutes;
            node_severity[i] = rng.gen_range(0.85..1.0);
        }
    }
    let day_factor: Vec<f64> = (0..s.days * clusters).map(|_| rng.gen_range(0.85..1.1)).collect();

    let nt = s.days * TICKS_PER_DAY;
    let speed_noise = Normal::new(0.0, s.noise.max(0.0)).expect("finite std");
    let flow_noise = Normal::new(0.0, s.noise.max(0.0) / fd.free_flow_mph).expect("finite std");
    let mut values = Vec::with_capacity(nt * n * 2);
    let mut missing = Vec::with_capacity(nt * n * 2);
    let mut congested = Vec::with_capacity(nt * n);
    for t in 0..nt {
        let ts = s.start + Duration::minutes(TICK_MINUTES * t as i64);
        let minute = (ts.hour() * 60 + ts.minute()) as f64;
        let weekend = matches!(ts.weekday(), Weekday::Sat | Weekday::Sun);
        let day = t / TICKS_PER_DAY;
        let demand = fd.capacity() * demand_fraction(minute / 60.0, weekend).min(0.95);
        for i in 0..n {
            let c = cluster_of[i];
            let mut shape: f64 = 0.0;
            for w in &s.congestion {
                if (w.weekdays_only && weekend) || !(w.clusters.is_empty() || w.clusters.contains(&c)) {
                    continue;
                }
                let sev = (w.severity * node_severity[i] * day_factor[day * clusters + c]).clamp(0.0, 1.0);
                shape = shape.max(sev * window_shape(minute, w.start_minute as f64 + lag[i], w.duration_minutes as f64));
            }
            let clean_speed = fd.free_flow_mph - shape * (fd.free_flow_mph - s.min_speed_mph);
            let clean_flow = if shape > 0.0 { fd.congested_flow(clean_speed) } else { demand };
            let speed = (clean_speed + speed_noise.sample(&mut rng)).clamp(2.0, fd.free_flow_mph + 3.0 * s.noise);
            let flow = (clean_flow * (1.0 + flow_noise.sample(&mut rng))).max(0.0);
            congested.push(shape >= 0.5);
            values.push(speed);
            values.push(flow);
        }
    }
    for v in values.iter_mut() {
        let m = s.missing_rate > 0.0 && rng.gen_bool(s.missing_rate.min(1.0));
        if m {
            *v = f64::NAN;
        }
        missing.push(m);
    }
    let panel = TimeSeriesPanel::new(
        s.start,
        meta.iter().map(|m| m.sensor_id.clone()).collect(),
        vec!["speed".into(), "flow".into()],
        values,
        missing,
    )
    .expect("generated panel is well formed");
    SyntheticData {
        meta,
        panel,
        cluster_of,
        congested,
    }
}
