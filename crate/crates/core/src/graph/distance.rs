use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::Deserialize;

use super::{GraphError, SensorMeta};

const EARTH_RADIUS_MILES: f64 = 3958.7613;
const METERS_PER_MILE: f64 = 1609.344;

/// Source of (possibly asymmetric) driving distances between nodes, in miles.
///
/// Implementations must be usable from several threads at once.
pub trait DistanceProvider: Sync {
    fn distance(&self, from: usize, to: usize) -> Result<f64, GraphError>;
}

impl<T: DistanceProvider + ?Sized> DistanceProvider for &T {
    fn distance(&self, from: usize, to: usize) -> Result<f64, GraphError> {
        (**self).distance(from, to)
    }
}

/// Great-circle distance in miles.
pub fn haversine_miles(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_MILES * a.sqrt().min(1.0).asin()
}

/// Symmetric great-circle distances between sensor coordinates.
#[derive(Debug, Clone)]
pub struct HaversineProvider {
    coords: Vec<(f64, f64)>,
}

impl HaversineProvider {
    pub fn new(meta: &[SensorMeta]) -> Self {
        Self {
            coords: meta.iter().map(|m| (m.latitude, m.longitude)).collect(),
        }
    }
}

impl DistanceProvider for HaversineProvider {
    fn distance(&self, from: usize, to: usize) -> Result<f64, GraphError> {
        let (a, b) = (self.coords.get(from), self.coords.get(to));
        match (a, b) {
            (Some(&(la, oa)), Some(&(lb, ob))) => Ok(haversine_miles(la, oa, lb, ob)),
            _ => Err(GraphError::Provider(format!("node index out of range: {from}->{to}"))),
        }
    }
}

/// Precomputed distances, e.g. from a `from_id,to_id,miles` file.
///
/// Unknown pairs are an error, except `i → i` which is 0.
#[derive(Debug, Clone, Default)]
pub struct TableProvider {
    table: HashMap<(usize, usize), f64>,
}

#[derive(Debug, Deserialize)]
struct DistanceRow {
    from_id: String,
    to_id: String,
    miles: f64,
}

impl TableProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, from: usize, to: usize, miles: f64) {
        self.table.insert((from, to), miles);
    }

    /// Dense matrix provider, row = from, column = to.
    pub fn from_matrix(rows: &[Vec<f64>]) -> Self {
        let mut p = Self::new();
        for (i, row) in rows.iter().enumerate() {
            for (j, &d) in row.iter().enumerate() {
                p.insert(i, j, d);
            }
        }
        p
    }

    /// Reads a distance CSV, resolving sensor ids against `meta` order.
    pub fn from_csv(path: &Path, meta: &[SensorMeta]) -> Result<Self, GraphError> {
        let index: HashMap<&str, usize> = meta
            .iter()
            .enumerate()
            .map(|(i, m)| (m.sensor_id.as_str(), i))
            .collect();
        let mut reader = csv::Reader::from_path(path).map_err(|e| GraphError::Io(e.to_string()))?;
        let mut p = Self::new();
        for (row_no, row) in reader.deserialize::<DistanceRow>().enumerate() {
            // header is line 1
            let line = row_no + 2;
            let row = row.map_err(|e| GraphError::Schema {
                row: line,
                message: e.to_string(),
            })?;
            let lookup = |id: &str| {
                index.get(id).copied().ok_or_else(|| GraphError::Schema {
                    row: line,
                    message: format!("unknown sensor id {id:?}"),
                })
            };
            let (from, to) = (lookup(&row.from_id)?, lookup(&row.to_id)?);
            if !row.miles.is_finite() || row.miles < 0.0 {
                return Err(GraphError::Schema {
                    row: line,
                    message: format!("invalid distance {}", row.miles),
                });
            }
            p.insert(from, to, row.miles);
        }
        Ok(p)
    }
}

impl DistanceProvider for TableProvider {
    fn distance(&self, from: usize, to: usize) -> Result<f64, GraphError> {
        if from == to {
            return Ok(0.0);
        }
        self.table
            .get(&(from, to))
            .copied()
            .ok_or_else(|| GraphError::Provider(format!("no distance recorded for {from}->{to}")))
    }
}

/// Client for an OSRM-compatible routing service.
///
/// Issues `GET {base}/route/v1/driving/{lon1},{lat1};{lon2},{lat2}?overview=false`
/// and reads `routes[0].distance` (meters). Failures surface as errors,
/// never as a zero distance.
#[derive(Debug)]
pub struct RoutingProvider {
    base_url: String,
    coords: Vec<(f64, f64)>,
    agent: ureq::Agent,
}

#[derive(Debug, Deserialize)]
struct RouteResponse {
    code: Option<String>,
    routes: Vec<Route>,
}

#[derive(Debug, Deserialize)]
struct Route {
    distance: f64,
}

impl RoutingProvider {
    pub fn new(base_url: &str, meta: &[SensorMeta], timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            coords: meta.iter().map(|m| (m.latitude, m.longitude)).collect(),
            agent: config.into(),
        }
    }

    fn url(&self, from: usize, to: usize) -> Result<String, GraphError> {
        let (Some(&(la, oa)), Some(&(lb, ob))) = (self.coords.get(from), self.coords.get(to)) else {
            return Err(GraphError::Provider(format!("node index out of range: {from}->{to}")));
        };
        Ok(format!(
            "{}/route/v1/driving/{oa},{la};{ob},{lb}?overview=false",
            self.base_url
        ))
    }
}

impl DistanceProvider for RoutingProvider {
    fn distance(&self, from: usize, to: usize) -> Result<f64, GraphError> {
        if from == to {
            return Ok(0.0);
        }
        let url = self.url(from, to)?;
        let mut resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| GraphError::Provider(format!("routing request failed: {e}")))?;
        let body: RouteResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| GraphError::Provider(format!("bad routing response: {e}")))?;
        if let Some(code) = &body.code {
            if code != "Ok" {
                return Err(GraphError::Provider(format!("routing service returned code {code}")));
            }
        }
        let route = body
            .routes
            .first()
            .ok_or_else(|| GraphError::Provider("routing response has no routes".into()))?;
        if !route.distance.is_finite() || route.distance < 0.0 {
            return Err(GraphError::Provider(format!("invalid routed distance {}", route.distance)));
        }
        Ok(route.distance / METERS_PER_MILE)
    }
}
