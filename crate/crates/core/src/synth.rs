//! Seeded synthetic trip stores with planted ground truth.
//!
//! Demand lives on a fixed set of planted O-D tile pairs. Each pair has a
//! Pareto-distributed popularity; its hourly trip count is Poisson with rate
//! `base_rate * popularity * profile[hour] * day_factor * modulation(hour)`,
//! and departures are uniform within the hour.
//!
//! RNG streams: stream 0 plants the edges, stream 1 drives the hourly
//! modulation, and edge `k` draws from stream `k + 2`, so the output does not
//! depend on how edges are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto, Poisson, StandardNormal, WeightedIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{meters_per_degree_lat, meters_per_degree_lon, BoundingBox, TileGrid, TileId};
use crate::ingest::{Point, TripRecord};
use crate::metrics::FeatureVector;
use crate::sharing::PassengerDistribution;
use crate::{Error, Result, Timestamp};

/// 2013-01-01T00:00:00Z.
pub const JANUARY_2013: Timestamp = 1_356_998_400;

const SECONDS_PER_HOUR: i64 = 3600;

/// Hourly multipliers with a morning and an evening peak; mean 1.
pub const DEFAULT_PROFILE: [f64; 24] = [
    0.55, 0.40, 0.30, 0.22, 0.20, 0.28, 0.60, 1.05, 1.35, 1.30, 1.15, 1.10, //
    1.15, 1.15, 1.20, 1.25, 1.25, 1.40, 1.55, 1.50, 1.35, 1.20, 1.00, 0.80,
];

/// Log-normal AR(1) multiplier applied to every edge's rate, hour by hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    /// Lag-one autocorrelation of the log multiplier.
    pub phi: f64,
    /// Stationary standard deviation of the log multiplier.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_days: u32,
    pub start: Timestamp,
    /// South-west corner of the synthetic city.
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub cols: u32,
    pub rows: u32,
    pub tile_edge_m: f64,
    /// Number of planted O-D tile pairs.
    pub n_edges: usize,
    /// Density exponent of the planted popularity law, `p(x) ~ x^-exponent`.
    pub popularity_exponent: f64,
    /// Expected trips per hour on a popularity-1 edge at multiplier 1.
    pub base_rate: f64,
    pub profile: Vec<f64>,
    /// Rate multiplier on Saturdays and Sundays.
    pub weekend_factor: f64,
    pub passengers: PassengerDistribution,
    pub speed_mps: f64,
    pub modulation: Option<Modulation>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 1,
            n_days: 31,
            start: JANUARY_2013,
            origin_lon: -74.015,
            origin_lat: 40.705,
            cols: 8,
            rows: 16,
            tile_edge_m: 1000.0,
            n_edges: 400,
            popularity_exponent: 2.5,
            base_rate: 0.15,
            profile: DEFAULT_PROFILE.to_vec(),
            weekend_factor: 0.8,
            passengers: PassengerDistribution::NYC_2013,
            speed_mps: 6.0,
            modulation: Some(Modulation { phi: 0.9, sigma: 0.3 }),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.n_days == 0 {
            return bad("n_days must be at least 1".into());
        }
        if self.cols == 0 || self.rows == 0 {
            return bad(format!("grid dims {}x{} must be positive", self.cols, self.rows));
        }
        let pairs = u64::from(self.cols) * u64::from(self.rows);
        if self.n_edges as u64 > pairs * pairs {
            return bad(format!("{} planted edges exceed the {} tile pairs", self.n_edges, pairs * pairs));
        }
        if !(self.popularity_exponent > 1.0) {
            return bad(format!("popularity exponent {} must exceed 1", self.popularity_exponent));
        }
        if !(self.base_rate >= 0.0) || !self.base_rate.is_finite() {
            return bad(format!("base rate {} must be finite and non-negative", self.base_rate));
        }
        if self.profile.len() != 24 || self.profile.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return bad("profile needs 24 finite non-negative multipliers".into());
        }
        if !(self.weekend_factor >= 0.0) || !self.weekend_factor.is_finite() {
            return bad(format!("weekend factor {} must be non-negative", self.weekend_factor));
        }
        if !(self.speed_mps > 0.0) {
            return bad(format!("speed {} m/s must be positive", self.speed_mps));
        }
        if let Some(m) = self.modulation {
            if !(m.phi.abs() < 1.0) || !(m.sigma >= 0.0) {
                return bad(format!("modulation phi {} / sigma {} out of range", m.phi, m.sigma));
            }
        }
        self.passengers.validate().map_err(|e| Error::config(e.to_string()))?;
        self.grid().map(|_| ())
    }

    pub fn bbox(&self) -> Result<BoundingBox> {
        BoundingBox::from_extent(
            self.origin_lon,
            self.origin_lat,
            f64::from(self.cols) * self.tile_edge_m,
            f64::from(self.rows) * self.tile_edge_m,
        )
    }

    /// The grid the edges are planted on.
    pub fn grid(&self) -> Result<TileGrid> {
        TileGrid::new(self.bbox()?, self.tile_edge_m)
    }

    pub fn end(&self) -> Timestamp {
        self.start + i64::from(self.n_days) * 86_400
    }

    pub fn n_hours(&self) -> usize {
        self.n_days as usize * 24
    }

    /// Profile and weekday multiplier for hour index `h` since `start`
    /// (modulation excluded).
    pub fn calendar_factor(&self, h: usize) -> f64 {
        let t = self.start + h as i64 * SECONDS_PER_HOUR;
        let hour = t.rem_euclid(86_400) / SECONDS_PER_HOUR;
        // 1970-01-01 was a Thursday; 0 = Monday
        let weekday = (t.div_euclid(86_400) + 3).rem_euclid(7);
        let day = if weekday >= 5 { self.weekend_factor } else { 1.0 };
        self.profile[hour as usize] * day
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEdge {
    pub origin: TileId,
    pub destination: TileId,
    pub popularity: f64,
    pub expected_trips: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    pub edges: Vec<PlantedEdge>,
    pub profile: Vec<f64>,
    pub passengers: PassengerDistribution,
    /// Modulation multiplier per hour since `start` (all 1 without modulation).
    pub hourly_modulation: Vec<f64>,
    pub expected_trips: f64,
    pub generated_trips: u64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn plant_edges(spec: &SynthSpec) -> Vec<(TileId, TileId, f64)> {
    let mut rng = stream(spec.seed, 0);
    let pareto = Pareto::new(1.0, spec.popularity_exponent - 1.0).expect("validated exponent");
    let n_tiles = u64::from(spec.cols) * u64::from(spec.rows);
    let tile = |i: u64| TileId::new((i % u64::from(spec.cols)) as u32, (i / u64::from(spec.cols)) as u32);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(spec.n_edges);
    while out.len() < spec.n_edges {
        let o = rng.gen_range(0..n_tiles);
        let d = rng.gen_range(0..n_tiles);
        if seen.insert((o, d)) {
            out.push((tile(o), tile(d), pareto.sample(&mut rng)));
        }
    }
    out
}

fn modulation(spec: &SynthSpec) -> Vec<f64> {
    let n = spec.n_hours();
    let Some(m) = spec.modulation else {
        return vec![1.0; n];
    };
    let mut rng = stream(spec.seed, 1);
    let innovation = m.sigma * (1.0 - m.phi * m.phi).sqrt();
    let mut z: f64 = m.sigma * rng.sample::<f64, _>(StandardNormal);
    (0..n)
        .map(|_| {
            let v = (z - m.sigma * m.sigma / 2.0).exp();
            z = m.phi * z + innovation * rng.sample::<f64, _>(StandardNormal);
            v
        })
        .collect()
}

fn point_in(grid: &TileGrid, tile: TileId, rng: &mut ChaCha8Rng) -> Point {
    let (lon0, lat0, lon1, lat1) = grid.tile_bounds(tile);
    // stay off the tile boundary so the point lands in `tile` on this grid
    Point {
        lon: lon0 + (lon1 - lon0) * rng.gen_range(0.001..0.999),
        lat: lat0 + (lat1 - lat0) * rng.gen_range(0.001..0.999),
    }
}

fn distance_m(a: Point, b: Point) -> f64 {
    let mid = (a.lat + b.lat) / 2.0;
    let dx = (b.lon - a.lon) * meters_per_degree_lon(mid);
    let dy = (b.lat - a.lat) * meters_per_degree_lat();
    dx.hypot(dy)
}

/// Generates trips sorted by start time, plus the planted quantities.
pub fn generate(spec: &SynthSpec) -> Result<(Vec<TripRecord>, GroundTruth)> {
    spec.validate()?;
    let grid = spec.grid()?;
    let planted = plant_edges(spec);
    let hourly = modulation(spec);
    let hour_rates: Vec<f64> = (0..spec.n_hours())
        .map(|h| spec.base_rate * spec.calendar_factor(h) * hourly[h])
        .collect();
    let passenger_dist = WeightedIndex::new(spec.passengers.as_array()).map_err(|e| Error::config(e.to_string()))?;

    let per_edge: Vec<Vec<TripRecord>> = planted
        .par_iter()
        .enumerate()
        .map(|(k, &(o, d, popularity))| {
            let mut rng = stream(spec.seed, k as u64 + 2);
            let mut trips = Vec::new();
            for (h, &rate) in hour_rates.iter().enumerate() {
                let lambda = rate * popularity;
                if lambda <= 0.0 {
                    continue;
                }
                let n = Poisson::new(lambda).expect("positive rate").sample(&mut rng) as u64;
                let hour_start = spec.start + h as i64 * SECONDS_PER_HOUR;
                for _ in 0..n {
                    let t_start = hour_start + rng.gen_range(0..SECONDS_PER_HOUR);
                    let op = point_in(&grid, o, &mut rng);
                    let dp = point_in(&grid, d, &mut rng);
                    let duration = (distance_m(op, dp) / spec.speed_mps).round().max(60.0) as i64;
                    trips.push(TripRecord {
                        o: op,
                        d: dp,
                        t_start,
                        t_end: t_start + duration,
                        passengers: passenger_dist.sample(&mut rng) as u8 + 1,
                    });
                }
            }
            trips
        })
        .collect();

    let mut trips: Vec<TripRecord> = per_edge.into_iter().flatten().collect();
    trips.sort_by_key(|t| t.t_start);

    let rate_sum: f64 = hour_rates.iter().sum();
    let edges: Vec<PlantedEdge> = planted
        .iter()
        .map(|&(origin, destination, popularity)| PlantedEdge {
            origin,
            destination,
            popularity,
            expected_trips: rate_sum * popularity,
        })
        .collect();
    let truth = GroundTruth {
        spec: spec.clone(),
        expected_trips: edges.iter().map(|e| e.expected_trips).sum(),
        edges,
        profile: spec.profile.clone(),
        passengers: spec.passengers,
        hourly_modulation: hourly,
        generated_trips: trips.len() as u64,
    };
    Ok((trips, truth))
}

/// Feature and utilization series driven by one latent AR(1) factor.
///
/// Every feature is a distinct affine map of the latent value plus
/// independent noise; utilization is `0.5 + 0.05 * z` plus noise. The
/// correlation between features at `t` and utilization at `t + h` therefore
/// decays like `phi^h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentSeriesSpec {
    pub seed: u64,
    pub n_hours: usize,
    pub phi: f64,
    pub feature_noise: f64,
    pub target_noise: f64,
}

pub fn latent_series(spec: &LatentSeriesSpec) -> Result<(Vec<(Timestamp, FeatureVector)>, Vec<(Timestamp, f64)>)> {
    if !(spec.phi.abs() < 1.0) || !(spec.feature_noise >= 0.0) || !(spec.target_noise >= 0.0) {
        return Err(Error::config("latent series parameters out of range"));
    }
    let mut rng = stream(spec.seed, 0);
    let mut normal = move || rng.sample::<f64, _>(StandardNormal);
    let innovation = (1.0 - spec.phi * spec.phi).sqrt();
    let mut z = normal();
    let mut features = Vec::with_capacity(spec.n_hours);
    let mut util = Vec::with_capacity(spec.n_hours);
    for h in 0..spec.n_hours {
        let t = JANUARY_2013 + h as i64 * SECONDS_PER_HOUR;
        let mut f = |scale: f64, offset: f64| offset + scale * z + spec.feature_noise * scale.abs() * normal();
        let fv = FeatureVector {
            n_nodes: f(10.0, 80.0),
            n_edges: f(40.0, 300.0),
            density: f(0.004, 0.05),
            avg_betweenness: f(-0.002, 0.02),
            avg_closeness: f(0.01, 0.4),
            avg_eigenvector_centrality: f(-0.003, 0.08),
            largest_eigenvalue: f(1.5, 12.0),
        };
        features.push((t, fv));
        util.push((t, 0.5 + 0.05 * z + spec.target_noise * normal()));
        z = spec.phi * z + innovation * normal();
    }
    Ok((features, util))
}
