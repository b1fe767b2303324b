//! Routing-agnostic ride-sharing utilization.
//!
//! Two rides can be merged when they leave the same merge tile for the same
//! merge tile and their start times differ by at most the delay tolerance.
//! The merge grid is usually finer than the analysis grid: its tile edge is
//! the distance tolerance. Buckets are the edges of a [`RidesNetwork`] built
//! on the merge grid, so every snapshot of that network carries everything
//! needed to evaluate it.

use serde::{Deserialize, Serialize};

use crate::dynnet::{RidesNetwork, SnapshotWindow};
use crate::grid::TileGrid;
use crate::ingest::TripRecord;
use crate::{Error, Result, Timestamp};

/// Size of a maximum pairing of `departures` (sorted ascending) in which
/// paired start times differ by at most `max_delay` seconds.
///
/// Pairing each ride with its immediate unmatched successor whenever they
/// are compatible is optimal: compatibility is a threshold on distance along
/// a line, so an exchange argument moves any optimal pairing onto the
/// greedy one.
pub fn match_edge(departures: &[Timestamp], max_delay: i64) -> usize {
    debug_assert!(departures.windows(2).all(|w| w[0] <= w[1]), "departures must be sorted");
    let mut pairs = 0;
    let mut i = 0;
    while i + 1 < departures.len() {
        if departures[i + 1] - departures[i] <= max_delay {
            pairs += 1;
            i += 2;
        } else {
            i += 1;
        }
    }
    pairs
}

/// Fractions of trips carrying one to four passengers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassengerDistribution {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
}

impl PassengerDistribution {
    /// Shares observed over the January 2013 NYC taxi rides.
    pub const NYC_2013: PassengerDistribution = PassengerDistribution {
        p1: 0.4922,
        p2: 0.2422,
        p3: 0.1572,
        p4: 0.1084,
    };

    pub fn new(p1: f64, p2: f64, p3: f64, p4: f64) -> Result<Self> {
        let d = PassengerDistribution { p1, p2, p3, p4 };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.p1, self.p2, self.p3, self.p4];
        if ps.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::data(format!("negative passenger share in {self:?}")));
        }
        let sum: f64 = ps.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::data(format!("passenger shares sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p1, self.p2, self.p3, self.p4]
    }
}

/// Multipliers that convert naive pairwise utilization into capacity-aware
/// lower and upper estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergingFactors {
    pub lower: f64,
    pub upper: f64,
}

impl MergingFactors {
    pub const IDENTITY: MergingFactors = MergingFactors { lower: 1.0, upper: 1.0 };

    /// The two-phase greedy figure can exceed the optimal one on fleets
    /// dominated by single-passenger rides.
    pub fn inverted(&self) -> bool {
        self.lower > self.upper
    }
}

/// Capacity correction factors for a four-seat vehicle.
///
/// Lower (two-phase greedy, passenger counts paired independently):
/// phase one merges every pair except those containing a 4-passenger ride,
/// a {2, 3} pair or a {3, 3} pair; phase two merges pairs of the p1²
/// single-single merges once more, counted twice over the original pairs.
/// `lower = 1 - blocked + 2 (p1²)²`.
///
/// Upper (optimal packing): 2-passenger rides pair among themselves, each
/// 3-passenger ride takes one single rider while singles last, and the
/// remaining singles ride four to a vehicle (1.5 saved per ride).
/// `upper = p2 + 2 min(p3, p1) + 1.5 (p1 - min(p3, p1))`.
pub fn merging_factors(dist: &PassengerDistribution) -> Result<MergingFactors> {
    dist.validate()?;
    let PassengerDistribution { p1, p2, p3, p4 } = *dist;
    let with_four = 1.0 - (1.0 - p4) * (1.0 - p4);
    let blocked = with_four + 2.0 * p2 * p3 + p3 * p3;
    let single_pairs = p1 * p1;
    let lower = 1.0 - blocked + 2.0 * single_pairs * single_pairs;

    let threes_with_single = p3.min(p1);
    let upper = p2 + 2.0 * threes_with_single + 1.5 * (p1 - threes_with_single);
    Ok(MergingFactors { lower, upper })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassengerStats {
    pub distribution: PassengerDistribution,
    /// Mean over all trips, large vehicles included.
    pub mean_passengers: f64,
    pub trips: u64,
    /// Trips with more than four passengers, left out of `distribution`.
    pub large_vehicle_trips: u64,
}

pub fn passenger_distribution(trips: &[TripRecord]) -> Result<PassengerStats> {
    let mut counts = [0u64; 4];
    let mut large = 0u64;
    let mut sum = 0u64;
    for t in trips {
        sum += u64::from(t.passengers);
        match t.passengers {
            1..=4 => counts[usize::from(t.passengers) - 1] += 1,
            _ => large += 1,
        }
    }
    let small: u64 = counts.iter().sum();
    if small == 0 {
        return Err(Error::data("no trips with 1-4 passengers"));
    }
    let f = |c: u64| c as f64 / small as f64;
    Ok(PassengerStats {
        distribution: PassengerDistribution {
            p1: f(counts[0]),
            p2: f(counts[1]),
            p3: f(counts[2]),
            p4: f(counts[3]),
        },
        mean_passengers: sum as f64 / trips.len() as f64,
        trips: trips.len() as u64,
        large_vehicle_trips: large,
    })
}

#[derive(Debug, Clone)]
pub struct SharingConfig {
    /// Seconds; two rides are compatible when their starts differ by at most this.
    pub max_delay: i64,
    /// Tile edge equals the distance tolerance.
    pub merge_grid: TileGrid,
    pub factors: MergingFactors,
}

impl SharingConfig {
    pub fn new(max_delay: i64, merge_grid: TileGrid, factors: MergingFactors) -> Result<Self> {
        if max_delay < 0 {
            return Err(Error::config(format!("negative delay tolerance {max_delay} s")));
        }
        Ok(SharingConfig {
            max_delay,
            merge_grid,
            factors,
        })
    }

    pub fn distance_tolerance_m(&self) -> f64 {
        self.merge_grid.edge_length_m()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilizationResult {
    pub total_trips: u64,
    pub matched_trips: u64,
    /// Share of rides that take part in a merge.
    pub alpha: f64,
    /// Share of vehicle trips removed, `alpha / 2`.
    pub saved_fraction: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub zero_trips: bool,
    pub bounds_inverted: bool,
}

impl UtilizationResult {
    fn from_counts(total: u64, pairs: u64, factors: MergingFactors) -> Self {
        let matched = 2 * pairs;
        let alpha = if total == 0 { 0.0 } else { matched as f64 / total as f64 };
        UtilizationResult {
            total_trips: total,
            matched_trips: matched,
            alpha,
            saved_fraction: alpha / 2.0,
            lower_bound: factors.lower * alpha,
            upper_bound: factors.upper * alpha,
            zero_trips: total == 0,
            bounds_inverted: factors.inverted(),
        }
    }
}

/// Utilization of a snapshot built on the merge grid: each edge is one bucket.
pub fn network_utilization(net: &RidesNetwork, max_delay: i64, factors: MergingFactors) -> UtilizationResult {
    let mut times = Vec::new();
    let pairs: usize = net
        .edges()
        .values()
        .map(|e| {
            times.clear();
            times.extend(e.start_times());
            match_edge(&times, max_delay)
        })
        .sum();
    UtilizationResult::from_counts(net.total_trips(), pairs as u64, factors)
}

/// Utilization of an arbitrary set of trips (all of them belong to the window).
pub fn utilization(trips: &[TripRecord], config: &SharingConfig) -> Result<UtilizationResult> {
    let net = crate::dynnet::build_network(trips, &config.merge_grid, SnapshotWindow::unbounded())?;
    Ok(network_utilization(&net, config.max_delay, config.factors))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub window: SnapshotWindow,
    pub result: UtilizationResult,
    /// `100 * (alpha - mean alpha) / mean alpha`; 0 when the mean is 0.
    pub pct_change_vs_mean: f64,
}

/// One result per merge-grid snapshot, in window order.
pub fn utilization_series(
    snapshots: &[RidesNetwork],
    max_delay: i64,
    factors: MergingFactors,
) -> Result<Vec<SeriesPoint>> {
    if snapshots.is_empty() {
        return Err(Error::data("utilization series needs at least one snapshot"));
    }
    let results: Vec<UtilizationResult> = snapshots
        .iter()
        .map(|s| network_utilization(s, max_delay, factors))
        .collect();
    let alphas: Vec<f64> = results.iter().map(|r| r.alpha).collect();
    let pct = percent_change_vs_mean(&alphas);
    Ok(snapshots
        .iter()
        .zip(results)
        .zip(pct)
        .map(|((s, result), pct_change_vs_mean)| SeriesPoint {
            window: s.window(),
            result,
            pct_change_vs_mean,
        })
        .collect())
}

pub fn percent_change_vs_mean(values: &[f64]) -> Vec<f64> {
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    values
        .iter()
        .map(|v| if mean == 0.0 { 0.0 } else { 100.0 * (v - mean) / mean })
        .collect()
}
