//! Rides networks over time windows.
//!
//! A [`RidesNetwork`] aggregates every trip whose start time falls in the
//! half-open window `[t1, t2)` into a directed multigraph over tiles. Each
//! edge keeps the sorted list of its departures so ride-sharing can be
//! evaluated on the same snapshot. Self-loops (trips within one tile) are
//! kept.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{TileGrid, TileId};
use crate::ingest::TripRecord;
use crate::{Error, Result, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SnapshotWindow {
    pub t1: Timestamp,
    pub t2: Timestamp,
}

impl SnapshotWindow {
    pub fn new(t1: Timestamp, t2: Timestamp) -> Result<Self> {
        if t1 >= t2 {
            return Err(Error::config(format!("empty window [{t1}, {t2})")));
        }
        Ok(SnapshotWindow { t1, t2 })
    }

    /// A window covering every representable start time.
    pub fn unbounded() -> Self {
        SnapshotWindow {
            t1: Timestamp::MIN,
            t2: Timestamp::MAX,
        }
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        t >= self.t1 && t < self.t2
    }

    pub fn len_secs(&self) -> i64 {
        self.t2 - self.t1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Departure {
    pub t_start: Timestamp,
    pub passengers: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeData {
    /// Sorted ascending by start time, ties by passenger count.
    pub departures: Vec<Departure>,
}

impl EdgeData {
    pub fn weight(&self) -> u64 {
        self.departures.len() as u64
    }

    pub fn start_times(&self) -> impl Iterator<Item = Timestamp> + '_ {
        self.departures.iter().map(|d| d.t_start)
    }
}

pub type Edge = (TileId, TileId);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RidesNetwork {
    window: SnapshotWindow,
    nodes: BTreeSet<TileId>,
    edges: BTreeMap<Edge, EdgeData>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    In,
    Out,
    Total,
}

impl RidesNetwork {
    pub fn empty(window: SnapshotWindow) -> Self {
        RidesNetwork {
            window,
            nodes: BTreeSet::new(),
            edges: BTreeMap::new(),
        }
    }

    /// Builds a network directly from weighted edges, each departure at the
    /// window start with one passenger. Intended for graph-level analysis
    /// where departure times do not matter.
    pub fn from_edges(window: SnapshotWindow, edges: impl IntoIterator<Item = (Edge, u64)>) -> Self {
        let mut net = RidesNetwork::empty(window);
        for ((u, v), w) in edges {
            for _ in 0..w {
                net.insert(u, v, Departure { t_start: window.t1, passengers: 1 });
            }
        }
        net
    }

    fn insert(&mut self, u: TileId, v: TileId, dep: Departure) {
        self.nodes.insert(u);
        self.nodes.insert(v);
        self.edges.entry((u, v)).or_default().departures.push(dep);
    }

    fn finish(mut self) -> Self {
        for e in self.edges.values_mut() {
            e.departures.sort_unstable();
        }
        self
    }

    pub fn window(&self) -> SnapshotWindow {
        self.window
    }

    pub fn nodes(&self) -> &BTreeSet<TileId> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeMap<Edge, EdgeData> {
        &self.edges
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of trips, i.e. the sum of edge weights.
    pub fn total_trips(&self) -> u64 {
        self.edges.values().map(EdgeData::weight).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Distinct destination tiles reachable from each node (self included
    /// when a self-loop exists).
    pub fn out_degrees(&self) -> BTreeMap<TileId, usize> {
        let mut deg: BTreeMap<TileId, usize> = self.nodes.iter().map(|&n| (n, 0)).collect();
        for &(u, _) in self.edges.keys() {
            *deg.get_mut(&u).expect("edge endpoint is a node") += 1;
        }
        deg
    }

    pub fn in_degrees(&self) -> BTreeMap<TileId, usize> {
        let mut deg: BTreeMap<TileId, usize> = self.nodes.iter().map(|&n| (n, 0)).collect();
        for &(_, v) in self.edges.keys() {
            *deg.get_mut(&v).expect("edge endpoint is a node") += 1;
        }
        deg
    }

    /// Edge-wise sum of two networks over the same grid. The window of the
    /// result spans both inputs.
    pub fn merged(&self, other: &RidesNetwork) -> RidesNetwork {
        let mut net = RidesNetwork::empty(SnapshotWindow {
            t1: self.window.t1.min(other.window.t1),
            t2: self.window.t2.max(other.window.t2),
        });
        for src in [self, other] {
            for (&(u, v), data) in &src.edges {
                for &d in &data.departures {
                    net.insert(u, v, d);
                }
            }
        }
        net.finish()
    }
}

/// Aggregates the trips that start inside `window`. Tiles are resolved with
/// `grid`; a trip with an endpoint outside the grid is a data error.
pub fn build_network(
    trips: &[TripRecord],
    grid: &TileGrid,
    window: SnapshotWindow,
) -> Result<RidesNetwork> {
    let mut net = RidesNetwork::empty(window);
    for trip in trips.iter().filter(|t| window.contains(t.t_start)) {
        let u = grid.tile_of(trip.o.lon, trip.o.lat)?;
        let v = grid.tile_of(trip.d.lon, trip.d.lat)?;
        net.insert(
            u,
            v,
            Departure {
                t_start: trip.t_start,
                passengers: trip.passengers,
            },
        );
    }
    Ok(net.finish())
}

/// Trips with their tiles resolved once, sorted by start time, so that many
/// overlapping windows can be cut from them cheaply.
#[derive(Debug, Clone)]
pub struct TiledTrips {
    trips: Vec<(Timestamp, TileId, TileId, u8)>,
}

impl TiledTrips {
    pub fn new(trips: &[TripRecord], grid: &TileGrid) -> Result<Self> {
        let mut tiled = trips
            .iter()
            .map(|t| {
                Ok((
                    t.t_start,
                    grid.tile_of(t.o.lon, t.o.lat)?,
                    grid.tile_of(t.d.lon, t.d.lat)?,
                    t.passengers,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        tiled.sort_unstable();
        Ok(TiledTrips { trips: tiled })
    }

    pub fn len(&self) -> usize {
        self.trips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trips.is_empty()
    }

    pub fn network(&self, window: SnapshotWindow) -> RidesNetwork {
        let lo = self.trips.partition_point(|t| t.0 < window.t1);
        let hi = self.trips.partition_point(|t| t.0 < window.t2);
        let mut net = RidesNetwork::empty(window);
        for &(t_start, u, v, passengers) in &self.trips[lo..hi] {
            net.insert(u, v, Departure { t_start, passengers });
        }
        net.finish()
    }
}

/// Window sequence `[start + k*step, start + k*step + len)` for every `k`
/// whose window ends no later than `span_end`.
pub fn snapshot_windows(
    span_start: Timestamp,
    span_end: Timestamp,
    window_len: i64,
    step: i64,
) -> Result<Vec<SnapshotWindow>> {
    if window_len <= 0 || step <= 0 {
        return Err(Error::config(format!(
            "window length ({window_len} s) and step ({step} s) must be positive"
        )));
    }
    if span_end - span_start < window_len {
        return Err(Error::config(format!(
            "span [{span_start}, {span_end}) shorter than one window ({window_len} s)"
        )));
    }
    let count = (span_end - span_start - window_len) / step + 1;
    Ok((0..count)
        .map(|k| {
            let t1 = span_start + k * step;
            SnapshotWindow {
                t1,
                t2: t1 + window_len,
            }
        })
        .collect())
}

/// One network per window of [`snapshot_windows`], built in parallel.
pub fn sliding_snapshots(
    trips: &[TripRecord],
    grid: &TileGrid,
    span_start: Timestamp,
    span_end: Timestamp,
    window_len: i64,
    step: i64,
) -> Result<Vec<RidesNetwork>> {
    let windows = snapshot_windows(span_start, span_end, window_len, step)?;
    let tiled = TiledTrips::new(trips, grid)?;
    Ok(windows.into_par_iter().map(|w| tiled.network(w)).collect())
}

/// Histogram degree → node count. Degrees count distinct neighbor tiles;
/// `Total` is in-degree plus out-degree.
pub fn degree_distribution(net: &RidesNetwork, direction: Direction) -> BTreeMap<usize, usize> {
    let degrees: Vec<usize> = match direction {
        Direction::Out => net.out_degrees().into_values().collect(),
        Direction::In => net.in_degrees().into_values().collect(),
        Direction::Total => net
            .out_degrees()
            .into_values()
            .zip(net.in_degrees().into_values())
            .map(|(o, i)| o + i)
            .collect(),
    };
    let mut hist = BTreeMap::new();
    for d in degrees {
        *hist.entry(d).or_insert(0) += 1;
    }
    hist
}

/// Histogram edge weight → edge count.
pub fn edge_weight_distribution(net: &RidesNetwork) -> BTreeMap<u64, usize> {
    let mut hist = BTreeMap::new();
    for e in net.edges.values() {
        *hist.entry(e.weight()).or_insert(0) += 1;
    }
    hist
}

/// Writes the edge list: a `# window t1 t2` line followed by one
/// `origin_col origin_row dest_col dest_row weight` line per edge.
pub fn write_edge_list<W: Write>(mut out: W, net: &RidesNetwork) -> std::io::Result<()> {
    writeln!(out, "# window {} {}", net.window.t1, net.window.t2)?;
    for (&(u, v), e) in &net.edges {
        writeln!(out, "{} {} {} {} {}", u.col, u.row, v.col, v.row, e.weight())?;
    }
    Ok(())
}

/// Writes the departures sidecar: one line per edge, the four tile indices
/// then `t_start:passengers` tokens in edge-list order.
pub fn write_departures<W: Write>(mut out: W, net: &RidesNetwork) -> std::io::Result<()> {
    for (&(u, v), e) in &net.edges {
        let mut line = format!("{} {} {} {}", u.col, u.row, v.col, v.row);
        for d in &e.departures {
            let _ = write!(line, " {}:{}", d.t_start, d.passengers);
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn parse_edge_key(tokens: &[&str], line_no: usize) -> Result<Edge> {
    let bad = || Error::data(format!("edge list line {line_no}: malformed tile indices"));
    if tokens.len() < 4 {
        return Err(bad());
    }
    let n: Vec<u32> = tokens[..4]
        .iter()
        .map(|s| s.parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    Ok((TileId::new(n[0], n[1]), TileId::new(n[2], n[3])))
}

/// Reads a network back from an edge list and its departures sidecar.
pub fn read_network<A: BufRead, B: BufRead>(edge_list: A, departures: B) -> Result<RidesNetwork> {
    let mut lines = edge_list.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l.map_err(|e| Error::io("<edge list>", e))?,
        None => return Err(Error::data("edge list is empty")),
    };
    let window = header
        .strip_prefix("# window ")
        .and_then(|rest| {
            let mut it = rest.split_whitespace().map(str::parse::<Timestamp>);
            match (it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b))) => Some(SnapshotWindow { t1: a, t2: b }),
                _ => None,
            }
        })
        .ok_or_else(|| Error::data("edge list lacks `# window t1 t2` header"))?;

    let mut weights = BTreeMap::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io("<edge list>", e))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let key = parse_edge_key(&tokens, i + 1)?;
        let w: u64 = tokens
            .get(4)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::data(format!("edge list line {}: bad weight", i + 1)))?;
        weights.insert(key, w);
    }

    let mut net = RidesNetwork::empty(window);
    for (i, line) in departures.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<departures>", e))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let (u, v) = parse_edge_key(&tokens, i + 1)?;
        for tok in &tokens[4..] {
            let dep = tok
                .split_once(':')
                .and_then(|(t, p)| Some(Departure { t_start: t.parse().ok()?, passengers: p.parse().ok()? }))
                .ok_or_else(|| Error::data(format!("departures line {}: bad token `{tok}`", i + 1)))?;
            net.insert(u, v, dep);
        }
    }
    let net = net.finish();
    let observed: BTreeMap<Edge, u64> = net.edges.iter().map(|(k, e)| (*k, e.weight())).collect();
    if observed != weights {
        return Err(Error::data("edge list weights disagree with departures sidecar"));
    }
    Ok(net)
}
