//! Topological features of a rides network snapshot.
//!
//! Centralities and the largest eigenvalue are computed on the simple
//! undirected projection of the snapshot: edge directions and weights are
//! dropped, parallel edges collapse, self-loops are removed. Node and edge
//! counts (and hence density) are taken from the directed network itself.
//!
//! Conventions:
//!
//! - betweenness counts each unordered pair `{s, t}` once, endpoints
//!   excluded, unnormalized;
//! - closeness of `v` is `(r - 1) / sum of distances` over the `r` nodes of
//!   its component, `0` for an isolated node;
//! - eigenvector centrality is the unit-norm Perron vector of the largest
//!   connected component, `0` elsewhere.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynnet::RidesNetwork;
use crate::{Error, Result};

pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITERATIONS: usize = 10_000;

/// Largest component handed to the dense solver when power iteration stalls.
pub const DENSE_FALLBACK_MAX_NODES: usize = 2_000;

/// Sources per parallel work unit in betweenness; partial sums are combined
/// in a fixed order so results do not depend on scheduling.
const SOURCE_CHUNK: usize = 32;

/// Simple undirected graph on nodes `0..n`, adjacency lists sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    adj: Vec<Vec<usize>>,
}

impl UndirectedGraph {
    /// Self-loops and duplicate edges are ignored.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for (u, v) in edges {
            assert!(u < n && v < n, "edge ({u}, {v}) out of range for {n} nodes");
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        UndirectedGraph { adj }
    }

    /// Projection of a snapshot; node `i` is the `i`-th tile in tile order.
    pub fn from_network(net: &RidesNetwork) -> Self {
        let index = net.nodes().iter().copied().collect::<Vec<_>>();
        let pos = |t| index.binary_search(&t).expect("edge endpoint is a node");
        UndirectedGraph::from_edges(index.len(), net.edges().keys().map(|&(u, v)| (pos(u), pos(v))))
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n()];
        let mut out = Vec::new();
        for s in 0..self.n() {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![s];
            let mut queue = VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                for &w in &self.adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                        queue.push_back(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    fn bfs_distances(&self, s: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n()];
        dist[s] = Some(0);
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap_or_default() + 1;
            for &w in &self.adj[v] {
                if dist[w].is_none() {
                    dist[w] = Some(d);
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

/// One source's dependency vector (Brandes accumulation).
fn source_dependencies(g: &UndirectedGraph, s: usize, delta: &mut [f64]) {
    let n = g.n();
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    sigma[s] = 1.0;
    dist[s] = 0;
    let mut queue = VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &w in g.neighbors(v) {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                sigma[w] += sigma[v];
            }
        }
    }
    delta.iter_mut().for_each(|d| *d = 0.0);
    for &w in order.iter().rev() {
        for &v in g.neighbors(w) {
            if dist[v] != usize::MAX && dist[v] + 1 == dist[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
        }
    }
    delta[s] = 0.0;
}

/// Per-node betweenness `sum over unordered {s, t} of sigma_st(v) / sigma_st`.
pub fn betweenness(g: &UndirectedGraph) -> Vec<f64> {
    let n = g.n();
    let sources: Vec<usize> = (0..n).collect();
    let partials: Vec<Vec<f64>> = sources
        .par_chunks(SOURCE_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; n];
            let mut delta = vec![0.0; n];
            for &s in chunk {
                source_dependencies(g, s, &mut delta);
                acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; n];
    for p in &partials {
        total.iter_mut().zip(p).for_each(|(t, x)| *t += x);
    }
    // every unordered pair was visited from both ends
    total.iter_mut().for_each(|t| *t /= 2.0);
    total
}

pub fn closeness(g: &UndirectedGraph) -> Vec<f64> {
    (0..g.n())
        .into_par_iter()
        .map(|v| {
            let dist = g.bfs_distances(v);
            let (reach, sum) = dist
                .iter()
                .flatten()
                .fold((0usize, 0usize), |(r, s), &d| (r + 1, s + d));
            if sum == 0 {
                0.0
            } else {
                (reach - 1) as f64 / sum as f64
            }
        })
        .collect()
}

/// Symmetric non-negative matrix in sparse row form.
#[derive(Debug, Clone)]
pub struct SymmetricMatrix {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SymmetricMatrix {
    /// Callers must supply both `(i, j)` and `(j, i)`.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        SymmetricMatrix { rows }
    }

    pub fn adjacency(g: &UndirectedGraph) -> Self {
        SymmetricMatrix {
            rows: g.adj.iter().map(|r| r.iter().map(|&j| (j, 1.0)).collect()).collect(),
        }
    }

    /// Submatrix on `nodes` (sorted), reindexed to `0..nodes.len()`.
    fn restrict(&self, nodes: &[usize]) -> SymmetricMatrix {
        let rows = nodes
            .iter()
            .map(|&i| {
                self.rows[i]
                    .iter()
                    .filter_map(|&(j, w)| nodes.binary_search(&j).ok().map(|k| (k, w)))
                    .collect()
            })
            .collect();
        SymmetricMatrix { rows }
    }

    fn n(&self) -> usize {
        self.rows.len()
    }

    fn mul_shifted(&self, x: &[f64], shift: f64, y: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            y[i] = shift * x[i] + row.iter().map(|&(j, w)| w * x[j]).sum::<f64>();
        }
    }
}

/// Principal eigenpair of a connected symmetric non-negative matrix.
///
/// Iterates `x <- (A + cI) x / |(A + cI) x|` from the uniform vector with
/// `c` the mean row sum; the shift makes the Perron root strictly dominant
/// on bipartite graphs. Stops once successive iterates differ by less than
/// `tol` in Euclidean norm. The eigenvalue is the Rayleigh quotient of the
/// final iterate.
pub fn power_iteration(a: &SymmetricMatrix, tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64)> {
    let n = a.n();
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let row_sums: f64 = a.rows.iter().flatten().map(|&(_, w)| w).sum();
    if row_sums == 0.0 {
        let mut x = vec![0.0; n];
        x[0] = 1.0;
        return Ok((x, 0.0));
    }
    let shift = row_sums / n as f64;
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut y = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        a.mul_shifted(&x, shift, &mut y);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        y.iter_mut().for_each(|v| *v /= norm);
        residual = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        std::mem::swap(&mut x, &mut y);
        if residual < tol {
            a.mul_shifted(&x, 0.0, &mut y);
            let lambda = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
            return Ok((x, lambda));
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Principal eigenpair of a connected component's matrix. Power iteration
/// first; when two leading eigenvalues nearly coincide (long chains between
/// hubs) it stalls, and components up to [`DENSE_FALLBACK_MAX_NODES`] are
/// solved densely instead.
fn principal_eigenpair(a: &SymmetricMatrix) -> Result<(Vec<f64>, f64)> {
    match power_iteration(a, POWER_TOLERANCE, POWER_MAX_ITERATIONS) {
        Err(Error::NotConverged { .. }) if a.n() <= DENSE_FALLBACK_MAX_NODES => Ok(dense_eigenpair(a)),
        other => other,
    }
}

fn dense_eigenpair(a: &SymmetricMatrix) -> (Vec<f64>, f64) {
    let n = a.n();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for (i, row) in a.rows.iter().enumerate() {
        for &(j, w) in row {
            m[(i, j)] = w;
        }
    }
    let eig = SymmetricEigen::new(m);
    let k = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(k);
    let sign = if v.sum() < 0.0 { -1.0 } else { 1.0 };
    (v.iter().map(|x| sign * x).collect(), eig.eigenvalues[k])
}

/// Largest eigenvalue over all connected components.
pub fn largest_eigenvalue_of(a: &SymmetricMatrix, g: &UndirectedGraph) -> Result<f64> {
    let mut best = 0.0f64;
    for comp in g.components() {
        if comp.len() < 2 {
            continue;
        }
        let (_, lambda) = principal_eigenpair(&a.restrict(&comp))?;
        best = best.max(lambda);
    }
    Ok(best)
}

/// Unit-norm eigenvector centrality of the largest connected component
/// (ties broken by larger eigenvalue, then by component order); nodes outside
/// it score 0. Returns the scores and that component's eigenvalue.
pub fn eigenvector_centrality(g: &UndirectedGraph) -> Result<(Vec<f64>, f64)> {
    let mut scores = vec![0.0; g.n()];
    let comps = g.components();
    let Some(size) = comps.iter().map(Vec::len).max() else {
        return Ok((scores, 0.0));
    };
    if size < 2 {
        return Ok((scores, 0.0));
    }
    let a = SymmetricMatrix::adjacency(g);
    let mut best: Option<(&Vec<usize>, Vec<f64>, f64)> = None;
    for comp in comps.iter().filter(|c| c.len() == size) {
        let (x, lambda) = principal_eigenpair(&a.restrict(comp))?;
        if best.as_ref().map_or(true, |b| lambda > b.2 + 1e-12) {
            best = Some((comp, x, lambda));
        }
    }
    let (comp, x, lambda) = best.expect("at least one component of maximal size");
    for (&v, &s) in comp.iter().zip(&x) {
        scores[v] = s.max(0.0);
    }
    Ok((scores, lambda))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn betweenness_avg(net: &RidesNetwork) -> f64 {
    mean(&betweenness(&UndirectedGraph::from_network(net)))
}

pub fn closeness_avg(net: &RidesNetwork) -> f64 {
    mean(&closeness(&UndirectedGraph::from_network(net)))
}

pub fn eigenvector_centrality_avg(net: &RidesNetwork) -> Result<f64> {
    Ok(mean(&eigenvector_centrality(&UndirectedGraph::from_network(net))?.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenvalueNormalization {
    /// 0/1 adjacency of the undirected projection.
    #[default]
    Raw,
    /// Entry `(u, v)` is `(w(u->v) + w(v->u)) / total trips`.
    WeightNormalized,
}

impl fmt::Display for EigenvalueNormalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EigenvalueNormalization::Raw => "raw",
            EigenvalueNormalization::WeightNormalized => "weight_normalized",
        })
    }
}

pub fn largest_eigenvalue(net: &RidesNetwork, normalization: EigenvalueNormalization) -> Result<f64> {
    let g = UndirectedGraph::from_network(net);
    let a = match normalization {
        EigenvalueNormalization::Raw => SymmetricMatrix::adjacency(&g),
        EigenvalueNormalization::WeightNormalized => weight_normalized_matrix(net),
    };
    largest_eigenvalue_of(&a, &g)
}

fn weight_normalized_matrix(net: &RidesNetwork) -> SymmetricMatrix {
    let index: Vec<_> = net.nodes().iter().copied().collect();
    let pos = |t| index.binary_search(&t).expect("edge endpoint is a node");
    let total = net.total_trips().max(1) as f64;
    let mut rows: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); index.len()];
    for (&(u, v), e) in net.edges() {
        let (i, j) = (pos(u), pos(v));
        if i == j {
            continue;
        }
        let w = e.weight() as f64 / total;
        *rows[i].entry(j).or_insert(0.0) += w;
        *rows[j].entry(i).or_insert(0.0) += w;
    }
    SymmetricMatrix::from_rows(rows.into_iter().map(|r| r.into_iter().collect()).collect())
}

/// The seven per-snapshot features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub n_nodes: f64,
    pub n_edges: f64,
    pub density: f64,
    pub avg_betweenness: f64,
    pub avg_closeness: f64,
    pub avg_eigenvector_centrality: f64,
    pub largest_eigenvalue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    NNodes,
    NEdges,
    Density,
    AvgBetweenness,
    AvgCloseness,
    AvgEigenvectorCentrality,
    LargestEigenvalue,
}

impl Feature {
    pub const ALL: [Feature; 7] = [
        Feature::NNodes,
        Feature::NEdges,
        Feature::Density,
        Feature::AvgBetweenness,
        Feature::AvgCloseness,
        Feature::AvgEigenvectorCentrality,
        Feature::LargestEigenvalue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::NNodes => "n_nodes",
            Feature::NEdges => "n_edges",
            Feature::Density => "density",
            Feature::AvgBetweenness => "avg_betweenness",
            Feature::AvgCloseness => "avg_closeness",
            Feature::AvgEigenvectorCentrality => "avg_eigenvector_centrality",
            Feature::LargestEigenvalue => "largest_eigenvalue",
        }
    }
}

impl FeatureVector {
    pub fn get(&self, f: Feature) -> f64 {
        match f {
            Feature::NNodes => self.n_nodes,
            Feature::NEdges => self.n_edges,
            Feature::Density => self.density,
            Feature::AvgBetweenness => self.avg_betweenness,
            Feature::AvgCloseness => self.avg_closeness,
            Feature::AvgEigenvectorCentrality => self.avg_eigenvector_centrality,
            Feature::LargestEigenvalue => self.largest_eigenvalue,
        }
    }
}

pub fn features(net: &RidesNetwork, normalization: EigenvalueNormalization) -> Result<FeatureVector> {
    let g = UndirectedGraph::from_network(net);
    let n_nodes = net.n_nodes() as f64;
    let n_edges = net.n_edges() as f64;
    let (eig, _) = eigenvector_centrality(&g)?;
    let matrix = match normalization {
        EigenvalueNormalization::Raw => SymmetricMatrix::adjacency(&g),
        EigenvalueNormalization::WeightNormalized => weight_normalized_matrix(net),
    };
    let largest = largest_eigenvalue_of(&matrix, &g)?;
    Ok(FeatureVector {
        n_nodes,
        n_edges,
        density: if net.n_nodes() > 0 { n_edges / n_nodes } else { 0.0 },
        avg_betweenness: mean(&betweenness(&g)),
        avg_closeness: mean(&closeness(&g)),
        avg_eigenvector_centrality: mean(&eig),
        largest_eigenvalue: largest,
    })
}

/// Ride-weighted chance that a uniform guess over a trip's observed
/// destination set from its origin hits the actual destination.
pub fn destination_guess_probability(net: &RidesNetwork) -> Result<f64> {
    let total = net.total_trips();
    if total == 0 {
        return Err(Error::data("destination guess probability needs at least one trip"));
    }
    let out = net.out_degrees();
    let hits: f64 = net
        .edges()
        .iter()
        .map(|(&(u, _), e)| e.weight() as f64 / out[&u] as f64)
        .sum();
    Ok(hits / total as f64)
}
