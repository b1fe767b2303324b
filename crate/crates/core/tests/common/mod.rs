//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};

/// Maximum matching on one bucket by exhaustive search.
pub fn max_matching_brute(times: &[i64], max_delay: i64) -> usize {
    fn go(rest: &mut Vec<i64>, d: i64) -> usize {
        let Some(first) = rest.pop() else { return 0 };
        // `first` left unmatched
        let mut best = go(&mut rest.clone(), d);
        for j in 0..rest.len() {
            if (rest[j] - first).abs() <= d {
                let mut r = rest.clone();
                r.remove(j);
                best = best.max(1 + go(&mut r, d));
            }
        }
        rest.push(first);
        best
    }
    go(&mut times.to_vec(), max_delay)
}

/// All-pairs hop distances by Floyd-Warshall.
pub fn floyd(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<Option<usize>>> {
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for &(u, v) in edges {
        if u != v {
            d[u][v] = Some(1);
            d[v][u] = Some(1);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].map_or(true, |c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}

fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut a = vec![vec![false; n]; n];
    for &(u, v) in edges {
        if u != v {
            a[u][v] = true;
            a[v][u] = true;
        }
    }
    a
}

/// Betweenness by enumerating every shortest path of every unordered pair.
pub fn betweenness_brute(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let a = adjacency(n, edges);
    let d = floyd(n, edges);
    let mut out = vec![0.0; n];
    for s in 0..n {
        for t in s + 1..n {
            let Some(len) = d[s][t] else { continue };
            let mut paths: Vec<Vec<usize>> = Vec::new();
            let mut stack = vec![vec![s]];
            while let Some(p) = stack.pop() {
                let last = *p.last().unwrap();
                if p.len() == len + 1 {
                    if last == t {
                        paths.push(p);
                    }
                    continue;
                }
                for x in 0..n {
                    if a[last][x] && !p.contains(&x) {
                        let mut q = p.clone();
                        q.push(x);
                        stack.push(q);
                    }
                }
            }
            let sigma = paths.len() as f64;
            for p in &paths {
                for &v in &p[1..p.len() - 1] {
                    out[v] += 1.0 / sigma;
                }
            }
        }
    }
    out
}

pub fn closeness_brute(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let d = floyd(n, edges);
    (0..n)
        .map(|v| {
            let reach: Vec<usize> = d[v].iter().flatten().copied().collect();
            let sum: usize = reach.iter().sum();
            if sum == 0 {
                0.0
            } else {
                (reach.len() - 1) as f64 / sum as f64
            }
        })
        .collect()
}

/// Largest eigenvalue and its unit eigenvector (non-negative sign) from a
/// dense symmetric eigensolver.
pub fn dense_top_eigen(m: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let (k, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let v = eig.eigenvectors.column(k);
    let sign = if v.sum() < 0.0 { -1.0 } else { 1.0 };
    (lambda, v.iter().map(|x| sign * x).collect())
}

/// Connected components (isolated nodes included), each sorted, ordered by
/// smallest member.
pub fn components_brute(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let d = floyd(n, edges);
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let comp: Vec<usize> = (0..n).filter(|&t| d[s][t].is_some()).collect();
        comp.iter().for_each(|&t| seen[t] = true);
        out.push(comp);
    }
    out
}

/// Eigenvector centrality by dense eigendecomposition of each largest
/// component; ties go to the larger eigenvalue, then the earlier component.
pub fn eigenvector_brute(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let a = adjacency(n, edges);
    let comps = components_brute(n, edges);
    let size = comps.iter().map(Vec::len).max().unwrap_or(0);
    let mut scores = vec![0.0; n];
    if size < 2 {
        return scores;
    }
    let mut best: Option<(f64, &Vec<usize>, Vec<f64>)> = None;
    for c in comps.iter().filter(|c| c.len() == size) {
        let m = DMatrix::from_fn(c.len(), c.len(), |i, j| if a[c[i]][c[j]] { 1.0 } else { 0.0 });
        let (lambda, v) = dense_top_eigen(&m);
        if best.as_ref().map_or(true, |b| lambda > b.0 + 1e-9) {
            best = Some((lambda, c, v));
        }
    }
    let (_, c, v) = best.unwrap();
    for (&node, x) in c.iter().zip(v) {
        scores[node] = x;
    }
    scores
}

/// Density exponent of a power-law tail from a least-squares line through
/// the log-binned histogram of `values >= x_min` (bins a factor `2^0.5`
/// wide, bins with fewer than 5 samples ignored).
pub fn loglog_tail_exponent(values: &[f64], x_min: f64) -> f64 {
    let ratio = 2f64.sqrt();
    let tail: Vec<f64> = values.iter().copied().filter(|&v| v >= x_min).collect();
    let n = tail.len() as f64;
    let mut points = Vec::new();
    let mut lo = x_min;
    loop {
        let hi = lo * ratio;
        let count = tail.iter().filter(|&&v| v >= lo && v < hi).count();
        if tail.iter().all(|&v| v < lo) {
            break;
        }
        if count >= 5 {
            let density = count as f64 / (n * (hi - lo));
            points.push(((lo * hi).sqrt().ln(), density.ln()));
        }
        lo = hi;
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -sxy / sxx
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
