//! Weighted-graph statistics on a single connectivity matrix.

use nalgebra::DMatrix;

use super::{DmncError, Result};

/// How correlations become edge weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdgeWeighting {
    /// Keep positive correlations, drop the rest.
    #[default]
    Positive,
    /// Use `|corr|` for every pair.
    Absolute,
}

fn adjacency(c: &DMatrix<f64>, weighting: EdgeWeighting) -> DMatrix<f64> {
    let k = c.nrows();
    DMatrix::from_fn(k, k, |i, j| {
        let v = c[(i, j)];
        if i == j || !v.is_finite() {
            0.0
        } else {
            match weighting {
                EdgeWeighting::Positive => v.max(0.0),
                EdgeWeighting::Absolute => v.abs(),
            }
        }
    })
}

/// Dense Dijkstra with edge length `1 / weight`.
fn shortest_paths_from(adj: &DMatrix<f64>, source: usize) -> Vec<f64> {
    let k = adj.nrows();
    let mut dist = vec![f64::INFINITY; k];
    let mut done = vec![false; k];
    dist[source] = 0.0;
    for _ in 0..k {
        let mut u = None;
        for v in 0..k {
            if !done[v] && dist[v].is_finite() && u.is_none_or(|u: usize| dist[v] < dist[u]) {
                u = Some(v);
            }
        }
        let Some(u) = u else { break };
        done[u] = true;
        for v in 0..k {
            let w = adj[(u, v)];
            if w > 0.0 && !done[v] {
                let cand = dist[u] + 1.0 / w;
                if cand < dist[v] {
                    dist[v] = cand;
                }
            }
        }
    }
    dist
}

/// Mean inverse shortest-path length over ordered node pairs; unreachable
/// pairs contribute zero.
pub fn global_efficiency(c: &DMatrix<f64>, weighting: EdgeWeighting) -> Result<f64> {
    let k = c.nrows();
    if k < 2 || c.ncols() != k {
        return Err(DmncError::ShapeMismatch(format!(
            "need a square matrix with K >= 2, got {:?}",
            c.shape()
        )));
    }
    let adj = adjacency(c, weighting);
    let mut total = 0.0;
    for i in 0..k {
        let d = shortest_paths_from(&adj, i);
        total += d
            .iter()
            .enumerate()
            .filter(|&(j, dj)| j != i && dj.is_finite())
            .map(|(_, dj)| 1.0 / dj)
            .sum::<f64>();
    }
    Ok(total / (k * (k - 1)) as f64)
}

/// Newman weighted modularity of `partition` (community id per node).
pub fn modularity(c: &DMatrix<f64>, partition: &[usize], weighting: EdgeWeighting) -> Result<f64> {
    let k = c.nrows();
    if partition.len() != k || c.ncols() != k {
        return Err(DmncError::ShapeMismatch(format!(
            "{} labels for {:?}",
            partition.len(),
            c.shape()
        )));
    }
    let adj = adjacency(c, weighting);
    let m2 = adj.sum();
    if m2 <= 0.0 {
        return Err(DmncError::NoPositiveEdges);
    }
    let n_comm = partition.iter().max().map_or(0, |m| m + 1);
    let mut e = vec![0.0; n_comm];
    let mut a = vec![0.0; n_comm];
    for i in 0..k {
        let ci = partition[i];
        a[ci] += adj.row(i).sum();
        for j in 0..k {
            if partition[j] == ci {
                e[ci] += adj[(i, j)];
            }
        }
    }
    Ok((0..n_comm).map(|c| e[c] / m2 - (a[c] / m2).powi(2)).sum())
}

/// Greedy agglomerative modularity maximization. Repeatedly merges the pair
/// of communities with the largest positive gain; equal gains resolve to the
/// lexicographically smallest pair. Labels are numbered by lowest member.
pub fn detect_communities(c: &DMatrix<f64>, weighting: EdgeWeighting) -> Result<Vec<usize>> {
    let k = c.nrows();
    if c.ncols() != k || k == 0 {
        return Err(DmncError::ShapeMismatch(format!("{:?} is not square", c.shape())));
    }
    let adj = adjacency(c, weighting);
    let m2 = adj.sum();
    if m2 <= 0.0 {
        return Err(DmncError::NoPositiveEdges);
    }
    // e[a][b]: fraction of edge weight between communities a and b.
    let mut e: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| adj[(i, j)] / m2).collect()).collect();
    let mut a: Vec<f64> = (0..k).map(|i| adj.row(i).sum() / m2).collect();
    let mut alive = vec![true; k];
    let mut members: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for x in 0..k {
            if !alive[x] {
                continue;
            }
            for y in x + 1..k {
                if !alive[y] || e[x][y] <= 0.0 {
                    continue;
                }
                let gain = 2.0 * (e[x][y] - a[x] * a[y]);
                if gain > 1e-15 && best.is_none_or(|(_, _, g)| gain > g) {
                    best = Some((x, y, gain));
                }
            }
        }
        let Some((x, y, _)) = best else { break };
        for z in 0..k {
            e[x][z] += e[y][z];
        }
        for z in 0..k {
            e[z][x] += e[z][y];
        }
        a[x] += a[y];
        alive[y] = false;
        let moved = std::mem::take(&mut members[y]);
        members[x].extend(moved);
    }
    let mut groups: Vec<&Vec<usize>> = (0..k).filter(|&i| alive[i]).map(|i| &members[i]).collect();
    groups.sort_by_key(|g| g.iter().min().copied());
    let mut labels = vec![0; k];
    for (id, g) in groups.iter().enumerate() {
        for &n in g.iter() {
            labels[n] = id;
        }
    }
    Ok(labels)
}
