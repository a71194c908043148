//! Density-based clustering (DBSCAN) over small point sets with exact
//! pairwise distances, plus eps selection from the knee of the sorted
//! k-distance curve.
//!
//! A point is *core* when at least `min_samples` points (itself included) lie
//! within `eps` of it. Clusters are grown from core points in ascending index
//! order; a border point reachable from several clusters joins the one whose
//! expansion reaches it first.

use std::collections::VecDeque;

use log::warn;

use crate::error::{Error, Result};

/// Smallest eps [`elbow_eps`] will return.
pub const MIN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Noise,
    Cluster(usize),
}

impl Label {
    pub fn cluster(self) -> Option<usize> {
        match self {
            Label::Cluster(c) => Some(c),
            Label::Noise => None,
        }
    }

    pub fn is_noise(self) -> bool {
        matches!(self, Label::Noise)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterLabeling {
    pub labels: Vec<Label>,
    pub n_clusters: usize,
}

impl ClusterLabeling {
    /// Point indices of each cluster, in cluster-id order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (i, label) in self.labels.iter().enumerate() {
            if let Label::Cluster(c) = label {
                out[*c].push(i);
            }
        }
        out
    }

    pub fn n_noise(&self) -> usize {
        self.labels.iter().filter(|l| l.is_noise()).count()
    }
}

pub fn euclidean<P: AsRef<[f64]>>(a: &P, b: &P) -> f64 {
    a.as_ref()
        .iter()
        .zip(b.as_ref())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn neighborhoods<P: AsRef<[f64]>>(points: &[P], eps: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut out = vec![Vec::new(); n];
    for i in 0..n {
        out[i].push(i);
        for j in (i + 1)..n {
            if euclidean(&points[i], &points[j]) <= eps {
                out[i].push(j);
                out[j].push(i);
            }
        }
    }
    for nb in &mut out {
        nb.sort_unstable();
    }
    out
}

pub fn dbscan<P: AsRef<[f64]>>(points: &[P], eps: f64, min_samples: usize) -> Result<ClusterLabeling> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be finite and > 0, got {eps}")));
    }
    if min_samples < 1 {
        return Err(Error::InvalidParameter("min_samples must be at least 1".into()));
    }
    let neighbors = neighborhoods(points, eps);
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_samples).collect();

    let mut labels = vec![Label::Noise; points.len()];
    let mut assigned = vec![false; points.len()];
    let mut n_clusters = 0;
    let mut queue = VecDeque::new();

    for seed in 0..points.len() {
        if assigned[seed] || !is_core[seed] {
            continue;
        }
        let cluster = n_clusters;
        n_clusters += 1;
        assigned[seed] = true;
        labels[seed] = Label::Cluster(cluster);
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if assigned[q] {
                    continue;
                }
                assigned[q] = true;
                labels[q] = Label::Cluster(cluster);
                if is_core[q] {
                    queue.push_back(q);
                }
            }
        }
    }

    Ok(ClusterLabeling { labels, n_clusters })
}

/// Index of the knee of a curve: the sample farthest from the chord joining
/// the first and last samples (x = index, y = value).
pub fn knee_index(curve: &[f64]) -> Option<usize> {
    let n = curve.len();
    if n == 0 {
        return None;
    }
    if n < 3 {
        return Some(0);
    }
    let (x0, y0) = (0.0, curve[0]);
    let (x1, y1) = ((n - 1) as f64, curve[n - 1]);
    let (dx, dy) = (x1 - x0, y1 - y0);
    let norm = dx.hypot(dy);
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &y) in curve.iter().enumerate() {
        let d = (dy * (i as f64 - x0) - dx * (y - y0)).abs() / norm;
        if d > best.1 {
            best = (i, d);
        }
    }
    Some(best.0)
}

/// Distance from every point to its `k`-th nearest other point.
pub fn k_distances<P: AsRef<[f64]>>(points: &[P], k: usize) -> Result<Vec<f64>> {
    if k < 1 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if points.len() < k + 1 {
        return Err(Error::TooFewPoints {
            needed: k + 1,
            got: points.len(),
        });
    }
    let n = points.len();
    let mut row = Vec::with_capacity(n - 1);
    Ok((0..n)
        .map(|i| {
            row.clear();
            row.extend((0..n).filter(|&j| j != i).map(|j| euclidean(&points[i], &points[j])));
            let (_, kth, _) = row.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect())
}

/// eps at the knee of the descending k-distance curve.
///
/// Fails with [`Error::DegenerateGeometry`] when every k-distance is zero;
/// otherwise never returns less than [`MIN_EPS`].
pub fn elbow_eps<P: AsRef<[f64]>>(points: &[P], k: usize) -> Result<f64> {
    let mut curve = k_distances(points, k)?;
    curve.sort_unstable_by(|a, b| b.total_cmp(a));
    if curve[0] <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "all k-distances are zero; the k-distance curve has no knee".into(),
        ));
    }
    // curve is non-empty here, so knee_index always returns Some
    let knee = knee_index(&curve).unwrap_or(0);
    let eps = curve[knee];
    if eps < MIN_EPS {
        warn!("elbow eps {eps:e} below floor, using {MIN_EPS:e}");
        return Ok(MIN_EPS);
    }
    Ok(eps)
}
