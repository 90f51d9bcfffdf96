//! One-dimensional k-means used to partition a layer's weight and bias
//! scalars into lower, middle and upper clusters.
//!
//! [`kmeans_1d`] seeds with greedy k-means++ and refines with Lloyd
//! iterations, keeping the best of several seeded restarts.
//! [`brute_force_kmeans_1d`] is an exact dynamic-programming solver for small
//! inputs, used to check the heuristic.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Default number of seeded restarts.
pub const DEFAULT_RESTARTS: usize = 10;
/// Default cap on Lloyd iterations per restart.
pub const DEFAULT_MAX_ITER: usize = 100;
/// Longest input accepted by [`brute_force_kmeans_1d`].
pub const BRUTE_FORCE_MAX_LEN: usize = 64;

/// Result of clustering a list of scalars.
///
/// Cluster `0` has the lowest centroid. `labels[i]` is the cluster of the
/// `i`-th input value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
    pub objective: f64,
}

impl ClusterAssignment {
    /// `(min, max)` of the input values assigned to each cluster.
    pub fn ranges(&self, values: &[f32]) -> Vec<(f32, f32)> {
        let mut out = vec![(f32::INFINITY, f32::NEG_INFINITY); self.k];
        for (&v, &l) in values.iter().zip(&self.labels) {
            out[l] = (out[l].0.min(v), out[l].1.max(v));
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.k];
        for &l in &self.labels {
            out[l] += 1;
        }
        out
    }
}

/// k-means settings; [`kmeans_1d`] uses the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeans {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
}

impl KMeans {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            restarts: DEFAULT_RESTARTS,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    /// Clusters `values`. Restart `r` draws from stream `r` of a ChaCha8
    /// generator seeded with `seed`; the lowest objective wins, ties going to
    /// the earliest restart.
    pub fn fit(&self, values: &[f32], seed: u64) -> Result<ClusterAssignment> {
        if values.is_empty() {
            return Err(Error::arg("k-means needs at least one value"));
        }
        if self.k == 0 || self.restarts == 0 {
            return Err(Error::arg("k-means needs k >= 1 and at least one restart"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("k-means input contains non-finite values"));
        }
        let xs = widen(values);
        let distinct = distinct_sorted(&xs);
        if distinct.len() <= self.k {
            return Ok(finish(&xs, distinct));
        }
        let mut best: Option<ClusterAssignment> = None;
        for r in 0..self.restarts {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let centers = greedy_kmeans_pp(&xs, self.k, &mut rng);
            let fit = lloyd(&xs, centers, self.max_iter);
            if best.as_ref().is_none_or(|b| fit.objective < b.objective) {
                best = Some(fit);
            }
        }
        Ok(best.expect("at least one restart"))
    }
}

/// Clusters `values` into at most `k` groups with the default restarts and
/// iteration cap. With fewer than `k` distinct values, each distinct value
/// becomes its own cluster.
pub fn kmeans_1d(values: &[f32], k: usize, seed: u64) -> Result<ClusterAssignment> {
    KMeans::new(k).fit(values, seed)
}

/// f64 copies with `-0.0` folded into `0.0`.
fn widen(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| f64::from(v) + 0.0).collect()
}

fn distinct_sorted(xs: &[f64]) -> Vec<f64> {
    let mut d = xs.to_vec();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d
}

fn sq(x: f64) -> f64 {
    x * x
}

/// Nearest centroid, ties to the lower index.
fn nearest(x: f64, centroids: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, &c) in centroids.iter().enumerate() {
        let d = sq(x - c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// Greedy k-means++: the first center is uniform; each later center is the
/// best of `2 + floor(ln k)` candidates drawn from the D² distribution.
fn greedy_kmeans_pp(xs: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = vec![xs[rng.random_range(0..xs.len())]];
    let mut d2: Vec<f64> = xs.iter().map(|&x| sq(x - centers[0])).collect();
    while centers.len() < k {
        let Ok(dist) = WeightedIndex::new(&d2) else {
            break;
        };
        let mut chosen: Option<(f64, Vec<f64>, f64)> = None;
        for _ in 0..trials {
            let c = xs[dist.sample(rng)];
            let next: Vec<f64> = xs.iter().zip(&d2).map(|(&x, &d)| d.min(sq(x - c))).collect();
            let potential: f64 = next.iter().sum();
            if chosen.as_ref().is_none_or(|(_, _, p)| potential < *p) {
                chosen = Some((c, next, potential));
            }
        }
        let (c, next, _) = chosen.expect("trials >= 2");
        centers.push(c);
        d2 = next;
    }
    centers
}

fn assign(xs: &[f64], centroids: &[f64]) -> Vec<usize> {
    xs.iter().map(|&x| nearest(x, centroids)).collect()
}

fn lloyd(xs: &[f64], mut centroids: Vec<f64>, max_iter: usize) -> ClusterAssignment {
    let mut labels = assign(xs, &centroids);
    for _ in 0..max_iter {
        let k = centroids.len();
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&x, &l) in xs.iter().zip(&labels) {
            sums[l] += x;
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j] / counts[j] as f64;
            } else {
                // Empty cluster: move it to the point farthest from its centroid.
                let far = xs
                    .iter()
                    .zip(&labels)
                    .map(|(&x, &l)| sq(x - centroids[l]))
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(i, _)| i)
                    .expect("non-empty input");
                centroids[j] = xs[far];
            }
        }
        let next = assign(xs, &centroids);
        if next == labels {
            break;
        }
        labels = next;
    }
    let groups: Vec<Vec<f64>> = (0..centroids.len())
        .map(|j| {
            xs.iter()
                .zip(&labels)
                .filter(|(_, &l)| l == j)
                .map(|(&x, _)| x)
                .collect()
        })
        .collect();
    finish_groups(xs, groups)
}

/// Builds the assignment from a list of distinct values, one cluster each.
fn finish(xs: &[f64], distinct: Vec<f64>) -> ClusterAssignment {
    let labels = xs
        .iter()
        .map(|x| distinct.binary_search_by(|d| d.total_cmp(x)).expect("value present"))
        .collect();
    ClusterAssignment {
        k: distinct.len(),
        centroids: distinct,
        labels,
        objective: 0.0,
    }
}

/// Drops empty groups, orders clusters by centroid and recomputes labels and
/// objective from the group means.
fn finish_groups(xs: &[f64], groups: Vec<Vec<f64>>) -> ClusterAssignment {
    let mut centroids: Vec<f64> = groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    centroids.sort_by(f64::total_cmp);
    centroids.dedup();
    let labels = assign(xs, &centroids);
    let objective = xs.iter().zip(&labels).map(|(&x, &l)| sq(x - centroids[l])).sum();
    ClusterAssignment {
        k: centroids.len(),
        centroids,
        labels,
        objective,
    }
}

/// Globally optimal 1-D k-means by dynamic programming over contiguous
/// partitions of the sorted values. Accepts at most 64 values.
pub fn brute_force_kmeans_1d(values: &[f32], k: usize) -> Result<ClusterAssignment> {
    if values.is_empty() || values.len() > BRUTE_FORCE_MAX_LEN {
        return Err(Error::arg(format!(
            "exact k-means accepts 1..={BRUTE_FORCE_MAX_LEN} values, got {}",
            values.len()
        )));
    }
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    let xs = widen(values);
    let distinct = distinct_sorted(&xs);
    if distinct.len() <= k {
        return Ok(finish(&xs, distinct));
    }
    let mut sorted = xs.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Sum of squared deviations of sorted[i..j].
    let cost = |i: usize, j: usize| {
        let seg = &sorted[i..j];
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        seg.iter().map(|&x| sq(x - mean)).sum::<f64>()
    };
    // best[c][j]: optimal cost of splitting sorted[..j] into c+1 clusters.
    let mut best = vec![vec![f64::INFINITY; n + 1]; k];
    let mut cut = vec![vec![0usize; n + 1]; k];
    for (j, b) in best[0].iter_mut().enumerate().skip(1) {
        *b = cost(0, j);
    }
    for c in 1..k {
        for j in (c + 1)..=n {
            for i in c..j {
                let v = best[c - 1][i] + cost(i, j);
                if v < best[c][j] {
                    best[c][j] = v;
                    cut[c][j] = i;
                }
            }
        }
    }
    let mut bounds = vec![n];
    let mut j = n;
    for c in (1..k).rev() {
        j = cut[c][j];
        bounds.push(j);
    }
    bounds.push(0);
    bounds.reverse();
    let groups = bounds.windows(2).map(|w| sorted[w[0]..w[1]].to_vec()).collect();
    Ok(finish_groups(&xs, groups))
}
