//! Codebooks and Lloyd's k-means with k-means++ seeding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::seed::rng_for;
use crate::{Error, Result};

#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `k` centroids of dimension `dim`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    centroids: Vec<f32>,
}

impl Codebook {
    pub fn new(k: usize, dim: usize, centroids: Vec<f32>) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::invalid("codebook needs k >= 1 and dim >= 1"));
        }
        if centroids.len() != k * dim {
            return Err(Error::invalid(format!(
                "codebook of {k}x{dim} needs {} values, got {}",
                k * dim,
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite centroid".into()));
        }
        Ok(Codebook { k, dim, centroids })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Nearest centroid and its squared distance; ties go to the lowest index.
    pub fn nearest(&self, x: &[f32]) -> (usize, f32) {
        let mut best = (0, f32::INFINITY);
        for (i, c) in self.centroids.chunks_exact(self.dim).enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Indices of the `n` nearest centroids ordered by `(distance, index)`.
    pub fn nearest_n(&self, x: &[f32], n: usize) -> Vec<usize> {
        let mut all: Vec<(f32, usize)> = self
            .centroids
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, c)| (sq_dist(x, c), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(n).map(|(_, i)| i).collect()
    }
}

/// Result of a k-means run. `objective_trace[t]` is the sum of squared
/// distances after the `t`-th assignment step.
#[derive(Clone, Debug)]
pub struct KMeansOutcome {
    pub codebook: Codebook,
    pub objective_trace: Vec<f64>,
}

impl KMeansOutcome {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("at least one assignment")
    }
}

fn check_data(data: &[f32], dim: usize, k: usize) -> Result<usize> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::invalid("data length is not a multiple of dim"));
    }
    let n = data.len() / dim;
    if k == 0 || n < k {
        return Err(Error::invalid(format!("k-means needs at least k={k} vectors, got {n}")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite training value"));
    }
    Ok(n)
}

/// k-means++ seeding: the first center uniformly, the rest proportionally to
/// the squared distance to the closest chosen center.
pub fn kmeans_pp_init(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
    let n = check_data(data, dim, k)?;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first)) as f64).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(row(pick));
        let c = row(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), c) as f64);
        }
    }
    Ok(centroids)
}

pub(crate) fn assign(data: &[f32], codebook: &Codebook) -> Vec<(usize, f32)> {
    data.par_chunks(codebook.dim())
        .with_min_len(256)
        .map(|x| codebook.nearest(x))
        .collect()
}

/// Lloyd iterations from explicit initial centroids.
///
/// Stops early once assignments no longer change. A cluster left empty is
/// re-seeded with the point currently farthest from its centroid (distinct
/// points for distinct empty clusters), which keeps the objective
/// non-increasing.
pub fn lloyd(data: &[f32], dim: usize, init: Vec<f32>, iterations: usize) -> Result<KMeansOutcome> {
    let k = init.len() / dim.max(1);
    let n = check_data(data, dim, k)?;
    let mut codebook = Codebook::new(k, dim, init)?;
    let mut assignment = assign(data, &codebook);
    let mut trace = vec![assignment.iter().map(|a| a.1 as f64).sum()];
    for _ in 0..iterations {
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(&data[i * dim..(i + 1) * dim]) {
                *s += v as f64;
            }
        }
        let mut centroids = vec![0.0f32; k * dim];
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    centroids[c * dim + d] = (sums[c * dim + d] / counts[c] as f64) as f32;
                }
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empty.is_empty() {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| assignment[b].1.total_cmp(&assignment[a].1).then(a.cmp(&b)));
            for (&c, &p) in empty.iter().zip(&order) {
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&data[p * dim..(p + 1) * dim]);
            }
            log::debug!("k-means: re-seeded {} empty clusters", empty.len());
        }
        codebook = Codebook::new(k, dim, centroids)?;
        let next = assign(data, &codebook);
        trace.push(next.iter().map(|a| a.1 as f64).sum());
        let stable = next.iter().zip(&assignment).all(|(a, b)| a.0 == b.0);
        assignment = next;
        if stable && empty.is_empty() {
            break;
        }
    }
    Ok(KMeansOutcome {
        codebook,
        objective_trace: trace,
    })
}

pub fn kmeans_with_trace(data: &[f32], dim: usize, k: usize, iterations: usize, seed: u64) -> Result<KMeansOutcome> {
    if iterations == 0 {
        return Err(Error::invalid("k-means needs at least one iteration"));
    }
    let mut rng = rng_for(seed, "kmeans", 0);
    let init = kmeans_pp_init(data, dim, k, &mut rng)?;
    lloyd(data, dim, init, iterations)
}

pub fn kmeans(data: &[f32], dim: usize, k: usize, iterations: usize, seed: u64) -> Result<Codebook> {
    Ok(kmeans_with_trace(data, dim, k, iterations, seed)?.codebook)
}
