use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::index::{AnyIndex, SearchResult};
use crate::{Error, Result};

/// Searches every row of `queries` (row-major, `index.dim()` wide).
pub fn search_all(index: &AnyIndex, queries: &[f32], k: usize, nprobe: usize) -> Result<Vec<SearchResult>> {
    let dim = index.dim();
    if queries.len() % dim != 0 {
        return Err(Error::invalid(format!(
            "query buffer of {} values is not a multiple of dimension {dim}",
            queries.len()
        )));
    }
    queries.par_chunks_exact(dim).map(|q| index.search_with(q, k, nprobe)).collect()
}

/// Fraction of results whose first hit is the ground-truth id.
pub fn recall_at_1_from(results: &[SearchResult], truth: &[u32]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::invalid("recall needs at least one query"));
    }
    if results.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} results but {} ground-truth ids",
            results.len(),
            truth.len()
        )));
    }
    let hits = results.iter().zip(truth).filter(|(r, &t)| r.top().map(|h| h.id) == Some(t)).count();
    Ok(hits as f64 / results.len() as f64)
}

/// R@1 of `queries` against `index`, probing `nprobe` cells.
pub fn recall_at_1(index: &AnyIndex, queries: &[f32], truth: &[u32], nprobe: usize) -> Result<f64> {
    recall_at_1_from(&search_all(index, queries, 1, nprobe)?, truth)
}

/// The best candidate kept for one query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredPair {
    pub distance: f32,
    pub correct: bool,
}

/// Best-scoring pair of each query; `truth` is `None` for negative queries.
pub fn best_pairs(results: &[SearchResult], truth: &[Option<u32>]) -> Vec<Option<ScoredPair>> {
    results
        .iter()
        .zip(truth)
        .map(|(r, t)| {
            r.top().map(|h| ScoredPair {
                distance: h.distance,
                correct: *t == Some(h.id),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Pairs with `distance <= threshold` are declared matches.
    pub threshold: f32,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub micro_ap: f64,
    /// One point per distinct observed distance, in increasing threshold order.
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    /// Recall at the loosest threshold.
    pub fn max_recall(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.recall)
    }

    /// At most `n` points, evenly spaced along the sweep and always keeping
    /// the last one.
    pub fn thinned(&self, n: usize) -> Vec<PrPoint> {
        let len = self.points.len();
        if n == 0 || len <= n {
            return self.points.clone();
        }
        (1..=n).map(|i| self.points[i * len / n - 1]).collect()
    }
}

/// Precision-recall sweep over all observed distances. The area is the
/// rectangle rule over recall increments; tied distances enter together.
pub fn micro_ap_from_pairs(pairs: &[Option<ScoredPair>], positives: usize) -> Result<PrCurve> {
    if positives == 0 {
        return Err(Error::invalid("micro-AP needs at least one positive query"));
    }
    let mut sorted: Vec<ScoredPair> = pairs.iter().flatten().copied().collect();
    if sorted.iter().any(|p| !p.distance.is_finite()) {
        return Err(Error::Numeric("non-finite match distance".into()));
    }
    sorted.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    let mut points = Vec::new();
    let (mut tp, mut predicted, mut area, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].distance;
        while i < sorted.len() && sorted[i].distance == threshold {
            tp += sorted[i].correct as usize;
            predicted += 1;
            i += 1;
        }
        let precision = tp as f64 / predicted as f64;
        let recall = tp as f64 / positives as f64;
        area += precision * (recall - prev_recall);
        prev_recall = recall;
        points.push(PrPoint {
            threshold,
            precision,
            recall,
        });
    }
    Ok(PrCurve { micro_ap: area, points })
}

/// Micro average precision of positive and negative queries, keeping the
/// best of the top `k` candidates per query.
pub fn micro_ap(
    index: &AnyIndex,
    positives: &[f32],
    truth: &[u32],
    negatives: &[f32],
    k: usize,
    nprobe: usize,
) -> Result<PrCurve> {
    if negatives.is_empty() {
        return Err(Error::invalid("micro-AP needs at least one negative query"));
    }
    let pos = search_all(index, positives, k, nprobe)?;
    if pos.len() != truth.len() {
        return Err(Error::invalid(format!("{} positives but {} ground-truth ids", pos.len(), truth.len())));
    }
    let neg = search_all(index, negatives, k, nprobe)?;
    let mut labels: Vec<Option<u32>> = truth.iter().map(|&t| Some(t)).collect();
    labels.extend(std::iter::repeat(None).take(neg.len()));
    let results: Vec<SearchResult> = pos.into_iter().chain(neg).collect();
    micro_ap_from_pairs(&best_pairs(&results, &labels), truth.len())
}

/// Both sides of `‖x̂ − q‖² = ‖x − q‖² + ‖x̂ − x‖² + 2 (x − q)ᵀ(x̂ − x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub lhs: f64,
    pub rhs: f64,
}

impl Decomposition {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }

    pub fn relative(&self) -> f64 {
        let scale = self.lhs.abs().max(self.rhs.abs());
        if scale == 0.0 {
            0.0
        } else {
            self.residual() / scale
        }
    }
}

/// Evaluates the distance-estimate decomposition for a query feature `x_hat`,
/// the original feature `x` and its reproduction value `q`.
pub fn decomposition_check(x: &[f32], x_hat: &[f32], q: &[f32]) -> Result<Decomposition> {
    if x.len() != x_hat.len() || x.len() != q.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {}, {}, {}",
            x.len(),
            x_hat.len(),
            q.len()
        )));
    }
    let (mut lhs, mut quant, mut shift, mut cross) = (0.0, 0.0, 0.0, 0.0);
    for ((&a, &b), &c) in x.iter().zip(x_hat).zip(q) {
        let (a, b, c) = (a as f64, b as f64, c as f64);
        lhs += (b - c) * (b - c);
        quant += (a - c) * (a - c);
        shift += (b - a) * (b - a);
        cross += (a - c) * (b - a);
    }
    Ok(Decomposition {
        lhs,
        rhs: quant + shift + 2.0 * cross,
    })
}

/// Fraction of pairs whose coarse cells differ, `reference[i]` against
/// `transformed[i]`.
pub fn ivf_failure_rate(index: &AnyIndex, reference: &[f32], transformed: &[f32]) -> Result<f64> {
    let coarse = index
        .coarse()
        .ok_or_else(|| Error::invalid(format!("{} index has no coarse quantizer", index.family())))?;
    let dim = coarse.dim();
    if reference.len() != transformed.len() || reference.len() % dim != 0 {
        return Err(Error::invalid(format!(
            "unpaired features: {} reference values, {} transformed values, dimension {dim}",
            reference.len(),
            transformed.len()
        )));
    }
    let n = reference.len() / dim;
    if n == 0 {
        return Err(Error::invalid("failure rate needs at least one pair"));
    }
    let moved = reference
        .par_chunks_exact(dim)
        .zip(transformed.par_chunks_exact(dim))
        .filter(|(a, b)| coarse.nearest(a).0 != coarse.nearest(b).0)
        .count();
    Ok(moved as f64 / n as f64)
}

/// Single-probe recall bound `R ≤ 1 − p_f` with a three-sigma Monte Carlo
/// allowance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallBound {
    pub p_f: f64,
    pub samples: usize,
    pub max_recall: f64,
    pub bound: f64,
    /// `bound − max_recall`; negative when violated.
    pub margin: f64,
    pub holds: bool,
}

pub fn recall_bound_check(max_recall: f64, p_f: f64, samples: usize, nprobe: usize) -> Result<RecallBound> {
    if nprobe != 1 {
        return Err(Error::invalid(format!("the recall bound needs a single probe, got {nprobe}")));
    }
    if samples == 0 {
        return Err(Error::invalid("the recall bound needs at least one sample"));
    }
    if !(0.0..=1.0).contains(&p_f) || !(0.0..=1.0).contains(&max_recall) {
        return Err(Error::invalid("probabilities must lie in [0, 1]"));
    }
    let slack = 3.0 * (p_f * (1.0 - p_f) / samples as f64).sqrt();
    let bound = 1.0 - p_f + slack;
    Ok(RecallBound {
        p_f,
        samples,
        max_recall,
        bound,
        margin: bound - max_recall,
        holds: max_recall <= bound,
    })
}
