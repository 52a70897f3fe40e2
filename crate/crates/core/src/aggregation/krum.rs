use crate::error::{PdrError, Result};
use crate::scalar::Scalar;
use crate::vector::{batch_dim, sq_dist};

use super::ReliabilityWeights;

/// Symmetric `M x M` matrix of squared Euclidean distances, row-major.
pub fn pairwise_sq_distances<T: Scalar>(vectors: &[Vec<T>]) -> Result<Vec<T>> {
    batch_dim(vectors)?;
    let m = vectors.len();
    let mut d = vec![T::zero(); m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let v = sq_dist(&vectors[i], &vectors[j]);
            d[i * m + j] = v;
            d[j * m + i] = v;
        }
    }
    Ok(d)
}

/// Krum score of each member of `pool`: the sum of its `neighbors` smallest
/// squared distances to the other pool members, added in ascending order.
fn pool_scores<T: Scalar>(dist: &[T], m: usize, pool: &[usize], neighbors: usize) -> Vec<T> {
    let mut row = Vec::with_capacity(pool.len());
    pool.iter()
        .map(|&i| {
            row.clear();
            row.extend(pool.iter().filter(|&&j| j != i).map(|&j| dist[i * m + j]));
            row.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Greater));
            row.iter().take(neighbors).copied().fold(T::zero(), |acc, x| acc + x)
        })
        .collect()
}

/// Position in `scores` of the smallest score, ties going to the first one.
/// NaN scores never win unless every score is NaN.
fn argmin_first<T: Scalar>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] || (scores[best].is_nan() && !s.is_nan()) {
            best = i;
        }
    }
    best
}

/// Krum scores for every client with `M - f - 2` neighbors.
pub fn krum_scores<T: Scalar>(vectors: &[Vec<T>], f: usize) -> Result<Vec<T>> {
    let m = vectors.len();
    if m < f + 3 {
        return Err(PdrError::Precondition(format!(
            "krum needs M >= f + 3, got M = {m}, f = {f}"
        )));
    }
    let dist = pairwise_sq_distances(vectors)?;
    let pool: Vec<usize> = (0..m).collect();
    Ok(pool_scores(&dist, m, &pool, m - f - 2))
}

/// Indicator weights on the Krum winner; ties go to the lowest client index.
pub fn krum_weights<T: Scalar>(vectors: &[Vec<T>], f: usize) -> Result<ReliabilityWeights<T>> {
    let scores = krum_scores(vectors, f)?;
    Ok(ReliabilityWeights::indicator(vectors.len(), argmin_first(&scores)))
}

/// Selection stage of Bulyan: Krum is applied `M - 2f` times, each winner
/// leaving the candidate pool, and the winners share the weight uniformly.
///
/// A pool of `n` candidates uses `n - f - 2` neighbors, floored at one so the
/// late iterations on small pools still score by proximity.
pub fn bulyan_select_weights<T: Scalar>(vectors: &[Vec<T>], f: usize) -> Result<ReliabilityWeights<T>> {
    let m = vectors.len();
    if m == 0 {
        return Err(PdrError::EmptyInput("client updates"));
    }
    if m < 2 * f + 1 {
        return Err(PdrError::Precondition(format!(
            "bulyan_select needs M - 2f >= 1, got M = {m}, f = {f}"
        )));
    }
    let theta = m - 2 * f;
    let dist = pairwise_sq_distances(vectors)?;
    let mut pool: Vec<usize> = (0..m).collect();
    let mut selected = Vec::with_capacity(theta);
    while selected.len() < theta {
        let n = pool.len();
        let pick = if n == 1 {
            0
        } else {
            let neighbors = n.saturating_sub(f + 2).max(1);
            argmin_first(&pool_scores(&dist, m, &pool, neighbors))
        };
        selected.push(pool.remove(pick));
    }
    Ok(ReliabilityWeights::uniform_over(m, &selected))
}
