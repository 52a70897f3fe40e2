use num_traits::Float;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::vector::{batch_dim, norm_sq, sq_dist};

use super::{client_masses, weighted_sum, ReliabilityWeights};

/// Relative floor on distances to the current iterate. Keeps the step finite
/// when the iterate lands on a data point.
const SINGULARITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct WeiszfeldOutcome<T> {
    /// Weights whose combination of the inputs is exactly `median`.
    pub weights: ReliabilityWeights<T>,
    pub median: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted Weiszfeld iteration for the geometric median.
///
/// Starts at the mass-weighted mean and iterates
/// `z <- sum_m (c_m / d_m) g_m / sum_m (c_m / d_m)` with
/// `d_m = max(|g_m - z|, 1e-12 (1 + |z|))` until the step is at most
/// `tol (1 + |z|)` or `max_iters` steps have run. Running out of iterations is
/// not an error.
pub fn weiszfeld<T: Scalar>(vectors: &[Vec<T>], masses: &[T], max_iters: usize, tol: f64) -> Result<WeiszfeldOutcome<T>> {
    let dim = batch_dim(vectors)?;
    let total: T = masses.iter().copied().sum();
    let mut alpha: Vec<T> = masses.iter().map(|&c| c / total).collect();
    let mut z = weighted_sum(&alpha, vectors, dim);
    let floor = T::from_f64_lossy(SINGULARITY_FLOOR);
    let tol = T::from_f64_lossy(tol);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        let z_norm = Float::sqrt(norm_sq(&z));
        let d_min = floor * (T::one() + z_norm);
        let inv: Vec<T> = vectors
            .iter()
            .zip(masses)
            .map(|(g, &c)| c / Float::max(Float::sqrt(sq_dist(g, &z)), d_min))
            .collect();
        let inv_total: T = inv.iter().copied().sum();
        alpha = inv.into_iter().map(|x| x / inv_total).collect();
        let next = weighted_sum(&alpha, vectors, dim);
        let step = Float::sqrt(sq_dist(&next, &z));
        z = next;
        iterations += 1;
        if step <= tol * (T::one() + z_norm) {
            converged = true;
            break;
        }
    }

    Ok(WeiszfeldOutcome {
        weights: ReliabilityWeights::new_unchecked(alpha),
        median: z,
        iterations,
        converged,
    })
}

/// Reliability weights of the geometric median, `alpha_m ∝ S_m / d_m` at the
/// last Weiszfeld step.
pub fn geometric_median_weights<T: Scalar>(
    vectors: &[Vec<T>],
    sample_counts: &[u64],
    weight_by_samples: bool,
    max_iters: usize,
    tol: f64,
) -> Result<ReliabilityWeights<T>> {
    let masses = client_masses::<T>(sample_counts, weight_by_samples)?;
    Ok(weiszfeld(vectors, &masses, max_iters, tol)?.weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::apply_weights;

    #[test]
    fn identical_vectors_converge_in_one_step() {
        let v = vec![vec![3.0, -1.0]; 3];
        let out = weiszfeld(&v, &[1.0, 2.0, 1.0], 100, 1e-8).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        assert_eq!(out.weights.as_slice(), &[0.25, 0.5, 0.25]);
        assert_eq!(out.median, v[0]);
    }

    #[test]
    fn symmetric_square() {
        let v = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 1.0], vec![1.0, -1.0]];
        let w = geometric_median_weights(&v, &[1, 1, 1, 1], true, 100, 1e-8).unwrap();
        assert_eq!(w.as_slice(), &[0.25; 4]);
        assert_eq!(apply_weights(&w, &v).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn one_dimensional_outlier() {
        let v: Vec<Vec<f64>> = [0.0, 0.0, 0.0, 100.0].iter().map(|&x| vec![x]).collect();
        let out = weiszfeld(&v, &[1.0; 4], 1000, 1e-14).unwrap();
        let agg = apply_weights(&out.weights, &v).unwrap();
        assert!(agg[0].abs() < 1e-3, "aggregate {}", agg[0]);
        assert!(out.weights.as_slice()[3] < 0.01);
        assert_eq!(agg, out.median);
    }

    #[test]
    fn implied_aggregate_is_final_iterate() {
        let v = vec![vec![0.3, 1.0, -2.0], vec![5.0, 0.0, 1.0], vec![0.1, 0.9, -1.5], vec![-40.0, 3.0, 8.0]];
        for iters in [1, 2, 7, 50] {
            let out = weiszfeld(&v, &[2.0, 1.0, 1.0, 3.0], iters, 0.0).unwrap();
            assert_eq!(out.iterations, iters);
            assert_eq!(apply_weights(&out.weights, &v).unwrap(), out.median);
            out.weights.validate().unwrap();
        }
    }

    #[test]
    fn masses_ignored_when_unweighted() {
        let v = vec![vec![1.0], vec![1.0]];
        let w = geometric_median_weights(&v, &[9, 1], false, 10, 1e-8).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5]);
    }
}
