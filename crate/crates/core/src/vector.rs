//! Dense vector kernels. Reductions always run in index order so results are
//! reproducible bit for bit.

use crate::error::{PdrError, Result};
use crate::scalar::Scalar;

/// A dense model-sized vector: gradients, model parameters, aggregates.
pub type ModelVector<T> = Vec<T>;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

#[inline]
pub fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn all_finite<T: Scalar>(a: &[T]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Checks that every vector has length `dim`.
pub fn check_dims<T>(vectors: &[Vec<T>], dim: usize) -> Result<()> {
    for v in vectors {
        if v.len() != dim {
            return Err(PdrError::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
    }
    Ok(())
}

/// Common length of a non-empty batch.
pub fn batch_dim<T>(vectors: &[Vec<T>]) -> Result<usize> {
    let first = vectors.first().ok_or(PdrError::EmptyInput("vector batch"))?;
    check_dims(vectors, first.len())?;
    Ok(first.len())
}

/// Per-coordinate mean of a non-empty batch.
pub fn mean<T: Scalar>(vectors: &[Vec<T>]) -> Result<Vec<T>> {
    let dim = batch_dim(vectors)?;
    let mut out = vec![T::zero(); dim];
    for v in vectors {
        for (o, &x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let n = T::from_usize(vectors.len()).unwrap();
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}
