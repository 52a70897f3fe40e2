//! Seeded random projections from the model dimension `p` down to `k`.
//!
//! Two constructions are provided:
//!
//! * [`SparseProjection`]: the Achlioptas three-point law. Each entry equals
//!   `+sqrt(s/k)` or `-sqrt(s/k)` with probability `1/(2s)` each and `0`
//!   otherwise, so a column carries `k/s` nonzeros on average.
//! * [`GaussianProjection`]: i.i.d. `N(0, 1/k)` entries.
//!
//! Neither matrix is ever stored. Column `j` is regenerated on demand from a
//! ChaCha8 stream keyed by the projection seed with stream id `j`, which makes
//! the matrix a pure function of `(seed, k, p, s)` and lets a batch be
//! projected in one sequential pass over the input columns.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PdrError, Result};
use crate::rng::keyed_stream;
use crate::scalar::Scalar;
use crate::vector::check_dims;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    Gaussian,
    Sparse,
}

/// Projection parameters as they appear in the experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionSpec {
    /// Distortion tolerance.
    #[serde(default = "ProjectionSpec::default_epsilon")]
    pub epsilon: f64,
    /// Failure probability.
    #[serde(default = "ProjectionSpec::default_delta")]
    pub delta: f64,
    /// Number of rounds covered by the union bound; `None` sizes `k` for a
    /// single round.
    #[serde(default)]
    pub rounds: Option<u64>,
    /// Achlioptas sparsity `s`; ignored by the Gaussian construction.
    #[serde(default = "ProjectionSpec::default_sparsity")]
    pub sparsity: u32,
    #[serde(default = "ProjectionSpec::default_kind")]
    pub kind: ProjectionKind,
    /// Explicit target dimension, bypassing the embedding bound.
    #[serde(default)]
    pub k_override: Option<usize>,
    /// Reuse round 0's matrix for every round.
    #[serde(default)]
    pub fixed_projection: bool,
}

impl Default for ProjectionSpec {
    fn default() -> Self {
        Self {
            epsilon: Self::default_epsilon(),
            delta: Self::default_delta(),
            rounds: None,
            sparsity: Self::default_sparsity(),
            kind: Self::default_kind(),
            k_override: None,
            fixed_projection: false,
        }
    }
}

impl ProjectionSpec {
    fn default_epsilon() -> f64 {
        0.5
    }

    fn default_delta() -> f64 {
        0.01
    }

    fn default_sparsity() -> u32 {
        8
    }

    fn default_kind() -> ProjectionKind {
        ProjectionKind::Sparse
    }

    pub fn validate(&self) -> Result<()> {
        check_open_unit("epsilon", self.epsilon)?;
        check_open_unit("delta", self.delta)?;
        if self.sparsity < 1 {
            return Err(PdrError::Domain {
                name: "sparsity",
                value: self.sparsity as f64,
                domain: "[1, inf)",
            });
        }
        if self.rounds == Some(0) {
            return Err(PdrError::Domain {
                name: "rounds",
                value: 0.0,
                domain: "[1, inf)",
            });
        }
        if self.k_override == Some(0) {
            return Err(PdrError::Domain {
                name: "k_override",
                value: 0.0,
                domain: "[1, inf)",
            });
        }
        Ok(())
    }

    /// Effective target dimension for `clients` vectors.
    pub fn target_dim(&self, clients: usize) -> Result<usize> {
        self.validate()?;
        match self.k_override {
            Some(k) => Ok(k),
            None => min_projection_dim(clients, self.epsilon, self.delta, self.rounds),
        }
    }
}

fn check_open_unit(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(PdrError::Domain {
            name,
            value,
            domain: "(0, 1)",
        })
    }
}

/// Smallest `k` for which a sub-Gaussian projection embeds the span of
/// `clients` vectors with distortion `epsilon`, failure probability `delta`:
///
/// `k = ceil(18/eps^2 * (M + 2 ln(2/delta)))`, or with `ln(2T/delta)` when the
/// guarantee must hold jointly over `rounds = T` independent matrices.
pub fn min_projection_dim(
    clients: usize,
    epsilon: f64,
    delta: f64,
    rounds: Option<u64>,
) -> Result<usize> {
    if clients == 0 {
        return Err(PdrError::Precondition("client count must be >= 1".into()));
    }
    check_open_unit("epsilon", epsilon)?;
    check_open_unit("delta", delta)?;
    let union = match rounds {
        Some(0) => {
            return Err(PdrError::Domain {
                name: "rounds",
                value: 0.0,
                domain: "[1, inf)",
            })
        }
        Some(t) => t as f64,
        None => 1.0,
    };
    let bound = 18.0 / (epsilon * epsilon) * (clients as f64 + 2.0 * (2.0 * union / delta).ln());
    Ok(bound.ceil() as usize)
}

/// A `k x p` linear map that can regenerate any of its columns.
pub trait LinearSketch<T: Scalar>: Send + Sync {
    fn rows(&self) -> usize;

    fn cols(&self) -> usize;

    /// Replaces `buf` with the nonzero entries of column `col` as
    /// `(row, value)` pairs, rows ascending. Values are relative to
    /// [`LinearSketch::output_scale`].
    fn fill_column(&self, col: usize, buf: &mut Vec<(usize, T)>);

    /// Common factor applied once to every output coordinate.
    fn output_scale(&self) -> T {
        T::one()
    }
}

/// Achlioptas projection with per-column `(row, sign)` entries.
#[derive(Clone, Debug)]
pub struct SparseProjection<T> {
    k: usize,
    p: usize,
    sparsity: u32,
    seed: u64,
    scale: T,
    gap: Geometric,
}

impl<T: Scalar> SparseProjection<T> {
    pub fn new(k: usize, p: usize, sparsity: u32, seed: u64) -> Result<Self> {
        if k == 0 || p == 0 {
            return Err(PdrError::Precondition(format!(
                "projection shape must be positive, got {k}x{p}"
            )));
        }
        if sparsity == 0 {
            return Err(PdrError::Domain {
                name: "sparsity",
                value: 0.0,
                domain: "[1, inf)",
            });
        }
        // For `s` not a power of two, gaps between consecutive nonzeros of a
        // column are Geometric(1/s), an i.i.d. Bernoulli(1/s) mask over the rows.
        let gap = Geometric::new(1.0 / sparsity as f64).expect("1/s is a probability");
        Ok(Self {
            k,
            p,
            sparsity,
            seed,
            scale: T::from_f64_lossy((sparsity as f64 / k as f64).sqrt()),
            gap,
        })
    }

    pub fn sparsity(&self) -> u32 {
        self.sparsity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Magnitude of every nonzero entry, `sqrt(s/k)`.
    pub fn scale(&self) -> T {
        self.scale
    }

    /// Nonzeros of column `col` as `(row, sign)`.
    pub fn nonzeros(&self, col: usize) -> Vec<(usize, i8)> {
        let mut buf = Vec::new();
        self.fill_column(col, &mut buf);
        buf.into_iter()
            .map(|(r, v)| (r, if v > T::zero() { 1 } else { -1 }))
            .collect()
    }
}

impl<T: Scalar> LinearSketch<T> for SparseProjection<T> {
    fn rows(&self) -> usize {
        self.k
    }

    fn cols(&self) -> usize {
        self.p
    }

    fn fill_column(&self, col: usize, buf: &mut Vec<(usize, T)>) {
        buf.clear();
        let mut rng = keyed_stream(self.seed, col as u64);
        if self.sparsity.is_power_of_two() {
            // AND of log2(s) uniform words: each bit is set with probability
            // exactly 1/s, independently, 64 rows per draw.
            let words = self.sparsity.trailing_zeros();
            for base in (0..self.k).step_by(64) {
                let mut mask = u64::MAX;
                for _ in 0..words {
                    mask &= rng.next_u64();
                }
                let signs = rng.next_u64();
                let width = self.k - base;
                if width < 64 {
                    mask &= (1u64 << width) - 1;
                }
                while mask != 0 {
                    let bit = mask.trailing_zeros();
                    let sign = if (signs >> bit) & 1 == 1 { T::one() } else { -T::one() };
                    buf.push((base + bit as usize, sign));
                    mask &= mask - 1;
                }
            }
            return;
        }
        let mut row = 0usize;
        loop {
            let skip = self.gap.sample(&mut rng);
            if skip >= (self.k - row) as u64 {
                break;
            }
            row += skip as usize;
            let sign = if rng.random::<bool>() { T::one() } else { -T::one() };
            buf.push((row, sign));
            row += 1;
            if row == self.k {
                break;
            }
        }
    }

    fn output_scale(&self) -> T {
        self.scale
    }
}

/// Dense projection with i.i.d. `N(0, 1/k)` entries, regenerated per column.
#[derive(Clone, Debug)]
pub struct GaussianProjection<T> {
    k: usize,
    p: usize,
    seed: u64,
    std_dev: T,
}

impl<T: Scalar> GaussianProjection<T> {
    pub fn new(k: usize, p: usize, seed: u64) -> Result<Self> {
        if k == 0 || p == 0 {
            return Err(PdrError::Precondition(format!(
                "projection shape must be positive, got {k}x{p}"
            )));
        }
        Ok(Self {
            k,
            p,
            seed,
            std_dev: T::from_f64_lossy((1.0 / k as f64).sqrt()),
        })
    }
}

impl<T: Scalar> LinearSketch<T> for GaussianProjection<T> {
    fn rows(&self) -> usize {
        self.k
    }

    fn cols(&self) -> usize {
        self.p
    }

    fn fill_column(&self, col: usize, buf: &mut Vec<(usize, T)>) {
        buf.clear();
        let mut rng = keyed_stream(self.seed, col as u64);
        buf.extend((0..self.k).map(|row| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (row, T::from_f64_lossy(z))
        }));
    }

    fn output_scale(&self) -> T {
        self.std_dev
    }
}

/// Either construction, chosen by [`ProjectionKind`].
#[derive(Clone, Debug)]
pub enum Projection<T> {
    Sparse(SparseProjection<T>),
    Gaussian(GaussianProjection<T>),
}

impl<T: Scalar> LinearSketch<T> for Projection<T> {
    fn rows(&self) -> usize {
        match self {
            Projection::Sparse(s) => s.rows(),
            Projection::Gaussian(g) => g.rows(),
        }
    }

    fn cols(&self) -> usize {
        match self {
            Projection::Sparse(s) => s.cols(),
            Projection::Gaussian(g) => g.cols(),
        }
    }

    fn fill_column(&self, col: usize, buf: &mut Vec<(usize, T)>) {
        match self {
            Projection::Sparse(s) => s.fill_column(col, buf),
            Projection::Gaussian(g) => g.fill_column(col, buf),
        }
    }

    fn output_scale(&self) -> T {
        match self {
            Projection::Sparse(s) => s.output_scale(),
            Projection::Gaussian(g) => g.output_scale(),
        }
    }
}

/// Builds the projection for `clients` vectors of dimension `p`.
pub fn build_projection<T: Scalar>(
    spec: &ProjectionSpec,
    clients: usize,
    p: usize,
    seed: u64,
) -> Result<Projection<T>> {
    let k = spec.target_dim(clients)?;
    Ok(match spec.kind {
        ProjectionKind::Sparse => Projection::Sparse(SparseProjection::new(k, p, spec.sparsity, seed)?),
        ProjectionKind::Gaussian => Projection::Gaussian(GaussianProjection::new(k, p, seed)?),
    })
}

/// Projects every vector of `updates` to `k` dimensions.
///
/// Columns are visited once for the whole batch. Each output coordinate is
/// accumulated over columns in ascending order, so `output[i]` depends only on
/// `updates[i]`, never on the rest of the batch.
pub fn project_batch<T: Scalar, P: LinearSketch<T> + ?Sized>(
    projection: &P,
    updates: &[Vec<T>],
) -> Result<Vec<Vec<T>>> {
    let (k, p, m) = (projection.rows(), projection.cols(), updates.len());
    check_dims(updates, p)?;
    if m == 0 {
        return Ok(Vec::new());
    }

    // Row-major k x m accumulator: one contiguous slot per output row.
    let mut acc = vec![T::zero(); k * m];
    let mut column = Vec::new();
    let mut xcol = vec![T::zero(); m];
    for col in 0..p {
        let mut any = false;
        for (x, u) in xcol.iter_mut().zip(updates) {
            *x = u[col];
            any |= *x != T::zero();
        }
        if !any {
            continue;
        }
        projection.fill_column(col, &mut column);
        for &(row, v) in &column {
            let slot = &mut acc[row * m..(row + 1) * m];
            for (a, &x) in slot.iter_mut().zip(&xcol) {
                *a += v * x;
            }
        }
    }

    let scale = projection.output_scale();
    let mut out = vec![vec![T::zero(); k]; m];
    for row in 0..k {
        for (i, o) in out.iter_mut().enumerate() {
            o[row] = acc[row * m + i] * scale;
        }
    }
    Ok(out)
}

/// Projects a single vector. Equivalent to a batch of one.
pub fn project<T: Scalar, P: LinearSketch<T> + ?Sized>(projection: &P, x: &[T]) -> Result<Vec<T>> {
    let mut out = project_batch(projection, std::slice::from_ref(&x.to_vec()))?;
    Ok(out.pop().unwrap())
}
