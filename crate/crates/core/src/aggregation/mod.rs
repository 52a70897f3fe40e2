//! Vector-level robust aggregators that emit reliability weights.
//!
//! Every aggregator maps a batch of client vectors to a point on the
//! probability simplex. The weights can be computed on compressed vectors and
//! then applied to the original, full-dimensional ones with
//! [`apply_weights`]; that split is the whole reason aggregators never return
//! vectors.
//!
//! | Kind | Weights | Precondition |
//! |------|---------|--------------|
//! | [`AggregatorKind::Mean`] | `S_m / sum S` | `M >= 1` |
//! | [`AggregatorKind::Krum`] | indicator of the Krum winner | `M >= f + 3` |
//! | [`AggregatorKind::BulyanSelect`] | uniform over `M - 2f` iterated-Krum picks | `M - 2f >= 1` |
//! | [`AggregatorKind::GeometricMedian`] | final Weiszfeld weights | `M >= 1` |

mod krum;
mod weiszfeld;

pub use krum::{bulyan_select_weights, krum_scores, krum_weights, pairwise_sq_distances};
pub use weiszfeld::{geometric_median_weights, weiszfeld, WeiszfeldOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{PdrError, Result};
use crate::scalar::Scalar;
use crate::vector::check_dims;

/// Tolerance on `sum(weights) == 1`.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// A point on the probability simplex, one entry per client.
#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityWeights<T>(Vec<T>);

impl<T: Scalar> ReliabilityWeights<T> {
    /// Wraps `weights`, checking the simplex invariant.
    pub fn new(weights: Vec<T>) -> Result<Self> {
        let w = Self(weights);
        w.validate()?;
        Ok(w)
    }

    pub(crate) fn new_unchecked(weights: Vec<T>) -> Self {
        Self(weights)
    }

    /// Indicator weights selecting client `index` out of `len`.
    pub fn indicator(len: usize, index: usize) -> Self {
        let mut w = vec![T::zero(); len];
        w[index] = T::one();
        Self(w)
    }

    /// Uniform weights over `selected`, zero elsewhere.
    pub fn uniform_over(len: usize, selected: &[usize]) -> Self {
        let share = T::one() / T::from_usize(selected.len()).unwrap();
        let mut w = vec![T::zero(); len];
        for &i in selected {
            w[i] = share;
        }
        Self(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(PdrError::EmptyInput("reliability weights"));
        }
        if let Some(bad) = self.0.iter().find(|w| !(**w >= T::zero())) {
            return Err(PdrError::Precondition(format!("negative or NaN weight {bad}")));
        }
        let sum: f64 = self.0.iter().map(|w| w.to_f64_lossy()).sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(PdrError::Precondition(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Weights as `f64`, for reporting.
    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|w| w.to_f64_lossy()).collect()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Mean,
    Krum,
    BulyanSelect,
    GeometricMedian,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Mean => "mean",
            AggregatorKind::Krum => "krum",
            AggregatorKind::BulyanSelect => "bulyan_select",
            AggregatorKind::GeometricMedian => "geometric_median",
        }
    }
}

impl std::str::FromStr for AggregatorKind {
    type Err = PdrError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| PdrError::config("aggregator.kind", format!("unknown aggregator `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorConfig {
    #[serde(default = "AggregatorConfig::default_kind")]
    pub kind: AggregatorKind,
    /// Robustness parameter `f`. `None` lets the harness derive it from the
    /// byzantine ratio.
    #[serde(default)]
    pub assumed_byzantine: Option<usize>,
    #[serde(default = "AggregatorConfig::default_max_iters")]
    pub weiszfeld_max_iters: usize,
    #[serde(default = "AggregatorConfig::default_tol")]
    pub weiszfeld_tol: f64,
    #[serde(default = "AggregatorConfig::default_weight_by_samples")]
    pub weight_by_samples: bool,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            kind: Self::default_kind(),
            assumed_byzantine: None,
            weiszfeld_max_iters: Self::default_max_iters(),
            weiszfeld_tol: Self::default_tol(),
            weight_by_samples: Self::default_weight_by_samples(),
        }
    }
}

impl AggregatorConfig {
    fn default_kind() -> AggregatorKind {
        AggregatorKind::GeometricMedian
    }

    fn default_max_iters() -> usize {
        100
    }

    fn default_tol() -> f64 {
        1e-8
    }

    fn default_weight_by_samples() -> bool {
        true
    }

    pub fn with_kind(kind: AggregatorKind, assumed_byzantine: usize) -> Self {
        Self {
            kind,
            assumed_byzantine: Some(assumed_byzantine),
            ..Default::default()
        }
    }

    pub fn f(&self) -> usize {
        self.assumed_byzantine.unwrap_or(0)
    }

    /// Checks the aggregator's preconditions for `clients` inputs.
    pub fn validate(&self, clients: usize) -> Result<()> {
        if clients == 0 {
            return Err(PdrError::EmptyInput("client updates"));
        }
        let f = self.f();
        match self.kind {
            AggregatorKind::Krum if clients < f + 3 => Err(PdrError::Precondition(format!(
                "krum needs M >= f + 3, got M = {clients}, f = {f}"
            ))),
            AggregatorKind::BulyanSelect if clients < 2 * f + 1 => Err(PdrError::Precondition(
                format!("bulyan_select needs M - 2f >= 1, got M = {clients}, f = {f}"),
            )),
            AggregatorKind::GeometricMedian if self.weiszfeld_max_iters == 0 => Err(
                PdrError::Precondition("weiszfeld_max_iters must be >= 1".into()),
            ),
            AggregatorKind::GeometricMedian if !(self.weiszfeld_tol >= 0.0) => {
                Err(PdrError::Precondition("weiszfeld_tol must be >= 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Reliability weights for `vectors` under `config`.
///
/// `sample_counts` holds `S_m` per client; it only influences the mean and
/// the geometric median.
pub fn compute_weights<T: Scalar>(
    config: &AggregatorConfig,
    vectors: &[Vec<T>],
    sample_counts: &[u64],
) -> Result<ReliabilityWeights<T>> {
    config.validate(vectors.len())?;
    if sample_counts.len() != vectors.len() {
        return Err(PdrError::DimensionMismatch {
            expected: vectors.len(),
            actual: sample_counts.len(),
        });
    }
    match config.kind {
        AggregatorKind::Mean => mean_weights(sample_counts, config.weight_by_samples),
        AggregatorKind::Krum => krum_weights(vectors, config.f()),
        AggregatorKind::BulyanSelect => bulyan_select_weights(vectors, config.f()),
        AggregatorKind::GeometricMedian => geometric_median_weights(
            vectors,
            sample_counts,
            config.weight_by_samples,
            config.weiszfeld_max_iters,
            config.weiszfeld_tol,
        ),
    }
}

/// Non-robust baseline: proportional to sample counts (or uniform).
pub fn mean_weights<T: Scalar>(sample_counts: &[u64], weight_by_samples: bool) -> Result<ReliabilityWeights<T>> {
    let masses = client_masses::<T>(sample_counts, weight_by_samples)?;
    let total: T = masses.iter().copied().sum();
    Ok(ReliabilityWeights(masses.into_iter().map(|s| s / total).collect()))
}

/// Per-client mass used by the sample-aware aggregators.
pub(crate) fn client_masses<T: Scalar>(sample_counts: &[u64], weight_by_samples: bool) -> Result<Vec<T>> {
    if sample_counts.is_empty() {
        return Err(PdrError::EmptyInput("client updates"));
    }
    if !weight_by_samples {
        return Ok(vec![T::one(); sample_counts.len()]);
    }
    if sample_counts.contains(&0) {
        return Err(PdrError::Precondition("sample counts must be positive".into()));
    }
    Ok(sample_counts.iter().map(|&s| T::from_u64(s).unwrap()).collect())
}

/// `sum_m alpha_m g_m` over full-dimensional `updates`.
///
/// Zero-weight clients are skipped entirely, so a rejected vector holding
/// non-finite values cannot leak into the aggregate.
pub fn apply_weights<T: Scalar>(weights: &ReliabilityWeights<T>, updates: &[Vec<T>]) -> Result<Vec<T>> {
    if weights.len() != updates.len() {
        return Err(PdrError::DimensionMismatch {
            expected: weights.len(),
            actual: updates.len(),
        });
    }
    let dim = crate::vector::batch_dim(updates)?;
    check_dims(updates, dim)?;
    Ok(weighted_sum(weights.as_slice(), updates, dim))
}

pub(crate) fn weighted_sum<T: Scalar>(weights: &[T], updates: &[Vec<T>], dim: usize) -> Vec<T> {
    let mut out = vec![T::zero(); dim];
    for (&a, g) in weights.iter().zip(updates) {
        if a != T::zero() {
            crate::vector::axpy(a, g, &mut out);
        }
    }
    out
}
