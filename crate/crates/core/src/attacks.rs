//! Byzantine update generators.
//!
//! Attackers are omniscient: the informed attacks see the true benign updates
//! of the current round. Informed attacks send one identical vector from every
//! byzantine client; Gaussian attackers draw independently per client and
//! round.

use num_traits::Float;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PdrError, Result};
use crate::rng::{derive_seed, keyed_stream, Domain};
use crate::scalar::Scalar;
use crate::vector::batch_dim;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Gaussian,
    SignFlip,
    Lie,
    Foe,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Gaussian => "gaussian",
            AttackKind::SignFlip => "sign_flip",
            AttackKind::Lie => "lie",
            AttackKind::Foe => "foe",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = PdrError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| PdrError::config("attack.kind", format!("unknown attack `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default = "AttackConfig::default_kind")]
    pub kind: AttackKind,
    /// Per-coordinate variance of the Gaussian attack.
    #[serde(default = "AttackConfig::default_gaussian_variance")]
    pub gaussian_variance: f64,
    #[serde(default = "AttackConfig::default_sign_flip_scale")]
    pub sign_flip_scale: f64,
    #[serde(default = "AttackConfig::default_lie_c")]
    pub lie_c: f64,
    #[serde(default = "AttackConfig::default_foe_q")]
    pub foe_q: f64,
    /// Attack randomness seed; the harness derives it from the master seed
    /// when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: Self::default_kind(),
            gaussian_variance: Self::default_gaussian_variance(),
            sign_flip_scale: Self::default_sign_flip_scale(),
            lie_c: Self::default_lie_c(),
            foe_q: Self::default_foe_q(),
            seed: None,
        }
    }
}

impl AttackConfig {
    fn default_kind() -> AttackKind {
        AttackKind::None
    }

    fn default_gaussian_variance() -> f64 {
        90.0
    }

    fn default_sign_flip_scale() -> f64 {
        -3.0
    }

    fn default_lie_c() -> f64 {
        0.7
    }

    fn default_foe_q() -> f64 {
        -0.1
    }

    pub fn of_kind(kind: AttackKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_variance > 0.0) || !self.gaussian_variance.is_finite() {
            return Err(PdrError::Domain {
                name: "gaussian_variance",
                value: self.gaussian_variance,
                domain: "(0, inf)",
            });
        }
        for (name, v) in [
            ("sign_flip_scale", self.sign_flip_scale),
            ("lie_c", self.lie_c),
            ("foe_q", self.foe_q),
        ] {
            if !v.is_finite() {
                return Err(PdrError::Domain {
                    name,
                    value: v,
                    domain: "finite reals",
                });
            }
        }
        Ok(())
    }
}

/// Crafts one vector per entry of `byzantine_clients` for round `round`.
///
/// `dim` is the model dimension; it must match the benign updates when any
/// are given.
pub fn craft<T: Scalar>(
    config: &AttackConfig,
    benign: &[Vec<T>],
    dim: usize,
    byzantine_clients: &[usize],
    round: u64,
) -> Result<Vec<Vec<T>>> {
    config.validate()?;
    if byzantine_clients.is_empty() {
        return Ok(Vec::new());
    }
    if !benign.is_empty() {
        crate::vector::check_dims(benign, dim)?;
    }
    let count = byzantine_clients.len();
    let identical = |v: Vec<T>| vec![v; count];
    match config.kind {
        AttackKind::None => Err(PdrError::Precondition(
            "attack kind `none` cannot craft byzantine updates".into(),
        )),
        AttackKind::Gaussian => {
            let round_seed = derive_seed(config.seed.unwrap_or(0), Domain::Attack, round);
            let std_dev = config.gaussian_variance.sqrt();
            Ok(byzantine_clients
                .iter()
                .map(|&client| {
                    let mut rng = keyed_stream(round_seed, client as u64);
                    (0..dim)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            T::from_f64_lossy(std_dev * z)
                        })
                        .collect()
                })
                .collect())
        }
        AttackKind::SignFlip => {
            let sum = benign_sum(benign)?;
            let scale = T::from_f64_lossy(config.sign_flip_scale);
            Ok(identical(sum.into_iter().map(|x| scale * x).collect()))
        }
        AttackKind::Lie => {
            let (mean, std) = benign_moments(benign)?;
            let c = T::from_f64_lossy(config.lie_c);
            Ok(identical(mean.iter().zip(&std).map(|(&a, &s)| a + c * s).collect()))
        }
        AttackKind::Foe => {
            let sum = benign_sum(benign)?;
            let factor = T::from_f64_lossy(config.foe_q) / T::from_usize(benign.len()).unwrap();
            Ok(identical(sum.into_iter().map(|x| factor * x).collect()))
        }
    }
}

fn benign_sum<T: Scalar>(benign: &[Vec<T>]) -> Result<Vec<T>> {
    let dim = batch_dim(benign).map_err(|_| PdrError::EmptyInput("benign updates"))?;
    let mut sum = vec![T::zero(); dim];
    for g in benign {
        for (s, &x) in sum.iter_mut().zip(g) {
            *s += x;
        }
    }
    Ok(sum)
}

/// Coordinate-wise mean and population standard deviation.
///
/// Both are accumulated as offsets from the first update, so a batch of
/// identical updates yields that update and a zero deviation exactly.
fn benign_moments<T: Scalar>(benign: &[Vec<T>]) -> Result<(Vec<T>, Vec<T>)> {
    let dim = batch_dim(benign).map_err(|_| PdrError::EmptyInput("benign updates"))?;
    let n = T::from_usize(benign.len()).unwrap();
    let base = &benign[0];
    let mut shift = vec![T::zero(); dim];
    for g in benign {
        for ((s, &x), &b) in shift.iter_mut().zip(g).zip(base) {
            *s += x - b;
        }
    }
    let mean: Vec<T> = base.iter().zip(&shift).map(|(&b, &s)| b + s / n).collect();
    let mut var = vec![T::zero(); dim];
    for g in benign {
        for ((v, &x), &a) in var.iter_mut().zip(g).zip(&mean) {
            let d = x - a;
            *v += d * d;
        }
    }
    let std = var.into_iter().map(|v| Float::sqrt(v / n)).collect();
    Ok((mean, std))
}
