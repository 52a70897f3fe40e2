//! Synthetic federated objectives with known constants.
//!
//! Client `m` owns `F_m(w) = 1/2 (w - theta_m)^T A (w - theta_m)` with a
//! diagonal curvature `A` shared by all clients, its eigenvalues spread
//! linearly over `[mu, L]`. Sharing `A` makes the gradient dissimilarity
//! `A (theta_bar - theta_m)` independent of `w`, so the heterogeneity bound
//! `kappa` holds everywhere. The optima are placed around a random center and
//! rescaled so the most dissimilar client sits at exactly `kappa`.
//!
//! The non-convex variant adds `a * sum_i (1 - cos w_i)` to every client,
//! which keeps the gradient Lipschitz with constant `L + a` and makes the
//! objective non-convex once `a > mu`.

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PdrError, Result};
use crate::rng::{derive_seed, keyed_stream, Domain};
use crate::scalar::Scalar;
use crate::vector::{norm_sq, ModelVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Quadratic,
    NonconvexToy,
}

/// Curvature bounds `mu <= L`. A single number means `mu = L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Curvature {
    Isotropic(f64),
    Range {
        mu: f64,
        #[serde(rename = "L", alias = "l")]
        l: f64,
    },
}

impl Curvature {
    pub fn mu(&self) -> f64 {
        match *self {
            Curvature::Isotropic(c) => c,
            Curvature::Range { mu, .. } => mu,
        }
    }

    pub fn l(&self) -> f64 {
        match *self {
            Curvature::Isotropic(c) => c,
            Curvature::Range { l, .. } => l,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    /// Model dimension.
    pub p: usize,
    /// Number of clients.
    #[serde(rename = "M", alias = "clients")]
    pub clients: usize,
    /// Heterogeneity bound: `max_m |grad F_m(w) - grad F(w)| = kappa`.
    #[serde(default = "TaskSpec::default_kappa")]
    pub hetero_kappa: f64,
    /// Stochastic gradient noise: `E|noise|^2 = sigma^2`.
    #[serde(default)]
    pub noise_sigma: f64,
    /// `S_m` per client; uniform when absent.
    #[serde(default)]
    pub sample_counts: Option<Vec<u64>>,
    #[serde(default = "TaskSpec::default_curvature")]
    pub curvature: Curvature,
    #[serde(default = "TaskSpec::default_kind")]
    pub task_kind: TaskKind,
    /// Amplitude `a` of the sinusoidal term of the non-convex task.
    #[serde(default = "TaskSpec::default_wave")]
    pub wave_amplitude: f64,
    /// Distance of the initial model from the center of the optima.
    #[serde(default = "TaskSpec::default_init_radius")]
    pub init_radius: f64,
    /// Task seed; derived from the master seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl TaskSpec {
    fn default_kappa() -> f64 {
        0.1
    }

    fn default_curvature() -> Curvature {
        Curvature::Isotropic(1.0)
    }

    fn default_kind() -> TaskKind {
        TaskKind::Quadratic
    }

    fn default_wave() -> f64 {
        1.5
    }

    fn default_init_radius() -> f64 {
        10.0
    }

    /// Quadratic task with defaults for everything but the shape.
    pub fn quadratic(p: usize, clients: usize) -> Self {
        Self {
            p,
            clients,
            hetero_kappa: Self::default_kappa(),
            noise_sigma: 0.0,
            sample_counts: None,
            curvature: Self::default_curvature(),
            task_kind: TaskKind::Quadratic,
            wave_amplitude: Self::default_wave(),
            init_radius: Self::default_init_radius(),
            seed: None,
        }
    }

    pub fn sample_counts(&self) -> Vec<u64> {
        self.sample_counts.clone().unwrap_or_else(|| vec![1; self.clients])
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(PdrError::config("task.p", "must be >= 1"));
        }
        if self.clients == 0 {
            return Err(PdrError::config("task.M", "must be >= 1"));
        }
        let (mu, l) = (self.curvature.mu(), self.curvature.l());
        if !(mu > 0.0 && mu <= l && l.is_finite()) {
            return Err(PdrError::config("task.curvature", format!("need 0 < mu <= L, got mu = {mu}, L = {l}")));
        }
        if !(self.hetero_kappa >= 0.0 && self.hetero_kappa.is_finite()) {
            return Err(PdrError::config("task.hetero_kappa", "must be finite and >= 0"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(PdrError::config("task.noise_sigma", "must be finite and >= 0"));
        }
        if !(self.wave_amplitude >= 0.0 && self.wave_amplitude.is_finite()) {
            return Err(PdrError::config("task.wave_amplitude", "must be finite and >= 0"));
        }
        if !(self.init_radius >= 0.0 && self.init_radius.is_finite()) {
            return Err(PdrError::config("task.init_radius", "must be finite and >= 0"));
        }
        if let Some(s) = &self.sample_counts {
            if s.len() != self.clients {
                return Err(PdrError::config(
                    "task.sample_counts",
                    format!("expected {} entries, got {}", self.clients, s.len()),
                ));
            }
            if s.contains(&0) {
                return Err(PdrError::config("task.sample_counts", "entries must be positive"));
            }
        }
        Ok(())
    }

    /// Lipschitz constant of every gradient.
    pub fn smoothness(&self) -> f64 {
        match self.task_kind {
            TaskKind::Quadratic => self.curvature.l(),
            TaskKind::NonconvexToy => self.curvature.l() + self.wave_amplitude,
        }
    }
}

/// A materialized task: curvature, client optima, and sample counts.
#[derive(Clone, Debug)]
pub struct FederatedTask<T> {
    spec: TaskSpec,
    seed: u64,
    noise_seed: u64,
    curvature: Vec<T>,
    optima: Vec<ModelVector<T>>,
    center: ModelVector<T>,
    sample_counts: Vec<u64>,
}

impl<T: Scalar> FederatedTask<T> {
    pub fn new(spec: &TaskSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (p, m) = (spec.p, spec.clients);
        let (mu, l) = (spec.curvature.mu(), spec.curvature.l());
        let curvature: Vec<f64> = (0..p)
            .map(|i| if p == 1 { mu } else { mu + (l - mu) * i as f64 / (p - 1) as f64 })
            .collect();
        let sample_counts = spec.sample_counts();

        let mut rng = keyed_stream(derive_seed(seed, Domain::Task, 0), 0);
        let center: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();

        // Gradient offsets r_m = A (theta_m - theta_bar): random directions,
        // recentered so their S-weighted mean vanishes, then scaled so the
        // largest has norm exactly kappa.
        let mut offsets: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = norm_sq(&v).sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let total: f64 = sample_counts.iter().map(|&s| s as f64).sum();
        let mut mean = vec![0.0; p];
        for (r, &s) in offsets.iter().zip(&sample_counts) {
            for (a, &x) in mean.iter_mut().zip(r) {
                *a += s as f64 * x / total;
            }
        }
        for r in offsets.iter_mut() {
            r.iter_mut().zip(&mean).for_each(|(x, a)| *x -= a);
        }
        let widest = offsets.iter().map(|r| norm_sq(r).sqrt()).fold(0.0, f64::max);
        let factor = if widest > 0.0 { spec.hetero_kappa / widest } else { 0.0 };

        let optima = offsets
            .iter()
            .map(|r| {
                (0..p)
                    .map(|i| T::from_f64_lossy(center[i] + factor * r[i] / curvature[i]))
                    .collect()
            })
            .collect();

        Ok(Self {
            spec: spec.clone(),
            seed,
            noise_seed: seed,
            curvature: curvature.into_iter().map(T::from_f64_lossy).collect(),
            center: center.into_iter().map(T::from_f64_lossy).collect(),
            optima,
            sample_counts,
        })
    }

    /// Builds a quadratic task from explicit optima and a diagonal curvature.
    pub fn from_parts(curvature: Vec<T>, optima: Vec<ModelVector<T>>, sample_counts: Vec<u64>, noise_sigma: f64, seed: u64) -> Result<Self> {
        let p = curvature.len();
        crate::vector::check_dims(&optima, p)?;
        if optima.len() != sample_counts.len() || optima.is_empty() {
            return Err(PdrError::Precondition("one sample count per client optimum".into()));
        }
        let mu = curvature.iter().map(|c| c.to_f64_lossy()).fold(f64::INFINITY, f64::min);
        let l = curvature.iter().map(|c| c.to_f64_lossy()).fold(0.0, f64::max);
        let total: f64 = sample_counts.iter().map(|&s| s as f64).sum();
        let center = (0..p)
            .map(|i| {
                let acc: f64 = optima.iter().zip(&sample_counts).map(|(o, &s)| s as f64 * o[i].to_f64_lossy()).sum();
                T::from_f64_lossy(acc / total)
            })
            .collect();
        let spec = TaskSpec {
            noise_sigma,
            sample_counts: Some(sample_counts.clone()),
            curvature: Curvature::Range { mu, l },
            seed: Some(seed),
            ..TaskSpec::quadratic(p, optima.len())
        };
        spec.validate()?;
        Ok(Self {
            spec,
            seed,
            noise_seed: seed,
            curvature,
            optima,
            center,
            sample_counts,
        })
    }

    /// Same task with an independent gradient-noise stream.
    pub fn with_noise_seed(mut self, noise_seed: u64) -> Self {
        self.noise_seed = noise_seed;
        self
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.p
    }

    pub fn clients(&self) -> usize {
        self.optima.len()
    }

    pub fn sample_counts(&self) -> &[u64] {
        &self.sample_counts
    }

    pub fn curvature(&self) -> &[T] {
        &self.curvature
    }

    pub fn client_optimum(&self, client: usize) -> &[T] {
        &self.optima[client]
    }

    fn check_model(&self, w: &[T]) -> Result<()> {
        if w.len() != self.dim() {
            return Err(PdrError::DimensionMismatch {
                expected: self.dim(),
                actual: w.len(),
            });
        }
        Ok(())
    }

    fn wave(&self) -> Option<T> {
        match self.spec.task_kind {
            TaskKind::Quadratic => None,
            TaskKind::NonconvexToy => Some(T::from_f64_lossy(self.spec.wave_amplitude)),
        }
    }

    /// `grad F_m(w)`, plus zero-mean Gaussian noise with `E|noise|^2 = sigma^2`
    /// when `stochastic`. The noise is keyed by `(noise seed, round, client)`.
    pub fn client_gradient(&self, client: usize, w: &[T], round: u64, stochastic: bool) -> Result<ModelVector<T>> {
        self.check_model(w)?;
        let theta = &self.optima[client];
        let mut g: Vec<T> = (0..w.len()).map(|i| self.curvature[i] * (w[i] - theta[i])).collect();
        if let Some(a) = self.wave() {
            g.iter_mut().zip(w).for_each(|(gi, &wi)| *gi += a * Float::sin(wi));
        }
        if stochastic && self.spec.noise_sigma > 0.0 {
            let std_dev = self.spec.noise_sigma / (self.dim() as f64).sqrt();
            let mut rng = keyed_stream(derive_seed(self.noise_seed, Domain::Noise, round), client as u64);
            for gi in g.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *gi += T::from_f64_lossy(std_dev * z);
            }
        }
        Ok(g)
    }

    /// `grad F(w)`, the sample-weighted average of the exact client gradients.
    pub fn global_gradient(&self, w: &[T]) -> Result<ModelVector<T>> {
        self.check_model(w)?;
        let mut g: Vec<T> = (0..w.len()).map(|i| self.curvature[i] * (w[i] - self.center[i])).collect();
        if let Some(a) = self.wave() {
            g.iter_mut().zip(w).for_each(|(gi, &wi)| *gi += a * Float::sin(wi));
        }
        Ok(g)
    }

    pub fn client_loss(&self, client: usize, w: &[T]) -> Result<T> {
        self.check_model(w)?;
        let theta = &self.optima[client];
        let half = T::from_f64_lossy(0.5);
        let mut loss = (0..w.len()).fold(T::zero(), |acc, i| {
            let d = w[i] - theta[i];
            acc + half * self.curvature[i] * d * d
        });
        if let Some(a) = self.wave() {
            loss += w.iter().fold(T::zero(), |acc, &wi| acc + a * (T::one() - Float::cos(wi)));
        }
        Ok(loss)
    }

    pub fn global_loss(&self, w: &[T]) -> Result<T> {
        let total = T::from_u64(self.sample_counts.iter().sum()).unwrap();
        let mut acc = T::zero();
        for (m, &s) in self.sample_counts.iter().enumerate() {
            acc += T::from_u64(s).unwrap() * self.client_loss(m, w)?;
        }
        Ok(acc / total)
    }

    /// Minimizer of the quadratic global objective, `sum S_m theta_m / sum S_m`.
    pub fn global_optimum(&self) -> Result<ModelVector<T>> {
        match self.spec.task_kind {
            TaskKind::Quadratic => Ok(self.center.clone()),
            TaskKind::NonconvexToy => Err(PdrError::Unsupported(
                "the non-convex task has no closed-form optimum".into(),
            )),
        }
    }

    /// Starting model: `init_radius` away from the center of the optima in a
    /// seeded random direction.
    pub fn initial_model(&self) -> ModelVector<T> {
        let mut rng = keyed_stream(derive_seed(self.seed, Domain::Task, 1), 0);
        let dir: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = norm_sq(&dir).sqrt().max(f64::MIN_POSITIVE);
        self.center
            .iter()
            .zip(&dir)
            .map(|(&c, &d)| c + T::from_f64_lossy(self.spec.init_radius * d / n))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `eta = 1 / (L sqrt(T))`.
    ConstantNonconvex,
    /// `eta_t = 2 / (mu (t + gamma))`, `gamma = 4 L / mu`.
    DecayingStronglyConvex,
}

/// Learning rate of round `t` out of `rounds`.
pub fn lr_schedule(kind: ScheduleKind, l: f64, mu: f64, rounds: u64, t: u64) -> Result<f64> {
    if !(mu > 0.0 && l >= mu && l.is_finite()) {
        return Err(PdrError::Domain {
            name: "L",
            value: l,
            domain: "L >= mu > 0",
        });
    }
    if rounds == 0 || t >= rounds {
        return Err(PdrError::Domain {
            name: "t",
            value: t as f64,
            domain: "0 <= t < T, T >= 1",
        });
    }
    Ok(match kind {
        ScheduleKind::ConstantNonconvex => 1.0 / (l * (rounds as f64).sqrt()),
        ScheduleKind::DecayingStronglyConvex => {
            let gamma = 4.0 * l / mu;
            2.0 / (mu * (t as f64 + gamma))
        }
    })
}
