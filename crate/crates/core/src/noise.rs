//! Dispersive noise samplers, slab-shaped narrow sets, and a Monte-Carlo
//! estimator for the probability a sampler puts on a set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::rng::CounterRng;

/// Truncation radius (in units of `sigma`) used when a Gaussian sampler
/// feeds the optimizer.
pub const DEFAULT_TRUNCATION: f64 = 5.0;

/// Samples `(σ/√d)·χ` with `χ` standard normal.
pub fn sample_scaled_gaussian(sigma: f64, dim: usize, rng: &mut CounterRng) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    fill_scaled_gaussian(sigma, rng, &mut out);
    out
}

fn fill_scaled_gaussian(sigma: f64, rng: &mut CounterRng, out: &mut [f64]) {
    let s = sigma / (out.len() as f64).sqrt();
    rng.fill_normal(out);
    for v in out.iter_mut() {
        *v *= s;
    }
}

/// Scaled Gaussian conditioned on `‖ξ‖ ≤ radius·σ` (rejection sampling).
pub fn sample_truncated_gaussian(sigma: f64, dim: usize, radius: f64, rng: &mut CounterRng) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    fill_truncated_gaussian(sigma, radius, rng, &mut out);
    out
}

fn fill_truncated_gaussian(sigma: f64, radius: f64, rng: &mut CounterRng, out: &mut [f64]) {
    let cap = radius * sigma;
    loop {
        fill_scaled_gaussian(sigma, rng, out);
        if norm(out) <= cap {
            return;
        }
    }
}

/// Uniform on the sphere of radius `sigma`.
pub fn sample_uniform_sphere(sigma: f64, dim: usize, rng: &mut CounterRng) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    fill_uniform_sphere(sigma, rng, &mut out);
    out
}

fn fill_uniform_sphere(sigma: f64, rng: &mut CounterRng, out: &mut [f64]) {
    loop {
        rng.fill_normal(out);
        let n = norm(out);
        if n > 0.0 {
            for v in out.iter_mut() {
                *v *= sigma / n;
            }
            return;
        }
    }
}

/// Uniform in the ball of radius `sigma`: a uniform direction scaled by
/// `σ·U^(1/d)`.
pub fn sample_uniform_ball(sigma: f64, dim: usize, rng: &mut CounterRng) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    fill_uniform_ball(sigma, rng, &mut out);
    out
}

fn fill_uniform_ball(sigma: f64, rng: &mut CounterRng, out: &mut [f64]) {
    fill_uniform_sphere(1.0, rng, out);
    let r = sigma * rng.uniform().powf(1.0 / out.len() as f64);
    for v in out.iter_mut() {
        *v *= r;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseKind {
    /// `(σ/√d)·χ`, optionally conditioned on `‖ξ‖ ≤ truncate·σ`.
    ScaledGaussian { truncate: Option<f64> },
    UniformBall,
    UniformSphere,
    /// Base oracle noise plus an independent artificial perturbation.
    Injected {
        base: Box<NoiseSampler>,
        artificial: Box<NoiseSampler>,
    },
}

/// A zero-mean additive noise distribution in `dim` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSampler {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub dim: usize,
}

impl NoiseSampler {
    fn checked(kind: NoiseKind, sigma: f64, dim: usize) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid(format!("noise sigma must be nonnegative, got {sigma}")));
        }
        if dim == 0 {
            return Err(Error::invalid("noise dimension must be at least 1"));
        }
        Ok(Self { kind, sigma, dim })
    }

    pub fn scaled_gaussian(sigma: f64, dim: usize) -> Result<Self> {
        Self::checked(NoiseKind::ScaledGaussian { truncate: None }, sigma, dim)
    }

    /// Gaussian truncated at `5σ`, the default when feeding the optimizer.
    pub fn truncated_gaussian(sigma: f64, dim: usize) -> Result<Self> {
        Self::truncated_gaussian_at(sigma, dim, DEFAULT_TRUNCATION)
    }

    pub fn truncated_gaussian_at(sigma: f64, dim: usize, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("truncation radius must be positive and finite, got {radius}")));
        }
        Self::checked(NoiseKind::ScaledGaussian { truncate: Some(radius) }, sigma, dim)
    }

    pub fn uniform_ball(sigma: f64, dim: usize) -> Result<Self> {
        Self::checked(NoiseKind::UniformBall, sigma, dim)
    }

    pub fn uniform_sphere(sigma: f64, dim: usize) -> Result<Self> {
        Self::checked(NoiseKind::UniformSphere, sigma, dim)
    }

    /// No noise at all.
    pub fn zero(dim: usize) -> Result<Self> {
        Self::uniform_ball(0.0, dim)
    }

    /// `base + artificial`. The nominal scale is the sum of the two scales.
    pub fn injected(base: NoiseSampler, artificial: NoiseSampler) -> Result<Self> {
        if base.dim != artificial.dim {
            return Err(Error::invalid(format!(
                "injected noise dimensions differ ({} vs {})",
                base.dim, artificial.dim
            )));
        }
        let sigma = base.sigma + artificial.sigma;
        let dim = base.dim;
        Self::checked(
            NoiseKind::Injected {
                base: Box::new(base),
                artificial: Box::new(artificial),
            },
            sigma,
            dim,
        )
    }

    /// Almost-sure bound on `‖ξ‖`, if one exists.
    pub fn norm_bound(&self) -> Option<f64> {
        match &self.kind {
            NoiseKind::ScaledGaussian { truncate } => truncate.map(|t| t * self.sigma),
            NoiseKind::UniformBall | NoiseKind::UniformSphere => Some(self.sigma),
            NoiseKind::Injected { base, artificial } => Some(base.norm_bound()? + artificial.norm_bound()?),
        }
    }

    pub fn sample(&self, rng: &mut CounterRng) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(rng, &mut out);
        out
    }

    pub fn sample_into(&self, rng: &mut CounterRng, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match &self.kind {
            NoiseKind::ScaledGaussian { truncate: None } => fill_scaled_gaussian(self.sigma, rng, out),
            NoiseKind::ScaledGaussian { truncate: Some(t) } => fill_truncated_gaussian(self.sigma, *t, rng, out),
            NoiseKind::UniformBall => fill_uniform_ball(self.sigma, rng, out),
            NoiseKind::UniformSphere => fill_uniform_sphere(self.sigma, rng, out),
            NoiseKind::Injected { base, artificial } => {
                base.sample_into(rng, out);
                let extra = artificial.sample(rng);
                for (o, e) in out.iter_mut().zip(extra) {
                    *o += e;
                }
            }
        }
    }
}

/// Adds an independent draw of `artificial` to `base_sample`.
pub fn inject(base_sample: &[f64], artificial: &NoiseSampler, rng: &mut CounterRng) -> Vec<f64> {
    let mut out = artificial.sample(rng);
    for (o, b) in out.iter_mut().zip(base_sample) {
        *o += b;
    }
    out
}

/// The dispersive scale `q* = σ/(4√d)`.
pub fn narrow_scale(sigma: f64, dim: usize) -> f64 {
    sigma / (4.0 * (dim as f64).sqrt())
}

/// The first-step scale `q₀ = σ·η/(4√d)` seen by an SGD iterate.
pub fn first_step_scale(sigma: f64, eta: f64, dim: usize) -> f64 {
    eta * narrow_scale(sigma, dim)
}

/// Slab `{x : a ≤ ⟨v, x⟩ ≤ a + w}` along a unit direction `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slab {
    direction: Vec<f64>,
    offset: f64,
    width: f64,
}

pub type NarrowSet = Slab;

impl Slab {
    pub fn new(direction: Vec<f64>, offset: f64, width: f64) -> Result<Self> {
        let n = norm(&direction);
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("slab direction must be a unit vector, norm is {n}")));
        }
        if !(width >= 0.0 && width.is_finite() && offset.is_finite()) {
            return Err(Error::invalid(format!("slab needs a finite offset and nonnegative width, got {offset}, {width}")));
        }
        Ok(Self {
            direction,
            offset,
            width,
        })
    }

    /// Slab of width `w` symmetric about the origin.
    pub fn centered(direction: Vec<f64>, width: f64) -> Result<Self> {
        Self::new(direction, -0.5 * width, width)
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if self.width == 0.0 {
            return false;
        }
        let t = dot(&self.direction, x);
        self.offset <= t && t <= self.offset + self.width
    }

    /// Whether `u + q·v` leaves the slab. Holds for every member `u` once
    /// `q > width`.
    pub fn shifted_outside(&self, u: &[f64], q: f64) -> bool {
        let shifted: Vec<f64> = u.iter().zip(&self.direction).map(|(a, v)| a + q * v).collect();
        !self.contains(&shifted)
    }
}

/// Two-sided 99% Hoeffding half-width `√(ln(200)/(2n))`.
pub fn hoeffding_half_width(n_samples: u64) -> f64 {
    (200f64.ln() / (2.0 * n_samples as f64)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub estimate: f64,
    pub n_samples: u64,
    pub half_width: f64,
    pub seed: u64,
}

impl ProbabilityEstimate {
    pub fn from_counts(hits: u64, n_samples: u64, seed: u64) -> Self {
        Self {
            estimate: hits as f64 / n_samples as f64,
            n_samples,
            half_width: hoeffding_half_width(n_samples),
            seed,
        }
    }

    pub fn lower(&self) -> f64 {
        self.estimate - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.estimate + self.half_width
    }
}

pub const MIN_PROBABILITY_SAMPLES: u64 = 10_000;

/// Monte-Carlo estimate of `P(ξ ∈ set)`.
pub fn estimate_set_probability(
    sampler: &NoiseSampler,
    set: &Slab,
    n_samples: u64,
    seed: u64,
) -> Result<ProbabilityEstimate> {
    if n_samples < MIN_PROBABILITY_SAMPLES {
        return Err(Error::invalid(format!(
            "need at least {MIN_PROBABILITY_SAMPLES} samples, got {n_samples}"
        )));
    }
    if set.direction.len() != sampler.dim {
        return Err(Error::invalid("slab and sampler dimensions differ"));
    }
    let mut rng = CounterRng::new(seed);
    let mut xi = vec![0.0; sampler.dim];
    let mut hits = 0;
    for _ in 0..n_samples {
        sampler.sample_into(&mut rng, &mut xi);
        if set.contains(&xi) {
            hits += 1;
        }
    }
    Ok(ProbabilityEstimate::from_counts(hits, n_samples, seed))
}
