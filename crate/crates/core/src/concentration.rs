//! Monte-Carlo tail experiments for a vector martingale (norm-bounded
//! increments) and a scalar martingale (bounded increments with known
//! variance).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::noise::{hoeffding_half_width, sample_uniform_sphere};
use crate::rng::{substream, CounterRng};

pub const MIN_TRIALS: u64 = 10_000;
const SHARDS: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    /// Thresholds, ascending.
    pub lambda_grid: Vec<f64>,
    pub empirical_tail: Vec<f64>,
    pub bound: Vec<f64>,
    pub n_trials: u64,
    pub seed: u64,
    /// 99% Hoeffding half-width of each empirical tail.
    pub ci: f64,
    /// Every empirical tail is at most its bound plus `ci`.
    pub pass: bool,
}

impl TailReport {
    fn new(lambda_grid: Vec<f64>, counts: Vec<u64>, bound: Vec<f64>, n_trials: u64, seed: u64) -> Self {
        let ci = hoeffding_half_width(n_trials);
        let empirical_tail: Vec<f64> = counts.iter().map(|c| *c as f64 / n_trials as f64).collect();
        let pass = empirical_tail.iter().zip(&bound).all(|(e, b)| *e <= b + ci);
        Self {
            lambda_grid,
            empirical_tail,
            bound,
            n_trials,
            seed,
            ci,
            pass,
        }
    }
}

fn check_trials(n_trials: u64) -> Result<()> {
    if n_trials < MIN_TRIALS {
        return Err(Error::invalid(format!("need at least {MIN_TRIALS} trials, got {n_trials}")));
    }
    Ok(())
}

/// Runs `n_trials` trials split over fixed shards with their own substreams
/// and sums the per-threshold exceedance counts.
fn sharded_counts<F>(n_trials: u64, seed: u64, n_thresholds: usize, trial: F) -> Vec<u64>
where
    F: Fn(&mut CounterRng, &mut [u64]) + Sync,
{
    (0..SHARDS)
        .into_par_iter()
        .map(|shard| {
            let trials = n_trials / SHARDS + u64::from(shard < n_trials % SHARDS);
            let mut rng = CounterRng::new(substream(seed, shard));
            let mut counts = vec![0u64; n_thresholds];
            for _ in 0..trials {
                trial(&mut rng, &mut counts);
            }
            counts
        })
        .reduce(
            || vec![0u64; n_thresholds],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

/// Sums of `k` independent uniform-sphere increments of norm `step_bound` in
/// `dim` dimensions; `P(‖Σε‖ ≥ λ)` against `4·exp(−λ²/(4K·B²))`.
pub fn pinelis_tail_experiment(
    dim: usize,
    k: u64,
    step_bound: f64,
    lambda_grid: &[f64],
    n_trials: u64,
    seed: u64,
) -> Result<TailReport> {
    check_trials(n_trials)?;
    if dim == 0 || k == 0 {
        return Err(Error::invalid("dim and K must be at least 1"));
    }
    if !(step_bound > 0.0 && step_bound.is_finite()) {
        return Err(Error::invalid(format!("step bound must be positive, got {step_bound}")));
    }
    let mut grid = lambda_grid.to_vec();
    if grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::invalid("thresholds must be finite and nonnegative"));
    }
    grid.sort_by(f64::total_cmp);

    let counts = sharded_counts(n_trials, seed, grid.len(), |rng, counts| {
        let mut sum = vec![0.0; dim];
        for _ in 0..k {
            let step = sample_uniform_sphere(step_bound, dim, rng);
            sum.iter_mut().zip(step).for_each(|(s, e)| *s += e);
        }
        let n = norm(&sum);
        for (c, l) in counts.iter_mut().zip(&grid) {
            if n >= *l {
                *c += 1;
            }
        }
    });
    let scale = 4.0 * k as f64 * step_bound * step_bound;
    let bound = grid.iter().map(|l| 4.0 * (-l * l / scale).exp()).collect();
    Ok(TailReport::new(grid, counts, bound, n_trials, seed))
}

/// Threshold `2·max{2√V, b√ln(1/δ)}·√ln(1/δ)` with `V = K·σ²`.
pub fn bernstein_threshold(k: u64, step_bound: f64, sigma: f64, delta: f64) -> f64 {
    let v = k as f64 * sigma * sigma;
    let l = (1.0 / delta).ln();
    2.0 * (2.0 * v.sqrt()).max(step_bound * l.sqrt()) * l.sqrt()
}

/// Scalar martingale with i.i.d. steps `±b` (probability `σ²/(2b²)` each)
/// and `0` otherwise, so each step has variance `σ²`. Compares
/// `P(Σε > threshold)` with `ln(K)·δ`.
pub fn bernstein_tail_experiment(
    k: u64,
    step_bound: f64,
    sigma: f64,
    delta: f64,
    n_trials: u64,
    seed: u64,
) -> Result<TailReport> {
    check_trials(n_trials)?;
    if !(delta > 0.0 && delta < (-1.0f64).exp()) {
        return Err(Error::invalid(format!("delta must lie in (0, 1/e), got {delta}")));
    }
    if k < 4 {
        return Err(Error::invalid(format!("K must be at least 4, got {k}")));
    }
    if !(step_bound > 0.0 && sigma >= 0.0 && sigma <= step_bound) {
        return Err(Error::invalid(format!("need 0 ≤ σ ≤ b and b > 0, got σ = {sigma}, b = {step_bound}")));
    }
    let threshold = bernstein_threshold(k, step_bound, sigma, delta);
    let p_half = sigma * sigma / (2.0 * step_bound * step_bound);
    let counts = sharded_counts(n_trials, seed, 1, |rng, counts| {
        let mut s = 0.0;
        for _ in 0..k {
            let u = rng.uniform();
            if u < p_half {
                s += step_bound;
            } else if u < 2.0 * p_half {
                s -= step_bound;
            }
        }
        if s > threshold {
            counts[0] += 1;
        }
    });
    let bound = vec![(k as f64).ln() * delta];
    Ok(TailReport::new(vec![threshold], counts, bound, n_trials, seed))
}
