//! Plain SGD steps, ball-controlled SGD, and noise-scheduled SGD.
//!
//! Both drivers share one loop. An episode starts at an anchor `x⁰`; each step
//! moves `x ← x − η(∇f(x) + ξ)`. When `‖x − x⁰‖ > B` the iterate becomes the
//! new anchor. When `K₀` steps pass without an exit, the run stops and outputs
//! the mean of `x⁰, …, x^{K₀−1}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperparams::Schedule;
use crate::linalg::dist;
use crate::noise::NoiseSampler;
use crate::problems::{Objective, StochasticOracle};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum BudgetMode {
    /// Stop after `T₀` total steps.
    Theorem,
    /// Stop after `max_episodes` ball exits.
    UnlimitedEpisodes { max_episodes: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub budget: BudgetMode,
    /// Keep every iterate and every noise realization.
    pub store_iterates: bool,
    /// Hard cap on total steps regardless of the budget mode.
    pub step_limit: Option<u64>,
}

impl RunOptions {
    pub fn new(budget: BudgetMode) -> Self {
        Self {
            budget,
            store_iterates: false,
            step_limit: None,
        }
    }

    pub fn storing(mut self) -> Self {
        self.store_iterates = true;
        self
    }

    pub fn with_step_limit(mut self, limit: u64) -> Self {
        self.step_limit = Some(limit);
        self
    }
}

/// One span between anchor resets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    /// Global step index at which the anchor was set.
    pub start_step: u64,
    pub anchor: Vec<f64>,
    /// Steps taken in the episode (the exit step, or `K₀` when it completed).
    pub length: u64,
    pub exited: bool,
    pub f_anchor: f64,
    /// `f` at the exit iterate, or at the last iterate of an unfinished episode.
    pub f_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    /// `x^0 … x^T` when stored.
    pub iterates: Option<Vec<Vec<f64>>>,
    /// Total noise added at each step (`noises[t]` moved `x^t` to `x^{t+1}`).
    pub noises: Option<Vec<Vec<f64>>>,
    pub episodes: Vec<Episode>,
    pub exits: u64,
    pub total_steps: u64,
    pub k0_reached: bool,
    pub output: Option<Vec<f64>>,
    pub sg_cost: u64,
    /// Steps on which scheduled Gaussian noise was added.
    pub injections: u64,
    pub final_iterate: Vec<f64>,
}

impl RunTrace {
    /// Exit step of the first episode, if it exited.
    pub fn first_exit(&self) -> Option<u64> {
        self.episodes.first().filter(|e| e.exited).map(|e| e.length)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub trace: RunTrace,
    pub terminated: Termination,
    pub schedule: Schedule,
    pub seed: u64,
}

/// `x − η(∇f(x) + ξ)`, consuming one stochastic gradient.
pub fn sgd_step(x: &[f64], oracle: &mut StochasticOracle, eta: f64, rng: &mut CounterRng) -> Result<Vec<f64>> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("step size must be nonnegative, got {eta}")));
    }
    let d = x.len();
    let mut g = vec![0.0; d];
    let mut xi = vec![0.0; d];
    oracle.draw_into(x, rng, &mut g, &mut xi);
    let next: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - eta * b).collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: oracle.samples_drawn(),
        });
    }
    Ok(next)
}

struct Injection<'a> {
    sampler: &'a NoiseSampler,
    period: u128,
}

fn run(
    obj: &dyn Objective,
    noise: &NoiseSampler,
    schedule: &Schedule,
    x_init: &[f64],
    seed: u64,
    options: &RunOptions,
    injection: Option<Injection>,
) -> Result<RunResult> {
    let d = obj.dim();
    if x_init.len() != d {
        return Err(Error::invalid(format!("x_init has length {}, objective dimension is {d}", x_init.len())));
    }
    if schedule.k0 == 0 {
        return Err(Error::invalid("k0 must be at least 1"));
    }
    if !(schedule.eta >= 0.0 && schedule.ball_radius > 0.0) {
        return Err(Error::invalid("schedule needs eta ≥ 0 and a positive ball radius"));
    }
    let mut oracle = StochasticOracle::new(obj, noise)?;
    let mut rng = CounterRng::new(seed);
    let eta = schedule.eta;
    let radius = schedule.ball_radius;
    let k0 = schedule.k0;

    let mut x = x_init.to_vec();
    let mut anchor = x.clone();
    let mut f_anchor = obj.value(&anchor);
    let mut start_step = 0u64;
    let mut sum = x.clone();
    let mut k: u64 = 0;
    let mut t: u64 = 0;
    let mut injections = 0u64;
    let mut episodes = Vec::new();
    let mut exits = 0u64;
    let mut output = None;

    let mut iterates = options.store_iterates.then(|| vec![x.clone()]);
    let mut noises = options.store_iterates.then(Vec::new);

    let mut g = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut extra = vec![0.0; d];

    let terminated = loop {
        let out_of_budget = match options.budget {
            BudgetMode::Theorem => t as u128 >= schedule.t0,
            BudgetMode::UnlimitedEpisodes { max_episodes } => exits >= max_episodes,
        };
        if out_of_budget || options.step_limit.is_some_and(|l| t >= l) {
            episodes.push(Episode {
                start_step,
                anchor: anchor.clone(),
                length: k,
                exited: false,
                f_anchor,
                f_end: obj.value(&x),
            });
            break Termination::BudgetExhausted;
        }

        oracle.draw_into(&x, &mut rng, &mut g, &mut xi);
        if let Some(inj) = &injection {
            if (k as u128).is_multiple_of(inj.period) {
                inj.sampler.sample_into(&mut rng, &mut extra);
                for ((gi, xii), e) in g.iter_mut().zip(xi.iter_mut()).zip(&extra) {
                    *gi += e;
                    *xii += e;
                }
                injections += 1;
            }
        }
        for (xv, gv) in x.iter_mut().zip(&g) {
            *xv -= eta * gv;
        }
        t += 1;
        k += 1;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: t });
        }
        if let Some(it) = iterates.as_mut() {
            it.push(x.clone());
        }
        if let Some(ns) = noises.as_mut() {
            ns.push(xi.clone());
        }

        if dist(&x, &anchor) > radius {
            let f_exit = obj.value(&x);
            episodes.push(Episode {
                start_step,
                anchor: std::mem::replace(&mut anchor, x.clone()),
                length: k,
                exited: true,
                f_anchor,
                f_end: f_exit,
            });
            exits += 1;
            f_anchor = f_exit;
            start_step = t;
            sum.copy_from_slice(&x);
            k = 0;
        } else if k as u128 >= k0 {
            let mean: Vec<f64> = sum.iter().map(|s| s / k0 as f64).collect();
            episodes.push(Episode {
                start_step,
                anchor: anchor.clone(),
                length: k,
                exited: false,
                f_anchor,
                f_end: obj.value(&x),
            });
            output = Some(mean);
            break Termination::Converged;
        } else {
            for (s, v) in sum.iter_mut().zip(&x) {
                *s += v;
            }
        }
    };

    let trace = RunTrace {
        iterates,
        noises,
        episodes,
        exits,
        total_steps: t,
        k0_reached: terminated == Termination::Converged,
        output,
        sg_cost: oracle.samples_drawn(),
        injections,
        final_iterate: x,
    };
    Ok(RunResult {
        trace,
        terminated,
        schedule: schedule.clone(),
        seed,
    })
}

/// Ball-controlled SGD.
pub fn run_ball_sgd(
    obj: &dyn Objective,
    noise: &NoiseSampler,
    schedule: &Schedule,
    x_init: &[f64],
    seed: u64,
    budget: BudgetMode,
) -> Result<RunResult> {
    run(obj, noise, schedule, x_init, seed, &RunOptions::new(budget), None)
}

pub fn run_ball_sgd_with(
    obj: &dyn Objective,
    noise: &NoiseSampler,
    schedule: &Schedule,
    x_init: &[f64],
    seed: u64,
    options: &RunOptions,
) -> Result<RunResult> {
    run(obj, noise, schedule, x_init, seed, options, None)
}

/// Ball-controlled SGD that adds a truncated `N(0, σ²/d·I)` draw on every
/// step with `k ≡ 0 (mod K_o)`.
pub fn run_noise_scheduled_sgd(
    obj: &dyn Objective,
    base_noise: &NoiseSampler,
    injection_sigma: f64,
    schedule: &Schedule,
    x_init: &[f64],
    seed: u64,
    budget: BudgetMode,
) -> Result<RunResult> {
    run_noise_scheduled_sgd_with(
        obj,
        base_noise,
        injection_sigma,
        schedule,
        x_init,
        seed,
        &RunOptions::new(budget),
    )
}

pub fn run_noise_scheduled_sgd_with(
    obj: &dyn Objective,
    base_noise: &NoiseSampler,
    injection_sigma: f64,
    schedule: &Schedule,
    x_init: &[f64],
    seed: u64,
    options: &RunOptions,
) -> Result<RunResult> {
    if schedule.ko == 0 {
        return Err(Error::invalid("ko must be at least 1"));
    }
    let sampler = NoiseSampler::truncated_gaussian(injection_sigma, obj.dim())?;
    let injection = Injection {
        sampler: &sampler,
        period: schedule.ko,
    };
    run(obj, base_noise, schedule, x_init, seed, options, Some(injection))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDescent {
    pub episode: usize,
    pub start_step: u64,
    pub length: u64,
    pub f_anchor: f64,
    pub f_exit: f64,
    pub f_drop: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentReport {
    pub episodes: Vec<EpisodeDescent>,
    pub pass_fraction: f64,
}

/// Required per-episode decrease `B²/(7ηK₀)`.
pub fn descent_threshold(schedule: &Schedule) -> f64 {
    schedule.ball_radius * schedule.ball_radius / (7.0 * schedule.eta * schedule.k0 as f64)
}

/// Checks `f(anchor) − f(exit) ≥ B²/(7ηK₀)` for every exit episode.
pub fn episode_descent_report(result: &RunResult) -> DescentReport {
    let threshold = descent_threshold(&result.schedule);
    let episodes: Vec<EpisodeDescent> = result
        .trace
        .episodes
        .iter()
        .enumerate()
        .filter(|(_, e)| e.exited)
        .map(|(i, e)| {
            let f_drop = e.f_anchor - e.f_end;
            EpisodeDescent {
                episode: i,
                start_step: e.start_step,
                length: e.length,
                f_anchor: e.f_anchor,
                f_exit: e.f_end,
                f_drop,
                threshold,
                pass: f_drop >= threshold,
            }
        })
        .collect();
    let pass_fraction = if episodes.is_empty() {
        1.0
    } else {
        episodes.iter().filter(|e| e.pass).count() as f64 / episodes.len() as f64
    };
    DescentReport {
        episodes,
        pass_fraction,
    }
}
