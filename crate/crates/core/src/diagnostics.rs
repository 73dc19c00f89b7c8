//! Empirical checks of the escape and descent machinery: coupled escape
//! trials, escape frequencies, the positive/non-positive curvature split of
//! the local quadratic model, and a matrix-power norm bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::dense_hessian_eigen;
use crate::error::{Error, Result};
use crate::hyperparams::Schedule;
use crate::linalg::{dist, dot, norm, sub, Matrix};
use crate::noise::{hoeffding_half_width, NoiseSampler};
use crate::optimizer::{run_ball_sgd, run_ball_sgd_with, BudgetMode, RunOptions, RunResult};
use crate::problems::Objective;
use crate::rng::CounterRng;

/// Eigenvalues at or below this go to the non-positive subspace.
pub const ZERO_EIGEN_THRESHOLD: f64 = 1e-12;

fn check_unit(direction: &[f64]) -> Result<()> {
    let n = norm(direction);
    if (n - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("direction must be a unit vector, norm is {n}")));
    }
    Ok(())
}

fn check_negative_curvature(obj: &dyn Objective, x0: &[f64], schedule: &Schedule) -> Result<f64> {
    let lambda = dense_hessian_eigen(obj, x0)?.min();
    if lambda > -schedule.delta2 {
        return Err(Error::PreconditionViolated(format!(
            "λ_min(∇²f(x⁰)) = {lambda} exceeds −δ₂ = {}",
            -schedule.delta2
        )));
    }
    Ok(lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledOutcome {
    /// First `k` with `‖w^k(u) − x⁰‖ > B`; `None` when no exit happened
    /// before `K_o`.
    pub exit_a: Option<u64>,
    /// Same for the shifted start `u + q·direction`.
    pub exit_b: Option<u64>,
    pub ko: u128,
    /// Neither trajectory exited before `K_o`.
    pub both_stuck: bool,
}

/// Runs SGD from `u` and from `u + q·direction` with the same noise vector
/// added on every step, recording both exit times from the ball around `x0`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_escape_trial(
    obj: &dyn Objective,
    noise: &NoiseSampler,
    schedule: &Schedule,
    x0: &[f64],
    u: &[f64],
    q: f64,
    direction: &[f64],
    seed: u64,
) -> Result<CoupledOutcome> {
    let d = obj.dim();
    if x0.len() != d || u.len() != d || direction.len() != d || noise.dim != d {
        return Err(Error::invalid("coupled trial inputs must all have the objective's dimension"));
    }
    check_unit(direction)?;
    if !(q >= 0.0 && q.is_finite()) {
        return Err(Error::invalid(format!("offset q must be nonnegative, got {q}")));
    }
    let radius = schedule.ball_radius;
    if dist(u, x0) > radius {
        return Err(Error::invalid("start u lies outside the ball around x⁰"));
    }
    check_negative_curvature(obj, x0, schedule)?;

    let eta = schedule.eta;
    let ko = schedule.ko;
    let mut a = u.to_vec();
    let mut b: Vec<f64> = u.iter().zip(direction).map(|(x, v)| x + q * v).collect();
    let mut exit_a = None;
    let mut exit_b = (dist(&b, x0) > radius).then_some(0u64);

    let mut rng = CounterRng::new(seed);
    let mut xi = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut k: u64 = 0;
    while (k as u128 + 1) < ko && (exit_a.is_none() || exit_b.is_none()) {
        k += 1;
        noise.sample_into(&mut rng, &mut xi);
        for (w, exit) in [(&mut a, &mut exit_a), (&mut b, &mut exit_b)] {
            if exit.is_some() {
                continue;
            }
            obj.gradient_into(w, &mut g);
            for ((wi, gi), e) in w.iter_mut().zip(&g).zip(&xi) {
                *wi -= eta * (gi + e);
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step: k });
            }
            if dist(w, x0) > radius {
                *exit = Some(k);
            }
        }
    }
    Ok(CoupledOutcome {
        exit_a,
        exit_b,
        ko,
        both_stuck: exit_a.is_none() && exit_b.is_none(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub n: u64,
    pub hits: u64,
    pub frequency: f64,
    pub ci: f64,
    pub bound: f64,
    pub pass: bool,
}

impl FrequencyReport {
    /// `frequency ≥ bound − ci`.
    pub fn at_least(hits: u64, n: u64, bound: f64) -> Self {
        let frequency = hits as f64 / n as f64;
        let ci = hoeffding_half_width(n);
        Self {
            n,
            hits,
            frequency,
            ci,
            bound,
            pass: frequency >= bound - ci,
        }
    }

    /// `frequency ≤ bound + ci`.
    pub fn at_most(hits: u64, n: u64, bound: f64) -> Self {
        let mut r = Self::at_least(hits, n, bound);
        r.pass = r.frequency <= bound + r.ci;
        r
    }
}

/// Fraction of independent first episodes from `x0` that leave the ball
/// within `K₀` steps, compared with `1 − p/3`.
pub fn escape_frequency(
    obj: &dyn Objective,
    noise: &NoiseSampler,
    schedule: &Schedule,
    x0: &[f64],
    n_seeds: u64,
    base_seed: u64,
) -> Result<FrequencyReport> {
    if n_seeds == 0 {
        return Err(Error::invalid("n_seeds must be at least 1"));
    }
    check_negative_curvature(obj, x0, schedule)?;
    let budget = BudgetMode::UnlimitedEpisodes { max_episodes: 1 };
    let exits: Vec<bool> = (0..n_seeds)
        .into_par_iter()
        .map(|i| {
            run_ball_sgd(obj, noise, schedule, x0, base_seed.wrapping_add(i), budget)
                .map(|r| r.trace.first_exit().is_some())
        })
        .collect::<Result<_>>()?;
    let hits = exits.iter().filter(|e| **e).count() as u64;
    Ok(FrequencyReport::at_least(hits, n_seeds, schedule.escape_bound()))
}

/// Both-stuck frequency of coupled trials started at `x0` and
/// `x0 + q·e₁`, with `e₁` the eigenvector of `λ_min(∇²f(x0))`; compared
/// with `0.1`.
pub fn coupled_escape_frequency(
    obj: &dyn Objective,
    noise: &NoiseSampler,
    schedule: &Schedule,
    x0: &[f64],
    q: f64,
    n_seeds: u64,
    base_seed: u64,
) -> Result<FrequencyReport> {
    if n_seeds == 0 {
        return Err(Error::invalid("n_seeds must be at least 1"));
    }
    let direction = dense_hessian_eigen(obj, x0)?.vector(0);
    let stuck: Vec<bool> = (0..n_seeds)
        .into_par_iter()
        .map(|i| {
            coupled_escape_trial(obj, noise, schedule, x0, x0, q, &direction, base_seed.wrapping_add(i))
                .map(|o| o.both_stuck)
        })
        .collect::<Result<_>>()?;
    let hits = stuck.iter().filter(|s| **s).count() as u64;
    Ok(FrequencyReport::at_most(hits, n_seeds, 0.1))
}

/// Fraction of first episodes from `x0` whose difference iterate ends with
/// `‖z^𝒦‖ ≤ 3B/32`; compared with `1 − p/6`.
pub fn zbound_frequency(
    obj: &dyn Objective,
    noise: &NoiseSampler,
    schedule: &Schedule,
    x0: &[f64],
    n_seeds: u64,
    base_seed: u64,
) -> Result<FrequencyReport> {
    if n_seeds == 0 {
        return Err(Error::invalid("n_seeds must be at least 1"));
    }
    let options = RunOptions::new(BudgetMode::UnlimitedEpisodes { max_episodes: 1 }).storing();
    let passes: Vec<bool> = (0..n_seeds)
        .into_par_iter()
        .map(|i| {
            let run = run_ball_sgd_with(obj, noise, schedule, x0, base_seed.wrapping_add(i), &options)?;
            quadratic_model_run(obj, &run, 0).map(|t| t.z_pass)
        })
        .collect::<Result<_>>()?;
    let hits = passes.iter().filter(|p| **p).count() as u64;
    Ok(FrequencyReport::at_least(hits, n_seeds, 1.0 - schedule.p / 6.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceSplit {
    pub eigenvalues: Vec<f64>,
    pub p_s: Matrix,
    pub p_perp: Matrix,
    pub h_s: Matrix,
    pub h_perp: Matrix,
}

/// Splits `∇²f(x0)` into its positive-curvature part (`λ > 1e-12`) and the rest.
pub fn split_subspaces(obj: &dyn Objective, x0: &[f64]) -> Result<SubspaceSplit> {
    let eig = dense_hessian_eigen(obj, x0)?;
    Ok(split_from_eigen(&eig.values, |k| eig.vector(k)))
}

fn split_from_eigen(values: &[f64], vector: impl Fn(usize) -> Vec<f64>) -> SubspaceSplit {
    let n = values.len();
    let mut p_s = Matrix::zeros(n);
    let mut p_perp = Matrix::zeros(n);
    let mut h_s = Matrix::zeros(n);
    let mut h_perp = Matrix::zeros(n);
    for (k, &lambda) in values.iter().enumerate() {
        let v = vector(k);
        let (p, h) = if lambda > ZERO_EIGEN_THRESHOLD {
            (&mut p_s, &mut h_s)
        } else {
            (&mut p_perp, &mut h_perp)
        };
        for i in 0..n {
            for j in 0..n {
                let vv = v[i] * v[j];
                p[(i, j)] += vv;
                h[(i, j)] += lambda * vv;
            }
        }
    }
    SubspaceSplit {
        eigenvalues: values.to_vec(),
        p_s,
        p_perp,
        h_s,
        h_perp,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionStep {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub g_s: f64,
    pub g_perp: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTrace {
    pub split: SubspaceSplit,
    /// Steps `k = 0, …, 𝒦` of the episode.
    pub steps: Vec<DecompositionStep>,
    /// Max over steps of `‖u + v − (x − x⁰)‖`.
    pub reconstruction_error: f64,
    /// Max over steps of `|g_S(u) + g_⊥(v) − g(x)|`.
    pub model_split_error: f64,
    /// `‖P_S + P_⊥ − I‖_F`.
    pub projector_sum_error: f64,
    /// `‖P_S² − P_S‖_F`.
    pub projector_idempotence_error: f64,
    /// `‖H_S + H_⊥ − H‖_F`.
    pub hessian_split_error: f64,
    /// Max over steps of the gap between `z^{k+1}` and its one-step recursion.
    pub z_recursion_error: f64,
    /// Max over in-ball iterates of `‖∇f(x) − ∇g(x)‖`.
    pub taylor_gap: f64,
    /// `ρB²/2`
    pub taylor_bound: f64,
    pub taylor_pass: bool,
    pub z_final_norm: f64,
    /// `3B/32`
    pub z_bound: f64,
    pub z_pass: bool,
}

/// Reconstructs the quadratic-model decomposition along one stored episode.
pub fn quadratic_model_run(obj: &dyn Objective, run: &RunResult, episode: usize) -> Result<DecompositionTrace> {
    let (iterates, noises) = match (&run.trace.iterates, &run.trace.noises) {
        (Some(i), Some(n)) => (i, n),
        _ => return Err(Error::MissingIterates),
    };
    let ep = run
        .trace
        .episodes
        .get(episode)
        .ok_or_else(|| Error::invalid(format!("run has no episode {episode}")))?;
    let x0 = &ep.anchor;
    let start = ep.start_step as usize;
    let len = ep.length as usize;
    if start + len >= iterates.len() {
        return Err(Error::MissingIterates);
    }

    let eta = run.schedule.eta;
    let radius = run.schedule.ball_radius;
    let h = obj.hessian(x0);
    let split = split_subspaces(obj, x0)?;
    let g0 = obj.gradient(x0);
    let ps_g0 = split.p_s.matvec(&g0);
    let model_grad = |e: &[f64]| -> Vec<f64> { g0.iter().zip(h.matvec(e)).map(|(a, b)| a + b).collect() };
    let grad_s = |u: &[f64]| -> Vec<f64> { ps_g0.iter().zip(split.h_s.matvec(u)).map(|(a, b)| a + b).collect() };
    let g_s = |u: &[f64]| dot(&g0, u) + 0.5 * split.h_s.quad_form(u);
    let g_perp = |v: &[f64]| dot(&g0, v) + 0.5 * split.h_perp.quad_form(v);

    let n = x0.len();
    let identity = Matrix::identity(n);
    let projector_sum_error = split.p_s.add(&split.p_perp).sub(&identity).frobenius();
    let projector_idempotence_error = split.p_s.matmul(&split.p_s).sub(&split.p_s).frobenius();
    let hessian_split_error = split.h_s.add(&split.h_perp).sub(&h.symmetrized()).frobenius();

    let rho = obj.hessian_lipschitz();
    let taylor_bound = 0.5 * rho * radius * radius;

    let mut steps = Vec::with_capacity(len + 1);
    let mut y = vec![0.0; n];
    let mut reconstruction_error: f64 = 0.0;
    let mut model_split_error: f64 = 0.0;
    let mut z_recursion_error: f64 = 0.0;
    let mut taylor_gap: f64 = 0.0;
    let mut predicted_z: Option<Vec<f64>> = None;

    for k in 0..=len {
        let x = &iterates[start + k];
        let e = sub(x, x0);
        let u = split.p_s.matvec(&e);
        let v = split.p_perp.matvec(&e);
        let z = sub(&u, &y);

        let recon: Vec<f64> = u.iter().zip(&v).zip(&e).map(|((a, b), c)| a + b - c).collect();
        reconstruction_error = reconstruction_error.max(norm(&recon));
        let g_val = dot(&g0, &e) + 0.5 * h.quad_form(&e);
        let (gs, gp) = (g_s(&u), g_perp(&v));
        model_split_error = model_split_error.max((gs + gp - g_val).abs());
        if let Some(p) = &predicted_z {
            z_recursion_error = z_recursion_error.max(crate::linalg::dist(p, &z));
        }

        let grad_f = obj.gradient(x);
        if norm(&e) <= radius {
            taylor_gap = taylor_gap.max(crate::linalg::dist(&grad_f, &model_grad(&e)));
        }

        if k < len {
            // z^{k+1} = (I − ηH_S)z^k − η(P_S∇f(x^k) − ∇g_S(u^k)) − ηP_Sξ^{k+1}
            let hz = split.h_s.matvec(&z);
            let ps_grad = split.p_s.matvec(&grad_f);
            let gsu = grad_s(&u);
            let ps_xi = split.p_s.matvec(&noises[start + k]);
            predicted_z = Some(
                (0..n)
                    .map(|i| z[i] - eta * hz[i] - eta * (ps_grad[i] - gsu[i]) - eta * ps_xi[i])
                    .collect(),
            );
            let gy = grad_s(&y);
            let y_next: Vec<f64> = y.iter().zip(&gy).map(|(a, b)| a - eta * b).collect();
            steps.push(DecompositionStep {
                u,
                v,
                y: std::mem::replace(&mut y, y_next),
                z,
                g_s: gs,
                g_perp: gp,
                g: g_val,
            });
        } else {
            steps.push(DecompositionStep {
                u,
                v,
                y: y.clone(),
                z,
                g_s: gs,
                g_perp: gp,
                g: g_val,
            });
        }
    }

    let z_final_norm = norm(&steps.last().map(|s| s.z.clone()).unwrap_or_default());
    let z_bound = 3.0 * radius / 32.0;
    Ok(DecompositionTrace {
        split,
        steps,
        reconstruction_error,
        model_split_error,
        projector_sum_error,
        projector_idempotence_error,
        hessian_split_error,
        z_recursion_error,
        taylor_gap,
        taylor_bound,
        taylor_pass: taylor_gap <= taylor_bound,
        z_final_norm,
        z_bound,
        z_pass: z_final_norm <= z_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerBound {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// `‖(I − aA)^i A (I − aA)^j‖₂` against `1/(a(i + j + 1))` for PSD `A`.
pub fn matrix_power_bound_check(a_mat: &Matrix, a: f64, i: u32, j: u32) -> Result<PowerBound> {
    let asymmetry = a_mat.asymmetry();
    if asymmetry > 1e-12 {
        return Err(Error::NonSymmetric { asymmetry });
    }
    let eig = a_mat.symmetric_eigen();
    let spectral = eig.spectral_norm();
    if eig.min() < -1e-12 * spectral.max(1.0) {
        return Err(Error::invalid(format!("A must be positive semidefinite (λ_min = {})", eig.min())));
    }
    if !(a > 0.0 && a * spectral <= 1.0 + 1e-12) {
        return Err(Error::invalid(format!("a = {a} must lie in (0, 1/‖A‖₂ = {}]", 1.0 / spectral)));
    }
    let p = i + j;
    let lhs = eig
        .values
        .iter()
        .map(|&l| (l * (1.0 - a * l).powi(p as i32)).abs())
        .fold(0.0, f64::max);
    let rhs = 1.0 / (a * (p as f64 + 1.0));
    Ok(PowerBound {
        lhs,
        rhs,
        pass: lhs <= rhs * (1.0 + 1e-12),
    })
}
