//! Experiment configuration, multi-seed orchestration, and persistence.
//!
//! A config is a JSON document:
//!
//! ```json
//! {
//!   "objective": {"kind": "quartic", "dim": 2, "box_radius": 10.0},
//!   "noise": {"kind": "uniform-ball", "sigma": 0.1},
//!   "schedule": {"mode": "manual", "epsilon": 1.6e-5, "p": 0.1, "eta": 1e-3, "ball_radius": 0.05},
//!   "algorithm": "ball-sgd",
//!   "n_seeds": 20,
//!   "base_seed": 0,
//!   "budget_mode": "unlimited-episodes",
//!   "max_episodes": 1000,
//!   "output_dir": "out"
//! }
//! ```
//!
//! Unknown keys are rejected. Run `i` uses seed `base_seed + i`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{certify, Certificate};
use crate::error::{Error, Result};
use crate::hyperparams::{
    derive_schedule, manual_schedule, validate_schedule, ManualSchedule, ProblemConstants, Schedule,
    ScheduleValidation,
};
use crate::linalg::Matrix;
use crate::noise::{NoiseSampler, DEFAULT_TRUNCATION};
use crate::optimizer::{
    episode_descent_report, run_ball_sgd_with, run_noise_scheduled_sgd_with, BudgetMode, DescentReport, RunOptions,
    RunResult, Termination,
};
use crate::problems::{MatrixFactorization, Objective, Quadratic, QuarticSaddle, DEFAULT_BOX_RADIUS};

/// Runs whose worst-case step count exceeds this need an explicit `step_limit`.
pub const MAX_UNGUARDED_STEPS: u128 = 1_000_000_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

fn wrap_field(field: &str, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        other => Error::config(field, other.to_string()),
    }
}

impl ObjectiveSpec {
    pub fn build(&self) -> Result<Box<dyn Objective>> {
        let kind = self
            .kind
            .as_deref()
            .ok_or_else(|| Error::config("objective.kind", "missing objective kind"))?;
        let radius = self.box_radius.unwrap_or(DEFAULT_BOX_RADIUS);
        match kind {
            "quartic" => {
                let dim = self
                    .dim
                    .ok_or_else(|| Error::config("objective.dim", "quartic needs a dimension"))?;
                Ok(Box::new(
                    QuarticSaddle::with_box(dim, radius).map_err(|e| wrap_field("objective.dim", e))?,
                ))
            }
            "quadratic" => {
                let rows = self
                    .h
                    .as_ref()
                    .ok_or_else(|| Error::config("objective.h", "quadratic needs a Hessian matrix"))?;
                let h = Matrix::from_rows(rows).map_err(|e| wrap_field("objective.h", e))?;
                let b = self.b.clone().unwrap_or_else(|| vec![0.0; h.dim()]);
                Ok(Box::new(Quadratic::new(h, b).map_err(|e| wrap_field("objective.h", e))?))
            }
            "matrix-factorization" => {
                let rows = self
                    .m
                    .as_ref()
                    .ok_or_else(|| Error::config("objective.m", "matrix factorization needs a target matrix"))?;
                let m = Matrix::from_rows(rows).map_err(|e| wrap_field("objective.m", e))?;
                let rank = self
                    .rank
                    .ok_or_else(|| Error::config("objective.rank", "matrix factorization needs a rank"))?;
                Ok(Box::new(
                    MatrixFactorization::with_radius(m, rank, radius).map_err(|e| wrap_field("objective.m", e))?,
                ))
            }
            other => Err(Error::config("objective.kind", format!("unknown objective kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Truncation radius in units of `sigma` for Gaussian noise (default 5).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate: Option<f64>,
    /// Disable Gaussian truncation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub untruncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Box<NoiseSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artificial: Option<Box<NoiseSpec>>,
}

impl NoiseSpec {
    pub fn build(&self, dim: usize) -> Result<NoiseSampler> {
        self.build_at("noise", dim)
    }

    fn build_at(&self, path: &str, dim: usize) -> Result<NoiseSampler> {
        let field = |name: &str| format!("{path}.{name}");
        let kind = self
            .kind
            .as_deref()
            .ok_or_else(|| Error::config(field("kind"), "missing noise kind"))?;
        let sigma = || {
            self.sigma
                .ok_or_else(|| Error::config(field("sigma"), "missing noise scale"))
        };
        let built = match kind {
            "none" => NoiseSampler::zero(dim),
            "scaled-gaussian" if self.untruncated => NoiseSampler::scaled_gaussian(sigma()?, dim),
            "scaled-gaussian" => {
                NoiseSampler::truncated_gaussian_at(sigma()?, dim, self.truncate.unwrap_or(DEFAULT_TRUNCATION))
            }
            "uniform-ball" => NoiseSampler::uniform_ball(sigma()?, dim),
            "uniform-sphere" => NoiseSampler::uniform_sphere(sigma()?, dim),
            "injected" => {
                let base = self
                    .base
                    .as_ref()
                    .ok_or_else(|| Error::config(field("base"), "injected noise needs a base sampler"))?
                    .build_at(&field("base"), dim)?;
                let artificial = self
                    .artificial
                    .as_ref()
                    .ok_or_else(|| Error::config(field("artificial"), "injected noise needs an artificial sampler"))?
                    .build_at(&field("artificial"), dim)?;
                NoiseSampler::injected(base, artificial)
            }
            other => return Err(Error::config(field("kind"), format!("unknown noise kind `{other}`"))),
        };
        built.map_err(|e| wrap_field(&field("sigma"), e))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub mode: Option<String>,
    pub epsilon: Option<f64>,
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<u128>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ko: Option<u128>,
}

impl ScheduleSpec {
    pub fn resolve(&self, consts: &ProblemConstants) -> Result<Schedule> {
        let epsilon = self
            .epsilon
            .ok_or_else(|| Error::config("schedule.epsilon", "missing target accuracy"))?;
        let p = self.p.ok_or_else(|| Error::config("schedule.p", "missing failure probability"))?;
        match self.mode.as_deref().unwrap_or("theoretical") {
            "theoretical" => derive_schedule(consts, epsilon, p),
            "manual" => {
                let m = ManualSchedule {
                    epsilon,
                    p,
                    eta: self
                        .eta
                        .ok_or_else(|| Error::config("schedule.eta", "manual schedules need a step size"))?,
                    ball_radius: self
                        .ball_radius
                        .ok_or_else(|| Error::config("schedule.ball_radius", "manual schedules need a ball radius"))?,
                    k0: self.k0,
                    ko: self.ko,
                };
                manual_schedule(consts, &m).map_err(|e| wrap_field("schedule", e))
            }
            other => Err(Error::config("schedule.mode", format!("unknown schedule mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    /// `ball-sgd` (default) or `noise-scheduled`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<String>,
    /// Scale of the scheduled Gaussian noise; defaults to the noise scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection_sigma: Option<f64>,
    #[serde(default = "default_seeds")]
    pub n_seeds: u64,
    #[serde(default)]
    pub base_seed: u64,
    /// `theorem` (default) or `unlimited-episodes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_episodes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_init: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub store_iterates: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_limit: Option<u64>,
}

fn default_seeds() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    BallSgd,
    NoiseScheduled,
}

/// Everything a config resolves to before any run starts.
pub struct Resolved {
    pub objective: Box<dyn Objective>,
    pub noise: NoiseSampler,
    pub constants: ProblemConstants,
    pub schedule: Schedule,
    pub algorithm: Algorithm,
    pub injection_sigma: f64,
    pub options: RunOptions,
    pub x_init: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        match self.algorithm.as_deref().unwrap_or("ball-sgd") {
            "ball-sgd" => Ok(Algorithm::BallSgd),
            "noise-scheduled" => Ok(Algorithm::NoiseScheduled),
            other => Err(Error::config("algorithm", format!("unknown algorithm `{other}`"))),
        }
    }

    pub fn budget(&self) -> Result<BudgetMode> {
        match self.budget_mode.as_deref().unwrap_or("theorem") {
            "theorem" => Ok(BudgetMode::Theorem),
            "unlimited-episodes" => Ok(BudgetMode::UnlimitedEpisodes {
                max_episodes: self
                    .max_episodes
                    .ok_or_else(|| Error::config("max_episodes", "unlimited-episodes mode needs max_episodes"))?,
            }),
            other => Err(Error::config("budget_mode", format!("unknown budget mode `{other}`"))),
        }
    }

    /// Builds objective, noise, constants and schedule without running.
    /// Refuses configs whose worst-case run is longer than
    /// `MAX_UNGUARDED_STEPS` unless `step_limit` is set.
    pub fn resolve(&self) -> Result<Resolved> {
        let resolved = self.resolve_unguarded()?;
        let worst_case = match resolved.options.budget {
            BudgetMode::Theorem => resolved.schedule.t0,
            BudgetMode::UnlimitedEpisodes { max_episodes } => {
                (max_episodes as u128 + 1).saturating_mul(resolved.schedule.k0)
            }
        };
        if self.step_limit.is_none() && worst_case > MAX_UNGUARDED_STEPS {
            return Err(Error::config(
                "step_limit",
                format!("a single run may take up to {worst_case} steps; set step_limit explicitly"),
            ));
        }
        Ok(resolved)
    }

    /// Like [`resolve`](Self::resolve) without the run-length guard.
    pub fn resolve_unguarded(&self) -> Result<Resolved> {
        if self.n_seeds == 0 {
            return Err(Error::config("n_seeds", "n_seeds must be at least 1"));
        }
        let objective = self.objective.build()?;
        let dim = objective.dim();
        let noise = self.noise.build(dim)?;
        let algorithm = self.algorithm()?;
        let budget = self.budget()?;
        let x_init = match &self.x_init {
            Some(x) if x.len() != dim => {
                return Err(Error::config("x_init", format!("expected {dim} coordinates, got {}", x.len())))
            }
            Some(x) => x.clone(),
            None => vec![0.0; dim],
        };
        let constants = match objective.optimal_value() {
            Some(_) => objective.constants(noise.sigma, &x_init).map_err(|e| wrap_field("objective", e))?,
            None if budget == BudgetMode::Theorem => {
                return Err(Error::config(
                    "budget_mode",
                    "the theorem budget needs an objective that is bounded below",
                ))
            }
            // Unbounded below: the gap only enters the theorem budget, which is unused.
            None => ProblemConstants::new(objective.lipschitz().max(f64::MIN_POSITIVE), objective.hessian_lipschitz(), noise.sigma, 0.0, dim)
                .map_err(|e| wrap_field("objective", e))?,
        };
        let schedule = self.schedule.resolve(&constants)?;
        let injection_sigma = self.injection_sigma.unwrap_or(noise.sigma);
        let mut options = RunOptions::new(budget);
        options.store_iterates = self.store_iterates;
        options.step_limit = self.step_limit;
        Ok(Resolved {
            objective,
            noise,
            constants,
            schedule,
            algorithm,
            injection_sigma,
            options,
            x_init,
        })
    }
}

impl Resolved {
    pub fn run_seed(&self, seed: u64) -> Result<RunResult> {
        let obj = self.objective.as_ref();
        match self.algorithm {
            Algorithm::BallSgd => run_ball_sgd_with(obj, &self.noise, &self.schedule, &self.x_init, seed, &self.options),
            Algorithm::NoiseScheduled => run_noise_scheduled_sgd_with(
                obj,
                &self.noise,
                self.injection_sigma,
                &self.schedule,
                &self.x_init,
                seed,
                &self.options,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub terminated: Termination,
    pub total_steps: u64,
    pub sg_cost: u64,
    pub exits: u64,
    pub injections: u64,
    pub first_exit: Option<u64>,
    pub f_final: f64,
    pub certificate: Option<Certificate>,
    pub descent: DescentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub constants: ProblemConstants,
    pub schedule: Schedule,
    pub validation: ScheduleValidation,
    pub n_seeds: u64,
    pub convergence_fraction: f64,
    pub mean_sg_cost: f64,
    pub mean_exits: f64,
    /// Pooled over every exit episode of every run.
    pub descent_pass_fraction: f64,
    /// Over converged runs; `1.0` when none converged.
    pub certificate_pass_fraction: f64,
    pub pass: bool,
    pub runs: Vec<RunRow>,
}

fn row_for(obj: &dyn Objective, result: &RunResult) -> Result<RunRow> {
    let certificate = match &result.trace.output {
        Some(x) => Some(certify(obj, x, &result.schedule)?),
        None => None,
    };
    Ok(RunRow {
        seed: result.seed,
        terminated: result.terminated,
        total_steps: result.trace.total_steps,
        sg_cost: result.trace.sg_cost,
        exits: result.trace.exits,
        injections: result.trace.injections,
        first_exit: result.trace.first_exit(),
        f_final: obj.value(result.trace.output.as_ref().unwrap_or(&result.trace.final_iterate)),
        certificate,
        descent: episode_descent_report(result),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Runs every seed and returns the summary together with the raw results.
pub fn execute(config: &ExperimentConfig) -> Result<(Summary, Vec<RunResult>)> {
    let resolved = config.resolve()?;
    let results: Vec<RunResult> = (0..config.n_seeds)
        .into_par_iter()
        .map(|i| resolved.run_seed(config.base_seed.wrapping_add(i)))
        .collect::<Result<_>>()?;
    let obj = resolved.objective.as_ref();
    let runs: Vec<RunRow> = results.iter().map(|r| row_for(obj, r)).collect::<Result<_>>()?;

    let n = runs.len() as f64;
    let converged: Vec<&RunRow> = runs.iter().filter(|r| r.terminated == Termination::Converged).collect();
    let (episodes, passed) = runs.iter().fold((0usize, 0usize), |(e, p), r| {
        (e + r.descent.episodes.len(), p + r.descent.episodes.iter().filter(|d| d.pass).count())
    });
    let certified = converged
        .iter()
        .filter(|r| r.certificate.as_ref().is_some_and(|c| c.pass()))
        .count();
    let certificate_pass_fraction = if converged.is_empty() {
        1.0
    } else {
        certified as f64 / converged.len() as f64
    };
    let summary = Summary {
        config: config.clone(),
        constants: resolved.constants,
        validation: validate_schedule(&resolved.schedule, &resolved.constants),
        schedule: resolved.schedule.clone(),
        n_seeds: config.n_seeds,
        convergence_fraction: converged.len() as f64 / n,
        mean_sg_cost: mean(runs.iter().map(|r| r.sg_cost as f64)),
        mean_exits: mean(runs.iter().map(|r| r.exits as f64)),
        descent_pass_fraction: if episodes == 0 { 1.0 } else { passed as f64 / episodes as f64 },
        certificate_pass_fraction,
        pass: converged.len() == runs.len() && certified == converged.len(),
        runs,
    };
    Ok((summary, results))
}

/// Float formatting shared by every CSV: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn episodes_csv(report: &DescentReport) -> String {
    let mut out = String::from("episode,start_step,length,f_anchor,f_exit,f_drop,threshold,pass\n");
    for e in &report.episodes {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.episode,
            e.start_step,
            e.length,
            fmt_f64(e.f_anchor),
            fmt_f64(e.f_exit),
            fmt_f64(e.f_drop),
            fmt_f64(e.threshold),
            e.pass
        );
    }
    out
}

pub fn runs_csv(rows: &[RunRow]) -> String {
    let mut out = String::from(
        "seed,terminated,total_steps,sg_cost,exits,injections,first_exit,f_final,grad_norm,lambda_min,grad_pass,eig_pass,descent_pass_fraction\n",
    );
    for r in rows {
        let terminated = match r.terminated {
            Termination::Converged => "converged",
            Termination::BudgetExhausted => "budget-exhausted",
        };
        let c = r.certificate.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            terminated,
            r.total_steps,
            r.sg_cost,
            r.exits,
            r.injections,
            fmt_opt(r.first_exit),
            fmt_f64(r.f_final),
            fmt_opt(c.map(|c| fmt_f64(c.grad_norm))),
            fmt_opt(c.map(|c| fmt_f64(c.lambda_min))),
            fmt_opt(c.map(|c| c.grad_pass)),
            fmt_opt(c.map(|c| c.eig_pass)),
            fmt_f64(r.descent.pass_fraction),
        );
    }
    out
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_run_info(dir: &Path) -> Result<()> {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        &dir.join("run_info.json"),
        &serde_json::json!({
            "unix_time": secs,
            "threads": rayon::current_num_threads(),
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )
}

/// Runs the experiment and writes `summary.json`, `schedule.json`,
/// `runs.csv`, `runs/seed_N.json`, `runs/seed_N_episodes.csv`, and a
/// `run_info.json` holding the only non-deterministic content.
pub fn run_config(config: &ExperimentConfig) -> Result<(PathBuf, Summary)> {
    let dir = config
        .output_dir
        .clone()
        .ok_or_else(|| Error::config("output_dir", "missing output directory"))?;
    let (summary, results) = execute(config)?;
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(&dir.join("schedule.json"), &summary.schedule)?;
    fs::write(dir.join("runs.csv"), runs_csv(&summary.runs))?;
    for (result, row) in results.iter().zip(&summary.runs) {
        write_json(&runs_dir.join(format!("seed_{}.json", result.seed)), result)?;
        fs::write(
            runs_dir.join(format!("seed_{}_episodes.csv", result.seed)),
            episodes_csv(&row.descent),
        )?;
    }
    write_run_info(&dir)?;
    Ok((dir, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub schedule: Option<Schedule>,
    pub mean_sg_cost: Option<f64>,
    pub convergence_fraction: Option<f64>,
    pub mean_grad_norm: Option<f64>,
    pub mean_lambda_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by `epsilon`, descending.
    pub rows: Vec<SweepRow>,
}

/// Runs `base` once per `epsilon`. Rows whose schedule is infeasible or
/// whose runs fail are marked skipped with the reason.
pub fn sweep_epsilon(base: &ExperimentConfig, epsilons: &[f64], n_seeds: u64) -> Result<SweepResult> {
    let mut eps = epsilons.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let rows = eps
        .into_iter()
        .map(|epsilon| {
            let mut config = base.clone();
            config.schedule.epsilon = Some(epsilon);
            config.n_seeds = n_seeds;
            match execute(&config) {
                Ok((s, _)) => {
                    let certs: Vec<&Certificate> = s.runs.iter().filter_map(|r| r.certificate.as_ref()).collect();
                    SweepRow {
                        epsilon,
                        skipped: false,
                        reason: None,
                        mean_sg_cost: Some(s.mean_sg_cost),
                        convergence_fraction: Some(s.convergence_fraction),
                        mean_grad_norm: (!certs.is_empty()).then(|| mean(certs.iter().map(|c| c.grad_norm))),
                        mean_lambda_min: (!certs.is_empty()).then(|| mean(certs.iter().map(|c| c.lambda_min))),
                        schedule: Some(s.schedule),
                    }
                }
                Err(e) => SweepRow {
                    epsilon,
                    skipped: true,
                    reason: Some(e.to_string()),
                    schedule: None,
                    mean_sg_cost: None,
                    convergence_fraction: None,
                    mean_grad_norm: None,
                    mean_lambda_min: None,
                },
            }
        })
        .collect();
    Ok(SweepResult { rows })
}

pub fn sweep_csv(sweep: &SweepResult) -> String {
    let mut out = String::from(
        "epsilon,skipped,k0,eta,ball_radius,t0,mean_sg_cost,log_epsilon,log_mean_sg_cost,convergence_fraction,mean_grad_norm,mean_lambda_min\n",
    );
    for r in &sweep.rows {
        let s = r.schedule.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.epsilon),
            r.skipped,
            fmt_opt(s.map(|s| s.k0)),
            fmt_opt(s.map(|s| fmt_f64(s.eta))),
            fmt_opt(s.map(|s| fmt_f64(s.ball_radius))),
            fmt_opt(s.map(|s| s.t0)),
            fmt_opt(r.mean_sg_cost.map(fmt_f64)),
            fmt_f64(r.epsilon.ln()),
            fmt_opt(r.mean_sg_cost.map(|c| fmt_f64(c.ln()))),
            fmt_opt(r.convergence_fraction.map(fmt_f64)),
            fmt_opt(r.mean_grad_norm.map(fmt_f64)),
            fmt_opt(r.mean_lambda_min.map(fmt_f64)),
        );
    }
    out
}

/// Writes `sweep.json` (which carries every CSV number, logs included) and
/// `sweep.csv`.
pub fn write_sweep(dir: &Path, sweep: &SweepResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    #[derive(Serialize)]
    struct Row<'a> {
        #[serde(flatten)]
        row: &'a SweepRow,
        log_epsilon: f64,
        log_mean_sg_cost: Option<f64>,
    }
    #[derive(Serialize)]
    struct Rows<'a> {
        rows: Vec<Row<'a>>,
    }
    let rows = Rows {
        rows: sweep
            .rows
            .iter()
            .map(|row| Row {
                row,
                log_epsilon: row.epsilon.ln(),
                log_mean_sg_cost: row.mean_sg_cost.map(f64::ln),
            })
            .collect(),
    };
    write_json(&dir.join("sweep.json"), &rows)?;
    fs::write(dir.join("sweep.csv"), sweep_csv(sweep))?;
    write_run_info(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn convex_config() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "objective": {"kind": "quadratic", "h": [[1.0, 0.0], [0.0, 2.0]], "b": [0.0, 0.0]},
                "noise": {"kind": "none"},
                "schedule": {"mode": "manual", "epsilon": 1e-4, "p": 0.1, "eta": 0.1, "ball_radius": 0.05, "k0": 200, "ko": 50},
                "budget_mode": "unlimited-episodes",
                "max_episodes": 1000,
                "x_init": [0.5, 0.0]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn missing_objective_kind_names_field() {
        let mut c = convex_config();
        c.objective.kind = None;
        match c.resolve() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "objective.kind"),
            Err(e) => panic!("{e}"),
            Ok(_) => panic!("resolved without a kind"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_json(r#"{"objective": {"kind": "quartic", "dim": 2, "dimm": 3}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        assert!(ExperimentConfig::from_json(r#"{"n_seed": 3}"#).is_err());
    }

    #[test]
    fn convex_quadratic_converges() {
        let (s, _) = execute(&convex_config()).unwrap();
        assert_eq!(s.convergence_fraction, 1.0);
        assert_eq!(s.runs.len(), 1);
    }

    #[test]
    fn unguarded_huge_runs_are_refused() {
        let c = ExperimentConfig::from_json(
            r#"{
                "objective": {"kind": "quartic", "dim": 2},
                "noise": {"kind": "uniform-ball", "sigma": 0.1},
                "schedule": {"mode": "theoretical", "epsilon": 1e-4, "p": 0.1}
            }"#,
        )
        .unwrap();
        match c.resolve() {
            Err(Error::Config { field, .. }) => assert!(field == "step_limit" || field == "schedule", "{field}"),
            Err(Error::InfeasibleSchedule(_)) => {}
            Err(e) => panic!("{e}"),
            Ok(_) => panic!("expected a refusal"),
        }
    }

    #[test]
    fn csv_float_format_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 12345.678] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn sweep_sorts_and_skips() {
        let base = convex_config();
        let sweep = sweep_epsilon(&base, &[1e-4, 1e-2, -1.0], 1).unwrap();
        let eps: Vec<f64> = sweep.rows.iter().map(|r| r.epsilon).collect();
        assert_eq!(eps, vec![1e-2, 1e-4, -1.0]);
        assert!(!sweep.rows[0].skipped && !sweep.rows[1].skipped);
        assert!(sweep.rows[2].skipped);
    }
}
