use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use saddle_sgd::certify::certify;
use saddle_sgd::concentration::{bernstein_tail_experiment, pinelis_tail_experiment};
use saddle_sgd::diagnostics::{coupled_escape_frequency, escape_frequency, zbound_frequency};
use saddle_sgd::harness::{run_config, sweep_epsilon, write_sweep, ExperimentConfig, Resolved};
use saddle_sgd::hyperparams::validate_schedule;
use saddle_sgd::linalg::basis;
use saddle_sgd::noise::{estimate_set_probability, narrow_scale, first_step_scale, NoiseSampler, Slab};
use saddle_sgd::{Error, Result, RunResult};

#[derive(Parser)]
#[command(name = "saddle-sgd", version, about = "Ball-controlled SGD for escaping saddle points")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `base_seed` (or the seed of standalone checks).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    store_iterates: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of the config and write the outputs.
    Run,
    /// Repeat the config over several target accuracies.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        epsilons: Vec<f64>,
        #[arg(long)]
        n_seeds: Option<u64>,
    },
    /// Check the gradient and curvature certificate at a point.
    Certify {
        /// Point as a JSON array.
        #[arg(long, conflicts_with = "run_output")]
        point: Option<String>,
        /// A `runs/seed_N.json` file; certifies its output.
        #[arg(long)]
        run_output: Option<PathBuf>,
    },
    /// Estimate the probability that a noise sample lands in a narrow slab.
    NoiseCheck {
        #[arg(long, value_enum)]
        kind: NoiseChoice,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        dim: usize,
        /// Slab width in units of `σ/(4√d)`.
        #[arg(long, default_value_t = 1.0)]
        width_mult: f64,
        #[arg(long, default_value_t = 100_000)]
        n_samples: u64,
    },
    /// Both-stuck frequency of coupled trajectories started at `x_init`.
    CoupledEscape {
        #[arg(long, default_value_t = 200)]
        n_seeds: u64,
        /// Offset in units of the first-step scale `ησ/(4√d)`.
        #[arg(long, default_value_t = 1.0)]
        q_mult: f64,
    },
    /// Fraction of first episodes from `x_init` that exit the ball.
    EscapeFreq {
        #[arg(long, default_value_t = 200)]
        n_seeds: u64,
    },
    /// Fraction of first episodes whose difference iterate stays small.
    Zbound {
        #[arg(long, default_value_t = 100)]
        n_seeds: u64,
    },
    /// Martingale tail experiments.
    Concentration {
        #[arg(long, value_enum)]
        kind: TailKind,
        #[arg(long, default_value_t = 5)]
        dim: usize,
        #[arg(long, default_value_t = 64)]
        k: u64,
        #[arg(long, default_value_t = 1.0)]
        step_bound: f64,
        #[arg(long, value_delimiter = ',', default_value = "32")]
        lambda: Vec<f64>,
        #[arg(long, default_value_t = 0.3)]
        sigma: f64,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        #[arg(long, default_value_t = 100_000)]
        n_trials: u64,
    },
    /// Print the derived schedule and its validation.
    Params {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseChoice {
    ScaledGaussian,
    UniformBall,
    UniformSphere,
}

#[derive(Clone, Copy, ValueEnum)]
enum TailKind {
    Pinelis,
    Bernstein,
}

/// A finished command: its JSON report and whether its check passed.
struct Outcome {
    report: String,
    pass: bool,
}

fn outcome<T: Serialize>(value: &T, pass: bool) -> Result<Outcome> {
    Ok(Outcome {
        report: serde_json::to_string_pretty(value)?,
        pass,
    })
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::config("config", "this command needs --config"))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.base_seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = Some(out.clone());
    }
    if cli.store_iterates {
        config.store_iterates = true;
    }
    Ok(config)
}

fn read_point(cli_point: Option<&str>, run_output: Option<&Path>) -> Result<Vec<f64>> {
    match (cli_point, run_output) {
        (Some(text), _) => serde_json::from_str(text).map_err(|e| Error::config("point", e.to_string())),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            let run: RunResult = serde_json::from_str(&text)?;
            run.trace
                .output
                .ok_or_else(|| Error::config("run_output", "the run did not converge, so it has no output"))
        }
        (None, None) => Err(Error::config("point", "pass --point or --run-output")),
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Run => {
            let (dir, summary) = run_config(&load_config(cli)?)?;
            #[derive(Serialize)]
            struct Brief {
                output_dir: PathBuf,
                convergence_fraction: f64,
                certificate_pass_fraction: f64,
                descent_pass_fraction: f64,
                mean_sg_cost: f64,
                pass: bool,
            }
            outcome(
                &Brief {
                    output_dir: dir,
                    convergence_fraction: summary.convergence_fraction,
                    certificate_pass_fraction: summary.certificate_pass_fraction,
                    descent_pass_fraction: summary.descent_pass_fraction,
                    mean_sg_cost: summary.mean_sg_cost,
                    pass: summary.pass,
                },
                summary.pass,
            )
        }
        Command::Sweep { epsilons, n_seeds } => {
            let config = load_config(cli)?;
            let dir = config
                .output_dir
                .clone()
                .ok_or_else(|| Error::config("output_dir", "missing output directory"))?;
            let sweep = sweep_epsilon(&config, epsilons, n_seeds.unwrap_or(config.n_seeds))?;
            write_sweep(&dir, &sweep)?;
            let pass = sweep.rows.iter().all(|r| !r.skipped);
            outcome(&sweep, pass)
        }
        Command::Certify { point, run_output } => {
            let resolved = load_config(cli)?.resolve_unguarded()?;
            let x = read_point(point.as_deref(), run_output.as_deref())?;
            let cert = certify(resolved.objective.as_ref(), &x, &resolved.schedule)?;
            let pass = cert.pass();
            outcome(&cert, pass)
        }
        Command::NoiseCheck {
            kind,
            sigma,
            dim,
            width_mult,
            n_samples,
        } => {
            let sampler = match kind {
                NoiseChoice::ScaledGaussian => NoiseSampler::scaled_gaussian(*sigma, *dim)?,
                NoiseChoice::UniformBall => NoiseSampler::uniform_ball(*sigma, *dim)?,
                NoiseChoice::UniformSphere => NoiseSampler::uniform_sphere(*sigma, *dim)?,
            };
            let width = width_mult * narrow_scale(*sigma, *dim);
            let slab = Slab::centered(basis(*dim, 0), width)?;
            let est = estimate_set_probability(&sampler, &slab, *n_samples, seed)?;
            #[derive(Serialize)]
            struct Report {
                width: f64,
                bound: f64,
                #[serde(flatten)]
                estimate: saddle_sgd::noise::ProbabilityEstimate,
                pass: bool,
            }
            let pass = est.lower() <= 0.25;
            outcome(
                &Report {
                    width,
                    bound: 0.25,
                    estimate: est,
                    pass,
                },
                pass,
            )
        }
        Command::CoupledEscape { n_seeds, q_mult } => {
            let config = load_config(cli)?;
            let r = config.resolve_unguarded()?;
            let q = q_mult * first_step_scale(r.noise.sigma, r.schedule.eta, r.constants.dim);
            let rep = with_resolved(&r, |obj, x0| {
                coupled_escape_frequency(obj, &r.noise, &r.schedule, x0, q, *n_seeds, config.base_seed)
            })?;
            let pass = rep.pass;
            outcome(&rep, pass)
        }
        Command::EscapeFreq { n_seeds } => {
            let config = load_config(cli)?;
            let r = config.resolve_unguarded()?;
            let rep = with_resolved(&r, |obj, x0| {
                escape_frequency(obj, &r.noise, &r.schedule, x0, *n_seeds, config.base_seed)
            })?;
            let pass = rep.pass;
            outcome(&rep, pass)
        }
        Command::Zbound { n_seeds } => {
            let config = load_config(cli)?;
            let r = config.resolve_unguarded()?;
            let rep = with_resolved(&r, |obj, x0| {
                zbound_frequency(obj, &r.noise, &r.schedule, x0, *n_seeds, config.base_seed)
            })?;
            let pass = rep.pass;
            outcome(&rep, pass)
        }
        Command::Concentration {
            kind,
            dim,
            k,
            step_bound,
            lambda,
            sigma,
            delta,
            n_trials,
        } => {
            let rep = match kind {
                TailKind::Pinelis => pinelis_tail_experiment(*dim, *k, *step_bound, lambda, *n_trials, seed)?,
                TailKind::Bernstein => bernstein_tail_experiment(*k, *step_bound, *sigma, *delta, *n_trials, seed)?,
            };
            let pass = rep.pass;
            outcome(&rep, pass)
        }
        Command::Params { json } => {
            let r = load_config(cli)?.resolve_unguarded()?;
            let validation = validate_schedule(&r.schedule, &r.constants);
            if *json {
                #[derive(Serialize)]
                struct Params<'a> {
                    constants: &'a saddle_sgd::ProblemConstants,
                    schedule: &'a saddle_sgd::Schedule,
                    validation: &'a saddle_sgd::hyperparams::ScheduleValidation,
                }
                let pass = validation.pass;
                return outcome(
                    &Params {
                        constants: &r.constants,
                        schedule: &r.schedule,
                        validation: &validation,
                    },
                    pass,
                );
            }
            let mut report = r.schedule.table();
            for v in &validation.verdicts {
                report.push_str(&format!(
                    "\n{:<24} {:<4} slack {:.6e}",
                    v.name,
                    if v.pass { "ok" } else { "FAIL" },
                    v.slack
                ));
            }
            Ok(Outcome {
                report,
                pass: validation.pass,
            })
        }
    }
}

fn with_resolved<T>(
    r: &Resolved,
    f: impl FnOnce(&dyn saddle_sgd::Objective, &[f64]) -> Result<T>,
) -> Result<T> {
    f(r.objective.as_ref(), &r.x_init)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::Json(_)
        | Error::InfeasibleSchedule(_)
        | Error::InvalidArgument(_)
        | Error::Io(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(o) => {
            // A closed pipe (e.g. `| head`) is not an error.
            let _ = writeln!(std::io::stdout().lock(), "{}", o.report);
            if o.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
