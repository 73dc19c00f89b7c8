//! Hyper-parameter schedule for ball-controlled SGD.
//!
//! The theoretical schedule couples the step size `η`, the round constant
//! `C̃₁ = 2·N·ln(24√d/η)` and the inner budget `K₀ = ⌈C̃₁/(η·δ₂)⌉`; the step
//! size is in turn bounded by a function of `K₀` and `C̃₁`. [`derive_schedule`]
//! resolves that loop with a fixed-point iteration. Manual schedules keep the
//! same structural relations where they are not overridden and are checked
//! against the theoretical constraints by [`validate_schedule`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometric rate of the per-round stuck probability.
const STUCK_RATE: f64 = 0.7;
const FIXED_POINT_MAX_ITERS: usize = 200;
const FIXED_POINT_RTOL: f64 = 1e-12;
const DEFINITION_RTOL: f64 = 1e-9;

/// Declared smoothness, noise and gap constants of a problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Gradient-Lipschitz constant.
    #[serde(rename = "L")]
    pub lipschitz: f64,
    /// Hessian-Lipschitz constant.
    pub rho: f64,
    /// Almost-sure bound on the gradient noise norm.
    pub sigma: f64,
    /// Optimality gap `f(x̃) − f*`.
    pub delta_f: f64,
    pub dim: usize,
}

impl ProblemConstants {
    pub fn new(lipschitz: f64, rho: f64, sigma: f64, delta_f: f64, dim: usize) -> Result<Self> {
        let c = Self {
            lipschitz,
            rho,
            sigma,
            delta_f,
            dim,
        };
        c.check()?;
        Ok(c)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.lipschitz.is_finite() && self.lipschitz > 0.0) {
            return Err(Error::invalid(format!("L must be positive and finite, got {}", self.lipschitz)));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::invalid(format!("rho must be nonnegative and finite, got {}", self.rho)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::invalid(format!("sigma must be nonnegative and finite, got {}", self.sigma)));
        }
        if !(self.delta_f.is_finite() && self.delta_f >= 0.0) {
            return Err(Error::invalid(format!("delta_f must be nonnegative and finite, got {}", self.delta_f)));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    Theoretical,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub mode: ScheduleMode,
    pub epsilon: f64,
    pub p: f64,
    pub c1: f64,
    pub delta: f64,
    pub delta2: f64,
    pub ball_radius: f64,
    pub k0: u128,
    pub ko: u128,
    pub eta: f64,
    pub t1: u128,
    pub t0: u128,
}

impl Schedule {
    /// Two-column `name value` table.
    pub fn table(&self) -> String {
        let mode = match self.mode {
            ScheduleMode::Theoretical => "theoretical",
            ScheduleMode::Manual => "manual",
        };
        let rows: [(&str, String); 12] = [
            ("mode", mode.to_string()),
            ("epsilon", format!("{:.6e}", self.epsilon)),
            ("p", format!("{}", self.p)),
            ("c1", format!("{:.6e}", self.c1)),
            ("delta", format!("{:.6e}", self.delta)),
            ("delta2", format!("{:.6e}", self.delta2)),
            ("ball_radius", format!("{:.6e}", self.ball_radius)),
            ("k0", self.k0.to_string()),
            ("ko", self.ko.to_string()),
            ("eta", format!("{:.6e}", self.eta)),
            ("t1", self.t1.to_string()),
            ("t0", self.t0.to_string()),
        ];
        let mut out = String::new();
        for (name, value) in rows {
            out.push_str(&format!("{name:<12} {value}\n"));
        }
        out
    }

    /// Escape probability bound `1 − p/3` for the first episode.
    pub fn escape_bound(&self) -> f64 {
        1.0 - self.p / 3.0
    }
}

/// Number of exit rounds `N = ⌊ln(3/p) / ln(1/0.7)⌋ + 1`.
pub fn exit_rounds(p: f64) -> u32 {
    ((3.0 / p).ln() / (1.0 / STUCK_RATE).ln()).floor() as u32 + 1
}

/// `C̃₁ = 2·N·ln(24√d/η)`.
pub fn round_constant(p: f64, dim: usize, eta: f64) -> f64 {
    2.0 * exit_rounds(p) as f64 * (24.0 * (dim as f64).sqrt() / eta).ln()
}

/// Upper bound on `η` given the quantities it depends on.
pub fn eta_upper_bound(ball_radius: f64, delta: f64, sigma: f64, c1: f64, k0: f64, p: f64) -> f64 {
    let s2 = (sigma * sigma).max(1.0);
    ball_radius * ball_radius * delta / (64.0 * s2 * c1 * (48.0 * k0 / p).ln()) / (3.0 + k0.ln())
}

fn ceil_count(x: f64) -> Result<u128> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::InfeasibleSchedule(format!("step count {x} is not a finite nonnegative number")));
    }
    let c = x.ceil();
    if c >= u128::MAX as f64 {
        return Err(Error::InfeasibleSchedule(format!("step count {x:e} overflows")));
    }
    Ok(c as u128)
}

fn check_probability(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("p must lie in (0, 1), got {p}")));
    }
    Ok(())
}

/// Exit-round length `K_o = ⌈2·ln(24√d/η) / (η·δ₂)⌉`.
pub fn exit_round_length(eta: f64, delta2: f64, dim: usize) -> Result<u128> {
    if !(eta > 0.0 && delta2 > 0.0 && dim >= 1) {
        return Err(Error::invalid(format!(
            "exit_round_length needs eta > 0, delta2 > 0, dim ≥ 1 (got {eta}, {delta2}, {dim})"
        )));
    }
    let scale = 24.0 * (dim as f64).sqrt();
    if eta >= scale {
        return Err(Error::invalid(format!("eta = {eta} must be below 24√d = {scale}")));
    }
    let ko = ceil_count(2.0 * (scale / eta).ln() / (eta * delta2))?.max(1);
    debug_assert!(eta * delta2 > 1.0 || ko >= exit_round_lower_bound(eta, delta2, dim, 1.0));
    Ok(ko)
}

/// `⌈ln(6/q₀) / ln(1 + η·δ₂)⌉` with `q₀ = σ·η/(4√d)`.
pub fn exit_round_lower_bound(eta: f64, delta2: f64, dim: usize, sigma: f64) -> u128 {
    let q0 = sigma * eta / (4.0 * (dim as f64).sqrt());
    let v = (6.0 / q0).ln() / (eta * delta2).ln_1p();
    if v <= 0.0 {
        0
    } else {
        v.ceil() as u128
    }
}

/// Episode budget `T₁ = ⌈7Δ·η·K₀/B²⌉ + 1` and total step budget `T₀ = T₁·K₀`.
pub fn budget(delta_f: f64, eta: f64, k0: u128, ball_radius: f64) -> (u128, u128) {
    let t1 = (7.0 * delta_f * eta * k0 as f64 / (ball_radius * ball_radius)).ceil() as u128 + 1;
    (t1, t1.saturating_mul(k0))
}

fn initial_step_size(consts: &ProblemConstants, delta: f64, p: f64) -> f64 {
    let rounds = exit_rounds(p) as f64;
    let log_d = (consts.dim as f64).ln().max(1.0);
    let s2 = (consts.sigma * consts.sigma).max(1.0);
    let c1 = 2.0 * rounds * log_d;
    let b = delta / (consts.rho * c1);
    let eta_tilde = b * b * delta / (512.0 * s2 * (48.0 / p).ln() * rounds * log_d);
    eta_tilde / (1.0 / eta_tilde).ln().powi(3)
}

struct Coupled {
    c1: f64,
    ball_radius: f64,
    k0: f64,
    bound: f64,
}

fn coupled_quantities(consts: &ProblemConstants, delta: f64, p: f64, eta: f64) -> Coupled {
    let c1 = round_constant(p, consts.dim, eta);
    let ball_radius = delta / (consts.rho * c1);
    let k0 = (c1 / (eta * 16.0 * delta)).ceil();
    let bound = eta_upper_bound(ball_radius, delta, consts.sigma, c1, k0, p);
    Coupled {
        c1,
        ball_radius,
        k0,
        bound,
    }
}

/// Derives the theoretical schedule for target accuracy `epsilon` and failure
/// probability `p`.
pub fn derive_schedule(consts: &ProblemConstants, epsilon: f64, p: f64) -> Result<Schedule> {
    consts.check()?;
    check_probability(p)?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if consts.rho <= 0.0 {
        return Err(Error::InfeasibleSchedule("rho = 0 gives delta = 0".into()));
    }
    let delta = (consts.rho * epsilon).sqrt();
    if delta > 1.0 {
        return Err(Error::InfeasibleSchedule(format!("delta = sqrt(rho·epsilon) = {delta} > 1")));
    }
    let delta2 = 16.0 * delta;

    let mut eta = initial_step_size(consts, delta, p);
    let mut converged = false;
    let mut change = f64::INFINITY;
    for _ in 0..FIXED_POINT_MAX_ITERS {
        let next = coupled_quantities(consts, delta, p, eta).bound;
        if !(next.is_finite() && next > 0.0) {
            return Err(Error::InfeasibleSchedule(format!("step-size bound degenerated to {next}")));
        }
        change = (next - eta).abs() / eta;
        eta = next;
        if change < FIXED_POINT_RTOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergent {
            iterations: FIXED_POINT_MAX_ITERS,
            last_change: change,
        });
    }

    // The last update may leave η a rounding error above its own bound.
    let mut q = coupled_quantities(consts, delta, p, eta);
    let mut shrink = 0;
    while eta > q.bound {
        eta *= 1.0 - 1e-12;
        q = coupled_quantities(consts, delta, p, eta);
        shrink += 1;
        if shrink > 1000 {
            return Err(Error::NonConvergent {
                iterations: FIXED_POINT_MAX_ITERS,
                last_change: (eta - q.bound) / eta,
            });
        }
    }

    let cap = 1.0_f64.min(consts.sigma / consts.lipschitz).min(1.0 / consts.lipschitz);
    if q.ball_radius > cap {
        return Err(Error::InfeasibleSchedule(format!(
            "ball radius B = {:e} exceeds min(1, sigma/L, 1/L) = {cap:e}",
            q.ball_radius
        )));
    }
    if eta * consts.lipschitz > 1.0 / 16.0 {
        return Err(Error::InfeasibleSchedule(format!("eta·L = {} > 1/16", eta * consts.lipschitz)));
    }

    let k0 = ceil_count(q.k0)?;
    let ko = exit_round_length(eta, delta2, consts.dim)?;
    let (t1, t0) = budget(consts.delta_f, eta, k0, q.ball_radius);
    Ok(Schedule {
        mode: ScheduleMode::Theoretical,
        epsilon,
        p,
        c1: q.c1,
        delta,
        delta2,
        ball_radius: q.ball_radius,
        k0,
        ko,
        eta,
        t1,
        t0,
    })
}

/// Largest `epsilon` for which [`derive_schedule`] succeeds, found by
/// bisection in log space below `1/rho`.
pub fn largest_feasible_epsilon(consts: &ProblemConstants, p: f64) -> Result<f64> {
    if consts.rho <= 0.0 {
        return Err(Error::InfeasibleSchedule("rho = 0".into()));
    }
    let upper = 1.0 / consts.rho;
    if derive_schedule(consts, upper, p).is_ok() {
        return Ok(upper);
    }
    let mut hi = upper.ln();
    let mut lo = hi - 80.0;
    if derive_schedule(consts, lo.exp(), p).is_err() {
        return Err(Error::InfeasibleSchedule("no feasible epsilon found".into()));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if derive_schedule(consts, mid.exp(), p).is_ok() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo.exp())
}

/// User-supplied step size and ball radius. `k0` and `ko` default to their
/// structural formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManualSchedule {
    pub epsilon: f64,
    pub p: f64,
    pub eta: f64,
    pub ball_radius: f64,
    #[serde(default)]
    pub k0: Option<u128>,
    #[serde(default)]
    pub ko: Option<u128>,
}

pub fn manual_schedule(consts: &ProblemConstants, m: &ManualSchedule) -> Result<Schedule> {
    consts.check()?;
    check_probability(m.p)?;
    if !(m.eta > 0.0 && m.eta.is_finite()) {
        return Err(Error::invalid(format!("eta must be positive, got {}", m.eta)));
    }
    if !(m.ball_radius > 0.0 && m.ball_radius.is_finite()) {
        return Err(Error::invalid(format!("ball_radius must be positive, got {}", m.ball_radius)));
    }
    if !(m.epsilon > 0.0 && m.epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {}", m.epsilon)));
    }
    let delta = (consts.rho * m.epsilon).sqrt();
    let delta2 = 16.0 * delta;
    let c1 = round_constant(m.p, consts.dim, m.eta);
    let k0 = match m.k0 {
        Some(k) if k >= 1 => k,
        Some(_) => return Err(Error::invalid("k0 must be at least 1")),
        None if delta2 > 0.0 => ceil_count(c1 / (m.eta * delta2))?.max(1),
        None => return Err(Error::invalid("k0 must be given when rho·epsilon = 0")),
    };
    let ko = match m.ko {
        Some(k) if k >= 1 => k,
        Some(_) => return Err(Error::invalid("ko must be at least 1")),
        None if delta2 > 0.0 => exit_round_length(m.eta, delta2, consts.dim)?,
        None => return Err(Error::invalid("ko must be given when rho·epsilon = 0")),
    };
    let (t1, t0) = budget(consts.delta_f, m.eta, k0, m.ball_radius);
    Ok(Schedule {
        mode: ScheduleMode::Manual,
        epsilon: m.epsilon,
        p: m.p,
        c1,
        delta,
        delta2,
        ball_radius: m.ball_radius,
        k0,
        ko,
        eta: m.eta,
        t1,
        t0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    /// Positive when satisfied; for inequalities `rhs − lhs`, for definitions
    /// `tolerance − relative mismatch`.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleValidation {
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
}

impl ScheduleValidation {
    pub fn get(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.verdicts
            .iter()
            .filter(|v| !v.pass)
            .map(|v| v.name.as_str())
            .collect()
    }
}

fn at_most(name: &str, lhs: f64, rhs: f64) -> Verdict {
    let slack = rhs - lhs;
    Verdict {
        name: name.into(),
        pass: slack >= 0.0,
        slack,
    }
}

fn matches(name: &str, actual: f64, expected: f64) -> Verdict {
    let mismatch = if expected == 0.0 {
        actual.abs()
    } else {
        ((actual - expected) / expected).abs()
    };
    let slack = DEFINITION_RTOL - mismatch;
    Verdict {
        name: name.into(),
        pass: slack >= 0.0,
        slack: if slack.is_nan() { f64::NEG_INFINITY } else { slack },
    }
}

/// Checks a schedule against every constraint the analysis relies on.
pub fn validate_schedule(s: &Schedule, consts: &ProblemConstants) -> ScheduleValidation {
    let k0 = s.k0 as f64;
    let c1_formula = round_constant(s.p, consts.dim, s.eta);
    let log_term = (48.0 * k0 / s.p).ln();
    let cap = 1.0_f64.min(consts.sigma / consts.lipschitz).min(1.0 / consts.lipschitz);

    let mut verdicts = vec![
        matches("delta-definition", s.delta, (consts.rho * s.epsilon).sqrt()),
        matches("delta2-definition", s.delta2, 16.0 * s.delta),
        at_most("delta-cap", s.delta, 1.0),
        matches("c1-definition", s.c1, c1_formula),
        matches("ball-radius definition", s.ball_radius, s.delta / (consts.rho * s.c1)),
        at_most("ball-radius cap", s.ball_radius, cap),
        matches("k0-definition", k0, (s.c1 / (s.eta * s.delta2)).ceil()),
        at_most("eta-lipschitz", s.eta * consts.lipschitz, 1.0 / 16.0),
        at_most(
            "eta-bound",
            s.eta,
            eta_upper_bound(s.ball_radius, s.delta, consts.sigma, s.c1, k0, s.p),
        ),
        at_most(
            "noise-sum",
            2.0 * s.eta * consts.sigma * (k0 * log_term).sqrt(),
            s.ball_radius / 16.0,
        ),
    ];
    match exit_round_length(s.eta, s.delta2, consts.dim) {
        Ok(ko) => verdicts.push(matches("ko-definition", s.ko as f64, ko as f64)),
        Err(_) => verdicts.push(Verdict {
            name: "ko-definition".into(),
            pass: false,
            slack: f64::NEG_INFINITY,
        }),
    }
    let (t1, t0) = budget(consts.delta_f, s.eta, s.k0, s.ball_radius);
    verdicts.push(Verdict {
        name: "budget".into(),
        pass: t1 == s.t1 && t0 == s.t0,
        slack: if t1 == s.t1 && t0 == s.t0 { 0.0 } else { -1.0 },
    });

    let pass = verdicts.iter().all(|v| v.pass);
    ScheduleValidation { verdicts, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(dim: usize) -> ProblemConstants {
        ProblemConstants::new(1.0, 1.0, 1.0, 1.0, dim).unwrap()
    }

    #[test]
    fn rounds_for_p_tenth() {
        // ln(30)/ln(1/0.7) = 9.536…
        assert_eq!(exit_rounds(0.1), 10);
    }

    #[test]
    fn delta_by_substitution() {
        let s = derive_schedule(&unit(2), 0.01, 0.1).unwrap();
        assert!((s.delta - 0.1).abs() < 1e-15);
        assert!((s.delta2 - 1.6).abs() < 1e-14);
    }

    #[test]
    fn delta_above_one_is_infeasible() {
        let err = derive_schedule(&unit(2), 4.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::InfeasibleSchedule(_)), "{err}");
    }

    #[test]
    fn bad_probability_rejected() {
        assert!(matches!(derive_schedule(&unit(2), 0.01, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(derive_schedule(&unit(2), 0.01, 0.0), Err(Error::InvalidArgument(_))));
    }

    /// Reference values for (L=ρ=σ=Δ=1, d=10, ε=0.01, p=0.1), computed by an
    /// independent floating-point evaluation of the same fixed point, and
    /// re-checked here by direct substitution into each closed-form relation.
    #[test]
    fn d10_reference_schedule() {
        let consts = unit(10);
        let s = derive_schedule(&consts, 0.01, 0.1).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(s.c1, 870.600906513825) < 1e-9, "c1 = {}", s.c1);
        assert!(rel(s.ball_radius, 1.148631930564295e-4) < 1e-9, "B = {}", s.ball_radius);
        assert!(rel(s.eta, 9.44828010099117e-18) < 1e-9, "eta = {}", s.eta);
        assert!(rel(s.k0 as f64, 5.758990639090591e19) < 1e-9, "k0 = {}", s.k0);

        // Substitution oracle.
        let n = 10.0;
        let c1 = 2.0 * n * (24.0 * 10f64.sqrt() / s.eta).ln();
        assert!(rel(s.c1, c1) < 1e-12);
        assert!(rel(s.ball_radius, 0.1 / c1) < 1e-12);
        let k0 = (c1 / (s.eta * 1.6)).ceil();
        assert_eq!(s.k0 as f64, k0);
        let bound = s.ball_radius.powi(2) * 0.1 / (64.0 * c1 * (48.0 * k0 / 0.1).ln()) / (3.0 + k0.ln());
        assert!(s.eta <= bound);
        assert!(rel(s.eta, bound) < 1e-10);
        assert_eq!(s.t0, s.t1 * s.k0);
    }

    #[test]
    fn derived_schedule_validates() {
        let consts = unit(10);
        let s = derive_schedule(&consts, 0.01, 0.1).unwrap();
        let v = validate_schedule(&s, &consts);
        assert!(v.pass, "failures: {:?}", v.failures());
    }

    #[test]
    fn forced_eta_violation() {
        let consts = unit(10);
        let mut s = derive_schedule(&consts, 0.01, 0.1).unwrap();
        s.eta *= 1e6;
        let v = validate_schedule(&s, &consts);
        let eta = v.get("eta-bound").unwrap();
        assert!(!eta.pass && eta.slack < 0.0);
        assert!(!v.pass);
    }

    #[test]
    fn forced_ball_radius_violation() {
        let consts = unit(10);
        let mut s = derive_schedule(&consts, 0.01, 0.1).unwrap();
        s.ball_radius = 2.0;
        let v = validate_schedule(&s, &consts);
        assert!(!v.get("ball-radius cap").unwrap().pass);
    }

    #[test]
    fn exit_round_length_example() {
        // 2·ln(2400)·100/1.6 = 972.9030020420046… (50-digit decimal evaluation)
        assert_eq!(exit_round_length(0.01, 1.6, 1).unwrap(), 973);
    }

    #[test]
    fn exit_round_length_boundary() {
        let eta = 24.0 * 3f64.sqrt();
        assert!(matches!(exit_round_length(eta, 1.0, 3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn budget_examples() {
        assert_eq!(budget(0.0, 0.001, 1000, 0.1), (1, 1000));
        // 7·1·0.001·1000 / 0.1² = 700
        assert_eq!(budget(1.0, 0.001, 1000, 0.1), (701, 701_000));
        // 7·1·0.001·100 / 0.1² = 70
        assert_eq!(budget(1.0, 0.001, 100, 0.1), (71, 7_100));
    }

    #[test]
    fn manual_schedule_reports_violations() {
        let consts = ProblemConstants::new(299.0, 60.0, 0.1, 0.25, 2).unwrap();
        let s = manual_schedule(
            &consts,
            &ManualSchedule {
                epsilon: 1.0 / (1024.0 * 60.0),
                p: 0.1,
                eta: 1e-3,
                ball_radius: 0.05,
                k0: None,
                ko: None,
            },
        )
        .unwrap();
        assert_eq!(s.mode, ScheduleMode::Manual);
        assert!((s.delta2 - 0.5).abs() < 1e-12);
        let v = validate_schedule(&s, &consts);
        assert!(!v.pass);
        assert!(v.get("eta-bound").map(|x| !x.pass).unwrap());
        assert!(v.get("k0-definition").unwrap().pass);
        assert!(v.get("ko-definition").unwrap().pass);
        assert!(v.get("budget").unwrap().pass);
    }

    #[test]
    fn largest_feasible_is_one_over_rho_for_unit_constants() {
        let eps = largest_feasible_epsilon(&unit(2), 0.1).unwrap();
        assert_eq!(eps, 1.0);
    }

    #[test]
    fn json_is_flat_and_roundtrips() {
        let s = derive_schedule(&unit(10), 0.01, 0.1).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let keys: std::collections::BTreeMap<String, serde::de::IgnoredAny> = serde_json::from_str(&text).unwrap();
        for key in ["epsilon", "p", "c1", "delta", "delta2", "ball_radius", "k0", "ko", "eta", "t1", "t0"] {
            assert!(keys.contains_key(key), "missing {key}");
        }
        let back: Schedule = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn derive_is_deterministic_and_valid(
            eps in 1e-4f64..0.9,
            p in 0.01f64..0.5,
            dim in 1usize..200,
        ) {
            let consts = unit(dim);
            let a = derive_schedule(&consts, eps, p).unwrap();
            let b = derive_schedule(&consts, eps, p).unwrap();
            prop_assert_eq!(a.eta.to_bits(), b.eta.to_bits());
            prop_assert_eq!(&a, &b);
            let v = validate_schedule(&a, &consts);
            prop_assert!(v.pass, "failures {:?}", v.failures());
        }

        #[test]
        fn quartering_epsilon_halves_delta(eps in 1e-4f64..0.9) {
            let consts = unit(4);
            let a = derive_schedule(&consts, eps, 0.1).unwrap();
            let b = derive_schedule(&consts, eps / 4.0, 0.1).unwrap();
            prop_assert!((a.delta / b.delta - 2.0).abs() < 1e-14);
        }

        #[test]
        fn ko_dominates_lower_bound(
            log_eta in -12.0f64..-1.0,
            log_delta2 in -3.0f64..1.0,
            dim in 1usize..1000,
        ) {
            let eta = 10f64.powf(log_eta);
            let delta2 = 10f64.powf(log_delta2);
            prop_assume!(eta * delta2 <= 1.0);
            let ko = exit_round_length(eta, delta2, dim).unwrap();
            prop_assert!(ko >= exit_round_lower_bound(eta, delta2, dim, 1.0));
        }

        #[test]
        fn budget_monotone_in_gap(gap in 0.0f64..100.0, eta in 1e-6f64..1e-2, k0 in 1u128..1_000_000, b in 1e-3f64..1.0) {
            let (t1, t0) = budget(gap, eta, k0, b);
            let (t1b, _) = budget(2.0 * gap, eta, k0, b);
            prop_assert!(t1b >= t1);
            prop_assert_eq!(t0, t1 * k0);
        }
    }
}
