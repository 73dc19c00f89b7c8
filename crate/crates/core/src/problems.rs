//! Test objectives with exact derivatives and declared constants, plus the
//! additive-noise stochastic gradient oracle.

use crate::error::{Error, Result};
use crate::hyperparams::ProblemConstants;
use crate::linalg::{norm, Matrix};
use crate::noise::NoiseSampler;
use crate::rng::CounterRng;

/// Default radius of the box (or ball) over which `L` and `ρ` are computed.
pub const DEFAULT_BOX_RADIUS: f64 = 10.0;

pub trait Objective: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient_into(&self, x: &[f64], out: &mut [f64]);
    fn hvp(&self, x: &[f64], v: &[f64]) -> Vec<f64>;

    /// Gradient-Lipschitz constant over the evaluation domain.
    fn lipschitz(&self) -> f64;
    /// Hessian-Lipschitz constant over the evaluation domain.
    fn hessian_lipschitz(&self) -> f64;
    /// Global minimum value, when the objective is bounded below.
    fn optimal_value(&self) -> Option<f64>;
    /// Radius of the evaluation domain the constants are valid on.
    fn domain_radius(&self) -> f64;

    /// True when the objective is only meant for diagnostics (unbounded below).
    fn diagnostics_only(&self) -> bool {
        self.optimal_value().is_none()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(x, &mut g);
        g
    }

    /// Explicit Hessian assembled column by column from `hvp`.
    fn hessian(&self, x: &[f64]) -> Matrix {
        let d = self.dim();
        Matrix::from_columns(d, |j| self.hvp(x, &crate::linalg::basis(d, j)))
    }

    /// Declared constants with `Δ = f(x_init) − f*` and noise bound `sigma`.
    fn constants(&self, sigma: f64, x_init: &[f64]) -> Result<ProblemConstants> {
        let f_star = self
            .optimal_value()
            .ok_or_else(|| Error::invalid(format!("{} is unbounded below; Δ is undefined", self.name())))?;
        let gap = (self.value(x_init) - f_star).max(0.0);
        ProblemConstants::new(self.lipschitz(), self.hessian_lipschitz(), sigma, gap, self.dim())
    }
}

/// `f(x) = Σᵢ ¼uᵢ⁴ − ½uᵢ² + ½wᵢ²` with `(uᵢ, wᵢ) = (x₂ᵢ, x₂ᵢ₊₁)`.
///
/// Strict saddle at the origin, minima at `uᵢ = ±1, wᵢ = 0`. On the box
/// `‖x‖∞ ≤ R`: `L = 3R² − 1`, `ρ = 6R`.
#[derive(Debug, Clone)]
pub struct QuarticSaddle {
    dim: usize,
    box_radius: f64,
}

impl QuarticSaddle {
    pub fn new(dim: usize) -> Result<Self> {
        Self::with_box(dim, DEFAULT_BOX_RADIUS)
    }

    pub fn with_box(dim: usize, box_radius: f64) -> Result<Self> {
        if dim < 2 || !dim.is_multiple_of(2) {
            return Err(Error::invalid(format!("quartic saddle needs an even dimension ≥ 2, got {dim}")));
        }
        if !(box_radius >= 1.0 && box_radius.is_finite()) {
            return Err(Error::invalid(format!("box radius must be at least 1, got {box_radius}")));
        }
        Ok(Self { dim, box_radius })
    }
}

pub fn make_quartic_saddle(dim: usize) -> Result<QuarticSaddle> {
    QuarticSaddle::new(dim)
}

impl Objective for QuarticSaddle {
    fn name(&self) -> &str {
        "quartic"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.chunks_exact(2)
            .map(|p| {
                let (u, w) = (p[0], p[1]);
                0.25 * u * u * u * u - 0.5 * u * u + 0.5 * w * w
            })
            .sum()
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (p, g) in x.chunks_exact(2).zip(out.chunks_exact_mut(2)) {
            g[0] = p[0] * p[0] * p[0] - p[0];
            g[1] = p[1];
        }
    }

    fn hvp(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for i in (0..self.dim).step_by(2) {
            out[i] = (3.0 * x[i] * x[i] - 1.0) * v[i];
            out[i + 1] = v[i + 1];
        }
        out
    }

    fn lipschitz(&self) -> f64 {
        3.0 * self.box_radius * self.box_radius - 1.0
    }

    fn hessian_lipschitz(&self) -> f64 {
        6.0 * self.box_radius
    }

    fn optimal_value(&self) -> Option<f64> {
        Some(-(self.dim as f64) / 8.0)
    }

    fn domain_radius(&self) -> f64 {
        self.box_radius
    }
}

/// `f(x) = bᵀx + ½xᵀHx`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    h: Matrix,
    b: Vec<f64>,
    spectral_norm: f64,
    optimal_value: Option<f64>,
}

const SYMMETRY_TOL: f64 = 1e-12;
const ZERO_EIGEN_TOL: f64 = 1e-12;

impl Quadratic {
    pub fn new(h: Matrix, b: Vec<f64>) -> Result<Self> {
        if h.dim() != b.len() || b.is_empty() {
            return Err(Error::invalid(format!(
                "quadratic needs H of size n×n and b of length n ≥ 1 (got {} and {})",
                h.dim(),
                b.len()
            )));
        }
        let asymmetry = h.asymmetry();
        if asymmetry > SYMMETRY_TOL {
            return Err(Error::NonSymmetric { asymmetry });
        }
        let eig = h.symmetric_eigen();
        let mut optimal_value = Some(0.0);
        for (k, &lambda) in eig.values.iter().enumerate() {
            let proj = crate::linalg::dot(&eig.vector(k), &b);
            if lambda > ZERO_EIGEN_TOL {
                optimal_value = optimal_value.map(|f| f - 0.5 * proj * proj / lambda);
            } else if lambda < -ZERO_EIGEN_TOL || proj.abs() > ZERO_EIGEN_TOL {
                optimal_value = None;
            }
        }
        Ok(Self {
            spectral_norm: eig.spectral_norm(),
            h,
            b,
            optimal_value,
        })
    }

    pub fn hessian_matrix(&self) -> &Matrix {
        &self.h
    }

    pub fn linear_term(&self) -> &[f64] {
        &self.b
    }
}

pub fn make_quadratic(h: Matrix, b: Vec<f64>) -> Result<Quadratic> {
    Quadratic::new(h, b)
}

impl Objective for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        crate::linalg::dot(&self.b, x) + 0.5 * self.h.quad_form(x)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.h.matvec_into(x, out);
        for (o, b) in out.iter_mut().zip(&self.b) {
            *o += b;
        }
    }

    fn hvp(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        self.h.matvec(v)
    }

    fn lipschitz(&self) -> f64 {
        self.spectral_norm
    }

    fn hessian_lipschitz(&self) -> f64 {
        0.0
    }

    fn optimal_value(&self) -> Option<f64> {
        self.optimal_value
    }

    fn domain_radius(&self) -> f64 {
        f64::INFINITY
    }
}

/// `f(U) = ¼‖UUᵀ − M‖²_F` over `U ∈ ℝ^{n×r}`, flattened row-major.
///
/// On the Frobenius ball `‖U‖_F ≤ R`: `L ≤ 3R² + ‖M‖₂`, `ρ ≤ 6R`.
#[derive(Debug, Clone)]
pub struct MatrixFactorization {
    m: Matrix,
    rank: usize,
    radius: f64,
    m_norm: f64,
    optimal_value: f64,
}

impl MatrixFactorization {
    pub fn new(m: Matrix, rank: usize) -> Result<Self> {
        Self::with_radius(m, rank, DEFAULT_BOX_RADIUS)
    }

    pub fn with_radius(m: Matrix, rank: usize, radius: f64) -> Result<Self> {
        let n = m.dim();
        if rank == 0 || rank > n {
            return Err(Error::invalid(format!("rank must lie in 1..={n}, got {rank}")));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("radius must be positive, got {radius}")));
        }
        let asymmetry = m.asymmetry();
        if asymmetry > SYMMETRY_TOL {
            return Err(Error::NonSymmetric { asymmetry });
        }
        let eig = m.symmetric_eigen();
        if eig.min() < -1e-10 * eig.spectral_norm().max(1.0) {
            return Err(Error::invalid(format!("M must be positive semidefinite (λ_min = {})", eig.min())));
        }
        // Eigenvalues are ascending; the discarded ones are the n − r smallest.
        let optimal_value = 0.25 * eig.values[..n - rank].iter().map(|l| l * l).sum::<f64>();
        Ok(Self {
            m_norm: eig.spectral_norm(),
            m,
            rank,
            radius,
            optimal_value,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn target(&self) -> &Matrix {
        &self.m
    }

    /// `UUᵀ − M`.
    fn residual(&self, u: &[f64]) -> Matrix {
        let n = self.m.dim();
        let r = self.rank;
        let mut res = self.m.scaled(-1.0);
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..r).map(|k| u[i * r + k] * u[j * r + k]).sum();
                res[(i, j)] += s;
                if i != j {
                    res[(j, i)] += s;
                }
            }
        }
        res
    }

    /// `A·W` for an n×n `A` and an n×r `W` (row-major).
    fn apply(&self, a: &Matrix, w: &[f64], out: &mut [f64]) {
        let n = self.m.dim();
        let r = self.rank;
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..n {
            for l in 0..n {
                let a_il = a[(i, l)];
                if a_il == 0.0 {
                    continue;
                }
                for k in 0..r {
                    out[i * r + k] += a_il * w[l * r + k];
                }
            }
        }
    }
}

pub fn make_matrix_factorization(m: Matrix, rank: usize) -> Result<MatrixFactorization> {
    MatrixFactorization::new(m, rank)
}

impl Objective for MatrixFactorization {
    fn name(&self) -> &str {
        "matrix-factorization"
    }

    fn dim(&self) -> usize {
        self.m.dim() * self.rank
    }

    fn value(&self, x: &[f64]) -> f64 {
        let f = self.residual(x).frobenius();
        0.25 * f * f
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let res = self.residual(x);
        self.apply(&res, x, out);
    }

    fn hvp(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.m.dim();
        let r = self.rank;
        // (UVᵀ + VUᵀ)U + (UUᵀ − M)V
        let mut sym = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                sym[(i, j)] = (0..r).map(|k| x[i * r + k] * v[j * r + k] + v[i * r + k] * x[j * r + k]).sum();
            }
        }
        let mut a = vec![0.0; n * r];
        let mut b = vec![0.0; n * r];
        self.apply(&sym, x, &mut a);
        self.apply(&self.residual(x), v, &mut b);
        a.iter().zip(&b).map(|(p, q)| p + q).collect()
    }

    fn lipschitz(&self) -> f64 {
        3.0 * self.radius * self.radius + self.m_norm
    }

    fn hessian_lipschitz(&self) -> f64 {
        6.0 * self.radius
    }

    fn optimal_value(&self) -> Option<f64> {
        Some(self.optimal_value)
    }

    fn domain_radius(&self) -> f64 {
        self.radius
    }
}

/// `∇f(x) + ξ` with `ξ` drawn from an additive noise sampler.
pub struct StochasticOracle<'a> {
    pub objective: &'a dyn Objective,
    pub noise: &'a NoiseSampler,
    samples_drawn: u64,
}

impl<'a> StochasticOracle<'a> {
    pub fn new(objective: &'a dyn Objective, noise: &'a NoiseSampler) -> Result<Self> {
        if objective.dim() != noise.dim {
            return Err(Error::invalid(format!(
                "objective dimension {} differs from noise dimension {}",
                objective.dim(),
                noise.dim
            )));
        }
        Ok(Self {
            objective,
            noise,
            samples_drawn: 0,
        })
    }

    /// Number of stochastic gradients evaluated so far.
    pub fn samples_drawn(&self) -> u64 {
        self.samples_drawn
    }

    /// Writes `∇f(x)` into `grad` and the noise draw into `xi`; `grad` then
    /// holds the stochastic gradient `∇f(x) + ξ`.
    pub fn draw_into(&mut self, x: &[f64], rng: &mut CounterRng, grad: &mut [f64], xi: &mut [f64]) {
        self.objective.gradient_into(x, grad);
        self.noise.sample_into(rng, xi);
        for (g, e) in grad.iter_mut().zip(xi.iter()) {
            *g += e;
        }
        self.samples_drawn += 1;
    }
}

pub fn stochastic_gradient(oracle: &mut StochasticOracle, x: &[f64], rng: &mut CounterRng) -> Vec<f64> {
    let d = oracle.objective.dim();
    let mut g = vec![0.0; d];
    let mut xi = vec![0.0; d];
    oracle.draw_into(x, rng, &mut g, &mut xi);
    g
}

/// Default central-difference step for gradients, `1e-5·(1 + ‖x‖)`.
pub fn gradient_fd_step(x: &[f64]) -> f64 {
    1e-5 * (1.0 + norm(x))
}

/// Default central-difference step for Hessian-vector products, `1e-6·(1 + ‖x‖)`.
pub fn hvp_fd_step(x: &[f64]) -> f64 {
    1e-6 * (1.0 + norm(x))
}

fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Largest coordinate-wise relative error between the analytic gradient and
/// central differences of the value.
pub fn finite_diff_gradient_check(obj: &dyn Objective, x: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let g = obj.gradient(x);
    let mut xp = x.to_vec();
    let fd: Vec<f64> = (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = obj.value(&xp);
            xp[i] = x[i] - h;
            let fm = obj.value(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect();
    Ok(max_relative_error(&g, &fd))
}

/// Largest coordinate-wise relative error between `hvp(x, v)` and central
/// differences of the gradient along `v`.
pub fn finite_diff_hvp_check(obj: &dyn Objective, x: &[f64], v: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let gp = obj.gradient(&xp);
    let gm = obj.gradient(&xm);
    let fd: Vec<f64> = gp.iter().zip(&gm).map(|(p, m)| (p - m) / (2.0 * h)).collect();
    Ok(max_relative_error(&obj.hvp(x, v), &fd))
}
