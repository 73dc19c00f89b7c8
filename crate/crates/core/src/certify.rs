//! Approximate second-order stationarity certificates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperparams::Schedule;
use crate::linalg::{dot, norm, SymmetricEigen};
use crate::problems::Objective;
use crate::rng::CounterRng;

/// Largest dimension for which a dense Hessian is assembled.
pub const DENSE_LIMIT: usize = 200;
/// `certify` uses the dense solver up to this dimension.
pub const CERTIFY_DENSE_LIMIT: usize = 50;
const CERTIFY_SEED: u64 = 0x5EED_CE27;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenEstimate {
    pub lambda_min: f64,
    pub residual: f64,
    pub iterations: usize,
}

pub fn default_tolerance(lipschitz: f64) -> f64 {
    1e-6 * lipschitz.max(1.0)
}

pub fn default_max_iters(dim: usize) -> usize {
    (10.0 * dim as f64 * ((dim + 2) as f64).ln()).ceil() as usize + 1000
}

/// Smallest Hessian eigenvalue by power iteration on `c·I − ∇²f(x)`.
///
/// Stops once the residual `‖Mv − μv‖` drops to `tol`; otherwise fails with
/// [`Error::NotConverged`] carrying the last estimate.
pub fn min_eigenvalue(
    obj: &dyn Objective,
    x: &[f64],
    shift: f64,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Result<EigenEstimate> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::invalid(format!("tolerance must be positive and finite, got {tol}")));
    }
    if !shift.is_finite() {
        return Err(Error::invalid(format!("shift must be finite, got {shift}")));
    }
    let d = obj.dim();
    let mut rng = CounterRng::new(seed);
    let mut v = vec![0.0; d];
    rng.fill_normal(&mut v);
    let n0 = norm(&v);
    v.iter_mut().for_each(|a| *a /= n0);

    let mut mu = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let hv = obj.hvp(x, &v);
        let w: Vec<f64> = v.iter().zip(&hv).map(|(a, b)| shift * a - b).collect();
        mu = dot(&v, &w);
        residual = w.iter().zip(&v).map(|(a, b)| (a - mu * b).powi(2)).sum::<f64>().sqrt();
        if residual <= tol {
            return Ok(EigenEstimate {
                lambda_min: shift - mu,
                residual,
                iterations: it,
            });
        }
        let nw = norm(&w);
        v = w.into_iter().map(|a| a / nw).collect();
    }
    Err(Error::NotConverged {
        estimate: shift - mu,
        residual,
        iterations: max_iters,
    })
}

/// Full eigendecomposition of the explicit Hessian.
pub fn dense_hessian_eigen(obj: &dyn Objective, x: &[f64]) -> Result<SymmetricEigen> {
    let d = obj.dim();
    if d > DENSE_LIMIT {
        return Err(Error::DimensionTooLarge {
            dim: d,
            limit: DENSE_LIMIT,
        });
    }
    Ok(obj.hessian(x).symmetric_eigen())
}

pub fn dense_min_eigenvalue(obj: &dyn Objective, x: &[f64]) -> Result<f64> {
    Ok(dense_hessian_eigen(obj, x)?.min())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenMethod {
    Dense,
    PowerIteration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub grad_norm: f64,
    pub lambda_min: f64,
    /// `18ρB²`
    pub grad_threshold: f64,
    /// `−17δ`
    pub eig_threshold: f64,
    pub grad_pass: bool,
    pub eig_pass: bool,
    /// Set when the eigenvalue iteration did not converge; `eig_pass` is then false.
    pub eig_inconclusive: bool,
    pub eig_residual: f64,
    pub method: EigenMethod,
}

impl Certificate {
    pub fn pass(&self) -> bool {
        self.grad_pass && self.eig_pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyOptions {
    pub seed: u64,
    pub dense_limit: usize,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            seed: CERTIFY_SEED,
            dense_limit: CERTIFY_DENSE_LIMIT,
            tol: None,
            max_iters: None,
        }
    }
}

pub fn certify(obj: &dyn Objective, x: &[f64], schedule: &Schedule) -> Result<Certificate> {
    certify_with(obj, x, schedule, &CertifyOptions::default())
}

pub fn certify_with(obj: &dyn Objective, x: &[f64], schedule: &Schedule, opts: &CertifyOptions) -> Result<Certificate> {
    if x.len() != obj.dim() {
        return Err(Error::invalid(format!("point has length {}, objective dimension is {}", x.len(), obj.dim())));
    }
    let grad_norm = norm(&obj.gradient(x));
    let rho = obj.hessian_lipschitz();
    let b = schedule.ball_radius;
    let grad_threshold = 18.0 * rho * b * b;
    let eig_threshold = -17.0 * schedule.delta;

    let (lambda_min, residual, inconclusive, method) = if obj.dim() <= opts.dense_limit {
        let eig = dense_hessian_eigen(obj, x)?;
        (eig.min(), eig.off_diagonal, false, EigenMethod::Dense)
    } else {
        let l = obj.lipschitz();
        let tol = opts.tol.unwrap_or_else(|| default_tolerance(l));
        let iters = opts.max_iters.unwrap_or_else(|| default_max_iters(obj.dim()));
        match min_eigenvalue(obj, x, l, tol, iters, opts.seed) {
            Ok(e) => (e.lambda_min, e.residual, false, EigenMethod::PowerIteration),
            Err(Error::NotConverged { estimate, residual, .. }) => {
                (estimate, residual, true, EigenMethod::PowerIteration)
            }
            Err(e) => return Err(e),
        }
    };

    Ok(Certificate {
        grad_norm,
        lambda_min,
        grad_threshold,
        eig_threshold,
        grad_pass: grad_norm <= grad_threshold,
        eig_pass: !inconclusive && lambda_min >= eig_threshold - residual,
        eig_inconclusive: inconclusive,
        eig_residual: residual,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperparams::{manual_schedule, ManualSchedule, ProblemConstants};
    use crate::linalg::Matrix;
    use crate::problems::{make_quadratic, make_quartic_saddle};

    fn schedule_with_delta(delta: f64, b: f64) -> Schedule {
        let consts = ProblemConstants::new(1.0, 1.0, 1.0, 1.0, 2).unwrap();
        manual_schedule(
            &consts,
            &ManualSchedule {
                epsilon: delta * delta,
                p: 0.1,
                eta: 1e-3,
                ball_radius: b,
                k0: Some(10),
                ko: Some(10),
            },
        )
        .unwrap()
    }

    #[test]
    fn power_iteration_on_explicit_spectra() {
        let q = make_quadratic(Matrix::diag(&[1.0, -0.5]), vec![0.0; 2]).unwrap();
        let e = min_eigenvalue(&q, &[3.0, 4.0], 1.0, 1e-9, 10_000, 1).unwrap();
        assert!((e.lambda_min + 0.5).abs() < 1e-9);

        let f = make_quartic_saddle(2).unwrap();
        let e = min_eigenvalue(&f, &[0.0, 0.0], 3.0, 1e-9, 10_000, 2).unwrap();
        assert!((e.lambda_min + 1.0).abs() < 1e-9);
    }

    #[test]
    fn not_converged_carries_estimate() {
        let f = make_quartic_saddle(4).unwrap();
        match min_eigenvalue(&f, &[0.3, 0.0, 0.31, 0.0], 299.0, 1e-14, 3, 0) {
            Err(Error::NotConverged { iterations, estimate, .. }) => {
                assert_eq!(iterations, 3);
                assert!(estimate.is_finite());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dense_examples() {
        let id = make_quadratic(Matrix::identity(3), vec![0.0; 3]).unwrap();
        assert_eq!(dense_min_eigenvalue(&id, &[0.0; 3]).unwrap(), 1.0);
        let d = make_quadratic(Matrix::diag(&[3.0, -2.0, 0.5]), vec![0.0; 3]).unwrap();
        assert_eq!(dense_min_eigenvalue(&d, &[0.0; 3]).unwrap(), -2.0);
        let big = make_quartic_saddle(202).unwrap();
        assert!(matches!(
            dense_min_eigenvalue(&big, &vec![0.0; 202]),
            Err(Error::DimensionTooLarge { dim: 202, .. })
        ));
    }

    #[test]
    fn quartic_minimizer_and_saddle() {
        let f = make_quartic_saddle(2).unwrap();
        let s = schedule_with_delta(0.01, 0.05);
        let c = certify(&f, &[1.0, 0.0], &s).unwrap();
        assert_eq!(c.grad_norm, 0.0);
        assert_eq!(c.lambda_min, 1.0);
        assert!(c.pass());

        // λ_min(∇²f(1, 0)) = min(3·1 − 1, 1) = 1; the u-direction alone has 2.
        let h = f.hessian(&[1.0, 0.0]);
        assert_eq!(h[(0, 0)], 2.0);

        let low = certify(&f, &[0.0, 0.0], &schedule_with_delta(0.05, 0.05)).unwrap();
        assert!(!low.eig_pass);
        let high = certify(&f, &[0.0, 0.0], &schedule_with_delta(1.0 / 16.0, 0.05)).unwrap();
        assert!(high.eig_pass);
    }

    #[test]
    fn thresholds() {
        let f = make_quartic_saddle(2).unwrap();
        let s = schedule_with_delta(0.1, 0.05);
        let c = certify(&f, &[0.2, 0.1], &s).unwrap();
        assert!((c.grad_threshold - 18.0 * 60.0 * 0.0025).abs() < 1e-12);
        assert!((c.eig_threshold + 1.7).abs() < 1e-12);
    }

    #[test]
    fn power_path_for_large_dimension() {
        let f = make_quartic_saddle(60).unwrap();
        let mut x = vec![0.0; 60];
        x[0] = 1.0;
        let s = schedule_with_delta(0.1, 0.05);
        let opts = CertifyOptions {
            max_iters: Some(200_000),
            ..Default::default()
        };
        let c = certify_with(&f, &x, &s, &opts).unwrap();
        assert_eq!(c.method, EigenMethod::PowerIteration);
        assert!(!c.eig_inconclusive);
        assert!((c.lambda_min + 1.0).abs() <= c.eig_residual.max(1e-6) * 10.0);
    }
}
