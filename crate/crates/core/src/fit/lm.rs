//! Damped Gauss-Newton least squares with a Levenberg-Marquardt schedule.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Bound on `|J_k . r| / (|J_k| |r|)` over the Jacobian columns `J_k`.
    pub gradient_tol: f64,
    pub step_tol: f64,
    /// Stop when both the actual and the predicted relative cost decrease
    /// of an accepted step fall below this.
    pub cost_tol: f64,
    /// Forward-difference step relative to `max(|p|, 1)`.
    pub jacobian_step: f64,
    /// Largest accepted condition number of the Jacobian at the start point.
    pub max_condition: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            gradient_tol: 1e-10,
            step_tol: 1e-12,
            cost_tol: 1e-12,
            jacobian_step: 1e-6,
            max_condition: 1e12,
        }
    }
}

/// State of a fit that did not converge.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub params: Vec<f64>,
    pub cost: f64,
    pub gradient_norm: f64,
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub covariance: DMatrix<f64>,
    pub sigmas: Vec<f64>,
    pub dof: usize,
    /// `J^T J` at the solution.
    pub normal_matrix: DMatrix<f64>,
    /// Residual variance `cost / dof` that scales the covariance.
    pub residual_variance: f64,
}

fn jacobian<F>(f: &F, p: &[f64], r0: &DVector<f64>, rel: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = r0.len();
    let mut j = DMatrix::zeros(m, p.len());
    let mut q = p.to_vec();
    for k in 0..p.len() {
        let h = rel * p[k].abs().max(1.0);
        q[k] = p[k] + h;
        let r = f(&q);
        q[k] = p[k];
        if r.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: r.len(),
            });
        }
        for i in 0..m {
            j[(i, k)] = (r[i] - r0[i]) / h;
        }
    }
    Ok(j)
}

fn condition(j: &DMatrix<f64>) -> f64 {
    let sv = j.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn cost_of(r: &[f64]) -> f64 {
    let c: f64 = r.iter().map(|x| x * x).sum();
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

/// Minimizes `sum r_i(p)^2` starting at `p0`.
///
/// Residual functions may return non-finite values to mark infeasible
/// parameters; such trial steps are rejected.
pub fn levenberg_marquardt<F>(f: F, p0: &[f64], opts: &LmOptions) -> Result<LmOutcome>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut r = DVector::from_vec(f(&p));
    let m = r.len();
    if m < n {
        return Err(Error::invalid(format!("{m} residuals cannot determine {n} parameters")));
    }
    let mut cost = cost_of(r.as_slice());
    if !cost.is_finite() {
        return Err(Error::invalid("initial parameters give non-finite residuals"));
    }
    let mut j = jacobian(&f, &p, &r, opts.jacobian_step)?;
    let cond = condition(&j);
    if !(cond <= opts.max_condition) {
        return Err(Error::DegenerateJacobian { condition: cond });
    }

    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    while iterations < opts.max_iterations {
        iterations += 1;
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * &r;
        grad_norm = g.amax();
        let r_norm = r.norm();
        let scaled = (0..n)
            .map(|k| {
                let c = j.column(k).norm();
                if c > 0.0 && r_norm > 0.0 {
                    g[k].abs() / (c * r_norm)
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        if grad_norm == 0.0 || scaled < opts.gradient_tol {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..n {
                let d = jtj[(k, k)];
                a[(k, k)] += lambda * if d > 0.0 { d } else { 1.0 };
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let r_trial = f(&trial);
            let c_trial = cost_of(&r_trial);
            if c_trial < cost {
                let step = delta
                    .iter()
                    .zip(&p)
                    .map(|(d, x)| d.abs() / x.abs().max(1e-300))
                    .fold(0.0, f64::max);
                let rel_gain = (cost - c_trial) / cost.max(1e-300);
                let jd = &j * &delta;
                let predicted = -(2.0 * delta.dot(&g) + jd.norm_squared()) / cost.max(1e-300);
                p = trial;
                r = DVector::from_vec(r_trial);
                cost = c_trial;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if step < opts.step_tol || (rel_gain < opts.cost_tol && predicted.abs() < opts.cost_tol) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no downhill step exists at machine precision: a minimum
            converged = true;
        }
        if converged {
            break;
        }
        j = jacobian(&f, &p, &r, opts.jacobian_step)?;
    }
    if !converged {
        return Err(Error::NoConvergence(Box::new(FitDiagnostics {
            iterations,
            params: p,
            cost,
            gradient_norm: grad_norm,
            damping: lambda,
        })));
    }

    let j = jacobian(&f, &p, &r, opts.jacobian_step)?;
    let dof = m - n;
    let s2 = if dof > 0 { cost / dof as f64 } else { 0.0 };
    let jtj = j.transpose() * &j;
    let covariance = match jtj.clone().try_inverse() {
        Some(inv) => inv * s2,
        None => jtj.clone().pseudo_inverse(1e-14).map_err(|e| Error::Internal(e.to_string()))? * s2,
    };
    let sigmas = (0..n).map(|k| covariance[(k, k)].max(0.0).sqrt()).collect();
    Ok(LmOutcome {
        params: p,
        cost,
        iterations,
        covariance,
        sigmas,
        dof,
        normal_matrix: jtj,
        residual_variance: s2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_a_line_exactly() {
        let xs: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 2.0).collect();
        let out = levenberg_marquardt(
            |p| xs.iter().zip(&ys).map(|(x, y)| p[0] * x + p[1] - y).collect(),
            &[1.0, 0.0],
            &LmOptions::default(),
        )
        .unwrap();
        assert!((out.params[0] - 3.0).abs() < 1e-8);
        assert!((out.params[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock() {
        let out = levenberg_marquardt(
            |p| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]],
            &[-1.2, 1.0],
            &LmOptions::default(),
        )
        .unwrap();
        assert!((out.params[0] - 1.0).abs() < 1e-6);
        assert!((out.params[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn duplicate_parameters_are_degenerate() {
        let err = levenberg_marquardt(
            |p| (0..5).map(|k| (p[0] + p[1]) * k as f64 - 1.0).collect(),
            &[0.5, 0.5],
            &LmOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateJacobian { .. }));
    }

    #[test]
    fn iteration_cap_reports_diagnostics() {
        let opts = LmOptions {
            max_iterations: 2,
            ..LmOptions::default()
        };
        let err = levenberg_marquardt(
            |p| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]],
            &[-1.2, 1.0],
            &opts,
        )
        .unwrap_err();
        match err {
            Error::NoConvergence(d) => assert_eq!(d.iterations, 2),
            other => panic!("{other:?}"),
        }
    }
}
