//! Weighted nonlinear least squares via Levenberg-Marquardt with a numeric
//! Jacobian. Small and dependency-light; the models fitted here have at most
//! five parameters.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("fit did not converge: last residual norm {residual}")]
    NonConvergence { residual: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("bad input: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// One-sigma parameter uncertainties from the scaled covariance diagonal.
    pub std_errors: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Weighted root-mean-square residual.
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Minimize `sum_i w_i (y_i - f(p, x_i))^2` starting from `p0`.
///
/// `weights` are inverse variances; when omitted, unit weights are used and
/// the covariance is scaled by the reduced chi-square, the usual convention
/// for unweighted fits.
pub fn levenberg_marquardt<F>(
    f: F,
    x: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
    p0: &[f64],
) -> Result<FitResult, FitError>
where
    F: Fn(&[f64], f64) -> f64,
{
    let n = x.len();
    let np = p0.len();
    if n != y.len() {
        return Err(FitError::BadInput(format!(
            "x and y lengths differ: {n} vs {}",
            y.len()
        )));
    }
    if n < np {
        return Err(FitError::BadInput(format!(
            "{n} points cannot constrain {np} parameters"
        )));
    }
    let w: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(FitError::BadInput("weights length mismatch".into()));
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };

    let chi2 = |p: &[f64]| -> f64 {
        x.iter()
            .zip(y)
            .zip(&w)
            .map(|((&xi, &yi), &wi)| {
                let r = yi - f(p, xi);
                wi * r * r
            })
            .sum()
    };

    let mut p = p0.to_vec();
    let mut cur = chi2(&p);
    let mut lambda = 1e-3;
    let max_iter = 200;
    let mut iterations = 0;
    let mut jtj = DMatrix::zeros(np, np);

    for _ in 0..max_iter {
        iterations += 1;
        // Numeric Jacobian, central differences.
        let mut jac = DMatrix::zeros(n, np);
        for k in 0..np {
            let h = 1e-6 * p[k].abs().max(1e-9);
            let mut ph = p.clone();
            ph[k] += h;
            let mut pl = p.clone();
            pl[k] -= h;
            for i in 0..n {
                jac[(i, k)] = (f(&ph, x[i]) - f(&pl, x[i])) / (2.0 * h);
            }
        }
        let resid = DVector::from_iterator(n, x.iter().zip(y).map(|(&xi, &yi)| yi - f(&p, xi)));
        let wmat = DVector::from_iterator(n, w.iter().copied());
        let jw = {
            let mut m = jac.clone();
            for i in 0..n {
                for k in 0..np {
                    m[(i, k)] *= wmat[i];
                }
            }
            m
        };
        jtj = jac.transpose() * &jw;
        let g = jw.transpose() * &resid;

        let mut improved = false;
        for _ in 0..12 {
            let mut damped = jtj.clone();
            for k in 0..np {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            let Some(step) = damped.lu().solve(&g) else {
                lambda *= 8.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_chi2 = chi2(&trial);
            if trial_chi2.is_finite() && trial_chi2 < cur {
                let rel = (cur - trial_chi2) / cur.max(1e-300);
                p = trial;
                cur = trial_chi2;
                lambda = (lambda / 4.0).max(1e-12);
                improved = true;
                if rel < 1e-12 {
                    iterations = max_iter; // treated as converged below
                }
                break;
            }
            lambda *= 8.0;
        }
        if !improved {
            break; // stuck at a (local) minimum
        }
        if iterations >= max_iter {
            break;
        }
    }

    let dof = (n as f64 - np as f64).max(1.0);
    let scale = if weights.is_some() { 1.0 } else { cur / dof };
    let covariance = jtj
        .clone()
        .try_inverse()
        .map(|inv| inv * scale)
        .unwrap_or_else(|| DMatrix::from_element(np, np, f64::NAN));
    let std_errors = (0..np).map(|k| covariance[(k, k)].max(0.0).sqrt()).collect();
    Ok(FitResult {
        params: p,
        std_errors,
        covariance,
        residual_norm: (cur / n as f64).sqrt(),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_exponential_parameters() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 2.0).collect();
        let y: Vec<f64> = x.iter().map(|&t| 0.8 * (-t / 30.0f64).exp() + 0.1).collect();
        let model = |p: &[f64], t: f64| p[0] * (-t / p[1]).exp() + p[2];
        let fit = levenberg_marquardt(model, &x, &y, None, &[1.0, 10.0, 0.0]).unwrap();
        assert_relative_eq!(fit.params[0], 0.8, max_relative = 1e-8);
        assert_relative_eq!(fit.params[1], 30.0, max_relative = 1e-8);
        assert_relative_eq!(fit.params[2], 0.1, max_relative = 1e-7);
        assert!(fit.residual_norm < 1e-10);
    }

    #[test]
    fn weighted_fit_uses_inverse_variances() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&t| 2.0 * t + 1.0).collect();
        let w = vec![4.0; 20];
        let fit = levenberg_marquardt(|p, t| p[0] * t + p[1], &x, &y, Some(&w), &[1.0, 0.0]).unwrap();
        assert_relative_eq!(fit.params[0], 2.0, max_relative = 1e-10);
        // With exact data the parameter uncertainty comes straight from the
        // provided variances and stays finite.
        assert!(fit.std_errors[0].is_finite());
    }

    #[test]
    fn rejects_underdetermined_input() {
        let r = levenberg_marquardt(|p, t| p[0] * t, &[1.0], &[2.0, 3.0], None, &[1.0]);
        assert!(matches!(r, Err(FitError::BadInput(_))));
    }
}
