//! Small derivative-free solvers shared by the calibration routines.

/// Result of a Nelder-Mead minimization.
#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fval: f64,
    pub iterations: usize,
}

/// Standard Nelder-Mead downhill simplex with reflection 1, expansion 2,
/// contraction 0.5 and shrink 0.5. Stops when the simplex function spread
/// falls below `tol` or after `max_iter` iterations.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    scale: &[f64],
    tol: f64,
    max_iter: usize,
) -> NmResult {
    let n = x0.len();
    assert_eq!(scale.len(), n, "scale must match dimension");
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += scale[i];
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).unwrap());
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];
        if (fvals[worst] - fvals[best]).abs() <= tol * (1.0 + fvals[best].abs()) {
            break;
        }

        // Centroid of all points except the worst.
        let mut centroid = vec![0.0; n];
        for (idx, v) in simplex.iter().enumerate() {
            if idx == worst {
                continue;
            }
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }

        let blend = |a: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + a * (c - w))
                .collect()
        };

        let reflected = blend(1.0);
        let fr = f(&reflected);
        if fr < fvals[best] {
            let expanded = blend(2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[worst] = expanded;
                fvals[worst] = fe;
            } else {
                simplex[worst] = reflected;
                fvals[worst] = fr;
            }
        } else if fr < fvals[second_worst] {
            simplex[worst] = reflected;
            fvals[worst] = fr;
        } else {
            let contracted = blend(-0.5);
            let fc = f(&contracted);
            if fc < fvals[worst] {
                simplex[worst] = contracted;
                fvals[worst] = fc;
            } else {
                // Shrink toward the best vertex.
                let best_point = simplex[best].clone();
                for idx in 0..=n {
                    if idx == best {
                        continue;
                    }
                    for (x, b) in simplex[idx].iter_mut().zip(&best_point) {
                        *x = b + 0.5 * (*x - b);
                    }
                    fvals[idx] = f(&simplex[idx]);
                }
            }
        }
    }

    let (best, _) = fvals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    NmResult {
        x: simplex[best].clone(),
        fval: fvals[best],
        iterations,
    }
}

/// Root of a monotone-bracketed function by bisection.
///
/// Returns an error if `f(lo)` and `f(hi)` do not bracket a sign change.
pub fn bisect<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64, String> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(format!(
            "no sign change on bracket [{lo}, {hi}]: f = [{flo}, {fhi}]"
        ));
    }
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 || (hi - lo).abs() < tol {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Secant iteration for a root of `f`, clamped to `[lo, hi]`. Falls back to
/// bisection-style halving when the secant step leaves the bracket.
pub fn secant<F: FnMut(f64) -> f64>(
    mut f: F,
    mut x0: f64,
    mut x1: f64,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64, String> {
    let mut f0 = f(x0);
    if f0.abs() < tol {
        return Ok(x0);
    }
    let mut f1 = f(x1);
    for _ in 0..max_iter {
        if f1.abs() < tol {
            return Ok(x1);
        }
        let denom = f1 - f0;
        let mut x2 = if denom.abs() > 1e-300 {
            x1 - f1 * (x1 - x0) / denom
        } else {
            0.5 * (x0 + x1)
        };
        if !(lo..=hi).contains(&x2) || !x2.is_finite() {
            x2 = 0.5 * (x0 + x1);
        }
        x0 = x1;
        f0 = f1;
        x1 = x2;
        f1 = f(x1);
    }
    if f1.abs() < tol.max(1e-9) {
        Ok(x1)
    } else {
        Err(format!("secant did not converge: residual {f1} at {x1}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_minimizes_quadratic_bowl() {
        let res = nelder_mead(
            |x| (x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.5).powi(2),
            &[0.0, 0.0],
            &[0.1, 0.1],
            1e-14,
            500,
        );
        assert!((res.x[0] - 1.5).abs() < 1e-6, "x0 = {}", res.x[0]);
        assert!((res.x[1] + 0.5).abs() < 1e-6, "x1 = {}", res.x[1]);
    }

    #[test]
    fn bisect_finds_root() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12, 200).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-10);
        assert!(bisect(|x| x * x + 1.0, 0.0, 2.0, 1e-12, 200).is_err());
    }

    #[test]
    fn secant_converges_and_respects_bracket() {
        let r = secant(|x| x.cos() - x, 0.0, 1.0, 0.0, 1.0, 1e-13, 100).unwrap();
        assert!((r - 0.7390851332151607).abs() < 1e-10);
    }
}
