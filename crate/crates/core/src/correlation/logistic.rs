//! Four-parameter logistic mapping fitted by Levenberg-Marquardt.

use nalgebra::{Matrix4, Vector4};

use super::{pearson, CorrelationError};

pub const LOGISTIC_MAX_ITER: usize = 500;
pub const LOGISTIC_TOL: f64 = 1e-10;

/// `b1 / (1 + exp(-b2 (x - b3))) + b4`.
pub fn logistic4(b: &[f64; 4], x: f64) -> f64 {
    b[0] / (1.0 + (-b[1] * (x - b[2])).exp()) + b[3]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Parameters in the original prediction units.
    pub params: [f64; 4],
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sse(b: &[f64; 4], x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&xi, &yi)| (yi - logistic4(b, xi)).powi(2)).sum()
}

/// Least-squares fit of [`logistic4`] mapping `x` onto `y`.
///
/// Predictions are standardized internally for conditioning; the returned
/// parameters are expressed in the original units.
pub fn fit_logistic4(x: &[f64], y: &[f64]) -> Result<LogisticFit, CorrelationError> {
    let r = pearson(x, y)?;
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let xs: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();

    let (ymin, ymax) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let mut b = [ymax - ymin, r.signum(), 0.0, ymin];
    let mut cost = sse(&b, &xs, y);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < LOGISTIC_MAX_ITER {
        iterations += 1;
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (&xi, &yi) in xs.iter().zip(y) {
            let s = 1.0 / (1.0 + (-b[1] * (xi - b[2])).exp());
            let ds = s * (1.0 - s);
            let j = Vector4::new(s, b[0] * ds * (xi - b[2]), -b[0] * ds * b[1], 1.0);
            let resid = yi - (b[0] * s + b[3]);
            jtj += j * j.transpose();
            jtr += j * resid;
        }

        let mut improved = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for k in 0..4 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [b[0] + step[0], b[1] + step[1], b[2] + step[2], b[3] + step[3]];
            let trial_cost = sse(&trial, &xs, y);
            if trial_cost.is_finite() && trial_cost <= cost {
                let rel_change = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                let step_norm = step.norm();
                let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                b = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel_change < LOGISTIC_TOL || step_norm < LOGISTIC_TOL * (scale + LOGISTIC_TOL) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        // No damping level reduces the cost: we sit at a (local) minimum.
        if !improved {
            converged = true;
        }
        if converged || cost == 0.0 {
            converged = true;
            break;
        }
    }

    // Undo the standardization: b2 (x - mean)/sd - b2 b3 = (b2/sd)(x - (mean + b3 sd)).
    let params = [b[0], b[1] / sd, mean + b[2] * sd, b[3]];
    Ok(LogisticFit {
        sse: sse(&params, x, y),
        params,
        iterations,
        converged,
    })
}
