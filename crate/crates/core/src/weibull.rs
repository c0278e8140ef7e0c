//! Weibull extreme-value models over the upper tail of distance samples.
//!
//! A model is fitted to the `tail_size` largest distances by two-parameter
//! maximum likelihood after a fixed translation, and evaluated through its
//! CDF to score how extreme a new distance is.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OsrError, Result};

/// Iteration cap for the profiled shape equation.
const MAX_ITER: usize = 200;

/// Relative tolerance on the shape parameter update.
const SHAPE_TOL: f64 = 1e-9;

/// Per-class extreme-value model: `CDF(d) = 1 - exp(-((d - tau)/lambda)^kappa)`
/// for `d > tau`, zero otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeibullModel {
    /// Translation applied before the two-parameter fit, in distance units.
    pub tau: f64,
    /// Scale parameter, strictly positive.
    pub lambda: f64,
    /// Shape parameter, strictly positive.
    pub kappa: f64,
    /// Number of largest distances the model was fitted on.
    pub tail_size: usize,
}

impl WeibullModel {
    /// CDF at distance `d`. Total: returns 0 at or below the translation
    /// point and approaches 1 as `d` grows.
    pub fn cdf(&self, d: f64) -> f64 {
        if d <= self.tau {
            return 0.0;
        }
        let z = (d - self.tau) / self.lambda;
        1.0 - (-z.powf(self.kappa)).exp()
    }
}

/// CDF of `model` at `d`. Free-function form of [`WeibullModel::cdf`].
pub fn weibull_cdf(model: &WeibullModel, d: f64) -> f64 {
    model.cdf(d)
}

/// Fit a Weibull model to the `tail_size` largest entries of `distances`.
///
/// The tail must sit on strictly positive shifted values: a tail whose
/// minimum is already positive is fitted untranslated (`tau = 0`, which
/// keeps the estimator unbiased and exactly scale-equivariant); otherwise
/// it is translated by `tau = min(tail) - margin` with
/// `margin = 1e-6 * max(1, |min(tail)|)`. `(lambda, kappa)` are then fitted
/// by maximum likelihood; the profiled shape equation is solved by
/// safeguarded Newton iteration with a bisection fallback, starting from
/// the log-variance method-of-moments estimate.
pub fn fit_weibull_tail(distances: &[f64], tail_size: usize) -> Result<WeibullModel> {
    if tail_size < 2 {
        return Err(OsrError::InvalidConfig(format!(
            "tail size must be at least 2, got {tail_size}"
        )));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(OsrError::InvalidConfig("distances must be finite".into()));
    }
    if distances.len() < tail_size {
        return Err(OsrError::InsufficientTail {
            tail_size,
            available: distances.len(),
        });
    }

    // eta largest values, duplicates kept (multiset semantics).
    let mut sorted = distances.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted.truncate(tail_size);
    let tail = sorted;

    let tail_min = *tail.last().unwrap();
    let tail_max = tail[0];
    if tail_max == tail_min {
        return Err(OsrError::DegenerateTail { count: tail_size });
    }

    let tau = if tail_min > 0.0 {
        0.0
    } else {
        tail_min - 1e-6 * tail_min.abs().max(1.0)
    };

    // Shifted, normalized tail: y in (0, 1], scale-free in kappa.
    let x_max = tail_max - tau;
    let y: Vec<f64> = tail.iter().map(|d| (d - tau) / x_max).collect();
    let ln_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = y.len() as f64;
    let mean_ln = ln_y.iter().sum::<f64>() / n;

    // Method-of-moments start: Var(ln X) = pi^2 / (6 kappa^2).
    let var_ln = ln_y.iter().map(|l| (l - mean_ln).powi(2)).sum::<f64>() / n;
    if var_ln <= 0.0 {
        return Err(OsrError::DegenerateTail { count: tail_size });
    }
    let kappa0 = std::f64::consts::PI / (6.0 * var_ln).sqrt();

    let residual = |kappa: f64| -> (f64, f64) {
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for (v, l) in y.iter().zip(&ln_y) {
            let p = v.powf(kappa);
            s0 += p;
            s1 += p * l;
            s2 += p * l * l;
        }
        let g = 1.0 / kappa + mean_ln - s1 / s0;
        let g_prime = -1.0 / (kappa * kappa) - (s2 * s0 - s1 * s1) / (s0 * s0);
        (g, g_prime)
    };

    // Bracket the root: g is strictly decreasing, positive near 0.
    let mut lo = kappa0;
    let mut hi = kappa0;
    while residual(lo).0 < 0.0 {
        lo /= 2.0;
        if lo < 1e-300 {
            return Err(OsrError::NoConvergence { iterations: 0 });
        }
    }
    while residual(hi).0 > 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(OsrError::NoConvergence { iterations: 0 });
        }
    }

    let mut kappa = kappa0.clamp(lo, hi);
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let (g, g_prime) = residual(kappa);
        if g > 0.0 {
            lo = kappa;
        } else {
            hi = kappa;
        }
        let newton = kappa - g / g_prime;
        let next = if g_prime.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let delta = (next - kappa).abs();
        kappa = next;
        if delta <= SHAPE_TOL * kappa.abs() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OsrError::NoConvergence {
            iterations: MAX_ITER,
        });
    }

    // lambda from the profile: lambda^kappa = mean(x^kappa), in original units.
    let mean_pow = y.iter().map(|v| v.powf(kappa)).sum::<f64>() / n;
    let lambda = x_max * mean_pow.powf(1.0 / kappa);
    if !(lambda > 0.0 && lambda.is_finite() && kappa > 0.0 && kappa.is_finite()) {
        return Err(OsrError::NoConvergence {
            iterations: MAX_ITER,
        });
    }

    Ok(WeibullModel {
        tau,
        lambda,
        kappa,
        tail_size,
    })
}

/// Draw `n` samples by inverse-CDF transform, deterministic in `seed`.
/// The uniform variate is drawn from the open interval, so every sample is
/// strictly greater than the translation point.
pub fn sample_weibull(model: &WeibullModel, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rand::Rng::sample(&mut rng, rand_distr::Open01);
        out.push(model.tau + model.lambda * (-u.ln()).powf(1.0 / model.kappa));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(tau: f64, lambda: f64, kappa: f64) -> WeibullModel {
        WeibullModel {
            tau,
            lambda,
            kappa,
            tail_size: 2,
        }
    }

    #[test]
    fn cdf_zero_at_and_below_shift() {
        let m = model(1.5, 2.0, 3.0);
        assert_eq!(m.cdf(1.5), 0.0);
        assert_eq!(m.cdf(-10.0), 0.0);
    }

    #[test]
    fn cdf_closed_forms() {
        let m = model(0.0, 2.0, 1.0);
        let expected = 1.0 - (-1.0f64).exp();
        assert!((m.cdf(2.0) - expected).abs() < 1e-15);

        // (d/lambda)^kappa = ln 4 at d = sqrt(ln 4)
        let m = model(0.0, 1.0, 2.0);
        let d = 4.0f64.ln().sqrt();
        assert!((m.cdf(d) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn cdf_saturates_to_one() {
        let m = model(0.0, 1.0, 2.0);
        assert!((m.cdf(1e6) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fit_recovers_known_parameters() {
        let truth = model(0.0, 1.0, 2.0);
        let draws = sample_weibull(&truth, 5000, 99);
        let fitted = fit_weibull_tail(&draws, 5000).unwrap();
        assert!(
            fitted.lambda > 0.95 && fitted.lambda < 1.05,
            "lambda = {}",
            fitted.lambda
        );
        assert!(
            fitted.kappa > 1.9 && fitted.kappa < 2.1,
            "kappa = {}",
            fitted.kappa
        );
    }

    #[test]
    fn fit_rejects_degenerate_tail() {
        let distances = vec![1.0; 50];
        assert!(matches!(
            fit_weibull_tail(&distances, 10).unwrap_err(),
            OsrError::DegenerateTail { .. }
        ));
    }

    #[test]
    fn fit_rejects_short_input_and_tiny_tail() {
        assert!(matches!(
            fit_weibull_tail(&[1.0, 2.0, 3.0], 5).unwrap_err(),
            OsrError::InsufficientTail {
                tail_size: 5,
                available: 3
            }
        ));
        assert!(matches!(
            fit_weibull_tail(&[1.0, 2.0, 3.0], 1).unwrap_err(),
            OsrError::InvalidConfig(_)
        ));
    }

    #[test]
    fn fit_accepts_tails_containing_zero() {
        // a class whose smallest tail distance is exactly 0 still gets a
        // strictly positive shifted support
        let distances = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5];
        let m = fit_weibull_tail(&distances, 8).unwrap();
        assert!(m.tau < 0.0);
        assert!(m.lambda > 0.0 && m.kappa > 0.0);
        assert_eq!(m.cdf(m.tau), 0.0);
        assert!(m.cdf(0.0) > 0.0);
    }

    #[test]
    fn fit_matches_pre_extracted_tail() {
        let truth = model(0.5, 2.0, 1.5);
        let draws = sample_weibull(&truth, 400, 7);
        let tail = 50;
        let full = fit_weibull_tail(&draws, tail).unwrap();

        let mut largest = draws.clone();
        largest.sort_by(|a, b| b.partial_cmp(a).unwrap());
        largest.truncate(tail);
        let pre = fit_weibull_tail(&largest, tail).unwrap();
        assert_eq!(full, pre);
    }

    #[test]
    fn fit_is_permutation_invariant() {
        let truth = model(0.0, 3.0, 0.9);
        let draws = sample_weibull(&truth, 200, 21);
        let a = fit_weibull_tail(&draws, 40).unwrap();
        let mut reversed = draws.clone();
        reversed.reverse();
        let b = fit_weibull_tail(&reversed, 40).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_deterministic_and_above_shift() {
        let m = model(2.0, 1.0, 3.0);
        let a = sample_weibull(&m, 100, 5);
        let b = sample_weibull(&m, 100, 5);
        assert_eq!(a, b);
        assert!(a.iter().all(|&d| d > m.tau));
        let c = sample_weibull(&m, 100, 6);
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_cdf_matches_model() {
        // Kolmogorov-Smirnov-style sup distance over the sample points.
        let m = model(1.0, 2.0, 1.3);
        let mut draws = sample_weibull(&m, 100_000, 31);
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = draws.len() as f64;
        let mut sup = 0.0f64;
        for (i, d) in draws.iter().enumerate() {
            let emp_hi = (i + 1) as f64 / n;
            let emp_lo = i as f64 / n;
            let c = m.cdf(*d);
            sup = sup.max((c - emp_lo).abs()).max((c - emp_hi).abs());
        }
        assert!(sup < 0.01, "KS sup distance = {sup}");
    }

    #[test]
    fn serialization_shape() {
        let m = model(0.25, 2.0, 1.5);
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["tau"], 0.25);
        assert_eq!(json["lambda"], 2.0);
        assert_eq!(json["kappa"], 1.5);
        assert_eq!(json["tail_size"], 2);
        let back: WeibullModel = serde_json::from_value(json).unwrap();
        assert_eq!(back, m);
    }
}
