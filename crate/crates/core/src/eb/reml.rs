//! One-way random-effects fit `y_j ~ N(mu, tau2 + v_j)`.
//!
//! `mu` is profiled out as the precision-weighted mean, leaving a
//! one-dimensional maximization in `tau2` on `[0, 10 * max_j (y_j - ybar)^2]`.
//! A fixed 65-point scan of the likelihood (quadratically spaced, denser near
//! zero) locates the bracket holding the maximizer, and bisection on the
//! analytic score refines it to the tolerance. Everything is deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TAU2_FLOOR: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 200;
const SCAN_POINTS: usize = 65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Likelihood {
    Restricted,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    Reml,
    MlFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectsFit {
    pub mu_hat: f64,
    pub tau2_hat: f64,
    pub method_used: FitMethod,
    pub n_obs: usize,
}

struct Profile {
    mu: f64,
    sum_w: f64,
    sum_log_var: f64,
    q: f64,
}

fn profile(pairs: &[(f64, f64)], tau2: f64) -> Profile {
    let (mut sum_w, mut sum_wy, mut sum_log_var) = (0.0, 0.0, 0.0);
    for &(y, v) in pairs {
        let var = tau2 + v;
        sum_w += 1.0 / var;
        sum_wy += y / var;
        sum_log_var += var.ln();
    }
    let mu = sum_wy / sum_w;
    let q = pairs
        .iter()
        .map(|&(y, v)| (y - mu).powi(2) / (tau2 + v))
        .sum();
    Profile {
        mu,
        sum_w,
        sum_log_var,
        q,
    }
}

/// Log-likelihood at `tau2` (additive constants dropped), with `mu` profiled.
pub fn log_likelihood(pairs: &[(f64, f64)], tau2: f64, kind: Likelihood) -> f64 {
    let p = profile(pairs, tau2);
    match kind {
        Likelihood::Restricted => -0.5 * (p.sum_log_var + p.sum_w.ln() + p.q),
        Likelihood::Full => -0.5 * (p.sum_log_var + p.q),
    }
}

/// Precision-weighted mean at a given `tau2`.
pub fn weighted_mean(pairs: &[(f64, f64)], tau2: f64) -> f64 {
    profile(pairs, tau2).mu
}

fn search_upper(pairs: &[(f64, f64)]) -> f64 {
    let ybar = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    10.0 * pairs
        .iter()
        .map(|p| (p.0 - ybar).powi(2))
        .fold(0.0, f64::max)
}

enum Maximize {
    Converged(f64),
    Failed(&'static str),
}

/// Derivative of [`log_likelihood`] with respect to `tau2`.
pub fn score(pairs: &[(f64, f64)], tau2: f64, kind: Likelihood) -> f64 {
    let p = profile(pairs, tau2);
    let (mut sum_w2, mut sum_w2r2) = (0.0, 0.0);
    for &(y, v) in pairs {
        let w = 1.0 / (tau2 + v);
        sum_w2 += w * w;
        sum_w2r2 += w * w * (y - p.mu).powi(2);
    }
    match kind {
        Likelihood::Restricted => -0.5 * (p.sum_w - sum_w2 / p.sum_w - sum_w2r2),
        Likelihood::Full => -0.5 * (p.sum_w - sum_w2r2),
    }
}

fn maximize(pairs: &[(f64, f64)], upper: f64, kind: Likelihood) -> Maximize {
    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|g| {
            let u = g as f64 / (SCAN_POINTS - 1) as f64;
            upper * u * u
        })
        .collect();
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (g, &t) in grid.iter().enumerate() {
        let val = log_likelihood(pairs, t, kind);
        if !val.is_finite() {
            return Maximize::Failed("non-finite objective");
        }
        if val > best_val {
            best_val = val;
            best = g;
        }
    }

    // The maximizer lies within one scan step of the best scan point; pick
    // the side where the score says the likelihood is still rising.
    let at_best = score(pairs, grid[best], kind);
    if !at_best.is_finite() {
        return Maximize::Failed("non-finite score");
    }
    let (mut lo, mut hi) = if at_best > 0.0 && best + 1 < SCAN_POINTS {
        (grid[best], grid[best + 1])
    } else if at_best < 0.0 && best > 0 {
        (grid[best - 1], grid[best])
    } else {
        return Maximize::Converged(grid[best]);
    };
    let rising_at = |t: f64| score(pairs, t, kind) > 0.0;
    if !rising_at(lo) {
        return Maximize::Converged(lo);
    }
    if rising_at(hi) {
        return Maximize::Converged(hi);
    }
    let tol = TAU2_FLOOR * upper.min(1.0);
    let mut iterations = 0;
    while hi - lo > tol {
        if iterations >= MAX_ITERATIONS {
            return Maximize::Failed("iteration limit");
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let s = score(pairs, mid, kind);
        if !s.is_finite() {
            return Maximize::Failed("non-finite score");
        }
        if s > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Maximize::Converged(0.5 * (lo + hi))
}

fn check_inputs(pairs: &[(f64, f64)]) -> Result<()> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "random-effects fit needs at least 2 observations, got {}",
            pairs.len()
        )));
    }
    for &(y, v) in pairs {
        if !y.is_finite() || !v.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite observation (y = {y}, v = {v})"
            )));
        }
        if !(v > 0.0) {
            return Err(Error::Validation(format!("sampling variance {v} must be positive")));
        }
    }
    Ok(())
}

/// REML fit with ML fallback; `tau2_hat` is clipped at [`TAU2_FLOOR`].
pub fn fit_random_effects(pairs: &[(f64, f64)]) -> Result<RandomEffectsFit> {
    check_inputs(pairs)?;
    let upper = search_upper(pairs);
    let finish = |tau2: f64, method_used| {
        let tau2_hat = tau2.max(TAU2_FLOOR);
        RandomEffectsFit {
            mu_hat: weighted_mean(pairs, tau2_hat),
            tau2_hat,
            method_used,
            n_obs: pairs.len(),
        }
    };
    if !(upper > TAU2_FLOOR) {
        return Ok(finish(0.0, FitMethod::Reml));
    }
    match maximize(pairs, upper, Likelihood::Restricted) {
        Maximize::Converged(t) => Ok(finish(t, FitMethod::Reml)),
        Maximize::Failed(reason) => {
            log::debug!("REML failed ({reason}); falling back to ML");
            match maximize(pairs, upper, Likelihood::Full) {
                Maximize::Converged(t) => Ok(finish(t, FitMethod::MlFallback)),
                Maximize::Failed(reason) => Err(Error::Degenerate(format!(
                    "random-effects fit failed under REML and ML ({reason})"
                ))),
            }
        }
    }
}
