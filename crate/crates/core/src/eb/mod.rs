//! Empirical Bayes shrinkage under the normal–normal model
//! `theta ~ N(mu, tau2)`, `y | theta ~ N(theta, v)`.

mod mixture;
mod reml;

pub use mixture::{LatentType, MixturePriorSpec};
pub use reml::{
    fit_random_effects, log_likelihood, score, weighted_mean, FitMethod, Likelihood, RandomEffectsFit,
    MAX_ITERATIONS, TAU2_FLOOR,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageResult {
    pub theta_tilde: f64,
    /// Weight on the observation; `1 - b` goes to the center.
    pub b: f64,
    pub center: f64,
    pub tau2: f64,
    pub y: f64,
    pub v: f64,
}

/// `B = tau2 / (tau2 + v)`.
pub fn shrinkage_weight(tau2: f64, v: f64) -> f64 {
    if tau2 <= 0.0 {
        0.0
    } else {
        tau2 / (tau2 + v)
    }
}

pub fn shrink_toward(y: f64, v: f64, center: f64, tau2: f64) -> ShrinkageResult {
    let b = shrinkage_weight(tau2, v);
    ShrinkageResult {
        theta_tilde: (1.0 - b) * center + b * y,
        b,
        center,
        tau2,
        y,
        v,
    }
}

pub fn shrink(y: f64, v: f64, fit: &RandomEffectsFit) -> ShrinkageResult {
    shrink_toward(y, v, fit.mu_hat, fit.tau2_hat)
}

/// Classical EB: one random-effects fit on every experiment, shared by all.
pub fn classical_eb(all: &[(f64, f64)]) -> Result<(RandomEffectsFit, Vec<ShrinkageResult>)> {
    let fit = fit_random_effects(all)?;
    let results = all.iter().map(|&(y, v)| shrink(y, v, &fit)).collect();
    Ok((fit, results))
}
