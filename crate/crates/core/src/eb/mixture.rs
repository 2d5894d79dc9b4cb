//! Latent-type Gaussian mixture prior with a feature channel.
//!
//! Each experiment has a type `z ~ pi`, an effect `theta | z ~ N(mu_z, tau2_z)`
//! and an observed feature `X`. With probability `p` (the informativeness) the
//! feature reveals `z`; otherwise it is an independent draw from `pi`. Bayes'
//! rule then gives `P(z | X = x) = p * 1[z = x] + (1 - p) * pi_z`, so the
//! oracle local center is `E[mu_z | X = x] = p * mu_x + (1 - p) * mu_mix`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentType {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePriorSpec {
    pub types: Vec<LatentType>,
    pub feature_informativeness: f64,
}

impl MixturePriorSpec {
    pub fn new(types: Vec<LatentType>, feature_informativeness: f64) -> Result<Self> {
        let spec = MixturePriorSpec {
            types,
            feature_informativeness,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.types.is_empty() {
            return Err(Error::Config("mixture needs at least one type".into()));
        }
        for t in &self.types {
            if !(t.weight >= 0.0) || !t.mean.is_finite() || !(t.variance >= 0.0) || !t.variance.is_finite() {
                return Err(Error::Config(format!("invalid mixture component {t:?}")));
            }
        }
        let total: f64 = self.types.iter().map(|t| t.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("type weights sum to {total}, not 1")));
        }
        if !(0.0..=1.0).contains(&self.feature_informativeness) {
            return Err(Error::Config(format!(
                "feature informativeness {} outside [0, 1]",
                self.feature_informativeness
            )));
        }
        Ok(())
    }

    pub fn mu_mix(&self) -> f64 {
        self.types.iter().map(|t| t.weight * t.mean).sum()
    }

    /// `Var(mu_z)` under `pi`.
    pub fn type_mean_variance(&self) -> f64 {
        let m = self.mu_mix();
        self.types.iter().map(|t| t.weight * (t.mean - m).powi(2)).sum()
    }

    /// Oracle local center `E[mu_z | X = x]`.
    pub fn local_center(&self, x: usize) -> f64 {
        let p = self.feature_informativeness;
        p * self.types[x].mean + (1.0 - p) * self.mu_mix()
    }

    /// `Var(E[mu_z | X]) = p^2 Var(mu_z)`.
    pub fn local_center_variance(&self) -> f64 {
        self.feature_informativeness.powi(2) * self.type_mean_variance()
    }

    pub fn max_type_variance(&self) -> f64 {
        self.types.iter().map(|t| t.variance).fold(0.0, f64::max)
    }

    /// `c0 = (v_min / (tau2_max + v_max))^2` for a common sampling variance.
    pub fn c0(&self, v: f64) -> f64 {
        (v / (self.max_type_variance() + v)).powi(2)
    }

    /// Lower bound `c0 * Var(E[mu_z | X])` on the global-minus-local risk gap.
    pub fn gap_lower_bound(&self, v: f64) -> f64 {
        self.c0(v) * self.local_center_variance()
    }

    pub fn bayes_weight(&self, z: usize, v: f64) -> f64 {
        let t2 = self.types[z].variance;
        t2 / (t2 + v)
    }

    /// Closed-form Bayes risks `(global, local)` of the two oracle estimators
    /// that share the type weight `B_z` and differ only in their centers.
    pub fn oracle_risks(&self, v: f64) -> (f64, f64) {
        let mix = self.mu_mix();
        let p = self.feature_informativeness;
        let mut global = 0.0;
        let mut local = 0.0;
        for (z, t) in self.types.iter().enumerate() {
            let b = self.bayes_weight(z, v);
            let shrink = (1.0 - b).powi(2);
            let noise = b * b * v;
            global += t.weight * (shrink * (t.variance + (mix - t.mean).powi(2)) + noise);
            // E[(mu_loc(X) - mu_z)^2 | z] over the reveal channel.
            let revealed = (self.local_center(z) - t.mean).powi(2);
            let scrambled: f64 = (0..self.types.len())
                .map(|x| self.types[x].weight * (self.local_center(x) - t.mean).powi(2))
                .sum();
            let center_err = p * revealed + (1.0 - p) * scrambled;
            local += t.weight * (shrink * (t.variance + center_err) + noise);
        }
        (global, local)
    }

    /// True when the feature carries no information about the type mean,
    /// i.e. `Var(E[mu_z | X]) = 0`.
    pub fn is_degenerate(&self) -> bool {
        self.local_center_variance() <= 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_types(variance: f64, p: f64) -> MixturePriorSpec {
        MixturePriorSpec::new(
            vec![
                LatentType { weight: 0.5, mean: -1.0, variance },
                LatentType { weight: 0.5, mean: 1.0, variance },
            ],
            p,
        )
        .unwrap()
    }

    #[test]
    fn closed_forms_for_two_types() {
        let spec = two_types(0.0, 1.0);
        assert_eq!(spec.mu_mix(), 0.0);
        assert_eq!(spec.type_mean_variance(), 1.0);
        assert_eq!(spec.c0(1.0), 1.0);
        assert_eq!(spec.oracle_risks(1.0), (1.0, 0.0));

        let spec = two_types(1.0, 1.0);
        let (g, l) = spec.oracle_risks(1.0);
        assert!((g - 0.75).abs() < 1e-15);
        assert!((l - 0.5).abs() < 1e-15);
        assert!((spec.gap_lower_bound(1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn uninformative_feature_has_no_gap() {
        let spec = two_types(0.0, 0.0);
        assert!(spec.is_degenerate());
        let (g, l) = spec.oracle_risks(1.0);
        assert_eq!(g, l);
        assert_eq!(spec.local_center(0), spec.mu_mix());
    }

    #[test]
    fn rejects_bad_weights() {
        let bad = MixturePriorSpec::new(
            vec![LatentType { weight: 0.7, mean: 0.0, variance: 1.0 }],
            1.0,
        );
        assert!(bad.is_err());
    }
}
