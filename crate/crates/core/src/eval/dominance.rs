//! Monte Carlo check that feature-informed (local) shrinkage centers beat the
//! global center under a latent-type mixture prior.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eb::MixturePriorSpec;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::moments::Moments;
use crate::rng::{purpose, stream};

pub const MIN_DRAWS: u64 = 10_000;
const CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceConfig {
    /// Common sampling variance of every draw.
    pub v: f64,
    pub draws: u64,
    pub seed: u64,
    /// Training-sample size for the plug-in variant; `None` skips it.
    pub plug_in_train: Option<usize>,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for DominanceConfig {
    fn default() -> Self {
        DominanceConfig {
            v: 1.0,
            draws: 1_000_000,
            seed: 0,
            plug_in_train: None,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlugInReport {
    pub train_size: usize,
    pub fitted_global_center: f64,
    /// Fitted center for each feature value.
    pub fitted_local_centers: Vec<f64>,
    pub mse_global: f64,
    pub mse_local: f64,
    pub gap: f64,
    pub gap_mcse: f64,
    /// `gap > -3 * gap_mcse`.
    pub direction_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub spec: MixturePriorSpec,
    pub v: f64,
    pub mc_draws: u64,
    pub seed: u64,
    pub mse_global: f64,
    pub mse_global_mcse: f64,
    pub mse_local: f64,
    pub mse_local_mcse: f64,
    /// `mse_global - mse_local`.
    pub gap: f64,
    /// Standard error of the paired per-draw difference.
    pub gap_mcse: f64,
    pub closed_form_global: f64,
    pub closed_form_local: f64,
    pub c0: f64,
    pub theoretical_gap_lower_bound: f64,
    /// The feature carries no information about the type mean.
    pub degenerate: bool,
    pub pass: bool,
    pub plug_in: Option<PlugInReport>,
}

#[derive(Clone, Copy)]
struct Tally {
    global: Moments,
    local: Moments,
    diff: Moments,
    plug_global: Moments,
    plug_local: Moments,
    plug_diff: Moments,
}

impl Tally {
    const EMPTY: Tally = Tally {
        global: Moments::EMPTY,
        local: Moments::EMPTY,
        diff: Moments::EMPTY,
        plug_global: Moments::EMPTY,
        plug_local: Moments::EMPTY,
        plug_diff: Moments::EMPTY,
    };

    fn merge(&self, o: &Tally) -> Tally {
        Tally {
            global: self.global.merge(&o.global),
            local: self.local.merge(&o.local),
            diff: self.diff.merge(&o.diff),
            plug_global: self.plug_global.merge(&o.plug_global),
            plug_local: self.plug_local.merge(&o.plug_local),
            plug_diff: self.plug_diff.merge(&o.plug_diff),
        }
    }
}

fn push(m: &mut Moments, x: f64) {
    *m = m.merge(&Moments {
        count: 1.0,
        mean: x,
        m2: 0.0,
    });
}

struct Draw {
    z: usize,
    x: usize,
    y: f64,
    theta: f64,
}

struct Sampler<'a> {
    spec: &'a MixturePriorSpec,
    types: WeightedIndex<f64>,
    sd_noise: f64,
}

impl Sampler<'_> {
    fn draw(&self, rng: &mut impl Rng) -> Draw {
        let z = self.types.sample(rng);
        let reveal = rng.random::<f64>() < self.spec.feature_informativeness;
        let x = if reveal { z } else { self.types.sample(rng) };
        let t = &self.spec.types[z];
        let e1: f64 = StandardNormal.sample(rng);
        let e2: f64 = StandardNormal.sample(rng);
        let theta = t.mean + t.variance.sqrt() * e1;
        Draw {
            z,
            x,
            y: theta + self.sd_noise * e2,
            theta,
        }
    }
}

fn mcse(m: &Moments) -> f64 {
    (m.variance().unwrap_or(0.0) / m.count).sqrt()
}

/// Compares the oracle global estimator (center `mu_mix`) with the oracle
/// local estimator (center `E[mu_z | X]`); both use the type weight
/// `B_z = tau2_z / (tau2_z + v)`.
pub fn mixture_dominance_check(spec: &MixturePriorSpec, config: &DominanceConfig) -> Result<DominanceReport> {
    spec.validate()?;
    if config.draws < MIN_DRAWS {
        return Err(Error::Config(format!(
            "need at least {MIN_DRAWS} Monte Carlo draws, got {}",
            config.draws
        )));
    }
    if !(config.v > 0.0) || !config.v.is_finite() {
        return Err(Error::Config(format!("sampling variance {} must be positive", config.v)));
    }
    let weights: Vec<f64> = spec.types.iter().map(|t| t.weight).collect();
    let sampler = Sampler {
        spec,
        types: WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("type weights: {e}")))?,
        sd_noise: config.v.sqrt(),
    };
    let v = config.v;
    let mix = spec.mu_mix();
    let local_centers: Vec<f64> = (0..spec.types.len()).map(|x| spec.local_center(x)).collect();
    let weight: Vec<f64> = (0..spec.types.len()).map(|z| spec.bayes_weight(z, v)).collect();

    let plug = config.plug_in_train.map(|n| {
        let mut rng = stream(config.seed, &[purpose::PLUG_IN]);
        let mut sums = vec![(0.0, 0usize); spec.types.len()];
        let mut total = 0.0;
        for _ in 0..n {
            let d = sampler.draw(&mut rng);
            sums[d.x].0 += d.y;
            sums[d.x].1 += 1;
            total += d.y;
        }
        let global = if n > 0 { total / n as f64 } else { 0.0 };
        let local: Vec<f64> = sums
            .iter()
            .map(|&(s, c)| if c > 0 { s / c as f64 } else { global })
            .collect();
        (n, global, local)
    });

    let chunks = config.draws.div_ceil(CHUNK);
    let tallies = config.exec.map_indexed(chunks as usize, |c| {
        let mut rng = stream(config.seed, &[purpose::DOMINANCE, c as u64]);
        let count = CHUNK.min(config.draws - c as u64 * CHUNK);
        let mut t = Tally::EMPTY;
        for _ in 0..count {
            let d = sampler.draw(&mut rng);
            let b = weight[d.z];
            let estimate = |center: f64| (1.0 - b) * center + b * d.y;
            let eg = (estimate(mix) - d.theta).powi(2);
            let el = (estimate(local_centers[d.x]) - d.theta).powi(2);
            push(&mut t.global, eg);
            push(&mut t.local, el);
            push(&mut t.diff, eg - el);
            if let Some((_, g, l)) = &plug {
                let pg = (estimate(*g) - d.theta).powi(2);
                let pl = (estimate(l[d.x]) - d.theta).powi(2);
                push(&mut t.plug_global, pg);
                push(&mut t.plug_local, pl);
                push(&mut t.plug_diff, pg - pl);
            }
        }
        t
    });
    let t = tallies.iter().fold(Tally::EMPTY, |acc, x| acc.merge(x));

    let (closed_form_global, closed_form_local) = spec.oracle_risks(v);
    let bound = spec.gap_lower_bound(v);
    let gap = t.diff.mean;
    let gap_mcse = mcse(&t.diff);
    let degenerate = spec.is_degenerate();
    // Rounding slack for estimators that agree to the last few ulps.
    let slack = 1e-12 * t.global.mean.abs().max(1.0);
    let pass = if degenerate {
        gap.abs() <= 3.0 * gap_mcse + slack
    } else {
        gap > 0.0 && gap >= bound - 3.0 * gap_mcse - slack
    };
    let plug_in = plug.map(|(train_size, g, l)| {
        let gap = t.plug_diff.mean;
        let gap_mcse = mcse(&t.plug_diff);
        PlugInReport {
            train_size,
            fitted_global_center: g,
            fitted_local_centers: l,
            mse_global: t.plug_global.mean,
            mse_local: t.plug_local.mean,
            gap,
            gap_mcse,
            direction_holds: gap > -3.0 * gap_mcse - slack,
        }
    });
    Ok(DominanceReport {
        spec: spec.clone(),
        v,
        mc_draws: config.draws,
        seed: config.seed,
        mse_global: t.global.mean,
        mse_global_mcse: mcse(&t.global),
        mse_local: t.local.mean,
        mse_local_mcse: mcse(&t.local),
        gap,
        gap_mcse,
        closed_form_global,
        closed_form_local,
        c0: spec.c0(v),
        theoretical_gap_lower_bound: bound,
        degenerate,
        pass,
        plug_in,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eb::LatentType;

    fn spec(variance: f64, p: f64) -> MixturePriorSpec {
        MixturePriorSpec::new(
            vec![
                LatentType { weight: 0.5, mean: -1.0, variance },
                LatentType { weight: 0.5, mean: 1.0, variance },
            ],
            p,
        )
        .unwrap()
    }

    fn config(draws: u64) -> DominanceConfig {
        DominanceConfig {
            draws,
            seed: 17,
            ..DominanceConfig::default()
        }
    }

    #[test]
    fn exact_two_type_case() {
        let r = mixture_dominance_check(&spec(0.0, 1.0), &config(50_000)).unwrap();
        assert_eq!(r.mse_local, 0.0);
        assert_eq!(r.mse_global, 1.0);
        assert_eq!(r.gap, 1.0);
        assert!(r.pass);
    }

    #[test]
    fn uninformative_feature_gives_no_gap() {
        let r = mixture_dominance_check(&spec(0.0, 0.0), &config(50_000)).unwrap();
        assert!(r.degenerate);
        assert!(r.gap.abs() < 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn chunking_is_schedule_independent() {
        let mut c = config(150_000);
        c.plug_in_train = Some(500);
        c.exec = Exec::Sequential;
        let a = mixture_dominance_check(&spec(1.0, 0.7), &c).unwrap();
        c.exec = Exec::Parallel;
        let b = mixture_dominance_check(&spec(1.0, 0.7), &c).unwrap();
        assert_eq!(a, b);
        assert!(a.plug_in.unwrap().direction_holds);
    }

    #[test]
    fn too_few_draws_rejected() {
        assert!(mixture_dominance_check(&spec(1.0, 1.0), &config(100)).is_err());
    }
}
