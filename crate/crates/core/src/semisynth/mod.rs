//! Semi-synthetic replicates drawn from fitted arrival/outcome models.
//!
//! Arrivals per segment and arm are Poisson with half the segment's expected
//! traffic. Each arrival is a unit of data for cross-fitting, and units are
//! dealt to folds round-robin. Outcomes are never drawn individually: for
//! every (segment, arm, fold) cell the sample mean is drawn from its exact
//! Gaussian sampling distribution and the within-cell sum of squares is set
//! to its expectation under the known segment variance. Fold and experiment
//! statistics are pooled from those cells.

mod bootstrap;
mod nhpp;
mod store;

pub use bootstrap::{run_bootstrap, BootstrapConfig};
pub use nhpp::{fit_nhpp, NhppModel, SegmentOutcome};
pub use store::{Failure, ResultStore, StoreManifest};

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{Arm, ArmPair};
use crate::error::{Error, Result};
use crate::moments::Moments;
use crate::neighbors::{assign_folds, FoldAssignment};
use crate::rng::{derive_seed, id_key, purpose, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub folds: usize,
    /// Multiplier applied to every segment variance.
    pub noise_scale: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            folds: 5,
            noise_scale: 1.0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if !(self.noise_scale > 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::Config(format!(
                "noise scale {} must be positive",
                self.noise_scale
            )));
        }
        Ok(())
    }
}

/// One experiment's data in one replicate, kept as per-fold sufficient
/// statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReplicate {
    /// Position of the source model in the population.
    pub model: usize,
    pub folds: Vec<ArmPair<Moments>>,
    /// Pooled over folds in fold order.
    pub total: ArmPair<Moments>,
    pub y: f64,
    pub v: f64,
    /// Set when an arm had fewer than 2 units and `v` used the model variance.
    pub variance_fallback: bool,
    /// Model variance per arm, used whenever a sample variance is undefined.
    pub model_variance: ArmPair<f64>,
}

fn arm_variance(m: &Moments, model: f64) -> (f64, bool) {
    match m.variance() {
        Some(var) => (var, false),
        None => (model, true),
    }
}

fn diff_in_means(arms: &ArmPair<Moments>, model_variance: &ArmPair<f64>) -> (f64, f64, bool) {
    let (var_t, fb_t) = arm_variance(&arms.treatment, model_variance.treatment);
    let (var_c, fb_c) = arm_variance(&arms.control, model_variance.control);
    (
        arms.treatment.mean - arms.control.mean,
        var_t / arms.treatment.count + var_c / arms.control.count,
        fb_t || fb_c,
    )
}

impl ExperimentReplicate {
    fn from_folds(model: usize, folds: Vec<ArmPair<Moments>>, model_variance: ArmPair<f64>) -> Self {
        let total = ArmPair::new(
            Moments::merge_all(folds.iter().map(|f| &f.control)),
            Moments::merge_all(folds.iter().map(|f| &f.treatment)),
        );
        let (y, v, variance_fallback) = diff_in_means(&total, &model_variance);
        ExperimentReplicate {
            model,
            folds,
            total,
            y,
            v,
            variance_fallback,
            model_variance,
        }
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// `(y, v)` from fold `f` alone.
    pub fn fold_estimate(&self, f: usize) -> (f64, f64) {
        let (y, v, _) = diff_in_means(&self.folds[f], &self.model_variance);
        (y, v)
    }

    /// Pooled statistics of every fold except `f`.
    pub fn complement(&self, f: usize) -> ArmPair<Moments> {
        let others = || self.folds.iter().enumerate().filter(move |(g, _)| *g != f);
        ArmPair::new(
            Moments::merge_all(others().map(|(_, a)| &a.control)),
            Moments::merge_all(others().map(|(_, a)| &a.treatment)),
        )
    }

    /// Difference in means on the complement of fold `f`.
    pub fn pilot(&self, f: usize) -> Result<f64> {
        let c = self.complement(f);
        if c.control.is_empty() || c.treatment.is_empty() {
            return Err(Error::InsufficientData(format!(
                "complement of fold {f} has an empty arm"
            )));
        }
        Ok(c.treatment.mean - c.control.mean)
    }

    pub fn total_units(&self) -> u64 {
        (self.total.control.count + self.total.treatment.count) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    /// An arm received no arrivals at all.
    EmptyArm,
    /// Some fold holds no unit of one of the arms.
    SparseFolds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutput {
    /// 1-based replicate number.
    pub replicate: u64,
    pub seed: u64,
    pub folds: FoldAssignment,
    /// Retained experiments, in population order.
    pub experiments: Vec<ExperimentReplicate>,
    pub excluded: Vec<(usize, ExclusionReason)>,
}

impl ReplicateOutput {
    pub fn position_of(&self, model: usize) -> Option<usize> {
        self.experiments.binary_search_by_key(&model, |e| e.model).ok()
    }
}

/// Poisson arrivals per segment and arm.
pub fn simulate_arrivals(model: &NhppModel, rng: &mut impl Rng) -> Vec<ArmPair<u64>> {
    (0..model.segments())
        .map(|i| {
            let half = model.expected_arrivals(i) / 2.0;
            let mut draw = || match Poisson::new(half) {
                Ok(p) => p.sample(rng) as u64,
                Err(_) => 0,
            };
            let control = draw();
            let treatment = draw();
            ArmPair::new(control, treatment)
        })
        .collect()
}

/// Draws fold-cell outcome statistics given arrivals and a fold assignment.
/// Units are enumerated segment by segment, control before treatment.
pub fn simulate_outcomes(
    model: &NhppModel,
    model_index: usize,
    arrivals: &[ArmPair<u64>],
    folds: &FoldAssignment,
    slot: usize,
    noise_scale: f64,
    rng: &mut impl Rng,
) -> ExperimentReplicate {
    let k = folds.k();
    let mut fold_stats = vec![ArmPair::new(Moments::EMPTY, Moments::EMPTY); k];
    let mut unit = 0u64;
    for (i, counts) in arrivals.iter().enumerate() {
        for arm in Arm::BOTH {
            let n = *counts.get(arm);
            let outcome = model.outcomes[i].get(arm);
            let var = outcome.variance * noise_scale;
            for (f, c) in folds.range_counts(slot, unit, n).into_iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let c = c as f64;
                let sd = (var / c).sqrt();
                let mean = if sd > 0.0 {
                    Normal::new(outcome.mean, sd)
                        .expect("finite positive sd")
                        .sample(rng)
                } else {
                    outcome.mean
                };
                let cell = Moments {
                    count: c,
                    mean,
                    m2: (c - 1.0) * var,
                };
                let stats = fold_stats[f].get_mut(arm);
                *stats = stats.merge(&cell);
            }
            unit += n;
        }
    }
    let model_variance = ArmPair::new(
        model.arm_variance(Arm::Control) * noise_scale,
        model.arm_variance(Arm::Treatment) * noise_scale,
    );
    ExperimentReplicate::from_folds(model_index, fold_stats, model_variance)
}

fn arm_totals(arrivals: &[ArmPair<u64>]) -> ArmPair<u64> {
    arrivals.iter().fold(ArmPair::new(0, 0), |acc, a| {
        ArmPair::new(acc.control + a.control, acc.treatment + a.treatment)
    })
}

/// True when every fold receives at least one unit of each arm.
fn folds_cover_arms(arrivals: &[ArmPair<u64>], folds: &FoldAssignment, slot: usize) -> bool {
    let mut seen = vec![ArmPair::new(0u64, 0u64); folds.k()];
    let mut unit = 0;
    for counts in arrivals {
        for arm in Arm::BOTH {
            let n = *counts.get(arm);
            for (f, c) in folds.range_counts(slot, unit, n).into_iter().enumerate() {
                *seen[f].get_mut(arm) += c;
            }
            unit += n;
        }
    }
    seen.iter().all(|s| s.control > 0 && s.treatment > 0)
}

/// Simulates replicate `replicate` (1-based) of the whole population.
///
/// Every draw for an experiment comes from a stream keyed by the master
/// seed, the replicate number and the experiment id, so results do not
/// depend on which other experiments are present or on scheduling.
pub fn simulate_population(
    models: &[NhppModel],
    master_seed: u64,
    replicate: u64,
    config: &SimulationConfig,
) -> Result<ReplicateOutput> {
    config.validate()?;
    let keys: Vec<u64> = models.iter().map(|m| id_key(&m.experiment_id)).collect();
    let arrivals: Vec<Vec<ArmPair<u64>>> = models
        .iter()
        .zip(&keys)
        .map(|(m, &key)| {
            simulate_arrivals(m, &mut stream(master_seed, &[replicate, key, purpose::ARRIVALS]))
        })
        .collect();

    let mut excluded = Vec::new();
    let mut candidates = Vec::new();
    for (e, a) in arrivals.iter().enumerate() {
        let totals = arm_totals(a);
        if totals.control == 0 || totals.treatment == 0 {
            excluded.push((e, ExclusionReason::EmptyArm));
        } else if totals.control + totals.treatment < config.folds as u64 {
            excluded.push((e, ExclusionReason::SparseFolds));
        } else {
            candidates.push(e);
        }
    }
    let unit_counts: Vec<(&str, u64)> = candidates
        .iter()
        .map(|&e| {
            let t = arm_totals(&arrivals[e]);
            (models[e].experiment_id.as_str(), t.control + t.treatment)
        })
        .collect();
    let folds = assign_folds(
        &unit_counts,
        config.folds,
        derive_seed(master_seed, &[replicate, purpose::FOLDS]),
    )?;

    let mut experiments = Vec::with_capacity(candidates.len());
    for (slot, &e) in candidates.iter().enumerate() {
        if !folds_cover_arms(&arrivals[e], &folds, slot) {
            excluded.push((e, ExclusionReason::SparseFolds));
            continue;
        }
        let mut rng = stream(master_seed, &[replicate, keys[e], purpose::OUTCOMES]);
        experiments.push(simulate_outcomes(
            &models[e],
            e,
            &arrivals[e],
            &folds,
            slot,
            config.noise_scale,
            &mut rng,
        ));
    }
    excluded.sort_unstable_by_key(|x| x.0);
    for (e, reason) in &excluded {
        log::debug!(
            "replicate {replicate}: experiment {} excluded ({reason:?})",
            models[*e].experiment_id
        );
    }
    Ok(ReplicateOutput {
        replicate,
        seed: derive_seed(master_seed, &[replicate]),
        folds,
        experiments,
        excluded,
    })
}

/// Simulates a single experiment on its own (replicate 1 under `seed`).
pub fn simulate_replicate(
    model: &NhppModel,
    seed: u64,
    config: &SimulationConfig,
) -> Result<ExperimentReplicate> {
    let out = simulate_population(std::slice::from_ref(model), seed, 1, config)?;
    match (out.experiments.into_iter().next(), out.excluded.first()) {
        (Some(rep), _) => Ok(rep),
        (None, reason) => Err(Error::InsufficientData(format!(
            "experiment {}: replicate unusable ({:?})",
            model.experiment_id,
            reason.map(|r| r.1)
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn flat_model(id: &str, n: f64, effect: f64) -> NhppModel {
        let segs = 4;
        NhppModel {
            experiment_id: id.into(),
            n,
            rates: vec![n / segs as f64; segs],
            widths: vec![1.0; segs],
            shape: vec![1.0 / segs as f64; segs],
            outcomes: vec![
                ArmPair::new(
                    SegmentOutcome { mean: 1.0, variance: 4.0 },
                    SegmentOutcome { mean: 1.0 + effect, variance: 4.0 },
                );
                segs
            ],
            reference_effect: effect,
        }
    }

    #[test]
    fn folds_pool_to_totals() {
        let m = flat_model("a", 2000.0, 0.3);
        let rep = simulate_replicate(&m, 5, &SimulationConfig::default()).unwrap();
        let merged = rep.complement(usize::MAX);
        for arm in Arm::BOTH {
            assert_eq!(merged.get(arm), rep.total.get(arm));
        }
        let sizes: Vec<f64> = rep.folds.iter().map(|f| f.control.count + f.treatment.count).collect();
        let (lo, hi) = sizes.iter().fold((f64::MAX, 0.0f64), |(l, h), &s| (l.min(s), h.max(s)));
        assert!(hi - lo <= 1.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let m = flat_model("a", 500.0, 0.3);
        let cfg = SimulationConfig::default();
        assert_eq!(
            simulate_replicate(&m, 9, &cfg).unwrap(),
            simulate_replicate(&m, 9, &cfg).unwrap()
        );
        assert_ne!(
            simulate_replicate(&m, 9, &cfg).unwrap(),
            simulate_replicate(&m, 10, &cfg).unwrap()
        );
    }

    #[test]
    fn zero_rate_segment_has_no_arrivals() {
        let mut m = flat_model("a", 400.0, 0.0);
        m.rates[2] = 0.0;
        let mut rng = stream(1, &[]);
        for _ in 0..50 {
            let a = simulate_arrivals(&m, &mut rng);
            assert_eq!(a[2], ArmPair::new(0, 0));
        }
    }

    #[test]
    fn empty_arm_is_excluded_not_fatal() {
        let models = vec![flat_model("a", 400.0, 0.1), flat_model("b", 0.0, 0.1)];
        let mut models = models;
        models[1].rates = vec![0.0; 4];
        let out = simulate_population(&models, 3, 1, &SimulationConfig::default()).unwrap();
        assert_eq!(out.experiments.len(), 1);
        assert_eq!(out.excluded, vec![(1, ExclusionReason::EmptyArm)]);
    }

    #[test]
    fn population_draws_do_not_depend_on_neighbours() {
        let a = flat_model("a", 300.0, 0.1);
        let b = flat_model("b", 300.0, 0.2);
        let cfg = SimulationConfig::default();
        let alone = simulate_population(std::slice::from_ref(&a), 4, 2, &cfg).unwrap();
        let both = simulate_population(&[a, b], 4, 2, &cfg).unwrap();
        assert_eq!(alone.experiments[0].total.treatment.count, both.experiments[0].total.treatment.count);
    }

    #[test]
    fn pilot_excludes_its_fold() {
        let m = flat_model("a", 1000.0, 0.5);
        let mut rep = simulate_replicate(&m, 1, &SimulationConfig { folds: 2, noise_scale: 1.0 }).unwrap();
        let fold2 = rep.folds[1];
        assert_eq!(rep.pilot(0).unwrap(), fold2.treatment.mean - fold2.control.mean);
        let before = rep.pilot(1).unwrap();
        rep.folds[1].treatment.mean += 100.0;
        assert_eq!(rep.pilot(1).unwrap(), before);
    }
}
