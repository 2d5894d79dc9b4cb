//! Fully synthetic snapshot corpus with clustered traffic shapes and effects.
//!
//! Each experiment belongs to one of two equally sized clusters. A cluster
//! fixes the shape family of the arrival intensity (a decaying novelty burst
//! or a ramp-up with weekly seasonality) and the mean of its effects. Within
//! a cluster, effects are spread uniformly over
//! `cluster_mean +- spread` plus a small normal jitter, so the traffic
//! process locates an effect only up to its cluster. Traffic volume is log-uniform and unrelated to
//! the cluster. Per-day per-arm summaries are drawn from their exact
//! sampling distributions and accumulated into cumulative snapshots.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{ArmPair, ArmSnapshot, ExperimentSeries, Snapshot};
use crate::error::{Error, Result};
use crate::moments::Moments;
use crate::rng::{purpose, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub experiments: usize,
    pub days: usize,
    pub seed: u64,
    pub metric_id: String,
    pub min_traffic: f64,
    pub max_traffic: f64,
    /// Effect mean of each of the two clusters.
    pub cluster_means: [f64; 2],
    /// Half-width of the uniform effect spread within a cluster.
    pub spread: f64,
    pub within_sd: f64,
    pub outcome_sd: f64,
    pub baseline_mean: f64,
    /// Weight of the other cluster's shape family mixed into each shape.
    pub shape_overlap: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            experiments: 40,
            days: 14,
            seed: 7,
            metric_id: "conversion".into(),
            min_traffic: 40_000.0,
            max_traffic: 100_000.0,
            cluster_means: [0.04, -0.04],
            spread: 0.008,
            within_sd: 0.001,
            outcome_sd: 1.0,
            baseline_mean: 1.0,
            shape_overlap: 0.2,
        }
    }
}

/// Latent quantities behind one generated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentExperiment {
    pub experiment_id: String,
    pub cluster: usize,
    pub effect: f64,
    pub traffic: f64,
}

fn novelty(t: f64, decay: f64) -> f64 {
    1.0 + 3.0 * (-t / decay).exp()
}

fn ramp_weekly(t: f64, ramp: f64, phase: f64) -> f64 {
    (1.0 - (-t / ramp).exp()) * (1.0 + 0.5 * (2.0 * PI * t / 7.0 + phase).sin())
}

/// Relative daily traffic weights, normalized to sum to 1.
fn daily_weights(cluster: usize, days: usize, overlap: f64, rng: &mut impl Rng) -> Vec<f64> {
    let decay = rng.random_range(1.0..3.0);
    let ramp = rng.random_range(1.5..4.0);
    let phase = rng.random_range(0.0..0.8);
    let mix = overlap * rng.random::<f64>();
    let raw: Vec<f64> = (0..days)
        .map(|d| {
            let t = d as f64 + 0.5;
            let (a, b) = (novelty(t, decay), ramp_weekly(t, ramp, phase));
            // Each family scaled to unit mean before mixing.
            let (own, other) = if cluster == 0 { (a / 2.0, b) } else { (b, a / 2.0) };
            (1.0 - mix) * own + mix * other
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

fn day_moments(count: u64, mean: f64, sd: f64, rng: &mut impl Rng) -> Moments {
    if count == 0 {
        return Moments::EMPTY;
    }
    let c = count as f64;
    let sample_mean = Normal::new(mean, sd / c.sqrt()).expect("positive sd").sample(rng);
    let m2 = if count > 1 {
        sd * sd * ChiSquared::new(c - 1.0).expect("positive dof").sample(rng)
    } else {
        0.0
    };
    Moments {
        count: c,
        mean: sample_mean,
        m2,
    }
}

fn poisson(lambda: f64, rng: &mut impl Rng) -> u64 {
    Poisson::new(lambda).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Generates the corpus, returning series in id order and their latents.
pub fn generate_corpus(config: &CorpusConfig) -> Result<(Vec<ExperimentSeries>, Vec<LatentExperiment>)> {
    if config.experiments < 2 || config.days < 1 {
        return Err(Error::Config("corpus needs at least 2 experiments and 1 day".into()));
    }
    if !(config.min_traffic > 0.0 && config.max_traffic >= config.min_traffic) {
        return Err(Error::Config("traffic range must be positive and ordered".into()));
    }
    if !(config.outcome_sd > 0.0) || !(config.within_sd >= 0.0) || !(config.spread >= 0.0) || !(0.0..=1.0).contains(&config.shape_overlap) {
        return Err(Error::Config("invalid corpus noise or overlap parameters".into()));
    }
    let width = config.experiments.to_string().len().max(2);
    let mut series = Vec::with_capacity(config.experiments);
    let mut latents = Vec::with_capacity(config.experiments);
    for k in 0..config.experiments {
        let mut rng = stream(config.seed, &[purpose::CORPUS, k as u64]);
        let id = format!("syn-{k:0width$}");
        // Clusters alternate so both have the same size.
        let cluster = k % 2;
        let effect = config.cluster_means[cluster]
            + config.spread * rng.random_range(-1.0..=1.0)
            + config.within_sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let traffic = (config.min_traffic.ln()
            + rng.random::<f64>() * (config.max_traffic.ln() - config.min_traffic.ln()))
        .exp();
        let weights = daily_weights(cluster, config.days, config.shape_overlap, &mut rng);

        let mut cum = ArmPair::new(Moments::EMPTY, Moments::EMPTY);
        let mut snaps = Vec::with_capacity(config.days);
        for (d, w) in weights.iter().enumerate() {
            let half = traffic * w / 2.0;
            let nc = poisson(half, &mut rng);
            let nt = poisson(half, &mut rng);
            let mc = day_moments(nc, config.baseline_mean, config.outcome_sd, &mut rng);
            let mt = day_moments(nt, config.baseline_mean + effect, config.outcome_sd, &mut rng);
            cum = ArmPair::new(cum.control.merge(&mc), cum.treatment.merge(&mt));
            let arm = |m: &Moments| ArmSnapshot {
                count_cum: m.count as u64,
                mean_cum: if m.is_empty() { 0.0 } else { m.mean },
                variance_cum: m.variance().unwrap_or(0.0),
            };
            snaps.push(Snapshot {
                time_days: (d + 1) as f64,
                arms: cum.map(arm),
            });
        }
        series.push(ExperimentSeries::new(id.clone(), config.metric_id.clone(), snaps)?);
        latents.push(LatentExperiment {
            experiment_id: id,
            cluster,
            effect,
            traffic,
        });
    }
    Ok((series, latents))
}

pub fn write_latents_csv(latents: &[LatentExperiment], sink: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for l in latents {
        w.serialize(l)?;
    }
    w.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(())
}
