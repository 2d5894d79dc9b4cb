//! Scoring of stored estimates against reference effects.

mod dominance;
mod report;

pub use dominance::{mixture_dominance_check, DominanceConfig, DominanceReport, PlugInReport};
pub use report::{
    emit_report, write_dominance_report, write_scores_csv, ReportFiles, DOMINANCE_JSON, FIGURE_CSV,
    SCORES_CSV, SCORES_JSON,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::neighbors::{Method, MethodConfig};
use crate::rng::{purpose, stream};
use crate::semisynth::ResultStore;

pub const DEFAULT_CI_RESAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub config: MethodConfig,
    pub mse: f64,
    pub reduction_pct: f64,
    pub win_rate_pct: f64,
    /// 95% percentile-bootstrap interval for `reduction_pct`, resampling
    /// experiments.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Experiments contributing to the score.
    pub experiments: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub ci_resamples: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            ci_resamples: DEFAULT_CI_RESAMPLES,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

/// Mean squared error of each experiment over the replicates in which it has
/// an estimate; `None` when it never does.
pub fn per_experiment_squared_error(store: &ResultStore, config: usize) -> Vec<Option<f64>> {
    (0..store.experiments())
        .map(|e| {
            let reference = store.manifest.references[e];
            let errs: Vec<f64> = (1..=store.replicates())
                .filter_map(|b| store.get(config, b, e))
                .map(|est| (est - reference).powi(2))
                .collect();
            (!errs.is_empty()).then(|| pairwise_sum(&errs) / errs.len() as f64)
        })
        .collect()
}

fn mean_over(values: &[f64], idx: &[usize]) -> f64 {
    let picked: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    pairwise_sum(&picked) / picked.len() as f64
}

/// Linear-interpolation percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval of `100 * (1 - mean(method) / mean(raw))` over
/// experiment resamples. The same resamples are used for every method.
fn reduction_ci(method: &[f64], raw: &[f64], resamples: &[Vec<usize>], point: f64) -> (f64, f64) {
    if resamples.is_empty() {
        return (point, point);
    }
    let mut stats: Vec<f64> = resamples
        .iter()
        .map(|idx| {
            let r = mean_over(raw, idx);
            if r > 0.0 {
                100.0 * (1.0 - mean_over(method, idx) / r)
            } else {
                0.0
            }
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let low = percentile(&stats, 0.025).min(point);
    let high = percentile(&stats, 0.975).max(point);
    (low, high)
}

/// Scores every configuration in the store against the raw estimator.
///
/// Only experiments with at least one raw estimate and one estimate from
/// the method are scored, so a method and the raw baseline are always
/// compared on the same experiments.
pub fn score_methods(store: &ResultStore, options: &ScoreOptions) -> Result<Vec<MethodScore>> {
    let raw = store
        .configs()
        .iter()
        .position(|c| c.method == Method::Raw)
        .ok_or_else(|| Error::Validation("result store has no raw estimates to compare against".into()))?;
    let raw_se = per_experiment_squared_error(store, raw);
    let n = store.experiments();

    let per_config: Vec<Vec<Option<f64>>> = options
        .exec
        .map_indexed(store.configs().len(), |c| per_experiment_squared_error(store, c));

    let mut scores = Vec::with_capacity(per_config.len());
    for (c, se) in per_config.iter().enumerate() {
        let (method_se, base_se): (Vec<f64>, Vec<f64>) = (0..n)
            .filter_map(|e| Some((se[e]?, raw_se[e]?)))
            .unzip();
        let m = method_se.len();
        if m == 0 {
            return Err(Error::InsufficientData(format!(
                "no experiment has estimates for {}",
                store.configs()[c]
            )));
        }
        let all: Vec<usize> = (0..m).collect();
        let mse = mean_over(&method_se, &all);
        let mse_raw = mean_over(&base_se, &all);
        let reduction_pct = if c == raw {
            0.0
        } else if mse_raw > 0.0 {
            100.0 * (1.0 - mse / mse_raw)
        } else {
            0.0
        };
        let wins = method_se.iter().zip(&base_se).filter(|(a, b)| a < b).count();
        let mut rng = stream(options.seed, &[purpose::CI_BOOTSTRAP]);
        let resamples: Vec<Vec<usize>> = (0..options.ci_resamples)
            .map(|_| (0..m).map(|_| rng.random_range(0..m)).collect())
            .collect();
        let (ci_low, ci_high) = if c == raw {
            (0.0, 0.0)
        } else {
            reduction_ci(&method_se, &base_se, &resamples, reduction_pct)
        };
        scores.push(MethodScore {
            config: store.configs()[c],
            mse,
            reduction_pct,
            win_rate_pct: 100.0 * wins as f64 / m as f64,
            ci_low,
            ci_high,
            experiments: m,
        });
    }
    Ok(scores)
}

/// Parameter grid for the CF-SHN sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub q: Vec<usize>,
    pub rho: Vec<f64>,
    pub m0: Vec<usize>,
    /// Values held fixed while another parameter varies.
    pub base_q: usize,
    pub base_rho: f64,
    pub base_m0: usize,
    /// Full Cartesian product instead of one-at-a-time sweeps.
    pub full_product: bool,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            q: (6..=20).step_by(2).collect(),
            rho: vec![0.5, 0.6, 0.75, 0.9],
            m0: vec![20, 30, 40],
            base_q: 10,
            base_rho: 0.75,
            base_m0: 30,
            full_product: false,
        }
    }
}

impl SweepGrid {
    /// CF-SHN configurations of the sweep, without duplicates, in the order
    /// q sweep, rho sweep, M0 sweep.
    pub fn configs(&self) -> Vec<MethodConfig> {
        let mut out: Vec<MethodConfig> = Vec::new();
        let mut push = |c: MethodConfig| {
            if !out.contains(&c) {
                out.push(c);
            }
        };
        if self.full_product {
            for &q in &self.q {
                for &rho in &self.rho {
                    for &m0 in &self.m0 {
                        push(MethodConfig::new(Method::CfShn, q, rho, m0));
                    }
                }
            }
        } else {
            for &q in &self.q {
                push(MethodConfig::new(Method::CfShn, q, self.base_rho, self.base_m0));
            }
            for &rho in &self.rho {
                push(MethodConfig::new(Method::CfShn, self.base_q, rho, self.base_m0));
            }
            for &m0 in &self.m0 {
                push(MethodConfig::new(Method::CfShn, self.base_q, self.base_rho, m0));
            }
        }
        out
    }

    pub fn rhos(&self) -> Vec<f64> {
        let mut r: Vec<f64> = self.configs().iter().filter_map(|c| c.rho).collect();
        r.sort_by(f64::total_cmp);
        r.dedup();
        r
    }
}

/// Scores of the sweep configurations, in grid order. The store must hold
/// raw estimates and every configuration of the grid.
pub fn sensitivity_sweep(store: &ResultStore, grid: &SweepGrid, options: &ScoreOptions) -> Result<Vec<MethodScore>> {
    let all = score_methods(store, options)?;
    grid.configs()
        .iter()
        .map(|c| {
            all.iter()
                .find(|s| s.config == *c)
                .copied()
                .ok_or_else(|| Error::Validation(format!("result store has no estimates for {c}")))
        })
        .collect()
}
