//! Neighbor selection and local shrinkage.
//!
//! Experiments are addressed by their position in the population, which is
//! kept in ascending id order; every tie is broken by that position.

mod folds;
mod methods;

pub use folds::{assign_folds, FoldAssignment};
pub use methods::{
    diagnostics, estimate_replicate, write_diagnostics_csv, ConfigEstimates, DiagnosticRow, Method,
    MethodConfig,
};

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::eb::{fit_random_effects, shrink, shrink_toward, RandomEffectsFit, ShrinkageResult};
use crate::error::{Error, Result};
use crate::semisynth::ReplicateOutput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    CfShn,
    OutcomeOnly,
    ProcessOnly,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::CfShn => "cf-shn",
            Strategy::OutcomeOnly => "outcome-only",
            Strategy::ProcessOnly => "process-only",
        }
    }
}

/// How outcome-driven neighbor selection is kept apart from the data the
/// neighborhood prior is fitted on.
///
/// Strategies that select on distances alone never look at outcomes and
/// always fit on full-replicate estimates, whatever the mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossFit {
    /// Each fold `f` in turn is held out: neighbors are selected on pilots
    /// that exclude `f` and the prior is fitted on the neighbors' fold-`f`
    /// estimates, which played no part in selecting them. The fold priors
    /// are averaged with weights `1 / v_k^(f)` and the pooled target
    /// estimate is shrunk once toward the averaged prior.
    #[default]
    Rotated,
    /// As `Rotated`, but each fold shrinks the target's fold-`f` estimate
    /// with its fold-level variance and the K results are averaged with
    /// weights `1 / v_k^(f)`.
    FoldShrink,
    /// Only fold 1 is held out; the pooled estimate is shrunk toward its
    /// prior.
    PilotSplit,
}

/// Pilot estimates `mu^(-f)` indexed by replicate position and fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotEstimates {
    pub values: Vec<Vec<f64>>,
}

impl PilotEstimates {
    pub fn get(&self, position: usize, fold: usize) -> f64 {
        self.values[position][fold]
    }
}

pub fn pilot_estimates(replicate: &ReplicateOutput) -> Result<PilotEstimates> {
    let values = replicate
        .experiments
        .iter()
        .map(|e| (0..e.k()).map(|f| e.pilot(f)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(PilotEstimates { values })
}

fn by_key_then_index(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// The `m0` members of `pool` (excluding `target`) with the smallest
/// distance from `target`, ordered by distance then index.
pub fn select_candidates(target: usize, distances: &[f64], pool: &[usize], m0: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = pool
        .iter()
        .filter(|&&j| j != target)
        .map(|&j| (j, distances[j]))
        .collect();
    scored.sort_by(by_key_then_index);
    scored.truncate(m0);
    scored.into_iter().map(|(j, _)| j).collect()
}

/// The `min(q, |candidates|)` candidates whose pilots are closest to the
/// target's pilot. `candidates` pairs each index with its pilot; the
/// returned pairs carry `|pilot_k - pilot_j|`.
pub fn refine_neighbors(
    target_pilot: f64,
    candidates: &[(usize, f64)],
    q: usize,
) -> Result<Vec<(usize, f64)>> {
    if candidates.is_empty() {
        return Err(Error::InsufficientData("empty candidate set".into()));
    }
    let mut deltas: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&(j, p)| (j, (target_pilot - p).abs()))
        .collect();
    deltas.sort_by(by_key_then_index);
    deltas.truncate(q);
    Ok(deltas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodResult {
    pub target: usize,
    pub strategy: Strategy,
    /// Stage-1 candidates; the whole pool for outcome-only.
    pub candidates: Vec<usize>,
    pub neighbors: Vec<usize>,
    /// `|pilot_k - pilot_j|` per candidate that was ranked on pilots.
    pub deltas: Vec<(usize, f64)>,
}

/// Inputs shared by the three neighbor strategies for one target.
pub struct SelectionInput<'a> {
    pub target: usize,
    /// Eligible experiments; the target is skipped if present.
    pub pool: &'a [usize],
    /// Pilot for each index in the population (unused entries ignored).
    pub pilot: &'a dyn Fn(usize) -> f64,
    /// Row of the composite distance matrix for the target.
    pub distances: Option<&'a [f64]>,
}

fn distances_required<'a>(input: &SelectionInput<'a>) -> Result<&'a [f64]> {
    input
        .distances
        .ok_or_else(|| Error::Config("strategy needs a distance matrix".into()))
}

pub fn build_neighborhood(
    strategy: Strategy,
    input: &SelectionInput,
    m0: usize,
    q: usize,
) -> Result<NeighborhoodResult> {
    let target = input.target;
    let others: Vec<usize> = input.pool.iter().copied().filter(|&j| j != target).collect();
    let ranked_by_pilot = |cands: &[usize]| {
        let with_pilots: Vec<(usize, f64)> = cands.iter().map(|&j| (j, (input.pilot)(j))).collect();
        refine_neighbors((input.pilot)(target), &with_pilots, q)
    };
    let (candidates, deltas, neighbors) = match strategy {
        Strategy::CfShn => {
            let cands = select_candidates(target, distances_required(input)?, &others, m0);
            let deltas = ranked_by_pilot(&cands)?;
            let neighbors = deltas.iter().map(|d| d.0).collect();
            (cands, deltas, neighbors)
        }
        Strategy::OutcomeOnly => {
            let deltas = ranked_by_pilot(&others)?;
            let neighbors = deltas.iter().map(|d| d.0).collect();
            (others, deltas, neighbors)
        }
        Strategy::ProcessOnly => {
            if others.is_empty() {
                return Err(Error::InsufficientData("empty candidate set".into()));
            }
            let neighbors = select_candidates(target, distances_required(input)?, &others, q);
            (neighbors.clone(), Vec::new(), neighbors)
        }
    };
    Ok(NeighborhoodResult {
        target,
        strategy,
        candidates,
        neighbors,
        deltas,
    })
}

/// Outcome-only (rank all others on pilots) or process-only (rank all
/// others on distance) neighborhoods.
pub fn baseline_neighbors(strategy: Strategy, input: &SelectionInput, q: usize) -> Result<NeighborhoodResult> {
    if strategy == Strategy::CfShn {
        return Err(Error::Config("cf-shn is not a baseline strategy".into()));
    }
    build_neighborhood(strategy, input, usize::MAX, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    pub result: ShrinkageResult,
    pub fit: Option<RandomEffectsFit>,
    /// True when fewer than 2 neighbors were available and `y` is returned
    /// unshrunk.
    pub fallback: bool,
}

fn unshrunk(y: f64, v: f64) -> ShrinkageResult {
    ShrinkageResult {
        theta_tilde: y,
        b: 1.0,
        center: f64::NAN,
        tau2: f64::NAN,
        y,
        v,
    }
}

/// Fits the random-effects prior on `neighbors` and shrinks `(y, v)`.
pub fn local_eb_estimate(y: f64, v: f64, neighbors: &[(f64, f64)]) -> Result<LocalFit> {
    if neighbors.len() < 2 {
        return Ok(LocalFit {
            result: unshrunk(y, v),
            fit: None,
            fallback: true,
        });
    }
    let fit = fit_random_effects(neighbors)?;
    Ok(LocalFit {
        result: shrink(y, v, &fit),
        fit: Some(fit),
        fallback: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalOptions {
    pub cross_fit: CrossFit,
    /// Add the target itself to the prior fit (ablation).
    pub include_target: bool,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions {
            cross_fit: CrossFit::Rotated,
            include_target: false,
        }
    }
}

/// One held-out fold of a local estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    /// 0-based held-out fold; `None` when the prior uses full-replicate
    /// estimates.
    pub fold: Option<usize>,
    pub neighborhood: NeighborhoodResult,
    /// The fold's prior applied to the estimate it shrinks.
    pub local: LocalFit,
    /// Normalized combination weight.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    /// Population index of the target.
    pub target: usize,
    pub theta_tilde: f64,
    /// Combined center, prior variance and weight behind `theta_tilde`.
    pub combined: ShrinkageResult,
    /// No fold had enough neighbors for a fit, so `theta_tilde = y`.
    pub fallback: bool,
    pub folds: Vec<FoldRecord>,
}

impl TargetEstimate {
    pub fn any_fallback(&self) -> bool {
        self.fallback || self.folds.iter().any(|f| f.local.fallback)
    }
}

/// Local EB estimate for the experiment at replicate position `position`.
pub fn local_target_estimate(
    replicate: &ReplicateOutput,
    pilots: &PilotEstimates,
    position: usize,
    strategy: Strategy,
    distances: Option<&[f64]>,
    m0: usize,
    q: usize,
    options: &LocalOptions,
) -> Result<TargetEstimate> {
    let exps = &replicate.experiments;
    let target = &exps[position];
    let pool: Vec<usize> = exps.iter().map(|e| e.model).collect();
    let position_of = |model: usize| replicate.position_of(model).expect("pool member is in the replicate");
    let outcome = |pos: usize, fold: Option<usize>| match fold {
        Some(f) => exps[pos].fold_estimate(f),
        None => (exps[pos].y, exps[pos].v),
    };
    let folds: Vec<Option<usize>> = if strategy == Strategy::ProcessOnly {
        vec![None]
    } else if options.cross_fit == CrossFit::PilotSplit {
        vec![Some(0)]
    } else {
        (0..target.k()).map(Some).collect()
    };
    let fold_shrink = options.cross_fit == CrossFit::FoldShrink;

    let mut records = Vec::with_capacity(folds.len());
    for &fold in &folds {
        let pilot = |model: usize| fold.map_or(f64::NAN, |f| pilots.get(position_of(model), f));
        let input = SelectionInput {
            target: target.model,
            pool: &pool,
            pilot: &pilot,
            distances,
        };
        let neighborhood = build_neighborhood(strategy, &input, m0, q)?;
        let mut fit_set: Vec<(f64, f64)> = neighborhood
            .neighbors
            .iter()
            .map(|&j| outcome(position_of(j), fold))
            .collect();
        if options.include_target {
            fit_set.push(outcome(position, fold));
        }
        let (y, v) = if fold_shrink { outcome(position, fold) } else { (target.y, target.v) };
        let local = local_eb_estimate(y, v, &fit_set)?;
        let weight = 1.0 / outcome(position, fold).1;
        records.push(FoldRecord {
            fold,
            neighborhood,
            local,
            weight,
        });
    }
    let total: f64 = records.iter().map(|r| r.weight).sum();
    for r in &mut records {
        r.weight /= total;
    }

    let fitted: Vec<&FoldRecord> = records.iter().filter(|r| r.local.fit.is_some()).collect();
    let fallback = fitted.is_empty();
    let combined = if fallback {
        unshrunk(target.y, target.v)
    } else if fold_shrink {
        // Folds without a fit contribute their unshrunk estimate.
        let avg = |x: &dyn Fn(&ShrinkageResult) -> f64| {
            records.iter().map(|r| r.weight * x(&r.local.result)).sum::<f64>()
        };
        let fitted_avg = |x: &dyn Fn(&ShrinkageResult) -> f64| {
            let w: f64 = fitted.iter().map(|r| r.weight).sum();
            fitted.iter().map(|r| r.weight * x(&r.local.result)).sum::<f64>() / w
        };
        ShrinkageResult {
            theta_tilde: avg(&|r| r.theta_tilde),
            b: avg(&|r| r.b),
            center: fitted_avg(&|r| r.center),
            tau2: fitted_avg(&|r| r.tau2),
            y: target.y,
            v: target.v,
        }
    } else {
        let w: f64 = fitted.iter().map(|r| r.weight).sum();
        let center = fitted.iter().map(|r| r.weight * r.local.result.center).sum::<f64>() / w;
        let tau2 = fitted.iter().map(|r| r.weight * r.local.result.tau2).sum::<f64>() / w;
        shrink_toward(target.y, target.v, center, tau2)
    };
    Ok(TargetEstimate {
        target: target.model,
        theta_tilde: combined.theta_tilde,
        combined,
        fallback,
        folds: records,
    })
}

/// Cross-fitted CF-SHN estimates for every experiment in a replicate, in
/// replicate order.
pub fn run_cfshn(
    replicate: &ReplicateOutput,
    distances: &crate::similarity::DistanceMatrix,
    m0: usize,
    q: usize,
    options: &LocalOptions,
) -> Result<Vec<TargetEstimate>> {
    let pilots = pilot_estimates(replicate)?;
    (0..replicate.experiments.len())
        .map(|pos| {
            let row = distances.row(replicate.experiments[pos].model);
            local_target_estimate(replicate, &pilots, pos, Strategy::CfShn, Some(row), m0, q, options)
        })
        .collect()
}

/// Classical EB over a replicate's retained experiments.
pub fn classical_estimates(replicate: &ReplicateOutput) -> Result<Vec<ShrinkageResult>> {
    let pairs: Vec<(f64, f64)> = replicate.experiments.iter().map(|e| (e.y, e.v)).collect();
    let fit = fit_random_effects(&pairs)?;
    Ok(pairs.iter().map(|&(y, v)| shrink(y, v, &fit)).collect())
}

pub(crate) fn write_ids(ids: &[String], sink: &mut impl Write, members: &[usize]) -> std::io::Result<()> {
    for (i, &m) in members.iter().enumerate() {
        if i > 0 {
            write!(sink, ";")?;
        }
        write!(sink, "{}", ids[m])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_examples() {
        // target 0; B=1, C=2, D=3
        let d = [0.0, 1.0, 3.0, 2.0];
        assert_eq!(select_candidates(0, &d, &[0, 1, 2, 3], 2), vec![1, 3]);
        assert_eq!(select_candidates(0, &d, &[0, 1, 2, 3], 10), vec![1, 3, 2]);
        let tie = [0.0, 1.0, 1.0];
        assert_eq!(select_candidates(0, &tie, &[0, 2, 1], 1), vec![1]);
    }

    #[test]
    fn refine_examples() {
        let cands = [(1, 0.1), (2, 5.0), (3, 0.2)];
        let n = refine_neighbors(0.0, &cands, 2).unwrap();
        assert_eq!(n.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 3]);
        let n = refine_neighbors(0.0, &cands, 9).unwrap();
        assert_eq!(n.len(), 3);
        let equal = [(4, 1.0), (2, 1.0), (3, 1.0)];
        let n = refine_neighbors(1.0, &equal, 2).unwrap();
        assert_eq!(n.iter().map(|x| x.0).collect::<Vec<_>>(), vec![2, 3]);
        assert!(refine_neighbors(0.0, &[], 2).is_err());
    }

    #[test]
    fn local_estimate_examples() {
        let r = local_eb_estimate(4.0, 1.0, &[(0.0, 1.0), (2.0, 1.0)]).unwrap();
        assert!((r.fit.unwrap().mu_hat - 1.0).abs() < 1e-12);
        assert!((r.result.b - 0.5).abs() < 1e-8);
        assert!((r.result.theta_tilde - 2.5).abs() < 1e-8);

        let r = local_eb_estimate(0.3, 1.0, &[(0.3, 1.0), (0.3, 1.0), (0.3, 1.0)]).unwrap();
        assert!((r.result.theta_tilde - 0.3).abs() < 1e-12);

        let r = local_eb_estimate(5.0, 1.0, &[(0.0, 1.0)]).unwrap();
        assert!(r.fallback);
        assert_eq!(r.result.theta_tilde, 5.0);
    }

    #[test]
    fn strategies_agree_when_stage_two_is_slack() {
        let pool = [0, 1, 2, 3, 4];
        let d = [0.0, 0.4, 0.1, 0.9, 0.3];
        let pilots = [0.0, 5.0, -1.0, 2.0, 0.5];
        let pilot = |j: usize| pilots[j];
        let input = SelectionInput {
            target: 0,
            pool: &pool,
            pilot: &pilot,
            distances: Some(&d),
        };
        let cf = build_neighborhood(Strategy::CfShn, &input, 4, 4).unwrap();
        let po = baseline_neighbors(Strategy::ProcessOnly, &input, 4).unwrap();
        let mut a = cf.neighbors.clone();
        let mut b = po.neighbors.clone();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        let oo = baseline_neighbors(Strategy::OutcomeOnly, &input, 1).unwrap();
        assert_eq!(oo.neighbors, vec![4]);
        assert!(!cf.neighbors.contains(&0));
    }
}
