//! Snapshot-level experiment summaries.
//!
//! An experiment is observed through cumulative per-arm statistics recorded
//! at increasing times. The time origin is implicit: before the first
//! snapshot both arms are empty at `t = 0`, so a series with `M` snapshots
//! spans `M` intervals. A snapshot recorded exactly at `t = 0` must be empty
//! and simply restates the origin.

mod io;

pub use io::{
    asos_to_canonical, parse_snapshot_file, parse_snapshot_reader, write_snapshot_csv,
    ASOS_COLUMNS, CANONICAL_COLUMNS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::Moments;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treatment];

    pub fn code(self) -> &'static str {
        match self {
            Arm::Control => "c",
            Arm::Treatment => "t",
        }
    }
}

/// A value per arm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmPair<T> {
    pub control: T,
    pub treatment: T,
}

impl<T> ArmPair<T> {
    pub fn new(control: T, treatment: T) -> Self {
        ArmPair { control, treatment }
    }

    pub fn get(&self, arm: Arm) -> &T {
        match arm {
            Arm::Control => &self.control,
            Arm::Treatment => &self.treatment,
        }
    }

    pub fn get_mut(&mut self, arm: Arm) -> &mut T {
        match arm {
            Arm::Control => &mut self.control,
            Arm::Treatment => &mut self.treatment,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ArmPair<U> {
        ArmPair {
            control: f(&self.control),
            treatment: f(&self.treatment),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSnapshot {
    pub count_cum: u64,
    pub mean_cum: f64,
    /// Unbiased sample variance of all outcomes up to the snapshot.
    pub variance_cum: f64,
}

impl ArmSnapshot {
    pub fn moments(&self) -> Moments {
        Moments::from_sample(self.count_cum as f64, self.mean_cum, self.variance_cum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time_days: f64,
    pub arms: ArmPair<ArmSnapshot>,
}

impl Snapshot {
    pub fn total_count(&self) -> u64 {
        self.arms.control.count_cum + self.arms.treatment.count_cum
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSeries {
    experiment_id: String,
    metric_id: String,
    snapshots: Vec<Snapshot>,
}

impl ExperimentSeries {
    /// Validates and builds a series. Snapshots must already be time-ordered.
    pub fn new(
        experiment_id: impl Into<String>,
        metric_id: impl Into<String>,
        snapshots: Vec<Snapshot>,
    ) -> Result<Self> {
        let experiment_id = experiment_id.into();
        let metric_id = metric_id.into();
        if snapshots.is_empty() {
            return Err(Error::Validation(format!(
                "experiment {experiment_id}: no snapshots"
            )));
        }
        let mut prev: Option<&Snapshot> = None;
        for (i, snap) in snapshots.iter().enumerate() {
            let t = snap.time_days;
            if !t.is_finite() || t < 0.0 {
                return Err(Error::Validation(format!(
                    "experiment {experiment_id}, snapshot {i}: time {t} is not a non-negative number"
                )));
            }
            for arm in Arm::BOTH {
                let a = snap.arms.get(arm);
                if !a.mean_cum.is_finite() || !a.variance_cum.is_finite() || a.variance_cum < 0.0 {
                    return Err(Error::Validation(format!(
                        "experiment {experiment_id}, snapshot {i}, arm {}: mean/variance must be finite with variance >= 0",
                        arm.code()
                    )));
                }
            }
            if t == 0.0 && snap.total_count() > 0 {
                return Err(Error::Validation(format!(
                    "experiment {experiment_id}, snapshot {i}: arrivals recorded at the time origin"
                )));
            }
            if let Some(p) = prev {
                if t <= p.time_days {
                    return Err(Error::Validation(format!(
                        "experiment {experiment_id}, snapshot {i}: time {t} does not increase (previous {})",
                        p.time_days
                    )));
                }
                for arm in Arm::BOTH {
                    let (before, now) = (p.arms.get(arm).count_cum, snap.arms.get(arm).count_cum);
                    if now < before {
                        return Err(Error::Validation(format!(
                            "experiment {experiment_id}, snapshot {i}, arm {}: cumulative count decreases from {before} to {now}",
                            arm.code()
                        )));
                    }
                }
            }
            prev = Some(snap);
        }
        Ok(ExperimentSeries {
            experiment_id,
            metric_id,
            snapshots,
        })
    }

    pub fn experiment_id(&self) -> &str {
        &self.experiment_id
    }

    pub fn metric_id(&self) -> &str {
        &self.metric_id
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn horizon_days(&self) -> f64 {
        self.snapshots.last().map_or(0.0, |s| s.time_days)
    }

    pub fn last_index(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn total_count(&self) -> u64 {
        self.snapshots.last().map_or(0, Snapshot::total_count)
    }

    /// Snapshots that close an interval (the optional empty origin snapshot
    /// is skipped).
    fn interval_ends(&self) -> &[Snapshot] {
        if self.snapshots[0].time_days == 0.0 {
            &self.snapshots[1..]
        } else {
            &self.snapshots
        }
    }

    /// Returns a copy with `extra` appended. Used to extend a series with
    /// further snapshots while keeping validation in one place.
    pub fn with_snapshot(&self, extra: Snapshot) -> Result<Self> {
        let mut snaps = self.snapshots.clone();
        snaps.push(extra);
        ExperimentSeries::new(self.experiment_id.clone(), self.metric_id.clone(), snaps)
    }
}

/// Per-interval reconstruction from cumulative statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub start: f64,
    pub end: f64,
    pub width: f64,
    pub arrivals: ArmPair<u64>,
    pub moments: ArmPair<Moments>,
}

impl IntervalStats {
    pub fn total_arrivals(&self) -> u64 {
        self.arrivals.control + self.arrivals.treatment
    }

    /// Average arrival rate over the interval.
    pub fn rate(&self) -> f64 {
        self.total_arrivals() as f64 / self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    pub intervals: Vec<IntervalStats>,
    /// Number of interval variances that came out negative and were clamped.
    pub clamped_variances: usize,
}

pub fn compute_increments(series: &ExperimentSeries) -> Result<Increments> {
    let ends = series.interval_ends();
    let mut intervals = Vec::with_capacity(ends.len());
    let mut clamped = 0;
    let mut start = 0.0;
    let mut prev = ArmPair::new(Moments::EMPTY, Moments::EMPTY);
    let mut prev_counts = ArmPair::new(0u64, 0u64);
    for snap in ends {
        let width = snap.time_days - start;
        if !(width > 0.0) {
            return Err(Error::Validation(format!(
                "experiment {}: zero-width interval ending at t = {}",
                series.experiment_id, snap.time_days
            )));
        }
        let cum = snap.arms.map(ArmSnapshot::moments);
        let mut moments = ArmPair::new(Moments::EMPTY, Moments::EMPTY);
        let mut arrivals = ArmPair::new(0, 0);
        for arm in Arm::BOTH {
            let now = snap.arms.get(arm).count_cum;
            *arrivals.get_mut(arm) = now - *prev_counts.get(arm);
            let (m, was_clamped) = cum.get(arm).remove(prev.get(arm));
            if was_clamped {
                clamped += 1;
                log::debug!(
                    "experiment {}: negative interval variance clamped (arm {}, t = {})",
                    series.experiment_id,
                    arm.code(),
                    snap.time_days
                );
            }
            *moments.get_mut(arm) = m;
        }
        intervals.push(IntervalStats {
            start,
            end: snap.time_days,
            width,
            arrivals,
            moments,
        });
        start = snap.time_days;
        prev = cum;
        prev_counts = snap.arms.map(|a| a.count_cum);
    }
    if clamped > 0 {
        log::warn!(
            "experiment {}: {clamped} negative interval variance(s) clamped to 0",
            series.experiment_id
        );
    }
    Ok(Increments {
        intervals,
        clamped_variances: clamped,
    })
}

/// Difference-in-means estimate with its sampling variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub y: f64,
    pub v: f64,
    pub n_t: u64,
    pub n_c: u64,
}

impl EffectEstimate {
    /// `y = mean_T - mean_C`, `v = var_T / n_T + var_C / n_C`.
    pub fn from_arms(treatment: (u64, f64, f64), control: (u64, f64, f64)) -> Result<Self> {
        let (n_t, mean_t, var_t) = treatment;
        let (n_c, mean_c, var_c) = control;
        if n_t < 2 || n_c < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 observations per arm, have treatment {n_t}, control {n_c}"
            )));
        }
        let v = var_t / n_t as f64 + var_c / n_c as f64;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Degenerate(format!(
                "sampling variance {v} is not positive"
            )));
        }
        Ok(EffectEstimate {
            y: mean_t - mean_c,
            v,
            n_t,
            n_c,
        })
    }
}

pub fn effect_estimate(series: &ExperimentSeries, at_snapshot: usize) -> Result<EffectEstimate> {
    let snap = series.snapshots.get(at_snapshot).ok_or_else(|| {
        Error::Validation(format!(
            "experiment {}: snapshot index {at_snapshot} out of range",
            series.experiment_id
        ))
    })?;
    let (t, c) = (&snap.arms.treatment, &snap.arms.control);
    EffectEstimate::from_arms(
        (t.count_cum, t.mean_cum, t.variance_cum),
        (c.count_cum, c.mean_cum, c.variance_cum),
    )
    .map_err(|e| match e {
        Error::InsufficientData(msg) => Error::InsufficientData(format!(
            "experiment {}, snapshot {at_snapshot}: {msg}",
            series.experiment_id
        )),
        other => other,
    })
}

/// Long-horizon reference effect: the difference-in-means at the final
/// snapshot.
pub fn reference_effect(series: &ExperimentSeries) -> Result<f64> {
    effect_estimate(series, series.last_index()).map(|e| e.y)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn snap(t: f64, c: (u64, f64, f64), tr: (u64, f64, f64)) -> Snapshot {
        Snapshot {
            time_days: t,
            arms: ArmPair::new(
                ArmSnapshot {
                    count_cum: c.0,
                    mean_cum: c.1,
                    variance_cum: c.2,
                },
                ArmSnapshot {
                    count_cum: tr.0,
                    mean_cum: tr.1,
                    variance_cum: tr.2,
                },
            ),
        }
    }

    fn series(snaps: Vec<Snapshot>) -> ExperimentSeries {
        ExperimentSeries::new("e1", "m", snaps).unwrap()
    }

    #[test]
    fn increments_from_counts() {
        let s = series(vec![
            snap(1.0, (5, 0.0, 1.0), (5, 0.0, 1.0)),
            snap(2.0, (15, 0.0, 1.0), (15, 0.0, 1.0)),
        ]);
        let inc = compute_increments(&s).unwrap();
        let totals: Vec<u64> = inc.intervals.iter().map(|i| i.total_arrivals()).collect();
        let widths: Vec<f64> = inc.intervals.iter().map(|i| i.width).collect();
        assert_eq!(totals, vec![10, 20]);
        assert_eq!(widths, vec![1.0, 1.0]);
    }

    #[test]
    fn zero_arrival_interval_is_allowed() {
        let s = series(vec![
            snap(1.0, (5, 1.0, 1.0), (5, 1.0, 1.0)),
            snap(2.0, (5, 1.0, 1.0), (5, 1.0, 1.0)),
        ]);
        let inc = compute_increments(&s).unwrap();
        assert_eq!(inc.intervals[1].total_arrivals(), 0);
        assert!(inc.intervals[1].moments.control.is_empty());
    }

    #[test]
    fn moment_differencing_interval_mean() {
        let s = series(vec![
            snap(1.0, (10, 1.0, 1.0), (10, 1.0, 1.0)),
            snap(2.0, (30, 1.5, 1.0), (30, 1.5, 1.0)),
        ]);
        let inc = compute_increments(&s).unwrap();
        let m = inc.intervals[1].moments.control.mean;
        assert!((m - 1.75).abs() < 1e-12, "{m}");
    }

    #[test]
    fn inconsistent_variances_are_clamped_and_counted() {
        // Cumulative variance collapses although the interval mean shifts.
        let s = series(vec![
            snap(1.0, (10, 0.0, 5.0), (10, 0.0, 1.0)),
            snap(2.0, (20, 1.0, 0.1), (20, 0.0, 1.0)),
        ]);
        let inc = compute_increments(&s).unwrap();
        assert_eq!(inc.clamped_variances, 1);
        assert_eq!(inc.intervals[1].moments.control.m2, 0.0);
    }

    #[test]
    fn decreasing_count_is_rejected() {
        let err = ExperimentSeries::new(
            "exp-9",
            "m",
            vec![
                snap(1.0, (100, 0.0, 1.0), (100, 0.0, 1.0)),
                snap(2.0, (90, 0.0, 1.0), (120, 0.0, 1.0)),
            ],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("exp-9") && msg.contains("snapshot 1"), "{msg}");
    }

    #[test]
    fn origin_snapshot_must_be_empty() {
        assert!(ExperimentSeries::new("e", "m", vec![snap(0.0, (3, 0.0, 1.0), (0, 0.0, 0.0))]).is_err());
        let s = series(vec![
            snap(0.0, (0, 0.0, 0.0), (0, 0.0, 0.0)),
            snap(0.5, (4, 1.0, 1.0), (6, 1.0, 1.0)),
        ]);
        let inc = compute_increments(&s).unwrap();
        assert_eq!(inc.intervals.len(), 1);
        assert_eq!(inc.intervals[0].width, 0.5);
    }

    #[test]
    fn effect_estimate_formula() {
        let s = series(vec![snap(1.0, (100, 0.8, 1.0), (100, 1.0, 1.0))]);
        let e = effect_estimate(&s, 0).unwrap();
        assert!((e.y - 0.2).abs() < 1e-12);
        assert!((e.v - 0.02).abs() < 1e-15);

        let s = series(vec![snap(1.0, (400, 0.0, 2.0), (100, 0.0, 2.0))]);
        let e = effect_estimate(&s, 0).unwrap();
        assert!((e.v - 0.025).abs() < 1e-15);
    }

    #[test]
    fn identical_arms_give_zero_effect() {
        let s = series(vec![snap(1.0, (50, 3.3, 2.0), (50, 3.3, 2.0))]);
        assert_eq!(effect_estimate(&s, 0).unwrap().y, 0.0);
    }

    #[test]
    fn effect_estimate_needs_two_per_arm() {
        let s = series(vec![snap(1.0, (1, 0.0, 0.0), (10, 0.0, 1.0))]);
        assert!(matches!(
            effect_estimate(&s, 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn reference_effect_uses_final_snapshot() {
        let s = series(vec![
            snap(1.0, (10, 1.0, 1.0), (10, 1.5, 1.0)),
            snap(2.0, (20, 1.0, 1.0), (20, 1.1, 1.0)),
        ]);
        assert!((effect_estimate(&s, 0).unwrap().y - 0.5).abs() < 1e-12);
        assert!((reference_effect(&s).unwrap() - 0.1).abs() < 1e-12);

        let s = series(vec![snap(3.0, (10, 1.0, 1.0), (10, 2.0, 1.0))]);
        assert_eq!(reference_effect(&s).unwrap(), 1.0);
        assert_eq!(effect_estimate(&s, 0).unwrap().y, reference_effect(&s).unwrap());
    }
}
