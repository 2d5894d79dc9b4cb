use serde::{Deserialize, Serialize};

use crate::data::{compute_increments, reference_effect, Arm, ArmPair, ExperimentSeries};
use crate::error::{Error, Result};

/// Outcome distribution of one arm within one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentOutcome {
    pub mean: f64,
    pub variance: f64,
}

/// Piecewise-constant arrival intensity `lambda(t) = n f(t)` with per-segment
/// outcome moments for each arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NhppModel {
    pub experiment_id: String,
    /// Total expected arrivals over the horizon.
    pub n: f64,
    pub rates: Vec<f64>,
    pub widths: Vec<f64>,
    /// Shape density per segment, `sum_i shape_i * width_i == 1`.
    pub shape: Vec<f64>,
    pub outcomes: Vec<ArmPair<SegmentOutcome>>,
    /// Long-horizon reference effect of the source series.
    pub reference_effect: f64,
}

impl NhppModel {
    pub fn segments(&self) -> usize {
        self.rates.len()
    }

    /// Expected arrivals in segment `i` (both arms).
    pub fn expected_arrivals(&self, i: usize) -> f64 {
        self.rates[i] * self.widths[i]
    }

    pub fn intensity_at(&self, t: f64) -> f64 {
        let mut start = 0.0;
        for (i, w) in self.widths.iter().enumerate() {
            if t < start + w {
                return self.n * self.shape[i];
            }
            start += w;
        }
        0.0
    }

    /// Arrival-weighted mean outcome difference implied by the segment
    /// moments, i.e. the large-sample limit of the simulated `y`.
    pub fn aggregate_effect(&self) -> f64 {
        let total: f64 = (0..self.segments()).map(|i| self.expected_arrivals(i)).sum();
        (0..self.segments())
            .map(|i| {
                let o = &self.outcomes[i];
                self.expected_arrivals(i) * (o.treatment.mean - o.control.mean)
            })
            .sum::<f64>()
            / total
    }

    /// Arrival-weighted average segment variance of an arm.
    pub fn arm_variance(&self, arm: Arm) -> f64 {
        let total: f64 = (0..self.segments()).map(|i| self.expected_arrivals(i)).sum();
        (0..self.segments())
            .map(|i| self.expected_arrivals(i) * self.outcomes[i].get(arm).variance)
            .sum::<f64>()
            / total
    }
}

/// Fills gaps in a per-segment sequence from the nearest earlier valid
/// entry, or the nearest later one for a leading gap.
fn fill_gaps(values: &mut [Option<f64>], fallback: f64) -> Vec<f64> {
    let first = values.iter().flatten().next().copied().unwrap_or(fallback);
    let mut last = first;
    values
        .iter_mut()
        .map(|v| {
            if let Some(x) = *v {
                last = x;
            }
            last
        })
        .collect()
}

pub fn fit_nhpp(series: &ExperimentSeries) -> Result<NhppModel> {
    let increments = compute_increments(series)?;
    let rates: Vec<f64> = increments.intervals.iter().map(|iv| iv.rate()).collect();
    let widths: Vec<f64> = increments.intervals.iter().map(|iv| iv.width).collect();
    let n: f64 = rates.iter().zip(&widths).map(|(r, h)| r * h).sum();
    if !(n > 0.0) {
        return Err(Error::Degenerate(format!(
            "experiment {}: no arrivals to fit",
            series.experiment_id()
        )));
    }
    let shape = rates.iter().map(|r| r / n).collect();

    let last = series.snapshots()[series.last_index()];
    let mut per_arm = ArmPair::new(Vec::new(), Vec::new());
    for arm in Arm::BOTH {
        let final_cum = last.arms.get(arm).moments();
        let final_var = final_cum.variance().ok_or_else(|| {
            Error::InsufficientData(format!(
                "experiment {}: arm {} has fewer than 2 observations",
                series.experiment_id(),
                arm.code()
            ))
        })?;
        let mut means: Vec<Option<f64>> = increments
            .intervals
            .iter()
            .map(|iv| {
                let m = iv.moments.get(arm);
                (!m.is_empty()).then_some(m.mean)
            })
            .collect();
        let mut vars: Vec<Option<f64>> = increments
            .intervals
            .iter()
            .map(|iv| iv.moments.get(arm).variance())
            .collect();
        let means = fill_gaps(&mut means, final_cum.mean);
        let vars = fill_gaps(&mut vars, final_var);
        *per_arm.get_mut(arm) = means
            .into_iter()
            .zip(vars)
            .map(|(mean, variance)| SegmentOutcome { mean, variance })
            .collect::<Vec<_>>();
    }
    let outcomes = per_arm
        .control
        .iter()
        .zip(&per_arm.treatment)
        .map(|(c, t)| ArmPair::new(*c, *t))
        .collect();

    Ok(NhppModel {
        experiment_id: series.experiment_id().to_string(),
        n,
        rates,
        widths,
        shape,
        outcomes,
        reference_effect: reference_effect(series)?,
    })
}
