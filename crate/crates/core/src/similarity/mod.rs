//! Process features and the composite shape/scale distance between
//! experiments.

mod dtw;

pub use dtw::{band_width, dtw_distance};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{compute_increments, ExperimentSeries};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Floor applied to both robust normalizers.
pub const NORMALIZER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Smoothing {
    /// Gaussian kernel with the configured bandwidth, truncated at four
    /// bandwidths and renormalized over the part inside `[0, 1]`.
    Gaussian,
    /// Centered moving average over `window` bins.
    MovingAverage { window: usize },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    /// Weight of the shape term against the scale term.
    pub rho: f64,
    /// Number of grid bins for the shape curve.
    pub bins: usize,
    /// Gaussian bandwidth in normalized time.
    pub bandwidth: f64,
    /// Sakoe–Chiba band as a fraction of `bins`.
    pub band_fraction: f64,
    pub smoothing: Smoothing,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            rho: 0.75,
            bins: 500,
            bandwidth: 0.04,
            band_fraction: 0.1,
            smoothing: Smoothing::Gaussian,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho = {} must lie in (0, 1)", self.rho)));
        }
        if self.bins < 2 {
            return Err(Error::Config(format!("L = {} must be at least 2", self.bins)));
        }
        if !(self.bandwidth >= 0.0) {
            return Err(Error::Config(format!("bandwidth {} must be >= 0", self.bandwidth)));
        }
        if !(0.0..=1.0).contains(&self.band_fraction) {
            return Err(Error::Config(format!(
                "band fraction {} must lie in [0, 1]",
                self.band_fraction
            )));
        }
        Ok(())
    }
}

/// Normalized arrival shape on `[0, 1]` plus traffic scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessFeatures {
    pub experiment_id: String,
    /// Shape density sampled on `L` equal bins; `sum(shape) / L == 1`.
    pub shape: Vec<f64>,
    pub log_n: f64,
    pub n: f64,
}

impl ProcessFeatures {
    pub fn riemann_sum(&self) -> f64 {
        self.shape.iter().sum::<f64>() / self.shape.len() as f64
    }
}

/// Builds the process features of a series.
///
/// The piecewise-constant interval rates are mapped onto normalized time
/// `s = t / T`, divided by the total arrivals, averaged exactly over each of
/// the `L` bins, smoothed and finally rescaled to unit Riemann sum.
pub fn normalized_shape(series: &ExperimentSeries, config: &SimilarityConfig) -> Result<ProcessFeatures> {
    config.validate()?;
    let increments = compute_increments(series)?;
    let n: f64 = increments
        .intervals
        .iter()
        .map(|iv| iv.total_arrivals() as f64)
        .sum();
    if !(n > 0.0) {
        return Err(Error::Degenerate(format!(
            "experiment {}: no arrivals",
            series.experiment_id()
        )));
    }
    let horizon = series.horizon_days();
    // Cumulative share of arrivals at each interval boundary, in normalized time.
    let mut knots = Vec::with_capacity(increments.intervals.len() + 1);
    knots.push((0.0, 0.0));
    let mut acc = 0.0;
    for iv in &increments.intervals {
        acc += iv.total_arrivals() as f64 / n;
        knots.push((iv.end / horizon, acc));
    }
    let bins = config.bins;
    let cdf = |s: f64, cursor: &mut usize| -> f64 {
        while *cursor + 1 < knots.len() - 1 && knots[*cursor + 1].0 <= s {
            *cursor += 1;
        }
        let (s0, f0) = knots[*cursor];
        let (s1, f1) = knots[*cursor + 1];
        if s1 <= s0 {
            f1
        } else {
            f0 + (f1 - f0) * ((s - s0) / (s1 - s0)).clamp(0.0, 1.0)
        }
    };
    let mut cursor = 0;
    let mut prev = 0.0;
    let mut raw = Vec::with_capacity(bins);
    for b in 1..=bins {
        let f = if b == bins { 1.0 } else { cdf(b as f64 / bins as f64, &mut cursor) };
        raw.push((f - prev) * bins as f64);
        prev = f;
    }
    let mut shape = match config.smoothing {
        Smoothing::Gaussian if config.bandwidth > 0.0 => {
            gaussian_smooth(&raw, config.bandwidth * bins as f64)
        }
        Smoothing::MovingAverage { window } if window > 1 => moving_average(&raw, window),
        _ => raw,
    };
    let total: f64 = shape.iter().sum::<f64>() / bins as f64;
    for x in &mut shape {
        *x /= total;
    }
    Ok(ProcessFeatures {
        experiment_id: series.experiment_id().to_string(),
        shape,
        log_n: n.ln(),
        n,
    })
}

/// Kernel-weighted average over the in-range part of a truncated Gaussian.
/// Constants are preserved exactly (up to rounding), including at the edges.
fn gaussian_smooth(xs: &[f64], sigma_bins: f64) -> Vec<f64> {
    let radius = (4.0 * sigma_bins).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f64 / sigma_bins).powi(2)).exp())
        .collect();
    weighted_window(xs, radius, &kernel)
}

fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let radius = (window / 2) as isize;
    let kernel = vec![1.0; 2 * radius as usize + 1];
    weighted_window(xs, radius, &kernel)
}

fn weighted_window(xs: &[f64], radius: isize, kernel: &[f64]) -> Vec<f64> {
    let len = xs.len() as isize;
    (0..len)
        .map(|i| {
            let lo = (i - radius).max(0);
            let hi = (i + radius).min(len - 1);
            let (mut num, mut den) = (0.0, 0.0);
            for j in lo..=hi {
                let w = kernel[(j - i + radius) as usize];
                num += w * xs[j as usize];
                den += w;
            }
            num / den
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceNormalizers {
    pub med_dtw: f64,
    pub mad_log_n: f64,
}

/// Median with the even case resolved as the mean of the two central values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

/// Median absolute deviation from the median (unscaled).
pub fn mad(values: &[f64]) -> Option<f64> {
    let center = median(values)?;
    let dev: Vec<f64> = values.iter().map(|x| (x - center).abs()).collect();
    median(&dev)
}

impl DistanceNormalizers {
    pub fn from_parts(pair_dtw: &[f64], log_n: &[f64]) -> Result<Self> {
        if log_n.len() < 2 || pair_dtw.is_empty() {
            return Err(Error::InsufficientData(
                "distance normalizers need at least 2 experiments".into(),
            ));
        }
        Ok(DistanceNormalizers {
            med_dtw: median(pair_dtw).unwrap_or(0.0).max(NORMALIZER_FLOOR),
            mad_log_n: mad(log_n).unwrap_or(0.0).max(NORMALIZER_FLOOR),
        })
    }
}

/// Symmetric matrix with zero diagonal, indexed like the feature list it was
/// built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    ids: Vec<String>,
    values: Vec<f64>,
}

impl DistanceMatrix {
    fn from_upper(ids: Vec<String>, upper: &[f64]) -> Self {
        let n = ids.len();
        let mut values = vec![0.0; n * n];
        let mut it = upper.iter();
        for i in 0..n {
            for j in (i + 1)..n {
                let d = *it.next().expect("upper triangle length");
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        DistanceMatrix { ids, values }
    }

    /// Builds a matrix from row-major values, checking shape, symmetry and
    /// the zero diagonal.
    pub fn new(ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(Error::Validation(format!(
                "distance matrix for {n} experiments needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::Validation(format!("non-zero diagonal at {}", ids[i])));
            }
            for j in 0..i {
                if values[i * n + j] != values[j * n + i] || !(values[i * n + j] >= 0.0) {
                    return Err(Error::Validation(format!(
                        "distance between {} and {} is not symmetric and non-negative",
                        ids[i], ids[j]
                    )));
                }
            }
        }
        Ok(DistanceMatrix { ids, values })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.ids.len();
        &self.values[i * n..(i + 1) * n]
    }

    /// Off-diagonal entries `(i, j, d)` with `i < j`.
    pub fn upper(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.ids.len();
        (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j, self.get(i, j))))
    }

    pub fn write_csv(&self, sink: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["i", "j", "d"])?;
        for (i, j, d) in self.upper() {
            w.write_record([&self.ids[i], &self.ids[j], &d.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv sink>", e))?;
        Ok(())
    }
}

fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect()
}

/// Raw DTW over all pairs, plus the normalizers and scales needed to build
/// composite distances for any shape/scale weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessDistances {
    pub dtw: DistanceMatrix,
    pub log_n: Vec<f64>,
    pub normalizers: DistanceNormalizers,
}

impl ProcessDistances {
    pub fn compute(features: &[ProcessFeatures], band_fraction: f64, exec: Exec) -> Result<Self> {
        if features.len() < 2 {
            return Err(Error::InsufficientData(
                "pairwise distances need at least 2 experiments".into(),
            ));
        }
        let pairs = upper_pairs(features.len());
        let upper = exec
            .map_indexed(pairs.len(), |p| {
                let (i, j) = pairs[p];
                dtw_distance(&features[i].shape, &features[j].shape, band_fraction)
            })
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
        let log_n: Vec<f64> = features.iter().map(|f| f.log_n).collect();
        let normalizers = DistanceNormalizers::from_parts(&upper, &log_n)?;
        let ids = features.iter().map(|f| f.experiment_id.clone()).collect();
        Ok(ProcessDistances {
            dtw: DistanceMatrix::from_upper(ids, &upper),
            log_n,
            normalizers,
        })
    }

    pub fn composite(&self, rho: f64) -> DistanceMatrix {
        let upper: Vec<f64> = self
            .dtw
            .upper()
            .map(|(i, j, d)| composite_from_parts(d, self.log_n[i], self.log_n[j], rho, &self.normalizers))
            .collect();
        DistanceMatrix::from_upper(self.dtw.ids.clone(), &upper)
    }
}

fn composite_from_parts(dtw: f64, log_a: f64, log_b: f64, rho: f64, norm: &DistanceNormalizers) -> f64 {
    rho * dtw / norm.med_dtw + (1.0 - rho) * (log_a - log_b).abs() / norm.mad_log_n
}

pub fn distance_normalizers(features: &[ProcessFeatures], band_fraction: f64) -> Result<DistanceNormalizers> {
    ProcessDistances::compute(features, band_fraction, Exec::default()).map(|p| p.normalizers)
}

/// `rho * dtw / med_dtw + (1 - rho) * |log n_i - log n_j| / mad_log_n`.
pub fn composite_distance(
    a: &ProcessFeatures,
    b: &ProcessFeatures,
    rho: f64,
    band_fraction: f64,
    normalizers: &DistanceNormalizers,
) -> Result<f64> {
    let d = dtw_distance(&a.shape, &b.shape, band_fraction)?;
    Ok(composite_from_parts(d, a.log_n, b.log_n, rho, normalizers))
}

pub fn pairwise_distance_matrix(features: &[ProcessFeatures], config: &SimilarityConfig) -> Result<DistanceMatrix> {
    config.validate()?;
    Ok(ProcessDistances::compute(features, config.band_fraction, Exec::default())?.composite(config.rho))
}

pub fn write_shapes_csv(features: &[ProcessFeatures], sink: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["experiment_id", "bin", "value"])?;
    for f in features {
        for (b, v) in f.shape.iter().enumerate() {
            w.write_record([f.experiment_id.as_str(), &b.to_string(), &v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ArmPair, ArmSnapshot, Snapshot};

    fn counts_series(id: &str, counts: &[u64]) -> ExperimentSeries {
        let mut cum = 0;
        let snaps = counts
            .iter()
            .enumerate()
            .map(|(i, c)| {
                cum += c;
                let half = ArmSnapshot {
                    count_cum: cum / 2,
                    mean_cum: 0.0,
                    variance_cum: 1.0,
                };
                let rest = ArmSnapshot {
                    count_cum: cum - cum / 2,
                    ..half
                };
                Snapshot {
                    time_days: (i + 1) as f64,
                    arms: ArmPair::new(half, rest),
                }
            })
            .collect();
        ExperimentSeries::new(id, "m", snaps).unwrap()
    }

    fn unsmoothed(bins: usize) -> SimilarityConfig {
        SimilarityConfig {
            bins,
            smoothing: Smoothing::None,
            ..Default::default()
        }
    }

    #[test]
    fn two_interval_shape_before_smoothing() {
        let f = normalized_shape(&counts_series("a", &[10, 20]), &unsmoothed(10)).unwrap();
        assert_eq!(f.n, 30.0);
        for v in &f.shape[..5] {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
        for v in &f.shape[5..] {
            assert!((v - 4.0 / 3.0).abs() < 1e-12);
        }
        assert!((f.riemann_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_arrivals_stay_constant_under_smoothing() {
        let cfg = SimilarityConfig::default();
        let f = normalized_shape(&counts_series("u", &[40; 12]), &cfg).unwrap();
        for v in &f.shape {
            assert!((v - 1.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn moving_average_preserves_unit_mass() {
        let cfg = SimilarityConfig {
            smoothing: Smoothing::MovingAverage { window: 9 },
            ..Default::default()
        };
        let f = normalized_shape(&counts_series("a", &[5, 0, 90, 1, 3]), &cfg).unwrap();
        assert!((f.riemann_sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_traffic_is_degenerate() {
        let s = counts_series("z", &[0, 0]);
        assert!(matches!(
            normalized_shape(&s, &SimilarityConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn median_and_mad() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(mad(&[1.0, 2.0, 4.0]), Some(1.0));
    }

    #[test]
    fn normalizer_examples() {
        let n = DistanceNormalizers::from_parts(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(n.med_dtw, 2.0);
        assert_eq!(n.mad_log_n, 1.0);
        let flat = DistanceNormalizers::from_parts(&[0.5], &[3.0, 3.0]).unwrap();
        assert_eq!(flat.mad_log_n, NORMALIZER_FLOOR);
        assert!(DistanceNormalizers::from_parts(&[], &[1.0]).is_err());
    }

    #[test]
    fn composite_unit_scale_case() {
        let norm = DistanceNormalizers {
            med_dtw: 2.0,
            mad_log_n: 0.5,
        };
        assert!((composite_from_parts(2.0, 1.0, 1.5, 0.75, &norm) - 1.0).abs() < 1e-15);
        assert_eq!(composite_from_parts(2.0, 1.0, 1.5, 1.0, &norm), 1.0);
    }

    #[test]
    fn identical_experiments_have_zero_distance() {
        let cfg = SimilarityConfig::default();
        let feats = vec![
            normalized_shape(&counts_series("a", &[3, 9, 27]), &cfg).unwrap(),
            normalized_shape(&counts_series("b", &[3, 9, 27]), &cfg).unwrap(),
        ];
        let m = pairwise_distance_matrix(&feats, &cfg).unwrap();
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn matrix_matches_individual_calls() {
        let cfg = SimilarityConfig {
            bins: 60,
            ..Default::default()
        };
        let feats: Vec<_> = [&[1u64, 5, 9][..], &[9, 5, 1], &[4, 4, 40]]
            .iter()
            .enumerate()
            .map(|(i, c)| normalized_shape(&counts_series(&format!("e{i}"), c), &cfg).unwrap())
            .collect();
        let norm = distance_normalizers(&feats, cfg.band_fraction).unwrap();
        let m = pairwise_distance_matrix(&feats, &cfg).unwrap();
        for (i, j, d) in m.upper() {
            let direct = composite_distance(&feats[i], &feats[j], cfg.rho, cfg.band_fraction, &norm).unwrap();
            assert_eq!(d, direct);
            assert_eq!(m.get(j, i), d);
        }
        assert_eq!(m.upper().count(), 3);
    }
}
