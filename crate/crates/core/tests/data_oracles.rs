use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use localeb::data::{
    compute_increments, effect_estimate, parse_snapshot_reader, reference_effect, ArmPair, ArmSnapshot,
    ExperimentSeries, Snapshot,
};

/// Mean and unbiased variance computed directly from raw outcomes.
fn direct(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

fn draw(rng: &mut impl Rng, shift: f64) -> Vec<f64> {
    let n = rng.random_range(2..40);
    (0..n).map(|_| shift + 2.0 * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Raw per-interval outcomes for both arms, and the series whose snapshots
/// summarize them cumulatively.
fn simulated_series(rng: &mut impl Rng, intervals: usize) -> (Vec<ArmPair<Vec<f64>>>, ExperimentSeries) {
    let mut raw = Vec::new();
    let mut snaps = Vec::new();
    let (mut all_c, mut all_t) = (Vec::new(), Vec::new());
    for i in 0..intervals {
        let c = draw(rng, 1.0 + 0.3 * i as f64);
        let t = draw(rng, 1.5 - 0.2 * i as f64);
        all_c.extend(&c);
        all_t.extend(&t);
        let arm = |xs: &[f64]| {
            let (mean, var) = direct(xs);
            ArmSnapshot {
                count_cum: xs.len() as u64,
                mean_cum: mean,
                variance_cum: var,
            }
        };
        snaps.push(Snapshot {
            time_days: (i + 1) as f64 * 0.5,
            arms: ArmPair::new(arm(&all_c), arm(&all_t)),
        });
        raw.push(ArmPair::new(c, t));
    }
    (raw, ExperimentSeries::new("e", "m", snaps).unwrap())
}

#[test]
fn differencing_matches_direct_interval_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (raw, series) = simulated_series(&mut rng, 6);
        let inc = compute_increments(&series).unwrap();
        assert_eq!(inc.clamped_variances, 0);
        for (stats, samples) in inc.intervals.iter().zip(&raw) {
            for (m, xs) in [
                (stats.moments.control, &samples.control),
                (stats.moments.treatment, &samples.treatment),
            ] {
                let (mean, var) = direct(xs);
                assert_eq!(m.count, xs.len() as f64);
                assert!((m.mean - mean).abs() <= 1e-9 * (1.0 + mean.abs()), "{} vs {mean}", m.mean);
                assert!((m.variance().unwrap() - var).abs() <= 1e-8 * (1.0 + var), "variance");
            }
        }
    }
}

#[test]
fn pooled_interval_means_recover_cumulative_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let (_, series) = simulated_series(&mut rng, 8);
        let inc = compute_increments(&series).unwrap();
        let last = series.snapshots().last().unwrap();
        let (mut count, mut sum) = (0.0, 0.0);
        for s in &inc.intervals {
            count += s.moments.control.count;
            sum += s.moments.control.count * s.moments.control.mean;
        }
        let mean = sum / count;
        assert!((mean - last.arms.control.mean_cum).abs() <= 1e-10 * last.arms.control.mean_cum.abs().max(1.0));
        let arrivals: u64 = inc.intervals.iter().map(|s| s.total_arrivals()).sum();
        assert_eq!(arrivals, series.total_count());
    }
}

#[test]
fn worked_differencing_example() {
    let snap = |t: f64, n: u64, m: f64| {
        let a = ArmSnapshot {
            count_cum: n,
            mean_cum: m,
            variance_cum: 1.0,
        };
        Snapshot {
            time_days: t,
            arms: ArmPair::new(a, a),
        }
    };
    let series = ExperimentSeries::new("e", "m", vec![snap(1.0, 10, 1.0), snap(2.0, 30, 1.5)]).unwrap();
    let inc = compute_increments(&series).unwrap();
    assert_eq!(inc.intervals[1].arrivals.control, 20);
    assert!((inc.intervals[1].moments.control.mean - 1.75).abs() < 1e-12);
}

#[test]
fn csv_edge_cases() {
    let header = "experiment_id,metric_id,time_days,arm,count_cum,mean_cum,variance_cum\n";
    assert!(parse_snapshot_reader(header.as_bytes()).unwrap().is_empty());
    let decreasing = format!(
        "{header}e,m,1,c,100,1,1\ne,m,1,t,100,1,1\ne,m,2,c,90,1,1\ne,m,2,t,120,1,1\n"
    );
    let err = parse_snapshot_reader(decreasing.as_bytes()).unwrap_err();
    assert!(err.to_string().contains("experiment e, snapshot 1"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn zero_arrival_snapshot_leaves_estimate_unchanged(seed in any::<u64>(), gap in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, series) = simulated_series(&mut rng, 3);
        let last = *series.snapshots().last().unwrap();
        let extended = series
            .with_snapshot(Snapshot { time_days: last.time_days + gap, ..last })
            .unwrap();
        let a = effect_estimate(&series, series.last_index()).unwrap();
        let b = effect_estimate(&extended, extended.last_index()).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(reference_effect(&extended).unwrap(), b.y);
    }
}
