//! Brute-force oracles shared by the integration tests. None of them call
//! into the library routines they are used to check.
#![allow(dead_code)]

use localeb::eb::MixturePriorSpec;

/// Unbanded DTW with squared cost, filled as a full (n+1) x (m+1) table.
pub fn dtw_full_table(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let mut t = vec![vec![f64::INFINITY; m + 1]; n + 1];
    t[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let d = a[i - 1] - b[j - 1];
            t[i][j] = d * d + t[i - 1][j - 1].min(t[i - 1][j]).min(t[i][j - 1]);
        }
    }
    t[n][m]
}

/// Minimum cost over every monotone warping path from (0, 0) to
/// (n-1, m-1) whose cells satisfy `|i - j| <= band`, found by enumerating
/// the paths one by one.
pub fn dtw_enumerated(a: &[f64], b: &[f64], band: usize) -> f64 {
    fn walk(a: &[f64], b: &[f64], band: usize, i: usize, j: usize, acc: f64, best: &mut f64) {
        if i.abs_diff(j) > band {
            return;
        }
        let d = a[i] - b[j];
        let acc = acc + d * d;
        if i == a.len() - 1 && j == b.len() - 1 {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, band, i + 1, j + 1, acc, best);
        }
        if i + 1 < a.len() {
            walk(a, b, band, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, band, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, band, 0, 0, 0.0, &mut best);
    best
}

/// Restricted log-likelihood of `y_j ~ N(mu, tau2 + v_j)` with `mu`
/// profiled out, up to an additive constant.
pub fn restricted_loglik(pairs: &[(f64, f64)], tau2: f64) -> f64 {
    let w: Vec<f64> = pairs.iter().map(|&(_, v)| 1.0 / (tau2 + v)).collect();
    let sw: f64 = w.iter().sum();
    let mu = pairs.iter().zip(&w).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let log_det: f64 = w.iter().map(|w| -w.ln()).sum();
    let rss: f64 = pairs.iter().zip(&w).map(|(p, w)| w * (p.0 - mu).powi(2)).sum();
    -0.5 * (log_det + sw.ln() + rss)
}

pub fn precision_weighted_mean(pairs: &[(f64, f64)], tau2: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &(y, v) in pairs {
        num += y / (tau2 + v);
        den += 1.0 / (tau2 + v);
    }
    num / den
}

/// REML estimate by grid search: a 4001-point grid over a generous range,
/// then repeated zooms onto the best cell until the step is below 1e-9.
pub fn reml_grid_oracle(pairs: &[(f64, f64)]) -> (f64, f64) {
    let mean = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let spread = pairs.iter().map(|p| (p.0 - mean).powi(2)).fold(0.0, f64::max);
    let vmax = pairs.iter().map(|p| p.1).fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, 20.0 * (spread + vmax));
    let mut points = 4001;
    loop {
        let step = (hi - lo) / (points - 1) as f64;
        let best = (0..points)
            .map(|i| lo + step * i as f64)
            .map(|t| (t, restricted_loglik(pairs, t)))
            .fold((lo, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        if step < 1e-9 {
            return (precision_weighted_mean(pairs, best.0), best.0);
        }
        lo = (best.0 - 2.0 * step).max(0.0);
        hi = best.0 + 2.0 * step;
        points = 201;
    }
}

/// `Var(E[mu_z | X])` by enumerating the joint law of `(z, X)` under the
/// reveal channel: `P(X = x | z) = p 1[x = z] + (1 - p) pi_x`.
pub fn local_center_variance(spec: &MixturePriorSpec) -> f64 {
    let p = spec.feature_informativeness;
    let k = spec.types.len();
    let pi: Vec<f64> = spec.types.iter().map(|t| t.weight).collect();
    let mu: Vec<f64> = spec.types.iter().map(|t| t.mean).collect();
    let joint = |z: usize, x: usize| pi[z] * (if x == z { p } else { 0.0 } + (1.0 - p) * pi[x]);
    let mut centers = Vec::with_capacity(k);
    let mut px = Vec::with_capacity(k);
    for x in 0..k {
        let mass: f64 = (0..k).map(|z| joint(z, x)).sum();
        let center = if mass > 0.0 {
            (0..k).map(|z| joint(z, x) * mu[z]).sum::<f64>() / mass
        } else {
            0.0
        };
        centers.push(center);
        px.push(mass);
    }
    let m: f64 = (0..k).map(|x| px[x] * centers[x]).sum();
    (0..k).map(|x| px[x] * (centers[x] - m).powi(2)).sum()
}

/// `c0 = (v_min / (tau2_max + v_max))^2` with one common sampling variance.
pub fn gap_constant(spec: &MixturePriorSpec, v: f64) -> f64 {
    let tau2_max = spec.types.iter().map(|t| t.variance).fold(0.0, f64::max);
    (v / (tau2_max + v)).powi(2)
}
