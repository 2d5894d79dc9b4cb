use crate::error::{Error, Result};

/// Half-width of the Sakoe–Chiba band for sequences of length `len`:
/// `ceil(alpha * len)`, capped at `len`.
pub fn band_width(len: usize, band_fraction: f64) -> usize {
    let w = (band_fraction * len as f64 - 1e-9).ceil();
    if w <= 0.0 {
        0
    } else {
        (w as usize).min(len)
    }
}

/// Banded dynamic time warping with squared pointwise cost.
///
/// Minimum cumulative cost over monotone warping paths built from diagonal,
/// horizontal and vertical unit steps whose cells satisfy `|m - n| <= w`,
/// `w = ceil(alpha * L)`. With `alpha = 0` only the diagonal is admissible.
pub fn dtw_distance(a: &[f64], b: &[f64], band_fraction: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "dtw: sequence lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Validation("dtw: empty sequences".into()));
    }
    if !(0.0..=1.0).contains(&band_fraction) {
        return Err(Error::Config(format!(
            "dtw: band fraction {band_fraction} outside [0, 1]"
        )));
    }
    let n = a.len();
    let w = band_width(n, band_fraction);
    Ok(banded_cost(a, b, w))
}

fn banded_cost(a: &[f64], b: &[f64], w: usize) -> f64 {
    let n = a.len();
    let mut prev = vec![f64::INFINITY; n + 1];
    let mut curr = vec![f64::INFINITY; n + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        let lo = i.saturating_sub(w).max(1);
        let hi = (i + w).min(n);
        // Everything left of the band must read as unreachable; cells right
        // of `hi` were never written in this buffer.
        curr[lo - 1] = f64::INFINITY;
        let ai = a[i - 1];
        for j in lo..=hi {
            let d = ai - b[j - 1];
            let best = prev[j - 1].min(prev[j]).min(curr[j - 1]);
            curr[j] = d * d + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[n]
}
