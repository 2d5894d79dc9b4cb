use serde::{Deserialize, Serialize};

/// Count, mean and sum of squared deviations of a sample.
///
/// Two `Moments` merge exactly (up to rounding) into the moments of the
/// pooled sample, which is what lets snapshot statistics be differenced and
/// fold statistics be re-aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub count: f64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub const EMPTY: Moments = Moments {
        count: 0.0,
        mean: 0.0,
        m2: 0.0,
    };

    /// From a count, a mean and an unbiased (n - 1 denominator) variance.
    pub fn from_sample(count: f64, mean: f64, variance: f64) -> Self {
        if count <= 0.0 {
            return Self::EMPTY;
        }
        Moments {
            count,
            mean,
            m2: variance * (count - 1.0).max(0.0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count <= 0.0
    }

    /// Unbiased sample variance; `None` below two observations.
    pub fn variance(&self) -> Option<f64> {
        (self.count >= 2.0).then(|| self.m2 / (self.count - 1.0))
    }

    pub fn sum(&self) -> f64 {
        self.count * self.mean
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if other.is_empty() {
            return *self;
        }
        if self.is_empty() {
            return *other;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count / count;
        let m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / count;
        Moments { count, mean, m2 }
    }

    /// Inverse of [`merge`](Self::merge): the moments of the observations in
    /// `self` that are not in `part`. A negative reconstructed `m2` is clamped
    /// to zero and reported through the returned flag.
    pub fn remove(&self, part: &Moments) -> (Moments, bool) {
        let count = self.count - part.count;
        if count <= 0.0 {
            return (Moments::EMPTY, false);
        }
        if part.is_empty() {
            return (*self, false);
        }
        let mean = (self.sum() - part.sum()) / count;
        let delta = mean - part.mean;
        let m2 = self.m2 - part.m2 - delta * delta * part.count * count / self.count;
        if m2 < 0.0 {
            (Moments { count, mean, m2: 0.0 }, true)
        } else {
            (Moments { count, mean, m2 }, false)
        }
    }

    pub fn merge_all<'a>(items: impl IntoIterator<Item = &'a Moments>) -> Moments {
        items
            .into_iter()
            .fold(Moments::EMPTY, |acc, m| acc.merge(m))
    }
}
