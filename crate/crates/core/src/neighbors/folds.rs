use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{purpose, stream};

/// Within-experiment fold labels for units of data.
///
/// Units of experiment `e` are numbered `0..units[e]` and dealt round-robin
/// starting at `offsets[e]`, so unit `u` lands in fold `(offsets[e] + u) % k`.
/// Experiments are sorted by size and grouped into strata of `k`; within a
/// stratum the starting offsets are a seeded permutation of `0..k`, which
/// spreads the extra units of uneven experiments over different folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    k: usize,
    seed: u64,
    offsets: Vec<usize>,
    units: Vec<u64>,
}

/// `experiments` holds `(id, unit count)` pairs; the assignment is indexed
/// in the same order.
pub fn assign_folds(experiments: &[(&str, u64)], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if let Some((id, n)) = experiments.iter().find(|(_, n)| (*n as u128) < k as u128) {
        return Err(Error::InsufficientData(format!(
            "experiment {id} has {n} units, fewer than the {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..experiments.len()).collect();
    order.sort_by(|&a, &b| {
        experiments[a]
            .1
            .cmp(&experiments[b].1)
            .then_with(|| experiments[a].0.cmp(experiments[b].0))
    });
    let mut offsets = vec![0; experiments.len()];
    for (s, stratum) in order.chunks(k).enumerate() {
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut stream(seed, &[purpose::FOLDS, s as u64]));
        for (&e, &o) in stratum.iter().zip(&perm) {
            offsets[e] = o;
        }
    }
    Ok(FoldAssignment {
        k,
        seed,
        offsets,
        units: experiments.iter().map(|e| e.1).collect(),
    })
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn fold_of(&self, experiment: usize, unit: u64) -> usize {
        ((self.offsets[experiment] as u64 + unit) % self.k as u64) as usize
    }

    /// Fold counts among units `start..start + len` of an experiment.
    pub fn range_counts(&self, experiment: usize, start: u64, len: u64) -> Vec<u64> {
        let k = self.k as u64;
        let mut counts = vec![len / k; self.k];
        let first = self.fold_of(experiment, start);
        for i in 0..(len % k) as usize {
            counts[(first + i) % self.k] += 1;
        }
        counts
    }

    pub fn fold_sizes(&self, experiment: usize) -> Vec<u64> {
        self.range_counts(experiment, 0, self.units[experiment])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_sizes() {
        let a = assign_folds(&[("a", 10)], 5, 1).unwrap();
        assert_eq!(a.fold_sizes(0), vec![2; 5]);
        let a = assign_folds(&[("a", 11)], 5, 1).unwrap();
        let mut sizes = a.fold_sizes(0);
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn range_counts_match_unit_labels() {
        let exps = [("a", 37), ("b", 23), ("c", 23)];
        let a = assign_folds(&exps, 4, 9).unwrap();
        for e in 0..3 {
            for (start, len) in [(0, 5), (3, 11), (7, 0), (2, 21)] {
                let mut direct = vec![0; 4];
                for u in start..start + len {
                    direct[a.fold_of(e, u)] += 1;
                }
                assert_eq!(a.range_counts(e, start, len), direct);
            }
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let exps: Vec<(String, u64)> = (0..12).map(|i| (format!("e{i}"), 50 + i)).collect();
        let refs: Vec<(&str, u64)> = exps.iter().map(|(s, n)| (s.as_str(), *n)).collect();
        let a = assign_folds(&refs, 5, 3).unwrap();
        assert_eq!(a, assign_folds(&refs, 5, 3).unwrap());
        let differs = (4..40).any(|s| assign_folds(&refs, 5, s).unwrap().offsets != a.offsets);
        assert!(differs);
    }

    #[test]
    fn strata_use_distinct_offsets() {
        let exps: Vec<(String, u64)> = (0..10).map(|i| (format!("e{i}"), 100 + i)).collect();
        let refs: Vec<(&str, u64)> = exps.iter().map(|(s, n)| (s.as_str(), *n)).collect();
        let a = assign_folds(&refs, 5, 11).unwrap();
        let mut first: Vec<usize> = a.offsets[..5].to_vec();
        first.sort_unstable();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn errors() {
        assert!(matches!(assign_folds(&[("a", 10)], 1, 0), Err(Error::Config(_))));
        let err = assign_folds(&[("a", 10), ("tiny", 3)], 5, 0).unwrap_err();
        assert!(err.to_string().contains("tiny"));
    }
}
