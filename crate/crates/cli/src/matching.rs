//! Assignment of estimated mixture components to true ones.

use anyhow::Result;
use itertools::Itertools;
use mixlab_core::DVector;

use crate::UsageError;

pub const MAX_COMPONENTS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    /// `(estimated, true)` index pairs, ordered by estimated index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_estimated: Vec<usize>,
    pub unmatched_true: Vec<usize>,
}

/// Pairs `min(K̂, K)` components so the summed Euclidean distance between
/// matched means is smallest. Exhaustive over permutations; the first
/// minimiser in lexicographic order wins ties.
pub fn match_components(estimated: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<Matching> {
    let (ke, kt) = (estimated.len(), truth.len());
    if ke.max(kt) > MAX_COMPONENTS {
        return Err(UsageError(format!(
            "matching supports at most {MAX_COMPONENTS} components, got {ke} and {kt}"
        ))
        .into());
    }
    let dist = |e: usize, t: usize| (&estimated[e] - &truth[t]).norm();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut best = f64::INFINITY;
    if ke <= kt {
        for perm in (0..kt).permutations(ke) {
            let cost: f64 = perm.iter().enumerate().map(|(e, &t)| dist(e, t)).sum();
            if cost < best {
                best = cost;
                pairs = perm.into_iter().enumerate().collect();
            }
        }
    } else {
        for perm in (0..ke).permutations(kt) {
            let cost: f64 = perm.iter().enumerate().map(|(t, &e)| dist(e, t)).sum();
            if cost < best {
                best = cost;
                pairs = perm.into_iter().enumerate().map(|(t, e)| (e, t)).collect();
            }
        }
        pairs.sort_unstable();
    }
    let unmatched_estimated = (0..ke).filter(|e| pairs.iter().all(|p| p.0 != *e)).collect();
    let unmatched_true = (0..kt).filter(|t| pairs.iter().all(|p| p.1 != *t)).collect();
    Ok(Matching {
        pairs,
        unmatched_estimated,
        unmatched_true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[[f64; 2]]) -> Vec<DVector<f64>> {
        v.iter().map(|p| DVector::from_column_slice(p)).collect()
    }

    #[test]
    fn recovers_a_permutation() {
        let truth = pts(&[[0.0, 2.0], [3.0, 1.0], [6.0, 3.0]]);
        let est = pts(&[[6.1, 3.0], [0.0, 1.9], [2.9, 1.1]]);
        let m = match_components(&est, &truth).unwrap();
        assert_eq!(m.pairs, vec![(0, 2), (1, 0), (2, 1)]);
        assert!(m.unmatched_estimated.is_empty() && m.unmatched_true.is_empty());
    }

    #[test]
    fn greedy_choice_is_not_optimal_here() {
        // nearest-first would pair e0 with t0 and leave e1 far from t1
        let truth = pts(&[[0.0, 0.0], [2.0, 0.0]]);
        let est = pts(&[[1.0, 0.0], [-0.9, 0.0]]);
        let m = match_components(&est, &truth).unwrap();
        assert_eq!(m.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn surplus_components_are_listed() {
        let truth = pts(&[[0.0, 2.0], [3.0, 1.0], [6.0, 3.0]]);
        let est = pts(&[[6.0, 3.0], [1.9, 1.4]]);
        let m = match_components(&est, &truth).unwrap();
        assert_eq!(m.pairs, vec![(0, 2), (1, 1)]);
        assert_eq!(m.unmatched_true, vec![0]);

        let m = match_components(&truth, &est).unwrap();
        assert_eq!(m.pairs, vec![(1, 1), (2, 0)]);
        assert_eq!(m.unmatched_estimated, vec![0]);
    }

    #[test]
    fn too_many_components() {
        let many = pts(&[[0.0, 0.0]; 7]);
        assert!(match_components(&many, &many[..2]).is_err());
    }
}
