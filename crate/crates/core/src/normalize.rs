//! Reciprocal sigmoid rank normalization and multi-ranker fusion.
//!
//! The normalized similarity of `j` for query `i` is
//! `sigma(tau_i(j))^2 * sigma(tau_j(i))`, where `sigma` is a decreasing sigmoid
//! centred at `k/2`. When `i` is missing from the top-`L` of `j`, the
//! reciprocal position is taken as `L + 1`.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Result, RfeError};
use crate::rank::{RankedList, RankedListSet};
use crate::sparse::SparseScoreMatrix;

/// Steepness and centre of the rank sigmoid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmoidParams {
    pub alpha: f64,
    pub k: usize,
}

impl SigmoidParams {
    pub fn new(alpha: f64, k: usize) -> Result<Self> {
        let p = Self { alpha, k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(RfeError::config(format!(
                "sigmoid steepness alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.k < 2 {
            return Err(RfeError::config(format!(
                "neighborhood size k must be at least 2, got {}",
                self.k
            )));
        }
        Ok(())
    }
}

impl Default for SigmoidParams {
    fn default() -> Self {
        Self { alpha: 0.1, k: 20 }
    }
}

/// `1 - 1/(1 + exp(-alpha (position - k/2)))`, strictly decreasing in `position`.
pub fn sigmoid_weight(position: usize, params: SigmoidParams) -> f64 {
    let z = params.alpha * (position as f64 - params.k as f64 / 2.0);
    // Same value as the textbook form, without cancellation for large z.
    1.0 / (1.0 + z.exp())
}

/// Scores every top-`L` pair with the reciprocal sigmoid similarity and
/// re-sorts the lists by it.
pub fn normalize(
    lists: &RankedListSet,
    params: SigmoidParams,
) -> Result<(RankedListSet, SparseScoreMatrix)> {
    params.validate()?;
    crate::rank::check_k_fits(params.k, lists)?;
    let scores = normalized_scores(lists, params);
    let updated = lists.stable_resort(&scores)?;
    Ok((updated, scores))
}

fn normalized_scores(lists: &RankedListSet, params: SigmoidParams) -> SparseScoreMatrix {
    let positions = lists.positions();
    let missing = lists.depth() + 1;
    let rows = lists
        .lists()
        .par_iter()
        .map(|list| {
            let i = list.owner();
            let mut row: Vec<(usize, f64)> = list
                .ids()
                .enumerate()
                .map(|(p, j)| {
                    let direct = sigmoid_weight(p + 1, params);
                    let reciprocal = sigmoid_weight(positions.rank(j, i).unwrap_or(missing), params);
                    (j, direct * direct * reciprocal)
                })
                .filter(|&(_, v)| v > 0.0)
                .collect();
            row.sort_unstable_by_key(|&(c, _)| c);
            row
        })
        .collect();
    SparseScoreMatrix::from_sorted_rows(lists.n(), rows)
}

/// Normalizes each ranker independently and sums the scores into one matrix.
pub fn fused_scores(list_sets: &[RankedListSet], params: SigmoidParams) -> Result<SparseScoreMatrix> {
    let (first, rest) = list_sets
        .split_first()
        .ok_or_else(|| RfeError::input("rank fusion needs at least one ranker"))?;
    if let Some(bad) = rest.iter().find(|s| s.n() != first.n()) {
        return Err(RfeError::Dimension {
            expected: first.n(),
            found: bad.n(),
        });
    }
    let (_, mut fused) = normalize(first, params)?;
    for set in rest {
        let (_, scores) = normalize(set, params)?;
        fused.add_assign(&scores)?;
    }
    Ok(fused)
}

/// Ranks every object of each row of `scores` by descending score.
///
/// Ties are broken by the order of `reference`, then by object index. Lists
/// are truncated to the reference depth.
pub fn rank_by_scores(reference: &RankedListSet, scores: &SparseScoreMatrix) -> Result<RankedListSet> {
    if scores.n() != reference.n() {
        return Err(RfeError::Dimension {
            expected: reference.n(),
            found: scores.n(),
        });
    }
    let depth = reference.depth();
    let lists = reference
        .lists()
        .par_iter()
        .map(|list| {
            let q = list.owner();
            let in_reference: HashSet<usize> = list.ids().collect();
            let order = list
                .ids()
                .chain(scores.row(q).iter().map(|&(c, _)| c).filter(|c| !in_reference.contains(c)));
            let base = RankedList::from_parts(q, order.map(|id| (id, 0.0)).collect());
            let mut entries = base.resorted_by(|id| scores.get(q, id)).entries().to_vec();
            entries.truncate(depth);
            RankedList::from_parts(q, entries)
        })
        .collect();
    Ok(RankedListSet::from_parts(reference.n(), depth, lists))
}

/// Normalizes each ranker independently, sums the scores, and ranks every
/// object by the fused score.
///
/// Ties follow the first ranker's order; output depth is the first ranker's.
pub fn fuse_rankers(list_sets: &[RankedListSet], params: SigmoidParams) -> Result<RankedListSet> {
    let fused = fused_scores(list_sets, params)?;
    rank_by_scores(&list_sets[0], &fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn set(lists: Vec<Vec<usize>>, depth: usize) -> RankedListSet {
        let n = lists.len();
        let lists = lists
            .into_iter()
            .enumerate()
            .map(|(q, ids)| RankedList::new(q, ids.into_iter().map(|id| (id, 1.0)).collect()).unwrap())
            .collect();
        RankedListSet::new(n, depth, lists).unwrap()
    }

    fn p(alpha: f64, k: usize) -> SigmoidParams {
        SigmoidParams::new(alpha, k).unwrap()
    }

    #[test]
    fn sigmoid_midpoint_and_first_position() {
        assert_relative_eq!(sigmoid_weight(10, p(0.1, 20)), 0.5, epsilon = 1e-15);
        // 1 - 1/(1 + e^0.9)
        let expected = 1.0 - 1.0 / (1.0 + 0.9f64.exp());
        assert_relative_eq!(sigmoid_weight(1, p(0.1, 20)), expected, epsilon = 1e-15);
        assert_relative_eq!(sigmoid_weight(1, p(0.1, 20)), 0.7109, epsilon = 5e-5);
    }

    #[test]
    fn sigmoid_decays_toward_zero() {
        let params = p(0.1, 20);
        let mut prev = sigmoid_weight(1, params);
        for pos in 2..=200 {
            let v = sigmoid_weight(pos, params);
            assert!(v < prev && v > 0.0);
            prev = v;
        }
        assert!(prev < 1e-7);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SigmoidParams::new(0.0, 20).is_err());
        assert!(SigmoidParams::new(0.1, 1).is_err());
    }

    #[test]
    fn mutual_first_neighbors_get_cubed_weight() {
        // two objects that list each other first (no self entries)
        let s = set(vec![vec![1, 0], vec![0, 1]], 2);
        let (_, scores) = normalize(&s, p(0.1, 2)).unwrap();
        let w1 = sigmoid_weight(1, p(0.1, 2));
        assert_relative_eq!(scores.get(0, 1), w1.powi(3), epsilon = 1e-15);
    }

    #[test]
    fn mutual_first_value_for_default_params() {
        let mut lists = vec![vec![1, 0]; 1];
        lists.push(vec![0, 1]);
        for q in 2..20 {
            lists.push((0..20).cycle().skip(q).take(20).collect());
        }
        let s = set(lists, 20);
        let (_, scores) = normalize(&s, p(0.1, 20)).unwrap();
        assert_relative_eq!(scores.get(0, 1), 0.3593, epsilon = 1e-4);
    }

    #[test]
    fn missing_reciprocal_uses_depth_plus_one() {
        // 0 lists 2 at position 2 but 2 never lists 0
        let s = set(vec![vec![0, 2], vec![1, 0], vec![2, 1]], 2);
        let params = p(0.1, 2);
        let (_, scores) = normalize(&s, params).unwrap();
        let expected = sigmoid_weight(2, params).powi(2) * sigmoid_weight(3, params);
        assert_relative_eq!(scores.get(0, 2), expected, epsilon = 1e-15);
    }

    #[test]
    fn asymmetric_positions_give_asymmetric_scores() {
        let s = set(vec![vec![0, 1, 2], vec![1, 2, 0], vec![2, 0, 1]], 3);
        let (_, scores) = normalize(&s, p(0.5, 2)).unwrap();
        assert!((scores.get(0, 1) - scores.get(1, 0)).abs() > 1e-6);
    }

    #[test]
    fn k_above_depth_is_rejected() {
        let s = set(vec![vec![0, 1], vec![1, 0], vec![2, 0]], 2);
        assert!(normalize(&s, p(0.1, 3)).is_err());
        // lists covering the whole collection accept any k
        let s = set(vec![vec![0, 1], vec![1, 0]], 2);
        assert!(normalize(&s, p(0.1, 3)).is_ok());
    }

    #[test]
    fn single_ranker_fusion_matches_normalize() {
        let s = set(vec![vec![0, 2, 1, 3], vec![1, 3, 0, 2], vec![2, 0, 3, 1], vec![3, 1, 2, 0]], 4);
        let params = p(0.3, 2);
        let (norm, _) = normalize(&s, params).unwrap();
        let fused = fuse_rankers(std::slice::from_ref(&s), params).unwrap();
        for (a, b) in norm.lists().iter().zip(fused.lists()) {
            assert_eq!(a.ids().collect::<Vec<_>>(), b.ids().collect::<Vec<_>>());
        }
        let twice = fuse_rankers(&[s.clone(), s.clone()], params).unwrap();
        for (a, b) in fused.lists().iter().zip(twice.lists()) {
            assert_eq!(a.ids().collect::<Vec<_>>(), b.ids().collect::<Vec<_>>());
        }
    }

    #[test]
    fn fused_score_is_sum_of_ranker_scores() {
        // brute-force accumulation on four objects: (0,1) mutual-top in ranker one only
        let r1 = set(vec![vec![0, 1, 2, 3], vec![1, 0, 3, 2], vec![2, 3, 0, 1], vec![3, 2, 1, 0]], 4);
        let r2 = set(vec![vec![0, 2, 3, 1], vec![1, 3, 2, 0], vec![2, 1, 0, 3], vec![3, 0, 1, 2]], 4);
        let params = p(0.5, 2);
        let sig = |pos: usize| sigmoid_weight(pos, params);
        // ranker one: tau_0(1)=2, tau_1(0)=2; ranker two: tau_0(1)=4, tau_1(0)=4
        let expected = sig(2).powi(2) * sig(2) + sig(4).powi(2) * sig(4);
        let (_, s1) = normalize(&r1, params).unwrap();
        let (_, s2) = normalize(&r2, params).unwrap();
        assert_relative_eq!(s1.get(0, 1) + s2.get(0, 1), expected, epsilon = 1e-15);
        let fused = fuse_rankers(&[r1, r2], params).unwrap();
        let entry = fused.list(0).entries().iter().find(|e| e.0 == 1).unwrap();
        assert_relative_eq!(entry.1, expected, epsilon = 1e-15);
    }

    #[test]
    fn fusion_errors() {
        assert!(fuse_rankers(&[], SigmoidParams::default()).is_err());
        let a = set(vec![vec![0, 1], vec![1, 0]], 2);
        let b = set(vec![vec![0], vec![1], vec![2]], 2);
        assert!(matches!(
            fuse_rankers(&[a, b], p(0.1, 2)),
            Err(RfeError::Dimension { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sigmoid_strictly_decreasing(alpha in 0.01f64..2.0, k in 2usize..100, pos in 1usize..300) {
                let params = SigmoidParams { alpha, k };
                let a = sigmoid_weight(pos, params);
                let b = sigmoid_weight(pos + 1, params);
                // saturation at either end of f64 is the only allowed tie
                prop_assert!(a > b || (a == b && (a == 0.0 || a == 1.0)));
                prop_assert!((0.0..=1.0).contains(&a));
            }

            #[test]
            fn scores_in_unit_interval(seed in 0u64..500) {
                let n = 12;
                let perms = crate::synthetic::random_permutation_lists(n, n, seed);
                let (_, scores) = normalize(&perms, SigmoidParams { alpha: 0.3, k: 4 }).unwrap();
                for row in scores.rows() {
                    for &(_, v) in row {
                        prop_assert!(v > 0.0 && v < 1.0);
                    }
                }
            }

            #[test]
            fn fusion_ordering_is_scale_free(seed in 0u64..200, shift in -4i32..8) {
                let a = crate::synthetic::random_permutation_lists(10, 10, seed);
                let b = crate::synthetic::random_permutation_lists(10, 10, seed + 1000);
                let params = SigmoidParams { alpha: 0.2, k: 3 };
                let fused = fused_scores(&[a.clone(), b], params).unwrap();
                let once = rank_by_scores(&a, &fused).unwrap();
                let scaled = rank_by_scores(&a, &fused.scaled(2f64.powi(shift))).unwrap();
                for (x, y) in once.lists().iter().zip(scaled.lists()) {
                    prop_assert_eq!(x.ids().collect::<Vec<_>>(), y.ids().collect::<Vec<_>>());
                }
            }
        }
    }
}
