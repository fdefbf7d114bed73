//! Ranked lists, neighborhood sets, and stable re-sorting.
//!
//! Positions are 1-based throughout. In whole-collection protocols the owner
//! of a list sits at position 1.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Result, RfeError};
use crate::sparse::SparseScoreMatrix;

/// Truncation depth used when none is configured: `min(n, max(20k, 200))`.
pub fn default_depth(n: usize, k: usize) -> usize {
    n.min((20 * k).max(200))
}

/// Ordered top-`L` retrieval result for one object.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    owner: usize,
    entries: Vec<(usize, f64)>,
}

impl RankedList {
    /// Entries are taken as already ordered; only duplicates are checked.
    pub fn new(owner: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for &(id, score) in &entries {
            if !seen.insert(id) {
                return Err(RfeError::input(format!(
                    "ranked list of {owner}: object {id} appears twice"
                )));
            }
            if !score.is_finite() || score < 0.0 {
                return Err(RfeError::input(format!(
                    "ranked list of {owner}: score {score} for {id} is not finite and nonnegative"
                )));
            }
        }
        Ok(Self { owner, entries })
    }

    pub(crate) fn from_parts(owner: usize, entries: Vec<(usize, f64)>) -> Self {
        Self { owner, entries }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(id, _)| id)
    }

    /// 1-based position of `id`, by linear scan.
    pub fn position(&self, id: usize) -> Option<usize> {
        self.entries.iter().position(|&(x, _)| x == id).map(|p| p + 1)
    }

    /// Re-orders entries by `score(id)` descending, keeping the incoming order
    /// among equal scores.
    pub fn resorted_by(&self, mut score: impl FnMut(usize) -> f64) -> Self {
        let mut entries: Vec<(usize, f64)> =
            self.entries.iter().map(|&(id, _)| (id, score(id))).collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1));
        Self {
            owner: self.owner,
            entries,
        }
    }
}

/// The first `k` entries of one ranked list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborhoodSet {
    pub owner: usize,
    pub members: Vec<usize>,
}

/// One ranked list per object of an `n`-object collection.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedListSet {
    n: usize,
    depth: usize,
    lists: Vec<RankedList>,
}

impl RankedListSet {
    pub fn new(n: usize, depth: usize, lists: Vec<RankedList>) -> Result<Self> {
        if depth < 1 {
            return Err(RfeError::config("truncation depth L must be at least 1"));
        }
        if lists.len() != n {
            return Err(RfeError::Dimension {
                expected: n,
                found: lists.len(),
            });
        }
        for (q, list) in lists.iter().enumerate() {
            if list.owner != q {
                return Err(RfeError::input(format!(
                    "list {q} is owned by object {}",
                    list.owner
                )));
            }
            if list.len() > depth {
                return Err(RfeError::input(format!(
                    "list {q} has {} entries, more than depth {depth}",
                    list.len()
                )));
            }
            if let Some(&(id, _)) = list.entries.iter().find(|&&(id, _)| id >= n) {
                return Err(RfeError::input(format!(
                    "list {q} references object {id}, outside a collection of {n}"
                )));
            }
        }
        Ok(Self { n, depth, lists })
    }

    pub(crate) fn from_parts(n: usize, depth: usize, lists: Vec<RankedList>) -> Self {
        Self { n, depth, lists }
    }

    /// Builds lists from per-query `(object, distance)` rows.
    ///
    /// Each row is sorted by ascending distance (stable), with the query itself
    /// winning ties at distance zero, and truncated to `depth`. Stored scores
    /// are `1 / (1 + distance)`.
    pub fn from_distances(distances: &[Vec<(usize, f64)>], depth: usize) -> Result<Self> {
        if depth < 1 {
            return Err(RfeError::config("truncation depth L must be at least 1"));
        }
        let n = distances.len();
        let mut lists = Vec::with_capacity(n);
        for (q, row) in distances.iter().enumerate() {
            for &(id, d) in row {
                if d.is_nan() {
                    return Err(RfeError::input(format!(
                        "distance from {q} to {id} is NaN"
                    )));
                }
                if !d.is_finite() || d < 0.0 {
                    return Err(RfeError::input(format!(
                        "distance from {q} to {id} is {d}; expected finite and nonnegative"
                    )));
                }
            }
            let mut sorted = row.clone();
            sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then((a.0 != q).cmp(&(b.0 != q))));
            sorted.truncate(depth);
            let entries = sorted
                .into_iter()
                .map(|(id, d)| (id, 1.0 / (1.0 + d)))
                .collect();
            lists.push(RankedList::new(q, entries)?);
        }
        Self::new(n, depth, lists)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn lists(&self) -> &[RankedList] {
        &self.lists
    }

    pub fn list(&self, q: usize) -> &RankedList {
        &self.lists[q]
    }

    /// Re-sorts every list by `scores` row-wise, stable on the incoming order.
    ///
    /// Membership never changes; absent scores count as zero, so unscored
    /// objects keep their relative order after every positively scored one.
    pub fn stable_resort(&self, scores: &SparseScoreMatrix) -> Result<Self> {
        if scores.n() != self.n {
            return Err(RfeError::Dimension {
                expected: self.n,
                found: scores.n(),
            });
        }
        let lists = self
            .lists
            .par_iter()
            .map(|list| {
                let row = scores.row(list.owner);
                list.resorted_by(|id| match row.binary_search_by_key(&id, |&(c, _)| c) {
                    Ok(p) => row[p].1,
                    Err(_) => 0.0,
                })
            })
            .collect();
        Ok(Self::from_parts(self.n, self.depth, lists))
    }

    /// First `min(k, |list|)` members of the list of `q`.
    pub fn neighborhood(&self, q: usize, k: usize) -> Result<NeighborhoodSet> {
        check_neighborhood_size(k, self.depth)?;
        let list = self
            .lists
            .get(q)
            .ok_or_else(|| RfeError::input(format!("object {q} outside a collection of {}", self.n)))?;
        Ok(NeighborhoodSet {
            owner: q,
            members: list.ids().take(k).collect(),
        })
    }

    /// Truncates every list to at most `depth` entries.
    pub fn truncated(&self, depth: usize) -> Result<Self> {
        if depth < 1 {
            return Err(RfeError::config("truncation depth L must be at least 1"));
        }
        let lists = self
            .lists
            .iter()
            .map(|l| RankedList::from_parts(l.owner, l.entries[..l.len().min(depth)].to_vec()))
            .collect();
        Ok(Self::from_parts(self.n, depth.min(self.depth), lists))
    }

    /// Appends, per list, the entries of `full` that are not already present,
    /// in `full`'s order. Appended entries carry score zero.
    ///
    /// Used to evaluate a re-ranked top-`L` head over the whole collection.
    pub fn with_tail(&self, full: &RankedListSet) -> Result<Self> {
        if full.n != self.n {
            return Err(RfeError::Dimension {
                expected: self.n,
                found: full.n,
            });
        }
        let lists: Vec<RankedList> = self
            .lists
            .iter()
            .zip(&full.lists)
            .map(|(head, tail)| {
                let present: HashSet<usize> = head.ids().collect();
                let mut entries = head.entries.clone();
                entries.extend(
                    tail.ids()
                        .filter(|id| !present.contains(id))
                        .map(|id| (id, 0.0)),
                );
                RankedList::from_parts(head.owner, entries)
            })
            .collect();
        let depth = lists.iter().map(RankedList::len).max().unwrap_or(1).max(self.depth);
        Ok(Self::from_parts(self.n, depth, lists))
    }

    /// Lookup table of 1-based positions.
    pub fn positions(&self) -> PositionIndex {
        let rows = self
            .lists
            .iter()
            .map(|l| {
                let mut row: Vec<(usize, usize)> =
                    l.ids().enumerate().map(|(p, id)| (id, p + 1)).collect();
                row.sort_unstable();
                row
            })
            .collect();
        PositionIndex { rows }
    }
}

pub(crate) fn check_neighborhood_size(k: usize, depth: usize) -> Result<()> {
    if k < 1 {
        return Err(RfeError::config("neighborhood size k must be at least 1"));
    }
    if k > depth {
        return Err(RfeError::config(format!(
            "neighborhood size k={k} exceeds truncation depth L={depth}"
        )));
    }
    Ok(())
}

/// Neighborhood size against a list set: `k` may exceed the depth only when
/// the lists already cover the whole collection.
pub(crate) fn check_k_fits(k: usize, lists: &RankedListSet) -> Result<()> {
    if k > lists.depth() && lists.depth() < lists.n() {
        return Err(RfeError::config(format!(
            "neighborhood size k={k} exceeds truncation depth L={}",
            lists.depth()
        )));
    }
    Ok(())
}

/// Per-list `(object, position)` pairs sorted by object for `O(log L)` rank lookups.
#[derive(Clone, Debug)]
pub struct PositionIndex {
    rows: Vec<Vec<(usize, usize)>>,
}

impl PositionIndex {
    /// 1-based position of `id` in the list of `q`, if present.
    pub fn rank(&self, q: usize, id: usize) -> Option<usize> {
        let row = &self.rows[q];
        row.binary_search_by_key(&id, |&(x, _)| x)
            .ok()
            .map(|p| row[p].1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(lists: Vec<Vec<usize>>) -> RankedListSet {
        let n = lists.len();
        let depth = lists.iter().map(Vec::len).max().unwrap();
        let lists = lists
            .into_iter()
            .enumerate()
            .map(|(q, ids)| {
                let len = ids.len();
                RankedList::new(q, ids.into_iter().enumerate().map(|(p, id)| (id, (len - p) as f64)).collect())
                    .unwrap()
            })
            .collect();
        RankedListSet::new(n, depth, lists).unwrap()
    }

    #[test]
    fn self_distance_zero_ranks_first_and_truncates() {
        let d = vec![
            vec![(0, 0.0), (1, 1.0), (2, 2.0)],
            vec![(0, 1.0), (1, 0.0), (2, 1.5)],
            vec![(0, 2.0), (1, 1.5), (2, 0.0)],
        ];
        let s = RankedListSet::from_distances(&d, 2).unwrap();
        assert_eq!(s.list(0).ids().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(s.list(2).ids().collect::<Vec<_>>(), vec![2, 1]);
    }

    #[test]
    fn equal_distances_keep_input_order() {
        let d = vec![
            vec![(0, 0.0), (2, 1.0), (1, 1.0)],
            vec![(1, 0.0), (0, 1.0), (2, 1.0)],
            vec![(2, 0.0), (0, 1.0), (1, 1.0)],
        ];
        let s = RankedListSet::from_distances(&d, 3).unwrap();
        assert_eq!(s.list(0).ids().collect::<Vec<_>>(), vec![0, 2, 1]);
    }

    #[test]
    fn self_wins_ties_at_zero_distance() {
        let d = vec![vec![(1, 0.0), (0, 0.0)], vec![(0, 0.0), (1, 0.0)]];
        let s = RankedListSet::from_distances(&d, 2).unwrap();
        assert_eq!(s.list(0).ids().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(s.list(1).ids().collect::<Vec<_>>(), vec![1, 0]);
    }

    #[test]
    fn truncation_to_depth() {
        let d: Vec<Vec<(usize, f64)>> = (0..5)
            .map(|q| (0..5).map(|i| (i, (i as f64 - q as f64).abs())).collect())
            .collect();
        let s = RankedListSet::from_distances(&d, 3).unwrap();
        assert!(s.lists().iter().all(|l| l.len() == 3));
    }

    #[test]
    fn nan_distance_and_zero_depth_rejected() {
        let d = vec![vec![(0, 0.0), (1, f64::NAN)], vec![(1, 0.0)]];
        assert!(matches!(RankedListSet::from_distances(&d, 2), Err(RfeError::Input(_))));
        let d = vec![vec![(0, 0.0)]];
        assert!(matches!(RankedListSet::from_distances(&d, 0), Err(RfeError::Config(_))));
    }

    #[test]
    fn resort_by_scores() {
        // objects a=1, b=2, c=3 in list of owner 0
        let s = set(vec![vec![1, 2, 3], vec![1], vec![2], vec![3]]);
        let scores =
            SparseScoreMatrix::from_rows(4, vec![vec![(2, 2.0), (1, 1.0)], vec![], vec![], vec![]]).unwrap();
        let r = s.stable_resort(&scores).unwrap();
        assert_eq!(r.list(0).ids().collect::<Vec<_>>(), vec![2, 1, 3]);
    }

    #[test]
    fn resort_equal_scores_is_identity() {
        let s = set(vec![vec![1, 2, 3], vec![1], vec![2], vec![3]]);
        let scores = SparseScoreMatrix::from_rows(
            4,
            vec![vec![(1, 1.0), (2, 1.0), (3, 1.0)], vec![], vec![], vec![]],
        )
        .unwrap();
        let r = s.stable_resort(&scores).unwrap();
        assert_eq!(r.list(0).ids().collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn resort_unscored_follow_scored_in_prior_order() {
        let s = set(vec![vec![1, 2, 3], vec![1], vec![2], vec![3]]);
        let scores = SparseScoreMatrix::from_rows(4, vec![vec![(3, 1.0)], vec![], vec![], vec![]]).unwrap();
        let r = s.stable_resort(&scores).unwrap();
        assert_eq!(r.list(0).ids().collect::<Vec<_>>(), vec![3, 1, 2]);
    }

    #[test]
    fn resort_dimension_mismatch() {
        let s = set(vec![vec![0], vec![1]]);
        assert!(s.stable_resort(&SparseScoreMatrix::empty(3)).is_err());
    }

    #[test]
    fn neighborhoods() {
        let s = set(vec![vec![0, 1, 2, 3], vec![1, 0], vec![2], vec![3]]);
        assert_eq!(s.neighborhood(0, 2).unwrap().members, vec![0, 1]);
        assert_eq!(s.neighborhood(0, 4).unwrap().members, vec![0, 1, 2, 3]);
        assert_eq!(s.neighborhood(0, 1).unwrap().members, vec![0]);
        assert_eq!(s.neighborhood(1, 4).unwrap().members, vec![1, 0]);
        assert!(matches!(s.neighborhood(0, 5), Err(RfeError::Config(_))));
    }

    #[test]
    fn tail_appends_missing_in_full_order() {
        let head = set(vec![vec![0, 2], vec![1, 0], vec![2, 1]]).truncated(2).unwrap();
        let full = set(vec![vec![0, 1, 2], vec![1, 2, 0], vec![2, 0, 1]]);
        let t = head.with_tail(&full).unwrap();
        assert_eq!(t.list(0).ids().collect::<Vec<_>>(), vec![0, 2, 1]);
        assert_eq!(t.list(1).ids().collect::<Vec<_>>(), vec![1, 0, 2]);
    }

    #[test]
    fn position_lookup() {
        let s = set(vec![vec![0, 2, 1], vec![1], vec![2]]);
        let p = s.positions();
        assert_eq!(p.rank(0, 2), Some(2));
        assert_eq!(p.rank(0, 1), Some(3));
        assert_eq!(p.rank(1, 0), None);
    }

    #[test]
    fn default_depth_rule() {
        assert_eq!(default_depth(1000, 20), 400);
        assert_eq!(default_depth(1000, 5), 200);
        assert_eq!(default_depth(50, 5), 50);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_set() -> impl Strategy<Value = (RankedListSet, SparseScoreMatrix)> {
            (2usize..12).prop_flat_map(|n| {
                let perms = proptest::collection::vec(Just((0..n).collect::<Vec<_>>()).prop_shuffle(), n);
                let scores = proptest::collection::vec(
                    proptest::collection::vec((0..n, 0u8..4), 0..n),
                    n,
                );
                (Just(n), perms, scores)
            })
            .prop_map(|(n, perms, scores)| {
                let lists = perms
                    .into_iter()
                    .enumerate()
                    .map(|(q, p)| RankedList::from_parts(q, p.into_iter().map(|id| (id, 1.0)).collect()))
                    .collect();
                let rows = scores
                    .into_iter()
                    .map(|r| {
                        let mut r: Vec<(usize, f64)> = r.into_iter().map(|(c, v)| (c, v as f64)).collect();
                        r.sort_by_key(|&(c, _)| c);
                        r.dedup_by_key(|e| e.0);
                        r
                    })
                    .collect();
                (
                    RankedListSet::from_parts(n, n, lists),
                    SparseScoreMatrix::from_rows(n, rows).unwrap(),
                )
            })
        }

        proptest! {
            #[test]
            fn empty_scores_are_identity_on_order((s, _) in arb_set()) {
                let r = s.stable_resort(&SparseScoreMatrix::empty(s.n())).unwrap();
                for (a, b) in s.lists().iter().zip(r.lists()) {
                    prop_assert_eq!(a.ids().collect::<Vec<_>>(), b.ids().collect::<Vec<_>>());
                }
            }

            #[test]
            fn resort_is_a_permutation((s, scores) in arb_set()) {
                let r = s.stable_resort(&scores).unwrap();
                for (a, b) in s.lists().iter().zip(r.lists()) {
                    let mut x: Vec<_> = a.ids().collect();
                    let mut y: Vec<_> = b.ids().collect();
                    x.sort_unstable();
                    y.sort_unstable();
                    prop_assert_eq!(x, y);
                }
                prop_assert_eq!(r.clone(), s.stable_resort(&scores).unwrap());
            }
        }
    }
}
