//! Rank-based hypergraph, h-embeddings, and the iterative affinity re-ranking.
//!
//! Every object `i` owns a hyperedge holding its `k` nearest neighbors and
//! their `k` nearest neighbors. Membership scores combine the log-position
//! weight of each hop; squaring the incidence matrix filters out members that
//! other hyperedges do not corroborate. Rows of that square are the
//! h-embeddings.

use rayon::prelude::*;

use crate::error::{Result, RfeError};
use crate::rank::{RankedList, RankedListSet};
use crate::sparse::{Accumulator, Scatter, SparseScoreMatrix};

/// Output of one hypergraph construction over a set of ranked lists.
#[derive(Clone, Debug, PartialEq)]
pub struct HypergraphState {
    /// Incidence scores, one row per hyperedge.
    pub incidence: SparseScoreMatrix,
    /// Filtered incidence (incidence squared); row `i` is the h-embedding of `i`.
    pub embeddings: SparseScoreMatrix,
    /// Hyperedge confidence: sum of the `k` largest h-embedding values.
    pub edge_weights: Vec<f64>,
    pub k: usize,
}

impl HypergraphState {
    pub fn n(&self) -> usize {
        self.edge_weights.len()
    }
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(RfeError::config(format!(
            "hypergraph neighborhood size k must be at least 2, got {k}"
        )));
    }
    Ok(())
}

/// `1 - log_k(rank)`: 1 at the first position, 0 at position `k`.
pub fn position_weight(rank: usize, k: usize) -> Result<f64> {
    check_k(k)?;
    if rank < 1 || rank > k {
        return Err(RfeError::input(format!("rank {rank} outside 1..={k}")));
    }
    Ok(1.0 - (rank as f64).ln() / (k as f64).ln())
}

/// Position weights for ranks `1..=k`, indexed from zero.
pub(crate) fn position_weights(k: usize) -> Result<Vec<f64>> {
    (1..=k).map(|r| position_weight(r, k)).collect()
}

/// Hyperedge membership scores.
///
/// Row `i` sums `w(i, x) * w(x, j)` over every neighbor `x` among the first
/// `k` of list `i` that lists `j` among its own first `k`.
pub fn build_incidence(lists: &RankedListSet, k: usize) -> Result<SparseScoreMatrix> {
    check_k(k)?;
    crate::rank::check_k_fits(k, lists)?;
    let weights = position_weights(k)?;
    let n = lists.n();
    let rows = lists
        .lists()
        .par_iter()
        .map_init(
            || Accumulator::new(n),
            |acc, list| {
                incidence_row(list, lists, &weights, acc);
                acc.drain_sorted()
            },
        )
        .collect();
    Ok(SparseScoreMatrix::from_sorted_rows(n, rows))
}

/// Accumulates one incidence row for `list` (which need not belong to `lists`).
pub(crate) fn incidence_row(
    list: &RankedList,
    lists: &RankedListSet,
    weights: &[f64],
    acc: &mut Accumulator,
) {
    let k = weights.len();
    for (wx, x) in weights.iter().zip(list.ids()) {
        if *wx == 0.0 {
            continue;
        }
        for (wj, j) in weights.iter().zip(lists.list(x).ids().take(k)) {
            acc.add(j, wx * wj);
        }
    }
}

/// h-embeddings: the incidence matrix multiplied by itself.
pub fn filter_incidence(incidence: &SparseScoreMatrix) -> SparseScoreMatrix {
    incidence
        .matmul(incidence)
        .expect("square matrix times itself")
}

/// Sum of the `k` largest values of each row.
///
/// Which of several tied values is picked at the cutoff does not change the
/// sum, so no tie-breaking order is needed.
pub fn hyperedge_weights(embeddings: &SparseScoreMatrix, k: usize) -> Vec<f64> {
    embeddings
        .rows()
        .par_iter()
        .map(|row| {
            let mut values: Vec<f64> = row.iter().map(|&(_, v)| v).collect();
            values.sort_by(|a, b| b.total_cmp(a));
            values.iter().take(k).sum()
        })
        .collect()
}

/// Builds the hypergraph, its h-embeddings, and the hyperedge weights.
pub fn build_hypergraph(lists: &RankedListSet, k: usize) -> Result<HypergraphState> {
    let incidence = build_incidence(lists, k)?;
    let embeddings = filter_incidence(&incidence);
    let edge_weights = hyperedge_weights(&embeddings, k);
    Ok(HypergraphState {
        incidence,
        embeddings,
        edge_weights,
        k,
    })
}

/// Full affinity `H * H^T`; only pairs sharing a column are stored.
pub fn affinity(embeddings: &SparseScoreMatrix) -> SparseScoreMatrix {
    let n = embeddings.n();
    let transposed = embeddings.transpose();
    let rows = (0..n)
        .into_par_iter()
        .map_init(
            || (Scatter::new(n), vec![false; n]),
            |(scatter, seen), i| {
                let hi = embeddings.row(i);
                let mut partners = Vec::new();
                for &(c, _) in hi {
                    for &(j, _) in transposed.row(c) {
                        if !seen[j] {
                            seen[j] = true;
                            partners.push(j);
                        }
                    }
                }
                partners.sort_unstable();
                scatter.load(hi);
                let row = partners
                    .iter()
                    .map(|&j| {
                        seen[j] = false;
                        (j, scatter.dot(embeddings.row(j)))
                    })
                    .filter(|&(_, v)| v > 0.0)
                    .collect();
                scatter.clear(hi);
                row
            },
        )
        .collect();
    SparseScoreMatrix::from_sorted_rows(n, rows)
}

/// Affinity-over-rank scores `a_ij / tau_i(j)` for every `j` in the list of `i`.
pub fn affinity_scores(embeddings: &SparseScoreMatrix, lists: &RankedListSet) -> SparseScoreMatrix {
    let n = lists.n();
    let rows = lists
        .lists()
        .par_iter()
        .map_init(
            || Scatter::new(n),
            |scatter, list| {
                let hi = embeddings.row(list.owner());
                scatter.load(hi);
                let mut row: Vec<(usize, f64)> = list
                    .ids()
                    .enumerate()
                    .map(|(p, j)| (j, scatter.dot(embeddings.row(j)) / (p + 1) as f64))
                    .filter(|&(_, v)| v > 0.0)
                    .collect();
                scatter.clear(hi);
                row.sort_unstable_by_key(|&(c, _)| c);
                row
            },
        )
        .collect();
    SparseScoreMatrix::from_sorted_rows(n, rows)
}

/// `iterations` rounds of hypergraph construction and affinity re-ranking.
///
/// Ranks in the residual term come from the list being re-sorted in each
/// round. Returns the final lists together with the hypergraph built on them.
pub fn hypergraph_rerank(
    lists: &RankedListSet,
    k: usize,
    iterations: usize,
) -> Result<(RankedListSet, HypergraphState)> {
    if iterations < 1 {
        return Err(RfeError::config("hypergraph iterations T must be at least 1"));
    }
    let mut current = lists.clone();
    for _ in 0..iterations {
        let state = build_hypergraph(&current, k)?;
        let scores = affinity_scores(&state.embeddings, &current);
        current = current.stable_resort(&scores)?;
    }
    let state = build_hypergraph(&current, k)?;
    Ok((current, state))
}
