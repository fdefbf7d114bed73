//! Cartesian-product re-ranking.
//!
//! Every pair of members of a hyperedge receives the product of their
//! h-embedding scores scaled by the hyperedge weight. Summing over all
//! hyperedges gives a symmetric pairwise similarity.

use rayon::prelude::*;

use crate::error::{Result, RfeError};
use crate::hypergraph::{build_hypergraph, HypergraphState};
use crate::rank::RankedListSet;
use crate::sparse::{Scatter, SparseScoreMatrix};

/// Association of `i` and `j` inside hyperedge `q`; zero unless both are members.
pub fn pair_association(state: &HypergraphState, q: usize, i: usize, j: usize) -> f64 {
    let h = &state.embeddings;
    state.edge_weights[q] * (h.get(q, i) * h.get(q, j))
}

/// Sum of pair associations over every hyperedge holding both objects, for
/// all pairs. Terms below `prune_below` are skipped.
pub fn cartesian_scores(state: &HypergraphState, prune_below: f64) -> SparseScoreMatrix {
    let n = state.n();
    let columns = state.embeddings.transpose();
    let rows = (0..n)
        .into_par_iter()
        .map_init(
            || (Scatter::new(n), vec![false; n]),
            |(scatter, seen), i| {
                let ci = columns.row(i);
                let mut partners = Vec::new();
                for &(q, _) in ci {
                    for &(j, _) in state.embeddings.row(q) {
                        if !seen[j] {
                            seen[j] = true;
                            partners.push(j);
                        }
                    }
                }
                partners.sort_unstable();
                scatter.load(ci);
                let row = partners
                    .iter()
                    .map(|&j| {
                        seen[j] = false;
                        (j, weighted_dot(scatter, columns.row(j), &state.edge_weights, prune_below))
                    })
                    .filter(|&(_, v)| v > 0.0)
                    .collect();
                scatter.clear(ci);
                row
            },
        )
        .collect();
    SparseScoreMatrix::from_sorted_rows(n, rows)
}

/// `sum_q w_q * (a_q * b_q)` over the support of `other`, ascending in `q`.
#[inline]
fn weighted_dot(loaded: &Scatter, other: &[(usize, f64)], weights: &[f64], prune_below: f64) -> f64 {
    let mut sum = 0.0;
    for &(q, b) in other {
        let term = weights[q] * (loaded.get(q) * b);
        if term > prune_below {
            sum += term;
        }
    }
    sum
}

fn list_scores(state: &HypergraphState, lists: &RankedListSet, prune_below: f64) -> SparseScoreMatrix {
    let n = lists.n();
    let columns = state.embeddings.transpose();
    let rows = lists
        .lists()
        .par_iter()
        .map_init(
            || Scatter::new(n),
            |scatter, list| {
                let ci = columns.row(list.owner());
                scatter.load(ci);
                let mut row: Vec<(usize, f64)> = list
                    .ids()
                    .map(|j| (j, weighted_dot(scatter, columns.row(j), &state.edge_weights, prune_below)))
                    .filter(|&(_, v)| v > 0.0)
                    .collect();
                scatter.clear(ci);
                row.sort_unstable_by_key(|&(c, _)| c);
                row
            },
        )
        .collect();
    SparseScoreMatrix::from_sorted_rows(n, rows)
}

/// Re-sorts each top-`L` list by the Cartesian-product similarity and builds
/// the hypergraph of the result.
///
/// Only the scores of pairs inside each list are materialized; since the
/// similarity is symmetric, both directions of a pair read the same value.
pub fn cartesian_rerank(
    state: &HypergraphState,
    lists: &RankedListSet,
    prune_below: f64,
) -> Result<(RankedListSet, HypergraphState)> {
    if state.n() != lists.n() {
        return Err(RfeError::Dimension {
            expected: lists.n(),
            found: state.n(),
        });
    }
    let scores = list_scores(state, lists, prune_below);
    let updated = lists.stable_resort(&scores)?;
    let next = build_hypergraph(&updated, state.k)?;
    Ok((updated, next))
}
