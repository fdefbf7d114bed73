//! Confident graph over the hypergraph, connected components, and the
//! component-driven re-ranking and embeddings.
//!
//! Candidate edges join each object to its `k` nearest neighbors. They are
//! ranked by h-embedding similarity scaled by both hyperedge weights, and only
//! positions below the mean-weight threshold become edges. Components of that
//! graph stand in for classes: each gets the sum of its members' h-embeddings,
//! and every object is embedded by its similarity to each component.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::{Result, RfeError};
use crate::hypergraph::{build_hypergraph, HypergraphState};
use crate::rank::RankedListSet;
use crate::sparse::{sparse_dot, Accumulator, SparseRow, SparseScoreMatrix};

/// Unordered candidate pair with its confidence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateEdge {
    /// Canonical `(smaller, larger)` object indices.
    pub pair: (usize, usize),
    pub confidence: f64,
}

/// Selected edges over `n` vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidentGraph {
    pub n: usize,
    pub threshold: f64,
    pub edges: Vec<CandidateEdge>,
}

/// A partition of the collection into connected components.
///
/// Components are numbered by their smallest member; members are ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentSet {
    pub assignment: Vec<usize>,
    pub components: Vec<Vec<usize>>,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Every object in exactly one component, and the assignment agrees.
    pub fn is_partition(&self) -> bool {
        let n = self.assignment.len();
        let mut seen = vec![false; n];
        for (c, members) in self.components.iter().enumerate() {
            for &m in members {
                if m >= n || seen[m] || self.assignment[m] != c {
                    return false;
                }
                seen[m] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Row-major dense `rows x cols` matrix of per-object embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(RfeError::Dimension {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Scales every nonzero row to unit Euclidean norm.
    pub fn l2_normalized(&self) -> Self {
        let mut data = self.data.clone();
        if self.cols > 0 {
            for row in data.chunks_mut(self.cols) {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
        }
        Self { data, ..*self }
    }
}

/// Multiplier applied to the embedding similarity in the component score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RankFactor {
    /// `sqrt(rank_i^2 + rank_j^2)`, as the similarity is defined.
    #[default]
    Literal,
    /// The reciprocal of the literal factor; for sensitivity experiments only.
    Inverted,
}

/// Canonical unordered pairs `{q, i}` for every `i != q` in the first `k` of
/// list `q`, deduplicated and sorted.
pub fn candidate_edges(lists: &RankedListSet, k: usize) -> Result<Vec<(usize, usize)>> {
    crate::rank::check_k_fits(k, lists)?;
    let mut pairs = BTreeSet::new();
    for list in lists.lists() {
        let q = list.owner();
        for i in list.ids().take(k).filter(|&i| i != q) {
            pairs.insert((q.min(i), q.max(i)));
        }
    }
    Ok(pairs.into_iter().collect())
}

/// `<h_i, h_j> * w(e_i) * w(e_j)`; symmetric in the pair.
pub fn edge_confidence(state: &HypergraphState, pair: (usize, usize)) -> f64 {
    let (i, j) = (pair.0.min(pair.1), pair.0.max(pair.1));
    let h = &state.embeddings;
    sparse_dot(h.row(i), h.row(j)) * state.edge_weights[i] * state.edge_weights[j]
}

/// Half the mean hyperedge weight.
pub fn edge_threshold(state: &HypergraphState) -> f64 {
    let n = state.n();
    if n == 0 {
        return 0.0;
    }
    state.edge_weights.iter().sum::<f64>() / (2.0 * n as f64)
}

/// Ranks candidate edges by confidence and keeps those whose 1-based
/// position is strictly below the threshold.
pub fn build_graph(state: &HypergraphState, lists: &RankedListSet, k: usize) -> Result<ConfidentGraph> {
    if state.n() != lists.n() {
        return Err(RfeError::Dimension {
            expected: lists.n(),
            found: state.n(),
        });
    }
    let threshold = edge_threshold(state);
    let mut edges: Vec<CandidateEdge> = candidate_edges(lists, k)?
        .into_par_iter()
        .map(|pair| CandidateEdge {
            pair,
            confidence: edge_confidence(state, pair),
        })
        .collect();
    edges.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let keep = edges
        .iter()
        .enumerate()
        .take_while(|(p, _)| ((p + 1) as f64) < threshold)
        .count();
    edges.truncate(keep);
    Ok(ConfidentGraph {
        n: lists.n(),
        threshold,
        edges,
    })
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != root {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        match self.rank[a].cmp(&self.rank[b]) {
            std::cmp::Ordering::Less => self.parent[a] = b,
            std::cmp::Ordering::Greater => self.parent[b] = a,
            std::cmp::Ordering::Equal => {
                self.parent[b] = a;
                self.rank[a] += 1;
            }
        }
    }
}

pub fn connected_components(graph: &ConfidentGraph) -> ComponentSet {
    let n = graph.n;
    let mut sets = DisjointSet::new(n);
    for e in &graph.edges {
        sets.union(e.pair.0, e.pair.1);
    }
    let mut label = vec![usize::MAX; n];
    let mut assignment = vec![0; n];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for (v, slot) in assignment.iter_mut().enumerate() {
        let root = sets.find(v);
        if label[root] == usize::MAX {
            label[root] = components.len();
            components.push(Vec::new());
        }
        *slot = label[root];
        components[label[root]].push(v);
    }
    ComponentSet {
        assignment,
        components,
    }
}

/// Per-component sum of member h-embeddings.
pub fn cc_embeddings(components: &ComponentSet, embeddings: &SparseScoreMatrix) -> Vec<SparseRow> {
    let n = embeddings.n();
    components
        .components
        .par_iter()
        .map_init(
            || Accumulator::new(n),
            |acc, members| {
                for &m in members {
                    for &(c, v) in embeddings.row(m) {
                        acc.add(c, v);
                    }
                }
                acc.drain_sorted()
            },
        )
        .collect()
}

/// `e_q[i] = <h_q, c_i>` for every object `q` and component `i`.
pub fn object_embeddings(embeddings: &SparseScoreMatrix, cc: &[SparseRow]) -> EmbeddingMatrix {
    let n = embeddings.n();
    let m = cc.len();
    // column -> (component, value), components ascending
    let mut by_column: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (comp, row) in cc.iter().enumerate() {
        for &(c, v) in row {
            by_column[c].push((comp, v));
        }
    }
    let data: Vec<f64> = embeddings
        .rows()
        .par_iter()
        .flat_map_iter(|hq| {
            let mut out = vec![0.0; m];
            for &(c, hv) in hq {
                for &(comp, cv) in &by_column[c] {
                    out[comp] += hv * cv;
                }
            }
            out
        })
        .collect();
    EmbeddingMatrix {
        rows: n,
        cols: m,
        data,
    }
}

/// Top-`k` objects of a component embedding by value, ties by index; at most
/// the size of its support.
pub fn component_neighborhood(cc: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = cc.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));
    order.into_iter().take(k).map(|(c, _)| c).collect()
}

/// Dot product of two dense embedding rows, in index order.
fn dense_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Component similarity for every pair inside each list.
///
/// For each component holding both `i` and `j` among its top-`k` objects,
/// `(1 + f * <e_i, e_j>) / tau_i(j)` is added, where `f` combines the two
/// ranks within that component's top-`k`.
pub fn cc_scores(
    lists: &RankedListSet,
    cc: &[SparseRow],
    object_embeddings: &EmbeddingMatrix,
    k: usize,
    factor: RankFactor,
) -> SparseScoreMatrix {
    let n = lists.n();
    let tops: Vec<Vec<usize>> = cc.par_iter().map(|c| component_neighborhood(c, k)).collect();
    // object -> (component, 1-based rank), components ascending
    let mut membership: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (q, top) in tops.iter().enumerate() {
        for (r, &o) in top.iter().enumerate() {
            membership[o].push((q, r + 1));
        }
    }
    let rows = lists
        .lists()
        .par_iter()
        .map_init(
            || vec![0usize; n],
            |position, list| {
                let i = list.owner();
                for (p, j) in list.ids().enumerate() {
                    position[j] = p + 1;
                }
                let mut sums = vec![0.0; list.len()];
                let mut dots: Vec<Option<f64>> = vec![None; list.len()];
                let ei = object_embeddings.row(i);
                for &(q, ri) in &membership[i] {
                    for (rj, &j) in tops[q].iter().enumerate() {
                        let p = position[j];
                        if p == 0 {
                            continue;
                        }
                        let dot = *dots[p - 1]
                            .get_or_insert_with(|| dense_dot(ei, object_embeddings.row(j)));
                        let spread = ((ri * ri + (rj + 1) * (rj + 1)) as f64).sqrt();
                        let f = match factor {
                            RankFactor::Literal => spread,
                            RankFactor::Inverted => 1.0 / spread,
                        };
                        sums[p - 1] += (1.0 + f * dot) / p as f64;
                    }
                }
                for j in list.ids() {
                    position[j] = 0;
                }
                let mut row: Vec<(usize, f64)> = list
                    .ids()
                    .zip(sums)
                    .filter(|&(_, v)| v > 0.0)
                    .collect();
                row.sort_unstable_by_key(|&(c, _)| c);
                row
            },
        )
        .collect();
    SparseScoreMatrix::from_sorted_rows(n, rows)
}

/// Re-sorts the lists by the component similarity and rebuilds the hypergraph.
pub fn cc_rerank(
    lists: &RankedListSet,
    cc: &[SparseRow],
    object_embeddings: &EmbeddingMatrix,
    k: usize,
    factor: RankFactor,
) -> Result<(RankedListSet, HypergraphState)> {
    if object_embeddings.rows() != lists.n() {
        return Err(RfeError::Dimension {
            expected: lists.n(),
            found: object_embeddings.rows(),
        });
    }
    if object_embeddings.cols() != cc.len() {
        return Err(RfeError::Dimension {
            expected: cc.len(),
            found: object_embeddings.cols(),
        });
    }
    if k < 1 {
        return Err(RfeError::config("component neighborhood size must be at least 1"));
    }
    let scores = cc_scores(lists, cc, object_embeddings, k, factor);
    let updated = lists.stable_resort(&scores)?;
    let state = build_hypergraph(&updated, k)?;
    Ok((updated, state))
}

/// Everything the component stage derives from one hypergraph.
#[derive(Clone, Debug)]
pub struct ComponentAnalysis {
    pub graph: ConfidentGraph,
    pub components: ComponentSet,
    pub cc_embeddings: Vec<SparseRow>,
    pub object_embeddings: EmbeddingMatrix,
}

/// Graph, components, component embeddings, and object embeddings for `state`.
pub fn analyze(state: &HypergraphState, lists: &RankedListSet, k: usize) -> Result<ComponentAnalysis> {
    let graph = build_graph(state, lists, k)?;
    let components = connected_components(&graph);
    let cc = cc_embeddings(&components, &state.embeddings);
    let object_embeddings = object_embeddings(&state.embeddings, &cc);
    Ok(ComponentAnalysis {
        graph,
        components,
        cc_embeddings: cc,
        object_embeddings,
    })
}

/// Embeddings for downstream classifiers, from the hypergraph built after the
/// component re-ranking.
pub fn classification_embeddings(
    lists: &RankedListSet,
    state: &HypergraphState,
    k: usize,
    l2_normalize: bool,
) -> Result<EmbeddingMatrix> {
    let analysis = analyze(state, lists, k)?;
    Ok(if l2_normalize {
        analysis.object_embeddings.l2_normalized()
    } else {
        analysis.object_embeddings
    })
}
