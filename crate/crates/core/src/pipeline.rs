//! End-to-end rank flow: normalization, hypergraph re-ranking, Cartesian
//! product, component re-ranking, and classification embeddings; plus rank
//! aggregation and the online path for queries outside the collection.

use log::debug;
use rayon::prelude::*;

use crate::cartesian::cartesian_rerank;
use crate::components::{analyze, cc_rerank, classification_embeddings, EmbeddingMatrix, RankFactor};
use crate::error::{Result, RfeError};
use crate::hypergraph::{hypergraph_rerank, incidence_row, position_weights, HypergraphState};
use crate::normalize::{fuse_rankers, normalize, SigmoidParams};
use crate::rank::{default_depth, RankedList, RankedListSet};
use crate::sparse::{sparse_norm, Accumulator, Scatter};

/// All pipeline hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RfeConfig {
    /// Neighborhood size.
    pub k: usize,
    /// Truncation depth; `None` selects `min(n, max(20k, 200))`.
    pub depth: Option<usize>,
    /// Sigmoid steepness of the rank normalization.
    pub alpha: f64,
    /// Rounds of hypergraph re-ranking.
    pub iterations: usize,
    /// Run the connected-component re-ranking (off for collections of many tiny classes).
    pub run_cc_stage: bool,
    /// Compute classification embeddings after the component stage.
    pub emit_embeddings: bool,
    /// Scale classification embeddings to unit norm.
    pub normalize_embeddings: bool,
    pub rank_factor: RankFactor,
    /// Cartesian-product terms at or below this value are dropped.
    pub cartesian_prune: f64,
}

impl Default for RfeConfig {
    fn default() -> Self {
        Self {
            k: 20,
            depth: None,
            alpha: 0.1,
            iterations: 2,
            run_cc_stage: true,
            emit_embeddings: false,
            normalize_embeddings: false,
            rank_factor: RankFactor::Literal,
            cartesian_prune: 0.0,
        }
    }
}

impl RfeConfig {
    /// Defaults with the neighborhood size used for well-known benchmarks.
    pub fn preset(dataset: &str) -> Self {
        let k = match dataset.to_ascii_lowercase().as_str() {
            "flowers" | "corel5k" => 60,
            "holidays" | "ukbench" => 5,
            _ => 20,
        };
        Self {
            k,
            ..Self::default()
        }
    }

    /// Validates against a collection of `n` objects and returns the depth to use.
    ///
    /// A depth above `n` is clamped to `n`. When the collection has fewer than
    /// `k` objects, lists cover everything and `k` may exceed the depth.
    pub fn effective_depth(&self, n: usize) -> Result<usize> {
        if self.k < 2 {
            return Err(RfeError::config(format!("k must be at least 2, got {}", self.k)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(RfeError::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.iterations < 1 {
            return Err(RfeError::config("iterations must be at least 1"));
        }
        if self.cartesian_prune.is_nan() || self.cartesian_prune < 0.0 {
            return Err(RfeError::config("cartesian prune threshold must be nonnegative"));
        }
        if n == 0 {
            return Err(RfeError::input("empty collection"));
        }
        let depth = self.depth.unwrap_or_else(|| default_depth(n, self.k)).min(n);
        if depth < 1 {
            return Err(RfeError::config("L must be at least 1"));
        }
        if self.k > depth && depth < n {
            return Err(RfeError::config(format!(
                "k={} exceeds L={depth}",
                self.k
            )));
        }
        Ok(depth)
    }

    fn sigmoid(&self) -> SigmoidParams {
        SigmoidParams {
            alpha: self.alpha,
            k: self.k,
        }
    }
}

/// Named pipeline stages, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Normalization,
    Hypergraph,
    Cartesian,
    Components,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Normalization => "normalization",
            Stage::Hypergraph => "hypergraph",
            Stage::Cartesian => "cartesian",
            Stage::Components => "components",
        }
    }
}

/// Offline artifacts needed to answer queries from outside the collection.
#[derive(Clone, Debug, PartialEq)]
pub struct RfeIndex {
    pub config: RfeConfig,
    /// Final top-`L` lists of the collection.
    pub lists: RankedListSet,
    /// Hypergraph built on the final lists.
    pub state: HypergraphState,
    pub embeddings: Option<EmbeddingMatrix>,
    norms: Vec<f64>,
}

impl RfeIndex {
    pub fn new(
        config: RfeConfig,
        lists: RankedListSet,
        state: HypergraphState,
        embeddings: Option<EmbeddingMatrix>,
    ) -> Result<Self> {
        let n = lists.n();
        if state.n() != n || state.embeddings.n() != n || state.incidence.n() != n {
            return Err(RfeError::Dimension {
                expected: n,
                found: state.n(),
            });
        }
        if let Some(e) = &embeddings {
            if e.rows() != n {
                return Err(RfeError::Dimension {
                    expected: n,
                    found: e.rows(),
                });
            }
        }
        let norms = state.embeddings.rows().iter().map(|r| sparse_norm(r)).collect();
        Ok(Self {
            config,
            lists,
            state,
            embeddings,
            norms,
        })
    }

    pub fn n(&self) -> usize {
        self.lists.n()
    }
}

/// Everything produced by one pipeline run.
#[derive(Clone, Debug)]
pub struct RfeRun {
    /// Final lists: re-ranked top-`L` followed by the untouched input tail.
    pub lists: RankedListSet,
    pub index: RfeIndex,
    /// Top-`L` lists after each executed stage.
    pub stages: Vec<(Stage, RankedListSet)>,
}

impl RfeRun {
    pub fn stage(&self, stage: Stage) -> Option<&RankedListSet> {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, l)| l)
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Runs the full pipeline and keeps every intermediate list set.
pub fn run_rfe_traced(lists: &RankedListSet, config: &RfeConfig) -> Result<RfeRun> {
    let depth = config.effective_depth(lists.n())?;
    let head = lists.truncated(depth)?;
    let (normalized, _) = stage("normalization", normalize(&head, config.sigmoid()))?;
    debug!("normalization done");
    run_after_normalization(normalized, lists, depth, config)
}

/// Steps 2 onward. `tail_source` supplies entries past `depth`.
fn run_after_normalization(
    normalized: RankedListSet,
    tail_source: &RankedListSet,
    depth: usize,
    config: &RfeConfig,
) -> Result<RfeRun> {
    let k = config.k;
    let mut stages = Vec::with_capacity(4);
    stages.push((Stage::Normalization, normalized.clone()));

    let (hyper, state_a) = stage(
        "hypergraph",
        hypergraph_rerank(&normalized, k, config.iterations),
    )?;
    stages.push((Stage::Hypergraph, hyper.clone()));
    debug!("hypergraph re-ranking done");

    let (mut current, mut state) = stage(
        "cartesian",
        cartesian_rerank(&state_a, &hyper, config.cartesian_prune),
    )?;
    stages.push((Stage::Cartesian, current.clone()));
    debug!("cartesian re-ranking done");

    if config.run_cc_stage {
        let analysis = stage("components", analyze(&state, &current, k))?;
        debug!(
            "components: {} edges, {} components",
            analysis.graph.edges.len(),
            analysis.components.len()
        );
        let (cc_lists, cc_state) = stage(
            "components",
            cc_rerank(
                &current,
                &analysis.cc_embeddings,
                &analysis.object_embeddings,
                k,
                config.rank_factor,
            ),
        )?;
        current = cc_lists;
        state = cc_state;
        stages.push((Stage::Components, current.clone()));
    }

    let embeddings = if config.emit_embeddings {
        Some(stage(
            "embeddings",
            classification_embeddings(&current, &state, k, config.normalize_embeddings),
        )?)
    } else {
        None
    };

    let full = if tail_source.depth() > depth {
        current.with_tail(tail_source)?
    } else {
        current.clone()
    };
    let index = RfeIndex::new(config.clone(), current, state, embeddings)?;
    Ok(RfeRun {
        lists: full,
        index,
        stages,
    })
}

/// Re-ranks `lists`; returns the final lists and the offline index.
pub fn run_rfe(lists: &RankedListSet, config: &RfeConfig) -> Result<(RankedListSet, RfeIndex)> {
    let run = run_rfe_traced(lists, config)?;
    Ok((run.lists, run.index))
}

/// Fuses several rankers over the same collection, then runs the pipeline.
pub fn run_aggregation(
    list_sets: &[RankedListSet],
    config: &RfeConfig,
) -> Result<(RankedListSet, RfeIndex)> {
    let first = list_sets
        .first()
        .ok_or_else(|| RfeError::input("rank aggregation needs at least one ranker"))?;
    let depth = config.effective_depth(first.n())?;
    let truncated = list_sets
        .iter()
        .map(|s| s.truncated(depth))
        .collect::<Result<Vec<_>>>()?;
    // fused lists take the place of the single-ranker normalization output
    let fused = stage("fusion", fuse_rankers(&truncated, config.sigmoid()))?;
    let run = run_after_normalization(fused, first, depth, config)?;
    Ok((run.lists, run.index))
}

/// Ranks the whole indexed collection for a query that is not part of it.
///
/// `neighbors` are `(object, distance)` pairs against the collection. The
/// query's hyperedge comes from its first `k` neighbors and their indexed
/// lists; its h-embedding is that incidence row multiplied by the indexed
/// incidence matrix. Objects are ranked by cosine similarity between h-embeddings,
/// ties by object index. The returned list is owned by the pseudo-index `n`.
pub fn query_unseen(index: &RfeIndex, neighbors: &[(usize, f64)], k: usize) -> Result<RankedList> {
    let n = index.n();
    if neighbors.is_empty() {
        return Err(RfeError::input("unseen query has no neighbors"));
    }
    if k < 2 {
        return Err(RfeError::config("k must be at least 2"));
    }
    if k > index.lists.depth() && index.lists.depth() < n {
        return Err(RfeError::config(format!(
            "k={k} exceeds the indexed depth {}",
            index.lists.depth()
        )));
    }
    let mut seen = vec![false; n];
    for &(id, d) in neighbors {
        if id >= n {
            return Err(RfeError::input(format!(
                "neighbor {id} is outside the indexed collection of {n}"
            )));
        }
        if seen[id] {
            return Err(RfeError::input(format!("neighbor {id} listed twice")));
        }
        seen[id] = true;
        if !d.is_finite() || d < 0.0 {
            return Err(RfeError::input(format!("distance {d} to neighbor {id} is invalid")));
        }
    }
    let mut ranked = neighbors.to_vec();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    let query = RankedList::from_parts(n, ranked.into_iter().map(|(id, d)| (id, 1.0 / (1.0 + d))).collect());

    let weights = position_weights(k)?;
    let mut acc = Accumulator::new(n);
    incidence_row(&query, &index.lists, &weights, &mut acc);
    let incidence = acc.drain_sorted();
    for &(x, r) in &incidence {
        for &(c, v) in index.state.incidence.row(x) {
            acc.add(c, r * v);
        }
    }
    let embedding = acc.drain_sorted();
    let query_norm = sparse_norm(&embedding);

    let mut scatter = Scatter::new(n);
    scatter.load(&embedding);
    let cosines: Vec<f64> = index
        .state
        .embeddings
        .rows()
        .par_iter()
        .zip(index.norms.par_iter())
        .map(|(row, &norm)| {
            if norm == 0.0 || query_norm == 0.0 {
                0.0
            } else {
                scatter.dot(row) / (norm * query_norm)
            }
        })
        .collect();
    let mut entries: Vec<(usize, f64)> = cosines.into_iter().enumerate().collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(RankedList::from_parts(n, entries))
}
