//! Retrieval effectiveness measures: MAP, precision and recall at a cutoff,
//! the 4-neighbor score, and rank-1 accuracy.

use std::collections::HashMap;
use std::fmt::Write as _;

use log::warn;

use crate::error::{Result, RfeError};
use crate::rank::RankedList;

/// How a query relates to the objects in its ranked list.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum QueryMode {
    /// Whole collection; the query counts as relevant to itself.
    #[default]
    SelfIncluded,
    /// Whole collection; the query is removed from its own list and relevant set.
    SelfExcluded,
    /// Queries and gallery are disjoint sets; lists index the gallery.
    Gallery,
}

impl std::str::FromStr for QueryMode {
    type Err = RfeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "included" | "self-included" => Ok(Self::SelfIncluded),
            "excluded" | "self-excluded" => Ok(Self::SelfExcluded),
            "gallery" => Ok(Self::Gallery),
            other => Err(RfeError::config(format!(
                "unknown query mode '{other}' (expected included, excluded, or gallery)"
            ))),
        }
    }
}

/// Class labels for queries and the objects they retrieve.
#[derive(Clone, Debug)]
pub struct RelevanceOracle {
    mode: QueryMode,
    query_labels: Vec<usize>,
    gallery_labels: Vec<usize>,
    class_sizes: HashMap<usize, usize>,
}

impl RelevanceOracle {
    /// Every object is a query against the whole collection.
    pub fn whole_collection(labels: Vec<usize>, mode: QueryMode) -> Result<Self> {
        if mode == QueryMode::Gallery {
            return Err(RfeError::config(
                "gallery mode needs separate query and gallery labels",
            ));
        }
        Ok(Self::build(mode, labels.clone(), labels))
    }

    /// Queries retrieve from a separate gallery.
    pub fn gallery(query_labels: Vec<usize>, gallery_labels: Vec<usize>) -> Self {
        Self::build(QueryMode::Gallery, query_labels, gallery_labels)
    }

    fn build(mode: QueryMode, query_labels: Vec<usize>, gallery_labels: Vec<usize>) -> Self {
        let mut class_sizes = HashMap::new();
        for &l in &gallery_labels {
            *class_sizes.entry(l).or_insert(0) += 1;
        }
        Self {
            mode,
            query_labels,
            gallery_labels,
            class_sizes,
        }
    }

    pub fn mode(&self) -> QueryMode {
        self.mode
    }

    pub fn num_queries(&self) -> usize {
        self.query_labels.len()
    }

    pub fn is_relevant(&self, query: usize, object: usize) -> bool {
        if self.mode == QueryMode::SelfExcluded && query == object {
            return false;
        }
        self.gallery_labels.get(object) == self.query_labels.get(query)
    }

    /// Size of the relevant set of `query` under the oracle's mode.
    pub fn relevant_count(&self, query: usize) -> usize {
        let size = self
            .class_sizes
            .get(&self.query_labels[query])
            .copied()
            .unwrap_or(0);
        match self.mode {
            QueryMode::SelfExcluded => size.saturating_sub(1),
            _ => size,
        }
    }

    /// Relevance flags of the list in evaluation order (self dropped when excluded).
    fn judged(&self, list: &RankedList) -> Vec<bool> {
        let q = list.owner();
        list.ids()
            .filter(|&id| !(self.mode == QueryMode::SelfExcluded && id == q))
            .map(|id| self.is_relevant(q, id))
            .collect()
    }
}

/// Average precision of one list; `None` when the query has no relevant objects.
///
/// Relevant objects missing from the list contribute zero precision.
pub fn average_precision(list: &RankedList, oracle: &RelevanceOracle) -> Option<f64> {
    let total = oracle.relevant_count(list.owner());
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (p, rel) in oracle.judged(list).into_iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (p + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Mean of per-query values, skipping (and warning about) undefined ones.
fn mean_defined(
    lists: &[RankedList],
    oracle: &RelevanceOracle,
    what: &str,
    mut f: impl FnMut(&RankedList) -> Option<f64>,
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut skipped = 0usize;
    for list in lists.iter().take(oracle.num_queries()) {
        match f(list) {
            Some(v) => {
                sum += v;
                count += 1;
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("{what}: {skipped} queries without relevant objects were excluded");
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

pub fn mean_average_precision(lists: &[RankedList], oracle: &RelevanceOracle) -> f64 {
    mean_defined(lists, oracle, "MAP", |l| average_precision(l, oracle))
}

/// Relevant fraction of the first `k` positions (or of the whole list if shorter).
pub fn precision_at(list: &RankedList, oracle: &RelevanceOracle, k: usize) -> f64 {
    let judged = oracle.judged(list);
    if k > judged.len() {
        warn!(
            "precision@{k}: list of {} has only {} entries",
            list.owner(),
            judged.len()
        );
    }
    let cut = k.min(judged.len());
    if cut == 0 {
        return 0.0;
    }
    judged[..cut].iter().filter(|&&r| r).count() as f64 / cut as f64
}

/// Fraction of the relevant set found in the first `k` positions.
pub fn recall_at(list: &RankedList, oracle: &RelevanceOracle, k: usize) -> Option<f64> {
    let total = oracle.relevant_count(list.owner());
    if total == 0 {
        return None;
    }
    let judged = oracle.judged(list);
    if k > judged.len() {
        warn!(
            "recall@{k}: list of {} has only {} entries",
            list.owner(),
            judged.len()
        );
    }
    let found = judged.iter().take(k).filter(|&&r| r).count();
    Some(found as f64 / total as f64)
}

pub fn mean_precision_at(lists: &[RankedList], oracle: &RelevanceOracle, k: usize) -> f64 {
    mean_defined(lists, oracle, "precision", |l| Some(precision_at(l, oracle, k)))
}

pub fn mean_recall_at(lists: &[RankedList], oracle: &RelevanceOracle, k: usize) -> f64 {
    mean_defined(lists, oracle, "recall", |l| recall_at(l, oracle, k))
}

/// Mean number of relevant objects in the first four positions (0 to 4).
pub fn ns_score(lists: &[RankedList], oracle: &RelevanceOracle) -> f64 {
    mean_defined(lists, oracle, "NS-score", |l| {
        Some(oracle.judged(l).iter().take(4).filter(|&&r| r).count() as f64)
    })
}

/// Fraction of queries whose first retrieved object shares their identity.
///
/// Queries without any match in the gallery are excluded.
pub fn cmc_r1(lists: &[RankedList], oracle: &RelevanceOracle) -> f64 {
    mean_defined(lists, oracle, "R1", |l| {
        if oracle.relevant_count(l.owner()) == 0 {
            return None;
        }
        Some(match oracle.judged(l).first() {
            Some(true) => 1.0,
            _ => 0.0,
        })
    })
}

/// Named metric values in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    entries: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.entries.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    /// One `name: value` line per metric.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, value) in &self.entries {
            let _ = writeln!(out, "{name}: {value:.6}");
        }
        out
    }

    /// Tab-separated `metric\tvalue` table with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        for (name, value) in &self.entries {
            let _ = writeln!(out, "{name}\t{value}");
        }
        out
    }
}

/// Standard report: MAP, P@1/P@10, R@K for the class-size-based cutoff, NS-score.
pub fn standard_report(
    prefix: &str,
    lists: &[RankedList],
    oracle: &RelevanceOracle,
    recall_cutoff: usize,
) -> MetricReport {
    let mut report = MetricReport::new();
    report.push(format!("{prefix}map"), mean_average_precision(lists, oracle));
    report.push(format!("{prefix}p@1"), mean_precision_at(lists, oracle, 1));
    report.push(format!("{prefix}p@10"), mean_precision_at(lists, oracle, 10));
    report.push(
        format!("{prefix}recall@{recall_cutoff}"),
        mean_recall_at(lists, oracle, recall_cutoff),
    );
    if oracle.mode() == QueryMode::Gallery {
        report.push(format!("{prefix}r1"), cmc_r1(lists, oracle));
    } else {
        report.push(format!("{prefix}ns_score"), ns_score(lists, oracle));
    }
    report
}
