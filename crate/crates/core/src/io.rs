//! File formats: feature tables, distance matrices, labels, ranked lists,
//! embeddings, and the binary index container. Byte layouts are documented
//! in `docs/FORMATS.md`.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use rayon::prelude::*;

use crate::components::{EmbeddingMatrix, RankFactor};
use crate::error::{Result, RfeError};
use crate::hypergraph::HypergraphState;
use crate::pipeline::{RfeConfig, RfeIndex};
use crate::rank::{RankedList, RankedListSet};
use crate::sparse::SparseScoreMatrix;

/// `n x d` finite feature values with one identifier per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(RfeError::Dimension {
                expected: rows.len(),
                found: ids.len(),
            });
        }
        let d = rows.first().map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(RfeError::Parse {
                    line: i + 1,
                    msg: format!("row {i} has {} values, expected {d}", row.len()),
                });
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(RfeError::Parse {
                    line: i + 1,
                    msg: format!("row {i} ('{}') has a non-finite value in column {c}", ids[i]),
                });
            }
        }
        check_unique(&ids)?;
        Ok(Self { ids, rows })
    }

    /// Rows without identifiers are named by their index.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(ids, rows)
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id.as_str(), i) {
            return Err(RfeError::Parse {
                line: i + 1,
                msg: format!("identifier '{id}' repeats row {prev}"),
            });
        }
    }
    Ok(())
}

/// On-disk feature encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureFormat {
    /// Delimited text with a header row; a first header field `id` marks an
    /// identifier column.
    Text,
    /// `u64 n`, `u64 d`, then `n*d` little-endian `f32` values, row-major.
    Binary,
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field.parse::<f64>().map_err(|_| RfeError::Parse {
        line,
        msg: format!("'{field}' is not a number"),
    })
}

pub fn read_features<R: Read>(mut reader: R, format: FeatureFormat) -> Result<FeatureTable> {
    match format {
        FeatureFormat::Text => read_features_text(std::io::BufReader::new(reader)),
        FeatureFormat::Binary => {
            let mut buf = Vec::new();
            reader.read_to_end(&mut buf)?;
            read_features_binary(&buf)
        }
    }
}

fn read_features_text<R: BufRead>(reader: R) -> Result<FeatureTable> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Err(RfeError::Parse { line: 1, msg: "missing header row".into() }),
        }
    };
    let header_fields = split_fields(&header);
    let has_ids = header_fields
        .first()
        .is_some_and(|f| f.eq_ignore_ascii_case("id"));
    let width = header_fields.len() - usize::from(has_ids);
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(&line);
        let (id, values) = if has_ids {
            (fields[0].to_string(), &fields[1..])
        } else {
            (rows.len().to_string(), &fields[..])
        };
        if values.len() != width {
            return Err(RfeError::Parse {
                line: lineno,
                msg: format!("expected {width} values, found {}", values.len()),
            });
        }
        let row = values
            .iter()
            .map(|f| parse_f64(f, lineno))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(RfeError::Parse {
                line: lineno,
                msg: format!("row '{id}' has a non-finite value in column {c}"),
            });
        }
        ids.push(id);
        rows.push(row);
    }
    FeatureTable::new(ids, rows)
}

fn read_features_binary(buf: &[u8]) -> Result<FeatureTable> {
    if buf.len() < 16 {
        return Err(RfeError::Format("binary features shorter than the 16-byte header".into()));
    }
    let n = u64::from_le_bytes(buf[0..8].try_into().expect("8 bytes")) as usize;
    let d = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(16))
        .ok_or_else(|| RfeError::Format("binary feature header overflows".into()))?;
    if buf.len() != expected {
        return Err(RfeError::Format(format!(
            "binary features: header says {n}x{d} ({expected} bytes) but file has {} bytes",
            buf.len()
        )));
    }
    let rows = buf[16..]
        .chunks_exact(4 * d.max(1))
        .take(n)
        .map(|chunk| {
            chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect()
        })
        .collect::<Vec<Vec<f64>>>();
    let rows = if d == 0 { vec![Vec::new(); n] } else { rows };
    FeatureTable::from_rows(rows)
}

pub fn write_features_binary<W: Write>(mut w: W, table: &FeatureTable) -> Result<()> {
    w.write_all(&(table.n() as u64).to_le_bytes())?;
    w.write_all(&(table.dim() as u64).to_le_bytes())?;
    for row in &table.rows {
        for &v in row {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_features_text<W: Write>(mut w: W, table: &FeatureTable) -> Result<()> {
    let header: Vec<String> = std::iter::once("id".to_string())
        .chain((0..table.dim()).map(|c| format!("f{c}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (id, row) in table.ids.iter().zip(&table.rows) {
        write!(w, "{id}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Distance function between feature rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    /// `1 - cos`, clamped at zero.
    Cosine,
}

impl std::str::FromStr for DistanceMetric {
    type Err = RfeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Self::Euclidean),
            "cosine" => Ok(Self::Cosine),
            other => Err(RfeError::config(format!(
                "unknown metric '{other}' (expected euclidean or cosine)"
            ))),
        }
    }
}

fn norms_for(rows: &[Vec<f64>], metric: DistanceMetric, what: &str) -> Result<Vec<f64>> {
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if metric == DistanceMetric::Cosine {
        if let Some(i) = norms.iter().position(|&n| n == 0.0) {
            return Err(RfeError::input(format!(
                "{what} row {i} has zero norm; cosine distance is undefined"
            )));
        }
    }
    Ok(norms)
}

fn distance(a: &[f64], b: &[f64], na: f64, nb: f64, metric: DistanceMetric) -> f64 {
    match metric {
        DistanceMetric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        DistanceMetric::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (1.0 - dot / (na * nb)).max(0.0)
        }
    }
}

/// Exhaustive distances from every row to every row; the diagonal is zero.
pub fn compute_distances(table: &FeatureTable, metric: DistanceMetric) -> Result<Vec<Vec<(usize, f64)>>> {
    let norms = norms_for(&table.rows, metric, "feature")?;
    Ok((0..table.n())
        .into_par_iter()
        .map(|q| {
            (0..table.n())
                .map(|i| {
                    let d = if i == q {
                        0.0
                    } else {
                        distance(&table.rows[q], &table.rows[i], norms[q], norms[i], metric)
                    };
                    (i, d)
                })
                .collect()
        })
        .collect())
}

/// Distances from each query row to every collection row.
pub fn compute_query_distances(
    queries: &FeatureTable,
    collection: &FeatureTable,
    metric: DistanceMetric,
) -> Result<Vec<Vec<(usize, f64)>>> {
    if queries.n() > 0 && queries.dim() != collection.dim() {
        return Err(RfeError::Dimension {
            expected: collection.dim(),
            found: queries.dim(),
        });
    }
    let qn = norms_for(&queries.rows, metric, "query")?;
    let cn = norms_for(&collection.rows, metric, "collection")?;
    Ok(queries
        .rows
        .par_iter()
        .zip(qn.par_iter())
        .map(|(q, &nq)| {
            collection
                .rows
                .iter()
                .zip(&cn)
                .enumerate()
                .map(|(i, (c, &nc))| (i, distance(q, c, nq, nc, metric)))
                .collect()
        })
        .collect())
}

/// Square distance matrix: one row of `n` numbers per line, no header.
pub fn read_distance_matrix<R: BufRead>(reader: R) -> Result<Vec<Vec<(usize, f64)>>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = split_fields(&line)
            .into_iter()
            .map(|f| parse_f64(f, i + 1))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != n {
                return Err(RfeError::Parse {
                    line: i + 1,
                    msg: format!("distance row has {} values, expected {n}", row.len()),
                });
            }
            Ok(row.into_iter().enumerate().collect())
        })
        .collect()
}

/// Object identifier to class label.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelTable {
    labels: HashMap<String, String>,
}

impl LabelTable {
    /// Reads `id<sep>label` lines (comma, tab, or whitespace separated).
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut labels = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields = split_fields(&line);
            if fields.len() != 2 {
                return Err(RfeError::Parse {
                    line: i + 1,
                    msg: format!("expected 'id label', found {} fields", fields.len()),
                });
            }
            if labels
                .insert(fields[0].to_string(), fields[1].to_string())
                .is_some()
            {
                return Err(RfeError::Parse {
                    line: i + 1,
                    msg: format!("identifier '{}' labelled twice", fields[0]),
                });
            }
        }
        Ok(Self { labels })
    }

    pub fn insert(&mut self, id: impl Into<String>, label: impl Into<String>) {
        self.labels.insert(id.into(), label.into());
    }

    /// Integer class ids for `ids`, numbered by first appearance in `ids`.
    pub fn class_ids(&self, ids: &[String]) -> Result<Vec<usize>> {
        let mut classes: HashMap<&str, usize> = HashMap::new();
        ids.iter()
            .map(|id| {
                let label = self
                    .labels
                    .get(id)
                    .ok_or_else(|| RfeError::input(format!("no label for object '{id}'")))?;
                let next = classes.len();
                Ok(*classes.entry(label.as_str()).or_insert(next))
            })
            .collect()
    }

    /// Class ids for two id sets sharing one numbering (queries first).
    pub fn class_ids_pair(&self, first: &[String], second: &[String]) -> Result<(Vec<usize>, Vec<usize>)> {
        let all: Vec<String> = first.iter().chain(second).cloned().collect();
        let mut ids = self.class_ids(&all)?;
        let tail = ids.split_off(first.len());
        Ok((ids, tail))
    }
}

/// Writes `<query_id>: <id_1> <id_2> ...`, one line per list.
pub fn write_ranked_lists<W: Write>(mut w: W, lists: &RankedListSet, ids: &[String]) -> Result<()> {
    for list in lists.lists() {
        write_ranked_list(&mut w, list, &ids[list.owner()], ids)?;
    }
    Ok(())
}

pub fn write_ranked_list<W: Write>(mut w: W, list: &RankedList, query_id: &str, ids: &[String]) -> Result<()> {
    write!(w, "{query_id}:")?;
    for id in list.ids() {
        write!(w, " {}", ids[id])?;
    }
    writeln!(w)?;
    Ok(())
}

/// Reads ranked lists written by [`write_ranked_lists`].
///
/// With `ids == None` the query identifiers, in file order, define the
/// collection. Scores are assigned by position (`1 / position`).
pub fn read_ranked_lists<R: BufRead>(reader: R, ids: Option<&[String]>) -> Result<(RankedListSet, Vec<String>)> {
    let mut raw: Vec<(usize, String, Vec<String>)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (query, rest) = line.split_once(':').ok_or_else(|| RfeError::Parse {
            line: i + 1,
            msg: "expected '<query_id>: <ids...>'".into(),
        })?;
        raw.push((
            i + 1,
            query.trim().to_string(),
            rest.split_whitespace().map(str::to_string).collect(),
        ));
    }
    let universe: Vec<String> = match ids {
        Some(ids) => ids.to_vec(),
        None => raw.iter().map(|(_, q, _)| q.clone()).collect(),
    };
    check_unique(&universe)?;
    let index: HashMap<&str, usize> = universe.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n = universe.len();
    let mut lists: Vec<Option<RankedList>> = vec![None; n];
    let mut depth = 1;
    for (line, query, items) in &raw {
        let q = *index.get(query.as_str()).ok_or_else(|| RfeError::Parse {
            line: *line,
            msg: format!("unknown query identifier '{query}'"),
        })?;
        let entries = items
            .iter()
            .enumerate()
            .map(|(p, id)| {
                index
                    .get(id.as_str())
                    .map(|&x| (x, 1.0 / (p + 1) as f64))
                    .ok_or_else(|| RfeError::Parse {
                        line: *line,
                        msg: format!("unknown object identifier '{id}'"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        depth = depth.max(entries.len());
        let list = RankedList::new(q, entries).map_err(|e| RfeError::Parse {
            line: *line,
            msg: e.to_string(),
        })?;
        if lists[q].replace(list).is_some() {
            return Err(RfeError::Parse {
                line: *line,
                msg: format!("query '{query}' appears twice"),
            });
        }
    }
    let lists = lists
        .into_iter()
        .enumerate()
        .map(|(q, l)| {
            l.ok_or_else(|| RfeError::input(format!("no ranked list for object '{}'", universe[q])))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((RankedListSet::new(n, depth, lists)?, universe))
}

/// One row per object: identifier, then the values, comma separated.
pub fn write_embeddings<W: Write>(mut w: W, embeddings: &EmbeddingMatrix, ids: &[String]) -> Result<()> {
    for (i, id) in ids.iter().enumerate().take(embeddings.rows()) {
        write!(w, "{id}")?;
        for v in embeddings.row(i) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_embeddings<R: BufRead>(reader: R) -> Result<(EmbeddingMatrix, Vec<String>)> {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut cols = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default().trim().to_string();
        let values = fields
            .map(|f| parse_f64(f.trim(), i + 1))
            .collect::<Result<Vec<f64>>>()?;
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(RfeError::Parse {
                    line: i + 1,
                    msg: format!("expected {c} values, found {}", values.len()),
                })
            }
            _ => {}
        }
        ids.push(id);
        data.extend(values);
    }
    check_unique(&ids)?;
    let m = EmbeddingMatrix::new(ids.len(), cols.unwrap_or(0), data)?;
    Ok((m, ids))
}

const INDEX_MAGIC: &[u8; 8] = b"RFEINDEX";
const INDEX_VERSION: u32 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.0.write_all(&[v])?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn usize(&mut self, v: usize) -> Result<()> {
        self.u64(v as u64)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.usize(s.len())?;
        self.0.write_all(s.as_bytes())?;
        Ok(())
    }
    fn sparse(&mut self, m: &SparseScoreMatrix) -> Result<()> {
        self.usize(m.n())?;
        for row in m.rows() {
            self.usize(row.len())?;
            for &(c, v) in row {
                self.usize(c)?;
                self.f64(v)?;
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| RfeError::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| RfeError::Format("count exceeds usize".into()))
    }
    /// A count of items of `item_bytes` each that must fit in the remaining buffer.
    fn count(&mut self, item_bytes: usize) -> Result<usize> {
        let c = self.usize()?;
        if c.saturating_mul(item_bytes) > self.buf.len() - self.pos {
            return Err(RfeError::Format(format!("count {c} at byte {} exceeds file size", self.pos)));
        }
        Ok(c)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.count(1)?;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| RfeError::Format("identifier is not UTF-8".into()))
    }
    fn sparse(&mut self) -> Result<SparseScoreMatrix> {
        let n = self.count(8)?;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let nnz = self.count(16)?;
            let mut row = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                row.push((self.usize()?, self.f64()?));
            }
            rows.push(row);
        }
        SparseScoreMatrix::from_rows(n, rows).map_err(|e| RfeError::Format(e.to_string()))
    }
}

/// Serializes an index together with the collection identifiers.
pub fn write_index<W: Write>(w: W, index: &RfeIndex, ids: &[String]) -> Result<()> {
    if ids.len() != index.n() {
        return Err(RfeError::Dimension {
            expected: index.n(),
            found: ids.len(),
        });
    }
    let mut w = Writer(w);
    w.0.write_all(INDEX_MAGIC)?;
    w.u32(INDEX_VERSION)?;
    let c = &index.config;
    w.usize(c.k)?;
    w.usize(c.depth.unwrap_or(0))?;
    w.f64(c.alpha)?;
    w.usize(c.iterations)?;
    let flags = u8::from(c.run_cc_stage)
        | u8::from(c.emit_embeddings) << 1
        | u8::from(c.normalize_embeddings) << 2
        | u8::from(c.rank_factor == RankFactor::Inverted) << 3
        | u8::from(c.depth.is_some()) << 4;
    w.u8(flags)?;
    w.f64(c.cartesian_prune)?;

    w.usize(index.n())?;
    for id in ids {
        w.str(id)?;
    }
    w.usize(index.lists.depth())?;
    for list in index.lists.lists() {
        w.usize(list.len())?;
        for &(id, s) in list.entries() {
            w.usize(id)?;
            w.f64(s)?;
        }
    }
    w.usize(index.state.k)?;
    w.sparse(&index.state.incidence)?;
    w.sparse(&index.state.embeddings)?;
    for &v in &index.state.edge_weights {
        w.f64(v)?;
    }
    match &index.embeddings {
        None => w.u8(0)?,
        Some(e) => {
            w.u8(1)?;
            w.usize(e.rows())?;
            w.usize(e.cols())?;
            for &v in e.data() {
                w.f64(v)?;
            }
        }
    }
    Ok(())
}

pub fn read_index<R: Read>(mut reader: R) -> Result<(RfeIndex, Vec<String>)> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != INDEX_MAGIC {
        return Err(RfeError::Format("not an index file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != INDEX_VERSION {
        return Err(RfeError::Format(format!("unsupported index version {version}")));
    }
    let k = r.usize()?;
    let depth = r.usize()?;
    let alpha = r.f64()?;
    let iterations = r.usize()?;
    let flags = r.u8()?;
    let cartesian_prune = r.f64()?;
    let config = RfeConfig {
        k,
        depth: (flags & 16 != 0).then_some(depth),
        alpha,
        iterations,
        run_cc_stage: flags & 1 != 0,
        emit_embeddings: flags & 2 != 0,
        normalize_embeddings: flags & 4 != 0,
        rank_factor: if flags & 8 != 0 { RankFactor::Inverted } else { RankFactor::Literal },
        cartesian_prune,
    };

    let n = r.count(8)?;
    let ids = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let list_depth = r.usize()?;
    let mut lists = Vec::with_capacity(n);
    for q in 0..n {
        let len = r.count(16)?;
        let mut entries = Vec::with_capacity(len);
        for _ in 0..len {
            entries.push((r.usize()?, r.f64()?));
        }
        lists.push(RankedList::new(q, entries).map_err(|e| RfeError::Format(e.to_string()))?);
    }
    let lists = RankedListSet::new(n, list_depth, lists).map_err(|e| RfeError::Format(e.to_string()))?;
    let state_k = r.usize()?;
    let incidence = r.sparse()?;
    let embeddings = r.sparse()?;
    let edge_weights = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let classification = match r.u8()? {
        0 => None,
        1 => {
            let rows = r.usize()?;
            let cols = r.usize()?;
            let len = rows
                .checked_mul(cols)
                .filter(|&l| l.saturating_mul(8) <= buf.len())
                .ok_or_else(|| RfeError::Format("embedding size exceeds file".into()))?;
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            Some(EmbeddingMatrix::new(rows, cols, data)?)
        }
        other => return Err(RfeError::Format(format!("bad embedding flag {other}"))),
    };
    if r.pos != buf.len() {
        return Err(RfeError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let state = HypergraphState {
        incidence,
        embeddings,
        edge_weights,
        k: state_k,
    };
    let index = RfeIndex::new(config, lists, state, classification).map_err(|e| RfeError::Format(e.to_string()))?;
    Ok((index, ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_features_with_ids() {
        let text = "id,a,b\nx,1,2\ny,3,4\nz,5,6\n";
        let t = read_features(text.as_bytes(), FeatureFormat::Text).unwrap();
        assert_eq!(t.n(), 3);
        assert_eq!(t.dim(), 2);
        assert_eq!(t.ids, vec!["x", "y", "z"]);
        assert_eq!(t.rows[2], vec![5.0, 6.0]);
    }

    #[test]
    fn text_features_without_ids_whitespace() {
        let text = "a b\n1 2\n3 4\n";
        let t = read_features(text.as_bytes(), FeatureFormat::Text).unwrap();
        assert_eq!(t.ids, vec!["0", "1"]);
    }

    #[test]
    fn nan_is_reported_with_row() {
        let text = "id,a,b\nx,1,2\ny,NaN,4\n";
        let err = read_features(text.as_bytes(), FeatureFormat::Text).unwrap_err();
        match err {
            RfeError::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("'y'"), "{msg}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_rows_and_duplicate_ids() {
        assert!(read_features("id,a\nx,1,2\n".as_bytes(), FeatureFormat::Text).is_err());
        assert!(read_features("id,a\nx,abc\n".as_bytes(), FeatureFormat::Text).is_err());
        let err = read_features("id,a\nx,1\nx,2\n".as_bytes(), FeatureFormat::Text).unwrap_err();
        assert!(err.to_string().contains("'x'"));
    }

    #[test]
    fn binary_and_text_agree() {
        let text = "a,b\n1,2.5\n-3,0.125\n7,8\n";
        let t = read_features(text.as_bytes(), FeatureFormat::Text).unwrap();
        let mut buf = Vec::new();
        write_features_binary(&mut buf, &t).unwrap();
        let b = read_features(buf.as_slice(), FeatureFormat::Binary).unwrap();
        assert_eq!(t, b);
        assert!(read_features(&buf[..buf.len() - 1], FeatureFormat::Binary).is_err());
    }

    #[test]
    fn distances() {
        let t = FeatureTable::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let d = compute_distances(&t, DistanceMetric::Euclidean).unwrap();
        assert_eq!(d[0][0], (0, 0.0));
        assert!((d[0][1].1 - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(d[0][2].1, 0.0);
        let c = compute_distances(&t, DistanceMetric::Cosine).unwrap();
        assert!((c[0][1].1 - 1.0).abs() < 1e-15);
        let z = FeatureTable::from_rows(vec![vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(compute_distances(&z, DistanceMetric::Cosine).is_err());
    }

    #[test]
    fn distance_matrix_parsing() {
        let d = read_distance_matrix("0 1 2\n1 0 3\n2 3 0\n".as_bytes()).unwrap();
        assert_eq!(d[1], vec![(0, 1.0), (1, 0.0), (2, 3.0)]);
        assert!(read_distance_matrix("0 1\n1\n".as_bytes()).is_err());
    }

    #[test]
    fn labels() {
        let l = LabelTable::read("a,cat\nb\tdog\nc cat\n".as_bytes()).unwrap();
        let ids: Vec<String> = ["b", "a", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(l.class_ids(&ids).unwrap(), vec![0, 1, 1]);
        assert!(l.class_ids(&["zz".to_string()]).is_err());
        assert!(LabelTable::read("a,cat\na,dog\n".as_bytes()).is_err());
    }

    #[test]
    fn ranked_list_text_round_trip() {
        let text = "a: a c b\nb: b a\nc: c b a\n";
        let (lists, ids) = read_ranked_lists(text.as_bytes(), None).unwrap();
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert_eq!(lists.list(0).ids().collect::<Vec<_>>(), vec![0, 2, 1]);
        let mut out = Vec::new();
        write_ranked_lists(&mut out, &lists, &ids).unwrap();
        assert_eq!(String::from_utf8(out.clone()).unwrap(), text);
        let (again, _) = read_ranked_lists(out.as_slice(), None).unwrap();
        assert_eq!(again, lists);
    }

    #[test]
    fn ranked_list_errors() {
        assert!(read_ranked_lists("a: a x\n".as_bytes(), None).is_err());
        assert!(read_ranked_lists("a a\n".as_bytes(), None).is_err());
        assert!(read_ranked_lists("a: a a\n".as_bytes(), None).is_err());
        let ids = vec!["a".to_string(), "b".to_string()];
        assert!(read_ranked_lists("a: a b\n".as_bytes(), Some(&ids)).is_err());
    }

    #[test]
    fn embeddings_round_trip_exactly() {
        let e = EmbeddingMatrix::new(2, 3, vec![0.1, 1e-300, 3.0, 1.0 / 3.0, 0.0, 12345.678]).unwrap();
        let ids = vec!["p".to_string(), "q".to_string()];
        let mut out = Vec::new();
        write_embeddings(&mut out, &e, &ids).unwrap();
        let (back, back_ids) = read_embeddings(out.as_slice()).unwrap();
        assert_eq!(back, e);
        assert_eq!(back_ids, ids);
    }

    #[test]
    fn index_rejects_garbage() {
        assert!(read_index(&b"RFEINDEX\x02\0\0\0"[..]).is_err());
        assert!(read_index(&b"nope"[..]).is_err());
    }
}
