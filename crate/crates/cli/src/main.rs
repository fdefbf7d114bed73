//! `rfe`: re-rank retrieval results, fuse rankers, export embeddings, build
//! and query an offline index, and compute retrieval metrics.
//!
//! Every option can also be set through an environment variable named
//! `RFE_<OPTION>` (for example `RFE_K=40`); command-line flags win.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rfe_core::io::{
    compute_distances, compute_query_distances, read_distance_matrix, read_features, read_index,
    read_ranked_lists, write_embeddings, write_index, write_ranked_list, write_ranked_lists, DistanceMetric,
    FeatureFormat, FeatureTable, LabelTable,
};
use rfe_core::metrics::standard_report;
use rfe_core::{
    query_unseen, run_aggregation, run_rfe, QueryMode, RankedList, RankedListSet, RelevanceOracle,
    RfeConfig,
};

#[derive(Parser, Debug)]
#[command(name = "rfe", version, about = "Rank-flow re-ranking for retrieval results")]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalOpts {
    /// Neighborhood size (defaults to the preset's value, else 20).
    #[arg(long, global = true, env = "RFE_K")]
    k: Option<usize>,
    /// Truncation depth L (default: min(n, max(20k, 200))).
    #[arg(long = "L", global = true, env = "RFE_L")]
    depth: Option<usize>,
    /// Sigmoid steepness of the rank normalization.
    #[arg(long, global = true, env = "RFE_ALPHA")]
    alpha: Option<f64>,
    /// Hypergraph re-ranking rounds.
    #[arg(long, global = true, env = "RFE_ITERATIONS")]
    iterations: Option<usize>,
    /// Stop after the Cartesian-product stage.
    #[arg(long, global = true, env = "RFE_SKIP_CC")]
    skip_cc: bool,
    /// Dataset preset for the default k (flowers, corel5k, holidays, ukbench, ...).
    #[arg(long, global = true, env = "RFE_PRESET")]
    preset: Option<String>,
    /// Distance for feature inputs.
    #[arg(long, global = true, env = "RFE_METRIC", default_value = "euclidean")]
    metric: MetricArg,
    /// `id<sep>label` file; enables metric reports.
    #[arg(long, global = true, env = "RFE_LABELS")]
    labels: Option<PathBuf>,
    /// Evaluation protocol.
    #[arg(long, global = true, env = "RFE_SELF_MODE", default_value = "included")]
    self_mode: ModeArg,
    /// Recall cutoff for metric reports (default: the smallest class size).
    #[arg(long, global = true, env = "RFE_RECALL_AT")]
    recall_at: Option<usize>,
    /// Output file (default: standard output).
    #[arg(long, short, global = true, env = "RFE_OUTPUT")]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Euclidean,
    Cosine,
}

impl From<MetricArg> for DistanceMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => DistanceMetric::Euclidean,
            MetricArg::Cosine => DistanceMetric::Cosine,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Included,
    Excluded,
    Gallery,
}

impl From<ModeArg> for QueryMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Included => QueryMode::SelfIncluded,
            ModeArg::Excluded => QueryMode::SelfExcluded,
            ModeArg::Gallery => QueryMode::Gallery,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Text,
    Binary,
}

/// Exactly one collection source.
#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct Input {
    /// Feature table (text with header, or binary with --format binary).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Square distance matrix, one row per line.
    #[arg(long)]
    distances: Option<PathBuf>,
    /// Ranked lists, `<query_id>: <id> <id> ...` per line.
    #[arg(long)]
    lists: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Re-rank a collection and write the refined lists.
    Rerank {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "text")]
        format: FormatArg,
    },
    /// Fuse several ranked-list files over the same collection.
    Fuse {
        /// Ranked-list files; the first one defines identifiers and tie order.
        #[arg(long = "lists", required = true, num_args = 1..)]
        lists: Vec<PathBuf>,
    },
    /// Write per-object classification embeddings (`id,v1,...,vm`).
    Embed {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "text")]
        format: FormatArg,
        /// Scale each embedding to unit length.
        #[arg(long)]
        l2: bool,
    },
    /// Build the offline index for later unseen-query lookups.
    Index {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "text")]
        format: FormatArg,
    },
    /// Rank an indexed collection for queries outside it.
    Query {
        /// Index written by `rfe index`.
        #[arg(long)]
        index: PathBuf,
        /// Query features.
        #[arg(long, required_unless_present = "distances")]
        queries: Option<PathBuf>,
        /// Collection features, in index order, for computing query distances.
        #[arg(long, requires = "queries")]
        collection: Option<PathBuf>,
        /// Query-by-collection distance rows instead of features.
        #[arg(long, conflicts_with_all = ["queries", "collection"])]
        distances: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: FormatArg,
    },
    /// Report metrics for existing ranked lists.
    Eval {
        #[arg(long)]
        lists: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("RFE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn config(opts: &GlobalOpts) -> RfeConfig {
    let mut cfg = opts.preset.as_deref().map_or_else(RfeConfig::default, RfeConfig::preset);
    if let Some(k) = opts.k {
        cfg.k = k;
    }
    cfg.depth = opts.depth;
    if let Some(a) = opts.alpha {
        cfg.alpha = a;
    }
    if let Some(t) = opts.iterations {
        cfg.iterations = t;
    }
    cfg.run_cc_stage = !opts.skip_cc;
    cfg
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn output(opts: &GlobalOpts) -> Result<Box<dyn Write>> {
    Ok(match &opts.output {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_features(path: &Path, format: FormatArg) -> Result<FeatureTable> {
    let fmt = match format {
        FormatArg::Text => FeatureFormat::Text,
        FormatArg::Binary => FeatureFormat::Binary,
    };
    read_features(open(path)?, fmt).with_context(|| format!("reading features from {}", path.display()))
}

/// Loads the collection as full-depth ranked lists plus identifiers.
fn load_collection(input: &Input, format: FormatArg, opts: &GlobalOpts) -> Result<(RankedListSet, Vec<String>)> {
    if let Some(p) = &input.features {
        let table = load_features(p, format)?;
        info!("{} objects with {} features", table.n(), table.dim());
        let d = compute_distances(&table, opts.metric.into())?;
        return Ok((RankedListSet::from_distances(&d, table.n().max(1))?, table.ids));
    }
    if let Some(p) = &input.distances {
        let d = read_distance_matrix(open(p)?).with_context(|| format!("reading {}", p.display()))?;
        let ids = (0..d.len()).map(|i| i.to_string()).collect();
        return Ok((RankedListSet::from_distances(&d, d.len().max(1))?, ids));
    }
    let p = input.lists.as_ref().expect("clap enforces one input");
    read_ranked_lists(open(p)?, None).with_context(|| format!("reading {}", p.display()))
}

fn smallest_class(classes: &[usize]) -> usize {
    let mut sizes: HashMap<usize, usize> = HashMap::new();
    for &c in classes {
        *sizes.entry(c).or_default() += 1;
    }
    sizes.values().copied().min().unwrap_or(1)
}

/// Prints before/after metrics to stderr when labels were given.
fn report_collection(opts: &GlobalOpts, ids: &[String], before: &RankedListSet, after: &RankedListSet) -> Result<()> {
    let Some(path) = &opts.labels else {
        return Ok(());
    };
    if opts.self_mode == ModeArg::Gallery {
        bail!("--self-mode gallery only applies to `query` and `eval`");
    }
    let classes = LabelTable::read(open(path)?)?.class_ids(ids)?;
    let cutoff = opts.recall_at.unwrap_or_else(|| smallest_class(&classes));
    let oracle = RelevanceOracle::whole_collection(classes, opts.self_mode.into())?;
    let mut text = standard_report("input_", before.lists(), &oracle, cutoff).to_text();
    text += &standard_report("", after.lists(), &oracle, cutoff).to_text();
    eprint!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let opts = &cli.opts;
    let cfg = config(opts);
    match &cli.command {
        Command::Rerank { input, format } => {
            let (lists, ids) = load_collection(input, *format, opts)?;
            let (out, _) = run_rfe(&lists, &cfg)?;
            let mut w = output(opts)?;
            write_ranked_lists(&mut w, &out, &ids)?;
            w.flush()?;
            report_collection(opts, &ids, &lists, &out)
        }
        Command::Fuse { lists } => {
            let first = read_ranked_lists(open(&lists[0])?, None)?;
            let ids = first.1;
            let mut sets = vec![first.0];
            for p in &lists[1..] {
                let (s, _) = read_ranked_lists(open(p)?, Some(&ids))
                    .with_context(|| format!("reading {}", p.display()))?;
                sets.push(s);
            }
            let (out, _) = run_aggregation(&sets, &cfg)?;
            let mut w = output(opts)?;
            write_ranked_lists(&mut w, &out, &ids)?;
            w.flush()?;
            report_collection(opts, &ids, &sets[0], &out)
        }
        Command::Embed { input, format, l2 } => {
            let (lists, ids) = load_collection(input, *format, opts)?;
            let cfg = RfeConfig {
                emit_embeddings: true,
                normalize_embeddings: *l2,
                ..cfg
            };
            let (_, index) = run_rfe(&lists, &cfg)?;
            let emb = index.embeddings.as_ref().expect("embeddings requested");
            let mut w = output(opts)?;
            write_embeddings(&mut w, emb, &ids)?;
            Ok(w.flush()?)
        }
        Command::Index { input, format } => {
            if opts.output.is_none() {
                bail!("`index` writes a binary file; pass --output");
            }
            let (lists, ids) = load_collection(input, *format, opts)?;
            let (_, index) = run_rfe(&lists, &cfg)?;
            let mut w = output(opts)?;
            write_index(&mut w, &index, &ids)?;
            Ok(w.flush()?)
        }
        Command::Query {
            index,
            queries,
            collection,
            distances,
            format,
        } => {
            let (index, ids) = read_index(open(index)?).context("reading index")?;
            let k = opts.k.unwrap_or(index.config.k);
            let (query_ids, rows) = match (queries, distances) {
                (Some(q), _) => {
                    let q = load_features(q, *format)?;
                    let Some(c) = collection else {
                        bail!("--queries needs --collection with the indexed features");
                    };
                    let c = load_features(c, *format)?;
                    if c.n() != index.n() {
                        bail!("collection has {} objects but the index has {}", c.n(), index.n());
                    }
                    let d = compute_query_distances(&q, &c, opts.metric.into())?;
                    (q.ids, d)
                }
                (None, Some(d)) => {
                    let rows = read_query_distances(open(d)?, index.n())?;
                    ((0..rows.len()).map(|i| format!("q{i}")).collect(), rows)
                }
                (None, None) => bail!("pass --queries or --distances"),
            };
            let mut answers = Vec::with_capacity(rows.len());
            let mut out = output(opts)?;
            for (qid, mut row) in query_ids.iter().zip(rows) {
                row.sort_by(|a, b| a.1.total_cmp(&b.1));
                let list = query_unseen(&index, &row, k)?;
                write_ranked_list(&mut out, &list, qid, &ids)?;
                answers.push(list);
            }
            out.flush()?;
            if let Some(path) = &opts.labels {
                let labels = LabelTable::read(open(path)?)?;
                let (qc, gc) = labels.class_ids_pair(&query_ids, &ids)?;
                let lists = answers
                    .iter()
                    .enumerate()
                    .map(|(q, l)| RankedList::new(q, l.entries().to_vec()))
                    .collect::<rfe_core::Result<Vec<_>>>()?;
                let cutoff = opts.recall_at.unwrap_or_else(|| smallest_class(&gc));
                let oracle = RelevanceOracle::gallery(qc, gc);
                eprint!("{}", standard_report("", &lists, &oracle, cutoff).to_text());
            }
            Ok(())
        }
        Command::Eval { lists } => {
            let Some(labels) = &opts.labels else {
                bail!("`eval` needs --labels");
            };
            let labels = LabelTable::read(open(labels)?)?;
            let (lists, oracle, gallery) = if opts.self_mode == ModeArg::Gallery {
                let (queries, gallery, lists) = read_gallery_lists(open(lists)?)?;
                let (qc, gc) = labels.class_ids_pair(&queries, &gallery)?;
                (lists, RelevanceOracle::gallery(qc, gc.clone()), gc)
            } else {
                let (set, ids) = read_ranked_lists(open(lists)?, None)?;
                let classes = labels.class_ids(&ids)?;
                let oracle = RelevanceOracle::whole_collection(classes.clone(), opts.self_mode.into())?;
                (set.lists().to_vec(), oracle, classes)
            };
            let cutoff = opts.recall_at.unwrap_or_else(|| smallest_class(&gallery));
            let report = standard_report("", &lists, &oracle, cutoff);
            let mut w = output(opts)?;
            w.write_all(report.to_text().as_bytes())?;
            Ok(w.flush()?)
        }
    }
}

/// Rows of `n` distances from each query to the indexed collection.
fn read_query_distances<R: BufRead>(reader: R, n: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .map(|f| f.parse::<f64>().with_context(|| format!("line {}: '{f}' is not a number", i + 1)))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != n {
            bail!("line {}: {} distances for an index of {n}", i + 1, row.len());
        }
        rows.push(row.into_iter().enumerate().collect());
    }
    Ok(rows)
}

/// Ranked lists whose items are gallery identifiers distinct from the
/// queries. Gallery identifiers are numbered in sorted order.
fn read_gallery_lists<R: BufRead>(reader: R) -> Result<(Vec<String>, Vec<String>, Vec<RankedList>)> {
    let mut raw = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((q, rest)) = line.split_once(':') else {
            bail!("line {}: expected '<query_id>: <ids...>'", i + 1);
        };
        raw.push((q.trim().to_string(), rest.split_whitespace().map(str::to_string).collect::<Vec<_>>()));
    }
    let gallery: Vec<String> = raw
        .iter()
        .flat_map(|(_, items)| items.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<&str, usize> = gallery.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let lists = raw
        .iter()
        .enumerate()
        .map(|(q, (_, items))| {
            let entries = items.iter().enumerate().map(|(p, id)| (index[id.as_str()], 1.0 / (p + 1) as f64));
            RankedList::new(q, entries.collect())
        })
        .collect::<rfe_core::Result<Vec<_>>>()?;
    let queries = raw.into_iter().map(|(q, _)| q).collect();
    Ok((queries, gallery, lists))
}
