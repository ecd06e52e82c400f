//! Command-line front end. Every command is a thin layer over the library;
//! `run` writes tables to `out` and progress or warnings to `log`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use crate::datamodel::{
    load_model, model_to_bytes, save_embeddings, AttributeContext, CooccurrenceMatrix, EmbeddingModel,
    HyperParams, Vocabulary, VocabularyMaps,
};
use crate::error::{Error, Result};
use crate::eval::{
    cluster_order, correlation_matrix, describe_embedding, retrieve_labels, write_correlation_tsv,
    DEFAULT_COVERAGE, DEFAULT_TOP_ATTRIBUTES,
};
use crate::ingest::{
    build_cooccurrence, hierarchy_labels, hierarchy_to_relations, read_attribute_table, read_hierarchy,
    read_relations, read_sparse_cooccurrence, relation_vocabulary, write_sparse_cooccurrence,
};
use crate::trainer::{train, train_generalized, TrainingHistory};

/// Candidate values for each λ during grid search.
pub const GRID: [f64; 5] = [1e-2, 1e-1, 1.0, 1e1, 1e2];

#[derive(Debug, Parser)]
#[command(name = "phcle", version, about = "Label embeddings from partially observed contexts")]
pub struct Cli {
    /// Emit tab-separated output instead of aligned tables.
    #[arg(long, global = true)]
    pub tsv: bool,

    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Build a sparse co-occurrence file from relations or a hierarchy.
    BuildCooc(BuildCoocArgs),
    /// Train an embedding model.
    Train(TrainArgs),
    /// Nearest labels to a query label.
    Retrieve(RetrieveArgs),
    /// Correlation matrix of a label subset, optionally cluster ordered.
    Correlate(CorrelateArgs),
    /// Related labels and top attributes of an embedding vector.
    Describe(DescribeArgs),
    /// Write label embeddings in the text format.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["hierarchy", "relations"])))]
pub struct BuildCoocArgs {
    /// `parent<TAB>child` edges.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// `label<TAB>context[<TAB>weight]` rows.
    #[arg(long)]
    pub relations: Option<PathBuf>,
    /// Hop radius for hierarchy relations.
    #[arg(long, default_value_t = 2)]
    pub radius: usize,
    /// Weight multiplier per extra hop.
    #[arg(long, default_value_t = 0.5)]
    pub decay: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Sparse co-occurrence file.
    #[arg(long)]
    pub cooc: PathBuf,
    /// Attribute table; repeat for several descriptive contexts.
    #[arg(long)]
    pub attrs: Vec<PathBuf>,
    /// `key=value` hyperparameter file; missing keys use defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training history TSV (default: `<out>.history.tsv`).
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Scoring command run through `sh -c` for every (λ1, λ2, λ3) on the
    /// grid; its last stdout line is the score, higher is better.
    #[arg(long, value_name = "CMD")]
    pub grid_search: Option<String>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 5)]
    pub topk: usize,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One label name per line.
    #[arg(long)]
    pub labels: PathBuf,
    /// Reorder by average-linkage clustering and report this many clusters.
    #[arg(long)]
    pub clusters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// File holding one whitespace-separated line of floats.
    #[arg(long)]
    pub vector: PathBuf,
    #[arg(long, default_value_t = DEFAULT_COVERAGE)]
    pub coverage: f64,
    #[arg(long, default_value_t = DEFAULT_TOP_ATTRIBUTES)]
    pub top_attrs: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run<O: Write, L: Write>(cli: &Cli, out: &mut O, log: &mut L) -> Result<()> {
    match &cli.command {
        Cmd::BuildCooc(a) => build_cooc(a, cli.tsv, out),
        Cmd::Train(a) => train_cmd(a, out, log),
        Cmd::Retrieve(a) => retrieve(a, cli.tsv, out),
        Cmd::Correlate(a) => correlate(a, cli.tsv, out),
        Cmd::Describe(a) => describe(a, cli.tsv, out),
        Cmd::Export(a) => export(a),
    }
}

/// Aligned table: left-justified text columns, one space-padded gap.
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: Vec<&'static str>) -> Self {
        Table {
            header,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn write<W: Write>(&self, out: &mut W, tsv: bool) -> Result<()> {
        if tsv {
            writeln!(out, "{}", self.header.join("\t"))?;
            for r in &self.rows {
                writeln!(out, "{}", r.join("\t"))?;
            }
            return Ok(());
        }
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: Vec<&str>| {
            let last = cells.len() - 1;
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| if i == last { c.to_string() } else { format!("{c:<w$}", w = widths[i]) })
                .collect::<Vec<_>>()
                .join("  ")
        };
        writeln!(out, "{}", line(self.header.clone()))?;
        for r in &self.rows {
            writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))?;
        }
        Ok(())
    }
}

/// Full precision for TSV, six decimals for tables.
fn num(v: f64, tsv: bool) -> String {
    if tsv {
        format!("{v}")
    } else {
        format!("{v:.6}")
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn build_cooc<O: Write>(a: &BuildCoocArgs, tsv: bool, out: &mut O) -> Result<()> {
    let (records, vocab) = if let Some(h) = &a.hierarchy {
        let edges = read_hierarchy(open(h)?)?;
        let nodes = hierarchy_labels(&edges)?;
        let records = hierarchy_to_relations(&edges, a.radius, a.decay)?;
        (records, VocabularyMaps::new(nodes.clone(), nodes, Vocabulary::default()))
    } else {
        let path = a.relations.as_ref().expect("clap enforces one source");
        let records = read_relations(open(path)?)?;
        let (labels, contexts) = relation_vocabulary(&records)?;
        (records, VocabularyMaps::new(labels, contexts, Vocabulary::default()))
    };
    let d = build_cooccurrence(&records, &vocab)?;
    write_sparse_cooccurrence(BufWriter::new(File::create(&a.out)?), &d, &vocab)?;
    let mut t = Table::new(vec!["quantity", "value"]);
    t.push(vec!["labels".into(), vocab.labels.len().to_string()]);
    t.push(vec!["contexts".into(), vocab.contexts.len().to_string()]);
    t.push(vec!["nnz".into(), d.nnz().to_string()]);
    t.write(out, tsv)
}

/// Loaded training inputs.
struct TrainData {
    d: CooccurrenceMatrix,
    labels: Vocabulary,
    contexts: Vocabulary,
    attrs: Vec<(Vocabulary, AttributeContext)>,
}

impl TrainData {
    fn load(a: &TrainArgs) -> Result<Self> {
        let (d, labels, contexts) = read_sparse_cooccurrence(open(&a.cooc)?)?;
        let mut attrs = Vec::new();
        for path in &a.attrs {
            let table = read_attribute_table(open(path)?, &labels)
                .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
            attrs.push((table.attributes, table.context));
        }
        Ok(TrainData {
            d,
            labels,
            contexts,
            attrs,
        })
    }

    /// Attribute names of every table side by side; they must not repeat.
    fn vocab(&self) -> Result<VocabularyMaps> {
        let names: Vec<&str> = self.attrs.iter().flat_map(|(v, _)| v.names().iter().map(String::as_str)).collect();
        let attributes = Vocabulary::new(names).map_err(|e| Error::invalid(format!("attribute tables: {e}")))?;
        Ok(VocabularyMaps::new(self.labels.clone(), self.contexts.clone(), attributes))
    }

    fn fit(&self, hyper: &HyperParams, vocab: &VocabularyMaps) -> Result<(EmbeddingModel, TrainingHistory)> {
        match self.attrs.as_slice() {
            [] => {
                let empty = AttributeContext::fully_observed(Array2::zeros((self.labels.len(), 0)))?;
                train(&self.d, &empty, hyper, vocab)
            }
            [(_, ctx)] => train(&self.d, ctx, hyper, vocab),
            many => {
                let ctxs: Vec<AttributeContext> = many.iter().map(|(_, c)| c.clone()).collect();
                let (m, history) = train_generalized(std::slice::from_ref(&self.d), &ctxs, hyper)?;
                let u = m.concatenated_descriptions();
                let c = m.contexts.into_iter().next().expect("one relational context");
                Ok((EmbeddingModel { w: m.w, c, u }, history))
            }
        }
    }
}

fn write_history(path: &Path, history: &TrainingHistory) -> Result<()> {
    history.write_tsv(BufWriter::new(File::create(path)?))
}

fn history_path(a: &TrainArgs) -> PathBuf {
    a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.tsv");
        p.into()
    })
}

fn load_config<L: Write>(path: Option<&Path>, log: &mut L) -> Result<HyperParams> {
    let text = match path {
        Some(p) => fs::read_to_string(p)?,
        None => String::new(),
    };
    let (hyper, defaulted) = HyperParams::from_config_str(&text)?;
    let defaults = HyperParams::default().to_config_string();
    for key in defaulted {
        if let Some(line) = defaults.lines().find(|l| l.split('=').next() == Some(key)) {
            writeln!(log, "config: {key} not set, using default {line}")?;
        }
    }
    Ok(hyper)
}

fn train_cmd<O: Write, L: Write>(a: &TrainArgs, out: &mut O, log: &mut L) -> Result<()> {
    let mut hyper = load_config(a.config.as_deref(), log)?;
    let data = TrainData::load(a)?;
    let vocab = data.vocab()?;
    if let Some(cmd) = &a.grid_search {
        hyper = grid_search(&data, &vocab, hyper, cmd, &a.out, out, log)?;
    }
    let (model, history) = data.fit(&hyper, &vocab)?;
    let bytes = model_to_bytes(&model, &vocab, &hyper)?;
    fs::write(&a.out, bytes)?;
    write_history(&history_path(a), &history)?;
    writeln!(
        log,
        "trained {} labels x {} dims: objective {} -> {} over {} iterations",
        vocab.labels.len(),
        model.dim(),
        history.initial_objective().unwrap_or(f64::NAN),
        history.final_objective().unwrap_or(f64::NAN),
        history.records.len() - 1
    )?;
    Ok(())
}

/// Exhaustive search over `GRID³` for (λ1, λ2, λ3). Each candidate is
/// written to `<out>.candidate` and scored by `cmd`, which sees the path in
/// `PHCLE_MODEL` and the values in `PHCLE_LAMBDA1..3`. Diverged candidates
/// are skipped; ties keep the earlier candidate.
fn grid_search<O: Write, L: Write>(
    data: &TrainData,
    vocab: &VocabularyMaps,
    base: HyperParams,
    cmd: &str,
    out_path: &Path,
    out: &mut O,
    log: &mut L,
) -> Result<HyperParams> {
    let mut candidate = out_path.as_os_str().to_owned();
    candidate.push(".candidate");
    let candidate = PathBuf::from(candidate);
    let mut table = Table::new(vec!["lambda1", "lambda2", "lambda3", "score"]);
    let mut best: Option<(f64, HyperParams)> = None;
    for &l1 in &GRID {
        for &l2 in &GRID {
            for &l3 in &GRID {
                let hyper = HyperParams {
                    lambda1: l1,
                    lambda2: l2,
                    lambda3: l3,
                    ..base.clone()
                };
                let row = |s: String| vec![l1.to_string(), l2.to_string(), l3.to_string(), s];
                let (model, _) = match data.fit(&hyper, vocab) {
                    Ok(r) => r,
                    Err(e @ (Error::Diverged { .. } | Error::NonFinite(_))) => {
                        writeln!(log, "grid: lambda1={l1} lambda2={l2} lambda3={l3} skipped: {e}")?;
                        table.push(row("diverged".into()));
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                fs::write(&candidate, model_to_bytes(&model, vocab, &hyper)?)?;
                let score = score_candidate(cmd, &candidate, &hyper)?;
                writeln!(log, "grid: lambda1={l1} lambda2={l2} lambda3={l3} score={score}")?;
                table.push(row(score.to_string()));
                if best.as_ref().is_none_or(|(b, _)| score > *b) {
                    best = Some((score, hyper));
                }
            }
        }
    }
    let _ = fs::remove_file(&candidate);
    table.write(out, true)?;
    let (score, hyper) = best.ok_or_else(|| Error::invalid("every grid candidate diverged"))?;
    writeln!(
        out,
        "best\tlambda1={}\tlambda2={}\tlambda3={}\tscore={score}",
        hyper.lambda1, hyper.lambda2, hyper.lambda3
    )?;
    Ok(hyper)
}

fn score_candidate(cmd: &str, model: &Path, hyper: &HyperParams) -> Result<f64> {
    let output = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .env("PHCLE_MODEL", model)
        .env("PHCLE_LAMBDA1", hyper.lambda1.to_string())
        .env("PHCLE_LAMBDA2", hyper.lambda2.to_string())
        .env("PHCLE_LAMBDA3", hyper.lambda3.to_string())
        .output()?;
    if !output.status.success() {
        return Err(Error::invalid(format!("scoring command failed with {}", output.status)));
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    let last = stdout.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
    last.parse::<f64>()
        .ok()
        .filter(|s| !s.is_nan())
        .ok_or_else(|| Error::invalid(format!("scoring command printed '{last}', expected a number")))
}

fn retrieve<O: Write>(a: &RetrieveArgs, tsv: bool, out: &mut O) -> Result<()> {
    let (model, vocab, _) = load_model(&a.model)?;
    let hits = retrieve_labels(&model, &vocab, &a.query, a.topk)?;
    let mut t = Table::new(vec!["rank", "label", "similarity"]);
    for (i, n) in hits.iter().enumerate() {
        t.push(vec![(i + 1).to_string(), n.label.clone(), num(n.similarity, tsv)]);
    }
    t.write(out, tsv)
}

fn read_label_list(path: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for line in open(path)?.lines() {
        let line = line?;
        let name = line.trim();
        if !name.is_empty() && !name.starts_with('#') {
            names.push(name.to_owned());
        }
    }
    Ok(names)
}

fn correlate<O: Write>(a: &CorrelateArgs, tsv: bool, out: &mut O) -> Result<()> {
    let (model, vocab, _) = load_model(&a.model)?;
    let mut names = read_label_list(&a.labels)?;
    let mut corr = correlation_matrix(&model, &vocab, &names)?;
    let mut assignments = None;
    if let Some(k) = a.clusters {
        let ordering = cluster_order(&corr, k)?;
        let order = &ordering.order;
        corr = Array2::from_shape_fn(corr.dim(), |(i, j)| corr[(order[i], order[j])]);
        assignments = Some(order.iter().map(|&i| (names[i].clone(), ordering.assignments[i])).collect::<Vec<_>>());
        names = order.iter().map(|&i| names[i].clone()).collect();
    }
    if tsv {
        write_correlation_tsv(&mut *out, &names, &corr)?;
    } else {
        let width = names.iter().map(|n| n.chars().count()).max().unwrap_or(0).max(5);
        let cell = names.iter().map(|n| n.chars().count()).max().unwrap_or(0).max(6);
        write!(out, "{:<width$}", "label")?;
        for n in &names {
            write!(out, "  {n:>cell$}")?;
        }
        writeln!(out)?;
        for (i, n) in names.iter().enumerate() {
            write!(out, "{n:<width$}")?;
            for v in corr.row(i) {
                write!(out, "  {:>cell$}", format!("{v:.3}"))?;
            }
            writeln!(out)?;
        }
    }
    if let Some(assign) = assignments {
        writeln!(out)?;
        let mut t = Table::new(vec!["label", "cluster"]);
        for (n, c) in assign {
            t.push(vec![n, c.to_string()]);
        }
        t.write(out, tsv)?;
    }
    Ok(())
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty vector file".into(),
        })?;
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                line: 1,
                msg: format!("non-numeric value '{t}'"),
            })
        })
        .collect()
}

fn describe<O: Write>(a: &DescribeArgs, tsv: bool, out: &mut O) -> Result<()> {
    let (model, vocab, _) = load_model(&a.model)?;
    let star = read_vector(&a.vector)?;
    let desc = describe_embedding(&model, &vocab, &star, a.coverage, a.top_attrs)?;
    let mut related = Table::new(vec!["rank", "label", "similarity", "percent"]);
    for (i, r) in desc.related.iter().enumerate() {
        related.push(vec![(i + 1).to_string(), r.label.clone(), num(r.similarity, tsv), num(r.percent, tsv)]);
    }
    related.write(out, tsv)?;
    writeln!(out)?;
    let mut attrs = Table::new(vec!["rank", "attribute", "score"]);
    for (i, s) in desc.attributes.iter().enumerate() {
        attrs.push(vec![(i + 1).to_string(), s.attribute.clone(), num(s.score, tsv)]);
    }
    attrs.write(out, tsv)
}

fn export(a: &ExportArgs) -> Result<()> {
    let (model, vocab, _) = load_model(&a.model)?;
    save_embeddings(&a.out, &model, &vocab)
}
