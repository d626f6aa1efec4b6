//! Command-line front end: `train`, `split`, `eval-sim`, `eval-analogy`,
//! `eval-pos` and `probe`.
//!
//! Reports are TSV on the given writer; `--pretty` aligns them for reading.
//! Exit codes: 0 success (possibly with per-dataset errors in the report),
//! 1 usage error, 2 data error.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::Corpus;
use crate::error::Error;
use crate::eval::analogy::{self, AnalogySolver};
use crate::eval::pos::{self, ProbeConfig, TaggedCorpus};
use crate::eval::similarity::{self, WordPairDataset};
use crate::io::{self, Embeddings, Part};
use crate::model::{half_dots, SignSignature};
use crate::train::{self, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "tied-sgns",
    version,
    about = "Tied-weight skip-gram embeddings with x/y subvectors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train embeddings on a whitespace-tokenized corpus.
    Train(TrainArgs),
    /// Write the x or y columns of an embedding file.
    Split(SplitArgs),
    /// Word similarity (Spearman) on one or more datasets.
    EvalSim(EvalSimArgs),
    /// Word analogy accuracy (3CosAdd and 3CosMul).
    EvalAnalogy(EvalAnalogyArgs),
    /// Next-word POS softmax probe.
    EvalPos(EvalPosArgs),
    /// Nearest words by dot product, x·x, -y·y and context score.
    Probe(ProbeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub corpus: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 5)]
    pub negatives: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    pub lr: f32,
    #[arg(long, default_value_t = 1e-4)]
    pub min_lr: f32,
    #[arg(long, default_value_t = 5)]
    pub min_count: u64,
    /// Subsampling threshold; 0 disables subsampling.
    #[arg(long, default_value_t = 1e-4)]
    pub subsample: f64,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Sign split index; defaults to dim / 2.
    #[arg(long)]
    pub split_index: Option<usize>,
    /// Also write the vocabulary as `word<TAB>count`.
    #[arg(long)]
    pub vocab_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    pub embeddings: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub part: Part,
    #[arg(long)]
    pub split_index: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PartArgs {
    /// Parts to evaluate: whole, x, y (comma separated or repeated).
    #[arg(long, value_delimiter = ',', default_value = "whole")]
    pub part: Vec<Part>,
    /// Split index of the vectors; required for x and y.
    #[arg(long)]
    pub split_index: Option<usize>,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Args)]
pub struct EvalSimArgs {
    pub embeddings: PathBuf,
    #[arg(required = true)]
    pub datasets: Vec<PathBuf>,
    #[command(flatten)]
    pub parts: PartArgs,
}

#[derive(Debug, Args)]
pub struct EvalAnalogyArgs {
    pub embeddings: PathBuf,
    #[arg(required = true)]
    pub datasets: Vec<PathBuf>,
    #[command(flatten)]
    pub parts: PartArgs,
    /// Field indices of a, a*, b and the expected answer.
    #[arg(long, value_delimiter = ',', default_values_t = analogy::DEFAULT_COLUMNS)]
    pub columns: Vec<usize>,
    /// Restrict answers to the most frequent words.
    #[arg(long)]
    pub max_vocab: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalPosArgs {
    pub embeddings: PathBuf,
    #[arg(required = true)]
    pub tagged: Vec<PathBuf>,
    #[command(flatten)]
    pub parts: PartArgs,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
    /// Write per-tag confusion counts as TSV.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    pub embeddings: PathBuf,
    pub word: String,
    #[arg(short, default_value_t = 10)]
    pub k: usize,
    /// Sign split index; defaults to half the width.
    #[arg(long)]
    pub split_index: Option<usize>,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult = std::result::Result<(), CliError>;

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Train(args) => cmd_train(args, out),
        Command::Split(args) => cmd_split(args),
        Command::EvalSim(args) => cmd_eval_sim(args, out),
        Command::EvalAnalogy(args) => cmd_eval_analogy(args, out),
        Command::EvalPos(args) => cmd_eval_pos(args, out),
        Command::Probe(args) => cmd_probe(args, out),
    }
}

fn cmd_train(args: TrainArgs, out: &mut dyn Write) -> CliResult {
    let threads = args
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let config = TrainConfig {
        dim: args.dim,
        window: args.window,
        negatives: args.negatives,
        epochs: args.epochs,
        initial_lr: args.lr,
        min_lr: args.min_lr,
        subsample: args.subsample,
        min_count: args.min_count,
        seed: args.seed,
        threads,
        split_index: args.split_index,
    };
    config.validate()?;

    let corpus = Corpus::from_file(&args.corpus, config.min_count)?;
    log::info!(
        "vocabulary: {} words, {} retained tokens",
        corpus.vocab.len(),
        corpus.ids.len()
    );
    let outcome = train::train(&corpus, &config)?;
    io::save(
        &outcome.embeddings,
        corpus.vocab.words(),
        &args.output,
        Part::Whole,
        None,
    )?;
    if let Some(path) = &args.vocab_out {
        corpus.vocab.write_tsv(path)?;
    }
    writeln!(out, "vocab_size\t{}", corpus.vocab.len())?;
    writeln!(out, "pairs\t{}", outcome.pairs)?;
    writeln!(out, "wall_time_s\t{:.3}", outcome.elapsed.as_secs_f64())?;
    Ok(())
}

fn signature(
    d: usize,
    split_index: Option<usize>,
) -> std::result::Result<Option<SignSignature>, CliError> {
    split_index
        .map(|m| SignSignature::new(d, m))
        .transpose()
        .map_err(CliError::from)
}

fn require_signature(
    parts: &[Part],
    d: usize,
    split_index: Option<usize>,
) -> std::result::Result<Option<SignSignature>, CliError> {
    let sig = signature(d, split_index)?;
    if sig.is_none() {
        if let Some(p) = parts.iter().find(|p| **p != Part::Whole) {
            return Err(CliError::Usage(format!(
                "--part {p} requires --split-index"
            )));
        }
    }
    Ok(sig)
}

fn cmd_split(args: SplitArgs) -> CliResult {
    let emb = io::load(&args.embeddings)?;
    let sig = require_signature(&[args.part], emb.dim(), args.split_index)?;
    let selected = emb.select(args.part, sig.as_ref())?;
    io::save(
        selected.matrix(),
        selected.words(),
        &args.output,
        Part::Whole,
        None,
    )?;
    Ok(())
}

/// Load every dataset up front: unreadable files are fatal, malformed
/// contents only fail that dataset.
fn load_datasets<T>(
    paths: &[PathBuf],
    load: impl Fn(&Path) -> crate::Result<T>,
) -> std::result::Result<Vec<(String, crate::Result<T>)>, CliError> {
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(
                || p.display().to_string(),
                |s| s.to_string_lossy().into_owned(),
            );
            match load(p) {
                Err(e @ Error::Io { .. }) => Err(CliError::Data(e.to_string())),
                other => Ok((name, other)),
            }
        })
        .collect()
}

type PartViews = (Vec<(Part, Embeddings)>, Option<SignSignature>);

fn select_parts(emb: &Embeddings, parts: &PartArgs) -> std::result::Result<PartViews, CliError> {
    let sig = require_signature(&parts.part, emb.dim(), parts.split_index)?;
    let selected = parts
        .part
        .iter()
        .map(|&p| Ok((p, emb.select(p, sig.as_ref())?)))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok((selected, sig))
}

fn cmd_eval_sim(args: EvalSimArgs, out: &mut dyn Write) -> CliResult {
    let datasets = load_datasets(&args.datasets, |p| WordPairDataset::load(p))?;
    let emb = io::load(&args.embeddings)?;
    let (parts, _) = select_parts(&emb, &args.parts)?;

    let mut report = Report::new(&["dataset", "part", "metric", "value", "coverage"]);
    for (name, dataset) in &datasets {
        for (part, view) in &parts {
            let row = match dataset {
                Err(e) => Err(e.to_string()),
                Ok(ds) => similarity::evaluate_similarity(view, ds).map_err(|e| e.to_string()),
            };
            match row {
                Ok(res) => report.ok(&[
                    name,
                    &part.to_string(),
                    "spearman",
                    &fmt4(res.rho),
                    &fmt4(res.coverage()),
                ]),
                Err(msg) => report.err(&[name, &part.to_string(), "spearman"], &msg),
            }
        }
    }
    report.finish(out, args.parts.pretty)
}

fn cmd_eval_analogy(args: EvalAnalogyArgs, out: &mut dyn Write) -> CliResult {
    let columns: [usize; 4] = args
        .columns
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Usage("--columns takes exactly four indices".into()))?;
    let datasets = load_datasets(&args.datasets, |p| {
        analogy::load_questions(p, columns).map(|(_, q)| q)
    })?;
    let emb = io::load(&args.embeddings)?;
    let (parts, _) = select_parts(&emb, &args.parts)?;

    let mut report = Report::new(&["dataset", "part", "metric", "value", "coverage"]);
    for (part, view) in &parts {
        let mut solver = AnalogySolver::new(view);
        if let Some(k) = args.max_vocab {
            solver = solver.with_max_vocab(k);
        }
        for (name, questions) in &datasets {
            let part = part.to_string();
            let res = match questions {
                Err(e) => Err(e.to_string()),
                Ok(q) => analogy::evaluate_analogy(&solver, q).map_err(|e| e.to_string()),
            };
            match res {
                Ok(r) => {
                    report.ok(&[
                        name,
                        &part,
                        "3cosadd",
                        &fmt4(r.accuracy_add),
                        &fmt4(r.coverage()),
                    ]);
                    report.ok(&[
                        name,
                        &part,
                        "3cosmul",
                        &fmt4(r.accuracy_mul),
                        &fmt4(r.coverage()),
                    ]);
                }
                Err(msg) => {
                    report.err(&[name, &part, "3cosadd"], &msg);
                    report.err(&[name, &part, "3cosmul"], &msg);
                }
            }
        }
    }
    report.finish(out, args.parts.pretty)
}

fn cmd_eval_pos(args: EvalPosArgs, out: &mut dyn Write) -> CliResult {
    let cfg = ProbeConfig {
        epochs: args.epochs,
        lr: args.lr,
        batch: args.batch,
        l2: args.l2,
        seed: args.seed,
        train_frac: args.train_frac,
    };
    cfg.validate()?;
    let datasets = load_datasets(&args.tagged, |p| TaggedCorpus::load(p))?;
    let emb = io::load(&args.embeddings)?;
    let sig = require_signature(&args.parts.part, emb.dim(), args.parts.split_index)?;

    let mut report = Report::new(&["dataset", "part", "metric", "value", "coverage"]);
    let mut confusion_rows = Vec::new();
    for (name, tagged) in &datasets {
        let tagged = match tagged {
            Ok(t) => t,
            Err(e) => {
                for part in &args.parts.part {
                    report.err(&[name, &part.to_string(), "accuracy"], &e.to_string());
                }
                continue;
            }
        };
        for (part, res) in pos::run_probe(tagged, &emb, &args.parts.part, sig.as_ref(), &cfg) {
            let part_name = part.to_string();
            match res {
                Ok(r) => {
                    let coverage = r.n_test as f64 / r.test_positions.max(1) as f64;
                    report.ok(&[
                        name,
                        &part_name,
                        "accuracy",
                        &fmt4(r.accuracy),
                        &fmt4(coverage),
                    ]);
                    for (gold, row) in r.confusion.iter().enumerate() {
                        for (pred, &count) in row.iter().enumerate() {
                            if count > 0 {
                                confusion_rows.push(format!(
                                    "{name}\t{part_name}\t{}\t{}\t{count}",
                                    tagged.tagset[gold], tagged.tagset[pred]
                                ));
                            }
                        }
                    }
                }
                Err(e) => report.err(&[name, &part_name, "accuracy"], &e.to_string()),
            }
        }
    }

    if let Some(path) = &args.confusion {
        let mut text = String::from("dataset\tpart\tgold\tpredicted\tcount\n");
        for row in &confusion_rows {
            text.push_str(row);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    report.finish(out, args.parts.pretty)
}

/// One neighbour row of [`probe_neighbors`].
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborRow {
    pub word: String,
    /// `w_j·w_i`
    pub dot: f64,
    /// `x_j·x_i`
    pub xx: f64,
    /// `-y_j·y_i`
    pub neg_yy: f64,
    /// `w_j·D w_i = xx - yy`
    pub context: f64,
}

/// Ranking criteria of the probe table, in print order.
pub const PROBE_RANKINGS: [&str; 4] = ["dot", "xx", "neg_yy", "context"];

/// Top-`k` words for each of [`PROBE_RANKINGS`], the query word included.
pub fn probe_neighbors(
    emb: &Embeddings,
    sig: &SignSignature,
    word: &str,
    k: usize,
) -> crate::Result<Vec<(&'static str, Vec<NeighborRow>)>> {
    let query = emb.id(word).ok_or_else(|| {
        let suggestions = near_matches(emb, word);
        let hint = if suggestions.is_empty() {
            String::from("no vocabulary word within edit distance 2")
        } else {
            format!("nearest: {}", suggestions.join(", "))
        };
        Error::InsufficientData(format!("word '{word}' not in vocabulary; {hint}"))
    })?;
    if sig.dim() != emb.dim() {
        return Err(Error::Config(format!(
            "split signature has width {} but vectors have width {}",
            sig.dim(),
            emb.dim()
        )));
    }

    let m = sig.split_index();
    let to64 = |i: usize| -> Vec<f64> { emb.matrix().row(i).iter().map(|&v| v as f64).collect() };
    let q = to64(query);
    let rows: Vec<NeighborRow> = (0..emb.len())
        .map(|i| {
            let (xx, yy) = half_dots(&q, &to64(i), m);
            NeighborRow {
                word: emb.words()[i].clone(),
                dot: xx + yy,
                xx,
                neg_yy: -yy,
                context: xx - yy,
            }
        })
        .collect();

    let k = k.min(rows.len());
    let keys: [fn(&NeighborRow) -> f64; 4] = [|r| r.dot, |r| r.xx, |r| r.neg_yy, |r| r.context];
    Ok(PROBE_RANKINGS
        .iter()
        .zip(keys)
        .map(|(name, key)| {
            let mut order: Vec<usize> = (0..rows.len()).collect();
            // Stable sort keeps the lower id first on equal values.
            order.sort_by(|&a, &b| key(&rows[b]).total_cmp(&key(&rows[a])));
            (*name, order[..k].iter().map(|&i| rows[i].clone()).collect())
        })
        .collect())
}

fn near_matches(emb: &Embeddings, word: &str) -> Vec<String> {
    let mut hits: Vec<(usize, usize)> = emb
        .words()
        .iter()
        .enumerate()
        .filter_map(|(id, w)| {
            let d = strsim::levenshtein(word, w);
            (d <= 2).then_some((d, id))
        })
        .collect();
    hits.sort();
    hits.iter()
        .take(10)
        .map(|&(_, id)| emb.words()[id].clone())
        .collect()
}

fn cmd_probe(args: ProbeArgs, out: &mut dyn Write) -> CliResult {
    let emb = io::load(&args.embeddings)?;
    let sig = match args.split_index {
        Some(m) => SignSignature::new(emb.dim(), m)?,
        None => SignSignature::half(emb.dim())?,
    };
    let tables = probe_neighbors(&emb, &sig, &args.word, args.k)?;
    let mut report = Report::new(&["rank_by", "rank", "word", "dot", "xx", "neg_yy", "context"]);
    for (rank_by, rows) in tables {
        for (rank, row) in rows.iter().enumerate() {
            report.ok(&[
                rank_by,
                &(rank + 1).to_string(),
                &row.word,
                &fmt6(row.dot),
                &fmt6(row.xx),
                &fmt6(row.neg_yy),
                &fmt6(row.context),
            ]);
        }
    }
    report.finish(out, args.pretty)
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// Tabular report with soft per-row errors.
struct Report {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    succeeded: usize,
    failed: usize,
}

impl Report {
    fn new(header: &[&str]) -> Self {
        Report {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
            succeeded: 0,
            failed: 0,
        }
    }

    fn ok(&mut self, cells: &[&str]) {
        self.rows
            .push(cells.iter().map(|c| c.to_string()).collect());
        self.succeeded += 1;
    }

    /// `key` fills the leading columns; the value column reports the error
    /// and any remaining columns get `-`.
    fn err(&mut self, key: &[&str], message: &str) {
        let mut row: Vec<String> = key.iter().map(|c| c.to_string()).collect();
        let message = message.replace(['\t', '\n'], " ");
        row.push(format!("error: {message}"));
        row.resize(self.header.len(), "-".into());
        self.rows.push(row);
        self.failed += 1;
    }

    fn finish(self, out: &mut dyn Write, pretty: bool) -> CliResult {
        let mut w = BufWriter::new(out);
        if pretty {
            let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
            for row in &self.rows {
                for (wd, cell) in widths.iter_mut().zip(row) {
                    *wd = (*wd).max(cell.chars().count());
                }
            }
            let line = |cells: &[String]| {
                cells
                    .iter()
                    .zip(&widths)
                    .map(|(c, wd)| format!("{c:<wd$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
            };
            writeln!(w, "{}", line(&self.header))?;
            writeln!(
                w,
                "{}",
                widths
                    .iter()
                    .map(|wd| "-".repeat(*wd))
                    .collect::<Vec<_>>()
                    .join("  ")
            )?;
            for row in &self.rows {
                writeln!(w, "{}", line(row))?;
            }
        } else {
            writeln!(w, "{}", self.header.join("\t"))?;
            for row in &self.rows {
                writeln!(w, "{}", row.join("\t"))?;
            }
        }
        w.flush()?;
        if self.succeeded == 0 && self.failed > 0 {
            return Err(CliError::Data("every evaluation failed".into()));
        }
        Ok(())
    }
}
