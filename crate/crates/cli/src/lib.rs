//! Command implementations behind the `locatednear` binary.
//!
//! Relative paths are resolved against the data directory (`--data-dir` or
//! `LOCNEAR_DATA_DIR`) when one is given. Commands that produce a table
//! write it to `--out`, or to stdout without one.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use locatednear::aggregate::{
    extract_triples, read_confs, read_scores, write_conceptnet, write_confs, write_scores, FChoice,
    Triple,
};
use locatednear::config::{ClassifierKind, PipelineConfig};
use locatednear::corpus::{
    cooccurrence_counts, generate_instances, index_sentences, load_conllu, load_labeled_dataset,
    load_vocab, read_instance_rows, read_labeled_rows, resolve_instance_rows, write_instances,
    PairKey,
};
use locatednear::embeddings::{load_embeddings, EmbeddingTable};
use locatednear::metrics::{
    classification_metrics, majority_baseline, ranking_metrics, read_gold_pairs,
    ClassificationReport, RankingReport, REPORT_CUTOFFS,
};
use locatednear::pipeline::{conf_rows, rank_pairs, train, Classifier};
use locatednear::synth::{self, SynthConfig};

pub const DATA_DIR_ENV: &str = "LOCNEAR_DATA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "locatednear",
    version,
    about = "Extract LocatedNear object pairs from parsed text"
)]
pub struct Cli {
    /// Base directory for relative paths.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,

    /// Flat key = value configuration file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ground candidate instances for every object pair in each sentence.
    Ingest(IngestArgs),
    /// Train an SVM or LSTM classifier and report held-out metrics.
    Train(TrainArgs),
    /// Assign a confidence to every instance.
    Classify(ClassifyArgs),
    /// Pool confidences per pair and rank the pairs.
    Aggregate(AggregateArgs),
    /// Emit LocatedNear triples whose f3 score reaches the threshold.
    Extract(ExtractArgs),
    /// Classification or ranking report against gold labels.
    Evaluate(EvaluateArgs),
    /// Write a synthetic labeled corpus with gold parses.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Instance TSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Pairs co-occurring in more than this many sentences count as frequent.
    #[arg(long)]
    pub cooccurrence_threshold: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Classifier kind: svm or lstm.
    #[arg(long)]
    pub kind: Option<ClassifierKind>,
    /// Labeled TSV: sentence_id, e1, e2, label.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub parses: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Token stream for the LSTM: word, pos or norm.
    #[arg(long)]
    pub variant: Option<String>,
    /// SVM feature families, e.g. `all` or `all,-GF`.
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long)]
    pub holdout: Option<f64>,
    /// Metrics report path (stdout when absent).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub parses: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub confs: PathBuf,
    /// Scoring function f0..f4.
    #[arg(long = "f")]
    pub f_choice: Option<FChoice>,
    /// Keep only the top k pairs.
    #[arg(long)]
    pub top: Option<usize>,
    /// Keep only pairs scoring at least this much.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Instance confidences; scored with f3.
    #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
    pub confs: Option<PathBuf>,
    /// Ranked f3 pair scores from `aggregate`.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Write ConceptNet-style lines instead of a TSV.
    #[arg(long)]
    pub conceptnet: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Instance confidences to score against `--labels`.
    #[arg(long, requires = "labels")]
    pub predictions: Option<PathBuf>,
    /// Labeled TSV: sentence_id, e1, e2, label.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Ranked pair scores to score against `--gold-pairs`.
    #[arg(long, requires = "gold_pairs")]
    pub ranking: Option<PathBuf>,
    /// Instance confidences; every scoring function is ranked against `--gold-pairs`.
    #[arg(long, requires = "gold_pairs")]
    pub confs: Option<PathBuf>,
    /// Gold pair TSV: e1, e2, label.
    #[arg(long)]
    pub gold_pairs: Option<PathBuf>,
    /// Row name for the classifier in classification reports.
    #[arg(long, default_value = "model")]
    pub name: String,
    /// Aligned plain-text table instead of TSV.
    #[arg(long)]
    pub text: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of sentences.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub sentences_per_pair: usize,
    #[arg(long, default_value_t = 50)]
    pub embedding_dim: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Shared per-invocation state.
pub struct Session {
    pub data_dir: Option<PathBuf>,
    pub config: PipelineConfig,
}

impl Session {
    pub fn new(cli: &Cli) -> Result<Session> {
        let data_dir = cli.data_dir.clone();
        let resolve = |p: &Path| match &data_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        };
        let mut config = match &cli.config {
            Some(p) => PipelineConfig::load(resolve(p))?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config.set("seed", &seed.to_string())?;
        }
        Ok(Session { data_dir, config })
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        match &self.data_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn emit(&self, out: Option<&Path>, text: &str) -> Result<()> {
        match out {
            Some(p) => {
                let p = self.path(p);
                if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent)
                        .with_context(|| format!("creating {}", parent.display()))?;
                }
                std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
            }
            None => {
                std::io::stdout().write_all(text.as_bytes())?;
                Ok(())
            }
        }
    }

    fn open(&self, p: &Path) -> Result<BufReader<File>> {
        let p = self.path(p);
        let f = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
        Ok(BufReader::new(f))
    }

    fn embeddings(&self, p: &Path) -> Result<EmbeddingTable> {
        let p = self.path(p);
        load_embeddings(&p, None).with_context(|| format!("loading embeddings {}", p.display()))
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Session::new(cli)?;
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Classify(a) => classify(&ctx, a),
        Command::Aggregate(a) => aggregate(&ctx, a),
        Command::Extract(a) => extract(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Synth(a) => synth_cmd(&ctx, a),
    }
}

pub fn ingest(ctx: &Session, a: &IngestArgs) -> Result<()> {
    let sentences = load_conllu(ctx.path(&a.corpus))?;
    let vocab = load_vocab(ctx.path(&a.vocab))?;
    let n_sentences = sentences.len();
    let instances: Vec<_> = sentences
        .into_iter()
        .map(Arc::new)
        .flat_map(|s| generate_instances(&s, &vocab))
        .collect();
    let counts = cooccurrence_counts(&instances);
    let threshold = a
        .cooccurrence_threshold
        .unwrap_or(ctx.config.cooccurrence_threshold);
    let frequent = counts.values().filter(|&&c| c > threshold).count();
    ctx.emit(Some(&a.out), &write_instances(&instances))?;
    let summary = format!(
        "sentences\tinstances\tpairs\tfrequent_pairs\n{}\t{}\t{}\t{}\n",
        n_sentences,
        instances.len(),
        counts.len(),
        frequent
    );
    ctx.emit(None, &summary)
}

pub fn train_cmd(ctx: &Session, a: &TrainArgs) -> Result<()> {
    let mut config = ctx.config.clone();
    if let Some(k) = a.kind {
        config.classifier = k;
    }
    if let Some(v) = &a.variant {
        config.set("variant", v)?;
    }
    if let Some(f) = &a.features {
        config.set("features", f)?;
    }
    if let Some(h) = a.holdout {
        config.set("holdout", &h.to_string())?;
    }
    let embeddings = ctx.embeddings(&a.embeddings)?;
    let (labeled, skipped) = load_labeled_dataset(ctx.path(&a.data), ctx.path(&a.parses))?;
    if skipped.total() > 0 {
        log::warn!("{} labeled rows skipped", skipped.total());
    }
    let outcome = train(&labeled, &embeddings, &config)?;
    outcome.classifier.save(ctx.path(&a.out))?;

    let name = match config.classifier {
        ClassifierKind::Svm => "SVM".to_string(),
        ClassifierKind::Lstm => format!("LSTM+{}", capitalize(config.variant.as_str())),
    };
    let mut report = ClassificationReport::default();
    report
        .rows
        .push((format!("{name} train"), outcome.train_metrics));
    if let Some(h) = outcome.heldout_metrics {
        report.rows.push((format!("{name} held-out"), h));
    }
    let mut text = report.to_tsv();
    if !outcome.loss_curve.is_empty() {
        text.push_str("\nepoch\tloss\n");
        for (i, l) in outcome.loss_curve.iter().enumerate() {
            let _ = writeln!(text, "{}\t{:.6}", i + 1, l);
        }
    }
    ctx.emit(a.report.as_deref(), &text)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub fn classify(ctx: &Session, a: &ClassifyArgs) -> Result<()> {
    let classifier = Classifier::load(ctx.path(&a.model))?;
    let embeddings = ctx.embeddings(&a.embeddings)?;
    let sentences = index_sentences(load_conllu(ctx.path(&a.parses))?);
    let rows = read_instance_rows(ctx.open(&a.instances)?)?;
    let instances = resolve_instance_rows(&rows, &sentences);
    if instances.len() < rows.len() {
        log::warn!(
            "{} instance rows could not be resolved",
            rows.len() - instances.len()
        );
    }
    let confs = classifier.classify(&instances, &embeddings)?;
    ctx.emit(
        a.out.as_deref(),
        &write_confs(&conf_rows(&instances, &confs)),
    )
}

pub fn aggregate(ctx: &Session, a: &AggregateArgs) -> Result<()> {
    let f = a.f_choice.unwrap_or(ctx.config.f_choice);
    let rows = read_confs(ctx.open(&a.confs)?)?;
    let mut ranked = rank_pairs(&rows, f)?;
    if let Some(t) = a.threshold {
        ranked.retain(|s| s.score >= t);
    }
    if let Some(k) = a.top {
        ranked.truncate(k);
    }
    ctx.emit(a.out.as_deref(), &write_scores(&ranked))
}

pub fn write_triples_tsv(triples: &[Triple]) -> String {
    let mut out = String::from("e1\trelation\te2\tscore\n");
    for t in triples {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            t.head,
            locatednear::aggregate::RELATION,
            t.tail,
            t.score
        );
    }
    out
}

pub fn extract(ctx: &Session, a: &ExtractArgs) -> Result<()> {
    let threshold = a.threshold.unwrap_or(ctx.config.triple_threshold);
    let scores = match (&a.confs, &a.scores) {
        (Some(c), _) => rank_pairs(&read_confs(ctx.open(c)?)?, FChoice::F3)?,
        (None, Some(s)) => read_scores(ctx.open(s)?)?,
        (None, None) => bail!("give --confs or --scores"),
    };
    let triples = extract_triples(&scores, threshold)?;
    let text = if a.conceptnet {
        write_conceptnet(&triples)
    } else {
        write_triples_tsv(&triples)
    };
    ctx.emit(a.out.as_deref(), &text)
}

pub fn evaluate(ctx: &Session, a: &EvaluateArgs) -> Result<()> {
    let render = |tsv: String, text: String| if a.text { text } else { tsv };
    let out = if let Some(pred) = &a.predictions {
        let labels_path = a.labels.as_ref().context("--predictions needs --labels")?;
        let labeled = read_labeled_rows(ctx.open(labels_path)?)?;
        let gold: HashMap<(String, PairKey), bool> = labeled
            .iter()
            .map(|r| {
                (
                    (
                        r.sentence_id.clone(),
                        PairKey::new(r.e1.as_str(), r.e2.as_str()),
                    ),
                    r.label,
                )
            })
            .collect();
        let confs = read_confs(ctx.open(pred)?)?;
        let mut preds = Vec::new();
        let mut truth = Vec::new();
        for r in &confs {
            if let Some(&y) = gold.get(&(r.sentence_id.clone(), r.pair())) {
                preds.push(r.conf > 0.5);
                truth.push(y);
            }
        }
        if truth.is_empty() {
            bail!("no prediction matches a labeled row");
        }
        if truth.len() < confs.len() {
            log::warn!("{} predictions have no label", confs.len() - truth.len());
        }
        let report = ClassificationReport {
            rows: vec![
                ("Majority".to_string(), majority_baseline(&truth)?),
                (a.name.clone(), classification_metrics(&preds, &truth)?),
            ],
        };
        render(report.to_tsv(), report.to_text())
    } else {
        let gold_path = a
            .gold_pairs
            .as_ref()
            .context("give --predictions, --ranking or --confs")?;
        let gold = read_gold_pairs(ctx.open(gold_path)?)?;
        let mut report = RankingReport::default();
        if let Some(r) = &a.ranking {
            let scores = read_scores(ctx.open(r)?)?;
            let name = scores
                .first()
                .map(|s| s.f_choice.to_string())
                .unwrap_or_default();
            let ranked = locatednear::aggregate::rank(scores, None)?;
            report
                .rows
                .push((name, ranking_metrics(&ranked, &gold, &REPORT_CUTOFFS)?));
        } else if let Some(c) = &a.confs {
            let rows = read_confs(ctx.open(c)?)?;
            for f in FChoice::ALL {
                let ranked = rank_pairs(&rows, f)?;
                report.rows.push((
                    f.to_string(),
                    ranking_metrics(&ranked, &gold, &REPORT_CUTOFFS)?,
                ));
            }
        } else {
            bail!("--gold-pairs needs --ranking or --confs");
        }
        render(report.to_tsv(), report.to_text())
    };
    ctx.emit(a.out.as_deref(), &out)
}

pub fn synth_cmd(ctx: &Session, a: &SynthArgs) -> Result<()> {
    let corpus = synth::generate(&SynthConfig {
        sentences: a.n,
        seed: ctx.config.seed,
        sentences_per_pair: a.sentences_per_pair,
        embedding_dim: a.embedding_dim,
    })?;
    let dir = ctx.path(&a.out);
    corpus.write_to(&dir)?;
    let positives = corpus.rows.iter().filter(|r| r.label).count();
    ctx.emit(
        None,
        &format!(
            "sentences\tpositives\tpairs\tdir\n{}\t{}\t{}\t{}\n",
            corpus.rows.len(),
            positives,
            corpus.gold.len(),
            dir.display()
        ),
    )
}
