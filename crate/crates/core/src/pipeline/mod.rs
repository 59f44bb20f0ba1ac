//! Stage orchestration: corpus preparation, embeddings, training, index and
//! evaluation, each reading and writing files in one output directory.
//!
//! Every stage writes into `<output>/.partial` and moves its files into place
//! only after it succeeds. A failed run leaves its partial files under
//! `<output>/quarantine`. A lock file keeps concurrent runs out.

mod config;

pub use config::{Paths, Precision, RunConfig, TuneGrid, RECORD_PREFIX};

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use sha2::{Digest, Sha256};

use crate::corpus::{
    self, build_vocabulary, parse_lemma_table, parse_phrase_list, parse_word_list, read_tokenized, tokenize_corpus, vectorize,
    write_tokenized, DocumentMatrix, TokenRules, TokenizedDocument, Vocabulary,
};
use crate::embedding::{cost_matrix, train_embeddings, CostMatrix, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_svg_plot, EvalReport};
use crate::index::{build_index, top_tokens, write_topic_report, IndexOutput, IndexSeries};
use crate::io::{read_matrix, write_loss_trace, write_matrix, write_matrix_csv, Checkpoint};
use crate::scalar::Real;
use crate::training::{heldout_weights, softmax_columns, train, DictionaryModel, EpochStats};

pub const TOKENS: &str = "tokens.tsv";
pub const VOCAB: &str = "vocab.txt";
pub const COUNTS: &str = "counts.txt";
pub const DROPPED: &str = "dropped.csv";
pub const EMBEDDING: &str = "embedding.bin";
pub const COST: &str = "cost.bin";
pub const EMBED_LOSS: &str = "embedding_loss.csv";
pub const CHECKPOINT: &str = "model.ckpt";
pub const LOSS_TRACE: &str = "loss_trace.csv";
pub const TOPICS_CSV: &str = "topics.csv";
pub const INDEX: &str = "index.csv";
pub const INDEX_RAW: &str = "index_raw.csv";
pub const TOPIC_REPORT: &str = "topic_report.csv";
pub const EVAL_REPORT: &str = "eval_report.csv";
pub const CUMDIFF: &str = "cumdiff.csv";
pub const PLOT: &str = "eval_plot.svg";
pub const TUNE: &str = "tune.csv";
pub const MANIFEST: &str = "manifest.txt";
pub const QUARANTINE: &str = "quarantine";
const PARTIAL: &str = ".partial";
const LOCK: &str = ".lock";

/// Git-style content hash: SHA-256 over `blob <len>\0` followed by the bytes.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Exclusive ownership of an output directory for the lifetime of a run.
struct Lock {
    path: PathBuf,
}

impl Lock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked { path: dir.to_path_buf() }),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Output directory of one run: staged writes, input and output records.
pub struct RunDir {
    root: PathBuf,
    partial: PathBuf,
    records: Vec<(String, String)>,
    written: Vec<String>,
    _lock: Lock,
}

impl RunDir {
    pub fn open(root: &Path) -> Result<Self> {
        let lock = Lock::acquire(root)?;
        let partial = root.join(PARTIAL);
        if partial.exists() {
            fs::remove_dir_all(&partial)?;
        }
        fs::create_dir_all(&partial)?;
        Ok(Self { root: root.to_path_buf(), partial, records: Vec::new(), written: Vec::new(), _lock: lock })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn record(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.records.push((format!("{RECORD_PREFIX}{}", key.into()), value.into()));
    }

    /// Reads an input file and records its hash.
    pub fn read_input(&mut self, name: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingStageInput { path: path.to_path_buf() },
            _ => Error::Io(e),
        })?;
        self.record(format!("input.{name}"), format!("{} {}", blob_hash(&bytes), path.display()));
        Ok(bytes)
    }

    /// Reads a file produced by an earlier stage from the output directory.
    pub fn read_stage_file(&mut self, name: &str) -> Result<Vec<u8>> {
        let path = self.root.join(name);
        self.read_input(name, &path)
    }

    /// Stages an output file and records its hash.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.partial.join(name), bytes)?;
        self.record(format!("output.{name}"), blob_hash(bytes));
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    /// Config echo followed by the run records.
    pub fn manifest_text(&self, cfg: &RunConfig) -> String {
        let mut s = cfg.to_text();
        for (k, v) in &self.records {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    /// Moves staged files into place and writes the manifest.
    pub fn commit(self, cfg: &RunConfig, manifest: &str) -> Result<()> {
        for name in &self.written {
            fs::rename(self.partial.join(name), self.root.join(name))?;
        }
        fs::write(self.root.join(manifest), self.manifest_text(cfg))?;
        fs::remove_dir_all(&self.partial)?;
        Ok(())
    }

    /// Moves staged files to the quarantine directory, with the manifest so far.
    pub fn quarantine(self, cfg: &RunConfig, err: &Error) -> Result<()> {
        let q = self.root.join(QUARANTINE);
        if q.exists() {
            fs::remove_dir_all(&q)?;
        }
        let mut text = self.manifest_text(cfg);
        text.push_str(&format!("{RECORD_PREFIX}error={}\n", err.to_string().replace('\n', " ")));
        fs::write(self.partial.join(MANIFEST), text)?;
        fs::rename(&self.partial, &q)?;
        Ok(())
    }
}

fn utf8(bytes: Vec<u8>, what: &str) -> Result<String> {
    String::from_utf8(bytes).map_err(|e| Error::parse(what, e))
}

/// Output of the preparation stage.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub tokens: Vec<TokenizedDocument>,
    pub vocab: Vocabulary,
    pub docs: DocumentMatrix,
}

pub fn load_rules(cfg: &RunConfig, run: &mut RunDir) -> Result<TokenRules> {
    let mut rules = TokenRules::english();
    if let Some(p) = &cfg.paths.stopwords {
        rules.stopwords = parse_word_list(&utf8(run.read_input("stopwords", p)?, "stopwords")?);
    }
    if let Some(p) = &cfg.paths.lemmas {
        rules.lemmas = parse_lemma_table(&utf8(run.read_input("lemmas", p)?, "lemma table")?)?;
    }
    if let Some(p) = &cfg.paths.phrases {
        rules.phrases = parse_phrase_list(&utf8(run.read_input("phrases", p)?, "phrases")?);
    }
    Ok(rules)
}

pub fn prep(cfg: &RunConfig, run: &mut RunDir) -> Result<Prepared> {
    let path = cfg.paths.corpus.as_ref().ok_or_else(|| Error::InvalidConfig("paths.corpus is not set".into()))?;
    let raw = corpus::read_jsonl(run.read_input("corpus", path)?.as_slice())?;
    let rules = load_rules(cfg, run)?;
    let tokens = tokenize_corpus(&raw, &rules);
    let vocab = build_vocabulary(&tokens, cfg.min_count)?;
    let v = vectorize(&tokens, &vocab)?;
    run.write_with(TOKENS, |w| write_tokenized(&tokens, w))?;
    run.write_with(VOCAB, |w| vocab.write_to(w))?;
    run.write_with(COUNTS, |w| v.matrix.write_to(w))?;
    run.write_with(DROPPED, |w| {
        writeln!(w, "position,date")?;
        for d in &v.dropped {
            writeln!(w, "{},{}", d.position, d.date.format(corpus::DATE_FORMAT))?;
        }
        Ok(())
    })?;
    run.record("prep.documents", raw.len().to_string());
    run.record("prep.kept", v.matrix.n_docs().to_string());
    run.record("prep.vocabulary", vocab.len().to_string());
    Ok(Prepared { tokens, vocab, docs: v.matrix })
}

pub fn load_prepared(run: &mut RunDir) -> Result<Prepared> {
    let tokens = read_tokenized(run.read_stage_file(TOKENS)?.as_slice())?;
    let vocab = Vocabulary::read_from(run.read_stage_file(VOCAB)?.as_slice())?;
    let docs = DocumentMatrix::read_from(run.read_stage_file(COUNTS)?.as_slice())?;
    Ok(Prepared { tokens, vocab, docs })
}

#[derive(Debug, Clone)]
pub struct Embedded {
    pub embedding: EmbeddingMatrix<f64>,
    pub cost: CostMatrix<f64>,
}

fn compute_embedding(cfg: &RunConfig, prepared: &Prepared) -> Result<(Embedded, Vec<f64>, Option<f64>)> {
    let trained = train_embeddings::<f64>(&prepared.tokens, &prepared.vocab, &cfg.embed_config())?;
    let mut cost = cost_matrix(&trained.embedding);
    let median = if cfg.normalize_cost { Some(cost.normalize_by_median()?) } else { None };
    Ok((Embedded { embedding: trained.embedding, cost }, trained.eval_losses, median))
}

pub fn embed(cfg: &RunConfig, prepared: &Prepared, run: &mut RunDir) -> Result<Embedded> {
    let (out, losses, median) = compute_embedding(cfg, prepared)?;
    run.write_with(EMBEDDING, |w| write_matrix(out.embedding.vectors().view(), w))?;
    run.write_with(COST, |w| write_matrix(out.cost.entries().view(), w))?;
    run.write_with(EMBED_LOSS, |w| {
        writeln!(w, "epoch,loss")?;
        for (e, l) in losses.iter().enumerate() {
            writeln!(w, "{e},{l}")?;
        }
        Ok(())
    })?;
    if let Some(m) = median {
        run.record("embed.cost_median", m.to_string());
    }
    Ok(out)
}

pub fn load_cost(run: &mut RunDir) -> Result<CostMatrix<f64>> {
    CostMatrix::new(read_matrix(run.read_stage_file(COST)?.as_slice())?)
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub trace: Vec<EpochStats>,
    pub heldout_docs: Vec<usize>,
}

/// Trains in the configured precision. Held-out documents, if any, get
/// weights fitted with the topics fixed so the checkpoint covers every
/// document.
pub fn fit(cfg: &RunConfig, docs: &DocumentMatrix, cost: &CostMatrix<f64>) -> Result<Trained> {
    match cfg.precision {
        Precision::F32 => fit_in::<f32>(cfg, docs, cost),
        Precision::F64 => fit_in::<f64>(cfg, docs, cost),
    }
}

fn fit_in<F: Real>(cfg: &RunConfig, docs: &DocumentMatrix, cost: &CostMatrix<f64>) -> Result<Trained> {
    let tcfg = cfg.train_config();
    let scfg = cfg.sinkhorn.cast::<F>();
    let cost = cost.cast::<F>();
    let y = docs.distributions::<F>();
    let out = train(y.view(), &cost, &tcfg, &scfg)?;
    let k = out.model.n_topics();
    let mut a = Array2::<F>::zeros((k, docs.n_docs()));
    for (j, &m) in out.train_docs.iter().enumerate() {
        a.column_mut(m).assign(&out.model.a().column(j));
    }
    if !out.heldout_docs.is_empty() {
        let y_test = y.select(Axis(1), &out.heldout_docs);
        let fit = heldout_weights(y_test.view(), out.model.r().view(), &cost, &tcfg, &scfg)?;
        for (j, &m) in out.heldout_docs.iter().enumerate() {
            a.column_mut(m).assign(&fit.a.column(j));
        }
    }
    let checkpoint = Checkpoint::new(cfg.entries(), out.model.r().view(), a.view())?;
    Ok(Trained { checkpoint, trace: out.trace, heldout_docs: out.heldout_docs })
}

pub fn train_stage(cfg: &RunConfig, docs: &DocumentMatrix, cost: &CostMatrix<f64>, run: &mut RunDir) -> Result<Trained> {
    if docs.n_words() != cost.len() {
        return Err(Error::ShapeMismatch(format!("documents have {} words, cost has {}", docs.n_words(), cost.len())));
    }
    let out = fit(cfg, docs, cost)?;
    run.write_with(CHECKPOINT, |w| out.checkpoint.write_to(w))?;
    run.write_with(LOSS_TRACE, |w| write_loss_trace(&out.trace, w))?;
    let topics = softmax_columns(out.checkpoint.r.view());
    run.write_with(TOPICS_CSV, |w| {
        let header: Vec<String> = (0..topics.ncols()).map(|k| format!("topic{k}")).collect();
        write_matrix_csv(topics.view(), Some(&header), w)
    })?;
    run.record("train.epochs_run", out.trace.len().to_string());
    if let Some(last) = out.trace.last() {
        run.record("train.final_loss", last.train_loss.to_string());
    }
    Ok(out)
}

pub fn load_checkpoint(run: &mut RunDir) -> Result<Checkpoint> {
    Checkpoint::read_from(run.read_stage_file(CHECKPOINT)?.as_slice())
}

pub fn index_stage(cfg: &RunConfig, checkpoint: &Checkpoint, docs: &DocumentMatrix, vocab: &Vocabulary, run: &mut RunDir) -> Result<IndexOutput> {
    if checkpoint.a.ncols() != docs.n_docs() || checkpoint.r.nrows() != vocab.len() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint is {}x{} words by documents, corpus is {}x{}",
            checkpoint.r.nrows(),
            checkpoint.a.ncols(),
            vocab.len(),
            docs.n_docs()
        )));
    }
    let model = DictionaryModel::from_params(checkpoint.r.clone(), checkpoint.a.clone())?;
    let out = build_index(model.topics().view(), model.weights().view(), docs.dates(), cfg.index)?;
    run.write_with(INDEX, |w| out.scaled.write_csv(w))?;
    run.write_with(INDEX_RAW, |w| out.raw.write_csv(w))?;
    let report = top_tokens(model.topics().view(), vocab, cfg.top_tokens)?;
    run.write_with(TOPIC_REPORT, |w| write_topic_report(&report, w))?;
    let scores: Vec<String> = out.projection.scores.iter().map(f64::to_string).collect();
    run.record("index.topic_scores", scores.join(","));
    run.record("index.months", out.scaled.len().to_string());
    Ok(out)
}

pub fn load_index(run: &mut RunDir) -> Result<IndexSeries> {
    IndexSeries::read_csv(run.read_stage_file(INDEX)?.as_slice())
}

pub fn eval_stage(cfg: &RunConfig, index: &IndexSeries, run: &mut RunDir) -> Result<EvalReport> {
    let path = cfg.paths.reference.as_ref().ok_or_else(|| Error::InvalidConfig("paths.reference is not set".into()))?;
    let reference = IndexSeries::read_csv(run.read_input("reference", path)?.as_slice())?;
    let report = evaluate(index, &reference, &cfg.eval)?;
    run.write_with(EVAL_REPORT, |w| report.write_csv(w))?;
    run.write_with(CUMDIFF, |w| report.cumdiff.write_csv(w))?;
    if cfg.plot {
        run.write_with(PLOT, |w| write_svg_plot(index, &reference, &report.cumdiff, w))?;
    }
    Ok(report)
}

/// One evaluated grid point of [`tune`].
#[derive(Debug, Clone, PartialEq)]
pub struct TunePoint {
    pub epsilon: f64,
    pub batch_size: usize,
    pub topics: usize,
    pub learning_rate: f64,
    pub embed_depth: usize,
    pub heldout_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub points: Vec<TunePoint>,
    /// Position of the smallest held-out loss (first on ties).
    pub best: usize,
}

fn axis<T: Copy>(grid: &[T], base: T) -> Vec<T> {
    if grid.is_empty() {
        vec![base]
    } else {
        grid.to_vec()
    }
}

/// Grid search scored by held-out reconstruction loss. Embeddings are
/// retrained only when the depth changes.
pub fn tune(cfg: &RunConfig, prepared: &Prepared, run: &mut RunDir) -> Result<TuneResult> {
    let mut points = Vec::new();
    for depth in axis(&cfg.tune.embed_depth, cfg.embed.depth) {
        let mut base = cfg.clone();
        base.embed.depth = depth;
        base.train.holdout_fraction = cfg.tune.holdout_fraction;
        let (emb, _, _) = compute_embedding(&base, prepared)?;
        for eps in axis(&cfg.tune.epsilon, cfg.sinkhorn.epsilon) {
            for s in axis(&cfg.tune.batch_size, cfg.train.batch_size) {
                for k in axis(&cfg.tune.topics, cfg.train.topics) {
                    for lr in axis(&cfg.tune.learning_rate, cfg.train.adam.learning_rate) {
                        let mut c = base.clone();
                        c.sinkhorn.epsilon = eps;
                        c.train.batch_size = s;
                        c.train.topics = k;
                        c.train.adam.learning_rate = lr;
                        c.validate()?;
                        let out = fit(&c, &prepared.docs, &emb.cost)?;
                        let loss = out.trace.last().and_then(|e| e.heldout_loss).unwrap_or(f64::NAN);
                        points.push(TunePoint { epsilon: eps, batch_size: s, topics: k, learning_rate: lr, embed_depth: depth, heldout_loss: loss });
                    }
                }
            }
        }
    }
    let best = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.heldout_loss.is_finite())
        .min_by(|a, b| a.1.heldout_loss.total_cmp(&b.1.heldout_loss))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::NumericalCollapse("no grid point produced a finite held-out loss".into()))?;
    run.write_with(TUNE, |w| {
        writeln!(w, "point,epsilon,batch_size,topics,learning_rate,embed_depth,heldout_loss,selected")?;
        for (i, p) in points.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{},{},{},{},{},{}",
                p.epsilon,
                p.batch_size,
                p.topics,
                p.learning_rate,
                p.embed_depth,
                p.heldout_loss,
                u8::from(i == best)
            )?;
        }
        Ok(())
    })?;
    for (i, p) in points.iter().enumerate() {
        run.record(
            format!("tune.{i}"),
            format!(
                "epsilon={};batch_size={};topics={};learning_rate={};embed_depth={};heldout_loss={}",
                p.epsilon, p.batch_size, p.topics, p.learning_rate, p.embed_depth, p.heldout_loss
            ),
        );
    }
    run.record("tune.selected", best.to_string());
    Ok(TuneResult { points, best })
}

/// A pipeline stage runnable on its own from files in the output directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prep,
    Embed,
    Train,
    Index,
    Eval,
    Tune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Prep => "prep",
            Stage::Embed => "embed",
            Stage::Train => "train",
            Stage::Index => "index",
            Stage::Eval => "eval",
            Stage::Tune => "tune",
        }
    }

    pub fn manifest_name(self) -> String {
        format!("manifest-{}.txt", self.name())
    }
}

fn guarded<T>(cfg: &RunConfig, manifest: &str, body: impl FnOnce(&mut RunDir) -> Result<T>) -> Result<T> {
    cfg.validate()?;
    let mut run = RunDir::open(&cfg.paths.output)?;
    match body(&mut run) {
        Ok(v) => {
            run.commit(cfg, manifest)?;
            Ok(v)
        }
        Err(e) => {
            // the stage error is what the caller needs; a failed move is secondary
            let _ = run.quarantine(cfg, &e);
            Err(e)
        }
    }
}

/// Runs one stage from the serialized outputs of earlier stages.
pub fn run_stage(cfg: &RunConfig, stage: Stage) -> Result<()> {
    let name = stage.name();
    guarded(cfg, &stage.manifest_name(), |run| {
        run.record("stage", name);
        let r: Result<()> = (|| {
            match stage {
                Stage::Prep => drop(prep(cfg, run)?),
                Stage::Embed => {
                    let p = load_prepared(run)?;
                    embed(cfg, &p, run)?;
                }
                Stage::Train => {
                    let docs = DocumentMatrix::read_from(run.read_stage_file(COUNTS)?.as_slice())?;
                    let cost = load_cost(run)?;
                    train_stage(cfg, &docs, &cost, run)?;
                }
                Stage::Index => {
                    let ck = load_checkpoint(run)?;
                    let docs = DocumentMatrix::read_from(run.read_stage_file(COUNTS)?.as_slice())?;
                    let vocab = Vocabulary::read_from(run.read_stage_file(VOCAB)?.as_slice())?;
                    index_stage(cfg, &ck, &docs, &vocab, run)?;
                }
                Stage::Eval => {
                    let index = load_index(run)?;
                    eval_stage(cfg, &index, run)?;
                }
                Stage::Tune => {
                    let p = load_prepared(run)?;
                    tune(cfg, &p, run)?;
                }
            }
            Ok(())
        })();
        r.map_err(|e| e.in_stage(name))
    })
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub index: IndexSeries,
    pub trace: Vec<EpochStats>,
    pub report: Option<EvalReport>,
}

/// Corpus to index (and evaluation when a reference series is configured).
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    guarded(cfg, MANIFEST, |run| {
        run.record("stage", "run");
        let p = prep(cfg, run).map_err(|e| e.in_stage("prep"))?;
        let emb = embed(cfg, &p, run).map_err(|e| e.in_stage("embed"))?;
        let trained = train_stage(cfg, &p.docs, &emb.cost, run).map_err(|e| e.in_stage("train"))?;
        let index = index_stage(cfg, &trained.checkpoint, &p.docs, &p.vocab, run).map_err(|e| e.in_stage("index"))?;
        let report = match cfg.paths.reference {
            Some(_) => Some(eval_stage(cfg, &index.scaled, run).map_err(|e| e.in_stage("eval"))?),
            None => None,
        };
        Ok(RunSummary { index: index.scaled, trace: trained.trace, report })
    })
}

/// Reads `key=value` records back from a manifest file.
pub fn read_manifest(r: impl BufRead) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if let Some((k, v)) = line.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        }
    }
    Ok(out)
}

pub fn read_manifest_file(path: &Path) -> Result<Vec<(String, String)>> {
    read_manifest(std::io::BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_sha256_format() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(blob_hash(b"hello\n"), "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4");
        assert_eq!(blob_hash(b"").len(), 64);
    }

    #[test]
    fn lock_excludes_second_run() {
        let dir = tempfile::tempdir().unwrap();
        let first = RunDir::open(dir.path()).unwrap();
        assert!(matches!(RunDir::open(dir.path()), Err(Error::Locked { .. })));
        drop(first);
        RunDir::open(dir.path()).unwrap();
    }

    #[test]
    fn failed_stage_is_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.paths.output = dir.path().to_path_buf();
        let e = run_stage(&cfg, Stage::Embed).unwrap_err();
        assert!(matches!(&e, Error::Stage { stage: "embed", source } if matches!(**source, Error::MissingStageInput { .. })));
        let q = dir.path().join(QUARANTINE).join(MANIFEST);
        let text = fs::read_to_string(q).unwrap();
        assert!(text.contains("run.error=stage `embed` failed"));
        assert!(!dir.path().join(LOCK).exists());
        assert!(!dir.path().join(PARTIAL).exists());
    }
}
