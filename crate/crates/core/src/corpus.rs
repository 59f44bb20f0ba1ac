//! Corpus ingestion: dated headlines to bag-of-words distributions.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::scalar::Real;

const DEFAULT_STOPWORDS: &str = include_str!("../assets/stopwords.txt");
const DEFAULT_LEMMAS: &str = include_str!("../assets/lemmas.tsv");

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// One dated record of the input corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub date: NaiveDate,
    pub text: String,
}

impl RawDocument {
    pub fn new(date: NaiveDate, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::parse("document", "text is empty"));
        }
        Ok(Self { date, text })
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    date: String,
    text: String,
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).map_err(|e| Error::parse(format!("date `{s}`"), e))
}

/// Reads a JSON-lines corpus (`{"date": "YYYY-MM-DD", "text": "..."}` per line).
/// Blank lines are skipped.
pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<RawDocument>> {
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = || format!("corpus line {}", lineno + 1);
        let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::parse(ctx(), e))?;
        let date = parse_date(&rec.date).map_err(|e| Error::parse(ctx(), e))?;
        docs.push(RawDocument::new(date, rec.text).map_err(|e| Error::parse(ctx(), e))?);
    }
    Ok(docs)
}

pub fn read_jsonl_file(path: &Path) -> Result<Vec<RawDocument>> {
    let f = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(f))
}

pub fn write_jsonl(docs: &[RawDocument], mut w: impl Write) -> Result<()> {
    for d in docs {
        let line = serde_json::json!({ "date": d.date.format(DATE_FORMAT).to_string(), "text": d.text });
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Normalization rules applied by [`tokenize`].
#[derive(Debug, Clone, Default)]
pub struct TokenRules {
    pub stopwords: HashSet<String>,
    pub lemmas: HashMap<String, String>,
    /// Multiword entities, each already split into normalized words.
    pub phrases: Vec<Vec<String>>,
}

impl TokenRules {
    /// Shipped English stopword list and lemma table, no phrases.
    pub fn english() -> Self {
        Self {
            stopwords: parse_word_list(DEFAULT_STOPWORDS),
            lemmas: parse_lemma_table(DEFAULT_LEMMAS).expect("shipped lemma table is well formed"),
            phrases: Vec::new(),
        }
    }

    pub fn with_phrases(mut self, phrases: &str) -> Self {
        self.phrases = parse_phrase_list(phrases);
        self
    }
}

pub fn parse_word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

/// `surface<TAB>lemma` per line.
pub fn parse_lemma_table(text: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (surface, lemma) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(format!("lemma table line {}", i + 1), "expected surface<TAB>lemma"))?;
        out.insert(surface.trim().to_lowercase(), lemma.trim().to_lowercase());
    }
    Ok(out)
}

/// One phrase per line; words are normalized the same way as headline tokens.
pub fn parse_phrase_list(text: &str) -> Vec<Vec<String>> {
    let mut phrases: Vec<Vec<String>> = text
        .lines()
        .filter(|l| !l.trim().starts_with('#'))
        .map(|l| l.split_whitespace().filter_map(normalize_word).collect::<Vec<_>>())
        .filter(|p| p.len() >= 2)
        .collect();
    // longest first so greedy matching prefers "new york stock exchange" over "new york"
    phrases.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    phrases.dedup();
    phrases
}

fn normalize_word(raw: &str) -> Option<String> {
    let w: String = raw.to_lowercase().chars().filter(|c| c.is_ascii_lowercase() || c.is_ascii_digit()).collect();
    (!w.is_empty()).then_some(w)
}

/// Lowercases, strips everything outside `[a-z0-9]` (hyphenated words are
/// joined), merges listed phrases with `_`, removes stopwords, lemmatizes
/// through the lookup table and drops tokens shorter than two characters.
pub fn tokenize(text: &str, rules: &TokenRules) -> Vec<String> {
    let words: Vec<String> = text.split_whitespace().filter_map(normalize_word).collect();

    let mut merged = Vec::with_capacity(words.len());
    let mut i = 0;
    'outer: while i < words.len() {
        for phrase in &rules.phrases {
            if words[i..].starts_with(phrase) {
                merged.push(phrase.join("_"));
                i += phrase.len();
                continue 'outer;
            }
        }
        merged.push(words[i].clone());
        i += 1;
    }

    merged
        .into_iter()
        .filter(|w| !rules.stopwords.contains(w))
        .map(|w| rules.lemmas.get(&w).cloned().unwrap_or(w))
        .filter(|w| w.chars().count() >= 2)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDocument {
    pub date: NaiveDate,
    pub tokens: Vec<String>,
}

/// Tokenizes every document and orders the result by (date, input position).
pub fn tokenize_corpus(docs: &[RawDocument], rules: &TokenRules) -> Vec<TokenizedDocument> {
    let mut out: Vec<TokenizedDocument> = docs
        .par_iter()
        .map(|d| TokenizedDocument { date: d.date, tokens: tokenize(&d.text, rules) })
        .collect();
    out.sort_by_key(|d| d.date);
    out
}

/// Lexicographically ordered token set with its inverse index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from any token list; duplicates are removed and order is made lexicographic.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = tokens.into_iter().collect();
        tokens.sort();
        tokens.dedup();
        if tokens.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let tokens = r.lines().filter_map(|l| l.map(|s| s.trim().to_string()).ok()).filter(|s| !s.is_empty());
        Self::from_tokens(tokens)
    }
}

pub fn build_vocabulary(docs: &[TokenizedDocument], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::InvalidConfig("min_count must be at least 1".into()));
    }
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for d in docs {
        for t in &d.tokens {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    Vocabulary::from_tokens(freq.into_iter().filter(|&(_, c)| c >= min_count).map(|(t, _)| t.to_string()))
}

/// Sparse count column: `(word index, count)` sorted by index.
pub type CountColumn = Vec<(u32, u32)>;

/// Bag-of-words counts for M documents over an N-word vocabulary.
///
/// Counts are stored sparsely; distributions are derived on demand by
/// normalizing each column, so every column is exactly on the simplex up to
/// rounding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentMatrix {
    n_words: usize,
    dates: Vec<NaiveDate>,
    columns: Vec<CountColumn>,
}

impl DocumentMatrix {
    pub fn new(n_words: usize, dates: Vec<NaiveDate>, columns: Vec<CountColumn>) -> Result<Self> {
        if dates.len() != columns.len() {
            return Err(Error::ShapeMismatch(format!("{} dates for {} columns", dates.len(), columns.len())));
        }
        (n_words as u64)
            .checked_mul(columns.len() as u64)
            .ok_or_else(|| Error::ShapeMismatch("N*M overflows 64 bits".into()))?;
        for (m, col) in columns.iter().enumerate() {
            if col.iter().all(|&(_, c)| c == 0) {
                return Err(Error::ShapeMismatch(format!("column {m} has no nonzero entry")));
            }
            if col.iter().any(|&(i, _)| i as usize >= n_words) || col.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(Error::ShapeMismatch(format!("column {m} has bad indices")));
            }
        }
        Ok(Self { n_words, dates, columns })
    }

    pub fn n_words(&self) -> usize {
        self.n_words
    }

    pub fn n_docs(&self) -> usize {
        self.columns.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn counts(&self, m: usize) -> &CountColumn {
        &self.columns[m]
    }

    pub fn dense_counts(&self) -> Array2<u32> {
        let mut out = Array2::zeros((self.n_words, self.n_docs()));
        for (m, col) in self.columns.iter().enumerate() {
            for &(i, c) in col {
                out[[i as usize, m]] = c;
            }
        }
        out
    }

    pub fn distribution<F: Real>(&self, m: usize) -> Array1<F> {
        let mut out = Array1::zeros(self.n_words);
        let total: u64 = self.columns[m].iter().map(|&(_, c)| c as u64).sum();
        let total = F::from_u64(total).unwrap();
        for &(i, c) in &self.columns[m] {
            out[i as usize] = F::from_u32(c).unwrap() / total;
        }
        out
    }

    /// Dense N x |cols| distribution block for the given document indices.
    pub fn distributions_for<F: Real>(&self, cols: &[usize]) -> Array2<F> {
        let mut out = Array2::zeros((self.n_words, cols.len()));
        for (j, &m) in cols.iter().enumerate() {
            out.column_mut(j).assign(&self.distribution::<F>(m));
        }
        out
    }

    pub fn distributions<F: Real>(&self) -> Array2<F> {
        let all: Vec<usize> = (0..self.n_docs()).collect();
        self.distributions_for(&all)
    }

    pub fn select(&self, cols: &[usize]) -> DocumentMatrix {
        DocumentMatrix {
            n_words: self.n_words,
            dates: cols.iter().map(|&m| self.dates[m]).collect(),
            columns: cols.iter().map(|&m| self.columns[m].clone()).collect(),
        }
    }

    /// Text serialization: a header line, then `date<TAB>idx:count ...` per document.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "wig-docmatrix 1 {} {}", self.n_words, self.n_docs())?;
        for (date, col) in self.dates.iter().zip(&self.columns) {
            write!(w, "{}\t", date.format(DATE_FORMAT))?;
            let entries: Vec<String> = col.iter().map(|(i, c)| format!("{i}:{c}")).collect();
            writeln!(w, "{}", entries.join(" "))?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::parse("document matrix", "missing header"))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "wig-docmatrix" || parts[1] != "1" {
            return Err(Error::parse("document matrix", "bad header"));
        }
        let n_words: usize = parts[2].parse().map_err(|e| Error::parse("document matrix header", e))?;
        let n_docs: usize = parts[3].parse().map_err(|e| Error::parse("document matrix header", e))?;
        let mut dates = Vec::with_capacity(n_docs);
        let mut columns = Vec::with_capacity(n_docs);
        for (k, line) in lines.enumerate() {
            let line = line?;
            let ctx = || format!("document matrix line {}", k + 2);
            let (date, rest) = line.split_once('\t').ok_or_else(|| Error::parse(ctx(), "missing tab"))?;
            dates.push(parse_date(date)?);
            let mut col = CountColumn::new();
            for e in rest.split_whitespace() {
                let (i, c) = e.split_once(':').ok_or_else(|| Error::parse(ctx(), "expected idx:count"))?;
                col.push((i.parse().map_err(|e| Error::parse(ctx(), e))?, c.parse().map_err(|e| Error::parse(ctx(), e))?));
            }
            columns.push(col);
        }
        if columns.len() != n_docs {
            return Err(Error::parse("document matrix", format!("expected {n_docs} documents, found {}", columns.len())));
        }
        Self::new(n_words, dates, columns)
    }
}

/// A document removed by [`vectorize`] because none of its tokens are in the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedDocument {
    pub position: usize,
    pub date: NaiveDate,
}

#[derive(Debug, Clone)]
pub struct Vectorized {
    pub matrix: DocumentMatrix,
    pub dropped: Vec<DroppedDocument>,
    /// Position in the input of each retained column.
    pub kept: Vec<usize>,
}

pub fn vectorize(docs: &[TokenizedDocument], vocab: &Vocabulary) -> Result<Vectorized> {
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let mut dates = Vec::new();
    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    let mut kept = Vec::new();
    for (pos, d) in docs.iter().enumerate() {
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for t in &d.tokens {
            if let Some(i) = vocab.get(t) {
                *counts.entry(i as u32).or_default() += 1;
            }
        }
        if counts.is_empty() {
            dropped.push(DroppedDocument { position: pos, date: d.date });
        } else {
            dates.push(d.date);
            columns.push(counts.into_iter().collect());
            kept.push(pos);
        }
    }
    if columns.is_empty() {
        return Err(Error::AllDocumentsEmpty);
    }
    Ok(Vectorized { matrix: DocumentMatrix::new(vocab.len(), dates, columns)?, dropped, kept })
}

/// Writes tokenized documents as `date<TAB>tok tok ...` lines.
pub fn write_tokenized(docs: &[TokenizedDocument], mut w: impl Write) -> Result<()> {
    for d in docs {
        writeln!(w, "{}\t{}", d.date.format(DATE_FORMAT), d.tokens.join(" "))?;
    }
    Ok(())
}

pub fn read_tokenized(r: impl BufRead) -> Result<Vec<TokenizedDocument>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (date, rest) =
            line.split_once('\t').ok_or_else(|| Error::parse(format!("tokens line {}", k + 1), "missing tab"))?;
        out.push(TokenizedDocument {
            date: parse_date(date)?,
            tokens: rest.split_whitespace().map(str::to_string).collect(),
        });
    }
    Ok(out)
}
