//! Synthetic data: planted-topic histograms and dated headline corpora.

use chrono::{Datelike, NaiveDate};
use ndarray::{Array1, Array2, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Gamma, StandardNormal};

use crate::corpus::RawDocument;
use crate::embedding::CostMatrix;
use crate::error::{Error, Result};
use crate::training::softmax_columns;
use crate::transport::{BarycenterBatch, GibbsKernel, SinkhornConfig};

/// Uniform draw from the probability simplex.
pub fn random_simplex(rng: &mut impl Rng, n: usize) -> Array1<f64> {
    let e: Array1<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s = e.sum();
    e / s
}

/// Symmetric Dirichlet draw; `alpha = 1` is uniform on the simplex.
pub fn dirichlet(rng: &mut impl Rng, n: usize, alpha: f64) -> Array1<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    loop {
        let g: Array1<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let s = g.sum();
        if s > 0.0 {
            return g / s;
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub n_words: usize,
    pub n_docs: usize,
    pub topics: usize,
    /// Standard deviation of the topic logits.
    pub logit_scale: f64,
    /// Dimension of the random word positions defining the ground cost.
    pub ground_dim: usize,
    /// Dirichlet concentration of the document weights.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self { n_words: 30, n_docs: 300, topics: 3, logit_scale: 1.5, ground_dim: 10, alpha: 1.0, seed: 1 }
    }
}

/// Documents generated as exact barycenters of known topics.
#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    /// N x N squared distances between random word positions, median-normalized.
    pub cost: CostMatrix<f64>,
    /// N x K.
    pub topics: Array2<f64>,
    /// K x M.
    pub weights: Array2<f64>,
    /// N x M.
    pub docs: Array2<f64>,
}

/// Words get uniform random positions in the unit cube of `ground_dim`
/// dimensions (a stand-in for embeddings). Topics are softmax images of
/// Gaussian logits. Each document is the barycenter of the topics under
/// Dirichlet weights, computed with the same unrolled map the model is
/// trained with (`scfg.unroll_iters` iterations).
///
/// Topics that are translates of one another on a line are avoided on
/// purpose: their barycenters only depend on the mean position, which makes
/// the middle topics unidentifiable.
pub fn planted_corpus(cfg: &PlantedConfig, scfg: &SinkhornConfig<f64>) -> Result<PlantedCorpus> {
    let (n, m, k) = (cfg.n_words, cfg.n_docs, cfg.topics);
    if n < 2 || m == 0 || k == 0 || cfg.ground_dim == 0 || !(cfg.logit_scale >= 0.0) || !(cfg.alpha > 0.0) {
        return Err(Error::InvalidConfig("planted corpus parameters out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.ground_dim;
    let pts = Array2::from_shape_simple_fn((n, dim), || rng.random::<f64>());
    let c = Array2::from_shape_fn((n, n), |(i, j)| (0..dim).map(|d| (pts[[i, d]] - pts[[j, d]]).powi(2)).sum::<f64>());
    let mut cost = CostMatrix::symmetric(c)?;
    cost.normalize_by_median()?;

    let logits = Array2::from_shape_simple_fn((n, k), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * cfg.logit_scale
    });
    let topics = softmax_columns(logits.view());

    let mut weights = Array2::zeros((k, m));
    for j in 0..m {
        weights.column_mut(j).assign(&dirichlet(&mut rng, k, cfg.alpha));
    }

    let kernel = GibbsKernel::new(&cost, scfg.epsilon);
    let batch = BarycenterBatch::new(&kernel, scfg.barycenter, scfg.unroll_iters);
    let mut docs = batch.forward(topics.mapv(f64::ln).view(), weights.view(), false)?.barycenters();
    for mut col in docs.columns_mut() {
        let s = col.sum();
        col /= s;
    }
    Ok(PlantedCorpus { cost, topics, weights, docs })
}

/// Mean total-variation distance between the columns of `truth` and
/// `estimate` under the best matching of columns (exhaustive over
/// permutations, so meant for small K).
pub fn matched_topic_distance(truth: ArrayView2<'_, f64>, estimate: ArrayView2<'_, f64>) -> Result<f64> {
    let k = truth.ncols();
    if truth.dim() != estimate.dim() || k == 0 || k > 8 {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?} (K must be 1..=8)", truth.dim(), estimate.dim())));
    }
    let tv = Array2::from_shape_fn((k, k), |(a, b)| 0.5 * truth.column(a).iter().zip(estimate.column(b)).map(|(x, y)| (x - y).abs()).sum::<f64>());
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(a, &b)| tv[[a, b]]).sum();
        best = best.min(total / k as f64);
    });
    Ok(best)
}

fn permute(p: &mut Vec<usize>, start: usize, f: &mut impl FnMut(&[usize])) {
    if start == p.len() {
        f(p);
        return;
    }
    for i in start..p.len() {
        p.swap(start, i);
        permute(p, start + 1, f);
        p.swap(start, i);
    }
}

#[derive(Debug, Clone)]
pub struct HeadlineConfig {
    pub n_docs: usize,
    pub months: usize,
    pub start: NaiveDate,
    /// Distinct content words before filtering.
    pub n_words: usize,
    pub themes: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for HeadlineConfig {
    fn default() -> Self {
        Self {
            n_docs: 1000,
            months: 24,
            start: NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
            n_words: 400,
            themes: 4,
            min_len: 5,
            max_len: 10,
            seed: 1,
        }
    }
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Deterministic pseudo-word for an index, at least four letters.
fn word(mut i: usize) -> String {
    let mut out = String::new();
    loop {
        out.push_str(ONSETS[i % ONSETS.len()]);
        i /= ONSETS.len();
        out.push_str(VOWELS[i % VOWELS.len()]);
        i /= VOWELS.len();
        if i == 0 && out.len() >= 4 {
            return out;
        }
    }
}

/// Headlines spread evenly over `months` consecutive months. Each theme has
/// its own Zipf-like word distribution; the theme mix drifts with a random
/// walk over months so the resulting index has structure to find.
pub fn headline_corpus(cfg: &HeadlineConfig) -> Result<Vec<RawDocument>> {
    if cfg.n_docs == 0 || cfg.months == 0 || cfg.n_words < 2 || cfg.themes == 0 || cfg.min_len == 0 || cfg.max_len < cfg.min_len {
        return Err(Error::InvalidConfig("headline corpus parameters out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab: Vec<String> = (0..cfg.n_words).map(|i| word(i + 7 * ONSETS.len())).collect();
    let themes: Vec<WeightedIndex<f64>> = (0..cfg.themes)
        .map(|_| {
            let mut order: Vec<usize> = (0..cfg.n_words).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let mut w = vec![0.0; cfg.n_words];
            for (rank, &idx) in order.iter().enumerate() {
                w[idx] = 1.0 / (rank as f64 + 1.0);
            }
            WeightedIndex::new(w).expect("positive weights")
        })
        .collect();

    let mut logits = vec![0.0f64; cfg.themes];
    let mut month_mix = Vec::with_capacity(cfg.months);
    for _ in 0..cfg.months {
        for l in logits.iter_mut() {
            *l += rng.random_range(-0.7..0.7);
        }
        let w: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
        month_mix.push(WeightedIndex::new(w).expect("positive weights"));
    }

    let mut docs = Vec::with_capacity(cfg.n_docs);
    for d in 0..cfg.n_docs {
        let month = d * cfg.months / cfg.n_docs;
        let first = cfg.start.with_day(1).expect("day 1 exists");
        let date = first.checked_add_months(chrono::Months::new(month as u32)).expect("date in range");
        let date = date.with_day(1 + (d % 28) as u32).expect("day <= 28");
        let theme = month_mix[month].sample(&mut rng);
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let words: Vec<&str> = (0..len)
            .map(|_| {
                let t = if rng.random::<f64>() < 0.8 { theme } else { rng.random_range(0..cfg.themes) };
                vocab[themes[t].sample(&mut rng)].as_str()
            })
            .collect();
        docs.push(RawDocument::new(date, words.join(" "))?);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, tokenize_corpus, TokenRules};

    #[test]
    fn planted_docs_are_histograms() {
        let cfg = PlantedConfig { n_words: 12, n_docs: 5, ..Default::default() };
        assert!(planted_corpus(&PlantedConfig { alpha: 0.0, ..cfg.clone() }, &SinkhornConfig::default()).is_err());
        let p = planted_corpus(&cfg, &SinkhornConfig::default()).unwrap();
        for col in p.docs.columns().into_iter().chain(p.topics.columns()).chain(p.weights.columns()) {
            assert!((col.sum() - 1.0).abs() < 1e-12);
            assert!(col.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn matching_finds_permutation() {
        let t = ndarray::array![[0.5, 0.0, 0.2], [0.5, 0.1, 0.2], [0.0, 0.9, 0.6]];
        let p = ndarray::array![[0.2, 0.5, 0.0], [0.2, 0.5, 0.1], [0.6, 0.0, 0.9]];
        assert_eq!(matched_topic_distance(t.view(), p.view()).unwrap(), 0.0);
        let q = ndarray::array![[1.0], [0.0]];
        let r = ndarray::array![[0.0], [1.0]];
        assert_eq!(matched_topic_distance(q.view(), r.view()).unwrap(), 1.0);
    }

    #[test]
    fn words_are_distinct_and_tokenizable() {
        let words: Vec<String> = (0..2000).map(word).collect();
        let set: std::collections::BTreeSet<_> = words.iter().collect();
        assert_eq!(set.len(), words.len());
        assert!(words.iter().all(|w| w.len() >= 4 && w.bytes().all(|b| b.is_ascii_lowercase())));
    }

    #[test]
    fn headlines_cover_months_and_vocabulary() {
        let docs = headline_corpus(&HeadlineConfig::default()).unwrap();
        assert_eq!(docs.len(), 1000);
        let months: std::collections::BTreeSet<_> = docs.iter().map(|d| (d.date.year(), d.date.month())).collect();
        assert_eq!(months.len(), 24);
        let toks = tokenize_corpus(&docs, &TokenRules::english());
        let vocab = build_vocabulary(&toks, 1).unwrap();
        assert!(vocab.len() > 300, "{}", vocab.len());
        assert_eq!(headline_corpus(&HeadlineConfig::default()).unwrap(), docs);
    }
}
