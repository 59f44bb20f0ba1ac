//! Skip-gram with negative sampling, single writer, seeded.

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EmbeddingMatrix;
use crate::corpus::{TokenizedDocument, Vocabulary};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedConfig {
    pub depth: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial rate; decays linearly to `learning_rate * 1e-4`.
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { depth: 10, window: 5, negatives: 5, epochs: 5, learning_rate: 0.025, seed: 1 }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("embedding {what} must be positive")));
        if self.depth == 0 {
            return bad("depth");
        }
        if self.window == 0 {
            return bad("window");
        }
        if self.negatives == 0 {
            return bad("negatives");
        }
        if self.epochs == 0 {
            return bad("epochs");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEmbedding<F> {
    pub embedding: EmbeddingMatrix<F>,
    /// Negative-sampling objective on a fixed evaluation sample, one entry
    /// before training and one after each epoch. Empty when there are no pairs.
    pub eval_losses: Vec<f64>,
}

const EVAL_PAIRS: usize = 2000;

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Trains N x D input vectors with skip-gram negative sampling.
///
/// Documents are mapped onto vocabulary ids (out-of-vocabulary tokens are
/// skipped), each center word sees a window shrunk uniformly from
/// `1..=window`, and negatives come from the unigram distribution raised to
/// 3/4. Updates are applied sequentially so the result depends only on the
/// inputs and `cfg.seed`.
pub fn train_embeddings<F: Real>(
    docs: &[TokenizedDocument],
    vocab: &Vocabulary,
    cfg: &EmbedConfig,
) -> Result<TrainedEmbedding<F>> {
    cfg.validate()?;
    let n = vocab.len();
    let dim = cfg.depth;
    let sentences: Vec<Vec<usize>> =
        docs.iter().map(|d| d.tokens.iter().filter_map(|t| vocab.get(t)).collect::<Vec<_>>()).filter(|s| !s.is_empty()).collect();
    let total_tokens: usize = sentences.iter().map(Vec::len).sum();
    if total_tokens == 0 {
        return Err(Error::EmptyCorpus);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = F::lit(0.5) / F::of_usize(dim);
    let mut input = Array2::from_shape_fn((n, dim), |_| F::lit(rng.random_range(-1.0..1.0)) * half);
    let mut output = Array2::<F>::zeros((n, dim));

    let mut counts = vec![0usize; n];
    for s in &sentences {
        for &w in s {
            counts[w] += 1;
        }
    }
    let noise = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75))).expect("some counts positive");

    let eval = sample_eval_pairs(&sentences, cfg, &noise);
    let mut eval_losses = Vec::new();
    if !eval.is_empty() {
        eval_losses.push(objective(&input, &output, &eval));
    }
    if eval.is_empty() {
        // no (center, context) pair exists anywhere: nothing to train
        return Ok(TrainedEmbedding { embedding: EmbeddingMatrix::new(input)?, eval_losses });
    }

    let lr0 = F::lit(cfg.learning_rate);
    let floor = F::lit(1e-4);
    let total_work = F::of_usize(cfg.epochs * total_tokens);
    let mut processed = 0usize;
    let mut grad_in = vec![F::zero(); dim];

    for _epoch in 0..cfg.epochs {
        for s in &sentences {
            for (pos, &center) in s.iter().enumerate() {
                let progress = F::of_usize(processed) / total_work;
                let lr = lr0 * (F::one() - progress).max(floor);
                processed += 1;
                let reach = rng.random_range(1..=cfg.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(s.len() - 1);
                for (cpos, &context) in s.iter().enumerate().take(hi + 1).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    grad_in.iter_mut().for_each(|g| *g = F::zero());
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, F::one())
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, F::zero())
                        };
                        let score: F = input.row(center).dot(&output.row(target));
                        let g = (label - sigmoid(score)) * lr;
                        for d in 0..dim {
                            grad_in[d] += g * output[[target, d]];
                            output[[target, d]] += g * input[[center, d]];
                        }
                    }
                    for d in 0..dim {
                        input[[center, d]] += grad_in[d];
                    }
                }
            }
        }
        eval_losses.push(objective(&input, &output, &eval));
    }

    Ok(TrainedEmbedding { embedding: EmbeddingMatrix::new(input)?, eval_losses })
}

struct EvalPair {
    center: usize,
    context: usize,
    negatives: Vec<usize>,
}

fn sample_eval_pairs(sentences: &[Vec<usize>], cfg: &EmbedConfig, noise: &WeightedIndex<f64>) -> Vec<EvalPair> {
    let mut all = Vec::new();
    for s in sentences {
        for pos in 0..s.len() {
            let lo = pos.saturating_sub(cfg.window);
            let hi = (pos + cfg.window).min(s.len() - 1);
            for c in lo..=hi {
                if c != pos {
                    all.push((s[pos], s[c]));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_e7a1);
    let take = all.len().min(EVAL_PAIRS);
    let picks: Vec<(usize, usize)> = if take == all.len() {
        all
    } else {
        (0..take).map(|_| all[rng.random_range(0..all.len())]).collect()
    };
    picks
        .into_iter()
        .map(|(center, context)| EvalPair {
            center,
            context,
            negatives: (0..cfg.negatives).map(|_| noise.sample(&mut rng)).collect(),
        })
        .collect()
}

/// Mean of `-log s(v.u_ctx) - sum log s(-v.u_neg)` over the evaluation sample.
fn objective<F: Real>(input: &Array2<F>, output: &Array2<F>, pairs: &[EvalPair]) -> f64 {
    let log_sig = |x: f64| -(1.0 + (-x).exp()).ln();
    let score = |a: usize, b: usize| input.row(a).dot(&output.row(b)).to_f64_lossy();
    let total: f64 = pairs
        .iter()
        .map(|p| {
            -log_sig(score(p.center, p.context)) - p.negatives.iter().map(|&ng| log_sig(-score(p.center, ng))).sum::<f64>()
        })
        .sum();
    total / pairs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_date;

    fn docs(lines: &[&str]) -> Vec<TokenizedDocument> {
        lines
            .iter()
            .map(|l| TokenizedDocument {
                date: parse_date("2001-01-01").unwrap(),
                tokens: l.split_whitespace().map(str::to_string).collect(),
            })
            .collect()
    }

    #[test]
    fn single_token_corpus_returns_initialization() {
        let d = docs(&["lonely"]);
        let v = Vocabulary::from_tokens(["lonely".to_string()]).unwrap();
        let cfg = EmbedConfig { seed: 7, ..Default::default() };
        let out = train_embeddings::<f64>(&d, &v, &cfg).unwrap();
        assert!(out.eval_losses.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let expect: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0) * 0.05).collect();
        assert_eq!(out.embedding.row(0).to_vec(), expect);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let d = docs(&["unknown words"]);
        let v = Vocabulary::from_tokens(["other".to_string()]).unwrap();
        assert!(matches!(train_embeddings::<f64>(&d, &v, &EmbedConfig::default()), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn rejects_zero_depth() {
        let d = docs(&["a b"]);
        let v = Vocabulary::from_tokens(["a", "b"].map(String::from)).unwrap();
        let cfg = EmbedConfig { depth: 0, ..Default::default() };
        assert!(matches!(train_embeddings::<f64>(&d, &v, &cfg), Err(Error::InvalidConfig(_))));
    }
}
