//! Additively smoothed n-gram model, a desk-scale stand-in for an LLM.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{check_prefix, Distribution, ModelError, TokenModel, Vocabulary};

/// Counts over (context, token) with add-alpha smoothing:
/// P(t | ctx) = (count(ctx, t) + alpha) / (total(ctx) + alpha * |V|).
/// Strictly positive everywhere, so every sequence has nonzero mass.
#[derive(Debug, Clone)]
pub struct NGramModel {
    vocab: Vocabulary,
    order: usize,
    alpha: f64,
    counts: HashMap<Vec<usize>, Vec<u64>>,
}

#[derive(Deserialize)]
struct CorpusFile {
    vocab: Vec<String>,
    eos: usize,
    corpus: Vec<String>,
}

impl NGramModel {
    /// Train on a corpus of sentences. Each sentence is tokenized greedily
    /// against the vocabulary and terminated with EOS before counting. An
    /// empty corpus yields the uniform alpha-smoothed model.
    pub fn train(
        corpus: &[impl AsRef<str>],
        vocab: Vocabulary,
        order: usize,
        alpha: f64,
    ) -> Result<NGramModel, ModelError> {
        if order < 1 {
            return Err(ModelError::Malformed("n-gram order must be >= 1".into()));
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(ModelError::Malformed("smoothing alpha must be > 0".into()));
        }
        let mut counts: HashMap<Vec<usize>, Vec<u64>> = HashMap::new();
        for line in corpus {
            let mut tokens = vocab.tokenize(line.as_ref())?;
            tokens.push(vocab.eos());
            for i in 0..tokens.len() {
                let lo = i.saturating_sub(order - 1);
                let ctx = tokens[lo..i].to_vec();
                let slot = counts.entry(ctx).or_insert_with(|| vec![0; vocab.len()]);
                slot[tokens[i]] += 1;
            }
        }
        Ok(NGramModel {
            vocab,
            order,
            alpha,
            counts,
        })
    }

    /// Load `{"vocab": [...], "eos": n, "corpus": ["...", ...]}` and train.
    pub fn load(
        path: impl AsRef<Path>,
        order: usize,
        alpha: f64,
    ) -> Result<NGramModel, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let file: CorpusFile =
            serde_json::from_str(&text).map_err(|e| ModelError::Malformed(e.to_string()))?;
        let vocab = Vocabulary::new(file.vocab, file.eos)?;
        NGramModel::train(&file.corpus, vocab, order, alpha)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl TokenModel for NGramModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, prefix: &[usize]) -> Result<Distribution, ModelError> {
        check_prefix(&self.vocab, prefix)?;
        let lo = prefix.len().saturating_sub(self.order - 1);
        let ctx = &prefix[lo..];
        let v = self.vocab.len() as f64;
        let probs = match self.counts.get(ctx) {
            Some(slot) => {
                let total: u64 = slot.iter().sum();
                let denom = total as f64 + self.alpha * v;
                slot.iter()
                    .map(|&c| (c as f64 + self.alpha) / denom)
                    .collect()
            }
            None => vec![1.0 / v; self.vocab.len()],
        };
        Distribution::from_probs(probs)
    }
}
