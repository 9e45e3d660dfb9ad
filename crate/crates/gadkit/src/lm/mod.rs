//! Autoregressive next-token models over a finite vocabulary plus EOS.
//!
//! All backends expose the same contract: [`TokenModel::next_distribution`]
//! returns a normalized distribution over the whole vocabulary for a given
//! token-index prefix. Probabilities are kept in log space internally
//! (products of per-step conditionals underflow linear `f64` quickly), with
//! exact linear values retained so loaded table vectors round-trip bit for
//! bit.

mod ngram;
mod remote;
mod table;


pub use ngram::NGramModel;
pub use remote::RemoteModel;
pub use table::TableModel;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::logsum::log_sum_exp;

/// Sum-to-one slack allowed on vectors received from files or services.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model data: {0}")]
    Malformed(String),
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("probability vector has wrong length: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("probability vector sums to {sum}, outside tolerance of 1")]
    NotNormalized { sum: f64 },
    #[error("negative probability {value} at index {index}")]
    NegativeProbability { index: usize, value: f64 },
    #[error("invalid prefix: {0}")]
    InvalidPrefix(String),
    #[error("EOS may only appear as the final token")]
    EosInInterior,
    #[error("sequence is empty or does not end in EOS")]
    BadSequence,
    #[error("cannot tokenize {text:?}: no vocabulary token matches at byte {at}")]
    Untokenizable { text: String, at: usize },
    #[error("remote transport failure after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: String },
}

/// Ordered token list with a distinguished end-of-sequence entry.
///
/// The EOS token's text is reserved: it terminates sequences and is never
/// matched against a grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    eos: usize,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, eos: usize) -> Result<Vocabulary, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::Vocabulary("no tokens".into()));
        }
        if eos >= tokens.len() {
            return Err(ModelError::Vocabulary(format!(
                "eos index {eos} out of range for {} tokens",
                tokens.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &tokens {
            if t.is_empty() {
                return Err(ModelError::Vocabulary("empty token text".into()));
            }
            if !seen.insert(t.as_str()) {
                return Err(ModelError::Vocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, eos })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Concatenated text of a token-index sequence, skipping EOS.
    pub fn render(&self, tokens: &[usize]) -> String {
        let mut s = String::new();
        for &t in tokens {
            if t != self.eos {
                s.push_str(&self.tokens[t]);
            }
        }
        s
    }

    /// Greedy longest-match tokenization of `text` (EOS not included).
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>, ModelError> {
        let mut out = Vec::new();
        let mut rest = text;
        let mut at = 0usize;
        while !rest.is_empty() {
            let mut best: Option<(usize, usize)> = None; // (len, index)
            for (i, t) in self.tokens.iter().enumerate() {
                if i != self.eos && rest.starts_with(t.as_str()) {
                    let cand = (t.len(), i);
                    if best.is_none_or(|b| cand.0 > b.0) {
                        best = Some(cand);
                    }
                }
            }
            match best {
                Some((len, i)) => {
                    out.push(i);
                    rest = &rest[len..];
                    at += len;
                }
                None => {
                    return Err(ModelError::Untokenizable {
                        text: text.to_string(),
                        at,
                    });
                }
            }
        }
        Ok(out)
    }

    /// SHA-256 over the token list and EOS index; used to guard snapshots
    /// and trace/oracle comparisons against vocabulary mixups.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.eos.to_le_bytes());
        for t in &self.tokens {
            h.update(t.len().to_le_bytes());
            h.update(t.as_bytes());
        }
        hex_string(&h.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    use std::fmt::Write;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// A normalized next-token distribution.
///
/// Stores both the exact linear vector (as loaded or computed) and its log,
/// so callers can mix in log-space weights without re-deriving either form.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl Distribution {
    /// From linear probabilities. Rejects negatives and vectors whose sum
    /// strays from 1 beyond [`NORMALIZATION_TOLERANCE`], then divides by the
    /// exact sum so downstream totals are tight.
    pub fn from_probs(mut probs: Vec<f64>) -> Result<Distribution, ModelError> {
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(ModelError::NegativeProbability { index: i, value: p });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(ModelError::NotNormalized { sum });
        }
        if sum != 1.0 {
            for p in &mut probs {
                *p /= sum;
            }
        }
        let log_probs = probs.iter().map(|&p| p.ln()).collect();
        Ok(Distribution { probs, log_probs })
    }

    /// From log probabilities (e.g. a remote service's raw output).
    /// Unconditionally renormalizes via log-sum-exp; `-inf` entries are
    /// allowed and mean zero mass.
    pub fn from_log_probs(log_probs: Vec<f64>) -> Result<Distribution, ModelError> {
        for (i, &lp) in log_probs.iter().enumerate() {
            if lp.is_nan() || lp == f64::INFINITY {
                return Err(ModelError::NegativeProbability {
                    index: i,
                    value: lp,
                });
            }
        }
        let z = log_sum_exp(&log_probs);
        if z == f64::NEG_INFINITY {
            return Err(ModelError::NotNormalized { sum: 0.0 });
        }
        let log_probs: Vec<f64> = log_probs.into_iter().map(|lp| lp - z).collect();
        let probs = log_probs.iter().map(|&lp| lp.exp()).collect();
        Ok(Distribution { probs, log_probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, token: usize) -> f64 {
        self.probs[token]
    }

    pub fn log_prob(&self, token: usize) -> f64 {
        self.log_probs[token]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }
}

/// Next-token conditional distribution P(w_i | w_{1:i-1}).
pub trait TokenModel {
    fn vocabulary(&self) -> &Vocabulary;

    /// Distribution over the next token given a prefix of token indices.
    /// The prefix must contain valid indices and no EOS.
    fn next_distribution(&self, prefix: &[usize]) -> Result<Distribution, ModelError>;

    /// Joint log probability of a complete sequence (single EOS at the end).
    /// `-inf` if any step has zero mass.
    fn sequence_logprob(&self, tokens: &[usize]) -> Result<f64, ModelError> {
        let eos = self.vocabulary().eos();
        match tokens.last() {
            Some(&t) if t == eos => {}
            _ => return Err(ModelError::BadSequence),
        }
        if tokens[..tokens.len() - 1].contains(&eos) {
            return Err(ModelError::EosInInterior);
        }
        let mut total = 0.0;
        for i in 0..tokens.len() {
            let dist = self.next_distribution(&tokens[..i])?;
            total += dist.log_prob(tokens[i]);
        }
        Ok(total)
    }
}

pub(crate) fn check_prefix(vocab: &Vocabulary, prefix: &[usize]) -> Result<(), ModelError> {
    for &t in prefix {
        if t >= vocab.len() {
            return Err(ModelError::InvalidPrefix(format!(
                "token index {t} out of range for vocabulary of {}",
                vocab.len()
            )));
        }
        if t == vocab.eos() {
            return Err(ModelError::InvalidPrefix("prefix contains EOS".into()));
        }
    }
    Ok(())
}
