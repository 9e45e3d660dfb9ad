//! The three samplers: rejection (exact reference), greedy masked (GCD),
//! and adaptive (ASAp), plus the shared categorical sampling kernel and
//! trace I/O.
//!
//! Randomness is counter-based: every step draws one 64-bit uniform from a
//! ChaCha stream keyed by `(seed, iteration, step)`, so runs replay
//! identically regardless of interruption, and the adaptive sampler's first
//! iteration is token-for-token identical to the greedy baseline under the
//! same seed.

use std::io::{BufRead, Write};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::Grammar;
use crate::lm::{ModelError, TokenModel};
use crate::logsum::log_sum_exp2;
use crate::trie::{SamplerTrie, TrieError};

/// Attempts per emitted sample before the rejection sampler gives up.
pub const DEFAULT_REJECTION_BUDGET: usize = 100_000;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("trie error: {0}")]
    Trie(#[from] TrieError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid decode config: {0}")]
    BadConfig(String),
    #[error("no admissible continuation fits within max_len = {max_len}")]
    BudgetDeadEnd { max_len: usize },
    #[error("rejection sampler exhausted its budget of {attempts} attempts")]
    Exhausted { attempts: usize },
    #[error("sampling weights are all zero: {0}")]
    ZeroMass(String),
    #[error("bad trace line {line}: {msg}")]
    BadTrace { line: usize, msg: String },
}

/// Budget and reproducibility knobs for one decoding run.
#[derive(Debug, Clone, Copy)]
pub struct DecodeConfig {
    /// Maximum tokens per sequence, EOS included.
    pub max_len: usize,
    pub seed: u64,
    /// Number of samples to draw in `run_*` helpers.
    pub iterations: u64,
}

impl DecodeConfig {
    fn validate(&self) -> Result<(), DecodeError> {
        if self.max_len < 1 {
            return Err(DecodeError::BadConfig("max_len must be >= 1".into()));
        }
        if self.iterations < 1 {
            return Err(DecodeError::BadConfig("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Counter-based deterministic RNG: one uniform per (iteration, step) key.
#[derive(Debug, Clone, Copy)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> CounterRng {
        CounterRng { seed }
    }

    /// Uniform in [0, 1) for the given key, independent of call order.
    pub fn uniform(&self, iteration: u64, step: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(iteration);
        rng.set_word_pos(u128::from(step) * 2);
        ((rng.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64)
    }
}

/// Categorical draw proportional to nonnegative weights, consuming one
/// uniform `u` in [0, 1). Zero-weight entries are never selected.
pub fn ancestral_step(weights: &[f64], u: f64) -> Result<usize, DecodeError> {
    let mut total = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(DecodeError::ZeroMass(format!(
                "weight {w} at index {i} is invalid"
            )));
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(DecodeError::ZeroMass("total weight is zero".into()));
    }
    let target = u * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if acc > target {
            return Ok(i);
        }
    }
    // Unreachable up to floating-point: fall back to the last positive weight.
    Ok(weights.iter().rposition(|&w| w > 0.0).unwrap())
}

/// One decoding step's bookkeeping: the numerator and normalizer that
/// produced the sampling probability, alongside the raw model probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub token: usize,
    pub log_model_prob: f64,
    /// log of the unnormalized sampling weight P(t|prefix) * ctilde(prefix·t).
    pub log_weight: f64,
    /// log of the weight sum over the vocabulary.
    pub log_norm: f64,
}

/// One decoded sequence with the sampler's own probability accounting.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    /// Token indices, ending in EOS.
    pub tokens: Vec<usize>,
    /// Concatenated token text (EOS excluded).
    pub text: String,
    /// Model joint log probability of `tokens`.
    pub log_p: f64,
    /// The sampler's own joint log probability of `tokens`.
    pub log_q: f64,
    pub grammatical: bool,
    /// 0-based sample ordinal within the run.
    pub iteration: u64,
    pub steps: Vec<StepRecord>,
}

impl SampleTrace {
    pub fn record(&self) -> TraceRecord {
        TraceRecord {
            iter: self.iteration,
            tokens: self.tokens.clone(),
            text: self.text.clone(),
            log_p: self.log_p,
            log_q: self.log_q,
            grammatical: self.grammatical,
        }
    }
}

/// The JSON-lines form of a trace, one object per sample.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceRecord {
    pub iter: u64,
    pub tokens: Vec<usize>,
    pub text: String,
    pub log_p: f64,
    pub log_q: f64,
    pub grammatical: bool,
}

/// Draw a token from weights proportional to exp(log_probs + log_ctilde).
fn weighted_step(
    log_probs: &[f64],
    log_ctilde: &[f64],
    u: f64,
) -> Result<(usize, StepRecord), DecodeError> {
    debug_assert_eq!(log_probs.len(), log_ctilde.len());
    let mut lw = vec![f64::NEG_INFINITY; log_probs.len()];
    let mut max = f64::NEG_INFINITY;
    for i in 0..log_probs.len() {
        let w = log_probs[i] + log_ctilde[i];
        lw[i] = w;
        if w > max {
            max = w;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(DecodeError::ZeroMass(
            "no token has positive model mass and positive expected future".into(),
        ));
    }
    let weights: Vec<f64> = lw.iter().map(|&w| (w - max).exp()).collect();
    let token = ancestral_step(&weights, u)?;
    let log_norm = log_sum_exp2(log_probs, log_ctilde);
    Ok((
        token,
        StepRecord {
            token,
            log_model_prob: log_probs[token],
            log_weight: lw[token],
            log_norm,
        },
    ))
}

fn finish_trace(
    model: &dyn TokenModel,
    g: &Grammar,
    tokens: Vec<usize>,
    steps: Vec<StepRecord>,
    iteration: u64,
    log_q_override: Option<f64>,
) -> SampleTrace {
    let text = model.vocabulary().render(&tokens);
    let grammatical = g.accepts(&text);
    let log_p: f64 = steps.iter().map(|s| s.log_model_prob).sum();
    let log_q =
        log_q_override.unwrap_or_else(|| steps.iter().map(|s| s.log_weight - s.log_norm).sum());
    SampleTrace {
        tokens,
        text,
        log_p,
        log_q,
        grammatical,
        iteration,
        steps,
    }
}

/// Greedy masked sampler: at each step, sample proportionally to
/// P(t|prefix) over the tokens that keep the prefix viable (EOS admissible
/// exactly when the prefix is a sentence). Grammatical by construction;
/// biased relative to the grammar-conditioned model distribution.
pub struct GcdSampler<'a> {
    model: &'a dyn TokenModel,
    grammar: &'a Grammar,
    config: DecodeConfig,
    rng: CounterRng,
    iteration: u64,
}

impl<'a> GcdSampler<'a> {
    pub fn new(
        model: &'a dyn TokenModel,
        grammar: &'a Grammar,
        config: DecodeConfig,
    ) -> Result<GcdSampler<'a>, DecodeError> {
        config.validate()?;
        Ok(GcdSampler {
            model,
            grammar,
            config,
            rng: CounterRng::new(config.seed),
            iteration: 0,
        })
    }

    pub fn sample_one(&mut self) -> Result<SampleTrace, DecodeError> {
        let vocab = self.model.vocabulary();
        let eos = vocab.eos();
        let mut state = self.grammar.init_state();
        let mut tokens: Vec<usize> = Vec::new();
        let mut steps = Vec::new();
        loop {
            let dist = self.model.next_distribution(&tokens)?;
            let mut log_ctilde = vec![f64::NEG_INFINITY; vocab.len()];
            for (t, slot) in log_ctilde.iter_mut().enumerate() {
                let admissible = if t == eos {
                    state.is_complete()
                } else {
                    !state
                        .admissible(self.grammar, vocab.token(t))
                        .expect("vocabulary tokens are nonempty")
                        .is_dead()
                };
                if admissible {
                    *slot = 0.0;
                }
            }
            let u = self.rng.uniform(self.iteration, tokens.len() as u64);
            let (tok, rec) = weighted_step(dist.log_probs(), &log_ctilde, u)?;
            tokens.push(tok);
            steps.push(rec);
            if tok == eos {
                break;
            }
            if tokens.len() >= self.config.max_len {
                return Err(DecodeError::BudgetDeadEnd {
                    max_len: self.config.max_len,
                });
            }
            state = state
                .admissible(self.grammar, vocab.token(tok))
                .expect("vocabulary tokens are nonempty");
        }
        let trace = finish_trace(
            self.model,
            self.grammar,
            tokens,
            steps,
            self.iteration,
            None,
        );
        self.iteration += 1;
        Ok(trace)
    }
}

/// Adaptive sampler: weights each admissible token by the trie's current
/// expected-future-grammaticality bound and tightens the bounds after every
/// sample. Iteration 0 coincides with the greedy baseline; as bounds
/// converge, the sampling law approaches the grammar-conditioned model
/// distribution.
pub struct AsapSampler<'a> {
    model: &'a dyn TokenModel,
    grammar: &'a Grammar,
    config: DecodeConfig,
    rng: CounterRng,
    trie: SamplerTrie,
}

impl<'a> AsapSampler<'a> {
    /// `trie` may be fresh or loaded from a snapshot; iteration numbering
    /// (and thus the random stream) continues from its sample count.
    pub fn new(
        model: &'a dyn TokenModel,
        grammar: &'a Grammar,
        config: DecodeConfig,
        trie: SamplerTrie,
    ) -> Result<AsapSampler<'a>, DecodeError> {
        config.validate()?;
        if trie.vocab_fingerprint() != model.vocabulary().fingerprint() {
            return Err(DecodeError::Trie(TrieError::FingerprintMismatch));
        }
        Ok(AsapSampler {
            model,
            grammar,
            config,
            rng: CounterRng::new(config.seed),
            trie,
        })
    }

    pub fn trie(&self) -> &SamplerTrie {
        &self.trie
    }

    pub fn into_trie(self) -> SamplerTrie {
        self.trie
    }

    pub fn sample_one(&mut self) -> Result<SampleTrace, DecodeError> {
        let vocab = self.model.vocabulary();
        let eos = vocab.eos();
        let iteration = self.trie.sample_count();
        let mut tokens: Vec<usize> = Vec::new();
        let mut steps = Vec::new();

        if self.trie.root().recognizer().is_none() {
            let init = self.grammar.init_state();
            self.trie.root_mut().set_recognizer(init);
        }
        let mut node = self.trie.root_mut();
        loop {
            node.expand(self.model, self.grammar, &tokens)?;
            let u = self.rng.uniform(iteration, tokens.len() as u64);
            let (tok, rec) = weighted_step(
                node.log_probs().expect("just expanded"),
                node.log_ctilde(),
                u,
            )
            .map_err(|e| match e {
                // A visited node with zero total mass contradicts the
                // upper-bound property; surface it as such.
                DecodeError::ZeroMass(msg) => DecodeError::ZeroMass(format!(
                    "normalization collapse at a visited prefix ({msg})"
                )),
                other => other,
            })?;
            tokens.push(tok);
            steps.push(rec);
            if tok == eos {
                break;
            }
            if tokens.len() >= self.config.max_len {
                return Err(DecodeError::BudgetDeadEnd {
                    max_len: self.config.max_len,
                });
            }
            let child_state = node
                .recognizer()
                .expect("expanded node has a recognizer")
                .admissible(self.grammar, vocab.token(tok))
                .expect("vocabulary tokens are nonempty");
            let child = node.child_or_insert(tok);
            if child.recognizer().is_none() {
                child.set_recognizer(child_state);
            }
            node = child;
        }
        self.trie.record_and_backpropagate(&tokens)?;
        Ok(finish_trace(
            self.model,
            self.grammar,
            tokens,
            steps,
            iteration,
            None,
        ))
    }
}

/// Unconstrained ancestral sampler with a grammaticality filter: exact for
/// the grammar-conditioned target, but spends 1/C attempts per sample.
pub struct RejectionSampler<'a> {
    model: &'a dyn TokenModel,
    grammar: &'a Grammar,
    config: DecodeConfig,
    rng: CounterRng,
    budget: usize,
    /// Global attempt ordinal; each attempt consumes its own RNG stream.
    attempt: u64,
    emitted: u64,
}

impl<'a> RejectionSampler<'a> {
    pub fn new(
        model: &'a dyn TokenModel,
        grammar: &'a Grammar,
        config: DecodeConfig,
        budget: usize,
    ) -> Result<RejectionSampler<'a>, DecodeError> {
        config.validate()?;
        if budget < 1 {
            return Err(DecodeError::BadConfig("attempt budget must be >= 1".into()));
        }
        Ok(RejectionSampler {
            model,
            grammar,
            config,
            rng: CounterRng::new(config.seed),
            budget,
            attempt: 0,
            emitted: 0,
        })
    }

    /// Attempts drawn so far across all emitted samples.
    pub fn attempts(&self) -> u64 {
        self.attempt
    }

    pub fn sample_one(&mut self) -> Result<SampleTrace, DecodeError> {
        let eos = self.model.vocabulary().eos();
        for _ in 0..self.budget {
            let stream = self.attempt;
            self.attempt += 1;
            let mut tokens: Vec<usize> = Vec::new();
            let mut steps = Vec::new();
            let mut ok = false;
            loop {
                let dist = self.model.next_distribution(&tokens)?;
                let u = self.rng.uniform(stream, tokens.len() as u64);
                let tok = ancestral_step(dist.probs(), u)?;
                tokens.push(tok);
                steps.push(StepRecord {
                    token: tok,
                    log_model_prob: dist.log_prob(tok),
                    log_weight: dist.log_prob(tok),
                    log_norm: 0.0,
                });
                if tok == eos {
                    ok = true;
                    break;
                }
                if tokens.len() >= self.config.max_len {
                    break; // over budget: this attempt cannot be grammatical
                }
            }
            if !ok {
                continue;
            }
            let text = self.model.vocabulary().render(&tokens);
            if self.grammar.accepts(&text) {
                let log_p: f64 = steps.iter().map(|s| s.log_model_prob).sum();
                let trace = SampleTrace {
                    tokens,
                    text,
                    log_p,
                    // Accepted rejection samples are raw model draws: the
                    // induced law is exactly the conditioned target, and the
                    // sampler's own probability is the model's.
                    log_q: log_p,
                    grammatical: true,
                    iteration: self.emitted,
                    steps,
                };
                self.emitted += 1;
                return Ok(trace);
            }
        }
        Err(DecodeError::Exhausted {
            attempts: self.budget,
        })
    }
}

/// Run the greedy masked sampler for `config.iterations` samples.
pub fn run_gcd(
    model: &dyn TokenModel,
    g: &Grammar,
    config: DecodeConfig,
) -> Result<Vec<SampleTrace>, DecodeError> {
    let mut sampler = GcdSampler::new(model, g, config)?;
    (0..config.iterations)
        .map(|_| sampler.sample_one())
        .collect()
}

/// Run the adaptive sampler for `config.iterations` samples, returning the
/// traces and the final trie.
pub fn run_asap(
    model: &dyn TokenModel,
    g: &Grammar,
    config: DecodeConfig,
    trie: SamplerTrie,
) -> Result<(Vec<SampleTrace>, SamplerTrie), DecodeError> {
    let mut sampler = AsapSampler::new(model, g, config, trie)?;
    let traces: Result<Vec<_>, _> = (0..config.iterations)
        .map(|_| sampler.sample_one())
        .collect();
    Ok((traces?, sampler.into_trie()))
}

/// Run the rejection sampler for `config.iterations` accepted samples.
pub fn run_rejection(
    model: &dyn TokenModel,
    g: &Grammar,
    config: DecodeConfig,
    budget: usize,
) -> Result<Vec<SampleTrace>, DecodeError> {
    let mut sampler = RejectionSampler::new(model, g, config, budget)?;
    (0..config.iterations)
        .map(|_| sampler.sample_one())
        .collect()
}

/// Write records as JSON lines.
pub fn write_jsonl<'a>(
    w: &mut impl Write,
    records: impl IntoIterator<Item = &'a TraceRecord>,
) -> std::io::Result<()> {
    for r in records {
        let line = serde_json::to_string(r).expect("serialization cannot fail");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Read JSON-lines traces, skipping blank lines and `{"meta": ...}` headers.
pub fn read_jsonl(r: impl BufRead) -> Result<Vec<TraceRecord>, DecodeError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(trimmed).map_err(|e| DecodeError::BadTrace {
                line: idx + 1,
                msg: e.to_string(),
            })?;
        if value.get("meta").is_some() {
            continue;
        }
        let record: TraceRecord =
            serde_json::from_value(value).map_err(|e| DecodeError::BadTrace {
                line: idx + 1,
                msg: e.to_string(),
            })?;
        out.push(record);
    }
    Ok(out)
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        /// The categorical kernel returns an in-range index with positive
        /// weight, for any weight vector with some mass.
        #[test]
        fn ancestral_step_respects_support(
            weights in proptest::collection::vec(0.0f64..1.0, 1..12),
            u in 0.0f64..1.0,
        ) {
            let total: f64 = weights.iter().sum();
            prop_assume!(total > 0.0);
            let idx = ancestral_step(&weights, u).unwrap();
            prop_assert!(idx < weights.len());
            prop_assert!(weights[idx] > 0.0);
        }

        /// The counter RNG is a pure function of its key.
        #[test]
        fn counter_rng_is_pure(seed: u64, iteration: u64, step in 0u64..1_000_000) {
            let a = CounterRng::new(seed).uniform(iteration, step);
            let b = CounterRng::new(seed).uniform(iteration, step);
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!((0.0..1.0).contains(&a));
        }
    }
}
