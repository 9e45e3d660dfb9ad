//! Grammar-aligned decoding toolkit.
//!
//! Decoding from an autoregressive token model under a context-free grammar
//! constraint distorts the model's distribution when done greedily: masking
//! inadmissible tokens and renormalizing (grammar-constrained decoding, GCD)
//! redistributes the probability of doomed prefixes onto whatever happens to
//! be admissible. This crate implements, side by side:
//!
//! - [`decode::GcdSampler`]: the greedy masked baseline,
//! - [`decode::AsapSampler`]: adaptive sampling with approximate expected
//!   futures, which learns per-prefix expected-future-grammaticality bounds
//!   from its own samples and converges to the grammar-conditioned model
//!   distribution,
//! - [`decode::RejectionSampler`]: the exact (but possibly very slow)
//!   reference sampler,
//! - [`exact`]: a brute-force enumeration oracle for desk-scale instances,
//! - [`metrics`]: sliding-window KL and expectation diagnostics.
//!
//! Grammars are parsed from a small BNF dialect ([`grammar::Grammar`]) and
//! recognized incrementally character by character, so vocabulary tokens may
//! span terminal boundaries. Token models ([`lm::TokenModel`]) are pluggable:
//! an explicit prefix-keyed table, an additively smoothed n-gram, or a remote
//! logit service.

pub mod decode;
pub mod exact;
pub mod grammar;
pub mod lm;
pub mod metrics;
pub mod trie;

mod logsum;

pub use grammar::{Grammar, GrammarError, RecognizerState, Status};
pub use lm::{Distribution, ModelError, TokenModel, Vocabulary};
