//! The adaptive sampler trie: per-prefix cache of model conditionals,
//! grammaticality masks, and the current overapproximation of expected
//! future grammaticality (EFG).
//!
//! Each node stores, per vocabulary token `t`, the value `ctilde(prefix·t)`
//! on the edge leading to `t`:
//!
//! - masked tokens (the extension leaves the prefix language) hold exactly 0;
//! - admissible but never-sampled extensions hold exactly 1 (the binary
//!   overapproximation a greedy masked sampler uses);
//! - sampled extensions hold the expectation, under the cached model
//!   conditionals, of their own children's values; after each recorded
//!   sample [`SamplerTrie::record_and_backpropagate`] refreshes the sampled
//!   path from the end-of-sequence edge inward.
//!
//! Values are kept in log space (`-inf` = 0); the backward update is a
//! log-sum-exp. Stored values only ever decrease, stay in `[0, 1]`, and
//! remain upper bounds on the exact EFG.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{Grammar, RecognizerState};
use crate::lm::{ModelError, TokenModel, Vocabulary};
use crate::logsum::log_sum_exp2;

pub const SNAPSHOT_VERSION: u32 = 1;

/// The backward-update primitive: log of the expectation, under
/// conditionals `log_probs`, of the per-token values `log_values`.
/// This exact routine (a log-sum-exp over the pairwise sums) produces every
/// stored parent-edge value, so recomputations compare bit for bit.
pub fn log_expectation(log_probs: &[f64], log_values: &[f64]) -> f64 {
    log_sum_exp2(log_probs, log_values)
}

#[derive(Debug, Error)]
pub enum TrieError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("sampled path missing from trie at token {at} of {len}")]
    PathNotFound { at: usize, len: usize },
    #[error("node visited before expansion")]
    Unexpanded,
    #[error("snapshot version {found} unsupported (expected {SNAPSHOT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("corrupt trie snapshot: {0}")]
    Corrupt(String),
    #[error("snapshot was built for a different vocabulary")]
    FingerprintMismatch,
    #[error("sequence must be nonempty and end with a single EOS")]
    BadSequence,
}

/// One prefix of the sampled tree.
#[derive(Debug, Clone)]
pub struct TrieNode {
    children: BTreeMap<usize, TrieNode>,
    /// Cached log P(.|prefix); `None` until the node is expanded.
    log_probs: Option<Vec<f64>>,
    /// Per token: does `prefix·token` stay in the prefix language
    /// (for EOS: is `prefix` a sentence)?
    mask: Vec<bool>,
    /// Per token: log of the current overapproximation of EFG(prefix·token).
    log_ctilde: Vec<f64>,
    /// Recognizer for this prefix; rebuilt lazily after a snapshot load.
    recognizer: Option<RecognizerState>,
}

impl TrieNode {
    fn unexpanded() -> TrieNode {
        TrieNode {
            children: BTreeMap::new(),
            log_probs: None,
            mask: Vec::new(),
            log_ctilde: Vec::new(),
            recognizer: None,
        }
    }

    pub fn is_expanded(&self) -> bool {
        self.log_probs.is_some()
    }

    pub fn children(&self) -> impl Iterator<Item = (usize, &TrieNode)> {
        self.children.iter().map(|(&t, n)| (t, n))
    }

    pub fn child(&self, token: usize) -> Option<&TrieNode> {
        self.children.get(&token)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn log_ctilde(&self) -> &[f64] {
        &self.log_ctilde
    }

    pub fn log_probs(&self) -> Option<&[f64]> {
        self.log_probs.as_deref()
    }

    pub(crate) fn recognizer(&self) -> Option<&RecognizerState> {
        self.recognizer.as_ref()
    }

    pub(crate) fn set_recognizer(&mut self, state: RecognizerState) {
        self.recognizer = Some(state);
    }

    pub(crate) fn child_or_insert(&mut self, token: usize) -> &mut TrieNode {
        self.children
            .entry(token)
            .or_insert_with(TrieNode::unexpanded)
    }

    /// Cache the model conditional and grammar mask for this node's prefix.
    /// The admissible-token values start at 1 (log 0), masked ones at 0.
    pub fn expand(
        &mut self,
        model: &dyn TokenModel,
        g: &Grammar,
        prefix: &[usize],
    ) -> Result<(), TrieError> {
        if self.is_expanded() {
            return Ok(());
        }
        let state = self.recognizer.as_ref().ok_or(TrieError::Unexpanded)?;
        let vocab = model.vocabulary();
        let dist = model.next_distribution(prefix)?;
        let mut mask = vec![false; vocab.len()];
        let mut log_ctilde = vec![f64::NEG_INFINITY; vocab.len()];
        for t in 0..vocab.len() {
            let admissible = if t == vocab.eos() {
                state.is_complete()
            } else {
                !state
                    .admissible(g, vocab.token(t))
                    .expect("vocabulary tokens are nonempty")
                    .is_dead()
            };
            if admissible {
                mask[t] = true;
                log_ctilde[t] = 0.0;
            }
        }
        self.log_probs = Some(dist.log_probs().to_vec());
        self.mask = mask;
        self.log_ctilde = log_ctilde;
        Ok(())
    }
}

/// Prefix tree shared across the iterations of one adaptive decoding run.
#[derive(Debug, Clone)]
pub struct SamplerTrie {
    root: TrieNode,
    sample_count: u64,
    vocab_fingerprint: String,
    eos: usize,
}

impl SamplerTrie {
    pub fn new(vocab: &Vocabulary) -> SamplerTrie {
        SamplerTrie {
            root: TrieNode::unexpanded(),
            sample_count: 0,
            vocab_fingerprint: vocab.fingerprint(),
            eos: vocab.eos(),
        }
    }

    pub fn root(&self) -> &TrieNode {
        &self.root
    }

    pub(crate) fn root_mut(&mut self) -> &mut TrieNode {
        &mut self.root
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn vocab_fingerprint(&self) -> &str {
        &self.vocab_fingerprint
    }

    /// Record one complete sampled sequence (ending in EOS, every prefix
    /// node already expanded) and propagate the expected-future values from
    /// the EOS edge inward: each parent edge becomes the expectation, under
    /// the child's cached conditionals, of the child's edge values. The EOS
    /// edge itself stays at 1: a terminated grammatical sequence has no
    /// future to lose.
    pub fn record_and_backpropagate(&mut self, sequence: &[usize]) -> Result<(), TrieError> {
        match sequence.last() {
            Some(&t) if t == self.eos => {}
            _ => return Err(TrieError::BadSequence),
        }
        if sequence[..sequence.len() - 1].contains(&self.eos) {
            return Err(TrieError::BadSequence);
        }

        fn refresh(
            node: &mut TrieNode,
            rest: &[usize],
            at: usize,
            len: usize,
        ) -> Result<f64, TrieError> {
            let log_probs = node.log_probs.as_ref().ok_or(TrieError::Unexpanded)?;
            if rest.len() == 1 {
                // rest[0] is the EOS edge; nothing below it to refresh.
                return Ok(log_expectation(log_probs, &node.log_ctilde));
            }
            let tok = rest[0];
            let child = node
                .children
                .get_mut(&tok)
                .ok_or(TrieError::PathNotFound { at, len })?;
            let value = refresh(child, &rest[1..], at + 1, len)?;
            node.log_ctilde[tok] = value;
            let log_probs = node.log_probs.as_ref().unwrap();
            Ok(log_expectation(log_probs, &node.log_ctilde))
        }

        refresh(&mut self.root, sequence, 0, sequence.len())?;
        self.sample_count += 1;
        Ok(())
    }

    /// Current overapproximation of expected future grammaticality for a
    /// token prefix: the stored value where one exists, otherwise 1 for
    /// admissible prefixes and 0 for inadmissible ones.
    pub fn efg(&self, g: &Grammar, vocab: &Vocabulary, prefix: &[usize]) -> f64 {
        if prefix.is_empty() {
            return match &self.root.log_probs {
                Some(lp) => log_expectation(lp, &self.root.log_ctilde).exp(),
                None => {
                    if g.init_state().is_dead() {
                        0.0
                    } else {
                        1.0
                    }
                }
            };
        }
        let mut node = Some(&self.root);
        for (i, &tok) in prefix.iter().enumerate() {
            let Some(n) = node else { break };
            if i + 1 == prefix.len() && n.is_expanded() {
                return n.log_ctilde[tok].exp();
            }
            node = n.children.get(&tok);
        }
        // Unvisited prefix: binary admissibility via the recognizer.
        let mut state = g.init_state();
        for (i, &tok) in prefix.iter().enumerate() {
            if state.is_dead() {
                return 0.0;
            }
            if tok == self.eos {
                let terminal = i + 1 == prefix.len() && state.is_complete();
                return if terminal { 1.0 } else { 0.0 };
            }
            state = state
                .admissible(g, vocab.token(tok))
                .expect("vocabulary tokens are nonempty");
        }
        if state.is_dead() {
            0.0
        } else {
            1.0
        }
    }

    /// Depth-first visit of every node with its token path.
    pub fn walk(&self, mut f: impl FnMut(&[usize], &TrieNode)) {
        fn rec(node: &TrieNode, path: &mut Vec<usize>, f: &mut impl FnMut(&[usize], &TrieNode)) {
            f(path, node);
            for (&t, child) in &node.children {
                path.push(t);
                rec(child, path, f);
                path.pop();
            }
        }
        rec(&self.root, &mut Vec::new(), &mut f);
    }

    /// Serialize to the JSON snapshot format. Log values are written with
    /// shortest-roundtrip formatting, so a save/load cycle reproduces the
    /// exact binary values (zero probability is written as `null`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrieError> {
        let snapshot = Snapshot {
            version: SNAPSHOT_VERSION,
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            sample_count: self.sample_count,
            nodes: encode_node(&self.root),
        };
        let text = serde_json::to_string(&snapshot).expect("serialization cannot fail");
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Load a snapshot saved by [`save`](Self::save). The vocabulary must
    /// match the one the snapshot was built with; recognizer states are
    /// rebuilt lazily on first use.
    pub fn load(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<SamplerTrie, TrieError> {
        let text = std::fs::read_to_string(path)?;
        let snapshot: Snapshot =
            serde_json::from_str(&text).map_err(|e| TrieError::Corrupt(e.to_string()))?;
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(TrieError::VersionMismatch {
                found: snapshot.version,
            });
        }
        if snapshot.vocab_fingerprint != vocab.fingerprint() {
            return Err(TrieError::FingerprintMismatch);
        }
        let root = decode_node(snapshot.nodes, vocab.len())?;
        Ok(SamplerTrie {
            root,
            sample_count: snapshot.sample_count,
            vocab_fingerprint: snapshot.vocab_fingerprint,
            eos: vocab.eos(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    vocab_fingerprint: String,
    sample_count: u64,
    nodes: SnapshotNode,
}

#[derive(Serialize, Deserialize)]
struct SnapshotNode {
    #[serde(skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<bool>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ctilde: Option<Vec<Option<f64>>>,
    children: BTreeMap<String, SnapshotNode>,
}

fn pack(values: &[f64]) -> Vec<Option<f64>> {
    values
        .iter()
        .map(|&v| {
            if v == f64::NEG_INFINITY {
                None
            } else {
                Some(v)
            }
        })
        .collect()
}

fn unpack(values: Vec<Option<f64>>) -> Vec<f64> {
    values
        .into_iter()
        .map(|v| v.unwrap_or(f64::NEG_INFINITY))
        .collect()
}

fn encode_node(node: &TrieNode) -> SnapshotNode {
    SnapshotNode {
        probs: node.log_probs.as_ref().map(|v| pack(v)),
        mask: node.log_probs.is_some().then(|| node.mask.clone()),
        ctilde: node.log_probs.is_some().then(|| pack(&node.log_ctilde)),
        children: node
            .children
            .iter()
            .map(|(t, n)| (t.to_string(), encode_node(n)))
            .collect(),
    }
}

fn decode_node(snap: SnapshotNode, vocab_len: usize) -> Result<TrieNode, TrieError> {
    let expanded = snap.probs.is_some();
    if !expanded && (!snap.children.is_empty() || snap.ctilde.is_some()) {
        return Err(TrieError::Corrupt("unexpanded node with children".into()));
    }
    let (log_probs, mask, log_ctilde) = if expanded {
        let probs = unpack(snap.probs.unwrap());
        let mask = snap
            .mask
            .ok_or_else(|| TrieError::Corrupt("missing mask".into()))?;
        let ctilde = unpack(
            snap.ctilde
                .ok_or_else(|| TrieError::Corrupt("missing ctilde".into()))?,
        );
        if probs.len() != vocab_len || mask.len() != vocab_len || ctilde.len() != vocab_len {
            return Err(TrieError::Corrupt("vector length mismatch".into()));
        }
        for (i, &c) in ctilde.iter().enumerate() {
            if c > 0.0 || c.is_nan() {
                return Err(TrieError::Corrupt(format!("ctilde[{i}] out of [0,1]")));
            }
            if !mask[i] && c != f64::NEG_INFINITY {
                return Err(TrieError::Corrupt(format!("masked ctilde[{i}] nonzero")));
            }
        }
        (Some(probs), mask, ctilde)
    } else {
        (None, Vec::new(), Vec::new())
    };
    let mut children = BTreeMap::new();
    for (key, child) in snap.children {
        let tok: usize = key
            .parse()
            .map_err(|_| TrieError::Corrupt(format!("bad child key {key:?}")))?;
        if tok >= vocab_len {
            return Err(TrieError::Corrupt(format!(
                "child token {tok} out of range"
            )));
        }
        children.insert(tok, decode_node(child, vocab_len)?);
    }
    Ok(TrieNode {
        children,
        log_probs,
        mask,
        log_ctilde,
        recognizer: None,
    })
}
