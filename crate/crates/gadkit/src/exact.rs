//! Brute-force oracles for desk-scale instances.
//!
//! Everything here enumerates rather than samples, in plain linear-space
//! arithmetic, deliberately sharing no code path with the samplers or the
//! trie: these are the reference values the rest of the crate is tested
//! against.
//!
//! - [`enumerate_sentences`]: all sentences of a grammar up to a length
//!   bound, by expanding derivations (no Earley involved).
//! - [`enumerate_q`]: the grammar-conditioned target distribution
//!   Q = P restricted to the language and renormalized, its normalizer C,
//!   and the exact expected future grammaticality of every enumerated
//!   prefix.
//! - [`enumerate_gcd`]: the exact law of the greedy masked sampler.
//! - [`exact_kl`]: KL divergence between enumerated distributions.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::grammar::{Grammar, RecognizerState, Symbol};
use crate::lm::{ModelError, TokenModel, Vocabulary};

/// Probability mass allowed past the length bound before an instance is
/// rejected as not desk-scale.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("probability mass {residual:.3e} lies beyond the length bound (tolerance {tolerance:.1e}); instance is not desk-scale")]
    TailMassTooLarge { residual: f64, tolerance: f64 },
    #[error("no grammatical sentence has positive mass within the length bound")]
    EmptySupport,
    #[error("distinct token sequences render identical text {text:?}")]
    TextCollision { text: String },
    #[error("support violation: sequence {text:?} has mass {mass:.3e} in the left distribution but none in the right")]
    SupportViolation { text: String, mass: f64 },
}

/// An exhaustively enumerated distribution over complete token sequences,
/// with per-prefix expected future grammaticality.
#[derive(Debug, Clone)]
pub struct ExactDistribution {
    vocab_fingerprint: String,
    /// Total model mass of grammatical sequences (the normalizer C). For
    /// [`enumerate_gcd`] this is 1: the greedy sampler never loses mass.
    normalizer: f64,
    /// Normalized probability per complete sequence (token indices, EOS last).
    support: BTreeMap<Vec<usize>, f64>,
    /// Raw model mass P(w) per supported sequence.
    joint: BTreeMap<Vec<usize>, f64>,
    /// Expected future grammaticality per enumerated prefix. Sentence keys
    /// (ending in EOS) hold 1.
    efg: BTreeMap<Vec<usize>, f64>,
    /// Rendered text per supported sequence.
    texts: BTreeMap<Vec<usize>, String>,
    /// Model mass that terminated ungrammatically.
    dead_mass: f64,
    /// Model mass cut off at the length bound.
    tail_mass: f64,
}

impl ExactDistribution {
    pub fn vocab_fingerprint(&self) -> &str {
        &self.vocab_fingerprint
    }

    /// The normalizer C = sum of P(w) over grammatical w.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Model mass that terminated outside the language.
    pub fn dead_mass(&self) -> f64 {
        self.dead_mass
    }

    /// Model mass cut off at the length bound (within tolerance by
    /// construction).
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Normalized distribution over complete sequences.
    pub fn q_map(&self) -> &BTreeMap<Vec<usize>, f64> {
        &self.support
    }

    /// Raw model mass per supported sequence.
    pub fn p_map(&self) -> &BTreeMap<Vec<usize>, f64> {
        &self.joint
    }

    pub fn q(&self, tokens: &[usize]) -> Option<f64> {
        self.support.get(tokens).copied()
    }

    pub fn text(&self, tokens: &[usize]) -> Option<&str> {
        self.texts.get(tokens).map(|s| s.as_str())
    }

    /// Exact expected future grammaticality of a prefix, if enumerated.
    pub fn efg(&self, prefix: &[usize]) -> Option<f64> {
        self.efg.get(prefix).copied()
    }

    pub fn efg_map(&self) -> &BTreeMap<Vec<usize>, f64> {
        &self.efg
    }

    /// Expectation of a text predicate under the distribution.
    pub fn expectation(&self, pred: impl Fn(&str) -> bool) -> f64 {
        self.support
            .iter()
            .map(|(k, &q)| if pred(&self.texts[k]) { q } else { 0.0 })
            .sum()
    }

    /// JSON dump: `{"C", "vocab_fingerprint", "support", "efg"}` with
    /// text keys. Fails if two supported token sequences render the same
    /// text.
    pub fn to_json(&self, vocab: &Vocabulary) -> Result<String, ExactError> {
        #[derive(Serialize)]
        struct Dump<'a> {
            #[serde(rename = "C")]
            c: f64,
            vocab_fingerprint: &'a str,
            support: BTreeMap<&'a str, f64>,
            efg: BTreeMap<String, f64>,
        }
        let mut support = BTreeMap::new();
        for (k, &q) in &self.support {
            let text = self.texts[k].as_str();
            if support.insert(text, q).is_some() {
                return Err(ExactError::TextCollision {
                    text: text.to_string(),
                });
            }
        }
        let mut efg: BTreeMap<String, f64> = BTreeMap::new();
        for (k, &c) in &self.efg {
            let text = vocab.render(k);
            // Prefix texts can legitimately collide across tokenizations;
            // keep the one with the longer token sequence deterministic by
            // overwriting only equal values.
            if let Some(&prev) = efg.get(text.as_str()) {
                if (prev - c).abs() > 1e-9 {
                    return Err(ExactError::TextCollision { text });
                }
            }
            efg.insert(text, c);
        }
        let dump = Dump {
            c: self.normalizer,
            vocab_fingerprint: &self.vocab_fingerprint,
            support,
            efg,
        };
        Ok(serde_json::to_string_pretty(&dump).expect("serialization cannot fail"))
    }
}

/// All sentences of the grammar with at most `max_chars` characters, by
/// exhaustive expansion of leftmost derivations with minimum-length pruning.
pub fn enumerate_sentences(g: &Grammar, max_chars: usize) -> BTreeSet<String> {
    // Minimum derivable character length per nonterminal (None = unproductive).
    let n = g.nonterminals().len();
    let mut min_len: Vec<Option<usize>> = vec![None; n];
    loop {
        let mut changed = false;
        for p in g.productions() {
            let mut total = 0usize;
            let mut ok = true;
            for s in &p.rhs {
                match s {
                    Symbol::Terminal(t) => total += g.terminal_chars(*t).len(),
                    Symbol::Nonterminal(nt) => match min_len[*nt] {
                        Some(m) => total += m,
                        None => {
                            ok = false;
                            break;
                        }
                    },
                }
            }
            if ok && min_len[p.lhs].is_none_or(|cur| total < cur) {
                min_len[p.lhs] = Some(total);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut out = BTreeSet::new();
    let Some(_) = min_len[g.start()] else {
        return out;
    };

    // Sentential form: consumed prefix + remaining symbols. A visited set
    // guards against unit cycles (e.g. `S ::= S | "a"`).
    let mut visited: HashSet<(String, Vec<Symbol>)> = HashSet::new();
    let mut stack: Vec<(String, Vec<Symbol>)> =
        vec![(String::new(), vec![Symbol::Nonterminal(g.start())])];
    while let Some((mut prefix, mut rest)) = stack.pop() {
        // Consume leading terminals.
        while let Some(Symbol::Terminal(t)) = rest.first() {
            prefix.extend(g.terminal_chars(*t));
            rest.remove(0);
        }
        let remaining_min: usize = rest
            .iter()
            .map(|s| match s {
                Symbol::Terminal(t) => g.terminal_chars(*t).len(),
                Symbol::Nonterminal(nt) => min_len[*nt].unwrap_or(usize::MAX),
            })
            .fold(0usize, usize::saturating_add);
        if prefix.chars().count().saturating_add(remaining_min) > max_chars {
            continue;
        }
        match rest.first() {
            None => {
                out.insert(prefix);
            }
            Some(Symbol::Nonterminal(nt)) => {
                let nt = *nt;
                if !visited.insert((prefix.clone(), rest.clone())) {
                    continue;
                }
                for p in g.productions() {
                    if p.lhs != nt {
                        continue;
                    }
                    let mut next = p.rhs.clone();
                    next.extend_from_slice(&rest[1..]);
                    stack.push((prefix.clone(), next));
                }
            }
            Some(Symbol::Terminal(_)) => unreachable!(),
        }
    }
    out
}

struct QWalk<'a> {
    model: &'a dyn TokenModel,
    len_bound: usize,
    eos: usize,
    support: BTreeMap<Vec<usize>, f64>,
    efg: BTreeMap<Vec<usize>, f64>,
    texts: BTreeMap<Vec<usize>, String>,
    tail: f64,
    dead: f64,
}

impl QWalk<'_> {
    /// Walks the full model tree under `prefix` (carrying its recognizer
    /// state, or `None` once the grammar is dead) and returns the
    /// grammatical mass below. `mass` is the joint model mass of `prefix`.
    fn walk(
        &mut self,
        prefix: &mut Vec<usize>,
        state: Option<&RecognizerState>,
        g: &Grammar,
        mass: f64,
    ) -> Result<f64, ExactError> {
        let dist = self.model.next_distribution(prefix)?;
        let mut grammatical = 0.0;
        for t in 0..dist.len() {
            let p = dist.prob(t);
            if p == 0.0 {
                continue;
            }
            let m = mass * p;
            if t == self.eos {
                if state.is_some_and(|s| s.is_complete()) {
                    let mut sent = prefix.clone();
                    sent.push(t);
                    let text = self.model.vocabulary().render(&sent);
                    self.support.insert(sent.clone(), m);
                    self.efg.insert(sent.clone(), 1.0);
                    self.texts.insert(sent, text);
                    grammatical += m;
                } else {
                    self.dead += m;
                }
            } else if prefix.len() + 2 > self.len_bound {
                // A non-EOS extension could no longer terminate in bound.
                self.tail += m;
            } else {
                let child_state = state.and_then(|s| {
                    let adv = s
                        .admissible(g, self.model.vocabulary().token(t))
                        .expect("vocabulary tokens are nonempty");
                    if adv.is_dead() {
                        None
                    } else {
                        Some(adv)
                    }
                });
                prefix.push(t);
                let sub = self.walk(prefix, child_state.as_ref(), g, m)?;
                prefix.pop();
                grammatical += sub;
            }
        }
        if mass > 0.0 {
            self.efg.insert(prefix.clone(), grammatical / mass);
        }
        Ok(grammatical)
    }
}

/// Exhaustively compute Q, C and exact per-prefix expected future
/// grammaticality for sequences of at most `len_bound` tokens (EOS
/// included). Fails if more than `tail_tol` probability mass lies beyond
/// the bound.
pub fn enumerate_q(
    model: &dyn TokenModel,
    g: &Grammar,
    len_bound: usize,
    tail_tol: f64,
) -> Result<ExactDistribution, ExactError> {
    let init = g.init_state();
    let state = if init.is_dead() { None } else { Some(init) };
    let mut walk = QWalk {
        model,
        len_bound,
        eos: model.vocabulary().eos(),
        support: BTreeMap::new(),
        efg: BTreeMap::new(),
        texts: BTreeMap::new(),
        tail: 0.0,
        dead: 0.0,
    };
    let mut prefix = Vec::new();
    let c = walk.walk(&mut prefix, state.as_ref(), g, 1.0)?;
    if walk.tail > tail_tol {
        return Err(ExactError::TailMassTooLarge {
            residual: walk.tail,
            tolerance: tail_tol,
        });
    }
    if c <= 0.0 || walk.support.is_empty() {
        return Err(ExactError::EmptySupport);
    }
    let joint = walk.support.clone();
    let support = walk.support.into_iter().map(|(k, m)| (k, m / c)).collect();
    Ok(ExactDistribution {
        vocab_fingerprint: model.vocabulary().fingerprint(),
        normalizer: c,
        support,
        joint,
        efg: walk.efg,
        texts: walk.texts,
        dead_mass: walk.dead,
        tail_mass: walk.tail,
    })
}

/// The exact law of the greedy masked (GCD) sampler, by walking every
/// admissible path and multiplying renormalized masked conditionals.
///
/// The returned object's `q_map` is the sampler's distribution; its
/// `p_map` holds the raw model mass of each supported sequence, and its
/// `efg` map is empty (the greedy sampler has no such notion).
pub fn enumerate_gcd(
    model: &dyn TokenModel,
    g: &Grammar,
    len_bound: usize,
    tail_tol: f64,
) -> Result<ExactDistribution, ExactError> {
    struct GcdWalk<'a> {
        model: &'a dyn TokenModel,
        len_bound: usize,
        eos: usize,
        support: BTreeMap<Vec<usize>, f64>,
        joint: BTreeMap<Vec<usize>, f64>,
        texts: BTreeMap<Vec<usize>, String>,
        tail: f64,
    }
    impl GcdWalk<'_> {
        fn walk(
            &mut self,
            prefix: &mut Vec<usize>,
            state: &RecognizerState,
            g: &Grammar,
            q_mass: f64,
            p_mass: f64,
        ) -> Result<(), ExactError> {
            let dist = self.model.next_distribution(prefix)?;
            let vocab = self.model.vocabulary();
            // Masked weights and their states.
            let mut weights = vec![0.0; dist.len()];
            let mut states: Vec<Option<RecognizerState>> = vec![None; dist.len()];
            let mut z = 0.0;
            for t in 0..dist.len() {
                let p = dist.prob(t);
                if p == 0.0 {
                    continue;
                }
                if t == self.eos {
                    if state.is_complete() {
                        weights[t] = p;
                        z += p;
                    }
                } else {
                    let adv = state
                        .admissible(g, vocab.token(t))
                        .expect("vocabulary tokens are nonempty");
                    if !adv.is_dead() {
                        weights[t] = p;
                        states[t] = Some(adv);
                        z += p;
                    }
                }
            }
            if z == 0.0 {
                // No admissible token carries model mass: the masked sampler
                // would fail here; its mass is lost. Surface it as tail.
                self.tail += q_mass;
                return Ok(());
            }
            for t in 0..dist.len() {
                if weights[t] == 0.0 {
                    continue;
                }
                let q = q_mass * weights[t] / z;
                let p = p_mass * dist.prob(t);
                if t == self.eos {
                    let mut sent = prefix.clone();
                    sent.push(t);
                    self.texts.insert(sent.clone(), vocab.render(&sent));
                    self.joint.insert(sent.clone(), p);
                    self.support.insert(sent, q);
                } else if prefix.len() + 2 > self.len_bound {
                    self.tail += q;
                } else {
                    prefix.push(t);
                    let st = states[t].take().unwrap();
                    self.walk(prefix, &st, g, q, p)?;
                    prefix.pop();
                }
            }
            Ok(())
        }
    }

    let init = g.init_state();
    let mut walk = GcdWalk {
        model,
        len_bound,
        eos: model.vocabulary().eos(),
        support: BTreeMap::new(),
        joint: BTreeMap::new(),
        texts: BTreeMap::new(),
        tail: 0.0,
    };
    if !init.is_dead() {
        let mut prefix = Vec::new();
        walk.walk(&mut prefix, &init, g, 1.0, 1.0)?;
    }
    if walk.tail > tail_tol {
        return Err(ExactError::TailMassTooLarge {
            residual: walk.tail,
            tolerance: tail_tol,
        });
    }
    if walk.support.is_empty() {
        return Err(ExactError::EmptySupport);
    }
    Ok(ExactDistribution {
        vocab_fingerprint: model.vocabulary().fingerprint(),
        normalizer: 1.0,
        support: walk.support,
        joint: walk.joint,
        efg: BTreeMap::new(),
        texts: walk.texts,
        dead_mass: 0.0,
        tail_mass: walk.tail,
    })
}

/// KL(a || b) = sum over a's support of a * ln(a/b). Keys with zero mass in
/// `a` are ignored; a key with positive mass in `a` but absent or zero in
/// `b` is a support violation.
pub fn exact_kl(
    a: &BTreeMap<Vec<usize>, f64>,
    b: &BTreeMap<Vec<usize>, f64>,
    vocab: &Vocabulary,
) -> Result<f64, ExactError> {
    let mut total = 0.0;
    for (k, &pa) in a {
        if pa == 0.0 {
            continue;
        }
        match b.get(k) {
            Some(&pb) if pb > 0.0 => total += pa * (pa / pb).ln(),
            _ => {
                return Err(ExactError::SupportViolation {
                    text: vocab.render(k),
                    mass: pa,
                });
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{NGramModel, TableModel};
    use std::path::PathBuf;

    fn fixture(name: &str) -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures")
            .join(name)
    }

    fn binary_grammar() -> Grammar {
        Grammar::parse_bnf(&std::fs::read_to_string(fixture("binary.bnf")).unwrap()).unwrap()
    }

    fn binary_model() -> TableModel {
        TableModel::load(fixture("binary_table.json")).unwrap()
    }

    fn all_strings() -> Grammar {
        Grammar::parse_bnf("S ::= \"\" | \"0\" S | \"1\" S").unwrap()
    }

    #[test]
    fn sentence_enumeration_binary_grammar() {
        let sentences = enumerate_sentences(&binary_grammar(), 8);
        assert_eq!(sentences.len(), 17);
        assert!(sentences.contains("00000"));
        assert!(sentences.contains("10101"));
        assert!(sentences.contains("11111"));
        assert!(!sentences.contains("01111"));
        assert!(sentences.iter().all(|s| s.len() == 5));
    }

    #[test]
    fn sentence_enumeration_handles_recursion() {
        let g = Grammar::parse_bnf("S ::= S \"a\" | \"a\"").unwrap();
        let sentences = enumerate_sentences(&g, 4);
        assert_eq!(
            sentences.into_iter().collect::<Vec<_>>(),
            vec!["a", "aa", "aaa", "aaaa"]
        );
        let empty = Grammar::parse_bnf("S ::= S").unwrap();
        assert!(enumerate_sentences(&empty, 4).is_empty());
    }

    /// Hand-derived normalizer for the binary fixture, via a different
    /// arithmetic route than the enumerator's tree walk.
    fn binary_c_by_hand() -> f64 {
        let zero_path = 0.45 * 0.003f64.powi(4);
        let mut one_part = 0.0;
        for bits in 0..8u32 {
            let mut mid = 1.0;
            let mut zeros = 0;
            for k in 0..3 {
                if bits >> k & 1 == 1 {
                    mid *= 0.95;
                } else {
                    mid *= 0.05;
                    zeros += 1;
                }
            }
            one_part += mid * 0.002 * 0.04f64.powi(zeros);
        }
        zero_path + 0.55 * one_part
    }

    #[test]
    fn enumerate_q_on_binary_fixture() {
        let g = binary_grammar();
        let m = binary_model();
        let q = enumerate_q(&m, &g, 8, DEFAULT_TAIL_TOLERANCE).unwrap();
        assert_eq!(q.q_map().len(), 17);
        let c = binary_c_by_hand();
        assert!((q.normalizer() - c).abs() / c < 1e-12);
        let total: f64 = q.q_map().values().sum();
        assert!((total - 1.0).abs() < 1e-9);
        // The all-zeros sentence has negligible conditioned mass.
        let zero_key = vec![0, 0, 0, 0, 0, 2];
        assert!(q.q(&zero_key).unwrap() < 1e-4);
        assert_eq!(q.tail_mass(), 0.0);
        // C complements dead + tail mass.
        assert!((q.normalizer() + q.dead_mass() + q.tail_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn efg_values_on_binary_fixture() {
        let q = enumerate_q(
            &binary_model(),
            &binary_grammar(),
            8,
            DEFAULT_TAIL_TOLERANCE,
        )
        .unwrap();
        // At "0000" the only grammatical continuation is "0" then EOS.
        assert!((q.efg(&[0, 0, 0, 0]).unwrap() - 0.003).abs() < 1e-15);
        // At the root the EFG is the normalizer itself.
        assert!((q.efg(&[]).unwrap() - q.normalizer()).abs() < 1e-15);
        // Dead prefixes have zero expected future.
        assert_eq!(q.efg(&[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn efg_satisfies_the_one_step_recursion() {
        let g = binary_grammar();
        let m = binary_model();
        let q = enumerate_q(&m, &g, 8, DEFAULT_TAIL_TOLERANCE).unwrap();
        let eos = m.vocabulary().eos();
        for (prefix, &c) in q.efg_map() {
            if prefix.last() == Some(&eos) {
                continue;
            }
            let dist = m.next_distribution(prefix).unwrap();
            let mut rhs = 0.0;
            for t in 0..dist.len() {
                let p = dist.prob(t);
                if p == 0.0 {
                    continue;
                }
                let mut child = prefix.clone();
                child.push(t);
                // Children beyond the enumerated tree have zero mass.
                rhs += p * q.efg(&child).unwrap_or(0.0);
            }
            assert!(
                (c - rhs).abs() < 1e-9,
                "recursion violated at {prefix:?}: {c} vs {rhs}"
            );
        }
    }

    #[test]
    fn all_strings_grammar_gives_q_equal_p() {
        let g = all_strings();
        let m = binary_model();
        let q = enumerate_q(&m, &g, 8, DEFAULT_TAIL_TOLERANCE).unwrap();
        assert!((q.normalizer() - 1.0).abs() < 1e-12);
        for (k, &qv) in q.q_map() {
            let pv = q.p_map()[k];
            assert!((qv - pv).abs() < 1e-12);
        }
    }

    #[test]
    fn gcd_law_on_binary_fixture() {
        let g = binary_grammar();
        let m = binary_model();
        let gcd = enumerate_gcd(&m, &g, 8, DEFAULT_TAIL_TOLERANCE).unwrap();
        assert_eq!(gcd.q_map().len(), 17);
        let total: f64 = gcd.q_map().values().sum();
        assert!((total - 1.0).abs() < 1e-9);
        // After "0" every step is forced, so the whole subtree's share is
        // exactly the root masked renormalization of P("0").
        let zero_key = vec![0, 0, 0, 0, 0, 2];
        assert!((gcd.q(&zero_key).unwrap() - 0.45).abs() < 1e-12);
    }

    #[test]
    fn gcd_law_degenerate_cases() {
        let single = Grammar::parse_bnf("S ::= \"0101\"").unwrap();
        let m = binary_model();
        let gcd = enumerate_gcd(&m, &single, 8, DEFAULT_TAIL_TOLERANCE).unwrap();
        assert_eq!(gcd.q_map().len(), 1);
        let (key, &mass) = gcd.q_map().iter().next().unwrap();
        assert_eq!(key, &vec![0, 1, 0, 1, 2]);
        assert!((mass - 1.0).abs() < 1e-12);

        // Unconstrained: the GCD law is the model itself.
        let free = enumerate_gcd(&m, &all_strings(), 8, DEFAULT_TAIL_TOLERANCE).unwrap();
        for (k, &qv) in free.q_map() {
            let pv = free.p_map()[k];
            assert!((qv - pv).abs() < 1e-12, "mismatch at {k:?}");
        }
    }

    #[test]
    fn kl_identity_links_p_and_q() {
        let g = binary_grammar();
        let m = binary_model();
        let q = enumerate_q(&m, &g, 8, DEFAULT_TAIL_TOLERANCE).unwrap();
        let gcd = enumerate_gcd(&m, &g, 8, DEFAULT_TAIL_TOLERANCE).unwrap();
        let vocab = m.vocabulary();
        // KL(D||P) - KL(D||Q) + ln C = 0 for D in {Q_gcd, Q}.
        for d in [&gcd, &q] {
            let kl_p = exact_kl(d.q_map(), q.p_map(), vocab).unwrap();
            let kl_q = exact_kl(d.q_map(), q.q_map(), vocab).unwrap();
            let residual = kl_p - kl_q + q.normalizer().ln();
            assert!(residual.abs() < 1e-9, "identity residual {residual}");
        }
    }

    #[test]
    fn kl_basics() {
        let g = binary_grammar();
        let m = binary_model();
        let q = enumerate_q(&m, &g, 8, DEFAULT_TAIL_TOLERANCE).unwrap();
        assert_eq!(exact_kl(q.q_map(), q.q_map(), m.vocabulary()).unwrap(), 0.0);

        let mut a = BTreeMap::new();
        a.insert(vec![0, 2], 1.0);
        let mut b = BTreeMap::new();
        b.insert(vec![1, 2], 1.0);
        assert!(matches!(
            exact_kl(&a, &b, m.vocabulary()),
            Err(ExactError::SupportViolation { .. })
        ));
    }

    #[test]
    fn ngram_tail_mass_is_rejected() {
        // Strictly positive continuation mass never decays below tolerance.
        let m = NGramModel::load(fixture("binary_corpus.json"), 2, 1.0).unwrap();
        match enumerate_q(&m, &binary_grammar(), 8, DEFAULT_TAIL_TOLERANCE) {
            Err(ExactError::TailMassTooLarge { residual, .. }) => assert!(residual > 1e-12),
            other => panic!("expected tail-mass rejection, got {other:?}"),
        }
    }

    #[test]
    fn empty_support_is_an_error() {
        // All model mass stops immediately; the grammar needs length 5.
        let vocab =
            crate::lm::Vocabulary::new(vec!["0".into(), "1".into(), "<eos>".into()], 2).unwrap();
        let m = TableModel::new(vocab, vec![0.0, 0.0, 1.0], vec![]).unwrap();
        assert!(matches!(
            enumerate_q(&m, &binary_grammar(), 8, DEFAULT_TAIL_TOLERANCE),
            Err(ExactError::EmptySupport)
        ));
    }

    #[test]
    fn json_dump_has_the_contract_fields() {
        let g = binary_grammar();
        let m = binary_model();
        let q = enumerate_q(&m, &g, 8, DEFAULT_TAIL_TOLERANCE).unwrap();
        let dump = q.to_json(m.vocabulary()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&dump).unwrap();
        assert!(v["C"].is_f64());
        assert_eq!(v["support"].as_object().unwrap().len(), 17);
        assert!(v["support"]["00000"].is_f64());
        assert!(v["efg"][""].is_f64());
        assert_eq!(
            v["vocab_fingerprint"].as_str().unwrap(),
            m.vocabulary().fingerprint()
        );
    }
}
