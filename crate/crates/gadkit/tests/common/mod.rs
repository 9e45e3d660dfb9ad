//! Shared fixtures and helpers for the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use gadkit::exact::{enumerate_q, ExactDistribution, DEFAULT_TAIL_TOLERANCE};
use gadkit::lm::TableModel;
use gadkit::trie::SamplerTrie;
use gadkit::Grammar;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn load_grammar(name: &str) -> Grammar {
    Grammar::parse_bnf(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

pub fn binary_grammar() -> Grammar {
    load_grammar("binary.bnf")
}

pub fn binary_model() -> TableModel {
    TableModel::load(fixture("binary_table.json")).unwrap()
}

pub fn binary_oracle(model: &TableModel, g: &Grammar) -> ExactDistribution {
    enumerate_q(model, g, 8, DEFAULT_TAIL_TOLERANCE).unwrap()
}

/// Every stored edge value in the trie: `(prefix·t, ctilde, masked)`.
pub fn edge_values(trie: &SamplerTrie) -> Vec<(Vec<usize>, f64, bool)> {
    let mut out = Vec::new();
    trie.walk(|path, node| {
        if !node.is_expanded() {
            return;
        }
        for t in 0..node.mask().len() {
            let mut edge = path.to_vec();
            edge.push(t);
            out.push((edge, node.log_ctilde()[t].exp(), !node.mask()[t]));
        }
    });
    out
}

/// Largest signed gap ctilde - c_exact over stored edges (masked edges have
/// c_exact = 0 by definition).
pub fn max_gap(trie: &SamplerTrie, oracle: &ExactDistribution) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (edge, ctilde, masked) in edge_values(trie) {
        let exact = if masked {
            0.0
        } else {
            oracle.efg(&edge).unwrap_or(0.0)
        };
        let gap = ctilde - exact;
        if gap > max {
            max = gap;
        }
    }
    max
}

/// Smallest signed gap (for the upper-bound property: must stay >= -1e-12).
pub fn min_gap(trie: &SamplerTrie, oracle: &ExactDistribution) -> f64 {
    let mut min = f64::INFINITY;
    for (edge, ctilde, masked) in edge_values(trie) {
        let exact = if masked {
            0.0
        } else {
            oracle.efg(&edge).unwrap_or(0.0)
        };
        let gap = ctilde - exact;
        if gap < min {
            min = gap;
        }
    }
    min
}

/// Empirical total variation between two sentence histograms.
pub fn histogram_tv(a: &[Vec<usize>], b: &[Vec<usize>]) -> f64 {
    let mut keys: BTreeMap<&[usize], (f64, f64)> = BTreeMap::new();
    for k in a {
        keys.entry(k.as_slice()).or_default().0 += 1.0 / a.len() as f64;
    }
    for k in b {
        keys.entry(k.as_slice()).or_default().1 += 1.0 / b.len() as f64;
    }
    keys.values().map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
}
