//! Explicit prefix-keyed table model.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{check_prefix, Distribution, ModelError, TokenModel, Vocabulary};

/// A finite map from token-index prefixes to next-token distributions, with
/// a default vector for unkeyed prefixes.
#[derive(Debug, Clone)]
pub struct TableModel {
    vocab: Vocabulary,
    default: Distribution,
    nodes: HashMap<Vec<usize>, Distribution>,
}

#[derive(Deserialize)]
struct TableFile {
    vocab: Vec<String>,
    eos: usize,
    default: Vec<f64>,
    nodes: HashMap<String, Vec<f64>>,
}

impl TableModel {
    pub fn new(
        vocab: Vocabulary,
        default: Vec<f64>,
        nodes: Vec<(Vec<usize>, Vec<f64>)>,
    ) -> Result<TableModel, ModelError> {
        let n = vocab.len();
        let default = check_len(default, n).and_then(Distribution::from_probs)?;
        let mut map = HashMap::with_capacity(nodes.len());
        for (key, probs) in nodes {
            check_prefix(&vocab, &key)?;
            let dist = check_len(probs, n).and_then(Distribution::from_probs)?;
            map.insert(key, dist);
        }
        Ok(TableModel {
            vocab,
            default,
            nodes: map,
        })
    }

    /// Load from the JSON table format:
    /// `{"vocab": [...], "eos": n, "default": [...], "nodes": {"0 1": [...]}}`
    /// where node keys are space-joined token indices (`""` is the root).
    pub fn load(path: impl AsRef<Path>) -> Result<TableModel, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<TableModel, ModelError> {
        let file: TableFile =
            serde_json::from_str(text).map_err(|e| ModelError::Malformed(e.to_string()))?;
        let vocab = Vocabulary::new(file.vocab, file.eos)?;
        let mut nodes = Vec::with_capacity(file.nodes.len());
        for (key, probs) in file.nodes {
            let prefix = parse_key(&key)?;
            nodes.push((prefix, probs));
        }
        TableModel::new(vocab, file.default, nodes)
    }
}

fn parse_key(key: &str) -> Result<Vec<usize>, ModelError> {
    if key.is_empty() {
        return Ok(Vec::new());
    }
    key.split(' ')
        .map(|part| {
            part.parse::<usize>()
                .map_err(|_| ModelError::Malformed(format!("bad node key {key:?}")))
        })
        .collect()
}

fn check_len(v: Vec<f64>, expected: usize) -> Result<Vec<f64>, ModelError> {
    if v.len() != expected {
        return Err(ModelError::LengthMismatch {
            expected,
            got: v.len(),
        });
    }
    Ok(v)
}

impl TokenModel for TableModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, prefix: &[usize]) -> Result<Distribution, ModelError> {
        check_prefix(&self.vocab, prefix)?;
        Ok(self.nodes.get(prefix).unwrap_or(&self.default).clone())
    }
}
