//! HTTP adapter for a remote next-token logit service.
//!
//! Protocol: `GET {base}/v1/vocab` returns `{"tokens": [...], "eos": n}`;
//! `POST {base}/v1/next_logprobs` with `{"tokens": [...]}` returns
//! `{"logprobs": [...; |V|]}`. Received log probabilities are exponentiated
//! and renormalized. Requests are serialized behind a mutex; the service is
//! not assumed reentrant, nor stationary across calls.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_prefix, Distribution, ModelError, TokenModel, Vocabulary};

#[derive(Debug)]
pub struct RemoteModel {
    agent: ureq::Agent,
    base: String,
    vocab: Vocabulary,
    retries: u32,
    lock: Mutex<()>,
}

#[derive(Deserialize)]
struct VocabResponse {
    tokens: Vec<String>,
    eos: usize,
}

#[derive(Serialize)]
struct LogprobsRequest<'a> {
    tokens: &'a [usize],
}

#[derive(Deserialize)]
struct LogprobsResponse {
    logprobs: Vec<f64>,
}

impl RemoteModel {
    /// Connect and fetch the vocabulary. `retries` is the number of extra
    /// attempts after a failed request (0 = single shot).
    pub fn connect(url: &str, timeout: Duration, retries: u32) -> Result<RemoteModel, ModelError> {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build();
        let agent = ureq::Agent::new_with_config(config);
        let base = url.trim_end_matches('/').to_string();
        let vocab_url = format!("{base}/v1/vocab");
        let body = with_retries(retries, || {
            let mut resp = agent.get(&vocab_url).call().map_err(|e| e.to_string())?;
            resp.body_mut().read_to_string().map_err(|e| e.to_string())
        })?;
        let parsed: VocabResponse =
            serde_json::from_str(&body).map_err(|e| ModelError::Malformed(e.to_string()))?;
        let vocab = Vocabulary::new(parsed.tokens, parsed.eos)?;
        Ok(RemoteModel {
            agent,
            base,
            vocab,
            retries,
            lock: Mutex::new(()),
        })
    }
}

fn with_retries<T>(
    retries: u32,
    mut f: impl FnMut() -> Result<T, String>,
) -> Result<T, ModelError> {
    let attempts = retries + 1;
    let mut last = String::new();
    for _ in 0..attempts {
        match f() {
            Ok(v) => return Ok(v),
            Err(e) => last = e,
        }
    }
    Err(ModelError::Transport { attempts, last })
}

impl TokenModel for RemoteModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, prefix: &[usize]) -> Result<Distribution, ModelError> {
        check_prefix(&self.vocab, prefix)?;
        let _serialize = self.lock.lock().unwrap();
        let url = format!("{}/v1/next_logprobs", self.base);
        let payload = serde_json::to_string(&LogprobsRequest { tokens: prefix })
            .expect("request serialization cannot fail");
        let body = with_retries(self.retries, || {
            let mut resp = self
                .agent
                .post(&url)
                .header("content-type", "application/json")
                .send(payload.as_str())
                .map_err(|e| e.to_string())?;
            resp.body_mut().read_to_string().map_err(|e| e.to_string())
        })?;
        let parsed: LogprobsResponse =
            serde_json::from_str(&body).map_err(|e| ModelError::Malformed(e.to_string()))?;
        if parsed.logprobs.len() != self.vocab.len() {
            return Err(ModelError::LengthMismatch {
                expected: self.vocab.len(),
                got: parsed.logprobs.len(),
            });
        }
        Distribution::from_log_probs(parsed.logprobs)
    }
}
