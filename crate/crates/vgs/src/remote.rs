//! HTTP client for a remote distribution server.
//!
//! Wire protocol (UTF-8 JSON):
//!
//! ```text
//! POST {endpoint}/v1/distribution
//!   {"image_b64": <base64 PNG>, "query": str, "prefix": [int], "top_k": int}
//! 200
//!   {"vocab_size": int, "eos_id": int, "entries": [[int, float], ...]}
//! ```
//!
//! Entries must be at most `top_k` long, sorted by descending probability,
//! with distinct in-range ids and total mass at most one. Transport failures
//! and timeouts are retried once; HTTP errors and schema violations are not.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use vgs_core::model::{BackendError, BackendErrorKind, Capability};
use vgs_core::prob::SUM_TOLERANCE;
use vgs_core::{
    Image, ModelError, ModelProvider, Prefix, ProviderDist, Query, SparseDist, TokenId, Vocab,
};

use crate::image_io::encode_png;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_TOP_K: usize = 50;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub timeout: Duration,
    pub top_k: usize,
    pub max_in_flight: usize,
    /// Extra attempts after a transport failure or timeout.
    pub retries: u32,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        RemoteOptions {
            timeout: DEFAULT_TIMEOUT,
            top_k: DEFAULT_TOP_K,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            retries: 1,
        }
    }
}

#[derive(Debug, Serialize)]
struct DistributionRequest<'a> {
    image_b64: String,
    query: &'a str,
    prefix: Vec<u32>,
    top_k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DistributionResponse {
    pub vocab_size: usize,
    pub eos_id: u32,
    pub entries: Vec<(u32, f64)>,
}

/// A validated server reply.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteReply {
    pub vocab_size: usize,
    pub eos: TokenId,
    pub dist: SparseDist,
}

fn backend(kind: BackendErrorKind, message: impl Into<String>, attempts: u32) -> BackendError {
    BackendError {
        kind,
        message: message.into(),
        attempts,
        retryable: matches!(
            kind,
            BackendErrorKind::Timeout | BackendErrorKind::Transport
        ),
    }
}

fn schema(message: impl Into<String>, attempts: u32) -> BackendError {
    backend(BackendErrorKind::Schema, message, attempts)
}

impl DistributionResponse {
    pub fn validate(self, top_k: usize, attempts: u32) -> Result<RemoteReply, BackendError> {
        if self.vocab_size == 0 {
            return Err(schema("vocab_size must be positive", attempts));
        }
        if self.eos_id as usize >= self.vocab_size {
            return Err(schema("eos_id out of range", attempts));
        }
        if self.entries.len() > top_k {
            return Err(schema(
                format!("{} entries exceed top_k = {top_k}", self.entries.len()),
                attempts,
            ));
        }
        if let Some(&(id, _)) = self
            .entries
            .iter()
            .find(|e| e.0 as usize >= self.vocab_size)
        {
            return Err(schema(format!("token id {id} out of range"), attempts));
        }
        if self.entries.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err(schema(
                "entries are not sorted by descending probability",
                attempts,
            ));
        }
        let sum: f64 = self.entries.iter().map(|e| e.1).sum();
        if sum > 1.0 + SUM_TOLERANCE {
            return Err(schema(format!("probabilities sum to {sum} > 1"), attempts));
        }
        let dist = SparseDist::new(self.entries.iter().map(|&(i, p)| (TokenId(i), p)).collect())
            .map_err(|e| schema(e.to_string(), attempts))?;
        Ok(RemoteReply {
            vocab_size: self.vocab_size,
            eos: TokenId(self.eos_id),
            dist,
        })
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteClient {
    url: String,
    agent: ureq::Agent,
    opts: RemoteOptions,
    gate: Gate,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient")
            .field("url", &self.url)
            .field("opts", &self.opts)
            .finish()
    }
}

impl RemoteClient {
    pub fn new(endpoint: &str, opts: RemoteOptions) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(opts.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteClient {
            url: format!("{}/v1/distribution", endpoint.trim_end_matches('/')),
            agent,
            gate: Gate::new(opts.max_in_flight),
            opts,
        }
    }

    pub fn options(&self) -> &RemoteOptions {
        &self.opts
    }

    pub fn fetch(
        &self,
        image: &Image,
        query: &Query,
        prefix: &Prefix,
    ) -> Result<RemoteReply, ModelError> {
        let png = encode_png(image).map_err(|e| ModelError::InvalidInput(e.to_string()))?;
        let body = DistributionRequest {
            image_b64: base64::engine::general_purpose::STANDARD.encode(png),
            query: query.as_str(),
            prefix: prefix.tokens().iter().map(|t| t.0).collect(),
            top_k: self.opts.top_k,
        };
        let _permit = self.gate.acquire();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body, attempts) {
                Err(e) if e.retryable && attempts <= self.opts.retries => {
                    log::warn!("remote attempt {attempts} failed ({e}), retrying");
                }
                other => return other.map_err(ModelError::Backend),
            }
        }
    }

    fn attempt(
        &self,
        body: &DistributionRequest<'_>,
        attempts: u32,
    ) -> Result<RemoteReply, BackendError> {
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(t) => backend(BackendErrorKind::Timeout, t.to_string(), attempts),
            ureq::Error::StatusCode(s) => {
                backend(BackendErrorKind::Status(s), format!("HTTP {s}"), attempts)
            }
            ureq::Error::Json(e) => schema(e.to_string(), attempts),
            ureq::Error::BadUri(u) => BackendError {
                retryable: false,
                ..backend(
                    BackendErrorKind::Transport,
                    format!("bad uri {u}"),
                    attempts,
                )
            },
            other => backend(BackendErrorKind::Transport, other.to_string(), attempts),
        };
        let resp = self
            .agent
            .post(&self.url)
            .send_json(body)
            .map_err(map_err)?;
        let status = resp.status().as_u16();
        if status >= 400 {
            return Err(backend(
                BackendErrorKind::Status(status),
                format!("HTTP {status}"),
                attempts,
            ));
        }
        let text = resp.into_body().read_to_string().map_err(map_err)?;
        let parsed: DistributionResponse =
            serde_json::from_str(&text).map_err(|e| schema(e.to_string(), attempts))?;
        parsed.validate(self.opts.top_k, attempts)
    }
}

/// One-shot request returning the top-k distribution.
pub fn remote_distribution(
    endpoint: &str,
    image: &Image,
    query: &Query,
    prefix: &Prefix,
    top_k: usize,
) -> Result<SparseDist, ModelError> {
    let client = RemoteClient::new(
        endpoint,
        RemoteOptions {
            top_k,
            ..RemoteOptions::default()
        },
    );
    Ok(client.fetch(image, query, prefix)?.dist)
}

/// [`ModelProvider`] backed by a [`RemoteClient`].
#[derive(Debug)]
pub struct RemoteProvider {
    client: RemoteClient,
    vocab: Vocab,
}

impl RemoteProvider {
    pub fn new(client: RemoteClient, vocab: Vocab) -> Self {
        RemoteProvider { client, vocab }
    }

    /// Learns the vocabulary size and end-of-sequence id from one request.
    /// Token strings are rendered as `<id>`.
    pub fn discover(
        client: RemoteClient,
        image: &Image,
        query: &Query,
    ) -> Result<Self, ModelError> {
        let reply = client.fetch(image, query, &Prefix::default())?;
        let vocab = Vocab::opaque(reply.vocab_size, reply.eos)?;
        Ok(RemoteProvider { client, vocab })
    }
}

impl ModelProvider for RemoteProvider {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn capability(&self) -> Capability {
        Capability::SparseTopK
    }

    fn distribution(
        &self,
        image: &Image,
        query: &Query,
        prefix: &Prefix,
    ) -> Result<ProviderDist, ModelError> {
        let reply = self.client.fetch(image, query, prefix)?;
        if reply.vocab_size != self.vocab.len() || reply.eos != self.vocab.eos() {
            return Err(schema(
                format!(
                    "server vocabulary ({}, eos {}) differs from client ({}, eos {})",
                    reply.vocab_size,
                    reply.eos,
                    self.vocab.len(),
                    self.vocab.eos()
                ),
                1,
            )
            .into());
        }
        Ok(ProviderDist::Sparse(reply.dist))
    }
}
