//! Text embedders. Every embedder returns L2-normalized vectors of a fixed
//! dimension.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::http::post_json;
use super::GatewayError;
use crate::text::analyze;

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn spec(&self) -> EmbedderSpec;

    /// Embeds each text. Fails with `EmptyText` if any text is blank.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError>;

    fn embed_one(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        Ok(self.embed(&[text.to_owned()])?.remove(0))
    }
}

/// Serializable description of an embedder, stored in the index manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    Hash { dim: usize, seed: u64 },
    Http {
        endpoint: String,
        model: String,
        dim: usize,
        #[serde(default)]
        auth_env: Option<String>,
    },
}

impl EmbedderSpec {
    pub fn dim(&self) -> usize {
        match self {
            EmbedderSpec::Hash { dim, .. } | EmbedderSpec::Http { dim, .. } => *dim,
        }
    }

    pub fn build(&self) -> Arc<dyn Embedder> {
        match self {
            EmbedderSpec::Hash { dim, seed } => Arc::new(HashEmbedder::new(*dim, *seed)),
            EmbedderSpec::Http { endpoint, model, dim, auth_env } => {
                Arc::new(HttpEmbedder::new(endpoint, model, *dim, auth_env.clone()))
            }
        }
    }
}

fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
}

const TOKEN_CACHE_CAP: usize = 65_536;

/// Offline embedder: each analyzed token maps to a pseudo-random Gaussian
/// vector seeded from `sha256(seed || token)`; a text is the normalized sum
/// of its token vectors. Texts sharing words land close together.
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
    cache: Mutex<HashMap<String, Arc<[f32]>>>,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashEmbedder { dim, seed, cache: Mutex::new(HashMap::new()) }
    }

    fn token_vector(&self, token: &str) -> Arc<[f32]> {
        if let Some(v) = self.cache.lock().get(token) {
            return v.clone();
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
        let v: Arc<[f32]> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut cache = self.cache.lock();
        if cache.len() < TOKEN_CACHE_CAP {
            cache.insert(token.to_owned(), v.clone());
        }
        v
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn spec(&self) -> EmbedderSpec {
        EmbedderSpec::Hash { dim: self.dim, seed: self.seed }
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        texts
            .iter()
            .map(|text| {
                if text.trim().is_empty() {
                    return Err(GatewayError::EmptyText);
                }
                let mut acc = vec![0f32; self.dim];
                for token in analyze(text) {
                    for (a, t) in acc.iter_mut().zip(self.token_vector(&token).iter()) {
                        *a += t;
                    }
                }
                normalize(&mut acc);
                Ok(acc)
            })
            .collect()
    }
}

/// OpenAI-compatible `/embeddings` client. The first reply fixes the
/// dimension; later replies of another size fail with `DimDrift`.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    auth_env: Option<String>,
    dim: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(endpoint: &str, model: &str, dim: usize, auth_env: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        HttpEmbedder { endpoint: endpoint.to_owned(), model: model.to_owned(), auth_env, dim, agent }
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn spec(&self) -> EmbedderSpec {
        EmbedderSpec::Http {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            dim: self.dim,
            auth_env: self.auth_env.clone(),
        }
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(GatewayError::EmptyText);
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let token = self.auth_env.as_deref().and_then(|v| std::env::var(v).ok());
        let body = json!({"model": self.model, "input": texts});
        let reply = post_json(&self.agent, &self.endpoint, token.as_deref(), &body).map_err(|e| match e {
            super::TransportError::Timeout => GatewayError::Timeout,
            other => GatewayError::MalformedBackendReply(other.to_string()),
        })?;
        let data = reply["data"]
            .as_array()
            .ok_or_else(|| GatewayError::MalformedBackendReply("missing data array".into()))?;
        if data.len() != texts.len() {
            return Err(GatewayError::MalformedBackendReply(format!(
                "{} embeddings for {} inputs",
                data.len(),
                texts.len()
            )));
        }
        data.iter()
            .map(|item| {
                let mut v: Vec<f32> = item["embedding"]
                    .as_array()
                    .ok_or_else(|| GatewayError::MalformedBackendReply("missing embedding".into()))?
                    .iter()
                    .map(|x| x.as_f64().unwrap_or(0.0) as f32)
                    .collect();
                if v.len() != self.dim {
                    return Err(GatewayError::DimDrift { expected: self.dim, got: v.len() });
                }
                normalize(&mut v);
                Ok(v)
            })
            .collect()
    }
}
