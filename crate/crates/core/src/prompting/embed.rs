use std::cmp::Ordering;
use std::fmt;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::EmbedError;

/// `(station, anchor date)`; renders as `station|YYYY-MM-DD`. Ordering is the
/// lexicographic order of the rendered string.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EmbeddingKey {
    pub station_id: String,
    pub date: NaiveDate,
}

impl EmbeddingKey {
    pub fn new(station_id: &str, date: NaiveDate) -> Self {
        EmbeddingKey {
            station_id: station_id.to_string(),
            date,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (station, date) = s.rsplit_once('|')?;
        Some(EmbeddingKey {
            station_id: station.to_string(),
            date: date.parse().ok()?,
        })
    }
}

impl fmt::Display for EmbeddingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.station_id, self.date.format("%Y-%m-%d"))
    }
}

impl Ord for EmbeddingKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.to_string().cmp(&other.to_string())
    }
}

impl PartialOrd for EmbeddingKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextEmbedding {
    pub key: EmbeddingKey,
    pub vector: Vec<f32>,
    pub provider_tag: String,
}

pub trait EmbeddingProvider: Send + Sync {
    fn tag(&self) -> &str;

    fn dim(&self) -> usize;

    /// One vector per prompt, in input order.
    fn embed_batch(&self, items: &[(EmbeddingKey, String)]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// Embeds `items`, checking width and finiteness against `expected_dim`.
pub fn embed_all(
    provider: &dyn EmbeddingProvider,
    items: &[(EmbeddingKey, String)],
    expected_dim: usize,
) -> Result<Vec<ContextEmbedding>, EmbedError> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let vectors = provider.embed_batch(items)?;
    if vectors.len() != items.len() {
        return Err(EmbedError::CountMismatch {
            expected: items.len(),
            got: vectors.len(),
        });
    }
    items
        .iter()
        .zip(vectors)
        .map(|((key, _), vector)| {
            if vector.len() != expected_dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: expected_dim,
                    got: vector.len(),
                });
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::NonFinite(key.to_string()));
            }
            Ok(ContextEmbedding {
                key: key.clone(),
                vector,
                provider_tag: provider.tag().to_string(),
            })
        })
        .collect()
}

pub fn embed(
    provider: &dyn EmbeddingProvider,
    key: &EmbeddingKey,
    prompt: &str,
    expected_dim: usize,
) -> Result<ContextEmbedding, EmbedError> {
    let mut out = embed_all(provider, &[(key.clone(), prompt.to_string())], expected_dim)?;
    Ok(out.remove(0))
}

/// Deterministic offline embedder: character 3-grams hashed into signed
/// buckets, then L2-normalized.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    dim: usize,
    seed: u64,
}

impl StubEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding width must be positive");
        StubEmbedder { dim, seed }
    }

    fn hash(&self, gram: &[char]) -> u64 {
        // FNV-1a over the seed and the gram's UTF-8 bytes, then a splitmix64 finish.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for b in self.seed.to_le_bytes() {
            feed(b);
        }
        let mut buf = [0u8; 4];
        for c in gram {
            for &b in c.encode_utf8(&mut buf).as_bytes() {
                feed(b);
            }
        }
        let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn embed_text(&self, text: &str) -> Vec<f32> {
        let chars: Vec<char> = text.chars().collect();
        let mut acc = vec![0.0f64; self.dim];
        let mut add = |gram: &[char]| {
            let h = self.hash(gram);
            let bucket = (h % self.dim as u64) as usize;
            acc[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        };
        if chars.len() < 3 {
            add(&chars);
        } else {
            for gram in chars.windows(3) {
                add(gram);
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter().map(|v| (v / norm) as f32).collect()
        } else {
            // Every gram cancelled out; fall back to a fixed unit vector.
            let mut v = vec![0.0f32; self.dim];
            v[0] = 1.0;
            v
        }
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn tag(&self) -> &str {
        "stub"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, items: &[(EmbeddingKey, String)]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(items.iter().map(|(_, p)| self.embed_text(p)).collect())
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    input: Vec<&'a str>,
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
    #[serde(default)]
    index: Option<usize>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

/// JSON-over-HTTP embeddings client (`{"input": [...], "model": ...}` in,
/// `{"data": [{"embedding": [...]}, ...]}` out).
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    pub api_key: Option<String>,
    pub batch_size: usize,
    pub max_inflight: usize,
    pub retries: u32,
    pub timeout: Duration,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str, model: &str, dim: usize, api_key: Option<String>) -> Self {
        RemoteEmbedder {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            dim,
            api_key,
            batch_size: 32,
            max_inflight: 4,
            retries: 3,
            timeout: Duration::from_secs(60),
            client: reqwest::blocking::Client::new(),
        }
    }

    /// Reads the credential from the environment variable `var`.
    pub fn with_key_from_env(mut self, var: &str) -> Result<Self, EmbedError> {
        let key = std::env::var(var).map_err(|_| EmbedError::MissingCredential(var.to_string()))?;
        self.api_key = Some(key);
        Ok(self)
    }

    fn request(&self, batch: &[(EmbeddingKey, String)]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let body = EmbeddingRequest {
            input: batch.iter().map(|(_, p)| p.as_str()).collect(),
            model: &self.model,
        };
        let attempts = self.retries.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            let mut req = self.client.post(&self.endpoint).timeout(self.timeout).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let result = req
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.json::<EmbeddingResponse>());
            match result {
                Ok(mut resp) => {
                    if resp.data.iter().all(|d| d.index.is_some()) {
                        resp.data.sort_by_key(|d| d.index);
                    }
                    return Ok(resp.data.into_iter().map(|d| d.embedding).collect());
                }
                Err(e) => {
                    last = e.to_string();
                    if attempt + 1 < attempts {
                        std::thread::sleep(Duration::from_millis(100 << attempt.min(6)));
                    }
                }
            }
        }
        Err(EmbedError::Transport {
            key: batch.first().map(|(k, _)| k.to_string()).unwrap_or_default(),
            attempts,
            message: last,
        })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn tag(&self) -> &str {
        "remote"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, items: &[(EmbeddingKey, String)]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let batches: Vec<&[(EmbeddingKey, String)]> = items.chunks(self.batch_size.max(1)).collect();
        let mut out = Vec::with_capacity(items.len());
        // At most `max_inflight` requests are outstanding at any time.
        for group in batches.chunks(self.max_inflight.max(1)) {
            let results: Vec<Result<Vec<Vec<f32>>, EmbedError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|batch| scope.spawn(move || self.request(batch)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            for (batch, result) in group.iter().zip(results) {
                let vectors = result?;
                if vectors.len() != batch.len() {
                    return Err(EmbedError::CountMismatch {
                        expected: batch.len(),
                        got: vectors.len(),
                    });
                }
                out.extend(vectors);
            }
        }
        Ok(out)
    }
}
