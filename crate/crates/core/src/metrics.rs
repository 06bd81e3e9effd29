//! Token-level fidelity scoring and compression ratios.
//!
//! Fidelity is the greedy-matching score over token embeddings: every token is
//! matched to its most similar token on the other side, recall averages over
//! reference tokens and precision over candidate tokens.

use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::pipeline::{DebateSummary, StructuredSummary};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("embedding provider: {0}")]
    Provider(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Lowercased tokens: runs of letters/digits, and every other non-space
/// character on its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_lowercase().collect());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

pub fn count_tokens(text: &str) -> usize {
    tokenize(text).len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbedding {
    pub token: String,
    /// Unit L2 norm.
    pub vector: Vec<f64>,
}

/// Maps tokens to vectors. Vectors need not be normalized.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, MetricsError>;
}

/// Deterministic pseudo-random unit vectors keyed by `(salt, token)`.
#[derive(Debug, Clone)]
pub struct StubEmbeddings {
    dimension: usize,
    salt: String,
}

impl StubEmbeddings {
    pub fn new(dimension: usize, salt: impl Into<String>) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self {
            dimension,
            salt: salt.into(),
        }
    }

    pub fn vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update((self.salt.len() as u64).to_le_bytes());
        h.update(self.salt.as_bytes());
        h.update(token.as_bytes());
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        let v: Vec<f64> = (0..self.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        normalize(v)
    }
}

impl EmbeddingProvider for StubEmbeddings {
    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, MetricsError> {
        Ok(tokens.iter().map(|t| self.vector(t)).collect())
    }
}

/// Token embeddings from an `/embeddings` endpoint that accepts a list of
/// input strings (`{"model", "input": [...]}` → `{"data": [{"embedding"}]}`).
pub struct RemoteEmbeddings {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl RemoteEmbeddings {
    pub fn new(
        base_url: &str,
        model: &str,
        api_key: Option<String>,
        timeout: Duration,
        max_retries: u32,
    ) -> Result<Self, MetricsError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| MetricsError::Provider(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}/embeddings", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            max_retries,
            backoff: Duration::from_millis(500),
        })
    }

    fn attempt(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, (bool, String)> {
        let mut req = self.client.post(&self.url).json(&EmbeddingRequest {
            model: &self.model,
            input: tokens,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let transient = status.is_server_error() || status.as_u16() == 429;
            return Err((transient, format!("HTTP {status}")));
        }
        let mut body: EmbeddingResponse = resp.json().map_err(|e| (false, e.to_string()))?;
        if body.data.len() != tokens.len() {
            return Err((
                false,
                format!("expected {} embeddings, got {}", tokens.len(), body.data.len()),
            ));
        }
        body.data.sort_by_key(|d| d.index.unwrap_or(0));
        Ok(body.data.into_iter().map(|d| d.embedding).collect())
    }
}

impl EmbeddingProvider for RemoteEmbeddings {
    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, MetricsError> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(tokens) {
                Ok(v) => return Ok(v),
                Err((true, msg)) if attempt <= self.max_retries => {
                    log::warn!("embedding request failed ({msg}), retrying");
                    std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
                }
                Err((_, msg)) => {
                    return Err(MetricsError::Provider(format!(
                        "{msg} after {attempt} attempt(s)"
                    )))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    Stub,
    Remote,
}

fn default_dimension() -> usize {
    256
}
fn default_embed_retries() -> u32 {
    3
}
fn default_embed_timeout() -> u64 {
    60
}

/// `[embedding]` section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub salt: String,
    /// Optional rescaling baseline `b`: scores map to `(s - b) / (1 - b)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
    #[serde(default = "default_embed_retries")]
    pub max_retries: u32,
    #[serde(default = "default_embed_timeout")]
    pub timeout_s: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            kind: EmbeddingKind::Stub,
            base_url: None,
            model: None,
            dimension: default_dimension(),
            salt: String::new(),
            baseline: None,
            max_retries: default_embed_retries(),
            timeout_s: default_embed_timeout(),
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if let Some(b) = self.baseline {
            if !(b.is_finite() && b < 1.0) {
                return Err(MetricsError::Argument(format!("baseline {b} must be < 1")));
            }
        }
        match self.kind {
            EmbeddingKind::Stub if self.dimension == 0 => {
                Err(MetricsError::Argument("dimension must be positive".into()))
            }
            EmbeddingKind::Remote if self.base_url.is_none() || self.model.is_none() => Err(
                MetricsError::Argument("remote embeddings need base_url and model".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>, MetricsError> {
        self.validate()?;
        Ok(match self.kind {
            EmbeddingKind::Stub => Box::new(StubEmbeddings::new(self.dimension, self.salt.clone())),
            EmbeddingKind::Remote => Box::new(RemoteEmbeddings::new(
                self.base_url.as_deref().unwrap_or_default(),
                self.model.as_deref().unwrap_or_default(),
                std::env::var("DBB_API_KEY_EMBEDDING").ok(),
                Duration::from_secs(self.timeout_s),
                self.max_retries,
            )?),
        })
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn embed_tokens(
    text: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<TokenEmbedding>, MetricsError> {
    let tokens = tokenize(text);
    let vectors = provider.embed(&tokens)?;
    if vectors.len() != tokens.len() {
        return Err(MetricsError::Provider(format!(
            "provider returned {} vectors for {} tokens",
            vectors.len(),
            tokens.len()
        )));
    }
    Ok(tokens
        .into_iter()
        .zip(vectors)
        .map(|(token, v)| TokenEmbedding {
            token,
            vector: normalize(v),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub rescaled: bool,
    /// Set when either side had no tokens; all scores are then zero.
    #[serde(default)]
    pub degenerate: bool,
}

impl FidelityScore {
    pub fn zero() -> Self {
        Self {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            rescaled: false,
            degenerate: true,
        }
    }

    pub fn rescale(self, baseline: f64) -> Self {
        let r = |s: f64| (s - baseline) / (1.0 - baseline);
        Self {
            precision: r(self.precision),
            recall: r(self.recall),
            f1: r(self.f1),
            rescaled: true,
            degenerate: self.degenerate,
        }
    }
}

pub fn harmonic_f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Greedy-matching score from already normalized embeddings.
pub fn greedy_match(candidate: &[TokenEmbedding], reference: &[TokenEmbedding]) -> FidelityScore {
    if candidate.is_empty() || reference.is_empty() {
        return FidelityScore::zero();
    }
    let mut best_for_ref = vec![f64::NEG_INFINITY; reference.len()];
    let mut precision_sum = 0.0;
    for c in candidate {
        let mut best = f64::NEG_INFINITY;
        for (j, r) in reference.iter().enumerate() {
            // same token, same static vector: cosine is 1 by definition
            let s = if c.token == r.token {
                1.0
            } else {
                dot(&c.vector, &r.vector).clamp(-1.0, 1.0)
            };
            if s > best {
                best = s;
            }
            if s > best_for_ref[j] {
                best_for_ref[j] = s;
            }
        }
        precision_sum += best;
    }
    let precision = precision_sum / candidate.len() as f64;
    let recall = best_for_ref.iter().sum::<f64>() / reference.len() as f64;
    FidelityScore {
        precision,
        recall,
        f1: harmonic_f1(precision, recall),
        rescaled: false,
        degenerate: false,
    }
}

/// Scores `candidate` against `reference`, optionally rescaled with `baseline`.
pub fn bertscore(
    candidate: &str,
    reference: &str,
    provider: &dyn EmbeddingProvider,
    baseline: Option<f64>,
) -> Result<FidelityScore, MetricsError> {
    let y = embed_tokens(candidate, provider)?;
    let x = embed_tokens(reference, provider)?;
    let score = greedy_match(&y, &x);
    Ok(match baseline {
        Some(b) if !score.degenerate => score.rescale(b),
        _ => score,
    })
}

/// Reconstruction is the candidate, the original summary the reference.
pub fn intervention_fidelity(
    original: &StructuredSummary,
    reconstructed: &StructuredSummary,
    provider: &dyn EmbeddingProvider,
    baseline: Option<f64>,
) -> Result<FidelityScore, MetricsError> {
    bertscore(&reconstructed.render(), &original.render(), provider, baseline)
}

/// Mean F1 over a debate's interventions.
pub fn debate_fidelity(per_intervention: &[FidelityScore]) -> Result<f64, MetricsError> {
    if per_intervention.is_empty() {
        return Err(MetricsError::Argument(
            "debate fidelity needs at least one intervention".into(),
        ));
    }
    Ok(per_intervention.iter().map(|s| s.f1).sum::<f64>() / per_intervention.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub compression_ratio: f64,
    pub decompression_ratio: f64,
    pub tokens_summary: usize,
    pub tokens_source: usize,
    pub tokens_reconstructed: usize,
    /// A denominator was zero and the corresponding ratio was set to 0.
    pub degenerate: bool,
}

impl RatioReport {
    pub fn from_counts(tokens_summary: usize, tokens_source: usize, tokens_reconstructed: usize) -> Self {
        let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            compression_ratio: div(tokens_summary, tokens_source),
            decompression_ratio: div(tokens_reconstructed, tokens_summary),
            tokens_summary,
            tokens_source,
            tokens_reconstructed,
            degenerate: tokens_summary == 0 || tokens_source == 0,
        }
    }
}

pub fn ratios<'a, I, R>(summary: &DebateSummary, intervention_summaries: I, reconstructions: R) -> RatioReport
where
    I: IntoIterator<Item = &'a StructuredSummary>,
    R: IntoIterator<Item = &'a StructuredSummary>,
{
    let source: usize = intervention_summaries
        .into_iter()
        .map(|s| count_tokens(&s.render()))
        .sum();
    let recon: usize = reconstructions
        .into_iter()
        .map(|s| count_tokens(&s.render()))
        .sum();
    let report = RatioReport::from_counts(count_tokens(&summary.text), source, recon);
    if report.degenerate {
        log::warn!(
            "debate {} ({}) has a zero-token ratio denominator",
            summary.debate_id,
            summary.method
        );
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The EU acts."), vec!["the", "eu", "acts", "."]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("co-operation"), vec!["co", "-", "operation"]);
        assert_eq!(tokenize("Größe  2024!"), vec!["größe", "2024", "!"]);
    }

    #[test]
    fn stub_vectors_are_unit_and_keyed() {
        let stub = StubEmbeddings::new(256, "s");
        let e = embed_tokens("tax tax", &stub).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].vector, e[1].vector);
        let norm: f64 = e[0].vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(embed_tokens("", &stub).unwrap().is_empty());
        assert_ne!(StubEmbeddings::new(256, "t").vector("tax"), stub.vector("tax"));
    }

    #[test]
    fn self_score_is_one() {
        let stub = StubEmbeddings::new(64, "");
        let s = bertscore("Energy prices rise.", "Energy prices rise.", &stub, None).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let part = bertscore("prices rise", "Energy prices rise.", &stub, None).unwrap();
        assert_eq!(part.precision, 1.0);
        assert!(part.recall < 1.0);
    }

    #[test]
    fn empty_side_is_degenerate_zero() {
        let stub = StubEmbeddings::new(32, "");
        let s = bertscore("", "something", &stub, Some(0.5)).unwrap();
        assert!(s.degenerate);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rescaling_is_affine_per_component() {
        let s = FidelityScore {
            precision: 0.9,
            recall: 0.7,
            f1: harmonic_f1(0.9, 0.7),
            rescaled: false,
            degenerate: false,
        };
        let r = s.rescale(0.5);
        assert!((r.precision - 0.8).abs() < 1e-12);
        assert!((r.recall - 0.4).abs() < 1e-12);
        assert!((r.f1 - (s.f1 - 0.5) / 0.5).abs() < 1e-12);
        assert!(r.rescaled);
    }

    #[test]
    fn debate_fidelity_examples() {
        let mk = |f1| FidelityScore {
            precision: f1,
            recall: f1,
            f1,
            rescaled: false,
            degenerate: false,
        };
        assert_eq!(debate_fidelity(&[mk(1.0), mk(0.0)]).unwrap(), 0.5);
        assert_eq!(debate_fidelity(&[mk(0.25); 7]).unwrap(), 0.25);
        assert!((debate_fidelity(&[mk(0.3); 7]).unwrap() - 0.3).abs() < 1e-15);
        assert!(debate_fidelity(&[]).is_err());
        let mixed = [mk(0.1), mk(0.25), mk(0.7), mk(0.05)];
        let naive = (0.1 + 0.25 + 0.7 + 0.05) / 4.0;
        assert!((debate_fidelity(&mixed).unwrap() - naive).abs() < 1e-15);
    }

    #[test]
    fn ratio_examples() {
        let r = RatioReport::from_counts(100, 400, 110);
        assert_eq!(r.compression_ratio, 0.25);
        assert_eq!(r.decompression_ratio, 1.1);
        assert!(!r.degenerate);
        let z = RatioReport::from_counts(0, 400, 10);
        assert_eq!(z.decompression_ratio, 0.0);
        assert!(z.degenerate);
    }
}
