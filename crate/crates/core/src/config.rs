//! Default experimental constants and the pipeline configuration file.

use serde::{Deserialize, Serialize};

pub const BM25_K1: f64 = 0.82;
pub const BM25_B: f64 = 0.68;
/// Passages retrieved per query.
pub const RETRIEVAL_DEPTH: usize = 100;
pub const TEMPERATURE: f64 = 0.0;
pub const MAX_GENERATION_TOKENS: u32 = 2560;
pub const EMBEDDING_DIMENSION: usize = 768;
pub const DENSE_SHARDS: usize = 8;
pub const SEED: u64 = 42;
pub const DEV_CONVERSATIONS: usize = 2000;
pub const DISTILL_TRAIN_QUESTIONS: usize = 10_000;
pub const DISTILL_DEV_QUESTIONS: usize = 2000;
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const CONTEXT_CHAR_BUDGET: usize = 12_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathSettings,
    pub llm: LlmSettings,
    pub retrieval: RetrievalSettings,
    pub seeds: SeedSettings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSettings {
    pub dataset: Option<String>,
    pub passages: Option<String>,
    pub cache: Option<String>,
    pub outputs: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub model: String,
    pub endpoint: String,
    /// Name of the environment variable holding the API key. The key itself never lives in config.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub concurrency: usize,
    /// Requests per second; `None` disables rate limiting.
    pub rate_per_sec: Option<f64>,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
    pub context_char_budget: Option<usize>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            model: DEFAULT_MODEL.to_string(),
            endpoint: DEFAULT_ENDPOINT.to_string(),
            api_key_env: API_KEY_ENV.to_string(),
            temperature: TEMPERATURE,
            max_tokens: MAX_GENERATION_TOKENS,
            concurrency: 4,
            rate_per_sec: Some(3.0),
            max_attempts: 5,
            backoff_base_ms: 1000,
            timeout_secs: 60,
            context_char_budget: Some(CONTEXT_CHAR_BUDGET),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSettings {
    pub k: usize,
    pub k1: f64,
    pub b: f64,
    pub shards: usize,
    pub dimension: usize,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        Self {
            k: RETRIEVAL_DEPTH,
            k1: BM25_K1,
            b: BM25_B,
            shards: DENSE_SHARDS,
            dimension: EMBEDDING_DIMENSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSettings {
    pub dev_split: u64,
    pub distill: u64,
    pub embedding: u64,
}

impl Default for SeedSettings {
    fn default() -> Self {
        Self {
            dev_split: SEED,
            distill: SEED,
            embedding: SEED,
        }
    }
}
