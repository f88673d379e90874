use std::path::Path;

use inforewrite::config::PipelineConfig;
use sha2::{Digest, Sha256};

use crate::cli::GlobalArgs;
use crate::failure::{CliResult, Failure};

/// Config file (or defaults) with command-line overrides applied.
pub fn load(global: &GlobalArgs) -> CliResult<PipelineConfig> {
    let mut config = match &global.config {
        Some(path) => read(path)?,
        None => PipelineConfig::default(),
    };
    apply_overrides(&mut config, global)?;
    Ok(config)
}

fn read(path: &Path) -> CliResult<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn apply_overrides(c: &mut PipelineConfig, g: &GlobalArgs) -> CliResult<()> {
    if let Some(v) = &g.model {
        c.llm.model = v.clone();
    }
    if let Some(v) = &g.endpoint {
        c.llm.endpoint = v.clone();
    }
    if let Some(v) = g.concurrency {
        c.llm.concurrency = v;
    }
    if let Some(v) = g.rate {
        c.llm.rate_per_sec = (v > 0.0).then_some(v);
    }
    if let Some(v) = g.max_attempts {
        c.llm.max_attempts = v;
    }
    if let Some(v) = &g.cache {
        c.paths.cache = Some(v.display().to_string());
    }
    if let Some(v) = g.k {
        c.retrieval.k = v;
    }
    if let Some(v) = g.k1 {
        c.retrieval.k1 = v;
    }
    if let Some(v) = g.b {
        c.retrieval.b = v;
    }
    if let Some(v) = g.shards {
        c.retrieval.shards = v;
    }
    if let Some(v) = g.dimension {
        c.retrieval.dimension = v;
    }
    if let Some(v) = g.seed {
        c.seeds.dev_split = v;
        c.seeds.distill = v;
        c.seeds.embedding = v;
    }
    validate(c)
}

fn validate(c: &PipelineConfig) -> CliResult<()> {
    let bad = |m: &str| Err(Failure::Usage(m.to_string()));
    if c.retrieval.k == 0 {
        return bad("k must be positive");
    }
    if !(c.retrieval.k1 >= 0.0 && (0.0..=1.0).contains(&c.retrieval.b)) {
        return bad("BM25 needs k1 >= 0 and 0 <= b <= 1");
    }
    if c.retrieval.shards == 0 || c.retrieval.dimension == 0 {
        return bad("shards and dimension must be positive");
    }
    if c.llm.concurrency == 0 || c.llm.max_attempts == 0 {
        return bad("concurrency and max_attempts must be positive");
    }
    Ok(())
}

/// SHA-256 of the effective config in canonical JSON.
pub fn hash(config: &PipelineConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}
