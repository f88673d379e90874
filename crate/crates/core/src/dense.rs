//! Exact dense retrieval over sharded unit-normalized vectors.
//!
//! Each shard is scanned exhaustively on its own thread, shard top-k lists
//! are merged, and ties break by ascending passage id, so the result does not
//! depend on how passages were sharded.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::llm::sha256_hex;
use crate::ranking::{to_scored_docs, TopK};
use crate::{Error, Result, ScoredDoc};

pub const NORM_TOLERANCE: f64 = 1e-6;

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Raw vectors, one per text; [`embed`] validates and normalizes them.
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

/// Key used by precomputed-vector files.
pub fn text_hash(text: &str) -> String {
    sha256_hex(text.as_bytes())
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

pub fn normalize(mut v: Vec<f32>) -> Result<Vec<f32>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("embedding has non-finite components"));
    }
    let norm = l2_norm(&v);
    if norm == 0.0 {
        return Err(Error::invalid("cannot normalize a zero vector"));
    }
    for x in &mut v {
        *x = (*x as f64 / norm) as f32;
    }
    Ok(v)
}

/// One unit-normalized vector per text, in order.
pub fn embed(texts: &[String], provider: &dyn EmbeddingProvider) -> Result<Vec<Vec<f32>>> {
    let raw = provider.embed_raw(texts)?;
    if raw.len() != texts.len() {
        return Err(Error::invalid(format!(
            "provider {} returned {} vectors for {} texts",
            provider.name(),
            raw.len(),
            texts.len()
        )));
    }
    raw.into_iter()
        .map(|v| {
            if v.len() != provider.dimension() {
                return Err(Error::Dimension {
                    expected: provider.dimension(),
                    actual: v.len(),
                });
            }
            normalize(v)
        })
        .collect()
}

/// Deterministic provider for tests: each text seeds its own vector.
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        Self { dimension, seed }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn name(&self) -> &str {
        "hash"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut h = Sha256::new();
                h.update(self.seed.to_le_bytes());
                h.update(t.as_bytes());
                let digest: [u8; 32] = h.finalize().into();
                let mut rng = ChaCha8Rng::from_seed(digest);
                (0..self.dimension).map(|_| rng.random_range(-1.0f32..1.0)).collect()
            })
            .collect())
    }
}

#[derive(Deserialize)]
struct PrecomputedLine {
    text_hash: String,
    vector: Vec<f32>,
}

/// Vectors looked up by [`text_hash`] from a JSONL file of `{text_hash, vector}`.
pub struct PrecomputedEmbedder {
    dimension: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl PrecomputedEmbedder {
    pub fn load(path: impl AsRef<Path>, dimension: usize) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut vectors = HashMap::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let location = format!("{}:{}", path.display(), i + 1);
            let entry: PrecomputedLine =
                serde_json::from_str(&line).map_err(|e| Error::parse(&location, e.to_string()))?;
            if entry.vector.len() != dimension {
                return Err(Error::parse(
                    location,
                    format!("vector has {} components, expected {dimension}", entry.vector.len()),
                ));
            }
            vectors.insert(entry.text_hash, entry.vector);
        }
        Ok(Self { dimension, vectors })
    }

    pub fn from_map(dimension: usize, vectors: HashMap<String, Vec<f32>>) -> Self {
        Self { dimension, vectors }
    }
}

impl EmbeddingProvider for PrecomputedEmbedder {
    fn name(&self) -> &str {
        "precomputed"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        texts
            .iter()
            .map(|t| {
                let hash = text_hash(t);
                self.vectors
                    .get(&hash)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("no precomputed vector for text hash {hash}")))
            })
            .collect()
    }
}

/// Embedding endpoint speaking `{model, input: [..]}` -> `{data: [{embedding: [..]}]}`.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dimension: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>, dimension: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            dimension,
            agent,
        }
    }
}

pub fn parse_embedding_response(body: &str) -> Result<Vec<Vec<f32>>> {
    let v: Value = serde_json::from_str(body)?;
    let data = v
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::invalid("embedding response has no `data` array"))?;
    data.iter()
        .map(|item| {
            item.get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::invalid("embedding item has no `embedding` array"))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .map(|f| f as f32)
                        .ok_or_else(|| Error::invalid("non-numeric embedding component"))
                })
                .collect()
        })
        .collect()
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> &str {
        "http"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(json!({"model": self.model, "input": texts}))
            .map_err(|e| Error::invalid(format!("embedding request failed: {e}")))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::invalid(format!("embedding response unreadable: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(Error::invalid(format!("embedding endpoint returned HTTP {status}: {body}")));
        }
        parse_embedding_response(&body)
    }
}

/// A block of unit-normalized rows with their passage ids.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorShard {
    pub shard_no: usize,
    pub passage_ids: Vec<String>,
    pub dimension: usize,
    /// Row-major, `passage_ids.len() * dimension`.
    pub data: Vec<f32>,
}

impl VectorShard {
    pub fn new(shard_no: usize, passage_ids: Vec<String>, dimension: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != passage_ids.len() * dimension {
            return Err(Error::invalid(format!(
                "shard {shard_no}: {} values for {} rows of dimension {dimension}",
                data.len(),
                passage_ids.len()
            )));
        }
        let shard = Self {
            shard_no,
            passage_ids,
            dimension,
            data,
        };
        for (i, row) in shard.rows().enumerate() {
            let norm = l2_norm(row);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::invalid(format!(
                    "shard {shard_no}: row {i} ({}) has norm {norm}",
                    shard.passage_ids[i]
                )));
            }
        }
        Ok(shard)
    }

    pub fn len(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passage_ids.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dimension.max(1))
    }

    fn top_k(&self, query: &[f32], k: usize) -> Vec<(f64, &str)> {
        let mut top = TopK::new(k);
        for (row, id) in self.rows().zip(&self.passage_ids) {
            top.push(cosine(query, row), id.as_str());
        }
        top.into_sorted()
    }
}

/// Dot product accumulated in f64; equals cosine similarity for unit vectors.
pub fn cosine(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Splits vectors into `n_shards` contiguous shards of near-equal size.
pub fn build_shards(passage_ids: Vec<String>, vectors: Vec<Vec<f32>>, n_shards: usize) -> Result<Vec<VectorShard>> {
    if passage_ids.len() != vectors.len() {
        return Err(Error::invalid("passage id and vector counts differ"));
    }
    if passage_ids.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let mut seen = HashSet::new();
    for id in &passage_ids {
        if !seen.insert(id) {
            return Err(Error::Duplicate {
                what: "passage id",
                key: id.clone(),
            });
        }
    }
    let dimension = vectors[0].len();
    let n_shards = n_shards.clamp(1, passage_ids.len());
    let total = passage_ids.len();
    let mut ids = passage_ids.into_iter();
    let mut vecs = vectors.into_iter();
    (0..n_shards)
        .map(|s| {
            let size = total / n_shards + usize::from(s < total % n_shards);
            let shard_ids: Vec<String> = ids.by_ref().take(size).collect();
            let mut data = Vec::with_capacity(size * dimension);
            for v in vecs.by_ref().take(size) {
                if v.len() != dimension {
                    return Err(Error::Dimension {
                        expected: dimension,
                        actual: v.len(),
                    });
                }
                data.extend(v);
            }
            VectorShard::new(s, shard_ids, dimension, data)
        })
        .collect()
}

/// Exact top-k by cosine over all shards.
pub fn search_dense(query: &[f32], shards: &[VectorShard], k: usize) -> Result<Vec<ScoredDoc>> {
    if shards.is_empty() {
        return Err(Error::EmptyCollection);
    }
    for s in shards {
        if s.dimension != query.len() {
            return Err(Error::Dimension {
                expected: s.dimension,
                actual: query.len(),
            });
        }
    }
    let per_shard: Vec<Vec<(f64, &str)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = shards
            .iter()
            .map(|s| scope.spawn(move || s.top_k(query, k)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("shard search thread panicked"))
            .collect()
    });
    let mut merged = TopK::new(k);
    for (score, id) in per_shard.into_iter().flatten() {
        merged.push(score, id);
    }
    Ok(to_scored_docs(
        merged.into_sorted().into_iter().map(|(s, id)| (s, id.to_string())),
    ))
}

pub const SHARD_MAGIC: &[u8; 8] = b"IRWVEC\0\0";
pub const SHARD_FORMAT_VERSION: u32 = 1;

fn shard_paths(dir: &Path, shard_no: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("shard_{shard_no:03}.bin")),
        dir.join(format!("shard_{shard_no:03}.ids.json")),
    )
}

/// Writes `shard_NNN.bin` (magic, version u32, dimension u32, rows u64, f32 LE
/// row-major) plus a `shard_NNN.ids.json` id sidecar per shard.
pub fn write_shards(dir: impl AsRef<Path>, shards: &[VectorShard]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in shards {
        let (bin, ids) = shard_paths(dir, s.shard_no);
        let f = File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut w = BufWriter::new(f);
        let mut header = Vec::with_capacity(24);
        header.extend_from_slice(SHARD_MAGIC);
        header.extend_from_slice(&SHARD_FORMAT_VERSION.to_le_bytes());
        header.extend_from_slice(&(s.dimension as u32).to_le_bytes());
        header.extend_from_slice(&(s.len() as u64).to_le_bytes());
        w.write_all(&header).map_err(|e| Error::io(&bin, e))?;
        for x in &s.data {
            w.write_all(&x.to_le_bytes()).map_err(|e| Error::io(&bin, e))?;
        }
        w.flush().map_err(|e| Error::io(&bin, e))?;
        let sidecar = serde_json::to_vec(&s.passage_ids)?;
        std::fs::write(&ids, sidecar).map_err(|e| Error::io(&ids, e))?;
    }
    Ok(())
}

pub fn read_shard(dir: impl AsRef<Path>, shard_no: usize) -> Result<VectorShard> {
    let (bin, ids_path) = shard_paths(dir.as_ref(), shard_no);
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let location = bin.display().to_string();
    if bytes.len() < 24 || &bytes[..8] != SHARD_MAGIC {
        return Err(Error::parse(location, "bad shard header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != SHARD_FORMAT_VERSION {
        return Err(Error::parse(location, format!("unsupported shard version {version}")));
    }
    let dimension = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let rows = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let body = &bytes[24..];
    if body.len() != rows * dimension * 4 {
        return Err(Error::parse(location, "shard body length disagrees with header"));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let ids_raw = std::fs::read(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
    let ids: Vec<String> = serde_json::from_slice(&ids_raw)?;
    if ids.len() != rows {
        return Err(Error::parse(
            ids_path.display().to_string(),
            format!("{} ids for {rows} rows", ids.len()),
        ));
    }
    VectorShard::new(shard_no, ids, dimension, data)
}

/// Reads every `shard_NNN.bin` in `dir`, in shard order, checking dimensions and id uniqueness.
pub fn read_shards(dir: impl AsRef<Path>) -> Result<Vec<VectorShard>> {
    let dir = dir.as_ref();
    let mut numbers: Vec<usize> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            name.strip_prefix("shard_")?.strip_suffix(".bin")?.parse().ok()
        })
        .collect();
    numbers.sort_unstable();
    if numbers.is_empty() {
        return Err(Error::invalid(format!("no shard files in {}", dir.display())));
    }
    let shards: Vec<VectorShard> = numbers
        .into_iter()
        .map(|n| read_shard(dir, n))
        .collect::<Result<_>>()?;
    let mut seen = HashSet::new();
    for s in &shards {
        if s.dimension != shards[0].dimension {
            return Err(Error::Dimension {
                expected: shards[0].dimension,
                actual: s.dimension,
            });
        }
        for id in &s.passage_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Duplicate {
                    what: "passage id across shards",
                    key: id.clone(),
                });
            }
        }
    }
    Ok(shards)
}
