use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, Embedding};

/// Maps text to a fixed-dimension vector. Must be deterministic for a fixed
/// name/version.
pub trait Encoder: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Embed `(id, text)` pairs, returning vectors in input order.
    fn encode_batch(&self, items: &[(&str, &str)]) -> Result<Vec<Embedding>, EmbedError>;

    fn encode(&self, text: &str) -> Result<Embedding, EmbedError> {
        Ok(self.encode_batch(&[("", text)])?.remove(0))
    }
}

/// Bag-of-tokens feature hashing: lower-cased alphanumeric tokens are hashed
/// into `dim` buckets and the count vector is L2-normalised.
#[derive(Debug, Clone)]
pub struct HashingEncoder {
    dim: usize,
    name: String,
}

impl HashingEncoder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        HashingEncoder {
            dim,
            name: format!("hashing-bow-v1-d{dim}"),
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }

    pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
    }

    pub fn embed_text(&self, text: &str) -> Embedding {
        let mut v = vec![0.0; self.dim];
        for tok in Self::tokens(text) {
            v[self.bucket(&tok)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Embedding(v)
    }
}

impl Default for HashingEncoder {
    fn default() -> Self {
        HashingEncoder::new(Self::DEFAULT_DIM)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Encoder for HashingEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_batch(&self, items: &[(&str, &str)]) -> Result<Vec<Embedding>, EmbedError> {
        Ok(items.iter().map(|(_, text)| self.embed_text(text)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    /// Child process; one request line in, one response line out.
    Process(Vec<String>),
    /// Newline-delimited request body POSTed to this URL.
    Http { url: String, timeout_ms: u64 },
}

#[derive(Serialize)]
struct EncodeRequest<'a> {
    id: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct EncodeResponse {
    id: String,
    vector: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    encoder: String,
    id: String,
    vector: Vec<f64>,
}

/// Out-of-process sentence encoder speaking `{id, text}` → `{id, vector}`
/// JSON lines, with an optional sidecar cache keyed by `(encoder, id)`.
pub struct ExternalEncoder {
    name: String,
    dim: usize,
    transport: Transport,
    cache_path: Option<PathBuf>,
    cache: Mutex<BTreeMap<String, Embedding>>,
}

impl ExternalEncoder {
    pub fn new(name: impl Into<String>, dim: usize, transport: Transport, cache_path: Option<PathBuf>) -> Result<Self, EmbedError> {
        let name = name.into();
        let mut cache = BTreeMap::new();
        if let Some(path) = &cache_path {
            if path.exists() {
                let cache_err = |reason: String| EmbedError::Cache {
                    path: path.display().to_string(),
                    reason,
                };
                let file = File::open(path).map_err(|e| cache_err(e.to_string()))?;
                for line in BufReader::new(file).lines() {
                    let line = line.map_err(|e| cache_err(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: CacheLine = serde_json::from_str(&line).map_err(|e| cache_err(e.to_string()))?;
                    if entry.encoder == name && entry.vector.len() == dim {
                        cache.insert(entry.id, Embedding(entry.vector));
                    }
                }
            }
        }
        Ok(ExternalEncoder {
            name,
            dim,
            transport,
            cache_path,
            cache: Mutex::new(cache),
        })
    }

    fn err(&self, reason: impl Into<String>) -> EmbedError {
        EmbedError::Encoder {
            encoder: self.name.clone(),
            reason: reason.into(),
        }
    }

    fn request_body(items: &[(&str, &str)]) -> String {
        let mut body = String::new();
        for (id, text) in items {
            body.push_str(&serde_json::to_string(&EncodeRequest { id, text }).expect("serializable"));
            body.push('\n');
        }
        body
    }

    fn call(&self, items: &[(&str, &str)]) -> Result<String, EmbedError> {
        let body = Self::request_body(items);
        match &self.transport {
            Transport::Process(cmd) => {
                let (prog, args) = cmd.split_first().ok_or_else(|| self.err("empty command"))?;
                let mut child = Command::new(prog)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(|e| self.err(format!("spawn {prog}: {e}")))?;
                {
                    let mut stdin = child.stdin.take().expect("piped stdin");
                    stdin.write_all(body.as_bytes()).map_err(|e| self.err(e.to_string()))?;
                }
                let out = child.wait_with_output().map_err(|e| self.err(e.to_string()))?;
                if !out.status.success() {
                    return Err(self.err(format!("exited with {}", out.status)));
                }
                String::from_utf8(out.stdout).map_err(|e| self.err(e.to_string()))
            }
            Transport::Http { url, timeout_ms } => {
                let agent: ureq::Agent = ureq::Agent::config_builder()
                    .timeout_global(Some(Duration::from_millis(*timeout_ms)))
                    .build()
                    .into();
                let mut resp = agent
                    .post(url)
                    .header("content-type", "application/x-ndjson")
                    .send(body)
                    .map_err(|e| self.err(e.to_string()))?;
                resp.body_mut().read_to_string().map_err(|e| self.err(e.to_string()))
            }
        }
    }

    fn append_cache(&self, fresh: &[(String, Embedding)]) -> Result<(), EmbedError> {
        let Some(path) = &self.cache_path else {
            return Ok(());
        };
        let cache_err = |reason: String| EmbedError::Cache {
            path: path.display().to_string(),
            reason,
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| cache_err(e.to_string()))?;
        let mut w = BufWriter::new(file);
        for (id, v) in fresh {
            let line = CacheLine {
                encoder: self.name.clone(),
                id: id.clone(),
                vector: v.0.clone(),
            };
            serde_json::to_writer(&mut w, &line).map_err(|e| cache_err(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| cache_err(e.to_string()))?;
        }
        w.flush().map_err(|e| cache_err(e.to_string()))
    }
}

impl Encoder for ExternalEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_batch(&self, items: &[(&str, &str)]) -> Result<Vec<Embedding>, EmbedError> {
        let mut cache = self.cache.lock().expect("encoder cache poisoned");
        // Uncached items with an id go to the encoder once each; id-less items
        // (ad-hoc `encode` calls) are never cached.
        let missing: Vec<(&str, &str)> = items
            .iter()
            .filter(|(id, _)| id.is_empty() || !cache.contains_key(*id))
            .copied()
            .collect();
        let mut fresh: BTreeMap<String, Embedding> = BTreeMap::new();
        let mut anonymous = Vec::new();
        if !missing.is_empty() {
            let keyed: Vec<(String, &str)> = missing
                .iter()
                .enumerate()
                .map(|(i, (id, text))| (if id.is_empty() { format!("\u{0}anon{i}") } else { id.to_string() }, *text))
                .collect();
            let req: Vec<(&str, &str)> = keyed.iter().map(|(id, t)| (id.as_str(), *t)).collect();
            let body = self.call(&req)?;
            let mut got: BTreeMap<String, Embedding> = BTreeMap::new();
            for line in body.lines().filter(|l| !l.trim().is_empty()) {
                let resp: EncodeResponse = serde_json::from_str(line).map_err(|e| self.err(format!("bad response line: {e}")))?;
                if resp.vector.len() != self.dim {
                    return Err(self.err(format!("vector for {:?} has dimension {} (expected {})", resp.id, resp.vector.len(), self.dim)));
                }
                let v = Embedding(resp.vector);
                if !v.is_finite() {
                    return Err(EmbedError::NonFinite(resp.id));
                }
                got.insert(resp.id, v);
            }
            for (id, _) in &keyed {
                let v = got.remove(id).ok_or_else(|| self.err(format!("no vector returned for {id:?}")))?;
                if id.starts_with('\u{0}') {
                    anonymous.push(v);
                } else {
                    fresh.insert(id.clone(), v);
                }
            }
            let fresh_list: Vec<(String, Embedding)> = fresh.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            self.append_cache(&fresh_list)?;
            cache.extend(fresh);
        }
        let mut anon = anonymous.into_iter();
        Ok(items
            .iter()
            .map(|(id, _)| {
                if id.is_empty() {
                    anon.next().expect("one vector per anonymous item")
                } else {
                    cache[*id].clone()
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::cosine_similarity;

    #[test]
    fn hashing_is_deterministic_and_normalised() {
        let enc = HashingEncoder::default();
        let a = enc.encode("The cat sat on the mat").unwrap();
        let b = enc.encode("the CAT sat, on the mat!").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 64);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        let c = enc.encode("quarterly revenue fell sharply").unwrap();
        assert!(cosine_similarity(&a, &c).unwrap() < 1.0);
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let enc = HashingEncoder::new(8);
        assert_eq!(enc.encode("").unwrap().norm(), 0.0);
    }

    #[test]
    fn process_encoder_with_cache() {
        // `sh` echoes a constant vector per id; the second call must come from cache.
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("emb.jsonl");
        let counter = dir.path().join("calls");
        let script = format!(
            "echo x >> {}; while IFS= read -r line; do id=$(printf '%s' \"$line\" | sed 's/.*\"id\":\"\\([^\"]*\\)\".*/\\1/'); printf '{{\"id\":\"%s\",\"vector\":[1.0,0.5]}}\\n' \"$id\"; done",
            counter.display()
        );
        let transport = Transport::Process(vec!["sh".into(), "-c".into(), script]);
        let enc = ExternalEncoder::new("ext", 2, transport.clone(), Some(cache.clone())).unwrap();
        let v = enc.encode_batch(&[("a", "hello"), ("b", "world")]).unwrap();
        assert_eq!(v[0].0, vec![1.0, 0.5]);
        let v2 = enc.encode_batch(&[("b", "world")]).unwrap();
        assert_eq!(v2[0], v[1]);
        assert_eq!(std::fs::read_to_string(&counter).unwrap().lines().count(), 1);

        // a fresh encoder instance reads the sidecar cache
        let enc2 = ExternalEncoder::new("ext", 2, transport, Some(cache)).unwrap();
        enc2.encode_batch(&[("a", "hello")]).unwrap();
        assert_eq!(std::fs::read_to_string(&counter).unwrap().lines().count(), 1);
    }

    #[test]
    fn process_encoder_rejects_wrong_dimension() {
        let transport = Transport::Process(vec![
            "sh".into(),
            "-c".into(),
            "cat > /dev/null; echo '{\"id\":\"a\",\"vector\":[1.0]}'".into(),
        ]);
        let enc = ExternalEncoder::new("ext", 2, transport, None).unwrap();
        assert!(matches!(enc.encode_batch(&[("a", "x")]), Err(EmbedError::Encoder { .. })));
    }
}
