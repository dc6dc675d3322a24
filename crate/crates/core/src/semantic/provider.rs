use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Maps prompt text to a fixed-width vector. Implementations must be
/// deterministic in the text.
pub trait SemanticProvider {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>>;
}

/// Hash-seeded Gaussian direction: `SHA-256(seed ‖ text)` seeds a ChaCha8
/// stream, `dim` standard normal draws are scaled to unit norm.
#[derive(Clone, Debug)]
pub struct StubProvider {
    pub seed: u64,
    pub dim: usize,
}

impl StubProvider {
    pub fn new(seed: u64, dim: usize) -> Self {
        StubProvider { seed, dim }
    }
}

impl SemanticProvider for StubProvider {
    fn id(&self) -> String {
        format!("stub-sha256-chacha8/seed={}", self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
        let draws: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = draws.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(draws.iter().map(|v| (v / norm) as f32).collect())
    }
}

#[derive(Deserialize)]
struct ExportedVector {
    sha256: String,
    vector: Vec<f32>,
}

/// Vectors exported by an external embedder as JSON lines
/// `{"sha256": "<hex of prompt text>", "vector": [..]}`.
#[derive(Clone, Debug)]
pub struct FileProvider {
    source: String,
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl FileProvider {
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ExportedVector = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            if *dim.get_or_insert(rec.vector.len()) != rec.vector.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "vector width differs from earlier lines".into(),
                });
            }
            vectors.insert(rec.sha256.to_ascii_lowercase(), rec.vector);
        }
        Ok(FileProvider {
            source: path.display().to_string(),
            dim: dim.unwrap_or(0),
            vectors,
        })
    }

    pub fn text_digest(text: &str) -> String {
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

impl SemanticProvider for FileProvider {
    fn id(&self) -> String {
        format!("file:{}", self.source)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let digest = Self::text_digest(text);
        self.vectors.get(&digest).cloned().ok_or_else(|| Error::Provider {
            key: digest,
            msg: format!("no exported vector in {}", self.source),
        })
    }
}
