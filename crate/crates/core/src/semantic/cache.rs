use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::prompt::{build_task_prompt, build_trajectory_prompt, PromptContext, PromptText};
use super::provider::SemanticProvider;
use crate::data::Trajectory;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"RSEM";
pub const CACHE_VERSION: u16 = 1;

/// Exact-match map from key strings to `D`-wide vectors. Once sealed it
/// rejects further inserts.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticCache {
    provider_id: String,
    dim: usize,
    entries: BTreeMap<String, Vec<f32>>,
    sealed: bool,
}

impl SemanticCache {
    pub fn new(provider_id: impl Into<String>, dim: usize) -> Self {
        SemanticCache {
            provider_id: provider_id.into(),
            dim,
            entries: BTreeMap::new(),
            sealed: false,
        }
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn insert(&mut self, key: String, vector: Vec<f32>) -> Result<()> {
        if self.sealed {
            return Err(Error::Cache(format!("cache is sealed; cannot insert {key}")));
        }
        if vector.len() != self.dim {
            return Err(Error::Cache(format!(
                "vector for {key} has width {}, cache width is {}",
                vector.len(),
                self.dim
            )));
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn get(&self, key: &str) -> Result<&[f32]> {
        self.entries
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        write_str(&mut w, &self.provider_id)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (key, vector) in &self.entries {
            write_str(&mut w, key)?;
            for v in vector {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a cache file; the result is sealed.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Cache("bad magic bytes".into()));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != CACHE_VERSION {
            return Err(Error::Cache(format!("unsupported version {version}")));
        }
        let provider_id = read_str(&mut r)?;
        let dim = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let count = u64::from_le_bytes(read_array(&mut r)?);
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let key = read_str(&mut r)?;
            let vector = (0..dim)
                .map(|_| read_array(&mut r).map(f32::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            entries.insert(key, vector);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Cache(format!("{} trailing bytes", rest.len())));
        }
        Ok(SemanticCache {
            provider_id,
            dim,
            entries,
            sealed: true,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if !self.sealed {
            return Err(Error::Cache("refusing to persist an unsealed cache".into()));
        }
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Cache(format!("truncated cache: {e}")))?;
    Ok(buf)
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = u32::from_le_bytes(read_array(r)?) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Cache(format!("truncated cache: {e}")))?;
    String::from_utf8(buf).map_err(|e| Error::Cache(e.to_string()))
}

/// Embeds one trajectory prompt per `(user, history day)` and one task
/// prompt per `(user, horizon day)`, seals the cache and optionally writes
/// it to `out`. Nothing is written when any embedding fails.
pub fn precompute_semantics(
    trajs: &[Trajectory],
    history_days: &[u32],
    horizon_days: &[u32],
    provider: &dyn SemanticProvider,
    model_dim: usize,
    ctx: &PromptContext,
    out: Option<&Path>,
) -> Result<SemanticCache> {
    if provider.dim() != model_dim {
        return Err(Error::Cache(format!(
            "provider width {} does not match model width {model_dim}",
            provider.dim()
        )));
    }
    let mut cache = SemanticCache::new(provider.id(), model_dim);
    let mut add = |prompt: PromptText| -> Result<()> {
        let key = prompt.key.to_string();
        let vector = provider.embed(&prompt.text).map_err(|e| Error::Provider {
            key: key.clone(),
            msg: match e {
                Error::Provider { msg, .. } => msg,
                other => other.to_string(),
            },
        })?;
        cache.insert(key, vector)
    };
    for traj in trajs {
        for &day in history_days {
            add(build_trajectory_prompt(traj, day, ctx)?)?;
        }
        for &day in horizon_days {
            add(build_task_prompt(&traj.user_id, day, ctx.calendar.weekday(day), ctx))?;
        }
    }
    cache.seal();
    if let Some(path) = out {
        cache.save(path)?;
    }
    Ok(cache)
}
