//! Binary checkpoint container: magic `RCKPT`, a version, a JSON metadata
//! block, the frozen backbone digest and a list of named `f32` tensors, all
//! little-endian with length-prefixed keys.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"RCKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub backbone_digest: [u8; 32],
    pub tensors: Vec<(String, Array2<f32>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Array2<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} missing")))
    }

    /// Tensors whose name starts with `prefix/`, with the prefix removed.
    pub fn group(&self, prefix: &str) -> Vec<(String, Array2<f32>)> {
        let p = format!("{prefix}/");
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(&p).map(|rest| (rest.to_string(), t.clone())))
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_bytes(&mut w, serde_json::to_string(&self.meta)?.as_bytes())?;
        w.write_all(&self.backbone_digest)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_bytes(&mut w, name.as_bytes())?;
            w.write_all(&(t.nrows() as u32).to_le_bytes())?;
            w.write_all(&(t.ncols() as u32).to_le_bytes())?;
            for v in t.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta = serde_json::from_slice(&read_bytes(&mut r)?)?;
        let backbone_digest = read_array(&mut r)?;
        let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(&mut r)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let rows = u32::from_le_bytes(read_array(&mut r)?) as usize;
            let cols = u32::from_le_bytes(read_array(&mut r)?) as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f32::from_le_bytes(read_array(&mut r)?));
            }
            let t = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensors.push((name, t));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            meta,
            backbone_digest,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Reads the `backbone/*` tensors of a checkpoint file.
pub fn read_tensor_file(path: &Path) -> Result<Vec<(String, Array2<f32>)>> {
    let ckpt = Checkpoint::load(path)?;
    let tensors = ckpt.group("backbone");
    if tensors.is_empty() {
        return Err(Error::Checkpoint(format!("{} holds no backbone tensors", path.display())));
    }
    Ok(tensors)
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let len = u32::from_le_bytes(read_array(r)?) as usize;
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> Checkpoint {
        Checkpoint {
            meta: serde_json::json!({"epoch": 3, "lr": 3e-4, "name": "x"}),
            backbone_digest: [7; 32],
            tensors: vec![
                ("param/a".into(), array![[1.0f32, -2.5], [0.1, 3.0]]),
                ("backbone/0.w".into(), array![[f32::MIN_POSITIVE]]),
            ],
        }
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..5], b"RCKPT");
        let back = Checkpoint::read_from(&bytes[..]).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.group("backbone")[0].0, "0.w");
        assert!(back.tensor("param/b").is_err());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::read_from(&extra[..]).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(Checkpoint::read_from(&bad[..]).is_err());
    }
}
