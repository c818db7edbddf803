//! Binary checkpoints: magic, format version, JSON config, then every tensor
//! as name, rows, cols and row-major little-endian `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, Params, Seq2Seq};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CBMODEL\0";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &Seq2Seq, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(&model.config)?;
    w.write_all(&(config.len() as u64).to_le_bytes())?;
    w.write_all(&config)?;
    let tensors = model.params.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, _, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows as u64).to_le_bytes())?;
        w.write_all(&(t.cols as u64).to_le_bytes())?;
        for x in &t.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::BadCheckpoint(format!("truncated: {e}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_bytes(r: &mut impl Read, len: u64) -> Result<Vec<u8>> {
    if len > 1 << 30 {
        return Err(Error::BadCheckpoint(format!("implausible length {len}")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)
        .map_err(|e| Error::BadCheckpoint(format!("truncated: {e}")))?;
    Ok(buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Seq2Seq> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = BufReader::new(File::open(path)?);
    if &read_array::<8>(&mut r)? != MAGIC {
        return Err(Error::BadCheckpoint("not a model checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::BadCheckpoint(format!("unsupported version {version}")));
    }
    let len = read_u64(&mut r)?;
    let config: ModelConfig = serde_json::from_slice(&read_bytes(&mut r, len)?)?;
    config.validate()?;
    let mut params: Params = Params::init(&config);
    let count = read_u32(&mut r)? as usize;
    let mut tensors = params.tensors_mut();
    if count != tensors.len() {
        return Err(Error::BadCheckpoint(format!(
            "expected {} tensors, found {count}",
            tensors.len()
        )));
    }
    for (name, _, t) in tensors.iter_mut() {
        let len = read_u32(&mut r)? as u64;
        let found = String::from_utf8(read_bytes(&mut r, len)?)
            .map_err(|_| Error::BadCheckpoint("tensor name is not UTF-8".into()))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        if found != *name || rows != t.rows || cols != t.cols {
            return Err(Error::BadCheckpoint(format!(
                "expected {name} {}x{}, found {found} {rows}x{cols}",
                t.rows, t.cols
            )));
        }
        for x in t.data.iter_mut() {
            *x = f64::from_le_bytes(read_array(&mut r)?);
        }
    }
    drop(tensors);
    Ok(Seq2Seq { config, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let config = ModelConfig {
            embed_dim: 3,
            hidden_dim: 2,
            input_vocab: 9,
            output_vocab: 7,
            seed: 11,
            ..ModelConfig::default()
        };
        let model = Seq2Seq::new(config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), model);
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"hello world, not a model").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::BadCheckpoint(_))));
        assert!(matches!(
            load_checkpoint(&dir.path().join("absent")),
            Err(Error::MissingArtifact(_))
        ));
    }
}
