//! Binary checkpoint format shared by the diffusion denoiser and the VAE.
//!
//! Layout: magic `CKPT`, version u16, tensor count u32, then per-tensor
//! records (name length u16, UTF-8 name, rank u8, dims u32 x rank, float32
//! little-endian data), followed by a JSON metadata trailer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;
use crate::nn::tensor::{Scalar, Shape, Tensor};

const MAGIC: &[u8; 4] = b"CKPT";
const VERSION: u16 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
pub struct CheckpointMeta {
    pub epoch: usize,
    /// FNV-1a digest over the per-epoch loss history, hex encoded.
    pub loss_history_digest: String,
    pub rng_seed: u64,
    #[serde(default)]
    pub model_kind: String,
}

pub fn loss_history_digest(losses: &[f64]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for &l in losses {
        for b in l.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    format!("{h:016x}")
}

pub fn save<F: Scalar>(path: &Path, params: &ParamSet<F>, meta: &CheckpointMeta) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(params.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, t) in params.iter() {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(nb).map_err(io)?;
        let shape = t.shape();
        w.write_all(&[shape.rank() as u8]).map_err(io)?;
        for d in shape.dims() {
            w.write_all(&(*d as u32).to_le_bytes()).map_err(io)?;
        }
        for v in t.to_f32() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    let meta_bytes = serde_json::to_vec(meta)?;
    w.write_all(&meta_bytes).map_err(io)?;
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load<F: Scalar>(path: &Path) -> Result<(ParamSet<F>, CheckpointMeta)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    let fmt = |what: &str| Error::Format { path: path.to_path_buf(), what: what.into() };

    if buf.len() < 10 || &buf[..4] != MAGIC {
        return Err(fmt("missing CKPT magic"));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != VERSION {
        return Err(fmt(&format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes([buf[6], buf[7], buf[8], buf[9]]) as usize;
    let mut pos = 10;
    let mut params = ParamSet::new();
    for _ in 0..count {
        if pos + 2 > buf.len() {
            return Err(fmt("truncated tensor record"));
        }
        let name_len = u16::from_le_bytes([buf[pos], buf[pos + 1]]) as usize;
        pos += 2;
        let name = std::str::from_utf8(
            buf.get(pos..pos + name_len).ok_or_else(|| fmt("truncated name"))?,
        )
        .map_err(|_| fmt("non-UTF-8 tensor name"))?
        .to_string();
        pos += name_len;
        let rank = *buf.get(pos).ok_or_else(|| fmt("truncated rank"))? as usize;
        pos += 1;
        if rank > 4 {
            return Err(fmt("rank > 4"));
        }
        let mut dims = [1usize; 4];
        for d in dims.iter_mut().take(rank) {
            let b = buf.get(pos..pos + 4).ok_or_else(|| fmt("truncated dims"))?;
            *d = u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
            pos += 4;
        }
        let shape = match rank {
            0 => Shape::scalar(),
            1 => Shape::d1(dims[0]),
            2 => Shape::d2(dims[0], dims[1]),
            _ => Shape::d4(dims[0], dims[1], dims[2], dims[3]),
        };
        let n = shape.len();
        let bytes = buf.get(pos..pos + 4 * n).ok_or_else(|| fmt("truncated tensor data"))?;
        pos += 4 * n;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(name, Tensor::from_f32(shape, &data));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&buf[pos..])
        .map_err(|_| fmt("bad JSON metadata trailer"))?;
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bit_identical() {
        let dir = std::env::temp_dir().join(format!("luvt-ckpt-{}", std::process::id()));
        let path = dir.join("a.ckpt");
        let mut params = ParamSet::<f32>::new();
        params.insert("w", Tensor::from_vec(Shape::d2(2, 3), vec![1.0, -2.5, 0.0, 3.25, 4.0, 1e-7]));
        params.insert("b", Tensor::from_vec(Shape::d1(2), vec![0.5, -0.5]));
        let meta = CheckpointMeta {
            epoch: 7,
            loss_history_digest: loss_history_digest(&[1.0, 0.5]),
            rng_seed: 42,
            model_kind: "ddpm".into(),
        };
        save(&path, &params, &meta).unwrap();
        let (loaded, meta2) = load::<f32>(&path).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(params.names(), loaded.names());
        for ((_, a), (_, b)) in params.iter().zip(loaded.iter()) {
            assert_eq!(a.data(), b.data());
        }
        // Save again: byte-identical files.
        let path2 = dir.join("b.ckpt");
        save(&path2, &loaded, &meta2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = std::env::temp_dir().join(format!("luvt-ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"NOPExxxxxxxx").unwrap();
        assert!(load::<f32>(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
