//! `VITW` weights file.
//!
//! Little-endian: `b"VITW"`, `u32` version, then the config as eight `u32`
//! words (hidden, layers, heads, mlp, patches, patch_dim, classes, and the
//! dropout rate as `f32` bits). A manifest follows: `u32` tensor count and
//! per tensor `u32` name length, UTF-8 name, `u32` rank, `u32` dims and a
//! `u64` byte offset into the payload. The payload is `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ViTConfig, ViTParams};
use crate::error::{Error, Result};

pub const VITW_MAGIC: &[u8; 4] = b"VITW";
pub const VITW_VERSION: u32 = 1;

fn config_words(cfg: &ViTConfig) -> [u32; 8] {
    [
        cfg.hidden_dim as u32,
        cfg.num_layers as u32,
        cfg.num_heads as u32,
        cfg.mlp_dim as u32,
        cfg.num_patches as u32,
        cfg.patch_dim as u32,
        cfg.num_classes as u32,
        (cfg.dropout_rate as f32).to_bits(),
    ]
}

pub fn write_weights_to(params: &ViTParams, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(VITW_MAGIC)?;
    w.write_u32::<LittleEndian>(VITW_VERSION)?;
    for word in config_words(&params.config) {
        w.write_u32::<LittleEndian>(word)?;
    }
    let tensors = params.named_tensors();
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    let mut offset = 0u64;
    for (name, t) in &tensors {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(t.ndim() as u32)?;
        for &dim in t.shape() {
            w.write_u32::<LittleEndian>(dim as u32)?;
        }
        w.write_u64::<LittleEndian>(offset)?;
        offset += 4 * t.len() as u64;
    }
    for (_, t) in &tensors {
        for &v in t.iter() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()
}

pub fn read_weights_from(mut r: impl Read) -> Result<ViTParams> {
    let bad = |m: String| Error::format("VITW weights", m);
    let trunc = |_| bad("truncated file".into());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != VITW_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
    if version != VITW_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut words = [0u32; 8];
    r.read_u32_into::<LittleEndian>(&mut words).map_err(trunc)?;
    let config = ViTConfig {
        hidden_dim: words[0] as usize,
        num_layers: words[1] as usize,
        num_heads: words[2] as usize,
        mlp_dim: words[3] as usize,
        num_patches: words[4] as usize,
        patch_dim: words[5] as usize,
        num_classes: words[6] as usize,
        // Shortest decimal form, so 0.1 comes back as 0.1 rather than its f32 neighbour.
        dropout_rate: f32::from_bits(words[7]).to_string().parse().expect("float text"),
    };
    let mut params = ViTParams::zeros(config)?;

    let count = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let expected = params.tensor_names();
    if count != expected.len() {
        return Err(bad(format!("{count} tensors, config implies {}", expected.len())));
    }
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(trunc)?;
        let name = String::from_utf8(name).map_err(|e| bad(e.to_string()))?;
        let rank = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let mut shape = vec![0u32; rank];
        r.read_u32_into::<LittleEndian>(&mut shape).map_err(trunc)?;
        let offset = r.read_u64::<LittleEndian>().map_err(trunc)?;
        manifest.push((name, shape, offset));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| Error::io("<weights>", e))?;

    for ((name, mut tensor), (file_name, shape, offset)) in params.named_tensors_mut().into_iter().zip(manifest) {
        if name != file_name {
            return Err(bad(format!("expected tensor {name}, found {file_name}")));
        }
        let shape: Vec<usize> = shape.iter().map(|&d| d as usize).collect();
        if shape != tensor.shape() {
            return Err(bad(format!("{name}: shape {shape:?}, expected {:?}", tensor.shape())));
        }
        let start = offset as usize;
        let end = start + 4 * tensor.len();
        let bytes = payload
            .get(start..end)
            .ok_or_else(|| bad(format!("{name}: payload out of range")))?;
        for (dst, chunk) in tensor.iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("weights payload".into()));
    }
    Ok(params)
}

pub fn write_weights(params: &ViTParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_weights_to(params, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<ViTParams> {
    let file = File::open(path).map_err(|e| Error::open(path, e))?;
    read_weights_from(BufReader::new(file))
}

/// Loads weights and insists that their architecture matches `expected`
/// (dropout rate excluded, as it does not affect the tensors).
pub fn read_weights_for(path: &Path, expected: &ViTConfig) -> Result<ViTParams> {
    let params = read_weights(path)?;
    let found = params.config;
    let same = ViTConfig {
        dropout_rate: expected.dropout_rate,
        ..found
    } == *expected;
    if !same {
        return Err(Error::ConfigMismatch(format!(
            "weights are D={} L={} H={} F={}, configuration expects D={} L={} H={} F={}",
            found.hidden_dim,
            found.num_layers,
            found.num_heads,
            found.mlp_dim,
            expected.hidden_dim,
            expected.num_layers,
            expected.num_heads,
            expected.mlp_dim
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_at_f32_precision() {
        let params = ViTParams::random(ViTConfig::toy(), 0.1, 2).unwrap();
        let mut buf = Vec::new();
        write_weights_to(&params, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"VITW");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 64);
        let back = read_weights_from(buf.as_slice()).unwrap();
        assert_eq!(back.config, params.config);
        for ((_, a), (_, b)) in params.named_tensors().iter().zip(back.named_tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn truncated_payload_rejected() {
        let params = ViTParams::zeros(ViTConfig::toy()).unwrap();
        let mut buf = Vec::new();
        write_weights_to(&params, &mut buf).unwrap();
        buf.truncate(buf.len() - 8);
        assert!(read_weights_from(buf.as_slice()).is_err());
    }

    #[test]
    fn mismatched_config_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.vitw");
        write_weights(&ViTParams::zeros(ViTConfig::toy()).unwrap(), &path).unwrap();
        let wide = ViTConfig { hidden_dim: 128, ..ViTConfig::toy() };
        assert!(matches!(read_weights_for(&path, &wide), Err(Error::ConfigMismatch(_))));
        assert!(read_weights_for(&path, &ViTConfig::toy()).is_ok());
    }
}
