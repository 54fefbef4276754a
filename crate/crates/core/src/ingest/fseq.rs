//! Raw `FSEQ` frame container.
//!
//! Little-endian layout: `b"FSEQ"`, `u32` version (1), `u32` width,
//! `u32` height, `u32` frame count, `f32` fps, then `N*H*W*3` RGB bytes in
//! frame, row, column, channel order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array4;

use super::FrameSequence;
use crate::error::{Error, Result};

pub const FSEQ_MAGIC: &[u8; 4] = b"FSEQ";
pub const FSEQ_VERSION: u32 = 1;

pub fn write_fseq_to(seq: &FrameSequence, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(FSEQ_MAGIC)?;
    w.write_u32::<LittleEndian>(FSEQ_VERSION)?;
    w.write_u32::<LittleEndian>(seq.width() as u32)?;
    w.write_u32::<LittleEndian>(seq.height() as u32)?;
    w.write_u32::<LittleEndian>(seq.len() as u32)?;
    w.write_f32::<LittleEndian>(seq.fps() as f32)?;
    match seq.data().as_slice() {
        Some(bytes) => w.write_all(bytes)?,
        None => {
            let bytes: Vec<u8> = seq.data().iter().copied().collect();
            w.write_all(&bytes)?
        }
    }
    w.flush()
}

pub fn read_fseq_from(mut r: impl Read) -> Result<FrameSequence> {
    let bad = |m: String| Error::format("FSEQ container", m);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header".into()))?;
    if &magic != FSEQ_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let mut header = || r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header".into()));
    let version = header()?;
    if version != FSEQ_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (w, h, n) = (header()? as usize, header()? as usize, header()? as usize);
    let fps = r
        .read_f32::<LittleEndian>()
        .map_err(|_| bad("truncated header".into()))? as f64;
    if n == 0 {
        return Err(Error::Empty("FSEQ container"));
    }
    let len = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)
        .map_err(|_| bad(format!("expected {len} payload bytes")))?;
    let data = Array4::from_shape_vec((n, h, w, 3), bytes).map_err(|e| bad(e.to_string()))?;
    FrameSequence::new(data, fps)
}

pub fn write_fseq(seq: &FrameSequence, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_fseq_to(seq, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read_fseq(path: &Path) -> Result<FrameSequence> {
    let file = File::open(path).map_err(|e| Error::open(path, e))?;
    read_fseq_from(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let data = Array4::from_shape_fn((2, 1, 2, 3), |(t, _, x, c)| (t * 6 + x * 3 + c) as u8);
        let seq = FrameSequence::new(data, 30.0).unwrap();
        let mut buf = Vec::new();
        write_fseq_to(&seq, &mut buf).unwrap();
        let mut expected = b"FSEQ".to_vec();
        for v in [1u32, 2, 1, 2] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.extend_from_slice(&30.0f32.to_le_bytes());
        expected.extend(0u8..12);
        assert_eq!(buf, expected);
        assert_eq!(read_fseq_from(buf.as_slice()).unwrap(), seq);
    }

    #[test]
    fn rejects_truncated_payload() {
        let seq = FrameSequence::new(Array4::zeros((2, 2, 2, 3)), 25.0).unwrap();
        let mut buf = Vec::new();
        write_fseq_to(&seq, &mut buf).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_fseq_from(buf.as_slice()).is_err());
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(read_fseq_from(&b"XSEQ\x01\0\0\0"[..]).is_err());
    }
}
