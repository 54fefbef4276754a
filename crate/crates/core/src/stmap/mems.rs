//! `MEMS` map file.
//!
//! Little-endian: `b"MEMS"`, `u32` version (1), `u32` rows (60), `u32`
//! cols (196), `u32` channels (3), `u8` label (0 real, 1 fake, 255
//! unlabeled), `u32` window start, `u32` source id length followed by the
//! UTF-8 bytes, then `rows * cols * channels` `f32` values in row, column,
//! channel order.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array3;

use super::{Label, MemstMap, CHANNELS, MAP_COLS, MAP_ROWS};
use crate::error::{Error, Result};

pub const MEMS_MAGIC: &[u8; 4] = b"MEMS";
pub const MEMS_VERSION: u32 = 1;

pub fn write_map_to(map: &MemstMap, mut w: impl Write) -> std::io::Result<()> {
    let (rows, cols, chans) = map.values.dim();
    w.write_all(MEMS_MAGIC)?;
    w.write_u32::<LittleEndian>(MEMS_VERSION)?;
    w.write_u32::<LittleEndian>(rows as u32)?;
    w.write_u32::<LittleEndian>(cols as u32)?;
    w.write_u32::<LittleEndian>(chans as u32)?;
    w.write_u8(map.label.code())?;
    w.write_u32::<LittleEndian>(map.window_start as u32)?;
    let id = map.source_video.as_bytes();
    w.write_u32::<LittleEndian>(id.len() as u32)?;
    w.write_all(id)?;
    for &v in map.values.iter() {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.flush()
}

pub fn read_map_from(mut r: impl Read) -> Result<MemstMap> {
    let bad = |m: String| Error::format("MEMS map", m);
    let trunc = |_| bad("truncated file".into());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != MEMS_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
    if version != MEMS_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let rows = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let cols = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let chans = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    if (rows, cols, chans) != (MAP_ROWS, MAP_COLS, CHANNELS) {
        return Err(bad(format!("unexpected shape {rows}x{cols}x{chans}")));
    }
    let code = r.read_u8().map_err(trunc)?;
    let label = Label::from_code(code).ok_or_else(|| bad(format!("unknown label code {code}")))?;
    let window_start = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let id_len = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id).map_err(trunc)?;
    let source = String::from_utf8(id).map_err(|e| bad(e.to_string()))?;
    let mut values = vec![0f32; rows * cols * chans];
    r.read_f32_into::<LittleEndian>(&mut values).map_err(trunc)?;
    let values = Array3::from_shape_vec((rows, cols, chans), values).map_err(|e| bad(e.to_string()))?;
    MemstMap::new(values, source, window_start, label)
}

pub fn write_map(map: &MemstMap, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_map_to(map, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read_map(path: &Path) -> Result<MemstMap> {
    let file = File::open(path).map_err(|e| Error::open(path, e))?;
    read_map_from(BufReader::new(file))
}

/// File name used for a map inside an output directory.
pub fn map_file_name(map: &MemstMap) -> String {
    format!("map_{:06}.mems", map.window_start)
}

/// Reads every `*.mems` file of a directory in file-name order.
pub fn read_map_dir(dir: &Path) -> Result<Vec<MemstMap>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::open(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "mems"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_map(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_map() -> MemstMap {
        let values = Array3::from_shape_fn((MAP_ROWS, MAP_COLS, CHANNELS), |(r, c, k)| {
            ((r * 31 + c * 7 + k) % 101) as f32 / 100.0
        });
        MemstMap::new(values, "clip-07", 45, Label::Fake).unwrap()
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_map_to(&sample_map(), &mut buf).unwrap();
        assert_eq!(&buf[..4], b"MEMS");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 60);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 196);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 3);
        assert_eq!(buf[20], 1);
        assert_eq!(u32::from_le_bytes(buf[21..25].try_into().unwrap()), 45);
        assert_eq!(u32::from_le_bytes(buf[25..29].try_into().unwrap()), 7);
        assert_eq!(&buf[29..36], b"clip-07");
        assert_eq!(buf.len(), 36 + 4 * MAP_ROWS * MAP_COLS * CHANNELS);
        let first = f32::from_le_bytes(buf[36..40].try_into().unwrap());
        assert_eq!(first, 0.0);
        let second = f32::from_le_bytes(buf[40..44].try_into().unwrap());
        assert_eq!(second, 0.01);
    }

    #[test]
    fn roundtrip() {
        let map = sample_map();
        let mut buf = Vec::new();
        write_map_to(&map, &mut buf).unwrap();
        assert_eq!(read_map_from(buf.as_slice()).unwrap(), map);
    }

    #[test]
    fn rejects_wrong_shape_and_label() {
        let mut buf = Vec::new();
        write_map_to(&sample_map(), &mut buf).unwrap();
        let mut bad_shape = buf.clone();
        bad_shape[12] = 195;
        assert!(read_map_from(bad_shape.as_slice()).is_err());
        let mut bad_label = buf;
        bad_label[20] = 7;
        assert!(read_map_from(bad_label.as_slice()).is_err());
    }
}
