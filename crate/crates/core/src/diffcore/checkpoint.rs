//! Binary parameter checkpoints.
//!
//! Layout: the 4-byte magic `MVF1`, then for each block the name followed by
//! `\n`, the line `ndims d0 d1 ...\n`, and the values as little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MVF1";

pub fn encode_checkpoint(params: &ParamStore) -> Vec<u8> {
    let mut buf = Vec::from(&MAGIC[..]);
    for (name, t) in params.iter() {
        buf.extend_from_slice(name.as_bytes());
        buf.push(b'\n');
        let mut dims = t.shape().len().to_string();
        for d in t.shape() {
            dims.push(' ');
            dims.push_str(&d.to_string());
        }
        buf.extend_from_slice(dims.as_bytes());
        buf.push(b'\n');
        for v in t.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("missing MVF1 header".into()));
    }
    let mut pos = 4;
    let mut store = ParamStore::new();
    let line = |pos: &mut usize| -> Result<String> {
        let end = bytes[*pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint(format!("unterminated line at byte {pos}")))?;
        let s = std::str::from_utf8(&bytes[*pos..*pos + end])
            .map_err(|_| Error::Checkpoint(format!("invalid utf-8 at byte {pos}")))?
            .to_string();
        *pos += end + 1;
        Ok(s)
    };
    while pos < bytes.len() {
        let name = line(&mut pos)?;
        let dims_line = line(&mut pos)?;
        let mut fields = dims_line.split(' ').map(|f| {
            f.parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad dimension {f:?} in block {name}")))
        });
        let ndims = fields
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("empty shape line for {name}")))??;
        let shape: Vec<usize> = fields.collect::<Result<_>>()?;
        if shape.len() != ndims {
            return Err(Error::Checkpoint(format!("block {name}: {ndims} dims declared, {} given", shape.len())));
        }
        let n: usize = shape.iter().product();
        let end = pos + 8 * n;
        if end > bytes.len() {
            return Err(Error::Checkpoint(format!("block {name}: truncated payload")));
        }
        let values = bytes[pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        pos = end;
        store.insert(name, Tensor::new(shape, values)?)?;
    }
    Ok(store)
}

/// Write via a temporary sibling and rename, so the file is whole or absent.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Contract(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, params: &ParamStore) -> Result<()> {
    atomic_write(path, &encode_checkpoint(params))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_exact() {
        let mut p = ParamStore::new();
        p.insert("a.w", Tensor::matrix(1, 2, vec![1.0, -0.5]).unwrap()).unwrap();
        let bytes = encode_checkpoint(&p);
        let mut expected = b"MVF1a.w\n2 1 2\n".to_vec();
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&(-0.5f64).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode_checkpoint(b"MVF0").is_err());
        let mut p = ParamStore::new();
        p.insert("x", Tensor::row(&[1.0, 2.0])).unwrap();
        let bytes = encode_checkpoint(&p);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(blocks in proptest::collection::vec(
            (1usize..4, 1usize..5, proptest::collection::vec(-1e6f64..1e6, 20)), 1..5)) {
            let mut p = ParamStore::new();
            for (i, (r, c, vals)) in blocks.into_iter().enumerate() {
                p.insert(format!("blk{i}"), Tensor::matrix(r, c, vals[..r * c].to_vec()).unwrap()).unwrap();
            }
            let back = decode_checkpoint(&encode_checkpoint(&p)).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
