//! Little-endian tensor container: magic `ECHOLAB\0`, `u32` version, `u32`
//! entry count, then per entry a `u32`-length UTF-8 name, `u32` rank, `u64`
//! dimensions and `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ECHOLAB\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(w: &mut impl Write, entries: &[(String, Tensor<f64>)]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Vec<(String, Tensor<f64>)>> {
    if &take::<8>(r)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(r)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes(take(r)?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32::from_le_bytes(take(r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|e| Error::Format(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = u32::from_le_bytes(take(r)?) as usize;
        let shape = (0..rank).map(|_| Ok(u64::from_le_bytes(take(r)?) as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| Ok(f64::from_le_bytes(take(r)?))).collect::<Result<Vec<_>>>()?;
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

/// Writes `store` followed by any `extra` entries.
pub fn save_checkpoint(path: &Path, store: &ParamStore<f64>, extra: &[(String, Tensor<f64>)]) -> Result<()> {
    let mut entries: Vec<_> = store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    entries.extend(extra.iter().cloned());
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, &entries).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f64>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let entries = vec![
            ("a.w".to_string(), Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-300, f64::MAX]).unwrap()),
            ("step".to_string(), Tensor::scalar(7.0)),
        ];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &entries).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(read_checkpoint(&mut buf.as_slice()).unwrap(), entries);
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(read_checkpoint(&mut &b"NOTACKPT\x01\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("x".into(), Tensor::zeros(&[4]))]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(&mut buf.as_slice()).is_err());
    }
}
