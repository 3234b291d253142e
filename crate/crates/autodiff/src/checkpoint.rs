//! `MPW1` weight files: magic, `u32` version, `u64` entry count, then per
//! entry `u64` name length, UTF-8 name, `u64` rank, `u64` dims, `f64` values.
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MPW1";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_NAME: u64 = 1 << 16;
const MAX_RANK: u64 = 16;

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamStore) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params.params() {
        w.write_all(&(p.name.len() as u64).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.shape.len() as u64).to_le_bytes())?;
        for &d in &p.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &p.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(AutodiffError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(truncated)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(AutodiffError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u64(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u64(&mut r)?;
        if name_len > MAX_NAME {
            return Err(AutodiffError::Checkpoint(format!("name length {name_len}")));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| AutodiffError::Checkpoint("name is not UTF-8".into()))?;
        let rank = read_u64(&mut r)?;
        if rank > MAX_RANK {
            return Err(AutodiffError::Checkpoint(format!("rank {rank} for `{name}`")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(read_u64(&mut r)?)
                .map_err(|_| AutodiffError::Checkpoint("dimension overflow".into()))?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| AutodiffError::Checkpoint("dimension overflow".into()))?;
            shape.push(d);
        }
        let mut data = Vec::new();
        let mut b8 = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut b8).map_err(truncated)?;
            data.push(f64::from_le_bytes(b8));
        }
        store
            .insert(name, shape, data)
            .map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(AutodiffError::Checkpoint("trailing bytes".into()));
    }
    Ok(store)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> AutodiffError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        AutodiffError::Checkpoint("truncated file".into())
    } else {
        AutodiffError::Io(e)
    }
}
