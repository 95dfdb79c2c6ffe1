//! Binary parameter table.
//!
//! Layout (little-endian): `b"TSPM"`, `u32` version, `u32` entry count, then
//! per entry `u32` name length, UTF-8 name, `u8` dtype (0 = f64), `u8` rank,
//! `u64` dims, raw `f64` values; finally a `u32` CRC32 of all preceding bytes.

use std::path::Path;

use tspm_core::nn::ParamStore;
use tspm_core::Tensor;

use crate::CliError;

pub const MAGIC: &[u8; 4] = b"TSPM";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },
    #[error("truncated checkpoint")]
    Truncated,
    #[error("unsupported dtype code {0}")]
    Dtype(u8),
    #[error("invalid entry: {0}")]
    Entry(String),
}

pub fn encode(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(0);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Parses and verifies a checkpoint into named constant tensors, in file order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let mut r = Reader {
        bytes: body,
        pos: 4,
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed });
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Entry("name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        if dtype != 0 {
            return Err(CheckpointError::Dtype(dtype));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(CheckpointError::Truncated)?;
        let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::constant(&shape, values)
            .map_err(|e| CheckpointError::Entry(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Entry(
            "trailing bytes after last entry".into(),
        ));
    }
    Ok(out)
}

pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, encode(params))
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Loads a checkpoint as a parameter store of constant tensors.
pub fn load_checkpoint(path: &Path) -> Result<ParamStore, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
    let mut store = ParamStore::new(0);
    for (name, t) in decode(&bytes)? {
        store.insert(&name, t)?;
    }
    Ok(store)
}

/// Copies every checkpoint entry into `target`; names and shapes must match exactly.
pub fn apply_checkpoint(target: &ParamStore, loaded: &ParamStore) -> Result<(), CliError> {
    if target.len() != loaded.len() {
        return Err(CheckpointError::Entry(format!(
            "checkpoint has {} parameters, model has {}",
            loaded.len(),
            target.len()
        ))
        .into());
    }
    for (name, t) in loaded.iter() {
        target.assign(name, t.shape(), &t.to_vec())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tspm_core::nn::InitScheme;

    fn store() -> ParamStore {
        let mut s = ParamStore::new(5);
        s.create("a.weight", &[2, 3], InitScheme::UniformFanIn)
            .unwrap();
        s.create("b", &[1], InitScheme::Ones).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = encode(&store());
        let entries = decode(&bytes).unwrap();
        let mut again = ParamStore::new(0);
        for (n, t) in entries {
            again.insert(&n, t).unwrap();
        }
        assert_eq!(encode(&again), bytes);
    }

    #[test]
    fn integrity_checks() {
        let mut bytes = encode(&store());
        bytes[20] ^= 1;
        assert!(matches!(decode(&bytes), Err(CheckpointError::Crc { .. })));
        let mut bytes = encode(&store());
        bytes[4..8].copy_from_slice(&999u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(CheckpointError::Version(999))));
        assert!(matches!(
            decode(b"NOPE0000000000000000"),
            Err(CheckpointError::BadMagic)
        ));
    }
}
