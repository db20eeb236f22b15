//! Checkpoint container: a flat sequence of named parameter arrays.
//!
//! Layout: 8-byte magic "INCPDET1", then per entry a little-endian u32 name
//! length, the UTF-8 name, a u32 rank, `rank` u32 extents, and the raw
//! little-endian f32 values. Entries are sorted by name so identical
//! parameter sets serialize to identical bytes.

use crate::data::write_file_atomic;
use crate::error::{invalid, Error, Result};
use crate::layers::ParamSet;
use crate::tensor::Tensor;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"INCPDET1";

pub fn encode(entries: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut sorted: Vec<&(String, Tensor<f32>)> = entries.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for (name, tensor) in sorted {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &extent in tensor.shape() {
            out.extend_from_slice(&(extent as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("unknown checkpoint magic".into()));
    }
    struct Cursor<'a>(&'a [u8]);
    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            if n > self.0.len() {
                return Err(Error::Format("truncated checkpoint".into()));
            }
            let (head, tail) = self.0.split_at(n);
            self.0 = tail;
            Ok(head)
        }
        fn u32(&mut self) -> Result<usize> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
        }
    }
    let mut cur = Cursor(&bytes[MAGIC.len()..]);
    let mut entries = Vec::new();
    while !cur.0.is_empty() {
        let name_len = cur.u32()?;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("checkpoint name is not UTF-8".into()))?;
        let rank = cur.u32()?;
        if rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()?);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(4 * numel)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok(entries)
}

pub fn save(params: &ParamSet<f32>, path: &Path) -> Result<()> {
    let entries: Vec<(String, Tensor<f32>)> = params
        .iter()
        .map(|(name, tensor)| (name.to_string(), tensor.clone()))
        .collect();
    write_file_atomic(path, &encode(&entries))
}

/// Load a checkpoint into an existing parameter set. Every stored entry must
/// name a known parameter of matching shape, and none may be missing.
pub fn load_into(params: &mut ParamSet<f32>, path: &Path) -> Result<()> {
    let entries = decode(&std::fs::read(path)?)?;
    if entries.len() != params.len() {
        return Err(invalid!(
            "checkpoint holds {} parameters, model has {}",
            entries.len(),
            params.len()
        ));
    }
    for (name, tensor) in entries {
        params.load(&name, tensor)?;
    }
    Ok(())
}
