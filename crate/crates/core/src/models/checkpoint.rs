//! ECGKIT1 checkpoint container.
//!
//! Layout, all integers little-endian:
//! `b"ECGKIT1\0"`, u32 descriptor length, descriptor JSON, u32 record
//! count, then per record: u32 name length, name, u32 rank, u32 dims, and
//! the row-major f32 values. Records cover parameters and buffers.

use std::io::Write;
use std::path::Path;

use super::descriptor::ModelDescriptor;
use super::{build_with, Model};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ECGKIT1\0";
const MAX_RANK: usize = 8;

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let desc = model.descriptor.to_json()?;
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(desc.as_bytes());
    let entries: Vec<(&str, &Tensor<f32>)> = model.params.entries().collect();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Bounds-checked reader that reports the offset of a short read.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                self.pos,
                format!("truncated checkpoint: {what} needs {n} bytes, {} left", self.bytes.len() - self.pos),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

fn header<'a>(bytes: &'a [u8]) -> Result<(ModelDescriptor, Cursor<'a>)> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, "not an ECGKIT1 checkpoint (magic mismatch)"));
    }
    let len = c.u32("descriptor length")?;
    let at = c.pos;
    let text = std::str::from_utf8(c.take(len, "descriptor")?)
        .map_err(|_| Error::format(at, "descriptor is not UTF-8"))?;
    let desc = ModelDescriptor::from_json(text).map_err(|e| Error::format(at, format!("bad descriptor: {e}")))?;
    Ok((desc, c))
}

/// Restores a model; every parameter and buffer of the descriptor's
/// architecture must appear exactly once with its declared shape.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let (desc, mut c) = header(bytes)?;
    let mut model: Model = build_with(&desc, 0).map_err(|e| Error::format(8, format!("descriptor rejected: {e}")))?;
    let expected = model.params.entries().count();
    let count_at = c.pos;
    let count = c.u32("record count")?;
    if count != expected {
        return Err(Error::format(
            count_at,
            format!("{count} records for an architecture with {expected} tensors"),
        ));
    }
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..count {
        let at = c.pos;
        let n = c.u32("name length")?;
        let name = std::str::from_utf8(c.take(n, "name")?)
            .map_err(|_| Error::format(at, "record name is not UTF-8"))?
            .to_string();
        let rank_at = c.pos;
        let rank = c.u32("rank")?;
        if rank > MAX_RANK {
            return Err(Error::format(rank_at, format!("rank {rank} of {name} exceeds {MAX_RANK}")));
        }
        let dims = (0..rank).map(|_| c.u32("dimension")).collect::<Result<Vec<usize>>>()?;
        let slot = if model.params.param(&name).is_some() {
            model.params.param_mut(&name)
        } else {
            model.params.buffer_mut(&name)
        };
        let Some(slot) = slot else {
            return Err(Error::format(at, format!("unknown tensor {name:?}")));
        };
        if slot.shape() != dims.as_slice() {
            return Err(Error::format(
                at,
                format!("{name}: shape {dims:?} does not match descriptor {:?}", slot.shape()),
            ));
        }
        if !seen.insert(name.clone()) {
            return Err(Error::format(at, format!("duplicate tensor {name:?}")));
        }
        let raw = c.take(slot.len() * 4, "tensor data")?;
        for (v, b) in slot.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::format(c.pos, format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Reads the descriptor block only; tensor records are not touched.
pub fn read_descriptor(path: &Path) -> Result<ModelDescriptor> {
    use std::io::Read;
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 12];
    f.read_exact(&mut head)
        .map_err(|_| Error::format(0, "truncated checkpoint header"))?;
    let len = u32::from_le_bytes([head[8], head[9], head[10], head[11]]) as usize;
    let mut bytes = head.to_vec();
    f.take(len as u64).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(header(&bytes)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build, param_count, Architecture};

    #[test]
    fn round_trip_is_bitwise() {
        for arch in Architecture::ALL {
            let model = build(&ModelDescriptor::new(arch), 9).unwrap();
            let restored = from_bytes(&to_bytes(&model).unwrap()).unwrap();
            let probe = Tensor::from_fn(&[3, 187], |i| (i as f32 * 0.37).sin());
            let (a, b) = (model.predict(&probe, 8).unwrap(), restored.predict(&probe, 8).unwrap());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = to_bytes(&build(&ModelDescriptor::new(Architecture::Cnn), 1).unwrap()).unwrap();
        for cut in [4, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            match from_bytes(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn shape_mismatch_is_format_error() {
        let model = build(&ModelDescriptor::new(Architecture::Cnn), 1).unwrap();
        let mut other = ModelDescriptor::new(Architecture::Cnn);
        other.channels = vec![16, 8, 4];
        let bytes = to_bytes(&model).unwrap();
        let old = model.descriptor.to_json().unwrap();
        let new = other.to_json().unwrap();
        let mut patched = MAGIC.to_vec();
        patched.extend_from_slice(&(new.len() as u32).to_le_bytes());
        patched.extend_from_slice(new.as_bytes());
        patched.extend_from_slice(&bytes[12 + old.len()..]);
        assert!(matches!(from_bytes(&patched), Err(Error::Format { .. })));
    }

    #[test]
    fn descriptor_only_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = build(&ModelDescriptor::new(Architecture::Resnet1d), 2).unwrap();
        save(&model, &path).unwrap();
        let d = read_descriptor(&path).unwrap();
        assert_eq!(d, model.descriptor);
        assert_eq!(param_count(&d).unwrap(), model.params.param_count());
    }
}
