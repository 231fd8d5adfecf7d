//! Flat binary checkpoints: "AVCK", version, then per parameter its name,
//! rank, dims and f64 payload, all little-endian.

use std::fs;
use std::path::Path;

use crate::arch::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"AVCK";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, p) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let dims = p.value.shape().dims();
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated checkpoint: missing {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank != 4 {
            return Err(Error::Format(format!("{name}: rank {rank}, expected 4")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("dims")? as usize;
        }
        let shape = Shape::from(dims);
        let payload = r.take(shape.numel().checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?, "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ParamStore) -> Result<()> {
    fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

/// Replaces every entry of `params` with the checkpoint's values. Names
/// and shapes must match exactly.
pub fn load_checkpoint_into(bytes: &[u8], params: &mut ParamStore) -> Result<()> {
    let entries = decode_checkpoint(bytes)?;
    if entries.len() != params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, model has {}",
            entries.len(),
            params.len()
        )));
    }
    for (name, t) in entries {
        let slot = params
            .tensor_mut(&name)
            .map_err(|_| Error::Format(format!("checkpoint parameter {name} is not in the model")))?;
        if slot.shape() != t.shape() {
            return Err(Error::Shape(format!(
                "parameter {name}: checkpoint shape {} but model expects {}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>, params: &mut ParamStore) -> Result<()> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    load_checkpoint_into(&bytes, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::params::ParamKind;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a.weight", Tensor::from_fn((2, 1, 3, 3), |n, _, h, w| (n + h * 3 + w) as f64 * 0.5 - 1.0), ParamKind::Trainable)
            .unwrap();
        s.insert("a.running_var", Tensor::ones((1, 2, 1, 1)), ParamKind::Buffer).unwrap();
        s
    }

    #[test]
    fn round_trip() {
        let a = store();
        let bytes = encode_checkpoint(&a);
        assert_eq!(&bytes[..4], b"AVCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let mut b = store();
        for (_, p) in b.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 9.0);
        }
        load_checkpoint_into(&bytes, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_input() {
        let bytes = encode_checkpoint(&store());
        let mut b = store();
        assert!(matches!(load_checkpoint_into(b"NOPE\x01\0\0\0", &mut b), Err(Error::Format(_))));
        let err = load_checkpoint_into(&bytes[..bytes.len() - 3], &mut b).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let mut other = ParamStore::new();
        other.insert("a.weight", Tensor::zeros((2, 1, 1, 1)), ParamKind::Trainable).unwrap();
        other.insert("a.running_var", Tensor::ones((1, 2, 1, 1)), ParamKind::Buffer).unwrap();
        let err = load_checkpoint_into(&bytes, &mut other).unwrap_err();
        assert!(matches!(err, Error::Shape(_)) && err.to_string().contains("a.weight"), "{err}");
    }
}
