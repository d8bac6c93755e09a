//! Binary checkpoint of a network configuration and its parameters.
//!
//! Layout, all integers u32 little-endian: magic `MAGP`, version (1),
//! config length and config JSON, tensor count, then per tensor the name
//! length and UTF-8 name, rank, each dimension, and the f32 LE values in
//! row-major order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{NetworkConfig, NetworkParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MAGP";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn to_bytes(config: &NetworkConfig, params: &NetworkParams<f32>) -> Result<Vec<u8>> {
    params.check_shapes(config)?;
    let json = serde_json::to_vec(config).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(4 * params.len() + json.len() + 256);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    put_u32(&mut out, json.len());
    out.extend_from_slice(&json);
    let tensors = params.tensors();
    put_u32(&mut out, tensors.len());
    for (name, t) in tensors {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.ndim());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for &v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::Truncated {
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(NetworkConfig, NetworkParams<f32>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Header("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Header(format!("unsupported checkpoint version {version}")));
    }
    let json_len = r.u32()?;
    let config: NetworkConfig =
        serde_json::from_slice(r.take(json_len)?).map_err(|e| Error::Header(format!("checkpoint config: {e}")))?;
    config.validate()?;
    let mut params = NetworkParams::<f32>::zeros(&config);
    let count = r.u32()?;
    let mut slots = params.tensors_mut();
    if count != slots.len() {
        return Err(Error::Header(format!("{count} tensors, expected {}", slots.len())));
    }
    for (want, slot) in slots.iter_mut() {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|e| Error::Header(e.to_string()))?;
        if name != *want {
            return Err(Error::Header(format!("tensor {name:?} where {want:?} was expected")));
        }
        let ndim = r.u32()?;
        let dims = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if dims != slot.shape() {
            return Err(Error::Shape(format!("tensor {name}: shape {dims:?}, expected {:?}", slot.shape())));
        }
        let data = r.take(4 * slot.len())?;
        for (dst, b) in slot.iter_mut().zip(data.chunks_exact(4)) {
            *dst = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    drop(slots);
    if r.pos != bytes.len() {
        return Err(Error::Header(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("checkpoint holds non-finite values".into()));
    }
    Ok((config, params))
}

pub fn save(path: impl AsRef<Path>, config: &NetworkConfig, params: &NetworkParams<f32>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(config, params)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(NetworkConfig, NetworkParams<f32>)> {
    let path = path.as_ref();
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_params;

    #[test]
    fn round_trip_is_bit_exact() {
        for cfg in [NetworkConfig::ws(6, 5, vec![1, 3]), NetworkConfig::ind(6, 4, 5, vec![2])] {
            let p = init_params::<f32>(&cfg, 9).unwrap();
            let bytes = to_bytes(&cfg, &p).unwrap();
            let (c2, p2) = from_bytes(&bytes).unwrap();
            assert_eq!(c2, cfg);
            assert_eq!(p2, p);
        }
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let cfg = NetworkConfig::ws(4, 3, vec![1]);
        let bytes = to_bytes(&cfg, &init_params::<f32>(&cfg, 1).unwrap()).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Header(_))));
        let mut long = bytes;
        long.push(0);
        assert!(from_bytes(&long).is_err());
    }
}
