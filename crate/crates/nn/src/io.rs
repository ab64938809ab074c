//! Weight files.
//!
//! ```text
//! magic    b"QDNN"
//! version  u32 LE
//! seed     u64 LE
//! spec     u64 LE byte length, then the NetworkSpec as JSON
//! tensors  u32 LE count, then per tensor:
//!          u32 LE layer index, u32 LE ndim, u64 LE dims, f64 LE data
//! checksum SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{Network, Tensor, Weights};
use crate::spec::NetworkSpec;

const MAGIC: &[u8; 4] = b"QDNN";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn encode_weights(net: &Network) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    buf.extend_from_slice(&net.weights().seed.to_le_bytes());
    let spec = serde_json::to_vec(net.spec())?;
    buf.extend_from_slice(&(spec.len() as u64).to_le_bytes());
    buf.extend_from_slice(&spec);
    let tensors: Vec<(usize, &Tensor)> = net
        .weights()
        .layers
        .iter()
        .enumerate()
        .flat_map(|(l, ts)| ts.iter().map(move |t| (l, t)))
        .collect();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (l, t) in tensors {
        buf.extend_from_slice(&(l as u32).to_le_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of weight data".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 4 + 32 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a weight file".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::Integrity("checksum does not match contents".into()));
    }
    let mut c = Cursor { data: body, pos: 4 };
    let version = c.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!(
            "weight file version {version}, expected {WEIGHTS_VERSION}"
        )));
    }
    let seed = c.u64()?;
    let spec_len = c.u64()? as usize;
    let spec: NetworkSpec = serde_json::from_slice(c.take(spec_len)?)?;
    let count = c.u32()? as usize;
    let mut layers: Vec<Vec<Tensor>> = vec![Vec::new(); spec.layers.len()];
    for _ in 0..count {
        let l = c.u32()? as usize;
        let ndim = c.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        layers
            .get_mut(l)
            .ok_or_else(|| Error::Format(format!("tensor for missing layer {l}")))?
            .push(Tensor { shape, data });
    }
    if c.pos != body.len() {
        return Err(Error::Format("trailing bytes after tensors".into()));
    }
    Network::from_parts(spec, Weights { seed, layers })
}

pub fn save_weights(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(net)?)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Network> {
    decode_weights(&fs::read(path)?)
}

/// Load weights and insist they were trained for `spec`.
pub fn load_weights_for(path: &Path, spec: &NetworkSpec) -> Result<Network> {
    let net = load_weights(path)?;
    if net.spec() != spec {
        // reuse the per-layer shape check for a descriptive error
        Network::from_parts(spec.clone(), net.weights().clone())?;
        return Err(Error::ShapeMismatch {
            layer: "network".into(),
            expected: format!("{spec:?}"),
            found: format!("{:?}", net.spec()),
        });
    }
    Ok(net)
}
