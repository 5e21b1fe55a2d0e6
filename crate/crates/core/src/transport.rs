//! Difference-based model exchange.
//!
//! A sender encodes `new - base` as an index/value record, dropping entries
//! at or below the zero threshold; the receiver scatters the surviving
//! values onto its cached copy of the base. Entries above the threshold are
//! reconstructed exactly (values are stored as raw f64, no quantization).
//!
//! Wire layout (little-endian, bit-exact):
//!
//! ```text
//! magic   b"FS3A"          4 bytes
//! base    u32              model version the delta applies to
//! length  u32              total parameter count
//! nnz     u32              number of entries
//! indices nnz * u32        strictly increasing, all < length
//! values  nnz * f64
//! check   u64              FNV-1a over the indices and values bytes
//! ```
//!
//! Byte accounting uses fixed framing costs: a dense transfer costs
//! `16 + 8 * length` bytes and a sparse one `24 + 12 * nnz`; the codec
//! always charges the cheaper of the two (dense fallback when the delta is
//! not sparse enough to win).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamVector;

pub const MAGIC: [u8; 4] = *b"FS3A";
pub const DENSE_HEADER_BYTES: u64 = 16;
pub const SPARSE_HEADER_BYTES: u64 = 24;
pub const INDEX_BYTES: u64 = 4;
pub const VALUE_BYTES: u64 = 8;

/// FNV-1a over a byte stream.
pub fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseDelta {
    pub base_version: u32,
    pub length: u32,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub checksum: u64,
}

fn payload_checksum(indices: &[u32], values: &[f64]) -> u64 {
    let bytes = indices
        .iter()
        .flat_map(|i| i.to_le_bytes())
        .chain(values.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>());
    fnv1a(bytes)
}

impl SparseDelta {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Bytes of the sparse frame as laid out on the wire.
    pub fn sparse_cost(&self) -> u64 {
        sparse_cost(self.nnz())
    }

    /// Bytes actually charged for this transfer: the cheaper of the sparse
    /// frame and an equivalent dense frame.
    pub fn transmitted_cost(&self) -> u64 {
        self.sparse_cost().min(dense_cost(self.length as usize))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.sparse_cost() as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.base_version.to_le_bytes());
        out.extend_from_slice(&self.length.to_le_bytes());
        out.extend_from_slice(&(self.indices.len() as u32).to_le_bytes());
        for i in &self.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.checksum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Corruption("frame shorter than header".into()));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Corruption("bad magic".into()));
        }
        let base_version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let length = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let nnz = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expected = 16 + 4 * nnz + 8 * nnz + 8;
        if bytes.len() != expected {
            return Err(Error::Corruption(format!(
                "frame length {} does not match nnz {nnz}",
                bytes.len()
            )));
        }
        let mut indices = Vec::with_capacity(nnz);
        let mut off = 16;
        for _ in 0..nnz {
            indices.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
            off += 4;
        }
        let mut values = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            values.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        let checksum = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let delta = Self { base_version, length, indices, values, checksum };
        delta.validate()?;
        Ok(delta)
    }

    fn validate(&self) -> Result<()> {
        let mut prev: Option<u32> = None;
        for &i in &self.indices {
            if i >= self.length {
                return Err(Error::Corruption(format!("index {i} out of range")));
            }
            if let Some(p) = prev {
                if i <= p {
                    return Err(Error::Corruption("indices not strictly increasing".into()));
                }
            }
            prev = Some(i);
        }
        if payload_checksum(&self.indices, &self.values) != self.checksum {
            return Err(Error::Corruption("checksum mismatch".into()));
        }
        Ok(())
    }
}

pub fn dense_cost(length: usize) -> u64 {
    DENSE_HEADER_BYTES + VALUE_BYTES * length as u64
}

pub fn sparse_cost(nnz: usize) -> u64 {
    SPARSE_HEADER_BYTES + (INDEX_BYTES + VALUE_BYTES) * nnz as u64
}

/// Encodes `new - base`, dropping entries with `|delta| <= zero_threshold`.
pub fn encode(
    new: &ParamVector,
    base: &ParamVector,
    base_version: u64,
    zero_threshold: f64,
) -> Result<SparseDelta> {
    if new.len() != base.len() {
        return Err(Error::Version(format!(
            "delta between vectors of length {} and {}",
            new.len(),
            base.len()
        )));
    }
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (i, (&n, &b)) in new.values().iter().zip(base.values()).enumerate() {
        let d = n - b;
        if d.abs() > zero_threshold {
            indices.push(i as u32);
            values.push(d);
        }
    }
    let checksum = payload_checksum(&indices, &values);
    Ok(SparseDelta {
        base_version: base_version as u32,
        length: new.len() as u32,
        indices,
        values,
        checksum,
    })
}

/// Scatters a delta onto the matching base. The caller is responsible for
/// looking up the right base version; the length and checksum are verified
/// here.
pub fn decode(delta: &SparseDelta, base: &ParamVector) -> Result<ParamVector> {
    if delta.length as usize != base.len() {
        return Err(Error::Version(format!(
            "delta length {} does not match base {}",
            delta.length,
            base.len()
        )));
    }
    delta.validate()?;
    let mut out = base.clone();
    let values = out.values_mut();
    for (&i, &v) in delta.indices.iter().zip(&delta.values) {
        values[i as usize] += v;
    }
    Ok(out)
}
