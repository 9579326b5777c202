//! Single-file parameter container.
//!
//! Layout: `b"JSPC"`, format version (u32 LE), header length (u64 LE), a JSON
//! header, then the raw little-endian tensor data. The header carries a
//! manifest of `(name, shape, dtype, offset, nbytes)` per tensor, with offsets
//! relative to the start of the data section, plus free-form metadata.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"JSPC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub tensors: Vec<ManifestEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Raw little-endian bytes of every tensor, in store order.
pub fn encode_data(params: &ParamStore, dtype: DType) -> (Vec<ManifestEntry>, Vec<u8>) {
    let mut manifest = Vec::with_capacity(params.len());
    let mut blob = Vec::with_capacity(params.num_elements() * dtype.width());
    for (_, name, t) in params.iter() {
        let offset = blob.len() as u64;
        for &x in t.data() {
            match dtype {
                DType::F32 => blob.extend_from_slice(&(x as f32).to_le_bytes()),
                DType::F64 => blob.extend_from_slice(&x.to_le_bytes()),
            }
        }
        manifest.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype,
            offset,
            nbytes: blob.len() as u64 - offset,
        });
    }
    (manifest, blob)
}

pub fn write<W: Write>(mut w: W, params: &ParamStore, dtype: DType, metadata: serde_json::Value) -> Result<()> {
    let (tensors, blob) = encode_data(params, dtype);
    let header = Header { format_version: FORMAT_VERSION, tensors, metadata };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&blob)?;
    w.flush()?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<(ParamStore, Header)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a parameter container (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let hlen = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; hlen];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.format_version != version {
        return Err(Error::Format("header version disagrees with preamble".into()));
    }
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;

    let mut store = ParamStore::new();
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let (start, len) = (e.offset as usize, e.nbytes as usize);
        if len != n * e.dtype.width() || start + len > blob.len() {
            return Err(Error::Format(format!("tensor {} has an inconsistent manifest entry", e.name)));
        }
        let bytes = &blob[start..start + len];
        let data: Vec<f64> = match e.dtype {
            DType::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            DType::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        };
        store.add(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
    }
    Ok((store, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut ps = ParamStore::new();
        ps.add("a", Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, 0.1]).unwrap()).unwrap();
        ps.add("b.bias", Tensor::vector(vec![7.0])).unwrap();
        ps
    }

    #[test]
    fn f64_roundtrip_is_exact() {
        let ps = sample();
        let mut buf = Vec::new();
        write(&mut buf, &ps, DType::F64, serde_json::json!({"k": 1})).unwrap();
        let (back, header) = read(buf.as_slice()).unwrap();
        assert!(ps.same_values(&back));
        assert_eq!(header.metadata["k"], 1);
        assert_eq!(header.tensors[1].offset, 32);
    }

    #[test]
    fn f32_storage_rounds() {
        let ps = sample();
        let mut buf = Vec::new();
        write(&mut buf, &ps, DType::F32, serde_json::Value::Null).unwrap();
        let (back, _) = read(buf.as_slice()).unwrap();
        let mut rounded = ps.clone();
        rounded.round_to_f32();
        assert!(rounded.same_values(&back));
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read(&b"XXXX0000"[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        write(&mut buf, &sample(), DType::F32, serde_json::Value::Null).unwrap();
        buf[4] = 9;
        assert!(matches!(read(buf.as_slice()), Err(Error::Format(_))));
    }
}
