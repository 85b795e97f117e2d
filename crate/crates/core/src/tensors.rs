//! Named f64 tensors in a flat binary file with a JSON header.
//!
//! The on-disk layout is the safetensors format restricted to `F64`:
//! an 8-byte little-endian header length, a JSON header with names, shapes
//! and byte offsets, then the little-endian payload. Free-form string
//! metadata rides along in the header's `__metadata__` entry, packed into a
//! single sorted JSON object so that the header bytes do not depend on hash
//! order.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::{tensor::TensorView, Dtype, SafeTensors};

use crate::error::{Error, Result};

const METADATA_KEY: &str = "crystalflow";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!(
                "shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl TensorFile {
    pub fn insert(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<()> {
        self.tensors.insert(name.into(), Tensor::new(shape, data)?);
        Ok(())
    }

    /// Tensor `name`, which must have exactly `shape`.
    pub fn get(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
        if t.shape != shape {
            return Err(Error::Format(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(&t.data)
    }

    pub fn n_values(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let bytes: Vec<(&String, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(k, t)| (k, t.data.iter().flat_map(|v| v.to_le_bytes()).collect()))
            .collect();
        let views = bytes
            .iter()
            .map(|(k, b)| {
                let shape = self.tensors[*k].shape.clone();
                TensorView::new(Dtype::F64, shape, b).map(|v| (k.as_str(), v))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(e.to_string()))?;
        let meta = (!self.metadata.is_empty())
            .then(|| serde_json::to_string(&self.metadata))
            .transpose()?
            .map(|packed| HashMap::from([(METADATA_KEY.to_string(), packed)]));
        safetensors::serialize(views, meta).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |e: safetensors::SafeTensorError| Error::Format(e.to_string());
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(fmt)?;
        let st = SafeTensors::deserialize(bytes).map_err(fmt)?;
        let mut out = TensorFile::default();
        if let Some(m) = header.metadata() {
            out.metadata = match m.get(METADATA_KEY) {
                Some(packed) => serde_json::from_str(packed)?,
                None => m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            };
        }
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F64 {
                return Err(Error::Format(format!(
                    "tensor {name} is {:?}, expected F64",
                    view.dtype()
                )));
            }
            let data = view
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            out.tensors.insert(
                name,
                Tensor {
                    shape: view.shape().to_vec(),
                    data,
                },
            );
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_metadata() {
        let mut f = TensorFile::default();
        f.insert(
            "w",
            vec![2, 3],
            vec![1.0, -2.0, 3.5, f64::MIN_POSITIVE, 0.0, -0.0],
        )
        .unwrap();
        f.insert("b", vec![1], vec![0.25]).unwrap();
        f.metadata.insert("kind".into(), "test".into());
        let back = TensorFile::from_bytes(&f.to_bytes().unwrap()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.get("w", &[2, 3]).unwrap()[3], f64::MIN_POSITIVE);
        assert!(back.get("w", &[3, 2]).is_err());
        assert!(back.get("nope", &[1]).is_err());
    }

    #[test]
    fn bytes_do_not_depend_on_hash_order() {
        let build = || {
            let mut f = TensorFile::default();
            f.insert("x", vec![1], vec![1.0]).unwrap();
            for i in 0..20 {
                f.metadata.insert(format!("key{i}"), i.to_string());
            }
            f.to_bytes().unwrap()
        };
        let first = build();
        for _ in 0..20 {
            assert_eq!(build(), first);
        }
    }

    #[test]
    fn header_is_json_with_offsets() {
        let mut f = TensorFile::default();
        f.insert("x", vec![2], vec![1.0, 2.0]).unwrap();
        let bytes = f.to_bytes().unwrap();
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n]).unwrap();
        assert_eq!(header["x"]["dtype"], "F64");
        assert_eq!(header["x"]["data_offsets"], serde_json::json!([0, 16]));
        assert_eq!(&bytes[8 + n..8 + n + 8], &1.0f64.to_le_bytes());
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let mut f = TensorFile::default();
        f.insert("x", vec![2], vec![1.0, 2.0]).unwrap();
        let bytes = f.to_bytes().unwrap();
        assert!(matches!(
            TensorFile::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        assert!(Tensor::new(vec![3], vec![1.0]).is_err());
    }
}
