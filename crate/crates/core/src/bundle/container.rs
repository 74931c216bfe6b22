// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tensor container: 8-byte little-endian header length, JSON header,
//! raw row-major little-endian payload. Byte-compatible with safetensors.

use std::path::Path;

use safetensors::tensor::{Dtype, Metadata, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub struct Container {
    bytes: Vec<u8>,
    payload_start: usize,
    metadata: Metadata,
}

impl Container {
    pub fn open(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (n, metadata) =
            SafeTensors::read_metadata(&bytes).map_err(|e| Error::Container(format!("{}: {e}", path.display())))?;
        Ok(Self {
            bytes,
            payload_start: 8 + n,
            metadata,
        })
    }

    /// Reads tensor `key` (logical name `name`), widening F16/BF16 to F32,
    /// and checks its shape and finiteness.
    pub fn read<T: Scalar>(&self, name: &str, key: &str, expected: &[usize]) -> Result<Vec<T>> {
        let info = self.metadata.info(key).ok_or_else(|| Error::MissingTensor {
            name: name.to_string(),
            key: key.to_string(),
        })?;
        if info.shape != expected {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: expected.to_vec(),
                actual: info.shape.clone(),
            });
        }
        let (begin, end) = info.data_offsets;
        let data = &self.bytes[self.payload_start + begin..self.payload_start + end];
        let values: Vec<T> = match info.dtype {
            Dtype::F32 => data
                .chunks_exact(4)
                .map(|b| T::widen(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect(),
            Dtype::F16 => data
                .chunks_exact(2)
                .map(|b| T::widen(half::f16::from_le_bytes([b[0], b[1]]).to_f32()))
                .collect(),
            Dtype::BF16 => data
                .chunks_exact(2)
                .map(|b| T::widen(half::bf16::from_le_bytes([b[0], b[1]]).to_f32()))
                .collect(),
            other => {
                return Err(Error::UnsupportedDtype {
                    name: name.to_string(),
                    dtype: format!("{other:?}"),
                })
            }
        };
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                name: name.to_string(),
                index,
            });
        }
        Ok(values)
    }
}

/// Serializes F32 tensors. Key order in the header is deterministic.
pub fn write_container(path: &Path, tensors: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
    let raw: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(k, shape, data)| {
            let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
            (k.clone(), shape.clone(), bytes)
        })
        .collect();
    let mut views = Vec::with_capacity(raw.len());
    for (k, shape, bytes) in &raw {
        let view =
            TensorView::new(Dtype::F32, shape.clone(), bytes).map_err(|e| Error::Container(format!("{k}: {e}")))?;
        views.push((k.as_str(), view));
    }
    let out = safetensors::serialize(views, None).map_err(|e| Error::Container(e.to_string()))?;
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
