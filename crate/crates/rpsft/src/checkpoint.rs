//! Binary tensor container: magic "RPSV", little-endian, version 1.
//!
//! Layout: magic (4 bytes) | version u32 | tensor_count u32 | per tensor
//! { name_len u16 | name UTF-8 | rows u64 | cols u64 | rows*cols f64
//! payload, row-major }. Round trips are byte-exact; every load failure
//! reports the byte offset of the fault.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::subspace::{basis_from_parts, ProtectedBasis};
use crate::trainer::{Architecture, ModelParams};

pub const MAGIC: &[u8; 4] = b"RPSV";
pub const VERSION: u32 = 1;

/// Ordered named tensors; order is preserved so save(load(x)) is byte-exact.
#[derive(Debug, Clone, Default)]
pub struct CheckpointContainer {
    tensors: Vec<(String, DenseMatrix)>,
}

impl CheckpointContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: DenseMatrix) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(Error::Validation(format!(
                "tensor name length {} outside [1, {}]",
                name.len(),
                u16::MAX
            )));
        }
        if self.tensors.iter().any(|(n, _)| n == &name) {
            return Err(Error::Validation(format!("duplicate tensor name '{name}'")));
        }
        self.tensors.push((name, tensor));
        Ok(())
    }

    pub fn tensors(&self) -> &[(String, DenseMatrix)] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&DenseMatrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let count = u32::try_from(self.tensors.len())
            .map_err(|_| Error::Validation("too many tensors".into()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for (name, tensor) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(tensor.cols() as u64).to_le_bytes());
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, offset: 0 };
        let magic = cursor.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format { offset: 0, message: format!("bad magic {magic:?}") });
        }
        let version_at = cursor.offset;
        let version = cursor.read_u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: version_at as u64,
                message: format!("unsupported version {version}, expected {VERSION}"),
            });
        }
        let count = cursor.read_u32("tensor count")? as usize;
        let mut container = Self::new();
        for i in 0..count {
            let name_len = cursor.read_u16("name length")? as usize;
            let name_at = cursor.offset;
            let name_bytes = cursor.take(name_len, "tensor name")?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|e| Error::Format {
                    offset: name_at as u64,
                    message: format!("tensor {i} name is not UTF-8: {e}"),
                })?
                .to_string();
            let dims_at = cursor.offset;
            let rows = cursor.read_u64("rows")? as usize;
            let cols = cursor.read_u64("cols")? as usize;
            let n_entries = rows.checked_mul(cols).ok_or(Error::Format {
                offset: dims_at as u64,
                message: format!("tensor '{name}' dimensions overflow"),
            })?;
            if rows == 0 || cols == 0 {
                return Err(Error::Format {
                    offset: dims_at as u64,
                    message: format!("tensor '{name}' has zero dimension {rows}x{cols}"),
                });
            }
            let payload_at = cursor.offset;
            let payload = cursor.take(n_entries * 8, "payload")?;
            let data: Vec<f64> = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = DenseMatrix::from_vec(rows, cols, data).map_err(|e| Error::Format {
                offset: payload_at as u64,
                message: format!("tensor '{name}': {e}"),
            })?;
            container.push(name.clone(), tensor).map_err(|_| Error::Format {
                offset: name_at as u64,
                message: format!("duplicate tensor name '{name}'"),
            })?;
        }
        if cursor.offset != bytes.len() {
            return Err(Error::Format {
                offset: cursor.offset as u64,
                message: format!("{} trailing bytes after last tensor", bytes.len() - cursor.offset),
            });
        }
        Ok(container)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.offset as u64,
                message: format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.offset
                ),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn read_u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn read_u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Serializes model layers under their layer names.
pub fn save_model(model: &ModelParams, path: &Path) -> Result<()> {
    let mut container = CheckpointContainer::new();
    for (name, w) in &model.layers {
        container.push(name.clone(), w.clone())?;
    }
    container.save(path)
}

pub fn load_model(path: &Path, arch: Architecture) -> Result<ModelParams> {
    let container = CheckpointContainer::load(path)?;
    let mut layers = BTreeMap::new();
    for (name, tensor) in container.tensors() {
        layers.insert(name.clone(), tensor.clone());
    }
    ModelParams::from_layers(arch, layers)
}

/// Serializes protected bases as "{layer}.Uk", "{layer}.Vk", "{layer}.Sref".
pub fn save_bases(bases: &BTreeMap<String, ProtectedBasis>, path: &Path) -> Result<()> {
    let mut container = CheckpointContainer::new();
    for (layer, basis) in bases {
        container.push(format!("{layer}.Uk"), basis.u_k.columns().clone())?;
        container.push(format!("{layer}.Vk"), basis.v_k.columns().clone())?;
        container.push(format!("{layer}.Sref"), basis.s_ref.clone())?;
    }
    container.save(path)
}

pub fn load_bases(path: &Path) -> Result<BTreeMap<String, ProtectedBasis>> {
    let container = CheckpointContainer::load(path)?;
    let mut layers: Vec<String> = Vec::new();
    for (name, _) in container.tensors() {
        if let Some(layer) = name.strip_suffix(".Uk") {
            layers.push(layer.to_string());
        }
    }
    let mut out = BTreeMap::new();
    for layer in layers {
        let u_k = container
            .get(&format!("{layer}.Uk"))
            .expect("scanned above");
        let v_k = container.get(&format!("{layer}.Vk")).ok_or_else(|| Error::Validation(
            format!("basis '{layer}' is missing its Vk tensor"),
        ))?;
        let s_ref = container.get(&format!("{layer}.Sref")).ok_or_else(|| Error::Validation(
            format!("basis '{layer}' is missing its Sref tensor"),
        ))?;
        let basis = basis_from_parts(&layer, u_k.clone(), v_k.clone(), s_ref.clone())?;
        out.insert(layer, basis);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::build_basis;

    fn sample_container() -> CheckpointContainer {
        let mut c = CheckpointContainer::new();
        c.push("a", DenseMatrix::from_vec(2, 3, vec![1.0, -2.5, 3.0, 0.0, 1e-300, 7.25]).unwrap())
            .unwrap();
        c.push("b.weight", DenseMatrix::identity(4)).unwrap();
        c
    }

    #[test]
    fn byte_exact_round_trip() {
        let c = sample_container();
        let bytes = c.to_bytes().unwrap();
        let loaded = CheckpointContainer::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.to_bytes().unwrap(), bytes);
        for ((n1, t1), (n2, t2)) in c.tensors().iter().zip(loaded.tensors()) {
            assert_eq!(n1, n2);
            let same = t1
                .data()
                .iter()
                .zip(t2.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rpsv");
        let c = sample_container();
        c.save(&path).unwrap();
        let loaded = CheckpointContainer::load(&path).unwrap();
        assert_eq!(loaded.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = sample_container().to_bytes().unwrap();
        bytes[0] = b'X';
        match CheckpointContainer::from_bytes(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_version_rejected() {
        let mut bytes = sample_container().to_bytes().unwrap();
        bytes[4] = 9;
        match CheckpointContainer::from_bytes(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_names_offset() {
        let bytes = sample_container().to_bytes().unwrap();
        let cut = bytes.len() - 5;
        match CheckpointContainer::from_bytes(&bytes[..cut]) {
            Err(Error::Format { offset, message }) => {
                assert!(offset as usize <= cut, "{offset} {message}");
                assert!(message.contains("truncated"), "{message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut c = CheckpointContainer::new();
        c.push("w", DenseMatrix::identity(2)).unwrap();
        assert!(c.push("w", DenseMatrix::identity(2)).is_err());
        // Forge duplicate names on the wire.
        let single = {
            let mut c = CheckpointContainer::new();
            c.push("w", DenseMatrix::identity(2)).unwrap();
            c.to_bytes().unwrap()
        };
        let mut forged = single.clone();
        forged.extend_from_slice(&single[12..]); // second copy of the entry
        forged[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            CheckpointContainer::from_bytes(&forged),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = sample_container().to_bytes().unwrap();
        bytes.push(0);
        assert!(matches!(
            CheckpointContainer::from_bytes(&bytes),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn model_round_trip_bitwise() {
        let arch = Architecture::TwoLayerTanh { input_dim: 5, hidden_dim: 4, output_dim: 3 };
        let model = ModelParams::init(arch, 123);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rpsv");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path, arch).unwrap();
        for (name, w) in &model.layers {
            let lw = &loaded.layers[name];
            assert!(w.data().iter().zip(lw.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn bases_round_trip() {
        let w0 = DenseMatrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let mut bases = BTreeMap::new();
        bases.insert("dense".to_string(), build_basis("dense", &w0, 3).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bases.rpsv");
        save_bases(&bases, &path).unwrap();
        let loaded = load_bases(&path).unwrap();
        let a = &bases["dense"];
        let b = &loaded["dense"];
        assert_eq!(b.k, a.k);
        assert_eq!(a.u_k.columns().data(), b.u_k.columns().data());
        assert_eq!(a.v_k.columns().data(), b.v_k.columns().data());
        assert_eq!(a.s_ref.data(), b.s_ref.data());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = CheckpointContainer::load(Path::new("/nonexistent/x.rpsv")).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}
