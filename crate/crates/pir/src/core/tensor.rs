//! `TNSR` binary tensor file format.
//!
//! Layout, all little-endian regardless of host:
//! magic bytes `TNSR` (4) | u32 ndim | ndim x u32 dims | f32 data, row-major.
//!
//! The format carries HDR images, feature maps, and checkpoint parameter
//! blocks. Roundtrips are bit-exact for all finite f32 payloads.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TNSR";
/// Caps the payload; keeps dim products well inside usize on all hosts.
const MAX_ELEMENTS: u64 = 1 << 31;
const MAX_NDIM: usize = 8;

/// An owned tensor: dims plus row-major f32 data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Tensor {
        debug_assert_eq!(
            dims.iter().map(|&d| d as usize).product::<usize>(),
            data.len()
        );
        Tensor { dims, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn element_count(path: &Path, dims: &[u32]) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_NDIM {
        return Err(Error::DimOverflow {
            path: path.to_path_buf(),
            dims: dims.iter().map(|&d| d as u64).collect(),
        });
    }
    let mut product: u64 = 1;
    for &d in dims {
        if d == 0 {
            return Err(Error::DimOverflow {
                path: path.to_path_buf(),
                dims: dims.iter().map(|&d| d as u64).collect(),
            });
        }
        product = product.saturating_mul(d as u64);
    }
    if product > MAX_ELEMENTS {
        return Err(Error::DimOverflow {
            path: path.to_path_buf(),
            dims: dims.iter().map(|&d| d as u64).collect(),
        });
    }
    Ok(product as usize)
}

/// Write `data` with shape `dims` to `path`. Fails on non-finite values.
pub fn tensor_write(path: impl AsRef<Path>, dims: &[u32], data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let n = element_count(path, dims)?;
    if n != data.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} elements for dims {dims:?}"),
            got: format!("{} elements", data.len()),
            context: format!("tensor_write {}", path.display()),
        });
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteData { index });
    }

    let mut bytes = Vec::with_capacity(8 + dims.len() * 4 + data.len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    for &v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
    }
    let mut file =
        fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    file.write_all(&bytes)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

/// Read a tensor from `path`.
pub fn tensor_read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes =
        fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;

    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let ndim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::DimOverflow {
            path: path.to_path_buf(),
            dims: vec![ndim as u64],
        });
    }
    let header_len = 8 + ndim * 4;
    if bytes.len() < header_len {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected: header_len,
            got: bytes.len(),
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 8 + i * 4;
        dims.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    }
    let n = element_count(path, &dims)?;
    let expected = header_len + n * 4;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            got: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let off = header_len + i * 4;
        data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    }
    Ok(Tensor { dims, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "pir-tensor-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn roundtrip_identity() {
        let path = tmpdir().join("small.tnsr");
        tensor_write(&path, &[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = tensor_read(&path).unwrap();
        assert_eq!(t.dims, vec![2, 2]);
        assert_eq!(t.data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn bad_magic_is_distinct_error() {
        let path = tmpdir().join("badmagic.tnsr");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(b"XXXX\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x80\x3f")
            .unwrap();
        match tensor_read(&path) {
            Err(Error::BadMagic { .. }) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn zero_dim_is_overflow_error() {
        let path = tmpdir().join("zerodim.tnsr");
        match tensor_write(&path, &[0, 4], &[]) {
            Err(Error::DimOverflow { .. }) => {}
            other => panic!("expected DimOverflow, got {other:?}"),
        }
    }

    #[test]
    fn huge_dims_overflow() {
        let path = tmpdir().join("huge.tnsr");
        let mut f = fs::File::create(&path).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"TNSR");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        f.write_all(&bytes).unwrap();
        match tensor_read(&path) {
            Err(Error::DimOverflow { .. }) => {}
            other => panic!("expected DimOverflow, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_distinct_error() {
        let path = tmpdir().join("trunc.tnsr");
        tensor_write(&path, &[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match tensor_read(&path) {
            Err(Error::TruncatedPayload { .. }) => {}
            other => panic!("expected TruncatedPayload, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_rejected() {
        let path = tmpdir().join("nan.tnsr");
        match tensor_write(&path, &[2], &[1.0, f32::NAN]) {
            Err(Error::NonFiniteData { index: 1 }) => {}
            other => panic!("expected NonFiniteData, got {other:?}"),
        }
    }

    #[test]
    fn feature_map_roundtrip_checksum() {
        // 64x64x384-style payload at reduced size, random values.
        use rand::{Rng as _, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let dims = [64u32, 64, 8];
        let data: Vec<f32> = (0..64 * 64 * 8).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect();
        let path = tmpdir().join("feat.tnsr");
        tensor_write(&path, &dims, &data).unwrap();
        let t = tensor_read(&path).unwrap();
        let sum_in: u64 = data.iter().map(|v| v.to_bits() as u64).sum();
        let sum_out: u64 = t.data.iter().map(|v| v.to_bits() as u64).sum();
        assert_eq!(sum_in, sum_out);
        assert_eq!(t.dims.as_slice(), &dims);
    }
}
