//! Self-describing binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! | field          | size            |                                   |
//! |----------------|-----------------|-----------------------------------|
//! | magic          | 4               | ASCII `TMLP`                      |
//! | format_version | u16             | `1`                               |
//! | dtype          | u8              | `1` = f64                         |
//! | section_count  | u64             |                                   |
//! | sections       | variable        | repeated `section_count` times    |
//! | crc32          | u32             | IEEE CRC-32 of all bytes before it |
//!
//! Each section is `name_len: u64`, `name: [u8; name_len]` (UTF-8),
//! `rank: u64`, `dims: [u64; rank]`, then `Π dims` row-major f64 values.
//! A rank-0 section holds exactly one value.

use std::fs;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"TMLP";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 1;

const HEADER_LEN: usize = 4 + 2 + 1 + 8;
const CRC_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("file truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("bad magic bytes {0:02x?}, expected \"TMLP\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("missing section '{0}'")]
    MissingSection(String),
    #[error("duplicate section '{0}'")]
    DuplicateSection(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ContainerError {
    /// Whether the bytes themselves are bad, as opposed to an I/O failure.
    pub fn is_integrity(&self) -> bool {
        !matches!(self, ContainerError::Io { .. })
    }
}

type Result<T> = std::result::Result<T, ContainerError>;

/// A named n-dimensional f64 array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<u64>,
    data: Vec<f64>,
}

fn element_count(dims: &[u64]) -> Option<usize> {
    dims.iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .and_then(|n| usize::try_from(n).ok())
}

impl Tensor {
    pub fn new(dims: Vec<u64>, data: Vec<f64>) -> Result<Self> {
        let n = element_count(&dims)
            .ok_or_else(|| ContainerError::Malformed("tensor size overflows".into()))?;
        if n != data.len() {
            return Err(ContainerError::Malformed(format!(
                "dims {dims:?} describe {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            dims: Vec::new(),
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            dims: vec![data.len() as u64],
            data,
        }
    }

    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorContainer {
    sections: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(ContainerError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| ContainerError::Malformed(format!("{what} {v} too large")))
    }
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(ContainerError::DuplicateSection(name));
        }
        self.sections.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| ContainerError::MissingSection(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(DTYPE_F64);
        out.extend_from_slice(&(self.sections.len() as u64).to_le_bytes());
        for (name, t) in &self.sections {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u64).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses and verifies a container.
    ///
    /// Structure is walked first (so truncation is reported as such), then
    /// the checksum is verified before any tensor is handed out.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(ContainerError::Truncated {
                offset: 0,
                needed: 4,
                available: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(ContainerError::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN + CRC_LEN {
            return Err(ContainerError::Truncated {
                offset: 0,
                needed: HEADER_LEN + CRC_LEN,
                available: bytes.len(),
            });
        }
        let body = &bytes[..bytes.len() - CRC_LEN];
        let mut r = Reader { bytes: body, pos: 4 };
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        let dtype = r.take(1)?[0];
        let count = r.len("section count")?;

        let mut sections: Vec<(String, Tensor)> = Vec::new();
        for _ in 0..count {
            let name_len = r.len("name length")?;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ContainerError::Malformed("section name is not UTF-8".into()))?
                .to_string();
            let rank = r.len("rank")?;
            // every dim needs 8 bytes; bound rank before allocating
            if rank > (body.len() - r.pos) / 8 {
                return Err(ContainerError::Truncated {
                    offset: r.pos,
                    needed: rank.saturating_mul(8),
                    available: body.len() - r.pos,
                });
            }
            let dims = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let n = element_count(&dims)
                .ok_or_else(|| ContainerError::Malformed(format!("section '{name}' size overflows")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| {
                ContainerError::Malformed(format!("section '{name}' size overflows"))
            })?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if sections.iter().any(|(n, _)| *n == name) {
                return Err(ContainerError::DuplicateSection(name));
            }
            sections.push((name, Tensor { dims, data }));
        }
        if r.pos != body.len() {
            return Err(ContainerError::Malformed(format!(
                "{} trailing bytes before checksum",
                body.len() - r.pos
            )));
        }

        let stored = u32::from_le_bytes(bytes[bytes.len() - CRC_LEN..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(ContainerError::ChecksumMismatch { stored, computed });
        }
        if version != FORMAT_VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        if dtype != DTYPE_F64 {
            return Err(ContainerError::UnsupportedDtype(dtype));
        }
        Ok(TensorContainer { sections })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| ContainerError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| ContainerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorContainer {
        let mut c = TensorContainer::new();
        c.insert("kind", Tensor::scalar(1.0)).unwrap();
        c.insert("m", Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, -0.0, f64::MIN_POSITIVE]).unwrap())
            .unwrap();
        c.insert("empty", Tensor::new(vec![4, 0], vec![]).unwrap()).unwrap();
        c
    }

    #[test]
    fn byte_layout_of_minimal_container() {
        let mut c = TensorContainer::new();
        c.insert("a", Tensor::scalar(1.0)).unwrap();
        let bytes = c.to_bytes();
        let mut expected = b"TMLP".to_vec();
        expected.extend_from_slice(&[1, 0]); // version
        expected.push(1); // dtype
        expected.extend_from_slice(&1u64.to_le_bytes()); // one section
        expected.extend_from_slice(&1u64.to_le_bytes()); // name length
        expected.push(b'a');
        expected.extend_from_slice(&0u64.to_le_bytes()); // rank 0
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        let crc = crc32fast::hash(&expected);
        expected.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = TensorContainer::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.len(), 3);
        for name in c.names() {
            let a = c.get(name).unwrap();
            let b = back.get(name).unwrap();
            assert_eq!(a.dims(), b.dims());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn distinct_error_classes() {
        let bytes = sample().to_bytes();

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(
            TensorContainer::from_bytes(&wrong_magic),
            Err(ContainerError::BadMagic(_))
        ));

        let truncated = &bytes[..bytes.len() - 20];
        assert!(matches!(
            TensorContainer::from_bytes(truncated),
            Err(ContainerError::Truncated { .. })
        ));

        let mut flipped = bytes.clone();
        let needle = 3.5f64.to_le_bytes();
        let at = bytes.windows(8).position(|w| w == needle).unwrap();
        flipped[at + 7] ^= 0x40;
        assert!(matches!(
            TensorContainer::from_bytes(&flipped),
            Err(ContainerError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn version_and_dtype_checked_after_crc() {
        let mut c = sample().to_bytes();
        c[4] = 2;
        let body = c.len() - 4;
        let crc = crc32fast::hash(&c[..body]);
        c[body..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            TensorContainer::from_bytes(&c),
            Err(ContainerError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn huge_declared_sizes_do_not_allocate() {
        let mut bytes = b"TMLP".to_vec();
        bytes.extend_from_slice(&[1, 0, 1]);
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.push(b'x');
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&[0; 4]);
        let err = TensorContainer::from_bytes(&bytes).unwrap_err();
        assert!(err.is_integrity());
    }

    #[test]
    fn duplicates_rejected() {
        let mut c = TensorContainer::new();
        c.insert("a", Tensor::scalar(0.0)).unwrap();
        assert!(matches!(
            c.insert("a", Tensor::scalar(1.0)),
            Err(ContainerError::DuplicateSection(_))
        ));
    }

    #[test]
    fn tensor_shape_validated() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![u64::MAX, 4], vec![]).is_err());
    }
}
