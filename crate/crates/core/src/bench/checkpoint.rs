//! The FCAZ named-tensor archive.
//!
//! Layout, all integers little-endian `u32`:
//! magic `FCAZ`, version, tensor count, then per tensor the name length, the
//! UTF-8 name, the rank, each extent, and the row-major `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"FCAZ";
pub const VERSION: u32 = 1;

/// Ordered list of named tensors, as stored.
pub type NamedTensors = Vec<(String, Tensor)>;

pub fn to_bytes(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_len(tensors.len(), "tensor count")?.to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&u32_len(name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&u32_len(t.dims().len(), "rank")?.to_le_bytes());
        for &d in t.dims() {
            out.extend_from_slice(&u32_len(d, "extent")?.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<NamedTensors> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not an FCAZ archive".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let dims = (0..rank)
            .map(|_| r.u32("extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("`{name}` extents overflow")))?;
        let raw = r.take(numel.saturating_mul(4), &format!("`{name}` data"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Format(format!("`{name}`: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, tensors: &[(String, Tensor)]) -> Result<()> {
    fs::write(path, to_bytes(tensors)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<NamedTensors> {
    from_bytes(&fs::read(path)?)
}

pub fn to_map(tensors: NamedTensors) -> Result<BTreeMap<String, Tensor>> {
    let mut map = BTreeMap::new();
    for (name, t) in tensors {
        if map.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NamedTensors {
        vec![
            (
                "a.weight".into(),
                Tensor::matrix(2, 3, vec![1.0, -2.5, 3.25, 0.0, f32::MIN_POSITIVE, 7.0]).unwrap(),
            ),
            (
                "b".into(),
                Tensor::new(vec![2, 1, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            ),
            ("ünï".into(), Tensor::scalar(-0.0)),
        ]
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = to_bytes(&sample()).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.len(), 3);
        for ((n1, t1), (n2, t2)) in sample().iter().zip(&back) {
            assert_eq!(n1, n2);
            assert!(t1.bit_eq(t2));
        }
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn layout_is_as_documented() {
        let bytes = to_bytes(&[("x".into(), Tensor::scalar(1.0))]).unwrap();
        let mut want = b"FCAZ".to_vec();
        for v in [1u32, 1, 1] {
            want.extend_from_slice(&v.to_le_bytes());
        }
        want.push(b'x');
        for v in [2u32, 1, 1] {
            want.extend_from_slice(&v.to_le_bytes());
        }
        want.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn corrupt_archives_are_rejected() {
        let bytes = to_bytes(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(from_bytes(&v2), Err(Error::Version(2))));
        for cut in [3, 10, bytes.len() - 1] {
            assert!(
                matches!(from_bytes(&bytes[..cut]), Err(Error::Format(_))),
                "cut {cut}"
            );
        }
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }

    #[test]
    fn duplicate_names_are_rejected_by_map() {
        let t = Tensor::scalar(1.0);
        assert!(to_map(vec![("a".into(), t.clone()), ("a".into(), t)]).is_err());
    }
}
