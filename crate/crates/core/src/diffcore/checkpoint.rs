//! Binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FMTK"              4 bytes magic
//! version             u32 (currently 1)
//! repeated until EOF:
//!   name_len          u32
//!   name              name_len bytes, UTF-8
//!   rank              u32
//!   dims              rank × u64
//!   payload           product(dims) × f64
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMTK";
pub const VERSION: u32 = 1;

pub fn to_bytes(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut store = ParamStore::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| Error::Checkpoint(format!("implausible dims {dims:?} for `{name}`")))?;
        let payload = r.take(numel * 8)?;
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let tensor = Tensor::new(&dims, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        store.add(name, tensor).map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    Ok(store)
}

/// Writes via a temporary file and rename so readers never see a partial
/// checkpoint.
pub fn save(params: &ParamStore, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&to_bytes(params))?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip(dims in proptest::collection::vec(1usize..4, 1..4), seed in 0u64..1000) {
            let numel: usize = dims.iter().product();
            let data: Vec<f64> = (0..numel).map(|i| (i as f64 + seed as f64) * 0.37 - 1.0).collect();
            let mut store = ParamStore::new();
            store.add("layer.weight", Tensor::new(&dims, data).unwrap()).unwrap();
            store.add("b", Tensor::new(&[1], vec![f64::MIN_POSITIVE]).unwrap()).unwrap();
            let back = from_bytes(&to_bytes(&store)).unwrap();
            prop_assert_eq!(back, store);
        }
    }

    #[test]
    fn header_is_magic_then_version() {
        let bytes = to_bytes(&ParamStore::new());
        assert_eq!(&bytes, b"FMTK\x01\x00\x00\x00");
    }

    #[test]
    fn rejects_corruption() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[3])).unwrap();
        let bytes = to_bytes(&store);
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
    }
}
