//! Descriptor cache.
//!
//! Layout (little-endian): magic `DIRD1`, dimension `u32`, quantization mode
//! `u8`, record count `u32`, then per record the frame index `u32` followed
//! by `dimension` values of `u16`. Records are kept sorted by frame so that
//! re-adding existing frames leaves the file byte-identical.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use loopgate_core::{DirdDescriptor, Quantization};

use super::{FormatError, Result};

const MAGIC: &[u8; 5] = b"DIRD1";

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorCache {
    pub dimension: usize,
    pub mode: Quantization,
    pub entries: BTreeMap<usize, Vec<u16>>,
}

impl DescriptorCache {
    pub fn new(dimension: usize, mode: Quantization) -> Self {
        Self {
            dimension,
            mode,
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.entries.contains_key(&frame)
    }

    pub fn insert(&mut self, frame: usize, d: &DirdDescriptor) {
        assert_eq!(d.len(), self.dimension, "descriptor dimension");
        assert_eq!(d.mode, self.mode, "descriptor quantization");
        self.entries.insert(frame, d.quantized.clone());
    }

    pub fn descriptor(&self, frame: usize) -> Option<DirdDescriptor> {
        self.entries
            .get(&frame)
            .map(|q| DirdDescriptor::from_quantized(q.clone(), self.mode))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + self.entries.len() * (4 + 2 * self.dimension));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.push(self.mode.code());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (&frame, values) in &self.entries {
            out.extend_from_slice(&(frame as u32).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| FormatError::invalid(path, m);
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5).ok_or_else(|| bad("truncated header"))? != MAGIC {
            return Err(bad("not a descriptor cache (bad magic)"));
        }
        let dimension = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let code = *r.take(1).ok_or_else(|| bad("truncated header"))?.first().unwrap();
        let mode = Quantization::from_code(code).ok_or_else(|| bad("unknown quantization mode"))?;
        let count = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let frame = r.u32().ok_or_else(|| bad("truncated record"))? as usize;
            let raw = r.take(2 * dimension).ok_or_else(|| bad("truncated record"))?;
            let values = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
            if entries.insert(frame, values).is_some() {
                return Err(bad("duplicate frame record"));
            }
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after last record"));
        }
        Ok(Self {
            dimension,
            mode,
            entries,
        })
    }

    /// Load `path`, or `None` when it does not exist.
    pub fn read(path: &Path) -> Result<Option<Self>> {
        match fs::read(path) {
            Ok(bytes) => Self::from_bytes(path, &bytes).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(FormatError::io(path)(e)),
        }
    }

    /// Atomically replace `path` with this cache.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = sidecar(path, "tmp");
        fs::write(&tmp, self.to_bytes()).map_err(FormatError::io(&tmp))?;
        fs::rename(&tmp, path).map_err(FormatError::io(path))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(ext);
    path.with_file_name(name)
}

/// Exclusive advisory lock on `<cache>.lock`, released on drop.
pub struct CacheLock {
    file: File,
}

impl CacheLock {
    pub fn acquire(cache_path: &Path) -> Result<Self> {
        let path = sidecar(cache_path, "lock");
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(FormatError::io(&path))?;
        file.lock().map_err(FormatError::io(&path))?;
        Ok(Self { file })
    }
}

impl Drop for CacheLock {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DescriptorCache {
        let mut c = DescriptorCache::new(4, Quantization::Byte);
        for frame in [7, 2, 40] {
            let d = DirdDescriptor::from_quantized(vec![1, 129, 256, frame as u16], Quantization::Byte);
            c.insert(frame, &d);
        }
        c
    }

    #[test]
    fn layout_matches_declared_header() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..5], b"DIRD1");
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 4);
        assert_eq!(bytes[9], Quantization::Byte.code());
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 3);
        // first record is the smallest frame
        assert_eq!(u32::from_le_bytes(bytes[14..18].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 14 + 3 * (4 + 8));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.dird");
        assert_eq!(DescriptorCache::read(&p).unwrap(), None);
        let c = sample();
        {
            let _lock = CacheLock::acquire(&p).unwrap();
            c.write(&p).unwrap();
        }
        assert_eq!(DescriptorCache::read(&p).unwrap(), Some(c));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = Path::new("x.dird");
        let bytes = sample().to_bytes();
        assert!(DescriptorCache::from_bytes(p, &bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(DescriptorCache::from_bytes(p, &extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(DescriptorCache::from_bytes(p, &magic).is_err());
    }

    proptest::proptest! {
        #[test]
        fn bytes_round_trip_regardless_of_insert_order(
            records in proptest::collection::btree_map(0usize..5000, proptest::collection::vec(1u16..=256, 6), 0..20),
            reversed: bool,
        ) {
            let mut c = DescriptorCache::new(6, Quantization::Byte);
            let mut frames: Vec<_> = records.keys().copied().collect();
            if reversed {
                frames.reverse();
            }
            for f in frames {
                c.insert(f, &DirdDescriptor::from_quantized(records[&f].clone(), Quantization::Byte));
            }
            let bytes = c.to_bytes();
            proptest::prop_assert_eq!(bytes.len(), 14 + records.len() * (4 + 12));
            proptest::prop_assert_eq!(DescriptorCache::from_bytes(Path::new("p"), &bytes).unwrap(), c);
            // any truncation is caught
            if !bytes.is_empty() {
                let cut = bytes.len() - 1;
                proptest::prop_assert!(DescriptorCache::from_bytes(Path::new("p"), &bytes[..cut]).is_err());
            }
        }
    }
}
