//! DARC1 on-disk encoding for [`EmbeddingDataset`].
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DARC"            4 bytes magic
//! version   u32     always 1
//! dim       u32
//! n         u64     row count
//! n_classes u32
//! view      u8      0 = plain, 1 = augmented view
//! n_classes x { len u32, UTF-8 bytes }
//! n x u32           labels
//! n x dim x f32     embeddings, row-major
//! ```
//!
//! Dataset metadata lives in an optional JSON sidecar next to the file
//! (`<path>.meta.json`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{EmbeddingDataset, View};
use crate::error::{Error, Result};

pub const DARC_MAGIC: &[u8; 4] = b"DARC";
pub const DARC_VERSION: u32 = 1;

/// Little-endian cursor that reports truncation as [`Error::Length`].
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: u64, what: &'static str) -> Result<&'a [u8]> {
        if n > self.remaining() as u64 {
            return Err(Error::Length {
                what,
                expected: n,
                found: self.remaining() as u64,
            });
        }
        let n = n as usize;
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, count: u64, what: &'static str) -> Result<Vec<f32>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("{what} size overflows")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Length {
                what: "end of payload",
                expected: self.pos as u64,
                found: self.buf.len() as u64,
            });
        }
        Ok(())
    }
}

pub fn encode_dataset(ds: &EmbeddingDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(29 + ds.len() * (4 + 4 * ds.dim()));
    out.extend_from_slice(DARC_MAGIC);
    out.extend_from_slice(&DARC_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.n_classes() as u32).to_le_bytes());
    out.push(ds.view().as_byte());
    for name in ds.class_names() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for &l in ds.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for &v in ds.embeddings() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_dataset(buf: &[u8]) -> Result<EmbeddingDataset> {
    let mut r = Reader::new(buf);
    let magic = r
        .take(4, "magic")
        .map_err(|_| Error::Format("file too short for DARC1 magic".into()))?;
    if magic != DARC_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"DARC\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32("version")?;
    if version != DARC_VERSION {
        return Err(Error::Format(format!("unsupported DARC version {version}")));
    }
    let dim = r.u32("dim")? as u64;
    let n = r.u64("row count")?;
    let n_classes = r.u32("class count")?;
    let view_byte = r.u8("view")?;
    let view = View::from_byte(view_byte)
        .ok_or_else(|| Error::Format(format!("unknown view tag {view_byte}")))?;

    let mut class_names = Vec::with_capacity(n_classes.min(1 << 16) as usize);
    for _ in 0..n_classes {
        let len = r.u32("class name length")?;
        let bytes = r.take(len as u64, "class name")?;
        let name = std::str::from_utf8(bytes)
            .map_err(|e| Error::Format(format!("class name is not UTF-8: {e}")))?;
        class_names.push(name.to_string());
    }

    let label_bytes = n
        .checked_mul(4)
        .ok_or_else(|| Error::Format("row count overflows".into()))?;
    let labels: Vec<u32> = r
        .take(label_bytes, "labels")?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = n
        .checked_mul(dim)
        .ok_or_else(|| Error::Format("embedding size overflows".into()))?;
    let embeddings = r.f32s(values, "embeddings")?;
    r.finish()?;

    EmbeddingDataset::new(dim as usize, embeddings, labels, class_names, view)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut ds = decode_dataset(&bytes)?;
    let side = sidecar_path(path);
    if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: BTreeMap<String, String> = serde_json::from_str(&text)?;
        ds.set_meta(meta);
    }
    Ok(ds)
}

/// Writes the DARC1 file, plus the metadata sidecar when the dataset has any
/// metadata.
pub fn save_dataset(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_dataset(ds)).map_err(|e| Error::io(path, e))?;
    if !ds.meta().is_empty() {
        let side = sidecar_path(path);
        let mut text = serde_json::to_string_pretty(ds.meta())?;
        text.push('\n');
        fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingDataset {
        EmbeddingDataset::new(
            3,
            vec![0.5, -1.0, 2.0, 1e-30, 3.25, -0.0],
            vec![1, 0],
            vec!["drinking".into(), "eating".into()],
            View::AugmentedView,
        )
        .unwrap()
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode_dataset(&sample());
        assert_eq!(&bytes[..4], b"DARC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        assert_eq!(bytes[24], 1);
        // two names (4+8, 4+6), two labels, six floats
        assert_eq!(bytes.len(), 25 + 12 + 10 + 8 + 24);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = sample();
        let back = decode_dataset(&encode_dataset(&ds)).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.row(1)[2].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode_dataset(&sample());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_version_is_format_error() {
        let mut bytes = encode_dataset(&sample());
        bytes[4] = 2;
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_length_error() {
        // n = 2, dim = 3 but only five floats present
        let mut bytes = encode_dataset(&sample());
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(decode_dataset(&bytes), Err(Error::Length { .. })));
    }

    #[test]
    fn trailing_garbage_is_length_error() {
        let mut bytes = encode_dataset(&sample());
        bytes.push(0);
        assert!(matches!(decode_dataset(&bytes), Err(Error::Length { .. })));
    }

    #[test]
    fn label_out_of_range_is_validation_error() {
        let mut bytes = encode_dataset(&sample());
        // first label sits right after the class table
        let at = 25 + 12 + 10;
        bytes[at..at + 4].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode_dataset(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn nan_payload_is_validation_error() {
        let mut bytes = encode_dataset(&sample());
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_dataset(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn huge_declared_row_count_does_not_allocate() {
        let mut bytes = encode_dataset(&sample());
        bytes[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_dataset(&bytes).is_err());
    }
}
