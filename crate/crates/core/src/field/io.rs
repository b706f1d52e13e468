//! `SKFD` checkpoint format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "SKFDv001"                      8 bytes
//! resolution                      u32 x 3
//! bbox min xyz, max xyz           f64 x 6
//! flags                           u8 (must be 0)
//! density grid                    f32 per node, x fastest
//! color grid                      f32 x 3 per node, interleaved
//! occupancy                       packed u64 words, bit i of word w is cell 64w+i
//! metadata length                 u32
//! metadata                        UTF-8 JSON {"prune_threshold": f64, "metadata": {...}}
//! crc32                           u32 over every preceding byte
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FieldError, OccupancyGrid, RadianceField};
use crate::geom::Aabb;

pub const MAGIC: &[u8; 4] = b"SKFD";
pub const VERSION_TAG: &[u8; 4] = b"v001";

#[derive(Serialize, Deserialize)]
struct MetadataBlob {
    prune_threshold: f64,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FieldError> {
        let end = self.pos.checked_add(n).ok_or(FieldError::TruncatedFile)?;
        if end > self.buf.len() {
            return Err(FieldError::TruncatedFile);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FieldError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, FieldError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FieldError> {
        let bytes = self.take(n.checked_mul(4).ok_or(FieldError::TruncatedFile)?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl RadianceField {
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.node_count();
        let mut out = Vec::with_capacity(64 + 16 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(VERSION_TAG);
        for r in self.resolution {
            out.extend_from_slice(&(r as u32).to_le_bytes());
        }
        for v in self.bbox.min.iter().chain(self.bbox.max.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(0u8);
        for v in &self.density {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.color {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for w in self.occupancy.words() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        let blob = MetadataBlob {
            prune_threshold: self.occupancy.prune_threshold(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&blob).expect("metadata serializes");
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, FieldError> {
        if buf.len() < 8 {
            return if buf.len() >= 4 && &buf[..4] == MAGIC || MAGIC.starts_with(buf) {
                Err(FieldError::TruncatedFile)
            } else {
                Err(FieldError::BadMagic)
            };
        }
        if &buf[..4] != MAGIC {
            return Err(FieldError::BadMagic);
        }
        if &buf[4..8] != VERSION_TAG {
            return Err(FieldError::VersionMismatch(String::from_utf8_lossy(&buf[4..8]).into_owned()));
        }
        let mut r = Reader { buf, pos: 8 };
        let resolution = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        if resolution.iter().any(|&v| v < 2) {
            return Err(FieldError::InvalidResolution(resolution));
        }
        let mut bbox = Aabb::new([0.0; 3], [0.0; 3]);
        for a in 0..3 {
            bbox.min[a] = r.f64()?;
        }
        for a in 0..3 {
            bbox.max[a] = r.f64()?;
        }
        let flags = r.take(1)?[0];
        if flags != 0 {
            return Err(FieldError::UnsupportedFlags(flags));
        }
        let n = resolution
            .iter()
            .try_fold(1usize, |acc, &v| acc.checked_mul(v))
            .ok_or(FieldError::TruncatedFile)?;
        let density = r.f32s(n)?;
        let color = r.f32s(3 * n)?;
        let words = n.div_ceil(64);
        let mut occupancy = OccupancyGrid::new(resolution, 0.0);
        for w in occupancy.words_mut().iter_mut().take(words) {
            *w = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        }
        let meta_len = r.u32()? as usize;
        let meta = r.take(meta_len)?;
        let body_end = r.pos;
        let stored = r.u32()?;
        let computed = crc32fast::hash(&buf[..body_end]);
        if stored != computed {
            return Err(FieldError::ChecksumMismatch { stored, computed });
        }
        let blob: MetadataBlob =
            serde_json::from_slice(meta).map_err(|e| FieldError::BadMetadata(e.to_string()))?;
        occupancy.set_prune_threshold(blob.prune_threshold);
        if !bbox.is_valid() {
            return Err(FieldError::InvalidBounds(bbox));
        }
        Ok(RadianceField::from_parts(resolution, bbox, density, color, occupancy, blob.metadata))
    }

    /// Writes the checkpoint atomically (temporary file in the same directory, then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FieldError> {
        crate::io_util::write_atomic(path.as_ref(), &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FieldError> {
        let buf = std::fs::read(path)?;
        Self::from_bytes(&buf)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), FieldError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }
}
