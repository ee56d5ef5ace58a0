//! Binary container for per-video MLSP feature matrices.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "MLSPF1\n\0"
//! version  u32       1
//! frames   u32       T
//! dim      u32       D
//! blocks   u32       B
//! B x { u16 name_len, name (UTF-8), u32 channels }
//! T*D      f32       row-major payload
//! ```
//!
//! The video id is not stored; it is the file stem.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MLSPF1\n\0";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "mlsp";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub channels: usize,
}

impl Block {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Block {
            name: name.into(),
            channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureArchive {
    pub video_id: String,
    data: Array2<f32>,
    layout: Vec<Block>,
}

impl FeatureArchive {
    pub fn new(video_id: impl Into<String>, data: Array2<f32>, layout: Vec<Block>) -> Result<Self> {
        let (frames, dim) = data.dim();
        if frames == 0 {
            return Err(Error::Empty("feature archive needs at least one frame"));
        }
        if dim == 0 {
            return Err(Error::Empty("feature archive needs a positive feature dimension"));
        }
        let declared: usize = layout.iter().map(|b| b.channels).sum();
        if declared != dim {
            return Err(Error::DimensionMismatch {
                expected: declared,
                found: dim,
            });
        }
        if let Some(((row, col), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Ok(FeatureArchive {
            video_id: video_id.into(),
            data,
            layout,
        })
    }

    /// Archive with a single block spanning every column.
    pub fn single_block(video_id: impl Into<String>, data: Array2<f32>, block: &str) -> Result<Self> {
        let dim = data.ncols();
        Self::new(video_id, data, vec![Block::new(block, dim)])
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn layout(&self) -> &[Block] {
        &self.layout
    }

    pub fn into_data(self) -> Array2<f32> {
        self.data
    }

    /// Byte length of the encoded payload section.
    pub fn payload_len(&self) -> u64 {
        self.frames() as u64 * self.dim() as u64 * 4
    }

    pub fn encode(&self) -> Vec<u8> {
        let header: usize = 24 + self.layout.iter().map(|b| 6 + b.name.len()).sum::<usize>();
        let mut out = Vec::with_capacity(header + self.payload_len() as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.layout.len() as u32).to_le_bytes());
        for block in &self.layout {
            out.extend_from_slice(&(block.name.len() as u16).to_le_bytes());
            out.extend_from_slice(block.name.as_bytes());
            out.extend_from_slice(&(block.channels as u32).to_le_bytes());
        }
        for v in self.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(video_id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8).ok() != Some(&MAGIC[..]) {
            return Err(Error::BadMagic);
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let frames = cur.u32()? as usize;
        let dim = cur.u32()? as usize;
        let n_blocks = cur.u32()? as usize;
        let mut layout = Vec::with_capacity(n_blocks.min(4096));
        for _ in 0..n_blocks {
            let len = cur.u16()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|e| Error::Validation(format!("block name is not UTF-8: {e}")))?
                .to_owned();
            let channels = cur.u32()? as usize;
            layout.push(Block { name, channels });
        }
        let needed = frames as u64 * dim as u64 * 4;
        let available = (bytes.len() - cur.pos) as u64;
        if needed > available {
            return Err(Error::Truncated { needed, available });
        }
        let payload = &bytes[cur.pos..cur.pos + needed as usize];
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let data = Array2::from_shape_vec((frames, dim), values)
            .map_err(|e| Error::Validation(e.to_string()))?;
        FeatureArchive::new(video_id, data, layout)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len().saturating_sub(self.pos);
        if n > available {
            return Err(Error::Truncated {
                needed: n as u64,
                available: available as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Writes atomically: the bytes go to a temporary file in the target
/// directory which is then renamed over `path`.
pub fn write_feature_archive(archive: &FeatureArchive, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &archive.encode())
}

pub fn read_feature_archive(path: impl AsRef<Path>) -> Result<FeatureArchive> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureArchive::decode(id, &bytes)
}

/// Conventional location of a video's archive inside a features directory.
pub fn archive_path(dir: impl AsRef<Path>, video_id: &str) -> std::path::PathBuf {
    dir.as_ref().join(format!("{video_id}.{EXTENSION}"))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.flush().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
