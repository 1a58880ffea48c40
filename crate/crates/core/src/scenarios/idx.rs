//! MNIST IDX reader.
//!
//! Images: magic `0x00000803`, then count, rows, cols as u32 BE, then one
//! unsigned byte per pixel. Labels: magic `0x00000801`, count as u32 BE,
//! then one byte per label. Gzip-compressed files are detected by their
//! header and inflated transparently.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw image bytes exactly as stored in an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.pixels_per_image();
        &self.pixels[i * n..(i + 1) * n]
    }
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_maybe_gz(path)?;
    let mut cur = Cursor::new(path, &bytes);
    let magic = cur.u32_be()?;
    if magic != IMAGES_MAGIC {
        return Err(cur.err(0, format!("bad magic number {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let count = cur.u32_be()? as usize;
    let rows = cur.u32_be()? as usize;
    let cols = cur.u32_be()? as usize;
    let need = count * rows * cols;
    let pixels = cur.take(need, "image data")?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_maybe_gz(path)?;
    let mut cur = Cursor::new(path, &bytes);
    let magic = cur.u32_be()?;
    if magic != LABELS_MAGIC {
        return Err(cur.err(0, format!("bad magic number {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let count = cur.u32_be()? as usize;
    Ok(cur.take(count, "label data")?.to_vec())
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        msg: format!("cannot read file: {e}"),
    })?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                offset: 0,
                msg: format!("gzip stream is corrupt: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    path: PathBuf,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(path: &Path, bytes: &'a [u8]) -> Self {
        Self {
            path: path.to_path_buf(),
            bytes,
            pos: 0,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(
                self.bytes.len(),
                format!(
                    "truncated {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4, "header")?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn err(&self, offset: usize, msg: String) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset: offset as u64,
            msg,
        }
    }
}
