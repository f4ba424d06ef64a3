//! CSSF binary dataset files.
//!
//! Little-endian layout: magic `b"CSSF1\0"`, then `u32` num_images, H, W, d,
//! N; then per image `H*W*d` f32 features (row-major, pixel-major) followed by
//! `H*W` u16 labels (row-major). IGNORE is 65535.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, FeatureGrid};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"CSSF1\0";
const HEADER_LEN: usize = 6 + 5 * 4;

pub fn write_cssf(dataset: &Dataset, out: &mut impl Write) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN);
    buf.extend_from_slice(MAGIC);
    for v in [
        dataset.images.len(),
        dataset.height,
        dataset.width,
        dataset.feat_dim,
        dataset.num_classes,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.write_all(&buf)?;
    for img in &dataset.images {
        buf.clear();
        buf.reserve(img.features().len() * 4 + img.labels().len() * 2);
        for f in img.features() {
            buf.extend_from_slice(&f.to_le_bytes());
        }
        for l in img.labels() {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_cssf(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    write_cssf(dataset, &mut bytes).expect("writing to memory");
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!(
                    "truncated payload: need {n} bytes for {what}, {} left",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn read_cssf(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic (expected \"CSSF1\\0\")".into(),
        });
    }
    let n_images = cur.u32("num_images")?;
    let height = cur.u32("height")?;
    let width = cur.u32("width")?;
    let feat_dim = cur.u32("feat_dim")?;
    let num_classes = cur.u32("num_classes")?;
    if height == 0 || width == 0 || feat_dim == 0 {
        return Err(Error::Format {
            offset: 6,
            msg: format!("zero extent in header ({height}x{width}x{feat_dim})"),
        });
    }
    let pixels = height
        .checked_mul(width)
        .filter(|p| p.checked_mul(feat_dim).is_some())
        .ok_or_else(|| Error::Format {
            offset: 10,
            msg: "extents overflow".into(),
        })?;
    let image_bytes = pixels * feat_dim * 4 + pixels * 2;
    let expected = HEADER_LEN as u128 + n_images as u128 * image_bytes as u128;
    if (bytes.len() as u128) > expected {
        return Err(Error::Format {
            offset: expected as u64,
            msg: format!(
                "extent mismatch: {} trailing bytes",
                bytes.len() as u128 - expected
            ),
        });
    }
    let mut images = Vec::with_capacity(n_images.min(bytes.len() / image_bytes.max(1)));
    for i in 0..n_images {
        let start = cur.pos;
        let fb = cur.take(pixels * feat_dim * 4, &format!("features of image {i}"))?;
        let features: Vec<f32> = fb
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let lb = cur.take(pixels * 2, &format!("labels of image {i}"))?;
        let labels: Vec<u16> = lb
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        let grid = FeatureGrid::new(height, width, feat_dim, features, labels).map_err(|e| {
            Error::Format {
                offset: start as u64,
                msg: format!("image {i}: {e}"),
            }
        })?;
        images.push(grid);
    }
    Dataset::new(num_classes, height, width, feat_dim, images).map_err(|e| Error::Format {
        offset: HEADER_LEN as u64,
        msg: e.to_string(),
    })
}

pub fn load_cssf(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_cssf(&bytes)
}
