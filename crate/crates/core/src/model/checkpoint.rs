//! Versioned binary model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic            6 bytes  "CSSM1\0"
//! version          u32      1
//! feat_dim         u32
//! hidden           u32
//! embed            u32
//! local_context    u8       0 | 1
//! strategy         u8       0 dft, 1 fixb, 2 fixbc, 3 fixbc_p, 4 joint
//! current_step     u32
//! backbone_frozen  u8
//! num_blocks       u32
//!   per block:     u32 step, u32 rows, u8 frozen, rows x u16 class id
//! has_future       u8
//!   if 1:          u32 rows, u32 bound, bound x u16 class id, u8 frozen
//! parameters       f64 each, in order: W1 (hidden x d_in, row-major), b1,
//!                  W2 (embed x hidden), b2, then per block weight
//!                  (rows x embed) and bias, then future weight and bias
//! ```
//!
//! `d_in` is `feat_dim`, or `2 * feat_dim` with local context. Parameters are
//! always widened to f64, so f32 and f64 models both round-trip exactly.

use std::fs;
use std::path::Path;

use super::backbone::{input_width, BackboneParams};
use super::classifier::{ClassifierBank, ClassifierBlock, FutureBlock, LinearHead};
use super::{ModelDims, SegModel, Strategy};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 6] = b"CSSM1\0";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn values<T: Scalar>(&mut self, vs: &[T]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_f64_bytes());
        }
    }
}

pub fn write_checkpoint<T: Scalar>(model: &SegModel<T>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    w.u32(model.dims.feat_dim);
    w.u32(model.dims.hidden);
    w.u32(model.dims.embed);
    w.u8(model.dims.local_context as u8);
    w.u8(model.strategy.code());
    w.u32(model.current_step);
    w.u8(model.backbone_frozen as u8);
    let blocks = model.classifiers.blocks();
    w.u32(blocks.len());
    for b in blocks {
        w.u32(b.step);
        w.u32(b.head.rows());
        w.u8(b.frozen as u8);
        b.classes.iter().for_each(|&c| w.u16(c));
    }
    match model.classifiers.future() {
        None => w.u8(0),
        Some(f) => {
            w.u8(1);
            w.u32(f.head.rows());
            w.u32(f.classes.len());
            f.classes.iter().for_each(|&c| w.u16(c));
            w.u8(f.frozen as u8);
        }
    }
    let bb = &model.backbone;
    w.values(bb.w1.as_slice());
    w.values(&bb.b1);
    w.values(bb.w2.as_slice());
    w.values(&bb.b2);
    for b in blocks {
        w.values(b.head.weight.as_slice());
        w.values(&b.head.bias);
    }
    if let Some(f) = model.classifiers.future() {
        w.values(f.head.weight.as_slice());
        w.values(&f.head.bias);
    }
    w.0
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} reading {what}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Checkpoint(format!("{what}: invalid flag {v}"))),
        }
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
    fn values<T: Scalar>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        let b = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
            what,
        )?;
        Ok(b.chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix<T>> {
        Ok(Matrix::from_vec(
            rows,
            cols,
            self.values(rows * cols, what)?,
        ))
    }
}

pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<SegModel<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(6, "magic")? != MAGIC {
        return Err(Error::Checkpoint(
            "bad magic (expected \"CSSM1\\0\")".into(),
        ));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dims = ModelDims {
        feat_dim: r.u32("feat_dim")?,
        hidden: r.u32("hidden")?,
        embed: r.u32("embed")?,
        local_context: r.flag("local_context")?,
    };
    let code = r.u8("strategy")?;
    let strategy = Strategy::from_code(code)
        .ok_or_else(|| Error::Checkpoint(format!("unknown strategy code {code}")))?;
    let current_step = r.u32("current_step")?;
    let backbone_frozen = r.flag("backbone_frozen")?;
    let n_blocks = r.u32("num_blocks")?;
    let mut headers = Vec::with_capacity(n_blocks.min(1 << 16));
    for i in 0..n_blocks {
        let step = r.u32("block step")?;
        let rows = r.u32("block rows")?;
        let frozen = r.flag("block frozen")?;
        let classes = (0..rows)
            .map(|_| r.u16(&format!("class ids of block {i}")))
            .collect::<Result<Vec<_>>>()?;
        headers.push((step, rows, frozen, classes));
    }
    let future_header = if r.flag("has_future")? {
        let rows = r.u32("future rows")?;
        let bound = r.u32("future bound")?;
        if bound > rows {
            return Err(Error::Checkpoint(
                "future block binds more ids than rows".into(),
            ));
        }
        let classes = (0..bound)
            .map(|_| r.u16("future class ids"))
            .collect::<Result<Vec<_>>>()?;
        Some((rows, classes, r.flag("future frozen")?))
    } else {
        None
    };

    let d_in = input_width(dims.feat_dim, dims.local_context);
    let backbone = BackboneParams {
        w1: r.matrix(dims.hidden, d_in, "W1")?,
        b1: r.values(dims.hidden, "b1")?,
        w2: r.matrix(dims.embed, dims.hidden, "W2")?,
        b2: r.values(dims.embed, "b2")?,
    };
    let mut classifiers = ClassifierBank::new();
    for (i, (step, rows, frozen, classes)) in headers.into_iter().enumerate() {
        let head = LinearHead {
            weight: r.matrix(rows, dims.embed, &format!("block {i} weight"))?,
            bias: r.values(rows, &format!("block {i} bias"))?,
        };
        classifiers
            .push_block(ClassifierBlock {
                step,
                classes,
                head,
                frozen,
            })
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    if let Some((rows, classes, frozen)) = future_header {
        let head = LinearHead {
            weight: r.matrix(rows, dims.embed, "future weight")?,
            bias: r.values(rows, "future bias")?,
        };
        classifiers.set_future(Some(FutureBlock {
            classes,
            head,
            frozen,
        }));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(SegModel {
        backbone,
        classifiers,
        strategy,
        current_step,
        backbone_frozen,
        dims,
    })
}

pub fn save_checkpoint<T: Scalar>(model: &SegModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<SegModel<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
