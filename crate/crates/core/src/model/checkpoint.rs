//! Binary parameter checkpoints.
//!
//! Layout:
//!
//! ```text
//! magic        8 bytes   b"SERMLP\x00\x01"
//! layer_count  u32 BE    number of affine layers L
//! widths       (L+1) x u32 BE   input width, hidden widths, class count
//! values       f64 LE    per layer: weight (row-major, in x out), then bias
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{Dense, ModelParams};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"SERMLP\x00\x01";

pub fn write_checkpoint<T: Scalar, W: Write>(params: &ModelParams<T>, mut out: W) -> Result<()> {
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&(params.layers().len() as u32).to_be_bytes())?;
    for w in params.layer_sizes() {
        out.write_all(&(w as u32).to_be_bytes())?;
    }
    for layer in params.layers() {
        for v in layer.weight.data().iter().chain(layer.bias.data()) {
            let v = v.to_f64().ok_or(Error::NonFinite("checkpoint value"))?;
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<ModelParams<T>> {
    let mut reader = Counted {
        inner: &mut input,
        offset: 0,
    };
    let mut magic = [0u8; 8];
    reader.exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(reader.err("bad checkpoint magic"));
    }
    let layer_count = reader.u32_be()? as usize;
    if layer_count == 0 || layer_count > 64 {
        return Err(reader.err(&format!("implausible layer count {layer_count}")));
    }
    let mut widths = Vec::with_capacity(layer_count + 1);
    for _ in 0..=layer_count {
        widths.push(reader.u32_be()? as usize);
    }
    let mut layers = Vec::with_capacity(layer_count);
    for w in widths.windows(2) {
        let weight = reader.reals(w[0] * w[1])?;
        let bias = reader.reals(w[1])?;
        layers.push(Dense {
            weight: Matrix::new(w[0], w[1], weight)?,
            bias: Matrix::new(1, w[1], bias)?,
        });
    }
    ModelParams::from_layers(layers)
}

struct Counted<'a, R> {
    inner: &'a mut R,
    offset: u64,
}

impl<R: Read> Counted<'_, R> {
    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| self.err("unexpected end of checkpoint"))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32_be(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_be_bytes(b))
    }

    fn reals<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            self.exact(&mut b)?;
            out.push(T::lit(f64::from_le_bytes(b)));
        }
        Ok(out)
    }

    fn err(&self, msg: &str) -> Error {
        Error::Format {
            path: "<checkpoint>".into(),
            offset: self.offset,
            msg: msg.to_string(),
        }
    }
}
