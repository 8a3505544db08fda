//! Binary network checkpoints.
//!
//! Layout (all integers and floats little-endian):
//! magic `"JADN"`, version byte `0x01`, `u32` layer count, then per layer:
//! `u32` out_dim, `u32` in_dim, `u8` activation tag (0 identity, 1 leaky
//! relu), `f64` alpha (written as 0.0 for identity), the row-major `f64`
//! weight entries, then the `f64` bias entries.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{Activation, Layer, Network};

const MAGIC: &[u8; 4] = b"JADN";
const VERSION: u8 = 0x01;

const TAG_IDENTITY: u8 = 0;
const TAG_LEAKY_RELU: u8 = 1;

/// Serialize a network to `path`; `load` restores it bit-exactly.
pub fn save(net: &Network, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&(net.depth() as u32).to_le_bytes());
    for layer in net.layers() {
        buf.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
        let (tag, alpha) = match layer.activation {
            Activation::Identity => (TAG_IDENTITY, 0.0),
            Activation::LeakyRelu { alpha } => (TAG_LEAKY_RELU, alpha),
        };
        buf.push(tag);
        buf.extend_from_slice(&alpha.to_le_bytes());
        for v in layer.weight.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &layer.bias {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Load a network checkpoint written by [`save`].
pub fn load(path: &Path) -> Result<Network> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let out_dim = r.u32()? as usize;
        let in_dim = r.u32()? as usize;
        let tag = r.u8()?;
        let alpha = r.f64()?;
        let activation = match tag {
            TAG_IDENTITY => Activation::Identity,
            TAG_LEAKY_RELU => Activation::LeakyRelu { alpha },
            other => {
                return Err(Error::Format(format!(
                    "unknown activation tag {other} in layer {i}"
                )))
            }
        };
        if out_dim == 0 || in_dim == 0 {
            return Err(Error::Format(format!("zero dimension in layer {i}")));
        }
        let mut weights = Vec::with_capacity(out_dim * in_dim);
        for _ in 0..out_dim * in_dim {
            weights.push(r.f64()?);
        }
        let mut bias = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            bias.push(r.f64()?);
        }
        let weight = Matrix::new(out_dim, in_dim, weights)
            .map_err(|e| Error::Format(format!("layer {i}: {e}")))?;
        layers.push(
            Layer::new(weight, bias, activation)
                .map_err(|e| Error::Format(format!("layer {i}: {e}")))?,
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint payload",
            bytes.len() - r.pos
        )));
    }
    Network::new(layers).map_err(|e| Error::Format(format!("invalid checkpoint network: {e}")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
