//! Binary model checkpoints.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "SSMP" | version | in_c in_h in_w | layer_count
//! per layer: u8 tag, then
//!     0 conv      out in kh kw stride padding
//!     1 relu
//!     2 maxpool   window stride
//!     3 flatten
//!     4 dense     out in
//!     5 softmax_xent
//! tensor_count
//! per tensor: name_len name(utf-8) ndim dims[ndim] data(f32 LE)
//! crc32 (IEEE) of every preceding byte
//! ```
//!
//! Tensors are `layers.<i>.weight` then `layers.<i>.bias` for every conv
//! and dense layer, in layer order.

use std::path::Path;

use crate::engine::{Conv2d, Dense, InputShape, LayerSpec, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor4};

pub const MAGIC: &[u8; 4] = b"SSMP";
pub const FORMAT_VERSION: u32 = 1;

const TAG_CONV: u8 = 0;
const TAG_RELU: u8 = 1;
const TAG_MAXPOOL: u8 = 2;
const TAG_FLATTEN: u8 = 3;
const TAG_DENSE: u8 = 4;
const TAG_SOFTMAX: u8 = 5;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn tensor(&mut self, name: &str, dims: &[usize], data: &[f32]) {
        self.u32(name.len());
        self.0.extend_from_slice(name.as_bytes());
        self.u32(dims.len());
        dims.iter().for_each(|&d| self.u32(d));
        for v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(g: &ModelGraph) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION as usize);
    let inp = g.input();
    w.u32(inp.channels);
    w.u32(inp.height);
    w.u32(inp.width);
    w.u32(g.layers().len());
    for l in g.layers() {
        match l {
            LayerSpec::Conv(c) => {
                w.0.push(TAG_CONV);
                for d in c.weights.dims() {
                    w.u32(d);
                }
                w.u32(c.stride);
                w.u32(c.padding);
            }
            LayerSpec::ReLU => w.0.push(TAG_RELU),
            LayerSpec::MaxPool { window, stride } => {
                w.0.push(TAG_MAXPOOL);
                w.u32(*window);
                w.u32(*stride);
            }
            LayerSpec::Flatten => w.0.push(TAG_FLATTEN),
            LayerSpec::Dense(d) => {
                w.0.push(TAG_DENSE);
                w.u32(d.weights.rows());
                w.u32(d.weights.cols());
            }
            LayerSpec::SoftmaxXent => w.0.push(TAG_SOFTMAX),
        }
    }
    let param_layers = g
        .layers()
        .iter()
        .filter(|l| matches!(l, LayerSpec::Conv(_) | LayerSpec::Dense(_)))
        .count();
    w.u32(param_layers * 2);
    for (i, l) in g.layers().iter().enumerate() {
        match l {
            LayerSpec::Conv(c) => {
                w.tensor(&format!("layers.{i}.weight"), &c.weights.dims(), c.weights.data());
                w.tensor(&format!("layers.{i}.bias"), &[c.bias.len()], &c.bias);
            }
            LayerSpec::Dense(d) => {
                w.tensor(&format!("layers.{i}.weight"), &[d.weights.rows(), d.weights.cols()], d.weights.data());
                w.tensor(&format!("layers.{i}.bias"), &[d.bias.len()], &d.bias);
            }
            _ => {}
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedCheckpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| malformed("unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn tensor(&mut self, expect_name: &str, expect_dims: &[usize]) -> Result<Vec<f32>> {
        let len = self.u32()?;
        let name = std::str::from_utf8(self.take(len)?).map_err(|_| malformed("tensor name is not utf-8"))?;
        if name != expect_name {
            return Err(malformed(format!("expected tensor {expect_name}, found {name}")));
        }
        let ndim = self.u32()?;
        let dims = (0..ndim).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        if dims != expect_dims {
            return Err(malformed(format!("{name} has dims {dims:?}, topology says {expect_dims:?}")));
        }
        let count: usize = dims.iter().product();
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| malformed("tensor too large"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelGraph> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(Error::BadChecksum);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    if crc32fast::hash(body) != stored {
        return Err(Error::BadChecksum);
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let input = InputShape {
        channels: r.u32()?,
        height: r.u32()?,
        width: r.u32()?,
    };
    let n_layers = r.u32()?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let layer = match r.u8()? {
            TAG_CONV => {
                let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
                let (stride, padding) = (r.u32()?, r.u32()?);
                LayerSpec::Conv(Conv2d {
                    weights: Tensor4::zeros(dims)?,
                    bias: vec![0.0; dims[0]],
                    stride,
                    padding,
                })
            }
            TAG_RELU => LayerSpec::ReLU,
            TAG_MAXPOOL => LayerSpec::MaxPool {
                window: r.u32()?,
                stride: r.u32()?,
            },
            TAG_FLATTEN => LayerSpec::Flatten,
            TAG_DENSE => {
                let (out, inp) = (r.u32()?, r.u32()?);
                LayerSpec::Dense(Dense {
                    weights: Matrix::zeros(out, inp),
                    bias: vec![0.0; out],
                })
            }
            TAG_SOFTMAX => LayerSpec::SoftmaxXent,
            tag => return Err(malformed(format!("unknown layer tag {tag}"))),
        };
        layers.push(layer);
    }
    let n_tensors = r.u32()?;
    let expected = layers
        .iter()
        .filter(|l| matches!(l, LayerSpec::Conv(_) | LayerSpec::Dense(_)))
        .count()
        * 2;
    if n_tensors != expected {
        return Err(malformed(format!("{n_tensors} tensors for {expected} parameter slots")));
    }
    for (i, l) in layers.iter_mut().enumerate() {
        match l {
            LayerSpec::Conv(c) => {
                let dims = c.weights.dims();
                c.weights = Tensor4::new(dims, r.tensor(&format!("layers.{i}.weight"), &dims)?)?;
                c.bias = r.tensor(&format!("layers.{i}.bias"), &[dims[0]])?;
            }
            LayerSpec::Dense(d) => {
                let (rows, cols) = (d.weights.rows(), d.weights.cols());
                d.weights = Matrix::new(rows, cols, r.tensor(&format!("layers.{i}.weight"), &[rows, cols])?)?;
                d.bias = r.tensor(&format!("layers.{i}.bias"), &[rows])?;
            }
            _ => {}
        }
    }
    if r.pos != body.len() {
        return Err(malformed("trailing bytes after tensors"));
    }
    ModelGraph::new(input, layers).map_err(|e| malformed(e.to_string()))
}

pub fn save_checkpoint(g: &ModelGraph, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(g)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelGraph> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
