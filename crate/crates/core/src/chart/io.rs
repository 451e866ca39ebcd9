//! Binary model files.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 8     | magic `CHARTNN\0` |
//! | 4     | u32 format version (1) |
//! | 4 + 4 | u32 input rows, u32 input columns |
//! | 8     | f64 input scale |
//! | 4     | u32 layer count `L` |
//! | 20·L  | layer descriptors |
//! | 8     | u64 parameter count `P` |
//! | 4·P   | f32 parameters, layer order, weights before biases |
//!
//! A descriptor is `u8 kind` (1 conv, 2 flatten, 3 dense), `u8 activation`
//! (0 linear, 1 ReLU), two zero bytes, then four u32: conv `(in, out,
//! kernel, 0)`, flatten `(width, 0, 0, 0)`, dense `(in, out, 0, 0)`.
//! Conv weights are `[out, in, ky, kx]`, dense weights `[out, in]`.

use std::path::Path;

use super::model::{Activation, ChartModel, Layer};
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"CHARTNN\0";
pub const MODEL_VERSION: u32 = 1;

pub fn encode_model(model: &ChartModel<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * model.params().len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let (rows, cols) = model.input_shape();
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.extend_from_slice(&model.input_scale().to_le_bytes());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        let (kind, act, dims) = match *layer {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                activation,
            } => (1u8, activation, [in_channels, out_channels, kernel, 0]),
            Layer::Flatten { width } => (2, Activation::Linear, [width, 0, 0, 0]),
            Layer::Dense {
                inputs,
                outputs,
                activation,
            } => (3, activation, [inputs, outputs, 0, 0]),
        };
        out.extend_from_slice(&[kind, (act == Activation::Relu) as u8, 0, 0]);
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| Error::Format(format!("model file truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ChartModel<f32>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8)? != MODEL_MAGIC {
        return Err(Error::Format("not a chart model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {version}"
        )));
    }
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let scale = r.f64()?;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(64));
    for i in 0..n_layers {
        let head = r.take(4)?.to_vec();
        let d = [
            r.u32()? as usize,
            r.u32()? as usize,
            r.u32()? as usize,
            r.u32()? as usize,
        ];
        let activation = match head[1] {
            0 => Activation::Linear,
            1 => Activation::Relu,
            a => return Err(Error::Format(format!("layer {i}: unknown activation {a}"))),
        };
        layers.push(match head[0] {
            1 => Layer::Conv2d {
                in_channels: d[0],
                out_channels: d[1],
                kernel: d[2],
                activation,
            },
            2 => Layer::Flatten { width: d[0] },
            3 => Layer::Dense {
                inputs: d[0],
                outputs: d[1],
                activation,
            },
            k => return Err(Error::Format(format!("layer {i}: unknown kind {k}"))),
        });
    }
    let n_params = r.u64()? as usize;
    let raw = r.take(
        n_params
            .checked_mul(4)
            .ok_or_else(|| Error::Format("parameter count overflow".into()))?,
    )?;
    let params = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if r.at != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after parameters",
            bytes.len() - r.at
        )));
    }
    ChartModel::from_parts(rows, cols, scale, layers, params)
}

pub fn write_model(model: &ChartModel<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<ChartModel<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
