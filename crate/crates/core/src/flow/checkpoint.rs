//! Little-endian binary encoding shared by model checkpoints.

use crate::error::{Error, Result};

use super::{FlowStack, Layer};

#[derive(Default)]
pub struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u64).to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("count {v} out of range")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Checkpoint(format!("invalid flag byte {b}"))),
        }
    }

    pub fn expect(&mut self, bytes: &[u8], what: &str) -> Result<()> {
        if self.take(bytes.len())? != bytes {
            return Err(Error::Checkpoint(format!("bad {what}")));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

const COUPLING: u8 = 0;
const MAF: u8 = 1;
const BATCH_NORM: u8 = 2;

/// Layer descriptors: kind byte, coupling swap flag, MAF ordering.
pub fn write_layout(stack: &FlowStack, w: &mut ByteWriter) {
    w.u64(stack.len());
    for layer in stack.layers() {
        match layer {
            Layer::Coupling(c) => {
                w.u8(COUPLING);
                w.u8(c.swap as u8);
            }
            Layer::Maf(m) => {
                w.u8(MAF);
                w.u8(m.is_autoregressive() as u8);
                w.u64(m.order.len());
                for &o in &m.order {
                    w.u64(o);
                }
            }
            Layer::BatchNorm(_) => w.u8(BATCH_NORM),
        }
    }
}

/// Check that stored descriptors match `stack`.
pub fn check_layout(stack: &FlowStack, r: &mut ByteReader) -> Result<()> {
    let n = r.u64()?;
    if n != stack.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {n} flow layers, model has {}",
            stack.len()
        )));
    }
    for (i, layer) in stack.layers().iter().enumerate() {
        let kind = r.u8()?;
        let ok = match layer {
            Layer::Coupling(c) => kind == COUPLING && r.bool()? == c.swap,
            Layer::Maf(m) => {
                kind == MAF && r.bool()? == m.is_autoregressive() && {
                    let k = r.u64()?;
                    let order = (0..k).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
                    order == m.order
                }
            }
            Layer::BatchNorm(_) => kind == BATCH_NORM,
        };
        if !ok {
            return Err(Error::Checkpoint(format!(
                "flow layer {i} does not match the model"
            )));
        }
    }
    Ok(())
}

/// Moving statistics of every batch-norm layer.
pub fn write_statistics(stack: &FlowStack, w: &mut ByteWriter) {
    for layer in stack.layers() {
        if let Layer::BatchNorm(bn) = layer {
            w.u8(bn.has_statistics() as u8);
            w.f64s(bn.running_mean());
            w.f64s(bn.running_var());
        }
    }
}

pub fn read_statistics(stack: &mut FlowStack, r: &mut ByteReader) -> Result<()> {
    for layer in stack.layers_mut() {
        if let Layer::BatchNorm(bn) = layer {
            let recorded = r.bool()?;
            let mean = r.f64s(bn.dim)?;
            let var = r.f64s(bn.dim)?;
            if recorded {
                bn.set_statistics(mean, var)?;
            }
        }
    }
    Ok(())
}
