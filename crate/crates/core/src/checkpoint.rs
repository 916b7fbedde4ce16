//! Versioned binary network checkpoints.
//!
//! ```text
//! magic "SPKS" | version u32 | input_h u32 | input_w u32 | steps u32
//! step_count u64 | layer_count u32
//! per layer:
//!   kind u8 (0 conv, 1 transposed) | in u32 | out u32 | kernel u32 | stride u32
//!   padding u32 | output_padding u32 | delay_steps u32
//!   tau_s f64 | tau_r f64 | theta f64 | alpha f64 | beta f64 | sim_step f64
//!   weight_count u64 | weights f64[n] | adam m f64[n] | adam v f64[n]
//! ```
//!
//! Everything little-endian; weights are written `[out][in][ky][kx]`.

use std::fs;
use std::path::Path;

use crate::conv::{self, OpKind};
use crate::error::{Error, Result};
use crate::net::{LayerSpec, Network};
use crate::srm::SrmParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPKS";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut b, CHECKPOINT_VERSION);
    put_u32(&mut b, net.input_hw.0 as u32);
    put_u32(&mut b, net.input_hw.1 as u32);
    put_u32(&mut b, net.steps as u32);
    b.extend_from_slice(&net.step_count.to_le_bytes());
    put_u32(&mut b, net.layers.len() as u32);
    for layer in &net.layers {
        let s = &layer.spec;
        b.push(match s.kind {
            OpKind::Conv => 0,
            OpKind::TransposedConv => 1,
        });
        for v in [
            s.in_channels,
            s.out_channels,
            s.kernel,
            s.stride,
            s.padding,
            s.output_padding,
            s.delay_steps,
        ] {
            put_u32(&mut b, v as u32);
        }
        let p = &s.srm;
        for v in [p.tau_s, p.tau_r, p.theta, p.surrogate_alpha, p.surrogate_beta, p.sim_step_ms] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let op = s.op();
        b.extend_from_slice(&(layer.weights.len() as u64).to_le_bytes());
        for table in [&layer.weights, &layer.m, &layer.v] {
            for v in conv::to_oihw(&op, table) {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    b
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (need {n} more, {} available)",
                self.pos,
                self.bytes.len() - self.pos
            )));
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

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let input_hw = (r.u32()? as usize, r.u32()? as usize);
    let steps = r.u32()? as usize;
    let step_count = r.u64()?;
    let count = r.u32()? as usize;
    let mut specs = Vec::with_capacity(count);
    let mut tables = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = match r.u8()? {
            0 => OpKind::Conv,
            1 => OpKind::TransposedConv,
            other => return Err(Error::Checkpoint(format!("unknown layer kind {other}"))),
        };
        let mut ints = [0usize; 7];
        for v in ints.iter_mut() {
            *v = r.u32()? as usize;
        }
        let srm = SrmParams {
            tau_s: r.f64()?,
            tau_r: r.f64()?,
            theta: r.f64()?,
            surrogate_alpha: r.f64()?,
            surrogate_beta: r.f64()?,
            sim_step_ms: r.f64()?,
        };
        let spec = LayerSpec {
            kind,
            in_channels: ints[0],
            out_channels: ints[1],
            kernel: ints[2],
            stride: ints[3],
            padding: ints[4],
            output_padding: ints[5],
            srm,
            delay_steps: ints[6],
        };
        let n = r.u64()? as usize;
        if n != spec.op().weight_len() {
            return Err(Error::Checkpoint(format!(
                "layer declares {n} weights, shape needs {}",
                spec.op().weight_len()
            )));
        }
        let mut read_table = || -> Result<Vec<f64>> {
            let raw = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            Ok(conv::from_oihw(&spec.op(), &raw))
        };
        let w = read_table()?;
        let m = read_table()?;
        let v = read_table()?;
        specs.push(spec);
        tables.push((w, m, v));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let mut net = Network::new(specs.clone(), input_hw, steps)?;
    for (i, (spec, (w, m, v))) in specs.into_iter().zip(tables).enumerate() {
        net.layers[i] = Network::rebuild_layer(spec, w, m, v)?;
    }
    net.step_count = step_count;
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
