//! Binary tensor records and the model container.
//!
//! Record layout, all little-endian:
//!
//! ```text
//! "PRNC" | version u32 | dtype u32 | rank u32 | dims u64 × rank | payload
//! ```
//!
//! dtype codes: 1 = f32, 2 = f64, 3 = complex f32, 4 = complex f64. Complex
//! payloads interleave real and imaginary parts. Container files are a
//! sequence of records whose first record is a rank-1 f64 tag
//! `[kind, kind version]`.

use std::fs;
use std::path::Path;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, Network};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"PRNC";
pub const FORMAT_VERSION: u32 = 1;

pub const KIND_MODEL: f64 = 1.0;
pub const KIND_DATASET: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    C32(Vec<Complex<f32>>),
    C64(Vec<Complex<f64>>),
}

impl TensorData {
    pub fn code(&self) -> u32 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::F64(_) => 2,
            TensorData::C32(_) => 3,
            TensorData::C64(_) => 4,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::C32(v) => v.len(),
            TensorData::C64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl TensorRecord {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "dims {dims:?} hold {n} values, payload has {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// Real record in the precision of `T`.
    pub fn real<T: Real>(dims: Vec<usize>, values: &[T]) -> Result<Self> {
        let data = if T::BYTES == 4 {
            TensorData::F32(values.iter().map(|v| v.as_f64() as f32).collect())
        } else {
            TensorData::F64(values.iter().map(|v| v.as_f64()).collect())
        };
        Self::new(dims, data)
    }

    /// Complex record in the precision of `T`.
    pub fn complex<T: Real>(dims: Vec<usize>, values: &[Complex<T>]) -> Result<Self> {
        let data = if T::BYTES == 4 {
            TensorData::C32(
                values
                    .iter()
                    .map(|z| Complex::new(z.re.as_f64() as f32, z.im.as_f64() as f32))
                    .collect(),
            )
        } else {
            TensorData::C64(
                values
                    .iter()
                    .map(|z| Complex::new(z.re.as_f64(), z.im.as_f64()))
                    .collect(),
            )
        };
        Self::new(dims, data)
    }

    /// Real payload converted to `T`.
    pub fn to_real<T: Real>(&self) -> Result<Vec<T>> {
        match &self.data {
            TensorData::F32(v) => Ok(v.iter().map(|&x| T::lit(x as f64)).collect()),
            TensorData::F64(v) => Ok(v.iter().map(|&x| T::lit(x)).collect()),
            _ => Err(Error::Format("expected a real tensor".into())),
        }
    }

    /// Complex payload converted to `T`.
    pub fn to_complex<T: Real>(&self) -> Result<Vec<Complex<T>>> {
        match &self.data {
            TensorData::C32(v) => Ok(v
                .iter()
                .map(|z| Complex::new(T::lit(z.re as f64), T::lit(z.im as f64)))
                .collect()),
            TensorData::C64(v) => Ok(v.iter().map(|z| Complex::new(T::lit(z.re), T::lit(z.im))).collect()),
            _ => Err(Error::Format("expected a complex tensor".into())),
        }
    }

    pub fn expect_dims(&self, dims: &[usize]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::Format(format!("expected dims {dims:?}, found {:?}", self.dims)));
        }
        Ok(())
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.data.code().to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| x.write_le(out)),
            TensorData::F64(v) => v.iter().for_each(|x| x.write_le(out)),
            TensorData::C32(v) => v.iter().for_each(|z| {
                z.re.write_le(out);
                z.im.write_le(out);
            }),
            TensorData::C64(v) => v.iter().for_each(|z| {
                z.re.write_le(out);
                z.im.write_le(out);
            }),
        }
    }
}

/// Sequential reader over concatenated records.
pub struct RecordReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RecordReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated record at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn next_record(&mut self) -> Result<TensorRecord> {
        if self.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let code = self.u32()?;
        let rank = self.u32()? as usize;
        let dims = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("dims overflow".into()))?;
        let width = match code {
            1 => 4,
            2 | 3 => 8,
            4 => 16,
            other => return Err(Error::Format(format!("unknown dtype code {other}"))),
        };
        let payload = self.take(
            n.checked_mul(width)
                .ok_or_else(|| Error::Format("payload overflow".into()))?,
        )?;
        let data = match code {
            1 => TensorData::F32(payload.chunks_exact(4).map(f32::read_le).collect()),
            2 => TensorData::F64(payload.chunks_exact(8).map(f64::read_le).collect()),
            3 => TensorData::C32(
                payload
                    .chunks_exact(8)
                    .map(|c| Complex::new(f32::read_le(c), f32::read_le(&c[4..])))
                    .collect(),
            ),
            _ => TensorData::C64(
                payload
                    .chunks_exact(16)
                    .map(|c| Complex::new(f64::read_le(c), f64::read_le(&c[8..])))
                    .collect(),
            ),
        };
        TensorRecord::new(dims, data)
    }

    /// Reads the container tag and checks its kind.
    pub fn expect_kind(&mut self, kind: f64) -> Result<f64> {
        let tag = self.next_record()?.to_real::<f64>()?;
        if tag.len() != 2 || tag[0] != kind {
            return Err(Error::Format(format!("container kind {tag:?} is not {kind}")));
        }
        Ok(tag[1])
    }
}

pub fn kind_tag(kind: f64, version: f64) -> TensorRecord {
    TensorRecord {
        dims: vec![2],
        data: TensorData::F64(vec![kind, version]),
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Columns of the model layer table.
const LAYER_COLUMNS: usize = 6;

/// Model container: tag, layer table `[convs, 6]` with rows
/// `(in, out, has_bn, has_bias, bn_eps, bn_momentum)`, then per layer the
/// conv weight `[out, in, 3, 3]`, the optional bias `[out]` and the BN block
/// `[4, out]` (γ, β, running mean, running variance).
pub fn encode_model<T: Real>(net: &Network<T>) -> Result<Vec<u8>> {
    net.validate()?;
    let mut out = Vec::new();
    kind_tag(KIND_MODEL, 1.0).encode(&mut out);
    let mut table = Vec::with_capacity(net.convs.len() * LAYER_COLUMNS);
    for (i, c) in net.convs.iter().enumerate() {
        let bn = net.bns.get(i);
        table.extend_from_slice(&[
            c.in_channels as f64,
            c.out_channels as f64,
            bn.is_some() as u8 as f64,
            c.bias.is_some() as u8 as f64,
            bn.map_or(0.0, |b| b.eps.as_f64()),
            bn.map_or(0.0, |b| b.momentum.as_f64()),
        ]);
    }
    TensorRecord::new(vec![net.convs.len(), LAYER_COLUMNS], TensorData::F64(table))?.encode(&mut out);
    for (i, c) in net.convs.iter().enumerate() {
        TensorRecord::real(vec![c.out_channels, c.in_channels, 3, 3], &c.weight)?.encode(&mut out);
        if let Some(b) = &c.bias {
            TensorRecord::real(vec![c.out_channels], b)?.encode(&mut out);
        }
        if let Some(bn) = net.bns.get(i) {
            let mut block = bn.gamma.clone();
            block.extend_from_slice(&bn.beta);
            block.extend_from_slice(&bn.running_mean);
            block.extend_from_slice(&bn.running_var);
            TensorRecord::real(vec![4, bn.channels()], &block)?.encode(&mut out);
        }
    }
    Ok(out)
}

pub fn decode_model<T: Real>(bytes: &[u8]) -> Result<Network<T>> {
    let mut r = RecordReader::new(bytes);
    r.expect_kind(KIND_MODEL)?;
    let table = r.next_record()?;
    if table.dims.len() != 2 || table.dims[1] != LAYER_COLUMNS || table.dims[0] == 0 {
        return Err(Error::Format(format!("bad layer table dims {:?}", table.dims)));
    }
    let rows = table.to_real::<f64>()?;
    let mut convs = Vec::new();
    let mut bns = Vec::new();
    for row in rows.chunks(LAYER_COLUMNS) {
        let (ci, co) = (row[0] as usize, row[1] as usize);
        let w = r.next_record()?;
        w.expect_dims(&[co, ci, 3, 3])?;
        let bias = if row[3] != 0.0 {
            let b = r.next_record()?;
            b.expect_dims(&[co])?;
            Some(b.to_real()?)
        } else {
            None
        };
        convs.push(Conv2d {
            in_channels: ci,
            out_channels: co,
            weight: w.to_real()?,
            bias,
        });
        if row[2] != 0.0 {
            let block = r.next_record()?;
            block.expect_dims(&[4, co])?;
            let v: Vec<T> = block.to_real()?;
            bns.push(BatchNorm {
                gamma: v[..co].to_vec(),
                beta: v[co..2 * co].to_vec(),
                running_mean: v[2 * co..3 * co].to_vec(),
                running_var: v[3 * co..].to_vec(),
                eps: T::lit(row[4]),
                momentum: T::lit(row[5]),
            });
        }
    }
    if !r.is_done() {
        return Err(Error::Format("trailing bytes after model".into()));
    }
    let net = Network { convs, bns };
    net.validate()
        .map_err(|e| Error::Format(format!("inconsistent model: {e}")))?;
    Ok(net)
}

pub fn save_model<T: Real>(path: &Path, net: &Network<T>) -> Result<()> {
    write_file(path, &encode_model(net)?)
}

pub fn load_model<T: Real>(path: &Path) -> Result<Network<T>> {
    decode_model(&read_file(path)?)
}
