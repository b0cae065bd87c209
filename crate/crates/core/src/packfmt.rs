//! `SQNZ` model container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        4 bytes  "SQNZ"
//! version      u8       1
//! config_len   u32      length of the JSON architecture blob
//! config       bytes    ArchConfig as compact JSON
//! tensor_count u16
//! per tensor, in declaration order (layer weight, then layer bias):
//!   name_len   u16
//!   name       bytes    UTF-8, e.g. "conv1.weight"
//!   rank       u8
//!   dims       rank x u32
//!   scheme     u8       0 = DENSE_F32, 1 = SPARSE_RLE4
//!   payload_len u32
//!   payload    bytes
//! ```
//!
//! `DENSE_F32` payloads hold one `f32` per element.
//!
//! `SPARSE_RLE4` payloads are a stream of 4-bit nibbles, high nibble of each
//! byte first. For every nonzero element the encoder writes the number of
//! zeros preceding it as a run, then a code nibble `s EEE` (bit 3 set for a
//! negative weight, bits 0-2 the exponent magnitude, value `+-2^-E`). A run
//! `r` is written as `r / 15` nibbles of `0xF` ("15 zeros, keep reading")
//! followed by one nibble `r % 15`. Zeros after the last nonzero are written
//! as one final run without a code. An odd nibble count is padded with a
//! zero nibble. The element count from the shape ends decoding.
//!
//! `[0, 0, +0.25, 0, -1.0]` encodes as nibbles `2, 2, 1, 8`, bytes `22 18`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::afib_model::{build_model, ArchConfig, Model};
use crate::error::{Error, Result};
use crate::quantize::{grid_code, QuantizedWeight};

pub const MAGIC: &[u8; 4] = b"SQNZ";
pub const VERSION: u8 = 1;
/// Largest exponent magnitude a code nibble can hold.
pub const RLE4_EMAX: u32 = 7;
const RUN_ESCAPE: u8 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scheme {
    DenseF32 = 0,
    SparseRle4 = 1,
}

impl Scheme {
    fn from_u8(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Scheme::DenseF32),
            1 => Ok(Scheme::SparseRle4),
            _ => Err(Error::Format(format!("unknown scheme {b}"))),
        }
    }
}

fn code_nibble(c: QuantizedWeight) -> u8 {
    match c {
        QuantizedWeight::Zero => unreachable!("zeros are carried by runs"),
        QuantizedWeight::Pow2 { negative, exponent } => (u8::from(negative) << 3) | exponent as u8,
    }
}

fn nibble_code(n: u8) -> QuantizedWeight {
    QuantizedWeight::Pow2 {
        negative: n & 0x8 != 0,
        exponent: u32::from(n & 0x7),
    }
}

fn push_run(nibbles: &mut Vec<u8>, mut run: usize) {
    while run >= RUN_ESCAPE as usize {
        nibbles.push(RUN_ESCAPE);
        run -= RUN_ESCAPE as usize;
    }
    nibbles.push(run as u8);
}

fn rle4_nibbles(codes: &[QuantizedWeight]) -> Vec<u8> {
    let mut nibbles = Vec::new();
    let mut run = 0usize;
    for &c in codes {
        if c.is_zero() {
            run += 1;
        } else {
            push_run(&mut nibbles, run);
            nibbles.push(code_nibble(c));
            run = 0;
        }
    }
    if run > 0 {
        push_run(&mut nibbles, run);
    }
    nibbles
}

/// Nibble stream for codes whose exponents are all at most [`RLE4_EMAX`].
pub fn encode_rle4(codes: &[QuantizedWeight]) -> Vec<u8> {
    debug_assert!(codes.iter().all(|c| c.exponent().is_none_or(|e| e <= RLE4_EMAX)));
    rle4_nibbles(codes)
        .chunks(2)
        .map(|p| (p[0] << 4) | p.get(1).copied().unwrap_or(0))
        .collect()
}

pub fn decode_rle4(payload: &[u8], n: usize) -> Result<Vec<QuantizedWeight>> {
    let truncated = || Error::Format("truncated tensor payload".into());
    let total = payload.len() * 2;
    let nibble = |i: usize| {
        let b = payload[i / 2];
        if i.is_multiple_of(2) {
            b >> 4
        } else {
            b & 0xF
        }
    };
    let mut out = Vec::with_capacity(n);
    let mut pos = 0;
    while out.len() < n {
        let mut run = 0usize;
        loop {
            if pos >= total {
                return Err(truncated());
            }
            let r = nibble(pos);
            pos += 1;
            run += r as usize;
            if r != RUN_ESCAPE {
                break;
            }
        }
        if out.len() + run > n {
            return Err(Error::Format("zero run overflows tensor".into()));
        }
        out.resize(out.len() + run, QuantizedWeight::Zero);
        if out.len() == n {
            break;
        }
        if pos >= total {
            return Err(truncated());
        }
        out.push(nibble_code(nibble(pos)));
        pos += 1;
    }
    if pos.div_ceil(2) != payload.len() || (pos % 2 == 1 && nibble(pos) != 0) {
        return Err(Error::Format("trailing bytes in tensor payload".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub scheme: Scheme,
    pub values: Vec<f32>,
    /// Present for `SPARSE_RLE4` tensors.
    pub codes: Option<Vec<QuantizedWeight>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedModel {
    pub config: ArchConfig,
    pub tensors: Vec<PackedTensor>,
}

/// Codes for every weight and bias tensor, failing on the first value that
/// is not `0` or `+-2^-E` with `E <= 7`.
pub fn rle4_codes(model: &Model<f32>) -> Result<Vec<(String, Vec<QuantizedWeight>)>> {
    model
        .net
        .params
        .tensors()
        .map(|(name, t)| {
            let codes = t
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    grid_code(f64::from(v), RLE4_EMAX).ok_or_else(|| Error::Encoding {
                        tensor: name.clone(),
                        index: i,
                        msg: format!("value {v} is not 0 or +-2^-E with E <= {RLE4_EMAX}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((name, codes))
        })
        .collect()
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: usize, what: &str) -> Result<()> {
        let v = u16::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u16")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u32(&mut self, v: usize, what: &str) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
}

/// Serializes every weight and bias tensor under one scheme. Output is a
/// pure function of the model.
pub fn pack(model: &Model<f32>, scheme: Scheme) -> Result<Vec<u8>> {
    let payloads: Vec<(String, Vec<usize>, Vec<u8>)> = match scheme {
        Scheme::SparseRle4 => rle4_codes(model)?
            .into_iter()
            .zip(model.net.params.tensors())
            .map(|((name, codes), (_, t))| (name, t.shape().to_vec(), encode_rle4(&codes)))
            .collect(),
        Scheme::DenseF32 => model
            .net
            .params
            .tensors()
            .map(|(name, t)| {
                let bytes = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
                (name, t.shape().to_vec(), bytes)
            })
            .collect(),
    };
    let config = serde_json::to_vec(&model.config)?;
    let mut w = Writer(Vec::new());
    w.bytes(MAGIC);
    w.u8(VERSION);
    w.u32(config.len(), "config length")?;
    w.bytes(&config);
    w.u16(payloads.len(), "tensor count")?;
    for (name, shape, payload) in payloads {
        w.u16(name.len(), "name length")?;
        w.bytes(name.as_bytes());
        let rank = u8::try_from(shape.len()).map_err(|_| Error::Format("rank exceeds u8".into()))?;
        w.u8(rank);
        for d in &shape {
            w.u32(*d, "dimension")?;
        }
        w.u8(scheme as u8);
        w.u32(payload.len(), "payload length")?;
        w.bytes(&payload);
    }
    Ok(w.0)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<usize> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]) as usize)
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn unpack(bytes: &[u8]) -> Result<PackedModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "header")? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u8("header")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let config_len = r.u32("header")?;
    let config: ArchConfig = serde_json::from_slice(r.take(config_len, "config")?)
        .map_err(|e| Error::Format(format!("bad config: {e}")))?;
    let count = r.u16("header")?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16("tensor header")?;
        let name = String::from_utf8(r.take(name_len, "tensor header")?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.u8("tensor header")? as usize;
        let shape = (0..rank).map(|_| r.u32("tensor header")).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let scheme = Scheme::from_u8(r.u8("tensor header")?)?;
        let len = r.u32("tensor header")?;
        let payload = r.take(len, "tensor payload")?;
        let (values, codes) = match scheme {
            Scheme::DenseF32 => {
                if len != 4 * n {
                    return Err(Error::Format(format!(
                        "tensor {name}: dense payload of {len} bytes for {n} elements"
                    )));
                }
                let v = payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                (v, None)
            }
            Scheme::SparseRle4 => {
                let codes = decode_rle4(payload, n)?;
                let v = codes.iter().map(|c| c.value() as f32).collect();
                (v, Some(codes))
            }
        };
        tensors.push(PackedTensor {
            name,
            shape,
            scheme,
            values,
            codes,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(PackedModel { config, tensors })
}

pub fn read_packed(path: impl AsRef<Path>) -> Result<PackedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    unpack(&bytes)
}

impl PackedModel {
    /// Rebuilds an in-memory model with the stored values. Tensor names and
    /// shapes must match the embedded architecture.
    pub fn to_model(&self) -> Result<Model<f32>> {
        let mut model = build_model::<f32>(&self.config, 0)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .net
            .params
            .tensors()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != self.tensors.len() {
            return Err(Error::Format(format!(
                "architecture has {} tensors, container has {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (i, ((name, shape), t)) in expected.iter().zip(&self.tensors).enumerate() {
            if *name != t.name || *shape != t.shape {
                return Err(Error::Format(format!(
                    "tensor {i}: expected {name} {shape:?}, found {} {:?}",
                    t.name, t.shape
                )));
            }
            let layer = &mut model.net.params.layers[i / 2];
            let dst = if i % 2 == 0 { &mut layer.weight } else { &mut layer.bias };
            dst.data_mut().copy_from_slice(&t.values);
        }
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }
}

/// Four bits per surviving value, positions not counted.
pub fn value_only_bytes(nnz: usize) -> usize {
    (4 * nnz).div_ceil(8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackSizeReport {
    pub scheme: Scheme,
    pub n_params: usize,
    pub nnz: usize,
    pub dense_f32_bytes: usize,
    pub packed_bytes: usize,
    pub value_only_bytes: usize,
    pub ratio_packed: f64,
    pub ratio_value_only: f64,
}

impl PackSizeReport {
    pub fn from_counts(scheme: Scheme, n_params: usize, nnz: usize, packed_bytes: usize) -> Self {
        let dense = 4 * n_params;
        let value_only = value_only_bytes(nnz);
        let ratio = |b: usize| if b == 0 { f64::INFINITY } else { dense as f64 / b as f64 };
        Self {
            scheme,
            n_params,
            nnz,
            dense_f32_bytes: dense,
            packed_bytes,
            value_only_bytes: value_only,
            ratio_packed: ratio(packed_bytes),
            ratio_value_only: ratio(value_only),
        }
    }
}

pub fn size_report(model: &Model<f32>, scheme: Scheme) -> Result<PackSizeReport> {
    let packed = pack(model, scheme)?.len();
    let n = model.param_count();
    let nnz = n - model.net.params.zero_count();
    Ok(PackSizeReport::from_counts(scheme, n, nnz, packed))
}
