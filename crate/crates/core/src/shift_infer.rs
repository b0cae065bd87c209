//! Integer inference with power-of-two weights.
//!
//! Feature maps are `i64` fixed point with `frac_bits` fractional bits. A
//! layer accumulates at scale `frac_bits + Emax`: each nonzero weight
//! `+-2^-E` contributes `+-(x << (Emax - E))`, which is exact, and the bias
//! enters as `round(b * 2^(frac_bits + Emax))`. Each output is brought back
//! to `frac_bits` with one rounding shift, `(acc + 2^(Emax-1)) >> Emax`.
//! ReLU and max pooling run on the integers; only the closing softmax uses
//! floating point.
//!
//! Accumulator bound: a conv output sums `C * K` terms and a dense output
//! `D` terms, each at most `|x| * 2^Emax`. Inputs are standardized, so with
//! `|x| < 2^(6 + frac_bits)` (values below 64), `frac_bits <= 12`,
//! `Emax <= 7` and `D <= 128 * 18000 < 2^22` the sum stays below
//! `2^(6 + 12 + 7 + 22) = 2^47`, far inside `i64`. Every shift and add is
//! still checked and overflow is reported as a range error naming the layer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afib_model::{build_model, ArchConfig, Model};
use crate::error::{Error, Result};
use crate::nn_core::{softmax, Op};
use crate::packfmt::{PackedModel, RLE4_EMAX};
use crate::quantize::{grid_code, QuantizedWeight};

pub const DEFAULT_FRAC_BITS: u32 = 8;
/// Largest exponent magnitude accepted when codes are recovered from plain
/// float tensors.
pub const MAX_EMAX: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedMap {
    pub values: Vec<i64>,
    pub frac_bits: u32,
}

fn range_err(layer: &str, msg: impl Into<String>) -> Error {
    Error::Range {
        layer: layer.to_string(),
        msg: msg.into(),
    }
}

/// Scales by `2^frac_bits` and rounds half to even.
pub fn to_fixed(x: &[f64], frac_bits: u32) -> Result<FixedMap> {
    let scale = (frac_bits as f64).exp2();
    let limit = 2f64.powi(63);
    let values = x
        .iter()
        .map(|&v| {
            let r = (v * scale).round_ties_even();
            if r.is_finite() && r > -limit && r < limit {
                Ok(r as i64)
            } else {
                Err(range_err("input", format!("{v} does not fit at {frac_bits} fractional bits")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FixedMap { values, frac_bits })
}

pub fn to_real(map: &FixedMap) -> Vec<f64> {
    let scale = (-(map.frac_bits as f64)).exp2();
    map.values.iter().map(|&v| v as f64 * scale).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacCounter {
    pub executed: u64,
    pub skipped: u64,
}

/// One shift-accumulate step at the `Emax` pre-shift scale. A zero code
/// leaves `acc` unchanged and counts as skipped.
pub fn shift_mac(acc: i64, x: i64, code: QuantizedWeight, emax: u32, counter: &mut MacCounter) -> Result<i64> {
    match code {
        QuantizedWeight::Zero => {
            counter.skipped += 1;
            Ok(acc)
        }
        QuantizedWeight::Pow2 { negative, exponent } => {
            counter.executed += 1;
            if exponent > emax {
                return Err(range_err("mac", format!("exponent {exponent} above Emax {emax}")));
            }
            let term = x
                .checked_mul(1i64 << (emax - exponent))
                .ok_or_else(|| range_err("mac", "shift overflow"))?;
            let r = if negative { acc.checked_sub(term) } else { acc.checked_add(term) };
            r.ok_or_else(|| range_err("mac", "accumulator overflow"))
        }
    }
}

/// Rounding right shift by `emax`: add half, then floor.
pub fn rescale(acc: i64, emax: u32) -> Result<i64> {
    if emax == 0 {
        return Ok(acc);
    }
    acc.checked_add(1i64 << (emax - 1))
        .map(|v| v >> emax)
        .ok_or_else(|| range_err("mac", "accumulator overflow"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftOptions {
    pub frac_bits: u32,
    /// Skip zero weights. Disabling it only changes the operation counts.
    pub skip_zero: bool,
}

impl Default for ShiftOptions {
    fn default() -> Self {
        Self {
            frac_bits: DEFAULT_FRAC_BITS,
            skip_zero: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ShiftLayer {
    name: String,
    shape: Vec<usize>,
    codes: Vec<QuantizedWeight>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftModel {
    pub config: ArchConfig,
    pub emax: u32,
    pub options: ShiftOptions,
    ops: Vec<Op>,
    layers: Vec<ShiftLayer>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerOps {
    pub layer: String,
    pub macs_executed: u64,
    pub macs_skipped_zero_weight: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpReport {
    pub macs_executed: u64,
    pub macs_skipped_zero_weight: u64,
    pub per_layer: Vec<LayerOps>,
}

impl OpReport {
    pub fn skip_ratio(&self) -> f64 {
        let total = self.macs_executed + self.macs_skipped_zero_weight;
        if total == 0 {
            0.0
        } else {
            self.macs_skipped_zero_weight as f64 / total as f64
        }
    }

    pub fn merge(&mut self, other: &OpReport) {
        self.macs_executed += other.macs_executed;
        self.macs_skipped_zero_weight += other.macs_skipped_zero_weight;
        if self.per_layer.is_empty() {
            self.per_layer = other.per_layer.clone();
            return;
        }
        for (a, b) in self.per_layer.iter_mut().zip(&other.per_layer) {
            a.macs_executed += b.macs_executed;
            a.macs_skipped_zero_weight += b.macs_skipped_zero_weight;
        }
    }
}

impl ShiftModel {
    /// Weights must lie on the `+-2^-E` grid with `E <= emax`. Biases may
    /// be any real value; they are rounded once at the accumulator scale.
    pub fn from_model(model: &Model<f32>, emax: u32, options: ShiftOptions) -> Result<Self> {
        let layers = model
            .net
            .params
            .layers
            .iter()
            .map(|p| {
                let name = format!("{}.weight", p.name);
                let codes = p
                    .weight
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| {
                        grid_code(f64::from(w), emax).ok_or_else(|| Error::Encoding {
                            tensor: name.clone(),
                            index: i,
                            msg: format!("weight {w} is not 0 or +-2^-E with E <= {emax}"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ShiftLayer {
                    name: p.name.clone(),
                    shape: p.weight.shape().to_vec(),
                    codes,
                    bias: p.bias.data().iter().map(|&b| f64::from(b)).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: model.config.clone(),
            emax,
            options,
            ops: model.net.ops.clone(),
            layers,
        })
    }

    /// Uses `Emax = 7` for RLE4 containers. Dense containers get the
    /// smallest `Emax >= 7` that covers their weights.
    pub fn from_packed(packed: &PackedModel, options: ShiftOptions) -> Result<Self> {
        let model = packed.to_model()?;
        let mut emax = RLE4_EMAX;
        for t in packed.tensors.iter().step_by(2) {
            for (i, &v) in t.values.iter().enumerate() {
                let code = grid_code(f64::from(v), MAX_EMAX).ok_or_else(|| Error::Encoding {
                    tensor: t.name.clone(),
                    index: i,
                    msg: format!("weight {v} is not 0 or +-2^-E with E <= {MAX_EMAX}"),
                })?;
                emax = emax.max(code.exponent().unwrap_or(0));
            }
        }
        Self::from_model(&model, emax, options)
    }

    /// Float model carrying the same weight values, for comparison.
    pub fn float_model(&self) -> Result<Model<f64>> {
        let mut m = build_model::<f64>(&self.config, 0)?;
        for (p, l) in m.net.params.layers.iter_mut().zip(&self.layers) {
            for (w, c) in p.weight.data_mut().iter_mut().zip(&l.codes) {
                *w = c.value();
            }
            p.bias.data_mut().copy_from_slice(&l.bias);
        }
        Ok(m)
    }

    /// Fraction of zero weight codes per layer, in layer order.
    pub fn layer_sparsity(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| l.codes.iter().filter(|c| c.is_zero()).count() as f64 / l.codes.len().max(1) as f64)
            .collect()
    }

    fn bias_fixed(&self, layer: &ShiftLayer) -> Result<Vec<i64>> {
        to_fixed(&layer.bias, self.options.frac_bits + self.emax).map(|m| m.values).map_err(|_| {
            range_err(&layer.name, "bias does not fit the accumulator")
        })
    }

    fn mac(&self, layer: &str, acc: i64, x: i64, code: QuantizedWeight, counter: &mut MacCounter) -> Result<i64> {
        if !self.options.skip_zero && code.is_zero() {
            counter.executed += 1;
            return Ok(acc);
        }
        shift_mac(acc, x, code, self.emax, counter).map_err(|e| match e {
            Error::Range { msg, .. } => range_err(layer, msg),
            other => other,
        })
    }

    fn conv(&self, l: &ShiftLayer, x: &[i64], len: usize, padding: crate::nn_core::Padding) -> Result<(Vec<i64>, usize, MacCounter)> {
        let (c_out, c_in, k) = (l.shape[0], l.shape[1], l.shape[2]);
        let out_len = padding
            .output_length(len, k)
            .ok_or_else(|| Error::Dimension(format!("{}: kernel {k} longer than input {len}", l.name)))?;
        let left = match padding {
            crate::nn_core::Padding::SameZero => (k - 1) / 2,
            crate::nn_core::Padding::Valid => 0,
        } as isize;
        let bias = self.bias_fixed(l)?;
        let rows = (0..c_out)
            .into_par_iter()
            .map(|o| {
                let mut counter = MacCounter::default();
                let mut row = Vec::with_capacity(out_len);
                for t in 0..out_len {
                    let mut acc = bias[o];
                    for c in 0..c_in {
                        for kk in 0..k {
                            let i = t as isize + kk as isize - left;
                            let xv = if i >= 0 && (i as usize) < len { x[c * len + i as usize] } else { 0 };
                            acc = self.mac(&l.name, acc, xv, l.codes[(o * c_in + c) * k + kk], &mut counter)?;
                        }
                    }
                    row.push(rescale(acc, self.emax).map_err(|_| range_err(&l.name, "accumulator overflow"))?);
                }
                Ok((row, counter))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = MacCounter::default();
        let mut out = Vec::with_capacity(c_out * out_len);
        for (row, c) in rows {
            out.extend(row);
            total.executed += c.executed;
            total.skipped += c.skipped;
        }
        Ok((out, out_len, total))
    }

    fn dense(&self, l: &ShiftLayer, x: &[i64]) -> Result<(Vec<i64>, MacCounter)> {
        let (units, d) = (l.shape[0], l.shape[1]);
        if x.len() != d {
            return Err(Error::Dimension(format!("{} expects {d} inputs, got {}", l.name, x.len())));
        }
        let bias = self.bias_fixed(l)?;
        let mut counter = MacCounter::default();
        let mut out = Vec::with_capacity(units);
        for u in 0..units {
            let mut acc = bias[u];
            for (j, &xv) in x.iter().enumerate() {
                acc = self.mac(&l.name, acc, xv, l.codes[u * d + j], &mut counter)?;
            }
            out.push(rescale(acc, self.emax).map_err(|_| range_err(&l.name, "accumulator overflow"))?);
        }
        Ok((out, counter))
    }

    /// Logits at `frac_bits` scale plus the operation counts.
    pub fn forward_fixed(&self, input: &[f64]) -> Result<(FixedMap, OpReport)> {
        let expected = self.config.input_channels * self.config.input_length;
        if input.len() != expected {
            return Err(Error::Dimension(format!(
                "model expects {expected} input values, got {}",
                input.len()
            )));
        }
        let mut x = to_fixed(input, self.options.frac_bits)?.values;
        let mut len = self.config.input_length;
        let mut report = OpReport::default();
        for op in &self.ops {
            match *op {
                Op::Conv1d { layer, padding } => {
                    let l = &self.layers[layer];
                    let (out, out_len, c) = self.conv(l, &x, len, padding)?;
                    record(&mut report, l, c);
                    x = out;
                    len = out_len;
                }
                Op::Relu => x.iter_mut().for_each(|v| *v = (*v).max(0)),
                Op::MaxPool { window } => {
                    let channels = x.len() / len;
                    let out_len = len / window;
                    x = (0..channels)
                        .flat_map(|c| {
                            let row = &x[c * len..(c + 1) * len];
                            (0..out_len).map(move |j| *row[j * window..(j + 1) * window].iter().max().unwrap())
                        })
                        .collect();
                    len = out_len;
                }
                Op::Flatten => len = x.len(),
                Op::Dense { layer } => {
                    let l = &self.layers[layer];
                    let (out, c) = self.dense(l, &x)?;
                    record(&mut report, l, c);
                    x = out;
                    len = x.len();
                }
            }
        }
        Ok((
            FixedMap {
                values: x,
                frac_bits: self.options.frac_bits,
            },
            report,
        ))
    }
}

fn record(report: &mut OpReport, l: &ShiftLayer, c: MacCounter) {
    report.macs_executed += c.executed;
    report.macs_skipped_zero_weight += c.skipped;
    report.per_layer.push(LayerOps {
        layer: l.name.clone(),
        macs_executed: c.executed,
        macs_skipped_zero_weight: c.skipped,
    });
}

/// Class probabilities from the integer engine and the operation counts.
pub fn quantized_forward(model: &ShiftModel, input: &[f64]) -> Result<(Vec<f64>, OpReport)> {
    let (logits, report) = model.forward_fixed(input)?;
    Ok((softmax(&to_real(&logits)), report))
}

/// Runs every input in parallel; the report sums over all of them.
pub fn quantized_forward_batch(model: &ShiftModel, inputs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, OpReport)> {
    let results = inputs
        .par_iter()
        .map(|x| quantized_forward(model, x))
        .collect::<Result<Vec<_>>>()?;
    let mut total = OpReport::default();
    let probs = results
        .into_iter()
        .map(|(p, r)| {
            total.merge(&r);
            p
        })
        .collect();
    Ok((probs, total))
}
