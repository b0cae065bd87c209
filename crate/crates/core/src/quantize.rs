//! Base-2 logarithmic weight quantization.
//!
//! A nonzero weight `w` becomes `sign(w) * 2^-E` with
//! `E = clamp(round(-log2 |w|), 0, Emax)` and `Emax = 2^bits - 1`. Rounding
//! is done in the log domain, half away from zero. Weights whose exponent
//! would land past `Emax + 0.5` are clipped to zero; weights above one clamp
//! to `E = 0`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::afib_model::{weight_sparsity, Model};
use crate::error::{Error, Result};
use crate::nn_core::{lit, ParamSet, Real};
use crate::train::{evaluate, train_projected, Example, Hyperparams, TrainHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuantizedWeight {
    Zero,
    Pow2 { negative: bool, exponent: u32 },
}

impl QuantizedWeight {
    pub fn value(self) -> f64 {
        match self {
            QuantizedWeight::Zero => 0.0,
            QuantizedWeight::Pow2 { negative, exponent } => {
                let m = exp2_neg(exponent);
                if negative {
                    -m
                } else {
                    m
                }
            }
        }
    }

    pub fn is_zero(self) -> bool {
        matches!(self, QuantizedWeight::Zero)
    }

    pub fn exponent(self) -> Option<u32> {
        match self {
            QuantizedWeight::Zero => None,
            QuantizedWeight::Pow2 { exponent, .. } => Some(exponent),
        }
    }
}

/// Exact `2^-e` in `f64`, including the subnormal range; 0 past `2^-1074`.
pub fn exp2_neg(e: u32) -> f64 {
    if e <= 1022 {
        f64::from_bits(u64::from(1023 - e) << 52)
    } else if e <= 1074 {
        f64::from_bits(1u64 << (1074 - e))
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantConfig {
    /// Bits for the exponent magnitude `E`.
    pub bits: u32,
    /// Log-domain distance past `Emax` at which weights clip to zero.
    pub clip_margin: f64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: 3,
            clip_margin: 0.5,
        }
    }
}

impl QuantConfig {
    pub fn with_bits(bits: u32) -> Self {
        Self {
            bits,
            ..Self::default()
        }
    }

    pub fn emax(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.bits) {
            return Err(Error::Validation(format!("exponent bits must be in 2..=16, got {}", self.bits)));
        }
        if !(self.clip_margin >= 0.0 && self.clip_margin.is_finite()) {
            return Err(Error::Validation("clip_margin must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn log_quantize_value(w: f64, cfg: &QuantConfig) -> QuantizedWeight {
    if w == 0.0 || !w.is_finite() {
        return QuantizedWeight::Zero;
    }
    let emax = cfg.emax();
    let e = -w.abs().log2();
    if e > f64::from(emax) + cfg.clip_margin {
        return QuantizedWeight::Zero;
    }
    let exponent = e.round().clamp(0.0, f64::from(emax)) as u32;
    QuantizedWeight::Pow2 {
        negative: w < 0.0,
        exponent,
    }
}

/// Code for a value that already lies on the grid with `E <= emax`.
pub fn grid_code(v: f64, emax: u32) -> Option<QuantizedWeight> {
    if v == 0.0 {
        return Some(QuantizedWeight::Zero);
    }
    if !v.is_finite() {
        return None;
    }
    let e = -v.abs().log2();
    if e < 0.0 || e.fract() != 0.0 || e > f64::from(emax) {
        return None;
    }
    let exponent = e as u32;
    (exp2_neg(exponent) == v.abs()).then_some(QuantizedWeight::Pow2 {
        negative: v < 0.0,
        exponent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub codes: Vec<QuantizedWeight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub bits: u32,
    pub tensors: Vec<QuantizedTensor>,
}

/// Replaces every weight and bias with its quantized value.
pub fn quantize_params<T: Real>(params: &ParamSet<T>, cfg: &QuantConfig) -> ParamSet<T> {
    let mut out = params.clone();
    for l in &mut out.layers {
        for v in l.weight.data_mut().iter_mut().chain(l.bias.data_mut().iter_mut()) {
            *v = lit(log_quantize_value(v.to_f64().unwrap(), cfg).value());
        }
    }
    out
}

pub fn quantize_model<T: Real>(model: &Model<T>, cfg: &QuantConfig) -> Result<(Model<T>, QuantizedModel)> {
    cfg.validate()?;
    let params = quantize_params(&model.net.params, cfg);
    let tensors = params
        .tensors()
        .map(|(name, t)| QuantizedTensor {
            name,
            shape: t.shape().to_vec(),
            codes: t
                .data()
                .iter()
                .map(|v| log_quantize_value(v.to_f64().unwrap(), cfg))
                .collect(),
        })
        .collect();
    let mut net = model.net.clone();
    net.params = params;
    Ok((
        Model {
            config: model.config.clone(),
            net,
        },
        QuantizedModel {
            bits: cfg.bits,
            tensors,
        },
    ))
}

/// Quantization-aware training: full-precision shadow weights, quantized
/// forward/backward, straight-through updates. The returned model holds
/// quantized values.
pub fn qat_train<T: Real>(
    model: &Model<T>,
    cfg: &QuantConfig,
    train_set: &[Example<T>],
    val_set: &[Example<T>],
    hp: &Hyperparams,
    seed: u64,
) -> Result<(Model<T>, TrainHistory)> {
    cfg.validate()?;
    let cfg = *cfg;
    let project = move |p: &ParamSet<T>| quantize_params(p, &cfg);
    train_projected(model, train_set, val_set, hp, seed, Some(&project))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bits: u32,
    pub accuracy: f64,
    pub model_sparsity: f64,
    /// `SQNZ` container size: sparse nibble scheme when every code fits
    /// three exponent bits, dense f32 otherwise.
    pub packed_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("b,accuracy,model_sparsity,packed_bytes\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.6},{}", r.bits, r.accuracy, r.model_sparsity, r.packed_bytes);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub struct SweepData<'a, T> {
    pub train: &'a [Example<T>],
    pub val: &'a [Example<T>],
    pub test: &'a [Example<T>],
}

/// Runs [`qat_train`] from the same starting model for every bit width and
/// scores test accuracy.
pub fn sweep_bitwidths(
    model: &Model<f32>,
    bits: &[u32],
    data: &SweepData<'_, f32>,
    hp: &Hyperparams,
    seed: u64,
) -> Result<SweepTable> {
    if bits.is_empty() {
        return Err(Error::Validation("no bit widths to sweep".into()));
    }
    let mut rows = Vec::with_capacity(bits.len());
    for &b in bits {
        let cfg = QuantConfig::with_bits(b);
        let (q, _) = qat_train(model, &cfg, data.train, data.val, hp, seed)?;
        let accuracy = evaluate(&q, data.test)?.accuracy;
        let scheme = if b <= 3 {
            crate::packfmt::Scheme::SparseRle4
        } else {
            crate::packfmt::Scheme::DenseF32
        };
        rows.push(SweepRow {
            bits: b,
            accuracy,
            model_sparsity: weight_sparsity(&q),
            packed_bytes: crate::packfmt::pack(&q, scheme)?.len(),
        });
    }
    Ok(SweepTable { rows })
}
