//! Declarative CNN architecture: a stack of 1D convolutions (each followed by
//! ReLU and optional max pooling), flattened into dense layers, softmax
//! output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn_core::{lit, LayerParams, Network, Op, Padding, ParamSet, Real, Tensor};
use crate::rng::SplitMix64;
use crate::signal_io::Label;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerConfig {
    pub channels: usize,
    pub kernel_size: usize,
    #[serde(default)]
    pub pool_after: bool,
    #[serde(default = "default_pool_window")]
    pub pool_window: usize,
}

fn default_pool_window() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayerConfig {
    pub units: usize,
}

/// JSON schema (all keys required except `padding`, `input_channels`,
/// `pool_after` and `pool_window`):
///
/// ```json
/// {
///   "input_length": 18000,
///   "input_channels": 1,
///   "padding": "same_zero",
///   "conv_layers": [
///     {"channels": 128, "kernel_size": 7, "pool_after": true, "pool_window": 5}
///   ],
///   "dense_layers": [{"units": 64}, {"units": 4}],
///   "n_classes": 4
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub input_length: usize,
    #[serde(default = "one")]
    pub input_channels: usize,
    #[serde(default)]
    pub padding: Padding,
    pub conv_layers: Vec<ConvLayerConfig>,
    pub dense_layers: Vec<DenseLayerConfig>,
    pub n_classes: usize,
}

fn one() -> usize {
    1
}

impl Default for ArchConfig {
    /// Full-size network: four 128-channel convolutions, pooling by 5 after
    /// the first two, dense 64 then 4, input length 18000.
    fn default() -> Self {
        Self::uniform(18_000, 128, 7, &[64, 4])
    }
}

impl ArchConfig {
    /// Four convolutions of `channels` x `kernel`, pooling by 5 after the
    /// first two, then the given dense widths.
    pub fn uniform(input_length: usize, channels: usize, kernel: usize, dense: &[usize]) -> Self {
        Self {
            input_length,
            input_channels: 1,
            padding: Padding::SameZero,
            conv_layers: (0..4)
                .map(|i| ConvLayerConfig {
                    channels,
                    kernel_size: kernel,
                    pool_after: i < 2,
                    pool_window: 5,
                })
                .collect(),
            dense_layers: dense.iter().map(|&units| DenseLayerConfig { units }).collect(),
            n_classes: Label::COUNT,
        }
    }

    /// Small network for desk-scale runs on 600-sample inputs.
    pub fn desk() -> Self {
        Self::uniform(600, 8, 7, &[32, 4])
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ArchConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks structure and returns the flattened feature length.
    pub fn validate(&self) -> Result<usize> {
        if self.conv_layers.is_empty() || self.dense_layers.is_empty() {
            return Err(Error::Architecture("need at least one conv and one dense layer".into()));
        }
        if self.n_classes != Label::COUNT {
            return Err(Error::Architecture(format!(
                "n_classes must be {}, got {}",
                Label::COUNT,
                self.n_classes
            )));
        }
        if self.dense_layers.last().unwrap().units != self.n_classes {
            return Err(Error::Architecture("last dense layer must have n_classes units".into()));
        }
        if self.input_channels == 0 || self.input_length == 0 {
            return Err(Error::Architecture("input must have at least one channel and sample".into()));
        }
        let mut len = self.input_length;
        for (i, c) in self.conv_layers.iter().enumerate() {
            if c.channels == 0 || c.kernel_size == 0 || c.pool_window == 0 {
                return Err(Error::Architecture(format!(
                    "conv{}: channels, kernel_size and pool_window must be positive",
                    i + 1
                )));
            }
            len = match self.padding.output_length(len, c.kernel_size) {
                Some(l) if l > 0 => l,
                _ => {
                    return Err(Error::Architecture(format!(
                        "conv{}: kernel {} does not fit length {len}",
                        i + 1,
                        c.kernel_size
                    )))
                }
            };
            if c.pool_after {
                len /= c.pool_window;
            }
            if len == 0 {
                return Err(Error::Architecture(format!("feature length reaches 0 after conv{}", i + 1)));
            }
        }
        if self.dense_layers.iter().any(|d| d.units == 0) {
            return Err(Error::Architecture("dense layers need at least one unit".into()));
        }
        Ok(len * self.conv_layers.last().unwrap().channels)
    }

    /// `sum(C_out * C_in * K + C_out) + sum(U * D + U)`.
    pub fn parameter_count(&self) -> Result<usize> {
        let mut d = self.validate()?;
        let mut c_in = self.input_channels;
        let mut n = 0;
        for c in &self.conv_layers {
            n += c.channels * c_in * c.kernel_size + c.channels;
            c_in = c.channels;
        }
        for l in &self.dense_layers {
            n += l.units * d + l.units;
            d = l.units;
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    pub config: ArchConfig,
    pub net: Network<T>,
}

/// Builds the layer graph with weights drawn uniformly from
/// `+-sqrt(6 / (fan_in + fan_out))` and zero biases.
pub fn build_model<T: Real>(config: &ArchConfig, seed: u64) -> Result<Model<T>> {
    let mut flat = config.validate()?;
    let mut rng = SplitMix64::new(seed);
    let mut layers = Vec::new();
    let mut ops = Vec::new();
    let mut c_in = config.input_channels;
    for (i, c) in config.conv_layers.iter().enumerate() {
        let shape = vec![c.channels, c_in, c.kernel_size];
        let fan_in = c_in * c.kernel_size;
        let fan_out = c.channels * c.kernel_size;
        layers.push(LayerParams::new(
            format!("conv{}", i + 1),
            init_uniform(&mut rng, shape, fan_in, fan_out),
            Tensor::zeros(vec![c.channels]),
        ));
        ops.push(Op::Conv1d {
            layer: layers.len() - 1,
            padding: config.padding,
        });
        ops.push(Op::Relu);
        if c.pool_after {
            ops.push(Op::MaxPool { window: c.pool_window });
        }
        c_in = c.channels;
    }
    ops.push(Op::Flatten);
    let n_dense = config.dense_layers.len();
    for (i, d) in config.dense_layers.iter().enumerate() {
        layers.push(LayerParams::new(
            format!("dense{}", i + 1),
            init_uniform(&mut rng, vec![d.units, flat], flat, d.units),
            Tensor::zeros(vec![d.units]),
        ));
        ops.push(Op::Dense { layer: layers.len() - 1 });
        if i + 1 < n_dense {
            ops.push(Op::Relu);
        }
        flat = d.units;
    }
    Ok(Model {
        config: config.clone(),
        net: Network {
            ops,
            params: ParamSet { layers },
            input_channels: config.input_channels,
            input_length: config.input_length,
        },
    })
}

fn init_uniform<T: Real>(rng: &mut SplitMix64, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| lit(rng.uniform(-limit, limit))).collect();
    Tensor::new(shape, data).expect("shape product")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReportEntry {
    pub name: String,
    pub elements: usize,
    pub zeros: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub precision_bits: usize,
    pub entries: Vec<SizeReportEntry>,
    pub total_elements: usize,
    pub total_bytes: usize,
}

fn bytes_for(elements: usize, bits: usize) -> usize {
    (elements * bits).div_ceil(8)
}

impl<T: Real> Model<T> {
    pub fn param_count(&self) -> usize {
        self.net.params.param_count()
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        self.net.forward(input)
    }

    pub fn predict(&self, input: &[T]) -> Result<Label> {
        let p = self.forward(input)?;
        Ok(Label::from_index(crate::nn_core::argmax(&p)).unwrap())
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            net: self.net.cast(),
        }
    }
}

/// Storage for every weight and bias at `precision_bits` per value. The
/// total is computed over all elements at once.
pub fn model_size_bytes<T: Real>(model: &Model<T>, precision_bits: usize) -> Result<SizeReport> {
    if precision_bits != 4 && precision_bits != 32 {
        return Err(Error::Validation(format!(
            "precision must be 4 or 32 bits, got {precision_bits}"
        )));
    }
    let entries: Vec<SizeReportEntry> = model
        .net
        .params
        .tensors()
        .map(|(name, t)| SizeReportEntry {
            name,
            elements: t.len(),
            zeros: t.data().iter().filter(|v| **v == T::zero()).count(),
            bytes: bytes_for(t.len(), precision_bits),
        })
        .collect();
    let total_elements = entries.iter().map(|e| e.elements).sum();
    Ok(SizeReport {
        precision_bits,
        entries,
        total_elements,
        total_bytes: bytes_for(total_elements, precision_bits),
    })
}

/// Zero weights and biases over all weights and biases.
pub fn weight_sparsity<T: Real>(model: &Model<T>) -> f64 {
    let n = model.param_count();
    if n == 0 {
        return 0.0;
    }
    model.net.params.zero_count() as f64 / n as f64
}

/// Zero entries over weight-tensor entries only (biases excluded).
pub fn weight_tensor_sparsity<T: Real>(model: &Model<T>) -> f64 {
    let n = model.net.params.weight_count();
    if n == 0 {
        return 0.0;
    }
    model.net.params.weight_zero_count() as f64 / n as f64
}

/// Fraction of zero activations in each post-ReLU map of one input.
pub fn relu_map_sparsity<T: Real>(model: &Model<T>, input: &[T]) -> Result<Vec<f64>> {
    let trace = model.net.trace(input)?;
    Ok(model
        .net
        .ops
        .iter()
        .enumerate()
        .filter(|(_, op)| matches!(op, Op::Relu))
        .map(|(i, _)| {
            let v = &trace.values[i + 1];
            if v.is_empty() {
                0.0
            } else {
                v.data().iter().filter(|x| **x == T::zero()).count() as f64 / v.len() as f64
            }
        })
        .collect())
}

/// Mean over inputs and over every post-ReLU map of the zero fraction.
pub fn feature_map_sparsity<T: Real>(model: &Model<T>, inputs: &[Vec<T>]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Validation("feature map sparsity needs at least one input".into()));
    }
    let mut total = 0.0;
    for x in inputs {
        let maps = relu_map_sparsity(model, x)?;
        total += maps.iter().sum::<f64>() / maps.len().max(1) as f64;
    }
    Ok(total / inputs.len() as f64)
}
