//! Small deterministic layer engine: 1D convolution, max pooling, dense
//! layers, ReLU and softmax, with hand-written backward passes and masked
//! SGD.
//!
//! Everything is generic over [`Real`] (`f32` for training, `f64` for
//! gradient checks). Tensors are row-major; a feature map is `[C, L]`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("finite literal")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero padding so the output keeps the input length. For even kernels
    /// the extra pad goes on the right.
    #[default]
    SameZero,
    Valid,
}

impl Padding {
    fn left(self, kernel: usize) -> usize {
        match self {
            Padding::SameZero => (kernel - 1) / 2,
            Padding::Valid => 0,
        }
    }

    pub fn output_length(self, length: usize, kernel: usize) -> Option<usize> {
        match self {
            Padding::SameZero => Some(length),
            Padding::Valid => (length + 1).checked_sub(kernel),
        }
    }
}

fn expect_rank<T: Real>(t: &Tensor<T>, rank: usize, what: &str) -> Result<()> {
    if t.shape.len() != rank {
        return Err(Error::Dimension(format!(
            "{what} must have rank {rank}, got shape {:?}",
            t.shape
        )));
    }
    Ok(())
}

/// Cross-correlation (no kernel flip), stride 1.
pub fn conv1d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
) -> Result<Tensor<T>> {
    expect_rank(input, 2, "conv input")?;
    expect_rank(weights, 3, "conv weights")?;
    let (c_in, len) = (input.shape[0], input.shape[1]);
    let (c_out, w_in, k) = (weights.shape[0], weights.shape[1], weights.shape[2]);
    if w_in != c_in {
        return Err(Error::Dimension(format!(
            "conv weights expect {w_in} input channels, input has {c_in}"
        )));
    }
    if bias.shape != [c_out] {
        return Err(Error::Dimension(format!("conv bias shape {:?}, expected [{c_out}]", bias.shape)));
    }
    if k == 0 {
        return Err(Error::Dimension("conv kernel size 0".into()));
    }
    let out_len = padding
        .output_length(len, k)
        .ok_or_else(|| Error::Dimension(format!("kernel {k} longer than input {len}")))?;
    let pad = padding.left(k) as isize;
    let mut out = vec![T::zero(); c_out * out_len];
    for o in 0..c_out {
        let row = &mut out[o * out_len..(o + 1) * out_len];
        row.iter_mut().for_each(|v| *v = bias.data[o]);
        for c in 0..c_in {
            let x = &input.data[c * len..(c + 1) * len];
            for kk in 0..k {
                let w = weights.data[(o * c_in + c) * k + kk];
                if w == T::zero() {
                    continue;
                }
                let shift = kk as isize - pad;
                let (t0, t1) = valid_range(shift, len, out_len);
                for t in t0..t1 {
                    row[t] += w * x[(t as isize + shift) as usize];
                }
            }
        }
    }
    Tensor::new(vec![c_out, out_len], out)
}

/// Output positions `t` for which `t + shift` indexes inside `[0, len)`.
#[inline]
fn valid_range(shift: isize, len: usize, out_len: usize) -> (usize, usize) {
    let t0 = (-shift).max(0) as usize;
    let t1 = ((len as isize - shift).max(0) as usize).min(out_len);
    (t0.min(t1), t1)
}

/// Non-overlapping max pooling along the length axis. Tail samples that do
/// not fill a window are dropped. Argmax positions are indices along the
/// input length, first maximum wins.
pub fn maxpool1d_forward<T: Real>(input: &Tensor<T>, window: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    expect_rank(input, 2, "pool input")?;
    if window == 0 {
        return Err(Error::Dimension("pool window 0".into()));
    }
    let (c, len) = (input.shape[0], input.shape[1]);
    let out_len = len / window;
    let mut out = Vec::with_capacity(c * out_len);
    let mut arg = Vec::with_capacity(c * out_len);
    for ch in 0..c {
        let x = &input.data[ch * len..(ch + 1) * len];
        for j in 0..out_len {
            let start = j * window;
            let mut best = start;
            for i in start + 1..start + window {
                if x[i] > x[best] {
                    best = i;
                }
            }
            out.push(x[best]);
            arg.push(best);
        }
    }
    Ok((Tensor::new(vec![c, out_len], out)?, arg))
}

pub fn dense_forward<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(weights, 2, "dense weights")?;
    let (units, d) = (weights.shape[0], weights.shape[1]);
    if input.len() != d {
        return Err(Error::Dimension(format!(
            "dense layer expects {d} inputs, got {}",
            input.len()
        )));
    }
    if bias.shape != [units] {
        return Err(Error::Dimension(format!("dense bias shape {:?}, expected [{units}]", bias.shape)));
    }
    let out = (0..units)
        .map(|u| {
            let row = &weights.data[u * d..(u + 1) * d];
            let mut acc = bias.data[u];
            for (w, x) in row.iter().zip(&input.data) {
                acc += *w * *x;
            }
            acc
        })
        .collect();
    Ok(Tensor::from_vec(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softmax,
}

pub fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Max-subtracted softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn activation<T: Real>(input: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    match kind {
        Activation::Relu => Tensor::new(input.shape.clone(), input.data.iter().map(|&v| relu(v)).collect()),
        Activation::Softmax => {
            expect_rank(input, 1, "softmax input")?;
            Ok(Tensor::from_vec(softmax(&input.data)))
        }
    }
}

pub const LOG_CLAMP: f64 = 1e-12;

pub fn cross_entropy_loss<T: Real>(probs: &[T], label: usize) -> T {
    -probs[label].max(lit(LOG_CLAMP)).ln()
}

/// Weights and biases of one parametric layer, plus optional masks
/// (`true` = trainable, `false` = frozen at zero).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub weight_mask: Option<Vec<bool>>,
    pub bias_mask: Option<Vec<bool>>,
}

impl<T: Real> LayerParams<T> {
    pub fn new(name: impl Into<String>, weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            weight,
            bias,
            weight_mask: None,
            bias_mask: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Zeros every masked-out entry.
    pub fn apply_masks(&mut self) {
        if let Some(m) = &self.weight_mask {
            apply_mask(self.weight.data_mut(), m);
        }
        if let Some(m) = &self.bias_mask {
            apply_mask(self.bias.data_mut(), m);
        }
    }

    pub fn cast<U: Real>(&self) -> LayerParams<U> {
        LayerParams {
            name: self.name.clone(),
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            weight_mask: self.weight_mask.clone(),
            bias_mask: self.bias_mask.clone(),
        }
    }

    pub fn weight_mask_mut(&mut self) -> &mut Vec<bool> {
        let n = self.weight.len();
        self.weight_mask.get_or_insert_with(|| vec![true; n])
    }

    pub fn bias_mask_mut(&mut self) -> &mut Vec<bool> {
        let n = self.bias.len();
        self.bias_mask.get_or_insert_with(|| vec![true; n])
    }
}

fn apply_mask<T: Real>(values: &mut [T], mask: &[bool]) {
    for (v, &keep) in values.iter_mut().zip(mask) {
        if !keep {
            *v = T::zero();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len()).sum()
    }

    pub fn zero_count(&self) -> usize {
        self.tensors().map(|(_, t)| t.data.iter().filter(|v| **v == T::zero()).count()).sum()
    }

    pub fn weight_zero_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data.iter().filter(|v| **v == T::zero()).count())
            .sum()
    }

    /// `(name, tensor)` pairs in declaration order: each layer's weight then
    /// its bias, named `<layer>.weight` / `<layer>.bias`.
    pub fn tensors(&self) -> impl Iterator<Item = (String, &Tensor<T>)> {
        self.layers.iter().flat_map(|l| {
            [
                (format!("{}.weight", l.name), &l.weight),
                (format!("{}.bias", l.name), &l.bias),
            ]
        })
    }

    pub fn apply_masks(&mut self) {
        self.layers.iter_mut().for_each(LayerParams::apply_masks);
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            layers: self.layers.iter().map(LayerParams::cast).collect(),
        }
    }

    /// Every masked-out parameter holds exactly zero.
    pub fn masks_respected(&self) -> bool {
        self.layers.iter().all(|l| {
            let ok = |vals: &[T], m: &Option<Vec<bool>>| {
                m.as_ref()
                    .is_none_or(|m| vals.iter().zip(m).all(|(v, &keep)| keep || *v == T::zero()))
            };
            ok(l.weight.data(), &l.weight_mask) && ok(l.bias.data(), &l.bias_mask)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: vec![T::zero(); l.weight.len()],
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += *y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += *y);
        }
    }

    fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|x| *x *= s);
            l.bias.iter_mut().for_each(|x| *x *= s);
        }
    }

    fn mask(&mut self, params: &ParamSet<T>) {
        for (g, p) in self.layers.iter_mut().zip(&params.layers) {
            if let Some(m) = &p.weight_mask {
                apply_mask(&mut g.weight, m);
            }
            if let Some(m) = &p.bias_mask {
                apply_mask(&mut g.bias, m);
            }
        }
    }
}

/// One step of the layer graph. `layer` indexes into the [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Conv1d { layer: usize, padding: Padding },
    Relu,
    MaxPool { window: usize },
    Flatten,
    Dense { layer: usize },
}

/// Sequential layer graph ending in logits; [`Network::forward`] applies
/// the final softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub ops: Vec<Op>,
    pub params: ParamSet<T>,
    pub input_channels: usize,
    pub input_length: usize,
}

/// Every intermediate value of one forward pass. `values[0]` is the input
/// and `values[i + 1]` is the output of `ops[i]`.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub values: Vec<Tensor<T>>,
    pool_args: Vec<Option<Vec<usize>>>,
}

impl<T: Real> Trace<T> {
    pub fn logits(&self) -> &[T] {
        self.values.last().unwrap().data()
    }
}

#[derive(Debug, Clone)]
pub struct BatchGrads<T> {
    pub grads: GradientSet<T>,
    pub mean_loss: f64,
    pub correct: usize,
}

impl<T: Real> Network<T> {
    fn op_name(&self, i: usize) -> String {
        match self.ops[i] {
            Op::Conv1d { layer, .. } | Op::Dense { layer } => self.params.layers[layer].name.clone(),
            Op::Relu => format!("op{i}.relu"),
            Op::MaxPool { .. } => format!("op{i}.maxpool"),
            Op::Flatten => format!("op{i}.flatten"),
        }
    }

    pub fn trace(&self, input: &[T]) -> Result<Trace<T>> {
        let x = Tensor::new(vec![self.input_channels, self.input_length], input.to_vec())?;
        let mut values = Vec::with_capacity(self.ops.len() + 1);
        let mut pool_args = Vec::with_capacity(self.ops.len());
        values.push(x);
        for (i, op) in self.ops.iter().enumerate() {
            let cur = values.last().unwrap();
            let mut arg = None;
            let next = match *op {
                Op::Conv1d { layer, padding } => {
                    let p = &self.params.layers[layer];
                    conv1d_forward(cur, &p.weight, &p.bias, padding)?
                }
                Op::Relu => activation(cur, Activation::Relu)?,
                Op::MaxPool { window } => {
                    let (out, a) = maxpool1d_forward(cur, window)?;
                    arg = Some(a);
                    out
                }
                Op::Flatten => cur.clone().reshape(vec![cur.len()])?,
                Op::Dense { layer } => {
                    let p = &self.params.layers[layer];
                    dense_forward(cur, &p.weight, &p.bias)?
                }
            };
            if !next.all_finite() {
                return Err(Error::Numeric {
                    layer: self.op_name(i),
                    msg: "non-finite activation".into(),
                });
            }
            values.push(next);
            pool_args.push(arg);
        }
        Ok(Trace { values, pool_args })
    }

    pub fn logits(&self, input: &[T]) -> Result<Vec<T>> {
        Ok(self.trace(input)?.values.pop().unwrap().into_data())
    }

    /// Class probabilities.
    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        Ok(softmax(&self.logits(input)?))
    }

    /// Loss, probabilities and unmasked gradients for one example.
    pub fn sample_grads(&self, input: &[T], label: usize) -> Result<(T, Vec<T>, GradientSet<T>)> {
        let trace = self.trace(input)?;
        let probs = softmax(trace.logits());
        let loss = cross_entropy_loss(&probs, label);
        let mut grads = GradientSet::zeros_like(&self.params);
        let mut dy: Vec<T> = probs.clone();
        dy[label] -= T::one();

        for i in (0..self.ops.len()).rev() {
            let x = &trace.values[i];
            let need_dx = i > 0;
            dy = match self.ops[i] {
                Op::Dense { layer } => {
                    let w = &self.params.layers[layer].weight;
                    let d = w.shape[1];
                    let g = &mut grads.layers[layer];
                    let mut dx = vec![T::zero(); if need_dx { d } else { 0 }];
                    for (u, &du) in dy.iter().enumerate() {
                        g.bias[u] += du;
                        if du == T::zero() {
                            continue;
                        }
                        let row = &w.data[u * d..(u + 1) * d];
                        let grow = &mut g.weight[u * d..(u + 1) * d];
                        for j in 0..d {
                            grow[j] += du * x.data[j];
                        }
                        if need_dx {
                            for j in 0..d {
                                dx[j] += du * row[j];
                            }
                        }
                    }
                    dx
                }
                Op::Conv1d { layer, padding } => {
                    let w = &self.params.layers[layer].weight;
                    let (c_out, c_in, k) = (w.shape[0], w.shape[1], w.shape[2]);
                    let len = x.shape[1];
                    let out_len = dy.len() / c_out;
                    let pad = padding.left(k) as isize;
                    let g = &mut grads.layers[layer];
                    let mut dx = vec![T::zero(); if need_dx { c_in * len } else { 0 }];
                    for o in 0..c_out {
                        let dyo = &dy[o * out_len..(o + 1) * out_len];
                        g.bias[o] += dyo.iter().copied().sum();
                        for c in 0..c_in {
                            let xc = &x.data[c * len..(c + 1) * len];
                            for kk in 0..k {
                                let shift = kk as isize - pad;
                                let (t0, t1) = valid_range(shift, len, out_len);
                                let mut acc = T::zero();
                                for t in t0..t1 {
                                    acc += dyo[t] * xc[(t as isize + shift) as usize];
                                }
                                let widx = (o * c_in + c) * k + kk;
                                g.weight[widx] += acc;
                                if need_dx {
                                    let wv = w.data[widx];
                                    if wv != T::zero() {
                                        let dxc = &mut dx[c * len..(c + 1) * len];
                                        for t in t0..t1 {
                                            dxc[(t as isize + shift) as usize] += wv * dyo[t];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    dx
                }
                Op::Relu => dy
                    .iter()
                    .zip(&x.data)
                    .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                    .collect(),
                Op::MaxPool { .. } => {
                    let args = trace.pool_args[i].as_ref().unwrap();
                    let len = x.shape[1];
                    let out_len = if x.shape[0] == 0 { 0 } else { args.len() / x.shape[0] };
                    let mut dx = vec![T::zero(); x.len()];
                    for (j, (&d, &a)) in dy.iter().zip(args).enumerate() {
                        let ch = j / out_len.max(1);
                        dx[ch * len + a] += d;
                    }
                    dx
                }
                Op::Flatten => dy,
            };
        }
        Ok((loss, probs, grads))
    }

    /// Mean-over-batch gradients of the cross-entropy loss. Per-example work
    /// runs in parallel; the reduction is sequential in batch order, so the
    /// result does not depend on thread scheduling. Masked parameters get
    /// zero gradient.
    pub fn backprop_grads(&self, batch: &[(&[T], usize)]) -> Result<BatchGrads<T>> {
        if batch.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let per: Vec<Result<(T, Vec<T>, GradientSet<T>)>> =
            batch.par_iter().map(|(x, y)| self.sample_grads(x, *y)).collect();
        let mut total = GradientSet::zeros_like(&self.params);
        let mut loss = 0.0f64;
        let mut correct = 0;
        for (r, (_, y)) in per.into_iter().zip(batch) {
            let (l, p, g) = r?;
            loss += l.to_f64().unwrap();
            if argmax(&p) == *y {
                correct += 1;
            }
            total.add_assign(&g);
        }
        total.scale(T::one() / lit(batch.len() as f64));
        total.mask(&self.params);
        Ok(BatchGrads {
            grads: total,
            mean_loss: loss / batch.len() as f64,
            correct,
        })
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            ops: self.ops.clone(),
            params: self.params.cast(),
            input_channels: self.input_channels,
            input_length: self.input_length,
        }
    }
}

/// `w <- w - lr * (g + weight_decay * w)` for weights, `b <- b - lr * g` for
/// biases, then masks are re-applied.
pub fn sgd_step<T: Real>(params: &mut ParamSet<T>, grads: &GradientSet<T>, lr: T, weight_decay: T) {
    for (p, g) in params.layers.iter_mut().zip(&grads.layers) {
        for (w, &gw) in p.weight.data.iter_mut().zip(&g.weight) {
            *w -= lr * (gw + weight_decay * *w);
        }
        for (b, &gb) in p.bias.data.iter_mut().zip(&g.bias) {
            *b -= lr * gb;
        }
        p.apply_masks();
    }
}

/// Index of the largest value, first on ties.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
