//! Weight pruning.
//!
//! [`magnitude_prune_step`] ranks `|w|` globally over every conv and dense
//! weight tensor (biases are never pruned) and zeroes and masks the
//! smallest entries. [`iterative_prune`] alternates that step with masked
//! fine-tuning. [`filter_correlation_prune`] removes whole conv filters whose
//! activations duplicate an earlier filter.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::afib_model::{weight_sparsity, weight_tensor_sparsity, Model};
use crate::error::{Error, Result};
use crate::nn_core::{Op, Real};
use crate::rng::{derive_seed, SplitMix64};
use crate::train::{evaluate, train, Example, Hyperparams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSchedule {
    pub sparsity_steps: Vec<f64>,
    pub fine_tune_hp: Hyperparams,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self {
            sparsity_steps: vec![0.5, 0.7, 0.8, 0.9],
            fine_tune_hp: Hyperparams {
                max_epochs: 10,
                patience: 3,
                ..Hyperparams::default()
            },
        }
    }
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        let s = &self.sparsity_steps;
        if s.is_empty() {
            return Err(Error::Validation("prune schedule has no steps".into()));
        }
        if s.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Validation("sparsity steps must lie in (0, 1)".into()));
        }
        if s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("sparsity steps must be strictly increasing".into()));
        }
        if *s.last().unwrap() > 0.99 {
            return Err(Error::Validation("final sparsity target must be at most 0.99".into()));
        }
        self.fine_tune_hp.validate()
    }
}

/// Number of weights that must be zero to reach `target` out of `n`. The
/// small slack absorbs products like `0.9 * 1000 = 900.0000000000001`.
pub fn prune_count(target: f64, n: usize) -> usize {
    ((target * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Zeroes and masks the `ceil(target * N)` smallest-magnitude weights, `N`
/// being the total weight count. Ties go to the earlier tensor, then the
/// lower flat index.
pub fn magnitude_prune_step<T: Real>(model: &Model<T>, target: f64) -> Result<Model<T>> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::Validation(format!("sparsity target {target} outside [0, 1)")));
    }
    let params = &model.net.params;
    let n = params.weight_count();
    let k = prune_count(target, n);
    let current = params.weight_zero_count();
    if k < current {
        return Err(Error::Validation(format!(
            "target {target} is below the current weight sparsity {:.6}",
            current as f64 / n as f64
        )));
    }
    let mut ranked: Vec<(T, usize, usize)> = params
        .layers
        .iter()
        .enumerate()
        .flat_map(|(li, l)| l.weight.data().iter().enumerate().map(move |(i, w)| (w.abs(), li, i)))
        .collect();
    // (|w|, tensor, index) is a total order with no equal keys.
    ranked.sort_unstable_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut out = model.clone();
    for &(_, li, i) in &ranked[..k] {
        let layer = &mut out.net.params.layers[li];
        layer.weight_mask_mut()[i] = false;
        layer.weight.data_mut()[i] = T::zero();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneStepReport {
    pub step: usize,
    pub target: f64,
    /// Zero fraction over weight tensors.
    pub achieved: f64,
    /// Zero fraction over weights and biases.
    pub model_sparsity: f64,
    pub val_accuracy: f64,
    pub epochs: usize,
}

pub fn prune_report_csv(steps: &[PruneStepReport]) -> String {
    let mut s = String::from("step,target,weight_sparsity,model_sparsity,val_accuracy,epochs\n");
    for r in steps {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{}",
            r.step, r.target, r.achieved, r.model_sparsity, r.val_accuracy, r.epochs
        );
    }
    s
}

pub fn write_prune_report(steps: &[PruneStepReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, prune_report_csv(steps)).map_err(|e| Error::io(path, e))
}

/// Alternates [`magnitude_prune_step`] with fine-tuning of the whole model
/// under the accumulated masks.
pub fn iterative_prune<T: Real>(
    model: &Model<T>,
    schedule: &PruneSchedule,
    train_set: &[Example<T>],
    val_set: &[Example<T>],
    seed: u64,
) -> Result<(Model<T>, Vec<PruneStepReport>)> {
    schedule.validate()?;
    let mut current = model.clone();
    let mut reports = Vec::with_capacity(schedule.sparsity_steps.len());
    for (i, &target) in schedule.sparsity_steps.iter().enumerate() {
        let pruned = magnitude_prune_step(&current, target)?;
        let step_seed = derive_seed(seed, &format!("prune-step-{i}"));
        let (tuned, history) = train(&pruned, train_set, val_set, &schedule.fine_tune_hp, step_seed)?;
        current = tuned;
        reports.push(PruneStepReport {
            step: i + 1,
            target,
            achieved: weight_tensor_sparsity(&current),
            model_sparsity: weight_sparsity(&current),
            val_accuracy: evaluate(&current, val_set)?.accuracy,
            epochs: history.epochs.len(),
        });
    }
    Ok((current, reports))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerFilterReport {
    pub layer: String,
    pub removed: Vec<usize>,
    /// Filters with constant activations, left out of the correlation test.
    pub degenerate: Vec<usize>,
    /// Cluster index per filter; `None` for degenerate filters.
    pub clusters: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterPruneReport {
    pub layers: Vec<LayerFilterReport>,
}

impl FilterPruneReport {
    pub fn total_removed(&self) -> usize {
        self.layers.iter().map(|l| l.removed.len()).sum()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Returns one cluster index per
/// point.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let k = k.clamp(1, n);
    let mut centers = vec![points[rng.below(n as u64) as usize].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.next_f64() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.below(n as u64) as usize
        };
        centers.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centers.last().unwrap()));
        }
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (j, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    assign
}

/// Centers and scales to unit norm; `None` for constant vectors. The dot
/// product of two results is their Pearson correlation.
fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1e-12 * (1.0 + mean.abs()) * (v.len() as f64).sqrt() {
        return None;
    }
    Some(c.into_iter().map(|x| x / norm).collect())
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (a, b) = (normalize(a)?, normalize(b)?);
    Some(a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0))
}

/// For every conv layer, collects each filter's post-ReLU activations over
/// the calibration inputs, clusters the filters with k-means, and within a
/// cluster removes the later filter of any pair with `|corr| > tau`. A
/// removed filter has its kernel and bias zeroed and masked. With
/// `tau >= 1` nothing is removed.
pub fn filter_correlation_prune<T: Real>(
    model: &Model<T>,
    calibration: &[Vec<T>],
    clusters_k: usize,
    tau: f64,
    seed: u64,
) -> Result<(Model<T>, FilterPruneReport)> {
    if calibration.is_empty() {
        return Err(Error::Validation("calibration set is empty".into()));
    }
    let ops = &model.net.ops;
    for op in ops {
        if let Op::Conv1d { layer, .. } = *op {
            let channels = model.net.params.layers[layer].weight.shape()[0];
            if clusters_k == 0 || clusters_k > channels {
                return Err(Error::Validation(format!(
                    "clusters_k must be in 1..={channels}, got {clusters_k}"
                )));
            }
        }
    }
    let traces = calibration
        .iter()
        .map(|x| model.net.trace(x))
        .collect::<Result<Vec<_>>>()?;
    let mut out = model.clone();
    let mut report = FilterPruneReport::default();
    let mut rng = SplitMix64::new(seed);
    for (oi, op) in ops.iter().enumerate() {
        let Op::Conv1d { layer, .. } = *op else { continue };
        // activation after the ReLU that follows this conv
        let act_index = if matches!(ops.get(oi + 1), Some(Op::Relu)) { oi + 2 } else { oi + 1 };
        let channels = model.net.params.layers[layer].weight.shape()[0];
        let mut acts = vec![Vec::new(); channels];
        for t in &traces {
            let v = &t.values[act_index];
            let len = v.shape()[1];
            for (c, a) in acts.iter_mut().enumerate() {
                a.extend(v.data()[c * len..(c + 1) * len].iter().map(|x| x.to_f64().unwrap()));
            }
        }
        let normed: Vec<Option<Vec<f64>>> = acts.iter().map(|a| normalize(a)).collect();
        let live: Vec<usize> = (0..channels).filter(|&c| normed[c].is_some()).collect();
        let degenerate: Vec<usize> = (0..channels).filter(|&c| normed[c].is_none()).collect();
        let points: Vec<Vec<f64>> = live.iter().map(|&c| normed[c].clone().unwrap()).collect();
        let assign = kmeans(&points, clusters_k, &mut rng);
        let mut clusters = vec![None; channels];
        for (&c, &a) in live.iter().zip(&assign) {
            clusters[c] = Some(a);
        }
        let mut removed = Vec::new();
        if tau < 1.0 {
            let mut gone = vec![false; channels];
            for (ii, &i) in live.iter().enumerate() {
                if gone[i] {
                    continue;
                }
                for (jj, &j) in live.iter().enumerate().skip(ii + 1) {
                    if gone[j] || assign[ii] != assign[jj] {
                        continue;
                    }
                    let (a, b) = (normed[i].as_ref().unwrap(), normed[j].as_ref().unwrap());
                    let r = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0);
                    if r.abs() > tau {
                        gone[j] = true;
                    }
                }
            }
            removed = (0..channels).filter(|&c| gone[c]).collect();
        }
        let p = &mut out.net.params.layers[layer];
        let per_filter = p.weight.len() / channels;
        for &c in &removed {
            let range = c * per_filter..(c + 1) * per_filter;
            p.weight.data_mut()[range.clone()].fill(T::zero());
            p.weight_mask_mut()[range].fill(false);
            p.bias.data_mut()[c] = T::zero();
            p.bias_mask_mut()[c] = false;
        }
        report.layers.push(LayerFilterReport {
            layer: p.name.clone(),
            removed,
            degenerate,
            clusters,
        });
    }
    Ok((out, report))
}
