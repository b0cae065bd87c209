//! Mini-batch SGD with validation-based early stopping, and grid search
//! with stratified k-fold cross-validation.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afib_model::{build_model, ArchConfig, Model};
use crate::error::{Error, Result};
use crate::metrics::{confusion_matrix, ConfusionMatrix};
use crate::nn_core::{argmax, cross_entropy_loss, lit, sgd_step, softmax, Network, ParamSet, Real};
use crate::preprocess::{kfold_indices, prepare_record};
use crate::rng::{derive_seed, SplitMix64};
use crate::signal_io::{Dataset, Label};

/// A preprocessed, fixed-length input with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub input: Vec<T>,
    pub label: Label,
}

/// Standardizes and fits every record to `length`.
pub fn prepare_examples<T: Real>(dataset: &Dataset, length: usize) -> Vec<Example<T>> {
    dataset
        .records
        .par_iter()
        .map(|r| Example {
            input: prepare_record(&r.samples, length).values.into_iter().map(lit).collect(),
            label: r.label,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            weight_decay: 1e-4,
            batch_size: 128,
            max_epochs: 100,
            patience: 10,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        // A zero learning rate is allowed so grids can include a no-op baseline.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning_rate {} must be >= 0", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Validation(format!("weight_decay {} must be >= 0", self.weight_decay)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Validation("batch_size, max_epochs and patience must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Validation("patience cannot exceed max_epochs".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the restored (lowest validation loss) epoch.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6}",
                e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<Label>,
}

impl Evaluation {
    pub fn confusion(&self, examples: &[Example<impl Real>]) -> Result<ConfusionMatrix> {
        let labels: Vec<Label> = examples.iter().map(|e| e.label).collect();
        confusion_matrix(&self.predictions, &labels)
    }
}

pub fn evaluate_network<T: Real>(net: &Network<T>, examples: &[Example<T>]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Validation("cannot evaluate on an empty set".into()));
    }
    let out: Vec<Result<(f64, Label)>> = examples
        .par_iter()
        .map(|e| {
            let p = net.forward(&e.input)?;
            let loss = cross_entropy_loss(&p, e.label.index()).to_f64().unwrap();
            Ok((loss, Label::from_index(argmax(&p)).unwrap()))
        })
        .collect();
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(examples.len());
    for r in out {
        let (l, p) = r?;
        loss += l;
        predictions.push(p);
    }
    let correct = predictions.iter().zip(examples).filter(|(p, e)| **p == e.label).count();
    Ok(Evaluation {
        mean_loss: loss / examples.len() as f64,
        accuracy: correct as f64 / examples.len() as f64,
        predictions,
    })
}

pub fn evaluate<T: Real>(model: &Model<T>, examples: &[Example<T>]) -> Result<Evaluation> {
    evaluate_network(&model.net, examples)
}

/// Maps shadow parameters to the values used in the forward/backward pass.
pub type Projection<'a, T> = &'a (dyn Fn(&ParamSet<T>) -> ParamSet<T> + Sync);

/// Plain training: the network's own parameters are used and updated.
pub fn train<T: Real>(
    model: &Model<T>,
    train_set: &[Example<T>],
    val_set: &[Example<T>],
    hp: &Hyperparams,
    seed: u64,
) -> Result<(Model<T>, TrainHistory)> {
    train_projected(model, train_set, val_set, hp, seed, None)
}

/// Training loop shared by plain and quantization-aware training. With a
/// projection, gradients are taken at `projection(shadow)` and applied to
/// the shadow parameters (straight-through); validation also uses the
/// projected parameters and the returned model holds the projection of the
/// best shadow.
pub fn train_projected<T: Real>(
    model: &Model<T>,
    train_set: &[Example<T>],
    val_set: &[Example<T>],
    hp: &Hyperparams,
    seed: u64,
    projection: Option<Projection<'_, T>>,
) -> Result<(Model<T>, TrainHistory)> {
    hp.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Validation("training and validation sets must be nonempty".into()));
    }
    let expected = model.net.input_channels * model.net.input_length;
    if let Some(bad) = train_set.iter().chain(val_set).find(|e| e.input.len() != expected) {
        return Err(Error::Dimension(format!(
            "example has {} values, model expects {expected}",
            bad.input.len()
        )));
    }
    let project = |net: &Network<T>| -> Network<T> {
        match projection {
            Some(f) => Network {
                ops: net.ops.clone(),
                params: f(&net.params),
                input_channels: net.input_channels,
                input_length: net.input_length,
            },
            None => net.clone(),
        }
    };

    let lr: T = lit(hp.learning_rate);
    let wd: T = lit(hp.weight_decay);
    let mut rng = SplitMix64::new(seed);
    let mut shadow = model.net.clone();
    shadow.params.apply_masks();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ParamSet<T>)> = None;
    let mut stale = 0;

    for epoch in 0..hp.max_epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(hp.batch_size) {
            let active = project(&shadow);
            let batch: Vec<(&[T], usize)> = chunk
                .iter()
                .map(|&i| (train_set[i].input.as_slice(), train_set[i].label.index()))
                .collect();
            let bg = active.backprop_grads(&batch)?;
            if !bg.mean_loss.is_finite() {
                return Err(Error::Numeric {
                    layer: "loss".into(),
                    msg: format!("non-finite training loss at epoch {}", epoch + 1),
                });
            }
            loss_sum += bg.mean_loss * chunk.len() as f64;
            correct += bg.correct;
            sgd_step(&mut shadow.params, &bg.grads, lr, wd);
        }
        let val = evaluate_network(&project(&shadow), val_set)?;
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_loss: val.mean_loss,
            val_accuracy: val.accuracy,
        });
        let improved = best.as_ref().is_none_or(|(b, _)| val.mean_loss < *b);
        if improved {
            best = Some((val.mean_loss, shadow.params.clone()));
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= hp.patience {
                break;
            }
        }
    }

    let (_, best_params) = best.expect("at least one epoch");
    shadow.params = best_params;
    Ok((
        Model {
            config: model.config.clone(),
            net: project(&shadow),
        },
        history,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub hyperparams: Hyperparams,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_index: usize,
    pub best: Hyperparams,
    pub scores: Vec<GridScore>,
}

/// For each grid entry, trains a freshly initialized model on every
/// stratified fold and scores accuracy on the held-out fold, which also
/// serves as the early-stopping set. The best mean accuracy wins; ties go to
/// the earliest entry.
pub fn grid_search<T: Real>(
    grid: &[Hyperparams],
    dataset: &Dataset,
    arch: &ArchConfig,
    k: usize,
    seed: u64,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::Validation("empty hyperparameter grid".into()));
    }
    let examples: Vec<Example<T>> = prepare_examples(dataset, arch.input_length);
    let folds = kfold_indices(dataset, k, derive_seed(seed, "grid.folds"))?;
    let model_seed = derive_seed(seed, "grid.init");
    let mut scores = Vec::with_capacity(grid.len());
    for (gi, hp) in grid.iter().enumerate() {
        let run = || -> Result<GridScore> {
            hp.validate()?;
            let mut accs = Vec::with_capacity(k);
            for (fi, (tr, te)) in folds.iter().enumerate() {
                let tr: Vec<Example<T>> = tr.iter().map(|&i| examples[i].clone()).collect();
                let te: Vec<Example<T>> = te.iter().map(|&i| examples[i].clone()).collect();
                let model = build_model::<T>(arch, model_seed)?;
                let fold_seed = derive_seed(seed, &format!("grid.{gi}.{fi}"));
                let (trained, _) = train(&model, &tr, &te, hp, fold_seed)?;
                accs.push(evaluate(&trained, &te)?.accuracy);
            }
            Ok(GridScore {
                hyperparams: *hp,
                mean_accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
                fold_accuracies: accs,
            })
        };
        scores.push(run().map_err(|e| Error::GridConfig {
            index: gi,
            source: Box::new(e),
        })?);
    }
    let mut best_index = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.mean_accuracy > scores[best_index].mean_accuracy {
            best_index = i;
        }
    }
    Ok(GridResult {
        best_index,
        best: grid[best_index],
        scores,
    })
}

/// Class probabilities for every example, in order.
pub fn predict_probs<T: Real>(model: &Model<T>, examples: &[Example<T>]) -> Result<Vec<Vec<T>>> {
    examples
        .par_iter()
        .map(|e| Ok(softmax(&model.net.logits(&e.input)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::afib_model::{ConvLayerConfig, DenseLayerConfig};
    use crate::nn_core::Padding;

    pub(crate) fn tiny_arch(len: usize) -> ArchConfig {
        ArchConfig {
            input_length: len,
            input_channels: 1,
            padding: Padding::SameZero,
            conv_layers: vec![ConvLayerConfig {
                channels: 2,
                kernel_size: 3,
                pool_after: true,
                pool_window: 2,
            }],
            dense_layers: vec![DenseLayerConfig { units: 4 }],
            n_classes: 4,
        }
    }

    /// Class c puts a positive pulse in quarter c of the input.
    fn separable(n_per_class: usize, len: usize, seed: u64) -> Vec<Example<f32>> {
        let mut rng = SplitMix64::new(seed);
        let mut out = Vec::new();
        for l in Label::ALL {
            for _ in 0..n_per_class {
                let mut x: Vec<f32> = (0..len).map(|_| (rng.normal() * 0.1) as f32).collect();
                let q = len / 4;
                for v in &mut x[l.index() * q..(l.index() + 1) * q] {
                    *v += 1.0;
                }
                out.push(Example { input: x, label: l });
            }
        }
        out
    }

    #[test]
    fn learns_separable_toy_set() {
        let arch = tiny_arch(16);
        let model = build_model::<f32>(&arch, 1).unwrap();
        let data = separable(20, 16, 2);
        let hp = Hyperparams {
            learning_rate: 0.2,
            weight_decay: 0.0,
            batch_size: 8,
            max_epochs: 30,
            patience: 30,
        };
        let (trained, hist) = train(&model, &data, &data, &hp, 3).unwrap();
        assert!(hist.epochs.len() <= 30);
        let acc = evaluate(&trained, &data).unwrap().accuracy;
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn restores_best_epoch_and_is_deterministic() {
        let arch = tiny_arch(16);
        let model = build_model::<f32>(&arch, 4).unwrap();
        let tr = separable(10, 16, 5);
        let va = separable(5, 16, 6);
        let hp = Hyperparams {
            learning_rate: 0.5,
            weight_decay: 0.0,
            batch_size: 4,
            max_epochs: 15,
            patience: 3,
        };
        let (m1, h1) = train(&model, &tr, &va, &hp, 9).unwrap();
        let (m2, h2) = train(&model, &tr, &va, &hp, 9).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        let min = h1.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(h1.best().unwrap().val_loss, min);
        let again = evaluate(&m1, &va).unwrap().mean_loss;
        assert!((again - min).abs() < 1e-9);
    }

    #[test]
    fn patience_one_stops_only_on_first_regression() {
        let arch = tiny_arch(16);
        let model = build_model::<f32>(&arch, 7).unwrap();
        let data = separable(10, 16, 8);
        let hp = Hyperparams {
            learning_rate: 0.05,
            weight_decay: 0.0,
            batch_size: 40,
            max_epochs: 40,
            patience: 1,
        };
        let (_, h) = train(&model, &data, &data, &hp, 1).unwrap();
        let n = h.epochs.len();
        assert!(n >= 5, "stopped after {n} epochs");
        for w in h.epochs[..n - 1].windows(2) {
            assert!(w[1].val_loss < w[0].val_loss);
        }
    }

    #[test]
    fn default_history_never_exceeds_max_epochs() {
        let arch = tiny_arch(8);
        let model = build_model::<f32>(&arch, 1).unwrap();
        let data = separable(2, 8, 1);
        let hp = Hyperparams { learning_rate: 0.0, ..Hyperparams::default() };
        let (_, h) = train(&model, &data, &data, &hp, 0).unwrap();
        assert!(h.epochs.len() <= 100);
        // no learning: loss never improves after the first epoch
        assert_eq!(h.epochs.len(), 1 + hp.patience);
    }

    #[test]
    fn masks_survive_training() {
        let arch = tiny_arch(16);
        let mut model = build_model::<f32>(&arch, 3).unwrap();
        let mask: Vec<bool> = (0..model.net.params.layers[1].weight.len()).map(|i| i % 3 != 0).collect();
        model.net.params.layers[1].weight_mask = Some(mask);
        model.net.params.apply_masks();
        let data = separable(5, 16, 2);
        let hp = Hyperparams {
            learning_rate: 0.3,
            weight_decay: 0.01,
            batch_size: 4,
            max_epochs: 5,
            patience: 5,
        };
        let (m, _) = train(&model, &data, &data, &hp, 4).unwrap();
        assert!(m.net.params.masks_respected());
    }

    #[test]
    fn rejects_bad_hyperparams() {
        let hp = Hyperparams { patience: 200, ..Hyperparams::default() };
        assert!(hp.validate().is_err());
        let hp = Hyperparams { learning_rate: -1.0, ..Hyperparams::default() };
        assert!(hp.validate().is_err());
        let json = r#"{"learning_rate": 0.1, "momentum": 0.9}"#;
        assert!(serde_json::from_str::<Hyperparams>(json).is_err());
    }

    #[test]
    fn history_csv_header() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 1.0,
                train_accuracy: 0.5,
                val_loss: 1.1,
                val_accuracy: 0.4,
            }],
            best_epoch: 0,
        };
        assert_eq!(
            h.to_csv(),
            "epoch,train_loss,train_acc,val_loss,val_acc\n1,1.000000,0.500000,1.100000,0.400000\n"
        );
    }
}
