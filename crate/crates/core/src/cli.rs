//! Batch command line. Each subcommand reads and writes only the paths
//! given on the command line, so stages can be rerun and checked one at a
//! time. All randomness comes from one seed: every stage draws its own
//! sub-seed with [`derive_seed`] and the stage name.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime or
//! numeric failure. Failures also print one JSON object on stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::afib_model::{build_model, feature_map_sparsity, weight_sparsity, ArchConfig, Model};
use crate::error::{Error, Result};
use crate::metrics::{averaged_metrics, confusion_matrix, Averaging, EvalReport, ModelBytes};
use crate::packfmt::{pack, read_packed, size_report, Scheme, RLE4_EMAX};
use crate::preprocess::{padding_report, prepare_record, stratified_split_indices, SplitIndices, SplitSpec};
use crate::prune::{filter_correlation_prune, iterative_prune, write_prune_report, PruneSchedule};
use crate::quantize::{qat_train, sweep_bitwidths, QuantConfig, SweepData};
use crate::rng::derive_seed;
use crate::shift_infer::{quantized_forward, ShiftModel, ShiftOptions};
use crate::signal_io::{
    generate_synthetic_dataset, load_dataset_dir, load_signal, write_dataset_dir, DataSource, Dataset, Label,
    SignalFormat,
};
use crate::train::{evaluate, grid_search, predict_probs, prepare_examples, train, Example, Hyperparams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub format: SignalFormat,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_class: 100,
            min_length: 450,
            max_length: 750,
            format: SignalFormat::CsvInt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterPruneConfig {
    pub clusters_k: usize,
    pub tau: f64,
    /// Calibration inputs drawn from the start of the training split.
    #[serde(default = "default_calibration")]
    pub calibration_records: usize,
}

fn default_calibration() -> usize {
    32
}

fn default_qat_hp() -> Hyperparams {
    PruneSchedule::default().fine_tune_hp
}

/// Everything a pipeline run needs. Unknown keys are rejected and missing
/// keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub arch: ArchConfig,
    pub hyperparams: Hyperparams,
    /// Candidates for k-fold grid search; empty skips the search.
    pub grid: Vec<Hyperparams>,
    pub folds: usize,
    pub split_fractions: (f64, f64, f64),
    pub prune: PruneSchedule,
    pub filter_prune: Option<FilterPruneConfig>,
    pub quant: QuantConfig,
    #[serde(default = "default_qat_hp")]
    pub qat_hp: Hyperparams,
    /// Bit widths for the optional sweep table.
    pub sweep_bits: Vec<u32>,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            arch: ArchConfig::default(),
            hyperparams: Hyperparams::default(),
            grid: Vec::new(),
            folds: 5,
            split_fractions: SplitSpec::default().fractions,
            prune: PruneSchedule::default(),
            filter_prune: None,
            quant: QuantConfig::default(),
            qat_hp: default_qat_hp(),
            sweep_bits: Vec::new(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.hyperparams.validate()?;
        for hp in &self.grid {
            hp.validate()?;
        }
        if self.folds < 2 {
            return Err(Error::Validation("folds must be at least 2".into()));
        }
        self.split_spec().validate()?;
        self.prune.validate()?;
        self.quant.validate()?;
        self.qat_hp.validate()?;
        for &b in &self.sweep_bits {
            QuantConfig::with_bits(b).validate()?;
        }
        if let Some(f) = &self.filter_prune {
            if f.clusters_k == 0 || f.calibration_records == 0 || !f.tau.is_finite() {
                return Err(Error::Validation(
                    "filter_prune needs clusters_k >= 1, calibration_records >= 1 and a finite tau".into(),
                ));
            }
        }
        let s = &self.synth;
        if s.n_per_class == 0 || s.min_length == 0 || s.min_length > s.max_length {
            return Err(Error::Validation("invalid synth settings".into()));
        }
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            fractions: self.split_fractions,
            seed: derive_seed(self.seed, "split"),
        }
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }
}

#[derive(Debug, Parser)]
#[command(name = "sqnz", version, about = "Prune, quantize, pack and run 1D CNN ECG classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset directory.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the padding report and the stratified split of a dataset.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the baseline model (with optional grid search).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Iterative magnitude pruning with fine-tuning.
    Prune {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantization-aware training to power-of-two weights.
    Quantize {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repack a quantized model with the sparse nibble scheme.
    Pack {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the size report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a model on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the integer shift engine.
        #[arg(long)]
        shift: bool,
        #[arg(long, default_value_t = 8)]
        frac_bits: u32,
        /// Micro instead of macro averaging.
        #[arg(long)]
        micro: bool,
    },
    /// Classify one signal file.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        shift: bool,
        #[arg(long, default_value_t = 8)]
        frac_bits: u32,
    },
    /// Combine evaluation reports into one summary table.
    Report {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a model container. Zero weights become masked so later training
/// keeps them at zero.
pub fn load_model(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let mut model = read_packed(path)?.to_model()?;
    for l in &mut model.net.params.layers {
        if l.weight.data().contains(&0.0) {
            let mask: Vec<bool> = l.weight.data().iter().map(|w| *w != 0.0).collect();
            l.weight_mask = Some(mask);
        }
    }
    Ok(model)
}

/// Sparse nibble scheme when every value fits it, dense f32 otherwise.
pub fn best_scheme(model: &Model<f32>) -> Scheme {
    if crate::packfmt::rle4_codes(model).is_ok() {
        Scheme::SparseRle4
    } else {
        Scheme::DenseF32
    }
}

struct Splits {
    indices: SplitIndices,
    train: Vec<Example<f32>>,
    val: Vec<Example<f32>>,
    test: Vec<Example<f32>>,
}

fn load_splits(cfg: &RunConfig, dir: &Path) -> Result<(Dataset, Splits)> {
    let data = load_dataset_dir(dir, DataSource::Real)?;
    let indices = stratified_split_indices(&data, &cfg.split_spec())?;
    let len = cfg.arch.input_length;
    let ex = |idx: &[usize]| prepare_examples::<f32>(&data.subset(idx), len);
    let splits = Splits {
        train: ex(&indices.train),
        val: ex(&indices.val),
        test: ex(&indices.test),
        indices,
    };
    Ok((data, splits))
}

#[derive(Serialize)]
struct SplitFile<'a> {
    train: Vec<&'a str>,
    val: Vec<&'a str>,
    test: Vec<&'a str>,
}

fn check_arch(cfg: &RunConfig, model: &Model<f32>) -> Result<()> {
    if model.config != cfg.arch {
        return Err(Error::Validation("model architecture differs from the configuration".into()));
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, out } => {
            let cfg = load_config(&common)?;
            let s = &cfg.synth;
            let data = generate_synthetic_dataset(s.n_per_class, (s.min_length, s.max_length), cfg.stage_seed("synth"))?;
            write_dataset_dir(&out, &data, s.format)
        }
        Command::Preprocess { common, input, out } => {
            let cfg = load_config(&common)?;
            let data = load_dataset_dir(&input, DataSource::Real)?;
            create_dir(&out)?;
            padding_report(&data, cfg.arch.input_length)?.write_csv(out.join("padding_report.csv"))?;
            let idx = stratified_split_indices(&data, &cfg.split_spec())?;
            let ids = |v: &[usize]| v.iter().map(|&i| data.records[i].record_id.as_str()).collect();
            let file = SplitFile {
                train: ids(&idx.train),
                val: ids(&idx.val),
                test: ids(&idx.test),
            };
            write(&out.join("split.json"), serde_json::to_string_pretty(&file)?)
        }
        Command::Train { common, input, out } => {
            let cfg = load_config(&common)?;
            let (data, s) = load_splits(&cfg, &input)?;
            create_dir(&out)?;
            let mut hp = cfg.hyperparams;
            if !cfg.grid.is_empty() {
                let pool = data.subset(&s.indices.train);
                let result = grid_search::<f32>(&cfg.grid, &pool, &cfg.arch, cfg.folds, cfg.stage_seed("grid"))?;
                write(&out.join("grid.json"), serde_json::to_string_pretty(&result)?)?;
                hp = result.best;
            }
            let init = build_model::<f32>(&cfg.arch, cfg.stage_seed("init"))?;
            let (model, history) = train(&init, &s.train, &s.val, &hp, cfg.stage_seed("train"))?;
            history.write_csv(out.join("history.csv"))?;
            write(&out.join("model.sqnz"), pack(&model, Scheme::DenseF32)?)
        }
        Command::Prune {
            common,
            input,
            data,
            out,
        } => {
            let cfg = load_config(&common)?;
            let mut model = load_model(&input)?;
            check_arch(&cfg, &model)?;
            let (_, s) = load_splits(&cfg, &data)?;
            create_dir(&out)?;
            if let Some(f) = cfg.filter_prune {
                let calib: Vec<Vec<f32>> = s.train.iter().take(f.calibration_records).map(|e| e.input.clone()).collect();
                let (m, report) =
                    filter_correlation_prune(&model, &calib, f.clusters_k, f.tau, cfg.stage_seed("filter-prune"))?;
                write(&out.join("filter_prune.json"), serde_json::to_string_pretty(&report)?)?;
                model = m;
            }
            let (pruned, steps) = iterative_prune(&model, &cfg.prune, &s.train, &s.val, cfg.stage_seed("prune"))?;
            write_prune_report(&steps, out.join("prune_steps.csv"))?;
            write(&out.join("model.sqnz"), pack(&pruned, Scheme::DenseF32)?)
        }
        Command::Quantize {
            common,
            input,
            data,
            out,
        } => {
            let cfg = load_config(&common)?;
            let model = load_model(&input)?;
            check_arch(&cfg, &model)?;
            let (_, s) = load_splits(&cfg, &data)?;
            create_dir(&out)?;
            let seed = cfg.stage_seed("quantize");
            if !cfg.sweep_bits.is_empty() {
                let sweep_data = SweepData {
                    train: &s.train,
                    val: &s.val,
                    test: &s.test,
                };
                sweep_bitwidths(&model, &cfg.sweep_bits, &sweep_data, &cfg.qat_hp, seed)?
                    .write_csv(out.join("sweep.csv"))?;
            }
            let (q, history) = qat_train(&model, &cfg.quant, &s.train, &s.val, &cfg.qat_hp, seed)?;
            history.write_csv(out.join("history.csv"))?;
            let scheme = if cfg.quant.emax() <= RLE4_EMAX { Scheme::SparseRle4 } else { Scheme::DenseF32 };
            write(&out.join("model.sqnz"), pack(&q, scheme)?)
        }
        Command::Pack {
            common,
            input,
            out,
            report,
        } => {
            load_config(&common)?;
            let model = read_packed(&input)?.to_model()?;
            let bytes = pack(&model, Scheme::SparseRle4)?;
            let sizes = serde_json::to_string_pretty(&size_report(&model, Scheme::SparseRle4)?)?;
            write(&out, bytes)?;
            if let Some(r) = report {
                write(&r, &sizes)?;
            }
            println!("{sizes}");
            Ok(())
        }
        Command::Eval {
            common,
            input,
            data,
            out,
            shift,
            frac_bits,
            micro,
        } => {
            let cfg = load_config(&common)?;
            let stored = fs::metadata(&input).map_err(|e| Error::io(&input, e))?.len() as usize;
            let model = load_model(&input)?;
            check_arch(&cfg, &model)?;
            let (_, s) = load_splits(&cfg, &data)?;
            let labels: Vec<Label> = s.test.iter().map(|e| e.label).collect();
            let predictions = if shift {
                let engine = ShiftModel::from_packed(
                    &read_packed(&input)?,
                    ShiftOptions {
                        frac_bits,
                        skip_zero: true,
                    },
                )?;
                s.test
                    .iter()
                    .map(|e| {
                        let x: Vec<f64> = e.input.iter().map(|&v| f64::from(v)).collect();
                        let (p, _) = quantized_forward(&engine, &x)?;
                        Ok(Label::from_index(crate::nn_core::argmax(&p)).unwrap())
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                evaluate(&model, &s.test)?.predictions
            };
            let cm = confusion_matrix(&predictions, &labels)?;
            let inputs: Vec<Vec<f32>> = s.test.iter().map(|e| e.input.clone()).collect();
            let mut report = EvalReport::new(cm, weight_sparsity(&model), Some(feature_map_sparsity(&model, &inputs)?));
            if micro {
                report.averaging = Averaging::Micro;
                report.metrics = averaged_metrics(&cm, Averaging::Micro);
            }
            report.model_bytes = Some(ModelBytes {
                dense_f32_bytes: 4 * model.param_count(),
                stored_bytes: stored,
            });
            report.write_json(&out)
        }
        Command::Infer {
            model,
            input,
            shift,
            frac_bits,
        } => {
            let packed = read_packed(&model)?;
            let format = SignalFormat::from_path(&input).unwrap_or(SignalFormat::CsvInt);
            let samples = load_signal(&input, format)?;
            let x = prepare_record(&samples, packed.config.input_length).values;
            let probs: Vec<f64> = if shift {
                let engine = ShiftModel::from_packed(
                    &packed,
                    ShiftOptions {
                        frac_bits,
                        skip_zero: true,
                    },
                )?;
                quantized_forward(&engine, &x)?.0
            } else {
                let m = packed.to_model()?;
                let example = Example {
                    input: x.iter().map(|&v| v as f32).collect(),
                    label: Label::N,
                };
                predict_probs(&m, &[example])?
                    .remove(0)
                    .into_iter()
                    .map(f64::from)
                    .collect()
            };
            let label = Label::from_index(crate::nn_core::argmax(&probs)).unwrap();
            let mut line = label.to_string();
            for p in &probs {
                let _ = write!(line, ",{p:.6}");
            }
            println!("{line}");
            Ok(())
        }
        Command::Report { inputs, out } => {
            let mut csv = String::from(
                "model,accuracy,precision,sensitivity,specificity,f1,cinc_f1,model_sparsity,feature_map_sparsity,dense_f32_bytes,stored_bytes,compression_ratio\n",
            );
            for path in &inputs {
                let r = EvalReport::read_json(path)?;
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let m = r.metrics;
                let (dense, stored, ratio) = match &r.model_bytes {
                    Some(b) => (
                        b.dense_f32_bytes.to_string(),
                        b.stored_bytes.to_string(),
                        format!("{:.3}", b.dense_f32_bytes as f64 / b.stored_bytes.max(1) as f64),
                    ),
                    None => Default::default(),
                };
                let fms = r.feature_map_sparsity.map(|v| format!("{v:.6}")).unwrap_or_default();
                let _ = writeln!(
                    csv,
                    "{name},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{fms},{dense},{stored},{ratio}",
                    m.accuracy, m.precision, m.sensitivity, m.specificity, m.f1, r.cinc_f1, r.model_sparsity
                );
            }
            write(&out, csv)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return 0;
            }
            eprintln!("{}", serde_json::json!({"error": "usage", "message": e.to_string().trim()}));
            return 1;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let (kind, code) = if e.is_validation() { ("validation", 1) } else { ("runtime", 2) };
            eprintln!("{}", serde_json::json!({"error": kind, "message": e.to_string()}));
            code
        }
    }
}
