//! ECG record ingestion and deterministic synthetic datasets.
//!
//! Records on disk live in a directory holding a `REFERENCE.csv` label file
//! (`record_id,label` per line, label one of `N`, `A`, `O`, `~`) and one
//! signal file per record, either `<id>.csv` (integers separated by commas
//! or newlines) or `<id>.bin` (little-endian `i16` samples).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const REFERENCE_FILE: &str = "REFERENCE.csv";

/// Rhythm class. Discriminants give the row/column order used everywhere
/// (confusion matrices, softmax outputs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    N = 0,
    A = 1,
    O = 2,
    Noisy = 3,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::N, Label::A, Label::O, Label::Noisy];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn from_char(c: char) -> Option<Label> {
        match c {
            'N' => Some(Label::N),
            'A' => Some(Label::A),
            'O' => Some(Label::O),
            '~' => Some(Label::Noisy),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Label::N => 'N',
            Label::A => 'A',
            Label::O => 'O',
            Label::Noisy => '~',
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSignal {
    pub record_id: String,
    pub samples: Vec<i16>,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<LabeledSignal>,
    pub source: DataSource,
}

impl Dataset {
    /// Builds a dataset, rejecting empty records and duplicate ids.
    pub fn new(records: Vec<LabeledSignal>, source: DataSource) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.samples.is_empty() {
                return Err(Error::Validation(format!("record {} has no samples", r.record_id)));
            }
            if !seen.insert(r.record_id.as_str()) {
                return Err(Error::Validation(format!("duplicate record id {}", r.record_id)));
            }
        }
        Ok(Self { records, source })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> [usize; Label::COUNT] {
        let mut counts = [0; Label::COUNT];
        for r in &self.records {
            counts[r.label.index()] += 1;
        }
        counts
    }

    /// Subset by index, preserving the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            source: self.source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalFormat {
    CsvInt,
    RawI16Le,
}

impl SignalFormat {
    pub fn extension(self) -> &'static str {
        match self {
            SignalFormat::CsvInt => "csv",
            SignalFormat::RawI16Le => "bin",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" | "txt" => Some(SignalFormat::CsvInt),
            "bin" | "raw" => Some(SignalFormat::RawI16Le),
            _ => None,
        }
    }
}

pub fn parse_reference_labels(text: &str) -> Result<IndexMap<String, Label>> {
    let mut out = IndexMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (id, label) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("expected `record_id,label`, got {line:?}"),
        })?;
        let id = id.trim();
        let label = label.trim();
        if id.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty record id".into(),
            });
        }
        let mut chars = label.chars();
        let parsed = match (chars.next(), chars.next()) {
            (Some(c), None) => Label::from_char(c),
            _ => None,
        };
        let label = parsed.ok_or_else(|| {
            Error::Validation(format!("unknown label '{label}' at line {line_no}"))
        })?;
        if out.insert(id.to_string(), label).is_some() {
            return Err(Error::Validation(format!("duplicate record id {id} at line {line_no}")));
        }
    }
    Ok(out)
}

pub fn load_reference_labels(path: impl AsRef<Path>) -> Result<IndexMap<String, Label>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_reference_labels(&text)
}

pub fn parse_csv_samples(text: &str) -> Result<Vec<i16>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for tok in line.split(',') {
            let tok = tok.trim();
            if tok.is_empty() {
                continue;
            }
            let v = tok.parse::<i16>().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("not a 16-bit integer: {tok:?}"),
            })?;
            out.push(v);
        }
    }
    Ok(out)
}

pub fn parse_raw_i16le(bytes: &[u8]) -> Result<Vec<i16>> {
    if !bytes.len().is_multiple_of(2) {
        return Err(Error::Format("truncated sample".into()));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect())
}

pub fn load_signal(path: impl AsRef<Path>, format: SignalFormat) -> Result<Vec<i16>> {
    let path = path.as_ref();
    match format {
        SignalFormat::CsvInt => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv_samples(&text)
        }
        SignalFormat::RawI16Le => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            parse_raw_i16le(&bytes)
        }
    }
}

pub fn encode_signal(samples: &[i16], format: SignalFormat) -> Vec<u8> {
    match format {
        SignalFormat::CsvInt => {
            let mut s = String::with_capacity(samples.len() * 5);
            for v in samples {
                s.push_str(&v.to_string());
                s.push('\n');
            }
            s.into_bytes()
        }
        SignalFormat::RawI16Le => samples.iter().flat_map(|v| v.to_le_bytes()).collect(),
    }
}

pub fn write_signal(path: impl AsRef<Path>, samples: &[i16], format: SignalFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_signal(samples, format)).map_err(|e| Error::io(path, e))
}

/// Loads every record listed in `dir/REFERENCE.csv`. Each record's signal
/// is `<id>.csv` or, failing that, `<id>.bin`.
pub fn load_dataset_dir(dir: impl AsRef<Path>, source: DataSource) -> Result<Dataset> {
    let dir = dir.as_ref();
    let labels = load_reference_labels(dir.join(REFERENCE_FILE))?;
    let mut records = Vec::with_capacity(labels.len());
    for (id, label) in labels {
        let csv = dir.join(format!("{id}.csv"));
        let samples = if csv.exists() {
            load_signal(&csv, SignalFormat::CsvInt)?
        } else {
            load_signal(dir.join(format!("{id}.bin")), SignalFormat::RawI16Le)?
        };
        records.push(LabeledSignal {
            record_id: id,
            samples,
            label,
        });
    }
    Dataset::new(records, source)
}

pub fn write_dataset_dir(dir: impl AsRef<Path>, dataset: &Dataset, format: SignalFormat) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut reference = String::new();
    for r in &dataset.records {
        reference.push_str(&format!("{},{}\n", r.record_id, r.label));
        let path = dir.join(format!("{}.{}", r.record_id, format.extension()));
        write_signal(&path, &r.samples, format)?;
    }
    let path = dir.join(REFERENCE_FILE);
    fs::write(&path, reference).map_err(|e| Error::io(&path, e))
}

/// Parameters of the synthetic generators, in ADC units and samples.
const BEAT_AMPLITUDE: f64 = 900.0;
const BASE_INTERVAL: f64 = 60.0;
const NOISE_FLOOR: f64 = 25.0;

/// Generates `n_per_class` records per class with lengths uniform in
/// `length_range`. Records are emitted class by class (N, A, O, ~) and ids
/// are `S00000`, `S00001`, ...
///
/// The generators are separable by construction:
/// * `N`: regular beats with a trailing positive bump after each spike;
/// * `A`: strongly irregular intervals, no trailing bump, low fibrillatory ripple;
/// * `O`: intervals alternating short/long, spikes followed by a negative dip;
/// * `~`: broadband noise with occasional baseline jumps.
pub fn generate_synthetic_dataset(
    n_per_class: usize,
    length_range: (usize, usize),
    seed: u64,
) -> Result<Dataset> {
    let (min, max) = length_range;
    if n_per_class == 0 {
        return Err(Error::Validation("n_per_class must be at least 1".into()));
    }
    if min == 0 || min > max {
        return Err(Error::Validation(format!("invalid length range [{min},{max}]")));
    }
    let mut rng = SplitMix64::new(seed);
    let mut records = Vec::with_capacity(4 * n_per_class);
    for label in Label::ALL {
        for _ in 0..n_per_class {
            let len = rng.range_inclusive(min, max);
            let samples = synth_record(label, len, &mut rng);
            records.push(LabeledSignal {
                record_id: format!("S{:05}", records.len()),
                samples,
                label,
            });
        }
    }
    Dataset::new(records, DataSource::Synthetic)
}

fn synth_record(label: Label, len: usize, rng: &mut SplitMix64) -> Vec<i16> {
    let mut x = vec![0.0f64; len];
    let gain = rng.uniform(0.7, 1.3);
    let offset = rng.uniform(-200.0, 200.0);
    match label {
        Label::N => {
            let interval = BASE_INTERVAL * rng.uniform(0.9, 1.1);
            let mut t = rng.uniform(0.0, interval);
            while t < len as f64 {
                let jitter = rng.normal() * 1.0;
                add_spike(&mut x, t + jitter, BEAT_AMPLITUDE);
                add_bump(&mut x, t + jitter + 18.0, 6.0, 0.35 * BEAT_AMPLITUDE);
                t += interval;
            }
        }
        Label::A => {
            let mut t = rng.uniform(0.0, BASE_INTERVAL);
            while t < len as f64 {
                add_spike(&mut x, t, BEAT_AMPLITUDE);
                t += BASE_INTERVAL * rng.uniform(0.35, 1.65);
            }
            let freq = rng.uniform(0.25, 0.45);
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            for (i, v) in x.iter_mut().enumerate() {
                *v += 0.06 * BEAT_AMPLITUDE * (freq * i as f64 + phase).sin();
            }
        }
        Label::O => {
            let short = BASE_INTERVAL * rng.uniform(0.55, 0.65);
            let long = BASE_INTERVAL * rng.uniform(1.35, 1.45);
            let mut t = rng.uniform(0.0, long);
            let mut flip = rng.below(2) == 0;
            while t < len as f64 {
                add_spike(&mut x, t, BEAT_AMPLITUDE);
                add_bump(&mut x, t + 8.0, 4.0, -0.45 * BEAT_AMPLITUDE);
                t += if flip { short } else { long };
                flip = !flip;
            }
        }
        Label::Noisy => {
            let mut level = 0.0;
            for v in x.iter_mut() {
                if rng.next_f64() < 0.01 {
                    level = rng.uniform(-0.5, 0.5) * BEAT_AMPLITUDE;
                }
                *v = level + rng.normal() * 0.35 * BEAT_AMPLITUDE;
            }
        }
    }
    x.iter()
        .map(|&v| {
            let y = offset + gain * v + rng.normal() * NOISE_FLOOR;
            y.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
        })
        .collect()
}

/// Narrow triangular spike centred at `t`.
fn add_spike(x: &mut [f64], t: f64, amp: f64) {
    let half_width = 2.5;
    let lo = (t - half_width).ceil().max(0.0) as usize;
    let hi = ((t + half_width).floor() as isize).min(x.len() as isize - 1);
    if hi < 0 {
        return;
    }
    for i in lo..=hi as usize {
        let d = (i as f64 - t).abs();
        x[i] += amp * (1.0 - d / half_width).max(0.0);
    }
}

/// Gaussian bump centred at `t`.
fn add_bump(x: &mut [f64], t: f64, sigma: f64, amp: f64) {
    let lo = (t - 4.0 * sigma).floor().max(0.0) as usize;
    let hi = ((t + 4.0 * sigma).ceil() as usize).min(x.len());
    for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
        let d = (i as f64 - t) / sigma;
        *v += amp * (-0.5 * d * d).exp();
    }
}
