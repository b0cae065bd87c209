//! Standardization, fixed-length inputs, padding audit and stratified splits.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::signal_io::{Dataset, Label};

pub const DEFAULT_INPUT_LENGTH: usize = 18_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FixedInput {
    pub values: Vec<f64>,
    pub was_padded: bool,
    pub was_trimmed: bool,
}

/// Zero mean, unit population variance per record. A constant record maps
/// to all zeros.
pub fn standardize(samples: &[i16]) -> Vec<f64> {
    let as_f64: Vec<f64> = samples.iter().map(|&s| f64::from(s)).collect();
    standardize_real(&as_f64)
}

pub fn standardize_real(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= f64::EPSILON * mean.abs().max(1.0) {
        return vec![0.0; values.len()];
    }
    let sd = var.sqrt();
    values.iter().map(|v| (v - mean) / sd).collect()
}

/// Zero-pads the tail or keeps the head so the output has exactly `length`
/// values.
pub fn fit_length(values: &[f64], length: usize) -> FixedInput {
    use std::cmp::Ordering;
    match values.len().cmp(&length) {
        Ordering::Less => {
            let mut v = values.to_vec();
            v.resize(length, 0.0);
            FixedInput {
                values: v,
                was_padded: true,
                was_trimmed: false,
            }
        }
        Ordering::Greater => FixedInput {
            values: values[..length].to_vec(),
            was_padded: false,
            was_trimmed: true,
        },
        Ordering::Equal => FixedInput {
            values: values.to_vec(),
            was_padded: false,
            was_trimmed: false,
        },
    }
}

/// Standardize then fit to `length`.
pub fn prepare_record(samples: &[i16], length: usize) -> FixedInput {
    fit_length(&standardize(samples), length)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddingRow {
    pub label: Label,
    pub padded_count: usize,
    pub total_count: usize,
    /// Percent of all padded records that belong to this class.
    pub padded_share: f64,
    /// Percent of all records that belong to this class.
    pub total_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddingReport {
    pub input_length: usize,
    pub rows: Vec<PaddingRow>,
    pub padded_total: usize,
    pub total: usize,
    /// Percent of all records that needed padding.
    pub padded_fraction: f64,
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

pub fn padding_report(dataset: &Dataset, length: usize) -> Result<PaddingReport> {
    if dataset.is_empty() {
        return Err(Error::Validation("padding report needs a nonempty dataset".into()));
    }
    let mut padded = [0usize; Label::COUNT];
    let mut total = [0usize; Label::COUNT];
    for r in &dataset.records {
        total[r.label.index()] += 1;
        if r.samples.len() < length {
            padded[r.label.index()] += 1;
        }
    }
    let padded_total: usize = padded.iter().sum();
    let grand: usize = total.iter().sum();
    let rows = Label::ALL
        .iter()
        .map(|&l| PaddingRow {
            label: l,
            padded_count: padded[l.index()],
            total_count: total[l.index()],
            padded_share: percent(padded[l.index()], padded_total),
            total_share: percent(total[l.index()], grand),
        })
        .collect();
    Ok(PaddingReport {
        input_length: length,
        rows,
        padded_total,
        total: grand,
        padded_fraction: percent(padded_total, grand),
    })
}

impl PaddingReport {
    pub fn row(&self, label: Label) -> &PaddingRow {
        &self.rows[label.index()]
    }

    /// Table with one column per class plus a total column, rows: padded
    /// counts, total counts, padded distribution, total distribution.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,A,N,O,~,Total\n");
        let order = [Label::A, Label::N, Label::O, Label::Noisy];
        let line = |s: &mut String, name: &str, vals: Vec<String>, last: String| {
            let _ = writeln!(s, "{name},{},{last}", vals.join(","));
        };
        line(
            &mut s,
            &format!("shorter than {} (padded)", self.input_length),
            order.iter().map(|l| self.row(*l).padded_count.to_string()).collect(),
            self.padded_total.to_string(),
        );
        line(
            &mut s,
            "total in dataset",
            order.iter().map(|l| self.row(*l).total_count.to_string()).collect(),
            self.total.to_string(),
        );
        line(
            &mut s,
            "distribution of padded data (%)",
            order.iter().map(|l| format!("{:.2}", self.row(*l).padded_share)).collect(),
            format!("{:.2}", self.padded_fraction),
        );
        line(
            &mut s,
            "total distribution (%)",
            order.iter().map(|l| format!("{:.2}", self.row(*l).total_share)).collect(),
            "-".into(),
        );
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: (0.70, 0.15, 0.15),
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.fractions;
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(Error::Validation("split fractions must be positive".into()));
        }
        if ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "split fractions sum to {}, expected 1",
                a + b + c
            )));
        }
        Ok(())
    }
}

/// Index sets into the source dataset. Each set is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder apportionment of `n` items over `fractions`; ties go to
/// the earlier bucket.
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = quotas[i] - quotas[i].floor();
        let rj = quotas[j] - quotas[j].floor();
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn class_members(dataset: &Dataset) -> [Vec<usize>; Label::COUNT] {
    let mut members: [Vec<usize>; Label::COUNT] = Default::default();
    for (i, r) in dataset.records.iter().enumerate() {
        members[r.label.index()].push(i);
    }
    members
}

pub fn stratified_split_indices(dataset: &Dataset, spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let members = class_members(dataset);
    for (l, m) in Label::ALL.iter().zip(&members) {
        if m.len() < 3 {
            return Err(Error::Stratification(format!(
                "class {l} has {} records, need at least 3",
                m.len()
            )));
        }
    }
    let (a, b, c) = spec.fractions;
    let mut rng = SplitMix64::new(spec.seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for m in members {
        let counts = largest_remainder(m.len(), &[a, b, c]);
        let mut shuffled = m;
        rng.shuffle(&mut shuffled);
        let (tr, rest) = shuffled.split_at(counts[0]);
        let (va, te) = rest.split_at(counts[1]);
        out.train.extend_from_slice(tr);
        out.val.extend_from_slice(va);
        out.test.extend_from_slice(te);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn stratified_split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let idx = stratified_split_indices(dataset, spec)?;
    Ok((
        dataset.subset(&idx.train),
        dataset.subset(&idx.val),
        dataset.subset(&idx.test),
    ))
}

/// Stratified k-fold assignment. Each class is shuffled, classes are
/// concatenated in label order, and the sequence is dealt round-robin over
/// folds, so fold sizes and per-class counts each differ by at most one.
/// Returns `(train, test)` index pairs, both sorted.
pub fn kfold_indices(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::Validation(format!("k-fold needs k >= 2, got {k}")));
    }
    let members = class_members(dataset);
    for (l, m) in Label::ALL.iter().zip(&members) {
        if !m.is_empty() && m.len() < k {
            return Err(Error::Stratification(format!(
                "class {l} has {} records, fewer than k={k}",
                m.len()
            )));
        }
    }
    let mut rng = SplitMix64::new(seed);
    let mut fold_of = vec![0usize; dataset.len()];
    let mut dealt = 0usize;
    for mut m in members {
        rng.shuffle(&mut m);
        for i in m {
            fold_of[i] = dealt % k;
            dealt += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..dataset.len()).partition(|&i| fold_of[i] == f);
            (train, test)
        })
        .collect())
}

pub fn kfold_split(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    Ok(kfold_indices(dataset, k, seed)?
        .into_iter()
        .map(|(tr, te)| (dataset.subset(&tr), dataset.subset(&te)))
        .collect())
}
