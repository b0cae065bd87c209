//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero if any criterion fails.
//!
//! The real-data check runs only when `SQNZ_CINC_DIR` points at a dataset
//! directory (`REFERENCE.csv` plus one signal file per record).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use sqnz::afib_model::weight_tensor_sparsity;
use sqnz::metrics::{macro_metrics, ConfusionMatrix};
use sqnz::nn_core::{argmax, cross_entropy_loss, Op, Padding};
use sqnz::packfmt::{pack, unpack, PackSizeReport, Scheme};
use sqnz::preprocess::{padding_report, stratified_split_indices, SplitSpec};
use sqnz::prune::{iterative_prune, magnitude_prune_step, PruneSchedule};
use sqnz::quantize::{log_quantize_value, qat_train, QuantConfig, QuantizedWeight};
use sqnz::rng::{derive_seed, SplitMix64};
use sqnz::shift_infer::{quantized_forward, shift_mac, MacCounter, ShiftModel, ShiftOptions};
use sqnz::signal_io::{generate_synthetic_dataset, load_dataset_dir, DataSource};
use sqnz::train::{evaluate, prepare_examples, train, Example, Hyperparams};
use sqnz::{build_model, ArchConfig, ConvLayerConfig, DenseLayerConfig, Label, Model};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

/// Draws until the architecture fits its input length.
fn random_arch(rng: &mut SplitMix64, input_length: usize) -> ArchConfig {
    loop {
        let arch = draw_arch(rng, input_length);
        if arch.validate().is_ok() {
            return arch;
        }
    }
}

fn draw_arch(rng: &mut SplitMix64, input_length: usize) -> ArchConfig {
    let n_conv = rng.range_inclusive(1, 2);
    let conv_layers = (0..n_conv)
        .map(|_| ConvLayerConfig {
            channels: rng.range_inclusive(1, 3),
            kernel_size: rng.range_inclusive(2, 5),
            pool_after: rng.below(2) == 0,
            pool_window: 2,
        })
        .collect();
    let mut dense_layers = Vec::new();
    if rng.below(2) == 0 {
        dense_layers.push(DenseLayerConfig {
            units: rng.range_inclusive(2, 5),
        });
    }
    dense_layers.push(DenseLayerConfig { units: 4 });
    ArchConfig {
        input_length,
        input_channels: rng.range_inclusive(1, 2),
        padding: if rng.below(2) == 0 { Padding::SameZero } else { Padding::Valid },
        conv_layers,
        dense_layers,
        n_classes: 4,
    }
}

fn randomize<T: sqnz::nn_core::Real>(model: &mut Model<T>, rng: &mut SplitMix64, scale: f64) {
    for l in &mut model.net.params.layers {
        for v in l.weight.data_mut().iter_mut().chain(l.bias.data_mut().iter_mut()) {
            *v = T::from(rng.uniform(-scale, scale)).unwrap();
        }
    }
}

/// ReLU on/off pattern and pooling winners of one forward pass.
fn decision_pattern(model: &Model<f64>, x: &[f64]) -> Vec<usize> {
    let trace = model.net.trace(x).unwrap();
    let mut pattern = Vec::new();
    for (i, op) in model.net.ops.iter().enumerate() {
        let input = &trace.values[i];
        match *op {
            Op::Relu => pattern.extend(input.data().iter().map(|v| usize::from(*v > 0.0))),
            Op::MaxPool { window } => {
                let (c, len) = (input.shape()[0], input.shape()[1]);
                for ch in 0..c {
                    let row = &input.data()[ch * len..(ch + 1) * len];
                    for j in 0..len / window {
                        pattern.push(argmax(&row[j * window..(j + 1) * window]));
                    }
                }
            }
            _ => {}
        }
    }
    pattern
}

fn gradient_check() -> Outcome {
    let eps = 1e-3;
    let mut rng = SplitMix64::new(0x6772_6164);
    let mut worst = 0.0f64;
    let (mut checked, mut kinks) = (0usize, 0usize);
    for m in 0..20 {
        let len = rng.range_inclusive(8, 16);
        let arch = random_arch(&mut rng, len);
        let mut model = build_model::<f64>(&arch, m).unwrap();
        randomize(&mut model, &mut rng, 0.8);
        let x: Vec<f64> = (0..arch.input_channels * arch.input_length).map(|_| rng.normal()).collect();
        let label = rng.below(4) as usize;
        let (_, _, grads) = model.net.sample_grads(&x, label).unwrap();
        for li in 0..model.net.params.layers.len() {
            for is_bias in [false, true] {
                let n = if is_bias {
                    model.net.params.layers[li].bias.len()
                } else {
                    model.net.params.layers[li].weight.len()
                };
                for i in 0..n {
                    let loss_at = |delta: f64| {
                        let mut p = model.clone();
                        let l = &mut p.net.params.layers[li];
                        let t = if is_bias { &mut l.bias } else { &mut l.weight };
                        t.data_mut()[i] += delta;
                        let probs = p.net.forward(&x).unwrap();
                        (cross_entropy_loss(&probs, label), decision_pattern(&p, &x))
                    };
                    let (lp, pp) = loss_at(eps);
                    let (lm, pm) = loss_at(-eps);
                    if pp != pm {
                        // a ReLU or pooling decision flips inside the stencil
                        kinks += 1;
                        continue;
                    }
                    let numeric = (lp - lm) / (2.0 * eps);
                    let g = &grads.layers[li];
                    let analytic = if is_bias { g.bias[i] } else { g.weight[i] };
                    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max(rel);
                    checked += 1;
                }
            }
        }
    }
    check(
        worst < 1e-4 && checked > 0,
        format!("max relative error {worst:.2e} over {checked} parameters ({kinks} skipped at activation kinks)"),
    )
}

/// Nearest exponent by threshold counting: `E` is the number of midpoints
/// `2^-(k + 1/2)`, `k < Emax`, that `|w|` does not exceed. Clipped iff
/// `|w| < 2^-(Emax + 1/2)`.
fn threshold_oracle(w: f64, emax: u32) -> Option<u32> {
    let a = w.abs();
    let top = emax.min(1100);
    if emax <= 1100 && a < (-(emax as f64 + 0.5)).exp2() {
        return None;
    }
    Some((0..top).take_while(|&k| a <= (-(k as f64 + 0.5)).exp2()).count() as u32)
}

fn quantizer_properties() -> Outcome {
    let mut rng = SplitMix64::new(0x7175_616e);
    let mut failures = Vec::new();
    let mut clipped = 0usize;
    for bits in [2u32, 3, 4, 8, 16] {
        let cfg = QuantConfig::with_bits(bits);
        let emax = cfg.emax();
        // stays clear of the subnormal range, where the exp2 thresholds round
        let hi_e = (emax as f64 + 3.0).min(1000.0);
        let mut ws: Vec<f64> = (0..100_000)
            .map(|_| {
                let m = rng.uniform(-3.0, hi_e);
                let s = if rng.below(2) == 0 { -1.0 } else { 1.0 };
                s * (-m).exp2()
            })
            .collect();
        ws[0] = 0.0;
        let qs: Vec<QuantizedWeight> = ws.iter().map(|&w| log_quantize_value(w, &cfg)).collect();
        for (&w, &q) in ws.iter().zip(&qs) {
            let v = q.value();
            let on_grid = match q {
                QuantizedWeight::Zero => v == 0.0,
                QuantizedWeight::Pow2 { exponent, negative } => {
                    exponent <= emax && v.abs() == (-(exponent as f64)).exp2() && negative == (w < 0.0)
                }
            };
            if !on_grid {
                failures.push(format!("b={bits}: {w} -> {q:?} off grid"));
            }
            if log_quantize_value(v, &cfg) != q {
                failures.push(format!("b={bits}: not idempotent at {w}"));
            }
            let expected = if w == 0.0 { None } else { threshold_oracle(w, emax) };
            if q.exponent() != expected {
                failures.push(format!("b={bits}: {w} -> {q:?}, oracle {expected:?}"));
            }
            let must_clip = w != 0.0 && -w.abs().log2() > emax as f64 + 0.5;
            if must_clip != (q.is_zero() && w != 0.0) {
                failures.push(format!("b={bits}: clip rule broken at {w}"));
            }
            clipped += usize::from(must_clip);
        }
        let mut order: Vec<usize> = (0..ws.len()).collect();
        order.sort_by(|&a, &b| ws[a].abs().total_cmp(&ws[b].abs()));
        if order.windows(2).any(|p| qs[p[0]].value().abs() > qs[p[1]].value().abs()) {
            failures.push(format!("b={bits}: magnitude order not preserved"));
        }
    }
    let detail = format!("5 x 100000 weights, {clipped} clipped, {} violations", failures.len());
    match failures.first() {
        None => Outcome::Pass(detail),
        Some(f) => Outcome::Fail(format!("{detail}; first: {f}")),
    }
}

fn shift_exactness() -> Outcome {
    let mut rng = SplitMix64::new(0x7368_6966);
    let emax = 7u32;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.range_inclusive(1, 400);
        let mut acc = 0i64;
        let mut counter = MacCounter::default();
        let mut exact = BigRational::zero();
        for _ in 0..n {
            let x = rng.below(1 << 21) as i64 - (1 << 20);
            let code = if rng.below(4) == 0 {
                QuantizedWeight::Zero
            } else {
                QuantizedWeight::Pow2 {
                    negative: rng.below(2) == 0,
                    exponent: rng.below(u64::from(emax) + 1) as u32,
                }
            };
            acc = shift_mac(acc, x, code, emax, &mut counter).unwrap();
            if let QuantizedWeight::Pow2 { negative, exponent } = code {
                let term = BigRational::new(BigInt::from(x), BigInt::one() << exponent as usize);
                exact = if negative { exact - term } else { exact + term };
            }
        }
        let scaled = exact * BigRational::from_integer(BigInt::one() << emax as usize);
        if !scaled.is_integer() || scaled.to_integer() != BigInt::from(acc) {
            mismatches += 1;
        }
    }

    let arch = ArchConfig::desk();
    let base = build_model::<f32>(&arch, 99).unwrap();
    let (q, _) = sqnz::quantize::quantize_model(&base, &QuantConfig::with_bits(3)).unwrap();
    let opts = ShiftOptions {
        frac_bits: 12,
        skip_zero: true,
    };
    let engine = ShiftModel::from_model(&q, 7, opts).unwrap();
    let float = engine.float_model().unwrap();
    let mut agree = 0;
    for _ in 0..500 {
        let x: Vec<f64> = (0..arch.input_length).map(|_| rng.normal()).collect();
        let (p, _) = quantized_forward(&engine, &x).unwrap();
        let f = float.net.forward(&x).unwrap();
        agree += usize::from(argmax(&p) == argmax(&f));
    }
    check(
        mismatches == 0 && agree >= 495,
        format!("{mismatches}/1000 dot products differ from the rational oracle; argmax agreement {agree}/500"),
    )
}

fn desk_split(n_per_class: usize, seed: u64) -> (Vec<Example<f32>>, Vec<Example<f32>>, Vec<Example<f32>>) {
    let data = generate_synthetic_dataset(n_per_class, (450, 750), derive_seed(seed, "synth")).unwrap();
    let split = stratified_split_indices(
        &data,
        &SplitSpec {
            seed: derive_seed(seed, "split"),
            ..SplitSpec::default()
        },
    )
    .unwrap();
    let ex = |idx: &[usize]| prepare_examples::<f32>(&data.subset(idx), 600);
    (ex(&split.train), ex(&split.val), ex(&split.test))
}

fn zero_set(m: &Model<f32>) -> Vec<bool> {
    m.net.params.layers.iter().flat_map(|l| l.weight.data().iter().map(|w| *w == 0.0)).collect()
}

fn pruning_exactness() -> Outcome {
    let mut rng = SplitMix64::new(0x7072_756e);
    let mut oracle_failures = 0;
    for m in 0..50 {
        let len = rng.range_inclusive(10, 30);
        let arch = random_arch(&mut rng, len);
        let model = build_model::<f32>(&arch, 1000 + m).unwrap();
        let target = rng.uniform(0.0, 0.99);
        let pruned = magnitude_prune_step(&model, target).unwrap();
        let mut flat: Vec<(f32, usize)> = model
            .net
            .params
            .layers
            .iter()
            .flat_map(|l| l.weight.data().iter().map(|w| w.abs()))
            .enumerate()
            .map(|(i, a)| (a, i))
            .collect();
        let k = ((target * flat.len() as f64) - 1e-9).ceil() as usize;
        flat.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut want = vec![false; flat.len()];
        for &(_, i) in &flat[..k] {
            want[i] = true;
        }
        if zero_set(&pruned) != want {
            oracle_failures += 1;
        }
    }

    let (tr, va, _) = desk_split(40, 5);
    let base = build_model::<f32>(&ArchConfig::desk(), 5).unwrap();
    let schedule = PruneSchedule {
        fine_tune_hp: Hyperparams {
            learning_rate: 0.05,
            batch_size: 32,
            max_epochs: 3,
            patience: 2,
            ..Hyperparams::default()
        },
        ..PruneSchedule::default()
    };
    let seed = 17;
    let mut regrown = 0;
    let mut current = base.clone();
    let mut previous = zero_set(&current);
    for (i, &t) in schedule.sparsity_steps.iter().enumerate() {
        let p = magnitude_prune_step(&current, t).unwrap();
        let (tuned, _) = train(&p, &tr, &va, &schedule.fine_tune_hp, derive_seed(seed, &format!("prune-step-{i}"))).unwrap();
        let zs = zero_set(&tuned);
        regrown += previous.iter().zip(&zs).filter(|(a, b)| **a && !**b).count();
        previous = zs;
        current = tuned;
    }
    let (final_model, _) = iterative_prune(&base, &schedule, &tr, &va, seed).unwrap();
    let same = final_model.net.params == current.net.params;
    let sparsity = weight_tensor_sparsity(&final_model);
    check(
        oracle_failures == 0 && (sparsity - 0.90).abs() <= 0.005 && regrown == 0 && same && final_model.net.params.masks_respected(),
        format!(
            "{oracle_failures}/50 models differ from the sort oracle; final weight sparsity {sparsity:.4}; {regrown} weights regrew"
        ),
    )
}

/// Closed-form container size, computed without the encoder.
fn closed_form_size(model: &Model<f32>) -> usize {
    let config = serde_json::to_vec(&model.config).unwrap().len();
    let mut total = 4 + 1 + 4 + config + 2;
    for (name, t) in model.net.params.tensors() {
        let mut nibbles = 0;
        let mut run = 0;
        for &v in t.data() {
            if v == 0.0 {
                run += 1;
            } else {
                nibbles += run / 15 + 1 + 1;
                run = 0;
            }
        }
        if run > 0 {
            nibbles += run / 15 + 1;
        }
        total += 2 + name.len() + 1 + 4 * t.shape().len() + 1 + 4 + (nibbles + 1) / 2;
    }
    total
}

fn sparse_grid_model(arch: &ArchConfig, density: f64, rng: &mut SplitMix64) -> Model<f32> {
    let mut m = build_model::<f32>(arch, rng.next_u64()).unwrap();
    for l in &mut m.net.params.layers {
        for v in l.weight.data_mut().iter_mut().chain(l.bias.data_mut().iter_mut()) {
            *v = if rng.next_f64() < density {
                let e = rng.below(8) as i32;
                let s = if rng.below(2) == 0 { -1.0 } else { 1.0 };
                s * 2f32.powi(-e)
            } else {
                0.0
            };
        }
    }
    m
}

fn pack_format() -> Outcome {
    let mut rng = SplitMix64::new(0x7061_636b);
    let (mut roundtrip_failures, mut size_failures) = (0, 0);
    for _ in 0..100 {
        let len = rng.range_inclusive(10, 40);
        let arch = random_arch(&mut rng, len);
        let density = rng.uniform(0.0, 0.5);
        let m = sparse_grid_model(&arch, density, &mut rng);
        let bytes = pack(&m, Scheme::SparseRle4).unwrap();
        let back = unpack(&bytes).unwrap().to_model().unwrap();
        if back.net.params != m.net.params || back.config != m.config {
            roundtrip_failures += 1;
        }
        if bytes.len() != closed_form_size(&m) {
            size_failures += 1;
        }
    }

    // exactly 10% of the desk model's 7740 parameters nonzero
    let mut desk = build_model::<f32>(&ArchConfig::desk(), 1).unwrap();
    let n = desk.param_count();
    let mut slots: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut slots);
    let keep: std::collections::HashSet<usize> = slots[..n / 10].iter().copied().collect();
    let mut idx = 0;
    for l in &mut desk.net.params.layers {
        for v in l.weight.data_mut().iter_mut().chain(l.bias.data_mut().iter_mut()) {
            *v = if keep.contains(&idx) { 0.25 } else { 0.0 };
            idx += 1;
        }
    }
    let r = sqnz::packfmt::size_report(&desk, Scheme::SparseRle4).unwrap();
    let value_only = PackSizeReport::from_counts(Scheme::SparseRle4, 1_000_000, 100_000, 0).ratio_value_only;

    let big = sparse_grid_model(&ArchConfig::default(), 0.1, &mut rng);
    let big_report = sqnz::packfmt::size_report(&big, Scheme::SparseRle4).unwrap();
    check(
        roundtrip_failures == 0
            && size_failures == 0
            && r.ratio_value_only == 80.0
            && value_only == 80.0
            && big_report.ratio_packed >= 30.0,
        format!(
            "{roundtrip_failures}/100 round-trip failures, {size_failures}/100 size mismatches; value-only ratio {:.1}x; packed ratio {:.1}x on {} params at 90% sparsity",
            r.ratio_value_only, big_report.ratio_packed, big_report.n_params
        ),
    )
}

fn desk_retention() -> Outcome {
    let seed = 7;
    let (tr, va, te) = desk_split(150, seed);
    let hp = Hyperparams {
        learning_rate: 0.05,
        weight_decay: 1e-4,
        batch_size: 32,
        max_epochs: 40,
        patience: 8,
    };
    let init = build_model::<f32>(&ArchConfig::desk(), derive_seed(seed, "init")).unwrap();
    let (base, _) = train(&init, &tr, &va, &hp, derive_seed(seed, "train")).unwrap();
    let base_acc = evaluate(&base, &te).unwrap().accuracy;
    let schedule = PruneSchedule {
        fine_tune_hp: Hyperparams {
            max_epochs: 12,
            patience: 4,
            ..hp
        },
        ..PruneSchedule::default()
    };
    let (pruned, _) = iterative_prune(&base, &schedule, &tr, &va, derive_seed(seed, "prune")).unwrap();
    let acc = |bits: u32| {
        let (q, _) = qat_train(
            &pruned,
            &QuantConfig::with_bits(bits),
            &tr,
            &va,
            &schedule.fine_tune_hp,
            derive_seed(seed, "quantize"),
        )
        .unwrap();
        evaluate(&q, &te).unwrap().accuracy
    };
    let (b3, b2) = (acc(3), acc(2));
    let drop = 100.0 * (base_acc - b3);
    check(
        base_acc >= 0.90 && drop <= 2.0 && b2 <= b3,
        format!(
            "{} records: baseline {:.2}%, pruned 90% + b=3 {:.2}% (drop {drop:.2} points), b=2 {:.2}%",
            tr.len() + va.len() + te.len(),
            100.0 * base_acc,
            100.0 * b3,
            100.0 * b2
        ),
    )
}

fn real_data_padding() -> Outcome {
    let Ok(dir) = std::env::var("SQNZ_CINC_DIR") else {
        return Outcome::Skip("SQNZ_CINC_DIR not set".into());
    };
    let data = load_dataset_dir(&dir, DataSource::Real).unwrap();
    let r = padding_report(&data, 18000).unwrap();
    let counts: Vec<usize> = [Label::A, Label::N, Label::O, Label::Noisy]
        .iter()
        .map(|&l| r.row(l).padded_count)
        .collect();
    check(
        counts == [662, 4665, 2081, 272] && r.padded_total == 7680 && format!("{:.2}", r.padded_fraction) == "90.06",
        format!(
            "padded A/N/O/~ {counts:?}, total {}, share {:.2}%",
            r.padded_total, r.padded_fraction
        ),
    )
}

/// Per-class one-vs-rest scores from the raw 4x4 counts.
fn metrics_oracle(c: &[[u64; 4]; 4]) -> [f64; 5] {
    let total: u64 = c.iter().flatten().sum();
    let mut acc = 0.0;
    let (mut p, mut r, mut s, mut f) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..4 {
        acc += c[k][k] as f64;
        let tp = c[k][k] as f64;
        let col: f64 = (0..4).map(|i| c[i][k] as f64).sum();
        let row: f64 = c[k].iter().map(|&v| v as f64).sum();
        let tn = total as f64 - col - row + tp;
        let prec = if col > 0.0 { tp / col } else { 0.0 };
        let rec = if row > 0.0 { tp / row } else { 0.0 };
        let negatives = total as f64 - row;
        p += prec;
        r += rec;
        s += if negatives > 0.0 { tn / negatives } else { 0.0 };
        f += if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
    }
    [acc / total as f64, p / 4.0, r / 4.0, s / 4.0, f / 4.0]
}

fn metrics_oracle_check() -> Outcome {
    let mut rng = SplitMix64::new(0x6d65_7472);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let mut cm = ConfusionMatrix::default();
        for r in 0..4 {
            for c in 0..4 {
                // some empty columns exercise the zero-denominator rule
                cm.counts[r][c] = if i % 5 == 0 && c == 3 { 0 } else { rng.below(50) };
            }
        }
        let m = macro_metrics(&cm);
        let o = metrics_oracle(&cm.counts);
        for (a, b) in [m.accuracy, m.precision, m.sensitivity, m.specificity, m.f1].iter().zip(o) {
            worst = worst.max((a - b).abs());
        }
    }
    let mut perfect = ConfusionMatrix::default();
    for k in 0..4 {
        perfect.counts[k][k] = 10 + k as u64;
    }
    let pm = macro_metrics(&perfect);
    let perfect_ok = [pm.accuracy, pm.precision, pm.sensitivity, pm.specificity, pm.f1].iter().all(|&v| v == 1.0);
    let mut never = ConfusionMatrix::default();
    never.counts[0][0] = 5;
    never.counts[3][0] = 4;
    let never_ok = never.class_scores(3).precision == 0.0 && never.class_scores(3).f1 == 0.0;
    check(
        worst <= 1e-12 && perfect_ok && never_ok,
        format!("max deviation from the formula oracle {worst:.1e} over 20 matrices"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient correctness", gradient_check),
        ("quantizer properties", quantizer_properties),
        ("shift-arithmetic exactness", shift_exactness),
        ("pruning exactness", pruning_exactness),
        ("pack format", pack_format),
        ("desk-scale accuracy retention", desk_retention),
        ("real-data padding table", real_data_padding),
        ("metrics", metrics_oracle_check),
    ];
    let filter: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if filter.is_some_and(|n| n != i + 1) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(d) => println!("PASS criterion {} ({name}): {d} [{secs:.1}s]", i + 1),
            Outcome::Skip(d) => println!("SKIP criterion {} ({name}): {d}", i + 1),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
