//! Synthetic data to packed shift-only model in one run: baseline training,
//! 90% magnitude pruning, 3-bit and 2-bit log quantization, packing, and
//! integer inference on the test split.
//!
//! cargo run --release --example full_pipeline -- [n_per_class] [seed] [channels]

use std::time::Instant;

use sqnz::afib_model::{weight_sparsity, weight_tensor_sparsity};
use sqnz::packfmt::{size_report, Scheme};
use sqnz::preprocess::{stratified_split_indices, SplitSpec};
use sqnz::prune::{iterative_prune, PruneSchedule};
use sqnz::quantize::{qat_train, QuantConfig};
use sqnz::rng::derive_seed;
use sqnz::shift_infer::{quantized_forward_batch, ShiftModel, ShiftOptions};
use sqnz::signal_io::generate_synthetic_dataset;
use sqnz::train::{evaluate, prepare_examples, train, Hyperparams};
use sqnz::{build_model, ArchConfig};

fn main() -> sqnz::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n_per_class: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(7);
    let channels: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);
    let t0 = Instant::now();

    let arch = ArchConfig::uniform(600, channels, 7, &[32, 4]);
    let data = generate_synthetic_dataset(n_per_class, (450, 750), derive_seed(seed, "synth"))?;
    let split = stratified_split_indices(
        &data,
        &SplitSpec {
            seed: derive_seed(seed, "split"),
            ..SplitSpec::default()
        },
    )?;
    let ex = |idx: &[usize]| prepare_examples::<f32>(&data.subset(idx), arch.input_length);
    let (tr, va, te) = (ex(&split.train), ex(&split.val), ex(&split.test));
    println!("records {} (train {}, val {}, test {})", data.len(), tr.len(), va.len(), te.len());

    let hp = Hyperparams {
        learning_rate: 0.05,
        weight_decay: 1e-4,
        batch_size: 32,
        max_epochs: 40,
        patience: 8,
    };
    let init = build_model::<f32>(&arch, derive_seed(seed, "init"))?;
    let (base, hist) = train(&init, &tr, &va, &hp, derive_seed(seed, "train"))?;
    let base_acc = evaluate(&base, &te)?.accuracy;
    println!(
        "baseline: {} params, {} epochs, test accuracy {:.4}  [{:.1?}]",
        base.param_count(),
        hist.epochs.len(),
        base_acc,
        t0.elapsed()
    );

    let schedule = PruneSchedule {
        fine_tune_hp: Hyperparams {
            max_epochs: 12,
            patience: 4,
            ..hp
        },
        ..PruneSchedule::default()
    };
    let (pruned, steps) = iterative_prune(&base, &schedule, &tr, &va, derive_seed(seed, "prune"))?;
    for s in &steps {
        println!("  prune step {}: target {:.2} achieved {:.4} val {:.4}", s.step, s.target, s.achieved, s.val_accuracy);
    }
    println!(
        "pruned: weight sparsity {:.4}, test accuracy {:.4}  [{:.1?}]",
        weight_tensor_sparsity(&pruned),
        evaluate(&pruned, &te)?.accuracy,
        t0.elapsed()
    );

    let qhp = schedule.fine_tune_hp;
    let mut b3 = None;
    for bits in [3, 2] {
        let (q, _) = qat_train(&pruned, &QuantConfig::with_bits(bits), &tr, &va, &qhp, derive_seed(seed, "quantize"))?;
        let acc = evaluate(&q, &te)?.accuracy;
        println!(
            "b={bits}: test accuracy {:.4} (drop {:+.2} points), model sparsity {:.4}",
            acc,
            100.0 * (base_acc - acc),
            weight_sparsity(&q)
        );
        if bits == 3 {
            b3 = Some(q);
        }
    }
    let q = b3.unwrap();

    let sizes = size_report(&q, Scheme::SparseRle4)?;
    println!(
        "packed {} bytes vs dense {} bytes: {:.1}x ({:.1}x counting values only)",
        sizes.packed_bytes, sizes.dense_f32_bytes, sizes.ratio_packed, sizes.ratio_value_only
    );

    let engine = ShiftModel::from_model(&q, 7, ShiftOptions::default())?;
    let inputs: Vec<Vec<f64>> = te.iter().map(|e| e.input.iter().map(|&v| f64::from(v)).collect()).collect();
    let (probs, ops) = quantized_forward_batch(&engine, &inputs)?;
    let correct = probs
        .iter()
        .zip(&te)
        .filter(|(p, e)| sqnz::nn_core::argmax(p) == e.label.index())
        .count();
    println!(
        "shift engine: test accuracy {:.4}, {:.1}% of MACs skipped  [{:.1?}]",
        correct as f64 / te.len() as f64,
        100.0 * ops.skip_ratio(),
        t0.elapsed()
    );
    Ok(())
}
