//! Integer shift-and-add inference on a quantized network: agreement with the
//! float forward pass, and how many MACs the zero-weight skip saves.

use sqnz::nn_core::argmax;
use sqnz::prune::magnitude_prune_step;
use sqnz::quantize::{quantize_model, QuantConfig};
use sqnz::shift_infer::{quantized_forward, ShiftModel, ShiftOptions};
use sqnz::signal_io::generate_synthetic_dataset;
use sqnz::train::prepare_examples;
use sqnz::{build_model, ArchConfig};

fn main() -> sqnz::Result<()> {
    let arch = ArchConfig::uniform(600, 16, 7, &[32, 4]);
    let pruned = magnitude_prune_step(&build_model::<f32>(&arch, 6)?, 0.8)?;
    let (q, _) = quantize_model(&pruned, &QuantConfig::with_bits(3))?;
    let float = q.cast::<f64>();
    let inputs: Vec<Vec<f64>> = prepare_examples::<f64>(&generate_synthetic_dataset(5, (500, 700), 8)?, arch.input_length)
        .into_iter()
        .map(|e| e.input)
        .collect();

    for frac_bits in [4, 8, 12] {
        for skip_zero in [true, false] {
            let engine = ShiftModel::from_model(&q, 7, ShiftOptions { frac_bits, skip_zero })?;
            let (mut agree, mut worst, mut executed, mut skipped) = (0, 0.0f64, 0u64, 0u64);
            for x in &inputs {
                let (p, ops) = quantized_forward(&engine, x)?;
                let f = float.forward(x)?;
                agree += usize::from(argmax(&p) == argmax(&f));
                worst = p.iter().zip(&f).fold(worst, |w, (a, b)| w.max((a - b).abs()));
                executed += ops.macs_executed;
                skipped += ops.macs_skipped_zero_weight;
            }
            println!(
                "frac_bits {frac_bits:>2} skip_zero {skip_zero:<5}: argmax agreement {agree}/{}, max |dp| {worst:.2e}, MACs executed {executed} skipped {skipped}",
                inputs.len()
            );
        }
    }
    let engine = ShiftModel::from_model(&q, 7, ShiftOptions::default())?;
    println!("per-layer weight sparsity: {:?}", engine.layer_sparsity());
    Ok(())
}
