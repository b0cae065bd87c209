//! One-shot global magnitude pruning of a freshly initialised network at a
//! few targets, printing per-tensor sparsity. Biases stay dense.

use sqnz::afib_model::{weight_sparsity, weight_tensor_sparsity};
use sqnz::prune::magnitude_prune_step;
use sqnz::{build_model, ArchConfig};

fn main() -> sqnz::Result<()> {
    let model = build_model::<f32>(&ArchConfig::uniform(600, 16, 7, &[32, 4]), 1)?;
    let mut current = model.clone();
    for target in [0.5, 0.7, 0.8, 0.9] {
        current = magnitude_prune_step(&current, target)?;
        println!(
            "target {target:.2}: weight sparsity {:.4}, all-parameter sparsity {:.4}",
            weight_tensor_sparsity(&current),
            weight_sparsity(&current)
        );
        for l in &current.net.params.layers {
            let zeros = l.weight.data().iter().filter(|&&w| w == 0.0).count();
            let min_kept = l
                .weight
                .data()
                .iter()
                .filter(|&&w| w != 0.0)
                .fold(f32::INFINITY, |a, &w| a.min(w.abs()));
            println!(
                "  {:<14} {:>6}/{:<6} zero, smallest kept |w| {:.5}",
                l.name,
                zeros,
                l.weight.len(),
                min_kept
            );
        }
    }
    assert!(current.net.params.masks_respected());
    Ok(())
}
