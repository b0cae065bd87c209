//! Quantization-aware fine-tuning at several bit widths from one pruned
//! starting point, printed as the sweep CSV.
//!
//! cargo run --release --example qat_sweep -- [seed]

use sqnz::preprocess::{stratified_split, SplitSpec};
use sqnz::prune::magnitude_prune_step;
use sqnz::quantize::{sweep_bitwidths, SweepData};
use sqnz::signal_io::generate_synthetic_dataset;
use sqnz::train::{prepare_examples, train, Hyperparams};
use sqnz::{build_model, ArchConfig};

fn main() -> sqnz::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let arch = ArchConfig::uniform(500, 8, 7, &[32, 4]);
    let data = generate_synthetic_dataset(60, (400, 600), seed)?;
    let (tr, va, te) = stratified_split(&data, &SplitSpec { seed, ..SplitSpec::default() })?;
    let ex = |d| prepare_examples::<f32>(d, arch.input_length);
    let (tr, va, te) = (ex(&tr), ex(&va), ex(&te));
    let hp = Hyperparams {
        learning_rate: 0.05,
        weight_decay: 1e-4,
        batch_size: 16,
        max_epochs: 20,
        patience: 5,
    };
    let (base, _) = train(&build_model::<f32>(&arch, seed)?, &tr, &va, &hp, seed)?;
    let pruned = magnitude_prune_step(&base, 0.8)?;
    let fine = Hyperparams { max_epochs: 8, patience: 3, ..hp };
    let table = sweep_bitwidths(
        &pruned,
        &[2, 3, 4, 5],
        &SweepData { train: &tr, val: &va, test: &te },
        &fine,
        seed,
    )?;
    print!("{}", table.to_csv());
    Ok(())
}
