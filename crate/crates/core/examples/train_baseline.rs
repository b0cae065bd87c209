//! Trains a small float network on synthetic data and prints the per-epoch
//! history and the test confusion matrix.
//!
//! cargo run --release --example train_baseline -- [seed]

use sqnz::metrics::{averaged_metrics, Averaging};
use sqnz::preprocess::{stratified_split, SplitSpec};
use sqnz::signal_io::generate_synthetic_dataset;
use sqnz::train::{evaluate, prepare_examples, train, Hyperparams};
use sqnz::{build_model, ArchConfig};

fn main() -> sqnz::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let arch = ArchConfig::uniform(500, 8, 7, &[32, 4]);
    let data = generate_synthetic_dataset(60, (400, 600), seed)?;
    let (tr, va, te) = stratified_split(&data, &SplitSpec { seed, ..SplitSpec::default() })?;
    let ex = |d| prepare_examples::<f32>(d, arch.input_length);
    let (tr, va, te) = (ex(&tr), ex(&va), ex(&te));

    let hp = Hyperparams {
        learning_rate: 0.05,
        weight_decay: 1e-4,
        batch_size: 16,
        max_epochs: 25,
        patience: 5,
    };
    let model = build_model::<f32>(&arch, seed)?;
    println!("{} parameters", model.param_count());
    let (best, history) = train(&model, &tr, &va, &hp, seed)?;
    print!("{}", history.to_csv());

    let eval = evaluate(&best, &te)?;
    let cm = eval.confusion(&te)?;
    let m = averaged_metrics(&cm, Averaging::Macro);
    println!("test loss {:.4} accuracy {:.4} macro f1 {:.4}", eval.mean_loss, m.accuracy, m.f1);
    for (i, row) in cm.counts.iter().enumerate() {
        println!("  {} {:?}", sqnz::signal_io::Label::from_index(i).unwrap().as_char(), row);
    }
    Ok(())
}
