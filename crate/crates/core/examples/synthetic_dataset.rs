//! Writes a synthetic four-class corpus in the on-disk layout (one signal file
//! per record plus `REFERENCE.csv`), reads it back and prints the padding
//! table for a fixed input length.
//!
//! cargo run --example synthetic_dataset -- [out_dir] [n_per_class] [seed]

use sqnz::preprocess::padding_report;
use sqnz::signal_io::{generate_synthetic_dataset, load_dataset_dir, write_dataset_dir, DataSource, SignalFormat};

fn main() -> sqnz::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = args
        .get(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("sqnz-synth"));
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(25);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);

    let data = generate_synthetic_dataset(n, (450, 750), seed)?;
    write_dataset_dir(&out, &data, SignalFormat::CsvInt)?;
    let back = load_dataset_dir(&out, DataSource::Synthetic)?;
    assert_eq!(back.records, data.records);
    println!("wrote {} records to {}", back.len(), out.display());
    println!("class counts (N, A, O, ~): {:?}", back.class_counts());

    let first = &back.records[0];
    println!(
        "{} label {} length {} first samples {:?}",
        first.record_id,
        first.label.as_char(),
        first.samples.len(),
        &first.samples[..8]
    );
    print!("{}", padding_report(&back, 600)?.to_csv());
    Ok(())
}
