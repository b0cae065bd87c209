//! Packs a pruned, quantized network in both `SQNZ` schemes, writes the
//! sparse file, reads it back and prints sizes plus the first header bytes.
//!
//! cargo run --example pack_model -- [out.sqnz]

use sqnz::packfmt::{pack, read_packed, size_report, Scheme};
use sqnz::prune::magnitude_prune_step;
use sqnz::quantize::{quantize_model, QuantConfig};
use sqnz::{build_model, ArchConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("sqnz-example.sqnz"));
    let model = magnitude_prune_step(&build_model::<f32>(&ArchConfig::uniform(1000, 32, 9, &[64, 4]), 3)?, 0.9)?;
    let (q, _) = quantize_model(&model, &QuantConfig::with_bits(3))?;

    for scheme in [Scheme::DenseF32, Scheme::SparseRle4] {
        let r = size_report(&q, scheme)?;
        println!(
            "{scheme:?}: {} params, {} nonzero, {} bytes packed (dense f32 {}), ratio {:.1}x, value-only {:.1}x",
            r.n_params, r.nnz, r.packed_bytes, r.dense_f32_bytes, r.ratio_packed, r.ratio_value_only
        );
    }

    let bytes = pack(&q, Scheme::SparseRle4)?;
    std::fs::write(&out, &bytes)?;
    let back = read_packed(&out)?.to_model()?;
    assert_eq!(back.net.params.layers.len(), q.net.params.layers.len());
    for (a, b) in back.net.params.layers.iter().zip(&q.net.params.layers) {
        assert_eq!(a.weight.data(), b.weight.data());
    }
    println!("wrote {} ({} bytes), round trip exact", out.display(), bytes.len());
    let head: Vec<String> = bytes[..16].iter().map(|b| format!("{b:02x}")).collect();
    println!("first bytes: {}", head.join(" "));
    Ok(())
}
