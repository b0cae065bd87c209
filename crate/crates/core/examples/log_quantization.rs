//! Power-of-two quantization: the value grid per bit width, and the effect of
//! quantizing a pruned network's weights.

use sqnz::afib_model::weight_sparsity;
use sqnz::prune::magnitude_prune_step;
use sqnz::quantize::{log_quantize_value, quantize_model, QuantConfig, QuantizedWeight};
use sqnz::{build_model, ArchConfig};

fn show(q: QuantizedWeight) -> String {
    match q {
        QuantizedWeight::Zero => "0".into(),
        QuantizedWeight::Pow2 { negative, exponent } => format!("{}2^-{exponent}", if negative { "-" } else { "+" }),
    }
}

fn main() -> sqnz::Result<()> {
    let samples = [0.9, 0.3, -0.12, 0.05, 0.011, -0.004, 0.0008];
    for bits in [2, 3, 4] {
        let cfg = QuantConfig::with_bits(bits);
        let row: Vec<String> = samples.iter().map(|&w| show(log_quantize_value(w, &cfg))).collect();
        println!("b={bits} (Emax {:>2}): {}", cfg.emax(), row.join("  "));
    }

    let model = magnitude_prune_step(&build_model::<f32>(&ArchConfig::uniform(600, 16, 7, &[32, 4]), 2)?, 0.9)?;
    println!("pruned model sparsity {:.4}", weight_sparsity(&model));
    for bits in [2, 3, 4] {
        let (q, codes) = quantize_model(&model, &QuantConfig::with_bits(bits))?;
        let mut hist = vec![0usize; QuantConfig::with_bits(bits).emax() as usize + 1];
        for t in &codes.tensors {
            for c in &t.codes {
                if let Some(e) = c.exponent() {
                    hist[e as usize] += 1;
                }
            }
        }
        println!(
            "b={bits}: sparsity after quantization {:.4}, exponent histogram {:?}",
            weight_sparsity(&q),
            hist
        );
    }
    Ok(())
}
