//! Compares backprop gradients with central finite differences on a tiny
//! f64 network, one line per tensor.

use sqnz::nn_core::cross_entropy_loss;
use sqnz::rng::SplitMix64;
use sqnz::{build_model, ArchConfig, Model};

fn param(m: &mut Model<f64>, layer: usize, bias: bool, i: usize) -> &mut f64 {
    let l = &mut m.net.params.layers[layer];
    let t = if bias { &mut l.bias } else { &mut l.weight };
    &mut t.data_mut()[i]
}

fn main() -> sqnz::Result<()> {
    let arch = ArchConfig::uniform(40, 3, 5, &[6, 4]);
    let mut model = build_model::<f64>(&arch, 5)?;
    let mut rng = SplitMix64::new(9);
    let input: Vec<f64> = (0..arch.input_length).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let label = 2;

    let (_, _, grads) = model.net.sample_grads(&input, label)?;
    let loss = |m: &Model<f64>| -> sqnz::Result<f64> { Ok(cross_entropy_loss(&m.forward(&input)?, label)) };
    let h = 1e-6;

    for li in 0..model.net.params.layers.len() {
        for bias in [false, true] {
            let g = if bias { &grads.layers[li].bias } else { &grads.layers[li].weight };
            let mut worst: f64 = 0.0;
            for (i, &analytic) in g.iter().enumerate() {
                let orig = *param(&mut model, li, bias, i);
                *param(&mut model, li, bias, i) = orig + h;
                let up = loss(&model)?;
                *param(&mut model, li, bias, i) = orig - h;
                let down = loss(&model)?;
                *param(&mut model, li, bias, i) = orig;
                let numeric = (up - down) / (2.0 * h);
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
                worst = worst.max(rel);
            }
            println!(
                "{}.{:<6} {:>4} params, max relative error {:.2e}",
                model.net.params.layers[li].name,
                if bias { "bias" } else { "weight" },
                g.len(),
                worst
            );
        }
    }
    Ok(())
}
