//! Correlation-based filter pruning. A copy of one first-layer filter is
//! planted, and clustering post-ReLU activations finds and removes it.

use sqnz::prune::filter_correlation_prune;
use sqnz::signal_io::generate_synthetic_dataset;
use sqnz::train::prepare_examples;
use sqnz::{build_model, ArchConfig};

fn main() -> sqnz::Result<()> {
    let arch = ArchConfig::uniform(300, 6, 7, &[16, 4]);
    let mut model = build_model::<f32>(&arch, 4)?;
    {
        let l = &mut model.net.params.layers[0];
        let k = arch.conv_layers[0].kernel_size;
        let w = l.weight.data_mut();
        let src: Vec<f32> = w[k..2 * k].to_vec();
        w[4 * k..5 * k].copy_from_slice(&src);
        let b = l.bias.data_mut();
        b[4] = b[1];
    }
    let data = generate_synthetic_dataset(8, (250, 350), 2)?;
    let calibration: Vec<Vec<f32>> = prepare_examples::<f32>(&data, arch.input_length)
        .into_iter()
        .map(|e| e.input)
        .collect();

    for tau in [0.99, 0.9, 0.5] {
        let (_, report) = filter_correlation_prune(&model, &calibration, 2, tau, 7)?;
        println!("tau {tau}: {} filters removed", report.total_removed());
        for l in &report.layers {
            println!(
                "  {:<8} removed {:?} degenerate {:?} clusters {:?}",
                l.layer, l.removed, l.degenerate, l.clusters
            );
        }
    }
    Ok(())
}
