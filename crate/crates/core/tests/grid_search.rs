use sqnz::signal_io::generate_synthetic_dataset;
use sqnz::train::{grid_search, Hyperparams};
use sqnz::{ArchConfig, ConvLayerConfig, DenseLayerConfig};

fn small_arch() -> ArchConfig {
    ArchConfig {
        input_length: 200,
        input_channels: 1,
        padding: Default::default(),
        conv_layers: vec![
            ConvLayerConfig {
                channels: 4,
                kernel_size: 7,
                pool_after: true,
                pool_window: 5,
            };
            2
        ],
        dense_layers: vec![DenseLayerConfig { units: 16 }, DenseLayerConfig { units: 4 }],
        n_classes: 4,
    }
}

fn hp(lr: f64) -> Hyperparams {
    Hyperparams {
        learning_rate: lr,
        weight_decay: 0.0,
        batch_size: 16,
        max_epochs: 8,
        patience: 3,
    }
}

#[test]
fn single_config_is_returned() {
    let data = generate_synthetic_dataset(6, (180, 220), 1).unwrap();
    let r = grid_search::<f32>(&[hp(0.05)], &data, &small_arch(), 2, 3).unwrap();
    assert_eq!(r.best_index, 0);
    assert_eq!(r.best, hp(0.05));
    assert_eq!(r.scores.len(), 1);
}

#[test]
fn frozen_learning_rate_loses() {
    let data = generate_synthetic_dataset(15, (180, 220), 2).unwrap();
    let r = grid_search::<f32>(&[hp(0.0), hp(0.05)], &data, &small_arch(), 3, 4).unwrap();
    assert_eq!(r.best, hp(0.05), "scores: {:?}", r.scores);
    assert!(r.scores[1].mean_accuracy > r.scores[0].mean_accuracy);
    for s in &r.scores {
        assert_eq!(s.fold_accuracies.len(), 3);
        let mean = s.fold_accuracies.iter().sum::<f64>() / 3.0;
        assert_eq!(s.mean_accuracy, mean);
    }
}

#[test]
fn deterministic_and_errors_name_the_config() {
    let data = generate_synthetic_dataset(6, (180, 220), 5).unwrap();
    let a = grid_search::<f32>(&[hp(0.05)], &data, &small_arch(), 2, 9).unwrap();
    let b = grid_search::<f32>(&[hp(0.05)], &data, &small_arch(), 2, 9).unwrap();
    assert_eq!(a, b);
    let mut bad = hp(0.05);
    bad.batch_size = 0;
    let err = grid_search::<f32>(&[hp(0.05), bad], &data, &small_arch(), 2, 9).unwrap_err();
    assert!(err.to_string().starts_with("grid config 1"), "{err}");
    assert!(grid_search::<f32>(&[], &data, &small_arch(), 2, 9).is_err());
}
