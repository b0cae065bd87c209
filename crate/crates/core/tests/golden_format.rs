//! Byte-exact `SQNZ` fixture. The same dump appears in the README.

use sqnz::nn_core::Padding;
use sqnz::packfmt::{pack, unpack, Scheme};
use sqnz::{build_model, ArchConfig, ConvLayerConfig, DenseLayerConfig, Model};

fn fixture() -> Model<f32> {
    let cfg = ArchConfig {
        input_length: 4,
        input_channels: 1,
        padding: Padding::Valid,
        conv_layers: vec![ConvLayerConfig {
            channels: 1,
            kernel_size: 2,
            pool_after: false,
            pool_window: 5,
        }],
        dense_layers: vec![DenseLayerConfig { units: 4 }],
        n_classes: 4,
    };
    let mut m = build_model::<f32>(&cfg, 0).unwrap();
    let l = &mut m.net.params.layers;
    l[0].weight.data_mut().copy_from_slice(&[0.5, -0.25]);
    l[0].bias.data_mut().copy_from_slice(&[0.0]);
    l[1].weight.data_mut().copy_from_slice(&[
        0.0, 0.0, 1.0, //
        0.0, 0.0, 0.0, //
        -0.125, 0.0, 0.0, //
        0.0, 0.0, 0.0078125,
    ]);
    l[1].bias.data_mut().copy_from_slice(&[0.0, 0.0, 0.0, -0.5]);
    m
}

fn hexdump(bytes: &[u8]) -> String {
    bytes
        .chunks(16)
        .enumerate()
        .map(|(i, row)| {
            let hex: Vec<String> = row.iter().map(|b| format!("{b:02x}")).collect();
            let text: String = row
                .iter()
                .map(|&b| if b.is_ascii_graphic() || b == b' ' { b as char } else { '.' })
                .collect();
            format!("{:08x}  {:<47}  {text}\n", i * 16, hex.join(" "))
        })
        .collect()
}

const GOLDEN: &str = include_str!("data/golden.hex");

#[test]
fn tensor_payloads_by_hand() {
    let bytes = pack(&fixture(), Scheme::SparseRle4).unwrap();
    let find = |needle: &[u8]| bytes.windows(needle.len()).position(|w| w == needle).unwrap();
    // name, rank, dims, scheme, payload length, payload
    let tail = |name: &str, dims: &[u32]| {
        let mut v = vec![name.len() as u8, 0];
        v.extend(name.as_bytes());
        v.push(dims.len() as u8);
        for d in dims {
            v.extend(d.to_le_bytes());
        }
        v.push(1);
        v
    };
    let check = |name: &str, dims: &[u32], payload: &[u8]| {
        let head = tail(name, dims);
        let at = find(&head) + head.len();
        assert_eq!(&bytes[at..at + 4], (payload.len() as u32).to_le_bytes(), "{name}");
        assert_eq!(&bytes[at + 4..at + 4 + payload.len()], payload, "{name}");
    };
    // +2^-1, -2^-2: run 0, code 1, run 0, code 8|2
    check("conv1.weight", &[1, 1, 2], &[0x01, 0x0A]);
    // one trailing zero, padded
    check("conv1.bias", &[1], &[0x10]);
    // run 2 +2^0, run 3 -2^-3, run 4 +2^-7
    check("dense1.weight", &[4, 3], &[0x20, 0x3B, 0x47]);
    check("dense1.bias", &[4], &[0x39]);
    assert_eq!(&bytes[..5], b"SQNZ\x01");
    assert_eq!(&bytes[bytes.len() - 1..], &[0x39]);
}

#[test]
fn golden_dump() {
    let bytes = pack(&fixture(), Scheme::SparseRle4).unwrap();
    let dump = hexdump(&bytes);
    if std::env::var_os("SQNZ_BLESS").is_some() {
        std::fs::write(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden.hex"), &dump).unwrap();
    }
    assert_eq!(dump, GOLDEN);
    let back = unpack(&bytes).unwrap().to_model().unwrap();
    assert_eq!(back.net.params, fixture().net.params);
}
