//! Model container round trips and corruption handling.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsenet::datapipe::Scaler;
use sparsenet::growprune::seed_init;
use sparsenet::model::{predict_logits, EdgeSpec, Inputs, Model, ServerSpec};
use sparsenet::modelfile::{decode_model, encode_model, load_model, save_model, ModelFile, MAGIC};
use sparsenet::Error;

fn tiny_server(rng: &mut ChaCha8Rng) -> Model {
    let mut m = ServerSpec {
        input_width: 13,
        hidden_widths: vec![7, 5],
        dropout: 0.2,
    }
    .build(2, rng)
    .unwrap();
    seed_init(&mut m, 0.4, rng).unwrap();
    m
}

fn tiny_edge(rng: &mut ChaCha8Rng) -> Model {
    let mut m = EdgeSpec {
        input_width: 5,
        state_width: 4,
        gate_hidden_width: 3,
        dropout: 0.2,
    }
    .build(3, rng)
    .unwrap();
    seed_init(&mut m, 0.5, rng).unwrap();
    m
}

fn file(model: Model) -> ModelFile {
    ModelFile {
        model,
        scaler: Scaler {
            mins: vec![-1.5, 0.0, 2.0],
            maxs: vec![3.25, 0.0, 9.0],
        },
        metadata: vec![("seed".into(), "17".into()), ("kind".into(), "x".into())],
    }
}

#[test]
fn round_trip_is_byte_and_output_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let server = file(tiny_server(&mut rng));
    let edge = file(tiny_edge(&mut rng));
    let flat = Inputs::Flat(Array2::from_shape_fn((6, 13), |_| {
        rng.random_range(-1.0..1.0)
    }));
    let seq = Inputs::Sequence(Array3::from_shape_fn((6, 7, 5), |_| {
        rng.random_range(-1.0..1.0)
    }));

    for (f, inputs) in [(server, flat), (edge, seq)] {
        let bytes = encode_model(&f);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(encode_model(&back), bytes);
        assert!(back.model.masks_consistent());
        let a = predict_logits(&f.model, &inputs).unwrap();
        let b = predict_logits(&back.model, &inputs).unwrap();
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.meta("seed"), Some("17"));
    }
}

#[test]
fn save_and_load_through_disk() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = file(tiny_edge(&mut rng));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_model(&path, &f).unwrap();
    assert_eq!(load_model(&path).unwrap(), f);
    assert!(matches!(
        load_model(&dir.path().join("missing")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn bad_magic_and_version() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bytes = encode_model(&file(tiny_server(&mut rng)));
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(matches!(decode_model(&bad), Err(Error::Format(_))));
    let mut bumped = bytes.clone();
    bumped[MAGIC.len()] += 1;
    assert!(matches!(
        decode_model(&bumped),
        Err(Error::UnsupportedVersion {
            found: 2,
            supported: 1
        })
    ));
}

#[test]
fn bitmap_corruption_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = file(tiny_server(&mut rng));
    let bytes = encode_model(&f);
    // First bitmap starts right after the fixed header, metadata and table.
    let meta: usize = f.metadata.iter().map(|(k, v)| 8 + k.len() + v.len()).sum();
    let table = 4 + f.model.census().len() * (4 + 4 + 1 + 8 + 8);
    let start = MAGIC.len() + 2 + 1 + 1 + 4 + meta + table;
    let bitmap_len = (13 * 7usize).div_ceil(8);
    for offset in 0..bitmap_len {
        for bit in 0..8 {
            let mut bad = bytes.clone();
            bad[start + offset] ^= 1 << bit;
            assert!(
                matches!(decode_model(&bad), Err(Error::Corrupt(_))),
                "flip byte {offset} bit {bit}"
            );
        }
    }
}

#[test]
fn every_truncation_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bytes = encode_model(&file(tiny_edge(&mut rng)));
    for len in 0..bytes.len() {
        match decode_model(&bytes[..len]) {
            Err(Error::Corrupt(_)) | Err(Error::Format(_)) => {}
            other => panic!("prefix {len}: {other:?}"),
        }
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(matches!(decode_model(&longer), Err(Error::Corrupt(_))));
}
