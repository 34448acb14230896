//! End-to-end data pipeline properties on small synthetic datasets.

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparsenet::datapipe::split_counts;
use sparsenet::datapipe::{
    apply_scaler, fit_scaler, is_time_disjoint, load_windows, prepare, synth_generate,
    window_subjects, write_dataset, SynthConfig, SPLIT_FRACTIONS,
};
use sparsenet::model::{Inputs, ModelKind};

fn config() -> SynthConfig {
    SynthConfig {
        class_counts: vec![3, 3],
        min_hours: 0.1,
        max_hours: 0.15,
        ..SynthConfig::default()
    }
}

#[test]
fn prepared_sets_have_canonical_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let subjects = synth_generate(&config(), &mut rng).unwrap();
    let windows = window_subjects(&subjects).unwrap();
    // 360-540 s per subject minus sync trimming: 8-12 windows each
    assert!(windows.len() >= 6 * 7 && windows.len() <= 6 * 12);

    let server = prepare(
        &windows,
        ModelKind::Server,
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    let edge = prepare(&windows, ModelKind::Edge, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(server.split, edge.split);
    assert_eq!(
        server.split.counts(),
        split_counts(windows.len(), SPLIT_FRACTIONS)
    );
    assert!(is_time_disjoint(&windows, &server.split));

    match &server.train.inputs {
        Inputs::Flat(x) => assert_eq!(x.ncols(), 3712),
        _ => panic!("expected flat inputs"),
    }
    match &edge.test.inputs {
        Inputs::Sequence(x) => assert_eq!((x.shape()[1], x.shape()[2]), (60, 40)),
        _ => panic!("expected sequences"),
    }

    // Training data of every non-degenerate channel spans exactly [0, 1].
    let Inputs::Sequence(train_seq) = &edge.train.inputs else {
        unreachable!()
    };
    let flat = train_seq
        .view()
        .into_shape_with_order((train_seq.len() / 40, 40))
        .unwrap();
    for (c, col) in flat.axis_iter(Axis(1)).enumerate() {
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if edge.scaler.maxs[c] > edge.scaler.mins[c] {
            assert!(lo >= 0.0 && hi <= 1.0, "channel {c}: [{lo}, {hi}]");
        } else {
            assert_eq!((lo, hi), (0.0, 0.0));
        }
    }
    let Inputs::Flat(train_flat) = &server.train.inputs else {
        unreachable!()
    };
    let lo = train_flat.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = train_flat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!((lo, hi), (0.0, 1.0));
}

#[test]
fn scaler_hits_endpoints_on_training_windows() {
    let subjects = synth_generate(&config(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let windows = window_subjects(&subjects).unwrap();
    let scaler = fit_scaler(&windows).unwrap();
    let scaled: Vec<_> = windows
        .iter()
        .map(|w| apply_scaler(&scaler, w).unwrap())
        .collect();
    for c in 0..scaled[0].channels.len() {
        let values = scaled.iter().flat_map(|w| w.channels[c].iter().copied());
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
            (a.min(x), b.max(x))
        });
        assert_eq!((lo, hi), (0.0, 1.0), "channel {c}");
    }
}

#[test]
fn stored_dataset_windows_identically() {
    let subjects = synth_generate(&config(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &subjects).unwrap();
    assert_eq!(
        load_windows(dir.path()).unwrap(),
        window_subjects(&subjects).unwrap()
    );
}
