mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use soh_klstm::checkpoint;
use soh_klstm::data::{
    fit_transform, load_csv, synth_generate, write_csv, MinMaxScaler, Partition, PreparedData, Profile, SequenceDataset,
    FEATURE_NAMES,
};
use soh_klstm::linalg::Vector;
use soh_klstm::model::{ModelKind, ModelSpec, SohModel};
use soh_klstm::train::{predict_dataset, train, TrainConfig};
use soh_klstm::Error;

use common::*;

const PROFILES: [Profile; 3] = [Profile::GroupA, Profile::GroupB, Profile::GroupC];

#[test]
fn synthetic_curves_have_the_stated_shape() {
    for profile in PROFILES {
        for seed in 0..5 {
            let d = synth_generate(seed, 170, profile, 2.0).unwrap();
            assert_eq!(d.records.len(), 170);
            assert_eq!(d.records[0].soh, 1.0);
            let last = d.records.last().unwrap().soh;
            assert!((0.68..=0.72).contains(&last), "{profile} seed {seed}: final soh {last}");
            for w in d.records.windows(2) {
                assert!(w[1].soh - w[0].soh <= 0.01, "{profile} seed {seed}: jump at cycle {}", w[1].cycle_index);
            }
            assert_eq!(synth_generate(seed, 170, profile, 2.0).unwrap(), d);
        }
    }
    assert_ne!(
        synth_generate(1, 50, Profile::GroupA, 2.0).unwrap(),
        synth_generate(2, 50, Profile::GroupA, 2.0).unwrap()
    );
    assert!(synth_generate(1, 19, Profile::GroupA, 2.0).is_err());
}

#[test]
fn unknown_profile_lists_valid_ones() {
    let err = "groupX".parse::<Profile>().unwrap_err().to_string();
    assert!(err.contains("groupA") && err.contains("groupB") && err.contains("groupC"), "{err}");
}

#[test]
fn csv_round_trip_is_exact() {
    let d = synth_generate(9, 40, Profile::GroupB, 2.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cells.csv");
    write_csv(&path, &d).unwrap();
    assert_eq!(load_csv(&path, None).unwrap(), d);
    // the header value wins over the fallback
    assert_eq!(load_csv(&path, Some(3.0)).unwrap().nominal_capacity, 2.0);
}

fn partition_rows(d: &SequenceDataset) -> Vec<Vector> {
    d.samples.iter().flat_map(|s| s.window.iter().cloned()).collect()
}

#[test]
fn scalers_are_fit_on_training_cycles_only() {
    let raw = synth_generate(3, 100, Profile::GroupC, 2.0).unwrap();
    let data = fit_transform(&raw, 8).unwrap();
    assert_eq!(
        [data.train.cycles.len(), data.val.cycles.len(), data.test.cycles.len()],
        [70, 20, 10]
    );

    // refit from raw training rows, computed here from the records
    let r = &raw.records[..70];
    let rows: Vec<Vector> = (1..70)
        .map(|t| Vector::from(vec![r[t - 1].capacity, r[t].voltage, r[t].current, r[t].temperature]))
        .collect();
    let expected = MinMaxScaler::fit(&rows, &FEATURE_NAMES).unwrap();
    assert_eq!(data.feature_scaler, expected);

    let mut with_val = rows.clone();
    let v = &raw.records[70..90];
    with_val.extend((1..20).map(|t| Vector::from(vec![v[t - 1].capacity, v[t].voltage, v[t].current, v[t].temperature])));
    assert_ne!(MinMaxScaler::fit(&with_val, &FEATURE_NAMES).unwrap(), data.feature_scaler);

    // capacity keeps fading, so validation sees values below the training
    // minimum; they pass through unclipped
    let below = partition_rows(&data.val).iter().any(|row| row[0] < 0.0);
    assert!(below);
    assert!(partition_rows(&data.train).iter().all(|row| (0.0..=1.0).contains(&row[0])));

    let x = Vector::from(vec![1.9, 3.4, 2.0, 25.0]);
    let back = data.feature_scaler.inverse_transform(&data.feature_scaler.transform(&x));
    for k in 0..4 {
        assert!((back[k] - x[k]).abs() <= 1e-9);
    }
    let above = data.feature_scaler.max()[1] + 0.1;
    assert!(data.feature_scaler.transform_value(1, above) > 1.0);
}

#[test]
fn windows_stay_inside_their_partition() {
    let raw = synth_generate(4, 170, Profile::GroupA, 2.0).unwrap();
    let window = 8;
    let data = fit_transform(&raw, window).unwrap();
    for (ds, part) in [(&data.train, Partition::Train), (&data.val, Partition::Val), (&data.test, Partition::Test)] {
        assert_eq!(ds.partition, part);
        assert_eq!(ds.len(), ds.cycles.len() - window);
        let first = raw.records[ds.cycles.start].cycle_index;
        let last = raw.records[ds.cycles.end - 1].cycle_index;
        for s in &ds.samples {
            assert_eq!(s.window.len(), window);
            assert_eq!(s.window_cycles.len(), window);
            assert!(s.window_cycles.windows(2).all(|w| w[1] == w[0] + 1));
            assert_eq!(*s.window_cycles.last().unwrap(), s.target_cycle);
            // the last row carries the previous cycle's capacity
            let prev_cap = raw.records[s.target_cycle as usize - 2].capacity;
            assert!((data.feature_scaler.inverse_value(0, s.window[window - 1][0]) - prev_cap).abs() < 1e-12);
            assert!(s.window_cycles[0] > first && s.target_cycle <= last);
        }
    }
    assert_eq!(data.train.len() + data.val.len() + data.test.len(), 170 - 3 * window);
    assert!(matches!(fit_transform(&raw, 20), Err(Error::InsufficientData(_))));
}

fn small_spec(kind: ModelKind, hidden: usize, window: usize) -> ModelSpec {
    ModelSpec {
        kind,
        hidden_size: hidden,
        window,
        ..ModelSpec::default()
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let raw = synth_generate(5, 60, Profile::GroupB, 2.0).unwrap();
    let data = fit_transform(&raw, 4).unwrap();
    for kind in [ModelKind::Lstm, ModelKind::Klstm] {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut m = SohModel::init_for_data(small_spec(kind, 3, 4), &data, &mut rng).unwrap();
        if let soh_klstm::recurrent::Cell::Klstm(p) = &mut m.params.cell {
            p.randomize_spline(0.3, &mut rng);
        }
        let batch = &data.train.samples[..5];
        let out = m.loss(batch).unwrap();
        let (rel, name, idx, a, n) = worst_gradient_error(
            &m.params,
            &out.grads,
            |p| {
                let mut mm = m.clone();
                mm.params = p.clone();
                mm.loss_value(batch).unwrap()
            },
            1e-5,
            1e-6,
        );
        assert!(rel <= 1e-5, "{kind}: {name}[{idx}] {a:e} vs {n:e}");
    }
}

#[test]
fn checkpoint_errors_name_the_tensor() {
    let raw = synth_generate(5, 60, Profile::GroupA, 2.0).unwrap();
    let data = fit_transform(&raw, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = SohModel::init_for_data(small_spec(ModelKind::Klstm, 6, 4), &data, &mut rng).unwrap();
    let bytes = checkpoint::to_bytes(&m);
    assert_eq!(checkpoint::from_bytes(&bytes, None).unwrap(), m);

    let other = small_spec(ModelKind::Klstm, 7, 4);
    let err = checkpoint::from_bytes(&bytes, Some(&other)).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Checkpoint { .. }), "{msg}");
    assert!(msg.contains("cell.w_i") && msg.contains("[6, 10]") && msg.contains("[7, 11]"), "{msg}");

    let lstm = small_spec(ModelKind::Lstm, 6, 4);
    assert!(checkpoint::from_bytes(&bytes, Some(&lstm)).is_err());

    // drop the final tensor (scaler.target_max, 2 values) and fix up the count
    let mut short = bytes.clone();
    let cut = 2 + "scaler.target_max".len() + 1 + 8 + 2 * 8;
    short.truncate(short.len() - cut);
    let count_at = 8 + 4 + 4 + u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(short[count_at..count_at + 4].try_into().unwrap()) - 1;
    short[count_at..count_at + 4].copy_from_slice(&count.to_le_bytes());
    let msg = checkpoint::from_bytes(&short, None).unwrap_err().to_string();
    assert!(msg.contains("scaler.target_max") && msg.contains("missing"), "{msg}");

    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 3], None).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint::from_bytes(&bad, None), Err(Error::MalformedCheckpoint(_))));
}

fn tiny_dataset() -> PreparedData {
    let raw = synth_generate(2, 60, Profile::GroupA, 2.0).unwrap();
    let mut data = fit_transform(&raw, 4).unwrap();
    data.train.samples.truncate(4);
    data.val = data.train.clone();
    data.test = data.train.clone();
    data
}

#[test]
fn tiny_dataset_is_overfit() {
    let data = tiny_dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut m = SohModel::init_for_data(small_spec(ModelKind::Klstm, 8, 4), &data, &mut rng).unwrap();
    let cfg = TrainConfig {
        max_epochs: 2000,
        patience: 10_000,
        lr_patience: 10_000,
        ..TrainConfig::default()
    };
    let report = train(&mut m, &data, &cfg, &mut rng).unwrap();
    assert_eq!(report.epochs.len(), 2000);
    for row in predict_dataset(&m, &data.train).unwrap() {
        assert!((row.soh_pred - row.soh_actual).abs() < 1e-3, "{row:?}");
        assert!((row.cap_pred - row.cap_actual).abs() < 2e-3, "{row:?}");
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn joint_head_outputs_agree() {
    let raw = synth_generate(7, 170, Profile::GroupA, 2.0).unwrap();
    let data = fit_transform(&raw, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut m = SohModel::init_for_data(ModelSpec::default(), &data, &mut rng).unwrap();
    let report = train(&mut m, &data, &TrainConfig::default(), &mut rng).unwrap();
    assert!(report.epochs.len() <= 100);
    let rows = predict_dataset(&m, &data.val).unwrap();
    let soh: Vec<f64> = rows.iter().map(|r| r.soh_pred).collect();
    let cap: Vec<f64> = rows.iter().map(|r| r.cap_pred / m.nominal_capacity).collect();
    let r = correlation(&soh, &cap);
    assert!(r > 0.99, "correlation {r}");
}
