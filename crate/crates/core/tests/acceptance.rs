//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use soh_klstm::activations::Activation;
use soh_klstm::checkpoint;
use soh_klstm::data::{fit_transform, synth_generate, PreparedData, Profile};
use soh_klstm::linalg::Vector;
use soh_klstm::metrics::{error_reduction, soh_from_capacity};
use soh_klstm::model::{ModelKind, ModelSpec, SohModel};
use soh_klstm::optim::StopReason;
use soh_klstm::recurrent::{Cell, CellState, KanShape, KlstmParams, LstmParams, Parameters};
use soh_klstm::splines::{basis_derivative, basis_eval, KnotVector, SplineBasis};
use soh_klstm::train::{train, train_with_val_hook, TrainConfig, TrainReport};

use common::*;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    check(took < budget, format!("took {took:.2?}, budget {budget:?}"))
}

fn spline_identities() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 1..=3 {
        let b = SplineBasis::clamped_uniform(k, 8, 0.0, 1.0).map_err(|e| e.to_string())?;
        let t = b.knot_vector().knots().to_vec();
        for j in 0..1000 {
            let x = j as f64 / 999.0;
            let v = basis_eval(&b, x).map_err(|e| e.to_string())?;
            let sum: f64 = v.iter().sum();
            check((sum - 1.0).abs() <= 1e-12, format!("k={k} x={x}: sum {sum}"))?;
            for (i, &n) in v.iter().enumerate() {
                let inside = t[i] <= x && x <= t[i + k + 1];
                check(inside || n == 0.0, format!("k={k} basis {i} nonzero ({n}) at {x} outside its support"))?;
                check(n >= 0.0, format!("k={k} basis {i} negative at {x}"))?;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.random_range(1..=3);
        let g = rng.random_range(k + 2..=12);
        let t = random_clamped_knots(&mut rng, k, g, 0.0, 1.0);
        let b = SplineBasis::new(KnotVector::new(t.clone(), k).map_err(|e| e.to_string())?);
        for _ in 0..40 {
            let x = rng.random_range(0.0..=1.0);
            let v = basis_eval(&b, x).map_err(|e| e.to_string())?;
            for i in 0..g {
                worst = worst.max((v[i] - naive_basis(&t, i, k, x)).abs());
            }
        }
        let v = basis_eval(&b, 1.0).map_err(|e| e.to_string())?;
        for i in 0..g {
            worst = worst.max((v[i] - naive_basis(&t, i, k, 1.0)).abs());
        }
    }
    check(worst <= 1e-14, format!("naive oracle disagreement {worst:e}"))?;
    within_budget(start, Duration::from_secs(5))?;
    Ok(format!("unity/support on k=1..3, oracle max diff {worst:e}"))
}

fn derivative_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let b = SplineBasis::clamped_uniform(3, 8, 0.0, 1.0).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let mut worst_spline: f64 = 0.0;
    for _ in 0..100 {
        let x = rng.random_range(h..1.0 - h);
        let d = basis_derivative(&b, x).map_err(|e| e.to_string())?;
        for i in 0..b.num_basis() {
            let fd = central_diff(|y| basis_eval(&b, y).unwrap()[i], x, h);
            worst_spline = worst_spline.max((d[i] - fd).abs());
        }
    }
    let mut worst_act: f64 = 0.0;
    for a in [Activation::Sigmoid, Activation::Tanh, Activation::Silu] {
        for _ in 0..100 {
            let x = rng.random_range(-6.0..6.0);
            let fd = central_diff(|y| a.eval(y), x, 1e-6);
            worst_act = worst_act.max((a.derivative_at(x) - fd).abs());
        }
    }
    check(worst_spline <= 1e-6, format!("spline derivative error {worst_spline:e}"))?;
    check(worst_act <= 1e-6, format!("activation derivative error {worst_act:e}"))?;
    within_budget(start, Duration::from_secs(5))?;
    Ok(format!("spline max err {worst_spline:e}, activations max err {worst_act:e}"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let (hidden, input, len) = (4, 4, 5);
    let kan = KanShape {
        degree: 3,
        inner_basis: 6,
        outer_basis: 6,
        channels: 1,
    };
    let mut worst = (0.0, String::new());
    for seed in [1u64, 2, 3] {
        for klstm in [false, true] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cell = random_cell(&mut rng, klstm, hidden, input, kan);
            let xs: Vec<Vector> = (0..len).map(|_| random_vec(&mut rng, input, 0.05, 0.95)).collect();
            let probes: Vec<Vector> = (0..len).map(|_| random_vec(&mut rng, hidden, -1.0, 1.0)).collect();
            let (_, tape) = cell.forward_sequence(&xs, &CellState::zeros(hidden)).map_err(|e| e.to_string())?;
            let grads = cell.backward_sequence(&tape, &probes).map_err(|e| e.to_string())?;
            let (rel, name, idx, a, n) =
                worst_gradient_error(&cell, &grads, |c| probe_objective(c, &xs, &probes), 1e-5, 1e-6);
            let kind = if klstm { "klstm" } else { "lstm" };
            check(
                rel <= 1e-5,
                format!("{kind} seed {seed}: {name}[{idx}] analytic {a:e} vs numeric {n:e} (rel {rel:e})"),
            )?;
            if rel > worst.0 {
                worst = (rel, format!("{kind}/{name}"));
            }
        }
    }
    within_budget(start, Duration::from_secs(60))?;
    Ok(format!("worst relative error {:e} ({})", worst.0, worst.1))
}

fn reduction_equality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for s in 0..100 {
        let (hidden, input) = (rng.random_range(1..=8), rng.random_range(1..=6));
        let len = rng.random_range(1..=10);
        let gates = LstmParams::init(hidden, input, Activation::Silu, &mut rng);
        let mut k = KlstmParams::zeros(hidden, input, KanShape::default()).map_err(|e| e.to_string())?;
        k.gates = gates.clone();
        let xs: Vec<Vector> = (0..len).map(|_| random_vec(&mut rng, input, -0.5, 1.5)).collect();
        let s0 = CellState::zeros(hidden);
        let (a, _) = Cell::Lstm(gates).forward_sequence(&xs, &s0).map_err(|e| e.to_string())?;
        let (b, _) = Cell::Klstm(k).forward_sequence(&xs, &s0).map_err(|e| e.to_string())?;
        for (t, (x, y)) in a.iter().zip(&b).enumerate() {
            let same = x.h.iter().zip(y.h.iter()).all(|(p, q)| p.to_bits() == q.to_bits())
                && x.c.iter().zip(y.c.iter()).all(|(p, q)| p.to_bits() == q.to_bits());
            check(same, format!("sequence {s}, step {t}: states differ"))?;
        }
    }
    Ok("100 sequences bitwise equal".into())
}

fn metric_reproduction() -> Outcome {
    let r1 = error_reduction(0.001682, 0.058334).map_err(|e| e.to_string())?;
    let r2 = error_reduction(0.002112, 0.041061).map_err(|e| e.to_string())?;
    let soh = soh_from_capacity(1.4, 2.0).map_err(|e| e.to_string())?;
    check((r1 - 97.12).abs() <= 0.01, format!("first reduction {r1}"))?;
    check((r2 - 94.85).abs() <= 0.01, format!("second reduction {r2}"))?;
    check(soh == 0.70, format!("soh {soh}"))?;
    Ok(format!("{r1:.4}%, {r2:.4}%, soh {soh}"))
}

fn desk_data() -> PreparedData {
    let raw = synth_generate(7, 170, Profile::GroupA, 2.0).unwrap();
    fit_transform(&raw, 8).unwrap()
}

fn desk_run(data: &PreparedData) -> (SohModel, TrainReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = ModelSpec {
        kind: ModelKind::Klstm,
        ..ModelSpec::default()
    };
    let mut model = SohModel::init_for_data(spec, data, &mut rng).unwrap();
    let report = train(&mut model, data, &TrainConfig::default(), &mut rng).unwrap();
    (model, report)
}

fn desk_learning(report: &TrainReport, took: Duration) -> Outcome {
    let val = report.val_losses();
    let first = val[0];
    let last = *val.last().unwrap();
    let reduction = 100.0 * (1.0 - last / first);
    let rmse = report.test.as_ref().map(|t| t.rmse).unwrap_or(f64::NAN);
    let summary = format!(
        "{} epochs ({}), val loss {first:.3e} -> {last:.3e} ({reduction:.1}% lower), test RMSE {rmse:.4}, {took:.1?}",
        val.len(),
        report.stop_reason
    );
    check(reduction >= 90.0, format!("validation loss reduction below 90%: {summary}"))?;
    check(rmse < 0.05, format!("test RMSE not below 0.05: {summary}"))?;
    check(took < Duration::from_secs(180), format!("over 3 min: {summary}"))?;
    Ok(summary)
}

fn protocol_conformance(data: &PreparedData) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let spec = ModelSpec {
        hidden_size: 8,
        ..ModelSpec::default()
    };
    let base = SohModel::init(spec, &mut rng).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();

    let mut m = base.clone();
    let r = train_with_val_hook(&mut m, data, &cfg, &mut rng, |_, _| 0.125).map_err(|e| e.to_string())?;
    let non_improving = r.epochs.len() - r.best_epoch;
    check(r.stop_reason == StopReason::EarlyStop, format!("stop reason {}", r.stop_reason))?;
    check(non_improving == 10, format!("{non_improving} non-improving epochs before stop"))?;
    let lrs: Vec<f64> = r.epochs.iter().map(|e| e.lr).collect();
    // epoch 1 sets the best; the 5th non-improving epoch is epoch 6, so the
    // halved rate is first used in epoch 7
    check(lrs[..6].iter().all(|&l| l == 1e-3), format!("lr trace {lrs:?}"))?;
    check(lrs[6..].iter().all(|&l| l == 5e-4), format!("lr trace {lrs:?}"))?;

    let mut m = base.clone();
    let r = train_with_val_hook(&mut m, data, &cfg, &mut rng, |e, _| 1.0 / e as f64).map_err(|e| e.to_string())?;
    check(r.epochs.len() == 100, format!("{} epochs with steady improvement", r.epochs.len()))?;
    check(r.stop_reason == StopReason::MaxEpochs, format!("stop reason {}", r.stop_reason))?;
    check(r.batch_size == 32, format!("batch size {}", r.batch_size))?;
    check(
        r.batches_per_epoch == data.train.len().div_ceil(32),
        format!("{} batches for {} windows", r.batches_per_epoch, data.train.len()),
    )?;
    Ok(format!(
        "stop after 10 non-improving epochs, lr halved after the 5th; 100-epoch cap; {} batches of <=32 per epoch",
        r.batches_per_epoch
    ))
}

fn determinism(first: &TrainReport, data: &PreparedData) -> Outcome {
    let (_, second) = desk_run(data);
    let bits = |r: &TrainReport| -> Vec<(u64, u64)> {
        r.epochs
            .iter()
            .map(|e| (e.train_loss.to_bits(), e.val_loss.to_bits()))
            .collect()
    };
    check(bits(first) == bits(&second), "loss traces differ between runs")?;
    Ok(format!("{} epochs bitwise identical", first.epochs.len()))
}

fn checkpoint_round_trip(model: &SohModel) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.ckpt");
    checkpoint::save(model, &path).map_err(|e| e.to_string())?;
    let loaded = checkpoint::load(&path).map_err(|e| e.to_string())?;
    for (a, b) in model.params.tensors().iter().zip(loaded.params.tensors()) {
        check(a.name == b.name && a.shape == b.shape, format!("tensor {} layout changed", a.name))?;
        let same = a.data.iter().zip(b.data).all(|(x, y)| x.to_bits() == y.to_bits());
        check(same, format!("tensor {} changed", a.name))?;
    }
    check(loaded.feature_scaler == model.feature_scaler, "feature scaler changed")?;
    check(loaded.target_scaler == model.target_scaler, "target scaler changed")?;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for w in 0..10 {
        let window: Vec<Vector> = (0..model.spec.window).map(|_| random_vec(&mut rng, 4, 0.0, 1.0)).collect();
        let (p, q) = (model.predict(&window), loaded.predict(&window));
        let (p, q) = (p.map_err(|e| e.to_string())?, q.map_err(|e| e.to_string())?);
        check(
            p.soh.to_bits() == q.soh.to_bits() && p.capacity.to_bits() == q.capacity.to_bits(),
            format!("window {w}: prediction changed"),
        )?;
    }
    Ok(format!("{} tensors and 10 predictions bitwise equal", model.params.tensors().len()))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 spline identities", spline_identities()),
        ("2 derivative suite", derivative_suite()),
        ("3 full-cell gradient check", gradient_check()),
        ("4 reduction equality", reduction_equality()),
        ("5 metric reproduction", metric_reproduction()),
    ];
    let data = desk_data();
    let start = Instant::now();
    let (model, report) = desk_run(&data);
    let took = start.elapsed();
    results.push(("6 desk-scale learning", desk_learning(&report, took)));
    results.push(("7 protocol conformance", protocol_conformance(&data)));
    results.push(("8 determinism", determinism(&report, &data)));
    results.push(("9 checkpoint round-trip", checkpoint_round_trip(&model)));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
