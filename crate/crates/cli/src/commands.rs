use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use soh_klstm::checkpoint;
use soh_klstm::data::{fit_transform, load_csv, synth_generate, transform_with_scalers, write_csv, PreparedData, Profile};
use soh_klstm::metrics::{error_reduction, EvalReport};
use soh_klstm::model::{ModelKind, SohModel};
use soh_klstm::train::{evaluate, predict_dataset, TrainReport};
use soh_klstm::Error;

use crate::config::RunOptions;
use crate::CliError;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn default_report_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("report.txt")
}

pub fn gen(profile: Profile, cycles: usize, seed: u64, nominal: f64, out: &Path) -> Result<(), CliError> {
    if !(nominal > 0.0 && nominal.is_finite()) {
        return Err(CliError::Usage(format!("--nominal must be positive, got {nominal}")));
    }
    if cycles < 20 {
        return Err(CliError::Usage(format!("--cycles must be at least 20, got {cycles}")));
    }
    let data = synth_generate(seed, cycles, profile, nominal)?;
    write_csv(out, &data).map_err(|e| match e {
        Error::Io(source) => CliError::Io {
            path: out.to_path_buf(),
            source,
        },
        other => other.into(),
    })?;
    println!("wrote {} cycles ({profile}, seed {seed}) to {}", cycles, out.display());
    Ok(())
}

fn prepare(opts: &RunOptions, window: usize) -> Result<PreparedData, CliError> {
    let raw = load_csv(opts.data_path()?, opts.nominal_fallback()?)?;
    Ok(fit_transform(&raw, window)?)
}

/// Train per `opts`, write the report and, unless training diverged, the
/// checkpoint of the best-validation parameters.
pub fn train(opts: &RunOptions, out: &Path, report_path: &Path) -> Result<TrainReport, CliError> {
    let spec = opts.model_spec()?;
    let cfg = opts.train_config()?;
    let data = prepare(opts, spec.window)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed());
    let mut model = SohModel::init_for_data(spec, &data, &mut rng)?;
    let report = soh_klstm::train::train(&mut model, &data, &cfg, &mut rng)?;

    let mut text = String::new();
    writeln!(text, "data={}", opts.data_path()?.display()).unwrap();
    writeln!(text, "seed={}", opts.seed()).unwrap();
    text.push_str(&report.to_text());
    write_file(report_path, text)?;
    if report.diverged() {
        return Err(CliError::Diverged(format!(
            "stopped after {} epochs; report written to {}, no checkpoint saved",
            report.epochs.len(),
            report_path.display()
        )));
    }
    write_file(out, checkpoint::to_bytes(&model))?;

    println!(
        "{}: {} epochs ({}), best epoch {}, best val loss {:.6e}",
        report.model,
        report.epochs.len(),
        report.stop_reason,
        report.best_epoch,
        report.best_val_loss
    );
    if let Some(t) = &report.test {
        println!("test rmse={} mape_pct={}", t.rmse, t.mape);
    }
    println!("checkpoint: {}", out.display());
    println!("report: {}", report_path.display());
    Ok(report)
}

/// Load a checkpoint; architecture options set in `opts` must match it.
fn load_model(opts: &RunOptions, path: &Path) -> Result<SohModel, CliError> {
    let bytes = fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let stored = checkpoint::from_bytes(&bytes, None)?;
    match opts.spec_override(stored.spec)? {
        Some(expected) if expected != stored.spec => Ok(checkpoint::from_bytes(&bytes, Some(&expected))?),
        _ => Ok(stored),
    }
}

fn checkpoint_data(opts: &RunOptions, model: &SohModel) -> Result<PreparedData, CliError> {
    let (Some(features), Some(targets)) = (&model.feature_scaler, &model.target_scaler) else {
        return Err(Error::UnfittedScaler.into());
    };
    let fallback = opts.nominal_fallback()?.or(Some(model.nominal_capacity));
    let raw = load_csv(opts.data_path()?, fallback)?;
    Ok(transform_with_scalers(
        &raw,
        model.spec.window,
        features.clone(),
        targets.clone(),
    )?)
}

pub fn eval(opts: &RunOptions, checkpoint: &Path, baseline: Option<f64>, out: &Path) -> Result<(), CliError> {
    let model = load_model(opts, checkpoint)?;
    let data = checkpoint_data(opts, &model)?;
    let report = evaluate(&model, &data.test, baseline)?;
    let text = format!("model={}\npartition=test\n{}", model.spec.kind, report.to_kv());
    write_file(out, &text)?;
    print!("{text}");
    Ok(())
}

pub fn predict(
    opts: &RunOptions,
    checkpoint: &Path,
    partition: &str,
    out: &Path,
    plot: Option<&Path>,
) -> Result<(), CliError> {
    let model = load_model(opts, checkpoint)?;
    let data = checkpoint_data(opts, &model)?;
    let ds = match partition {
        "train" => &data.train,
        "val" => &data.val,
        "test" => &data.test,
        other => {
            return Err(CliError::Usage(format!(
                "unknown partition `{other}` (valid: train, val, test)"
            )))
        }
    };
    let rows = predict_dataset(&model, ds)?;
    let mut csv = String::from("cycle_index,soh_actual,soh_pred,cap_actual,cap_pred\n");
    let mut dat = String::from("# cycle_index soh_actual soh_pred cap_actual cap_pred\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{}",
            r.cycle_index, r.soh_actual, r.soh_pred, r.cap_actual, r.cap_pred
        )
        .unwrap();
        writeln!(
            dat,
            "{} {} {} {} {}",
            r.cycle_index, r.soh_actual, r.soh_pred, r.cap_actual, r.cap_pred
        )
        .unwrap();
    }
    write_file(out, csv)?;
    if let Some(p) = plot {
        write_file(p, dat)?;
    }
    println!("wrote {} {partition} predictions to {}", rows.len(), out.display());
    Ok(())
}

pub fn compare(opts: &RunOptions, out_dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut tests: Vec<(ModelKind, EvalReport)> = Vec::new();
    for kind in [ModelKind::Lstm, ModelKind::Klstm] {
        let mut o = opts.clone();
        o.model = Some(kind.to_string());
        let ckpt = out_dir.join(format!("{kind}.ckpt"));
        let report = train(&o, &ckpt, &default_report_path(&ckpt))?;
        let test = report
            .test
            .ok_or_else(|| Error::InsufficientData("no test windows to compare on".into()))?;
        tests.push((kind, test));
    }
    let base = tests[0].1.rmse;
    let mut csv = format!("model,{}\n", EvalReport::CSV_HEADER);
    for (kind, t) in &mut tests {
        t.error_reduction_vs_baseline = Some(error_reduction(t.rmse, base)?);
        writeln!(csv, "{kind},{}", t.to_csv_row()).unwrap();
    }
    write_file(&out_dir.join("compare.csv"), &csv)?;
    let klstm = &tests[1].1;
    println!("lstm_rmse={base}");
    println!("klstm_rmse={}", klstm.rmse);
    println!(
        "error_reduction_pct={}",
        klstm.error_reduction_vs_baseline.expect("set above")
    );
    Ok(())
}
