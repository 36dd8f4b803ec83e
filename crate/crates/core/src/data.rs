//! Battery-cycle data: the canonical per-cycle CSV, min-max scaling, the
//! chronological 70/20/10 split, sliding windows, and a synthetic degradation
//! generator.
//!
//! Canonical CSV (header exact, `soh` optional, comment line optional):
//!
//! ```text
//! # nominal_capacity_ah=2
//! cycle_index,capacity_ah,voltage_v,current_a,temperature_c,soh
//! 1,2,3.53,2.001,25.2,1
//! ```
//!
//! The feature vector for cycle `t` is `[C_{t-1}, V_t, I_t, T_t]`: the
//! capacity measured at the end of the previous cycle plus this cycle's mean
//! discharge voltage, current and temperature. Targets are `(soh_t, C_t)`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg::Vector;
use crate::metrics::soh_from_capacity;
use crate::{Error, Result};

pub const FEATURE_NAMES: [&str; 4] = ["prev_capacity_ah", "voltage_v", "current_a", "temperature_c"];
pub const TARGET_NAMES: [&str; 2] = ["soh", "capacity_ah"];
pub const NUM_FEATURES: usize = 4;
pub const DEFAULT_WINDOW: usize = 8;
pub const DEFAULT_NOMINAL_CAPACITY: f64 = 2.0;

const CSV_COLUMNS: [&str; 5] = ["cycle_index", "capacity_ah", "voltage_v", "current_a", "temperature_c"];
const NOMINAL_KEY: &str = "nominal_capacity_ah";

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle_index: u32,
    pub capacity: f64,
    pub voltage: f64,
    pub current: f64,
    pub temperature: f64,
    pub soh: f64,
}

/// Records of one battery plus its nominal capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleData {
    pub nominal_capacity: f64,
    pub records: Vec<CycleRecord>,
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Read a canonical CSV. The nominal capacity comes from the
/// `# nominal_capacity_ah=` comment when present, else from `fallback_nominal`;
/// it is required only when the `soh` column is absent.
pub fn load_csv(path: impl AsRef<Path>, fallback_nominal: Option<f64>) -> Result<CycleData> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;

    let mut header_nominal = None;
    for (n, line) in text.lines().enumerate() {
        let Some(comment) = line.trim_start().strip_prefix('#') else {
            continue;
        };
        if let Some((key, value)) = comment.split_once('=') {
            if key.trim() == NOMINAL_KEY {
                let v: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(path, n as u64 + 1, format!("invalid {NOMINAL_KEY} `{}`", value.trim())))?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(parse_err(path, n as u64 + 1, format!("{NOMINAL_KEY} must be positive")));
                }
                header_nominal = Some(v);
            }
        }
    }
    let nominal = header_nominal.or(fallback_nominal);

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let header_line = reader.position().line().max(1);
    let cols: Vec<&str> = headers.iter().collect();
    for (i, want) in CSV_COLUMNS.iter().enumerate() {
        if cols.get(i) != Some(want) {
            return Err(parse_err(
                path,
                header_line,
                format!("missing column `{want}` at position {}", i + 1),
            ));
        }
    }
    let has_soh = match &cols[CSV_COLUMNS.len()..] {
        [] => false,
        ["soh"] => true,
        extra => {
            return Err(parse_err(
                path,
                header_line,
                format!("unexpected columns {extra:?}"),
            ))
        }
    };
    if !has_soh && nominal.is_none() {
        return Err(parse_err(
            path,
            header_line,
            format!("no soh column and no {NOMINAL_KEY} given"),
        ));
    }

    let mut records: Vec<CycleRecord> = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != cols.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", cols.len(), row.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            let field = &row[i];
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line, format!("column `{}`: non-numeric value `{field}`", cols[i])))
        };
        let cycle_index: u32 = row[0]
            .parse()
            .ok()
            .filter(|&c| c >= 1)
            .ok_or_else(|| parse_err(path, line, format!("column `cycle_index`: invalid value `{}`", &row[0])))?;
        if let Some(prev) = records.last() {
            if cycle_index <= prev.cycle_index {
                return Err(parse_err(
                    path,
                    line,
                    format!(
                        "cycle_index {cycle_index} does not increase (previous {})",
                        prev.cycle_index
                    ),
                ));
            }
        }
        let capacity = num(1)?;
        if capacity <= 0.0 {
            return Err(parse_err(path, line, format!("capacity_ah must be positive, got {capacity}")));
        }
        let soh = if has_soh {
            num(5)?
        } else {
            soh_from_capacity(capacity, nominal.expect("checked above"))?
        };
        records.push(CycleRecord {
            cycle_index,
            capacity,
            voltage: num(2)?,
            current: num(3)?,
            temperature: num(4)?,
            soh,
        });
    }
    Ok(CycleData {
        nominal_capacity: nominal.unwrap_or(DEFAULT_NOMINAL_CAPACITY),
        records,
    })
}

/// Write the canonical CSV, including the nominal-capacity comment and the
/// `soh` column. Values use Rust's shortest round-trip float formatting.
pub fn write_csv(path: impl AsRef<Path>, data: &CycleData) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# {NOMINAL_KEY}={}\n", data.nominal_capacity));
    out.push_str(&CSV_COLUMNS.join(","));
    out.push_str(",soh\n");
    for r in &data.records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.cycle_index, r.capacity, r.voltage, r.current, r.temperature, r.soh
        ));
    }
    let mut f = fs::File::create(path.as_ref())?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Per-feature affine map onto `[0, 1]`, fitted once.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(rows: &[Vector], names: &[&str]) -> Result<Self> {
        let width = names.len();
        if rows.is_empty() {
            return Err(Error::InsufficientData("cannot fit a scaler on zero rows".into()));
        }
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for row in rows {
            if row.len() != width {
                return Err(Error::shape("scaler fit", format!("{width} features"), format!("row of {}", row.len())));
            }
            for (k, &v) in row.iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        for k in 0..width {
            if !(max[k] > min[k]) {
                return Err(Error::DegenerateFeature(names[k].to_string()));
            }
        }
        Ok(MinMaxScaler { min, max })
    }

    pub fn from_bounds(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() {
            return Err(Error::shape("scaler", format!("{} minima", min.len()), format!("{} maxima", max.len())));
        }
        if let Some(k) = (0..min.len()).find(|&k| !(max[k] > min[k])) {
            return Err(Error::DegenerateFeature(format!("#{k}")));
        }
        Ok(MinMaxScaler { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    /// No clipping: out-of-range values map outside `[0, 1]`.
    pub fn transform_value(&self, k: usize, v: f64) -> f64 {
        (v - self.min[k]) / (self.max[k] - self.min[k])
    }

    pub fn inverse_value(&self, k: usize, v: f64) -> f64 {
        self.min[k] + v * (self.max[k] - self.min[k])
    }

    pub fn transform(&self, row: &Vector) -> Vector {
        Vector::from(
            row.iter()
                .enumerate()
                .map(|(k, &v)| self.transform_value(k, v))
                .collect::<Vec<_>>(),
        )
    }

    pub fn inverse_transform(&self, row: &Vector) -> Vector {
        Vector::from(
            row.iter()
                .enumerate()
                .map(|(k, &v)| self.inverse_value(k, v))
                .collect::<Vec<_>>(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        })
    }
}

/// One training example: `window.len()` normalized feature rows predicting
/// the normalized `(soh, capacity)` of `target_cycle`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: Vec<Vector>,
    pub target: [f64; 2],
    /// Denormalized `(soh, capacity)`.
    pub raw_target: [f64; 2],
    pub target_cycle: u32,
    /// Cycle indices whose V/I/T populate the window rows, oldest first.
    pub window_cycles: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub partition: Partition,
    /// Records of this partition, in cycle order.
    pub cycles: Range<usize>,
    pub samples: Vec<Sample>,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// The three partitions plus the scalers fitted on the training one.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub train: SequenceDataset,
    pub val: SequenceDataset,
    pub test: SequenceDataset,
    pub feature_scaler: MinMaxScaler,
    pub target_scaler: MinMaxScaler,
    pub nominal_capacity: f64,
}

/// Chronological 70/20/10 index ranges for `n` records.
pub fn chronological_split(n: usize) -> [Range<usize>; 3] {
    let train = n * 7 / 10;
    let val = n * 2 / 10;
    [0..train, train..train + val, train + val..n]
}

/// `[C_{t-1}, V_t, I_t, T_t]` for record `t` (requires `t ≥ 1`).
fn feature_row(records: &[CycleRecord], t: usize) -> Vector {
    let r = &records[t];
    Vector::from(vec![records[t - 1].capacity, r.voltage, r.current, r.temperature])
}

fn build_windows(
    records: &[CycleRecord],
    range: Range<usize>,
    partition: Partition,
    window: usize,
    features: &MinMaxScaler,
    targets: &MinMaxScaler,
) -> SequenceDataset {
    let part = &records[range.clone()];
    let mut samples = Vec::new();
    for t in window..part.len() {
        let rows = (t + 1 - window..=t)
            .map(|tau| features.transform(&feature_row(part, tau)))
            .collect();
        let r = &part[t];
        samples.push(Sample {
            window: rows,
            target: [targets.transform_value(0, r.soh), targets.transform_value(1, r.capacity)],
            raw_target: [r.soh, r.capacity],
            target_cycle: r.cycle_index,
            window_cycles: part[t + 1 - window..=t].iter().map(|r| r.cycle_index).collect(),
        });
    }
    SequenceDataset {
        partition,
        cycles: range,
        samples,
    }
}

fn check_partition_sizes(n: usize, window: usize) -> Result<[Range<usize>; 3]> {
    if window == 0 {
        return Err(Error::Contract("window length must be at least 1".into()));
    }
    let split = chronological_split(n);
    for (range, name) in split.iter().zip(["train", "val", "test"]) {
        if range.len() < window + 1 {
            return Err(Error::InsufficientData(format!(
                "{name} partition has {} cycles; a window of {window} needs at least {}",
                range.len(),
                window + 1
            )));
        }
    }
    Ok(split)
}

/// Split chronologically, fit both scalers on the training partition only,
/// and build windows inside each partition.
pub fn fit_transform(data: &CycleData, window: usize) -> Result<PreparedData> {
    let [train, val, test] = check_partition_sizes(data.records.len(), window)?;
    let recs = &data.records[train.clone()];
    let feature_rows: Vec<Vector> = (1..recs.len()).map(|t| feature_row(recs, t)).collect();
    let target_rows: Vec<Vector> = recs[1..]
        .iter()
        .map(|r| Vector::from(vec![r.soh, r.capacity]))
        .collect();
    let features = MinMaxScaler::fit(&feature_rows, &FEATURE_NAMES)?;
    let targets = MinMaxScaler::fit(&target_rows, &TARGET_NAMES)?;
    transform_with(data, window, features, targets, [train, val, test])
}

/// Like [`fit_transform`] but with scalers restored from a checkpoint.
pub fn transform_with_scalers(
    data: &CycleData,
    window: usize,
    features: MinMaxScaler,
    targets: MinMaxScaler,
) -> Result<PreparedData> {
    let split = check_partition_sizes(data.records.len(), window)?;
    transform_with(data, window, features, targets, split)
}

fn transform_with(
    data: &CycleData,
    window: usize,
    features: MinMaxScaler,
    targets: MinMaxScaler,
    [train, val, test]: [Range<usize>; 3],
) -> Result<PreparedData> {
    if features.width() != NUM_FEATURES || targets.width() != 2 {
        return Err(Error::shape(
            "scalers",
            format!("{NUM_FEATURES} features, 2 targets"),
            format!("{} features, {} targets", features.width(), targets.width()),
        ));
    }
    let recs = &data.records;
    Ok(PreparedData {
        train: build_windows(recs, train, Partition::Train, window, &features, &targets),
        val: build_windows(recs, val, Partition::Val, window, &features, &targets),
        test: build_windows(recs, test, Partition::Test, window, &features, &targets),
        feature_scaler: features,
        target_scaler: targets,
        nominal_capacity: data.nominal_capacity,
    })
}

/// Operating-condition presets for the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// 24 °C ambient, 2 A discharge.
    GroupA,
    /// 4 °C, 4 A discharge.
    GroupB,
    /// 4 °C, 1 A discharge.
    GroupC,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "groupA" => Ok(Profile::GroupA),
            "groupB" => Ok(Profile::GroupB),
            "groupC" => Ok(Profile::GroupC),
            other => Err(Error::UnknownProfile(other.to_string())),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::GroupA => "groupA",
            Profile::GroupB => "groupB",
            Profile::GroupC => "groupC",
        })
    }
}

struct ProfileParams {
    temperature_c: f64,
    current_a: f64,
    voltage_v: f64,
    /// Fraction `a` of capacity that fades exponentially.
    fade: f64,
}

impl Profile {
    fn params(self) -> ProfileParams {
        match self {
            Profile::GroupA => ProfileParams {
                temperature_c: 24.0,
                current_a: 2.0,
                voltage_v: 3.53,
                fade: 0.55,
            },
            Profile::GroupB => ProfileParams {
                temperature_c: 4.0,
                current_a: 4.0,
                voltage_v: 3.32,
                fade: 0.45,
            },
            Profile::GroupC => ProfileParams {
                temperature_c: 4.0,
                current_a: 1.0,
                voltage_v: 3.42,
                fade: 0.65,
            },
        }
    }
}

/// SOH reached at the last synthetic cycle (before noise).
pub const SYNTH_END_SOH: f64 = 0.7;
/// Standard deviation of capacity measurement noise, Ah.
pub const SYNTH_CAPACITY_NOISE: f64 = 0.002;

/// Decay rate `b` such that `a·e^{-b(n-1)} + (1-a) = end_soh`.
pub fn fade_rate(fade: f64, n_cycles: usize, end_soh: f64) -> f64 {
    -((fade - (1.0 - end_soh)) / fade).ln() / (n_cycles - 1) as f64
}

/// Deterministic synthetic degradation curve.
///
/// Capacity follows `C₀·(a·e^{-b·t} + (1-a))` with `b` chosen so the trend
/// ends at 70 % SOH, plus occasional decaying regeneration bumps and Gaussian
/// noise (σ = 2 mAh). The first cycle is noise-free so it sits at SOH 1.
pub fn synth_generate(seed: u64, n_cycles: usize, profile: Profile, nominal: f64) -> Result<CycleData> {
    if n_cycles < 20 {
        return Err(Error::InsufficientData(format!(
            "synthetic generation needs at least 20 cycles, got {n_cycles}"
        )));
    }
    if !(nominal > 0.0 && nominal.is_finite()) {
        return Err(Error::Contract(format!("nominal capacity must be positive, got {nominal}")));
    }
    let p = profile.params();
    let b = fade_rate(p.fade, n_cycles, SYNTH_END_SOH);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap_noise = Normal::new(0.0, SYNTH_CAPACITY_NOISE).expect("valid sigma");
    let small = Normal::new(0.0, 1.0).expect("valid sigma");

    let mut records = Vec::with_capacity(n_cycles);
    let mut bump = 0.0;
    for t in 0..n_cycles {
        let trend = p.fade * (-b * t as f64).exp() + (1.0 - p.fade);
        bump *= 0.5;
        let capacity = if t == 0 {
            nominal
        } else {
            if t > 5 && t + 3 < n_cycles && rng.random_bool(0.06) {
                bump += rng.random_range(0.004..0.008);
            }
            nominal * trend + bump + cap_noise.sample(&mut rng)
        };
        let wear = 1.0 - trend;
        let voltage = p.voltage_v - 0.25 * wear + 0.004 * small.sample(&mut rng);
        let current = p.current_a * (1.0 + 0.002 * small.sample(&mut rng));
        let temperature =
            p.temperature_c + 0.4 * p.current_a * (1.0 + wear) + 0.15 * small.sample(&mut rng);
        records.push(CycleRecord {
            cycle_index: t as u32 + 1,
            capacity,
            voltage,
            current,
            temperature,
            soh: soh_from_capacity(capacity, nominal)?,
        });
    }
    Ok(CycleData {
        nominal_capacity: nominal,
        records,
    })
}
