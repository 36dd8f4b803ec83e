//! The SOH predictor: a recurrent cell followed by a linear head emitting
//! `(soh, capacity)` from the final hidden state.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::activations::Activation;
use crate::data::{MinMaxScaler, PreparedData, Sample, DEFAULT_NOMINAL_CAPACITY, DEFAULT_WINDOW, NUM_FEATURES};
use crate::linalg::{Matrix, Vector};
use crate::recurrent::{Cell, CellState, KanShape, KlstmParams, LstmParams, Parameters, TensorView};
use crate::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 32;
pub const NUM_OUTPUTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Lstm,
    Klstm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Klstm => "klstm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(ModelKind::Lstm),
            "klstm" => Ok(ModelKind::Klstm),
            other => Err(Error::Contract(format!(
                "unknown model `{other}` (valid: lstm, klstm)"
            ))),
        }
    }
}

/// Architecture of a model; everything needed to allocate its tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hidden_size: usize,
    pub input_size: usize,
    pub window: usize,
    pub kan: KanShape,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::Klstm,
            hidden_size: DEFAULT_HIDDEN,
            input_size: NUM_FEATURES,
            window: DEFAULT_WINDOW,
            kan: KanShape::default(),
        }
    }
}

/// All trainable tensors: the cell plus the output head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cell: Cell,
    pub w_out: Matrix,
    pub b_out: Vector,
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut v = self.cell.tensors();
        v.push(TensorView {
            name: "head.w_out",
            shape: vec![self.w_out.rows(), self.w_out.cols()],
            data: self.w_out.as_slice(),
        });
        v.push(TensorView {
            name: "head.b_out",
            shape: vec![self.b_out.len()],
            data: self.b_out.as_slice(),
        });
        v
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut v = self.cell.tensors_mut();
        v.push(("head.w_out", self.w_out.as_mut_slice()));
        v.push(("head.b_out", self.b_out.as_mut_slice()));
        v
    }
}

/// Denormalized model output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// State of health as a fraction.
    pub soh: f64,
    /// Capacity in Ah.
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SohModel {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub feature_scaler: Option<MinMaxScaler>,
    pub target_scaler: Option<MinMaxScaler>,
    pub nominal_capacity: f64,
}

/// Mean squared error over a batch and its gradient.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: ModelParams,
}

impl SohModel {
    /// Zero-valued tensors of the right shapes.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let cell = match spec.kind {
            ModelKind::Lstm => Cell::Lstm(LstmParams::zeros(spec.hidden_size, spec.input_size, Activation::Tanh)),
            ModelKind::Klstm => Cell::Klstm(KlstmParams::zeros(spec.hidden_size, spec.input_size, spec.kan)?),
        };
        Ok(SohModel {
            spec,
            params: ModelParams {
                cell,
                w_out: Matrix::zeros(NUM_OUTPUTS, spec.hidden_size),
                b_out: Vector::zeros(NUM_OUTPUTS),
            },
            feature_scaler: None,
            target_scaler: None,
            nominal_capacity: DEFAULT_NOMINAL_CAPACITY,
        })
    }

    /// Fresh model: cell initialized per its type, head uniform in `±1/√H`.
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        if spec.hidden_size == 0 || spec.input_size == 0 {
            return Err(Error::Contract("hidden and input sizes must be positive".into()));
        }
        let cell = match spec.kind {
            ModelKind::Lstm => Cell::Lstm(LstmParams::init(spec.hidden_size, spec.input_size, Activation::Tanh, rng)),
            ModelKind::Klstm => Cell::Klstm(KlstmParams::init(spec.hidden_size, spec.input_size, spec.kan, rng)?),
        };
        let bound = 1.0 / (spec.hidden_size as f64).sqrt();
        let mut m = SohModel::zeros(spec)?;
        m.params.cell = cell;
        m.params.w_out = Matrix::uniform(NUM_OUTPUTS, spec.hidden_size, bound, rng);
        Ok(m)
    }

    /// [`init`](Self::init), then attach the fitted scalers of `data` and
    /// start the head bias at the mean normalized training target, so the
    /// untrained model predicts the training average rather than its minimum.
    pub fn init_for_data<R: Rng + ?Sized>(spec: ModelSpec, data: &PreparedData, rng: &mut R) -> Result<Self> {
        if data.train.is_empty() {
            return Err(Error::InsufficientData("training partition has no windows".into()));
        }
        if data.feature_scaler.width() != spec.input_size {
            return Err(Error::shape(
                "init_for_data",
                format!("input_size {}", spec.input_size),
                format!("{} scaled features", data.feature_scaler.width()),
            ));
        }
        let mut m = SohModel::init(spec, rng)?.with_scalers(
            data.feature_scaler.clone(),
            data.target_scaler.clone(),
            data.nominal_capacity,
        );
        let n = data.train.len() as f64;
        for k in 0..NUM_OUTPUTS {
            m.params.b_out[k] = data.train.samples.iter().map(|s| s.target[k]).sum::<f64>() / n;
        }
        Ok(m)
    }

    pub fn with_scalers(mut self, features: MinMaxScaler, targets: MinMaxScaler, nominal: f64) -> Self {
        self.feature_scaler = Some(features);
        self.target_scaler = Some(targets);
        self.nominal_capacity = nominal;
        self
    }

    /// Final hidden state after running the window from a zero state.
    fn final_hidden(&self, window: &[Vector]) -> Result<Vector> {
        let s0 = CellState::zeros(self.spec.hidden_size);
        let (states, _) = self.params.cell.forward_sequence(window, &s0)?;
        Ok(states.last().expect("nonempty").h.clone())
    }

    fn head(&self, h: &Vector) -> Result<[f64; 2]> {
        let y = self.params.w_out.matvec(h)?;
        Ok([y[0] + self.params.b_out[0], y[1] + self.params.b_out[1]])
    }

    /// Normalized `(soh, capacity)` for a normalized window.
    pub fn forward(&self, window: &[Vector]) -> Result<[f64; 2]> {
        if window.is_empty() {
            return Err(Error::EmptySequence);
        }
        self.head(&self.final_hidden(window)?)
    }

    /// Denormalized prediction for a window already normalized with the
    /// model's feature scaler.
    pub fn predict(&self, window: &[Vector]) -> Result<Prediction> {
        let targets = self.target_scaler.as_ref().ok_or(Error::UnfittedScaler)?;
        if self.feature_scaler.is_none() {
            return Err(Error::UnfittedScaler);
        }
        let y = self.forward(window)?;
        Ok(Prediction {
            soh: targets.inverse_value(0, y[0]),
            capacity: targets.inverse_value(1, y[1]),
        })
    }

    /// Normalize raw feature rows, then [`predict`](Self::predict).
    pub fn predict_raw(&self, raw_window: &[Vector]) -> Result<Prediction> {
        let scaler = self.feature_scaler.as_ref().ok_or(Error::UnfittedScaler)?;
        let window: Vec<Vector> = raw_window.iter().map(|r| scaler.transform(r)).collect();
        self.predict(&window)
    }

    /// Mean over samples and both outputs of the squared error, without
    /// gradients.
    pub fn loss_value(&self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut total = 0.0;
        for s in batch {
            let y = self.forward(&s.window)?;
            total += (y[0] - s.target[0]).powi(2) + (y[1] - s.target[1]).powi(2);
        }
        Ok(total / (NUM_OUTPUTS * batch.len()) as f64)
    }

    /// Loss plus exact gradients for every tensor, samples accumulated in
    /// batch order.
    pub fn loss(&self, batch: &[Sample]) -> Result<LossOutput> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = (NUM_OUTPUTS * batch.len()) as f64;
        let mut grads = self.params.zeros_like();
        let mut total = 0.0;
        let s0 = CellState::zeros(self.spec.hidden_size);
        for s in batch {
            let (states, tape) = self.params.cell.forward_sequence(&s.window, &s0)?;
            let h = &states.last().expect("nonempty").h;
            let y = self.head(h)?;
            let mut dy = Vector::zeros(NUM_OUTPUTS);
            for k in 0..NUM_OUTPUTS {
                let e = y[k] - s.target[k];
                total += e * e;
                dy[k] = 2.0 * e / n;
            }
            grads.w_out.outer_accumulate(&dy, h)?;
            for k in 0..NUM_OUTPUTS {
                grads.b_out[k] += dy[k];
            }
            let dh = self.params.w_out.matvec_transpose(&dy)?;
            let mut upstream = vec![Vector::zeros(self.spec.hidden_size); tape.len()];
            *upstream.last_mut().expect("nonempty") = dh;
            let cell_grads = self.params.cell.backward_sequence(&tape, &upstream)?;
            grads.cell.add_assign(&cell_grads);
        }
        Ok(LossOutput {
            loss: total / n,
            grads,
        })
    }
}
