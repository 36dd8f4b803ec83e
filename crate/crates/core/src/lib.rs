//! SOH-KLSTM: an LSTM whose candidate cell state carries an additional
//! B-spline (Kolmogorov-Arnold) branch, trained from scratch with analytic
//! backpropagation through time to predict battery state of health and
//! capacity from per-cycle measurements.
//!
//! Module map:
//!
//! - [`linalg`]: dense `f64` vectors and row-major matrices.
//! - [`splines`]: knot vectors, Cox-de Boor basis evaluation and derivatives,
//!   and the inner per-feature spline transform.
//! - [`activations`]: sigmoid, tanh and SiLU with derivatives.
//! - [`recurrent`]: baseline LSTM and KAN-enhanced cells, forward and BPTT.
//! - [`model`]: the full predictor (cell + linear head), loss and prediction.
//! - [`checkpoint`]: the named-tensor binary checkpoint format.
//! - [`optim`]: Adam and the plateau / early-stopping controller.
//! - [`data`]: canonical CSV, scaling, chronological split, windowing and the
//!   synthetic degradation generator.
//! - [`metrics`]: RMSE, MAPE, error reduction and SOH definitions.
//! - [`train`]: the training loop tying everything together.

pub mod activations;
pub mod checkpoint;
pub mod data;
mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod recurrent;
pub mod splines;
pub mod train;

pub use error::{Error, Result};
