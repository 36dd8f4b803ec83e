//! Adam with bias correction, and the validation-driven training controller
//! (plateau learning-rate reduction plus early stopping).

use crate::recurrent::Parameters;
use crate::{Error, Result};

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_PATIENCE: usize = 10;
pub const DEFAULT_LR_PATIENCE: usize = 5;
pub const DEFAULT_LR_FACTOR: f64 = 0.5;
pub const DEFAULT_MIN_LR: f64 = 1e-5;
/// Minimum decrease of the best validation loss that counts as improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(DEFAULT_LR)
    }
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one bias-corrected update to every tensor of `params`.
    /// Moment buffers are allocated on the first call and must keep matching
    /// the parameter shapes afterwards.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g_tensors = grads.tensors();
        let mut p_tensors = params.tensors_mut();
        if g_tensors.len() != p_tensors.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameter tensors", p_tensors.len()),
                format!("{} gradient tensors", g_tensors.len()),
            ));
        }
        for ((name, p), g) in p_tensors.iter().zip(&g_tensors) {
            if p.len() != g.data.len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{name}[{}]", p.len()),
                    format!("gradient {}[{}]", g.name, g.data.len()),
                ));
            }
            if g.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence(format!("non-finite gradient in `{name}`")));
            }
        }
        if self.m.is_empty() {
            self.m = p_tensors.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != p_tensors.len()
            || self.m.iter().zip(&p_tensors).any(|(m, (_, p))| m.len() != p.len())
        {
            return Err(Error::shape(
                "adam_step",
                "moment buffers",
                "parameters of a different shape",
            ));
        }

        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, ((_, p), g)) in p_tensors.iter_mut().zip(&g_tensors).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step<P: Parameters>(state: &mut AdamState, params: &mut P, grads: &P) -> Result<()> {
    state.step(params, grads)
}

/// Rescale `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<P: Parameters>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    Divergence,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::EarlyStop => "early_stop",
            StopReason::MaxEpochs => "max_epochs",
            StopReason::Divergence => "divergence",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Continue,
    /// The learning rate was lowered to the carried value.
    ReduceLr(f64),
    Stop(StopReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainController {
    pub patience: usize,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    lr: f64,
    best_val: f64,
    /// Consecutive non-improving epochs since the best.
    epochs_since_improve: usize,
    /// Non-improving epochs since the last improvement or LR reduction.
    plateau: usize,
    stopped: bool,
}

impl TrainController {
    pub fn new(lr: f64, patience: usize, lr_patience: usize, lr_factor: f64, min_lr: f64) -> Result<Self> {
        if !(lr_factor > 0.0 && lr_factor < 1.0) {
            return Err(Error::Contract(format!("lr_factor must lie in (0, 1), got {lr_factor}")));
        }
        if !(min_lr >= 0.0) || !(lr > 0.0) {
            return Err(Error::Contract("learning rates must be positive".into()));
        }
        if patience == 0 || lr_patience == 0 {
            return Err(Error::Contract("patience values must be at least 1".into()));
        }
        Ok(TrainController {
            patience,
            lr_patience,
            lr_factor,
            min_lr,
            lr: lr.max(min_lr),
            best_val: f64::INFINITY,
            epochs_since_improve: 0,
            plateau: 0,
            stopped: false,
        })
    }

    pub fn with_defaults(lr: f64) -> Self {
        TrainController::new(lr, DEFAULT_PATIENCE, DEFAULT_LR_PATIENCE, DEFAULT_LR_FACTOR, DEFAULT_MIN_LR)
            .expect("defaults are valid")
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best_val(&self) -> f64 {
        self.best_val
    }

    pub fn epochs_since_improve(&self) -> usize {
        self.epochs_since_improve
    }

    /// Feed one epoch's validation loss. Once `Stop` has been returned every
    /// further call is an error.
    pub fn update(&mut self, val_loss: f64) -> Result<Decision> {
        if self.stopped {
            return Err(Error::ControllerStopped);
        }
        if !val_loss.is_finite() {
            self.stopped = true;
            return Ok(Decision::Stop(StopReason::Divergence));
        }
        if val_loss < self.best_val - IMPROVEMENT_EPS {
            self.best_val = val_loss;
            self.epochs_since_improve = 0;
            self.plateau = 0;
            return Ok(Decision::Continue);
        }
        self.epochs_since_improve += 1;
        self.plateau += 1;
        if self.epochs_since_improve >= self.patience {
            self.stopped = true;
            return Ok(Decision::Stop(StopReason::EarlyStop));
        }
        if self.plateau >= self.lr_patience {
            self.plateau = 0;
            let next = (self.lr * self.lr_factor).max(self.min_lr);
            if next < self.lr {
                self.lr = next;
                return Ok(Decision::ReduceLr(next));
            }
        }
        Ok(Decision::Continue)
    }
}

pub fn controller_update(c: &mut TrainController, val_loss: f64) -> Result<Decision> {
    c.update(val_loss)
}
