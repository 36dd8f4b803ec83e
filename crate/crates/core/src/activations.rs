//! Scalar nonlinearities used by the recurrent cells.

use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Silu,
}

/// Logistic function, branching on sign so `exp` never overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x · σ(x)`.
#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Silu => silu(x),
        }
    }

    #[inline]
    pub fn derivative_at(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Silu => silu_derivative(x),
        }
    }

    pub fn apply(self, x: &Vector) -> Vector {
        x.map(|v| self.eval(v))
    }

    pub fn derivative(self, x: &Vector) -> Vector {
        x.map(|v| self.derivative_at(v))
    }
}

pub fn apply(a: Activation, x: &Vector) -> Vector {
    a.apply(x)
}

pub fn derivative(a: Activation, x: &Vector) -> Vector {
    a.derivative(x)
}
