//! Reference implementations shared by the integration tests. None of these
//! call into the library's numerics; they are written from the textbook
//! definitions so that agreement is meaningful.

#![allow(dead_code)]

use rand::Rng;
use soh_klstm::linalg::Vector;
use soh_klstm::recurrent::{Cell, CellState, KanShape, KlstmParams, LstmParams, Parameters};
use soh_klstm::activations::Activation;

/// Cox–de Boor by direct recursion, `0/0 := 0`, with the last nonempty span
/// closed on the right.
pub fn naive_basis(t: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        let last = *t.last().unwrap();
        if t[i] <= x && x < t[i + 1] {
            return 1.0;
        }
        if x == last && t[i] < t[i + 1] && t[i + 1] == last {
            return 1.0;
        }
        return 0.0;
    }
    let mut v = 0.0;
    let dl = t[i + p] - t[i];
    if dl != 0.0 {
        v += (x - t[i]) / dl * naive_basis(t, i, p - 1, x);
    }
    let dr = t[i + p + 1] - t[i + 1];
    if dr != 0.0 {
        v += (t[i + p + 1] - x) / dr * naive_basis(t, i + 1, p - 1, x);
    }
    v
}

/// Clamped knot vector with `num_basis - degree - 1` random interior knots
/// on `[lo, hi]`.
pub fn random_clamped_knots<R: Rng>(rng: &mut R, degree: usize, num_basis: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut interior: Vec<f64> = (0..num_basis - degree - 1)
        .map(|_| rng.random_range(lo + 1e-3..hi - 1e-3))
        .collect();
    interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut t = vec![lo; degree + 1];
    t.extend(interior);
    t.extend(std::iter::repeat_n(hi, degree + 1));
    t
}

pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vector {
    Vector::from((0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>())
}

/// A small cell with every tensor nonzero.
pub fn random_cell<R: Rng>(rng: &mut R, klstm: bool, hidden: usize, input: usize, kan: KanShape) -> Cell {
    if klstm {
        let mut p = KlstmParams::init(hidden, input, kan, rng).unwrap();
        p.randomize_spline(0.5, rng);
        Cell::Klstm(p)
    } else {
        Cell::Lstm(LstmParams::init(hidden, input, Activation::Tanh, rng))
    }
}

/// Scalar objective `Σ_t r_t · h_t` whose gradient with respect to `h_t` is
/// exactly `r_t`.
pub fn probe_objective(cell: &Cell, xs: &[Vector], probes: &[Vector]) -> f64 {
    let s0 = CellState::zeros(cell.hidden_size());
    let (states, _) = cell.forward_sequence(xs, &s0).unwrap();
    states
        .iter()
        .zip(probes)
        .map(|(s, r)| s.h.iter().zip(r.iter()).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Largest relative disagreement between analytic and central-difference
/// gradients over every entry of every tensor, with `floor` guarding the
/// denominator. Returns `(worst_rel, tensor, index, analytic, numeric)`.
pub fn worst_gradient_error<P: Parameters>(
    params: &P,
    analytic: &P,
    objective: impl Fn(&P) -> f64,
    step: f64,
    floor: f64,
) -> (f64, String, usize, f64, f64) {
    let grads = analytic.tensors();
    let mut worst = (0.0, String::new(), 0, 0.0, 0.0);
    for (k, g) in grads.iter().enumerate() {
        for i in 0..g.data.len() {
            let mut plus = params.clone();
            plus.tensors_mut()[k].1[i] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[k].1[i] -= step;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * step);
            let a = g.data[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > worst.0 {
                worst = (rel, g.name.to_string(), i, a, numeric);
            }
        }
    }
    worst
}
