//! Recurrent cells: the baseline LSTM and the KAN-enhanced KLSTM.
//!
//! Both share the sigmoid gates `i, f, o` computed from `[h_{t-1}, x_t]`.
//! They differ only in the candidate cell state:
//!
//! ```text
//! LSTM:   C̃_t = act(W_C·[h_{t-1}, x_t] + b_C)               act = tanh (or SiLU)
//! KLSTM:  C̃_t = SiLU(W_C·[h_{t-1}, x_t] + b_C) + S(x_t)
//!         S(x)[h] = Σ_q Σ_j w[h,q,j] · B_j(squash(s_q)),   s = Ψ(clamp(x))
//!         squash(s) = lo + (hi - lo)·(tanh(s) + 1)/2
//! ```
//!
//! followed by `c_t = f⊙c_{t-1} + i⊙C̃_t` and `h_t = o⊙tanh(c_t)`.
//!
//! Gradients are computed by hand-written backpropagation through time over
//! a [`ForwardTape`] recorded during the forward pass.

use rand::Rng;

use crate::activations::{sigmoid, Activation};
use crate::linalg::{concat, Matrix, Vector};
use crate::splines::{PsiTransform, SplineBasis, DEFAULT_DEGREE, DEFAULT_NUM_BASIS};
use crate::{Error, Result};

/// Borrowed view of one named trainable tensor.
#[derive(Debug, Clone)]
pub struct TensorView<'a> {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// A set of named trainable tensors with a fixed order. Gradients are
/// represented by a value of the same type.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<TensorView<'_>>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    fn add_assign(&mut self, other: &Self) {
        let src = other.tensors();
        for ((_, dst), s) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s.data) {
                *d += v;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vector,
    pub c: Vector,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        CellState {
            h: Vector::zeros(hidden),
            c: Vector::zeros(hidden),
        }
    }
}

/// Gate and candidate parameters shared by both cell types.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    hidden: usize,
    input: usize,
    /// Candidate activation; tanh for the classic cell.
    candidate: Activation,
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_o: Matrix,
    pub w_c: Matrix,
    pub b_i: Vector,
    pub b_f: Vector,
    pub b_o: Vector,
    pub b_c: Vector,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize, candidate: Activation) -> Self {
        let m = || Matrix::zeros(hidden, hidden + input);
        LstmParams {
            hidden,
            input,
            candidate,
            w_i: m(),
            w_f: m(),
            w_o: m(),
            w_c: m(),
            b_i: Vector::zeros(hidden),
            b_f: Vector::zeros(hidden),
            b_o: Vector::zeros(hidden),
            b_c: Vector::zeros(hidden),
        }
    }

    /// Weights uniform in `±1/√(H+n)`, forget bias 1, other biases 0.
    pub fn init<R: Rng + ?Sized>(hidden: usize, input: usize, candidate: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / ((hidden + input) as f64).sqrt();
        let mut p = LstmParams::zeros(hidden, input, candidate);
        p.w_i = Matrix::uniform(hidden, hidden + input, bound, rng);
        p.w_f = Matrix::uniform(hidden, hidden + input, bound, rng);
        p.w_o = Matrix::uniform(hidden, hidden + input, bound, rng);
        p.w_c = Matrix::uniform(hidden, hidden + input, bound, rng);
        p.b_f = Vector::filled(hidden, 1.0);
        p
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn candidate(&self) -> Activation {
        self.candidate
    }

    /// Overwrite every weight and bias with values uniform in `±bound`.
    pub fn randomize<R: Rng + ?Sized>(&mut self, bound: f64, rng: &mut R) {
        for (_, t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
    }
}

impl Parameters for LstmParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        fn mat<'a>(name: &'static str, m: &'a Matrix) -> TensorView<'a> {
            TensorView {
                name,
                shape: vec![m.rows(), m.cols()],
                data: m.as_slice(),
            }
        }
        fn vec<'a>(name: &'static str, v: &'a Vector) -> TensorView<'a> {
            TensorView {
                name,
                shape: vec![v.len()],
                data: v.as_slice(),
            }
        }
        vec![
            mat("cell.w_i", &self.w_i),
            mat("cell.w_f", &self.w_f),
            mat("cell.w_o", &self.w_o),
            mat("cell.w_c", &self.w_c),
            vec("cell.b_i", &self.b_i),
            vec("cell.b_f", &self.b_f),
            vec("cell.b_o", &self.b_o),
            vec("cell.b_c", &self.b_c),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("cell.w_i", self.w_i.as_mut_slice()),
            ("cell.w_f", self.w_f.as_mut_slice()),
            ("cell.w_o", self.w_o.as_mut_slice()),
            ("cell.w_c", self.w_c.as_mut_slice()),
            ("cell.b_i", self.b_i.as_mut_slice()),
            ("cell.b_f", self.b_f.as_mut_slice()),
            ("cell.b_o", self.b_o.as_mut_slice()),
            ("cell.b_c", self.b_c.as_mut_slice()),
        ]
    }
}

/// Shape of the spline branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KanShape {
    pub degree: usize,
    /// Inner basis size `G` (per-feature splines).
    pub inner_basis: usize,
    /// Outer basis size `G_out` (shared expansion of each aggregate).
    pub outer_basis: usize,
    /// Aggregation channels `Q`.
    pub channels: usize,
}

impl Default for KanShape {
    fn default() -> Self {
        KanShape {
            degree: DEFAULT_DEGREE,
            inner_basis: DEFAULT_NUM_BASIS,
            outer_basis: DEFAULT_NUM_BASIS,
            channels: 1,
        }
    }
}

/// Domain of both spline grids; inputs are min-max normalized into it.
pub const SPLINE_DOMAIN: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Clone, PartialEq)]
pub struct KlstmParams {
    /// Gates plus the SiLU branch (`w_c`, `b_c`).
    pub gates: LstmParams,
    pub psi: PsiTransform,
    outer_basis: SplineBasis,
    /// Layout `[hidden][channel][outer basis]`.
    outer_w: Vec<f64>,
}

impl KlstmParams {
    pub fn zeros(hidden: usize, input: usize, shape: KanShape) -> Result<Self> {
        let (lo, hi) = SPLINE_DOMAIN;
        let inner = SplineBasis::clamped_uniform(shape.degree, shape.inner_basis, lo, hi)?;
        let outer = SplineBasis::clamped_uniform(shape.degree, shape.outer_basis, lo, hi)?;
        if shape.channels == 0 {
            return Err(Error::Contract("spline branch needs at least one channel".into()));
        }
        Ok(KlstmParams {
            gates: LstmParams::zeros(hidden, input, Activation::Silu),
            psi: PsiTransform::zeros(inner, shape.channels, input),
            outer_w: vec![0.0; hidden * shape.channels * shape.outer_basis],
            outer_basis: outer,
        })
    }

    /// Gates initialized as for the LSTM; the whole spline branch starts at
    /// zero, i.e. at the SiLU-candidate LSTM.
    pub fn init<R: Rng + ?Sized>(hidden: usize, input: usize, shape: KanShape, rng: &mut R) -> Result<Self> {
        let mut p = KlstmParams::zeros(hidden, input, shape)?;
        p.gates = LstmParams::init(hidden, input, Activation::Silu, rng);
        Ok(p)
    }

    pub fn shape(&self) -> KanShape {
        KanShape {
            degree: self.outer_basis.degree(),
            inner_basis: self.psi.basis().num_basis(),
            outer_basis: self.outer_basis.num_basis(),
            channels: self.psi.channels(),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.gates.hidden
    }

    pub fn input_size(&self) -> usize {
        self.gates.input
    }

    pub fn outer_basis(&self) -> &SplineBasis {
        &self.outer_basis
    }

    pub fn outer_w(&self) -> &[f64] {
        &self.outer_w
    }

    pub fn outer_w_mut(&mut self) -> &mut [f64] {
        &mut self.outer_w
    }

    pub fn randomize_spline<R: Rng + ?Sized>(&mut self, bound: f64, rng: &mut R) {
        self.psi.randomize(bound, rng);
        for w in &mut self.outer_w {
            *w = rng.random_range(-bound..=bound);
        }
    }

    #[inline]
    fn outer_idx(&self, h: usize, q: usize, j: usize) -> usize {
        (h * self.psi.channels() + q) * self.outer_basis.num_basis() + j
    }
}

impl Parameters for KlstmParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut v = self.gates.tensors();
        v.push(TensorView {
            name: "cell.psi_coeffs",
            shape: self.psi.shape().to_vec(),
            data: self.psi.coeffs(),
        });
        v.push(TensorView {
            name: "cell.outer_w",
            shape: vec![
                self.gates.hidden,
                self.psi.channels(),
                self.outer_basis.num_basis(),
            ],
            data: &self.outer_w,
        });
        v
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut v = self.gates.tensors_mut();
        v.push(("cell.psi_coeffs", self.psi.coeffs_mut()));
        v.push(("cell.outer_w", &mut self.outer_w));
        v
    }
}

/// Either recurrent cell. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Lstm(LstmParams),
    Klstm(KlstmParams),
}

impl Parameters for Cell {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        match self {
            Cell::Lstm(p) => p.tensors(),
            Cell::Klstm(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        match self {
            Cell::Lstm(p) => p.tensors_mut(),
            Cell::Klstm(p) => p.tensors_mut(),
        }
    }
}

#[derive(Debug, Clone)]
struct SplineCache {
    /// Per-feature inner basis values at the clamped inputs.
    inner_basis: Vec<Vector>,
    /// Aggregates `s_q` before squashing.
    aggregate: Vector,
    outer_basis: Vec<Vector>,
    outer_deriv: Vec<Vector>,
}

/// Everything a single step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    zcat: Vector,
    c_prev: Vector,
    pub input_gate: Vector,
    pub forget_gate: Vector,
    pub output_gate: Vector,
    candidate_pre: Vector,
    pub candidate: Vector,
    pub c: Vector,
    tanh_c: Vector,
    pub h: Vector,
    spline: Option<SplineCache>,
}

/// Per-timestep caches, in processing order.
#[derive(Debug, Clone, Default)]
pub struct ForwardTape {
    pub steps: Vec<StepCache>,
}

impl ForwardTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

struct GateOut {
    zcat: Vector,
    i: Vector,
    f: Vector,
    o: Vector,
    a_c: Vector,
}

fn check_step_shapes(p: &LstmParams, x: &Vector, s: &CellState) -> Result<()> {
    if x.len() != p.input {
        return Err(Error::shape(
            "cell step",
            format!("input_size {}", p.input),
            format!("x vector[{}]", x.len()),
        ));
    }
    if s.h.len() != p.hidden || s.c.len() != p.hidden {
        return Err(Error::shape(
            "cell step",
            format!("hidden_size {}", p.hidden),
            format!("state h[{}], c[{}]", s.h.len(), s.c.len()),
        ));
    }
    Ok(())
}

fn gate_forward(p: &LstmParams, x: &Vector, s: &CellState, t: usize) -> Result<GateOut> {
    check_step_shapes(p, x, s)?;
    let zcat = concat(&s.h, x);
    let pre = |w: &Matrix, b: &Vector| -> Result<Vector> {
        let mut z = w.matvec(&zcat)?;
        for (zi, bi) in z.as_mut_slice().iter_mut().zip(b.iter()) {
            *zi += bi;
        }
        if !z.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite pre-activation at timestep {t}"
            )));
        }
        Ok(z)
    };
    let a_i = pre(&p.w_i, &p.b_i)?;
    let a_f = pre(&p.w_f, &p.b_f)?;
    let a_o = pre(&p.w_o, &p.b_o)?;
    let a_c = pre(&p.w_c, &p.b_c)?;
    Ok(GateOut {
        i: a_i.map(sigmoid),
        f: a_f.map(sigmoid),
        o: a_o.map(sigmoid),
        a_c,
        zcat,
    })
}

fn finish_step(g: GateOut, candidate: Vector, s: &CellState, spline: Option<SplineCache>) -> (CellState, StepCache) {
    let hdim = candidate.len();
    let mut c = Vector::zeros(hdim);
    let mut tanh_c = Vector::zeros(hdim);
    let mut h = Vector::zeros(hdim);
    for k in 0..hdim {
        c[k] = g.f[k] * s.c[k] + g.i[k] * candidate[k];
        tanh_c[k] = c[k].tanh();
        h[k] = g.o[k] * tanh_c[k];
    }
    let state = CellState {
        h: h.clone(),
        c: c.clone(),
    };
    let cache = StepCache {
        zcat: g.zcat,
        c_prev: s.c.clone(),
        input_gate: g.i,
        forget_gate: g.f,
        output_gate: g.o,
        candidate_pre: g.a_c,
        candidate,
        c,
        tanh_c,
        h,
        spline,
    };
    (state, cache)
}

fn lstm_step_at(p: &LstmParams, x: &Vector, s: &CellState, t: usize) -> Result<(CellState, StepCache)> {
    let g = gate_forward(p, x, s, t)?;
    let candidate = p.candidate.apply(&g.a_c);
    Ok(finish_step(g, candidate, s, None))
}

#[inline]
fn squash(s: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * 0.5 * (s.tanh() + 1.0)
}

fn klstm_step_at(p: &KlstmParams, x: &Vector, s: &CellState, t: usize) -> Result<(CellState, StepCache)> {
    let g = gate_forward(&p.gates, x, s, t)?;
    let inner = p.psi.basis();
    let clamped = x.map(|v| inner.clamp(v));
    let inner_basis = p.psi.basis_values(&clamped)?;
    let aggregate = p.psi.combine(&inner_basis);
    let (lo, hi) = p.outer_basis.domain();
    let mut outer_basis = Vec::with_capacity(aggregate.len());
    let mut outer_deriv = Vec::with_capacity(aggregate.len());
    for &sq in aggregate.iter() {
        if !sq.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite spline aggregate at timestep {t}"
            )));
        }
        let (b, db) = p.outer_basis.eval_with_derivative(squash(sq, lo, hi))?;
        outer_basis.push(b);
        outer_deriv.push(db);
    }
    let hdim = p.gates.hidden;
    let g_out = p.outer_basis.num_basis();
    let mut candidate = p.gates.candidate.apply(&g.a_c);
    for h in 0..hdim {
        let mut spline = 0.0;
        for (q, b) in outer_basis.iter().enumerate() {
            for j in 0..g_out {
                spline += p.outer_w[p.outer_idx(h, q, j)] * b[j];
            }
        }
        candidate[h] += spline;
    }
    let cache = SplineCache {
        inner_basis,
        aggregate,
        outer_basis,
        outer_deriv,
    };
    Ok(finish_step(g, candidate, s, Some(cache)))
}

/// One LSTM step from state `s` on input `x`.
pub fn lstm_step(p: &LstmParams, x: &Vector, s: &CellState) -> Result<(CellState, StepCache)> {
    lstm_step_at(p, x, s, 0)
}

/// One KLSTM step. Inputs are clamped into the spline domain for the spline
/// branch only; the gates and SiLU branch see them unclamped.
pub fn klstm_step(p: &KlstmParams, x: &Vector, s: &CellState) -> Result<(CellState, StepCache)> {
    klstm_step_at(p, x, s, 0)
}

impl Cell {
    pub fn hidden_size(&self) -> usize {
        match self {
            Cell::Lstm(p) => p.hidden,
            Cell::Klstm(p) => p.gates.hidden,
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            Cell::Lstm(p) => p.input,
            Cell::Klstm(p) => p.gates.input,
        }
    }

    pub fn step(&self, x: &Vector, s: &CellState) -> Result<(CellState, StepCache)> {
        self.step_at(x, s, 0)
    }

    fn step_at(&self, x: &Vector, s: &CellState, t: usize) -> Result<(CellState, StepCache)> {
        match self {
            Cell::Lstm(p) => lstm_step_at(p, x, s, t),
            Cell::Klstm(p) => klstm_step_at(p, x, s, t),
        }
    }

    /// Run the cell over `xs` from `s0`, returning every state.
    pub fn forward_sequence(&self, xs: &[Vector], s0: &CellState) -> Result<(Vec<CellState>, ForwardTape)> {
        if xs.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut states = Vec::with_capacity(xs.len());
        let mut tape = ForwardTape::default();
        let mut s = s0.clone();
        for (t, x) in xs.iter().enumerate() {
            let (next, cache) = self.step_at(x, &s, t)?;
            tape.steps.push(cache);
            states.push(next.clone());
            s = next;
        }
        Ok((states, tape))
    }

    /// Backpropagation through time. `upstream[t]` is `∂L/∂h_t` from outside
    /// the recurrence; the returned value holds `∂L/∂θ` for every tensor.
    pub fn backward_sequence(&self, tape: &ForwardTape, upstream: &[Vector]) -> Result<Cell> {
        if tape.len() != upstream.len() {
            return Err(Error::shape(
                "backward_sequence",
                format!("tape of {} steps", tape.len()),
                format!("{} upstream gradients", upstream.len()),
            ));
        }
        let hdim = self.hidden_size();
        if let Some(bad) = upstream.iter().find(|u| u.len() != hdim) {
            return Err(Error::shape(
                "backward_sequence",
                format!("hidden_size {hdim}"),
                format!("upstream vector[{}]", bad.len()),
            ));
        }
        let mut grads = self.zeros_like();
        let mut dh_next = Vector::zeros(hdim);
        let mut dc_next = Vector::zeros(hdim);
        for (step, up) in tape.steps.iter().zip(upstream).rev() {
            let (dh_prev, dc_prev) = self.backward_step(step, up, &dh_next, &dc_next, &mut grads)?;
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok(grads)
    }

    fn backward_step(
        &self,
        step: &StepCache,
        upstream: &Vector,
        dh_next: &Vector,
        dc_next: &Vector,
        grads: &mut Cell,
    ) -> Result<(Vector, Vector)> {
        let hdim = self.hidden_size();
        let gates = match self {
            Cell::Lstm(p) => p,
            Cell::Klstm(p) => &p.gates,
        };
        let mut da_i = Vector::zeros(hdim);
        let mut da_f = Vector::zeros(hdim);
        let mut da_o = Vector::zeros(hdim);
        let mut d_cand = Vector::zeros(hdim);
        let mut dc_prev = Vector::zeros(hdim);
        for k in 0..hdim {
            let dh = upstream[k] + dh_next[k];
            let (i, f, o) = (step.input_gate[k], step.forget_gate[k], step.output_gate[k]);
            let tc = step.tanh_c[k];
            da_o[k] = dh * tc * o * (1.0 - o);
            let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
            da_i[k] = dc * step.candidate[k] * i * (1.0 - i);
            da_f[k] = dc * step.c_prev[k] * f * (1.0 - f);
            d_cand[k] = dc * i;
            dc_prev[k] = dc * f;
        }
        let da_c = Vector::from(
            d_cand
                .iter()
                .zip(step.candidate_pre.iter())
                .map(|(d, &a)| d * gates.candidate.derivative_at(a))
                .collect::<Vec<_>>(),
        );

        if let (Cell::Klstm(p), Cell::Klstm(gk)) = (self, &mut *grads) {
            let sc = step
                .spline
                .as_ref()
                .ok_or_else(|| Error::Contract("tape entry lacks spline cache".into()))?;
            let (lo, hi) = p.outer_basis.domain();
            let g_out = p.outer_basis.num_basis();
            let channels = p.psi.channels();
            let mut d_agg = Vector::zeros(channels);
            for q in 0..channels {
                let b = &sc.outer_basis[q];
                let db = &sc.outer_deriv[q];
                let mut du = 0.0;
                for h in 0..hdim {
                    let dc = d_cand[h];
                    for j in 0..g_out {
                        let idx = p.outer_idx(h, q, j);
                        gk.outer_w[idx] += dc * b[j];
                        du += dc * p.outer_w[idx] * db[j];
                    }
                }
                let th = sc.aggregate[q].tanh();
                d_agg[q] = du * (hi - lo) * 0.5 * (1.0 - th * th);
            }
            p.psi
                .accumulate_coeff_grad(&sc.inner_basis, &d_agg, gk.psi.coeffs_mut());
        }

        let g = match grads {
            Cell::Lstm(g) => g,
            Cell::Klstm(g) => &mut g.gates,
        };
        g.w_i.outer_accumulate(&da_i, &step.zcat)?;
        g.w_f.outer_accumulate(&da_f, &step.zcat)?;
        g.w_o.outer_accumulate(&da_o, &step.zcat)?;
        g.w_c.outer_accumulate(&da_c, &step.zcat)?;
        for k in 0..hdim {
            g.b_i[k] += da_i[k];
            g.b_f[k] += da_f[k];
            g.b_o[k] += da_o[k];
            g.b_c[k] += da_c[k];
        }

        let mut dz = gates.w_i.matvec_transpose(&da_i)?;
        for (w, da) in [(&gates.w_f, &da_f), (&gates.w_o, &da_o), (&gates.w_c, &da_c)] {
            let part = w.matvec_transpose(da)?;
            for (a, b) in dz.as_mut_slice().iter_mut().zip(part.iter()) {
                *a += b;
            }
        }
        let dh_prev = Vector::from(&dz.as_slice()[..hdim]);
        Ok((dh_prev, dc_prev))
    }
}

pub fn forward_sequence(cell: &Cell, xs: &[Vector], s0: &CellState) -> Result<(Vec<CellState>, ForwardTape)> {
    cell.forward_sequence(xs, s0)
}

pub fn backward_sequence(cell: &Cell, tape: &ForwardTape, upstream: &[Vector]) -> Result<Cell> {
    cell.backward_sequence(tape, upstream)
}
