//! B-spline machinery: knot vectors, Cox-de Boor basis evaluation, basis
//! derivatives, and the per-feature spline transform `Ψ` feeding the KAN
//! branch of the cell.
//!
//! Conventions:
//!
//! - Degree-0 intervals are half-open `[t_i, t_{i+1})`, except that the final
//!   non-empty interval is closed on the right so the last domain endpoint is
//!   evaluable (min-max normalized features reach exactly 1.0).
//! - Every `0/0` term arising from repeated knots is taken as 0.

use rand::Rng;

use crate::linalg::Vector;
use crate::{Error, Result};

pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_NUM_BASIS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    /// An arbitrary nondecreasing knot sequence with at least `degree + 2`
    /// knots (so that at least one basis function exists).
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if knots.len() < degree + 2 {
            return Err(Error::InvalidKnots(format!(
                "{} knots cannot carry a degree-{degree} basis",
                knots.len()
            )));
        }
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidKnots("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be nondecreasing".into()));
        }
        if knots[0] == knots[knots.len() - 1] {
            return Err(Error::InvalidKnots("knot span has zero width".into()));
        }
        Ok(KnotVector { knots, degree })
    }

    /// Uniform interior knots on `[lo, hi]` with `degree + 1` repeated knots
    /// at each end, giving exactly `num_basis` basis functions.
    pub fn clamped_uniform(degree: usize, num_basis: usize, lo: f64, hi: f64) -> Result<Self> {
        if num_basis < degree + 1 {
            return Err(Error::InvalidKnots(format!(
                "a clamped degree-{degree} grid needs at least {} basis functions, got {num_basis}",
                degree + 1
            )));
        }
        if !(lo < hi) {
            return Err(Error::InvalidKnots(format!("empty interval [{lo}, {hi}]")));
        }
        let intervals = num_basis - degree;
        let mut knots = Vec::with_capacity(num_basis + degree + 1);
        knots.extend(std::iter::repeat_n(lo, degree));
        for j in 0..=intervals {
            let t = if j == intervals {
                hi
            } else {
                lo + (hi - lo) * j as f64 / intervals as f64
            };
            knots.push(t);
        }
        knots.extend(std::iter::repeat_n(hi, degree));
        KnotVector::new(knots, degree)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// First `degree + 1` and last `degree + 1` knots coincide.
    pub fn is_clamped(&self) -> bool {
        let k = self.degree;
        let m = self.knots.len();
        m >= 2 * (k + 1)
            && self.knots[..=k].iter().all(|&t| t == self.knots[0])
            && self.knots[m - k - 1..].iter().all(|&t| t == self.knots[m - 1])
    }

    /// `[t_k, t_{m-k-1}]`, where the basis forms a partition of unity.
    /// Grids too short to have that interval report their full span.
    pub fn domain(&self) -> (f64, f64) {
        let k = self.degree;
        let m = self.knots.len();
        if m >= 2 * (k + 1) && self.knots[k] < self.knots[m - k - 1] {
            (self.knots[k], self.knots[m - k - 1])
        } else {
            self.span()
        }
    }

    /// `[t_0, t_{m-1}]`, where basis values are defined.
    pub fn span(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    knots: KnotVector,
}

impl SplineBasis {
    pub fn new(knots: KnotVector) -> Self {
        SplineBasis { knots }
    }

    pub fn clamped_uniform(degree: usize, num_basis: usize, lo: f64, hi: f64) -> Result<Self> {
        Ok(SplineBasis::new(KnotVector::clamped_uniform(
            degree, num_basis, lo, hi,
        )?))
    }

    pub fn knot_vector(&self) -> &KnotVector {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.knots.degree
    }

    pub fn num_basis(&self) -> usize {
        self.knots.num_basis()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.knots.domain()
    }

    pub fn clamp(&self, x: f64) -> f64 {
        let (lo, hi) = self.domain();
        x.clamp(lo, hi)
    }

    fn check_x(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.knots.span();
        if !(lo..=hi).contains(&x) {
            return Err(Error::OutsideDomain { x, lo, hi });
        }
        Ok(())
    }

    /// All basis functions of degree `d ≤ k` at `x`: `m - 1 - d` values.
    fn table(&self, x: f64, d: usize) -> Vec<f64> {
        let t = &self.knots.knots;
        let m = t.len();
        let mut level = vec![0.0; m - 1];
        let last = t[m - 1];
        if x == last {
            if let Some(i) = (0..m - 1).rev().find(|&i| t[i] < t[i + 1]) {
                level[i] = 1.0;
            }
        } else if let Some(i) = (0..m - 1).find(|&i| t[i] <= x && x < t[i + 1]) {
            level[i] = 1.0;
        }
        for p in 1..=d {
            let next = (0..m - 1 - p)
                .map(|i| {
                    let mut v = 0.0;
                    let den_l = t[i + p] - t[i];
                    if den_l != 0.0 {
                        v += (x - t[i]) / den_l * level[i];
                    }
                    let den_r = t[i + p + 1] - t[i + 1];
                    if den_r != 0.0 {
                        v += (t[i + p + 1] - x) / den_r * level[i + 1];
                    }
                    v
                })
                .collect();
            level = next;
        }
        level
    }

    /// `N_{i,k}(x)` for every basis index `i`.
    pub fn eval(&self, x: f64) -> Result<Vector> {
        self.check_x(x)?;
        Ok(Vector::from(self.table(x, self.degree())))
    }

    /// `dN_{i,k}/dx` for every basis index `i`.
    pub fn derivative(&self, x: f64) -> Result<Vector> {
        Ok(self.eval_with_derivative(x)?.1)
    }

    pub fn eval_with_derivative(&self, x: f64) -> Result<(Vector, Vector)> {
        let k = self.degree();
        if k == 0 {
            return Err(Error::UnsupportedDegree(0));
        }
        self.check_x(x)?;
        let lower = self.table(x, k - 1);
        let t = &self.knots.knots;
        let kf = k as f64;
        let g = self.num_basis();
        let mut deriv = Vec::with_capacity(g);
        for i in 0..g {
            let mut d = 0.0;
            let den_l = t[i + k] - t[i];
            if den_l != 0.0 {
                d += kf / den_l * lower[i];
            }
            let den_r = t[i + k + 1] - t[i + 1];
            if den_r != 0.0 {
                d -= kf / den_r * lower[i + 1];
            }
            deriv.push(d);
        }
        // degree-k values from the same lower level
        let mut values = Vec::with_capacity(g);
        for i in 0..g {
            let mut v = 0.0;
            let den_l = t[i + k] - t[i];
            if den_l != 0.0 {
                v += (x - t[i]) / den_l * lower[i];
            }
            let den_r = t[i + k + 1] - t[i + 1];
            if den_r != 0.0 {
                v += (t[i + k + 1] - x) / den_r * lower[i + 1];
            }
            values.push(v);
        }
        Ok((Vector::from(values), Vector::from(deriv)))
    }
}

pub fn basis_eval(basis: &SplineBasis, x: f64) -> Result<Vector> {
    basis.eval(x)
}

pub fn basis_derivative(basis: &SplineBasis, x: f64) -> Result<Vector> {
    basis.derivative(x)
}

/// Learned univariate spline per (channel, feature) pair, summed over
/// features: `out[q] = Σ_p Σ_i c[i,q,p] · B_i(x_p)`.
///
/// Coefficients are stored flat with layout `[basis][channel][feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiTransform {
    basis: SplineBasis,
    channels: usize,
    features: usize,
    coeffs: Vec<f64>,
}

impl PsiTransform {
    pub fn zeros(basis: SplineBasis, channels: usize, features: usize) -> Self {
        let len = basis.num_basis() * channels * features;
        PsiTransform {
            basis,
            channels,
            features,
            coeffs: vec![0.0; len],
        }
    }

    pub fn with_coeffs(
        basis: SplineBasis,
        channels: usize,
        features: usize,
        coeffs: Vec<f64>,
    ) -> Result<Self> {
        let expected = basis.num_basis() * channels * features;
        if coeffs.len() != expected {
            return Err(Error::shape(
                "psi coefficients",
                format!("[{} x {channels} x {features}]", basis.num_basis()),
                format!("{} values", coeffs.len()),
            ));
        }
        Ok(PsiTransform {
            basis,
            channels,
            features,
            coeffs,
        })
    }

    pub fn randomize<R: Rng + ?Sized>(&mut self, bound: f64, rng: &mut R) {
        for c in &mut self.coeffs {
            *c = rng.random_range(-bound..=bound);
        }
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// `(G, Q, n)`.
    pub fn shape(&self) -> [usize; 3] {
        [self.basis.num_basis(), self.channels, self.features]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    #[inline]
    fn idx(&self, i: usize, q: usize, p: usize) -> usize {
        (i * self.channels + q) * self.features + p
    }

    fn check_input(&self, x: &Vector) -> Result<()> {
        if x.len() != self.features {
            return Err(Error::shape(
                "psi",
                format!("{} features", self.features),
                format!("vector[{}]", x.len()),
            ));
        }
        Ok(())
    }

    /// Basis values for each feature, `n` vectors of length `G`.
    pub fn basis_values(&self, x: &Vector) -> Result<Vec<Vector>> {
        self.check_input(x)?;
        x.iter().map(|&xp| self.basis.eval(xp)).collect()
    }

    /// Combine precomputed per-feature basis values into the `Q` outputs.
    pub fn combine(&self, basis_values: &[Vector]) -> Vector {
        let g = self.basis.num_basis();
        let mut out = Vector::zeros(self.channels);
        for q in 0..self.channels {
            let mut s = 0.0;
            for (p, b) in basis_values.iter().enumerate() {
                for i in 0..g {
                    s += self.coeffs[self.idx(i, q, p)] * b[i];
                }
            }
            out[q] = s;
        }
        out
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        Ok(self.combine(&self.basis_values(x)?))
    }

    /// `grad[i,q,p] += upstream[q] · B_i(x_p)`.
    pub fn accumulate_coeff_grad(&self, basis_values: &[Vector], upstream: &Vector, grad: &mut [f64]) {
        let g = self.basis.num_basis();
        for q in 0..self.channels {
            let u = upstream[q];
            if u == 0.0 {
                continue;
            }
            for (p, b) in basis_values.iter().enumerate() {
                for i in 0..g {
                    grad[self.idx(i, q, p)] += u * b[i];
                }
            }
        }
    }

    /// Gradients of `upstream · apply(x)` with respect to the coefficients
    /// (flat, same layout as [`coeffs`](Self::coeffs)) and to `x`.
    pub fn backward(&self, x: &Vector, upstream: &Vector) -> Result<(Vec<f64>, Vector)> {
        self.check_input(x)?;
        if upstream.len() != self.channels {
            return Err(Error::shape(
                "psi_backward",
                format!("{} channels", self.channels),
                format!("upstream vector[{}]", upstream.len()),
            ));
        }
        let g = self.basis.num_basis();
        let mut grad_c = vec![0.0; self.coeffs.len()];
        let mut grad_x = Vector::zeros(self.features);
        let mut values = Vec::with_capacity(self.features);
        for (p, &xp) in x.iter().enumerate() {
            let (b, db) = self.basis.eval_with_derivative(xp)?;
            let mut gx = 0.0;
            for q in 0..self.channels {
                let mut s = 0.0;
                for i in 0..g {
                    s += self.coeffs[self.idx(i, q, p)] * db[i];
                }
                gx += upstream[q] * s;
            }
            grad_x[p] = gx;
            values.push(b);
        }
        self.accumulate_coeff_grad(&values, upstream, &mut grad_c);
        Ok((grad_c, grad_x))
    }
}

pub fn psi_apply(psi: &PsiTransform, x: &Vector) -> Result<Vector> {
    psi.apply(x)
}

pub fn psi_backward(psi: &PsiTransform, x: &Vector, upstream: &Vector) -> Result<(Vec<f64>, Vector)> {
    psi.backward(x, upstream)
}
