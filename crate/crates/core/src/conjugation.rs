//! Conjugation of `dy = (By + f(y))dt + ηκ_t y ∘ dW_t` to the random ODE
//! `v̇ = Bv + e^{-ηκ_t z} f(e^{ηκ_t z} v) + η(κ_t − κ̇_t) z v`, `z = z*(θ_t ω)`,
//! together with a Heun oracle for the stochastic equation.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::cocycle::{Trajectory, VectorField};
use crate::driver::PathPoint;
use crate::error::{Error, Result};

/// Time profile `κ_t` of the noise intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseShape {
    /// `κ_t = 1/(1+t²)`.
    Decaying,
    Constant(f64),
}

impl Default for NoiseShape {
    fn default() -> Self {
        NoiseShape::Decaying
    }
}

impl NoiseShape {
    pub fn kappa(&self, t: f64) -> f64 {
        match *self {
            NoiseShape::Decaying => 1.0 / (1.0 + t * t),
            NoiseShape::Constant(c) => c,
        }
    }

    pub fn kappa_dot(&self, t: f64) -> f64 {
        match *self {
            NoiseShape::Decaying => {
                let d = 1.0 + t * t;
                -2.0 * t / (d * d)
            }
            NoiseShape::Constant(_) => 0.0,
        }
    }

    pub fn label(&self) -> String {
        match self {
            NoiseShape::Decaying => "1/(1+t^2)".into(),
            NoiseShape::Constant(c) => format!("{c}"),
        }
    }
}

type MapFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A smooth map `f: R^n → R^n` with its Jacobian.
#[derive(Clone)]
pub struct SmoothMap {
    dim: usize,
    label: String,
    f: Arc<MapFn>,
    df: Arc<JacFn>,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SmoothMap({}, dim {})", self.label, self.dim)
    }
}

impl SmoothMap {
    pub fn new(
        dim: usize,
        label: impl Into<String>,
        f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        df: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        SmoothMap { dim, label: label.into(), f: Arc::new(f), df: Arc::new(df) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, y: &DVector<f64>) -> DVector<f64> {
        (self.f)(y)
    }

    pub fn jacobian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        (self.df)(y)
    }

    pub fn zero(dim: usize) -> Self {
        SmoothMap::new(dim, "zero", move |_| DVector::zeros(dim), move |_| DMatrix::zeros(dim, dim))
    }

    /// Componentwise `y − y³`.
    pub fn cubic(dim: usize) -> Self {
        SmoothMap::new(dim, "y-y^3", |y| y.map(|v| v - v * v * v), |y| DMatrix::from_diagonal(&y.map(|v| 1.0 - 3.0 * v * v)))
    }

    /// `−∇F` for `F(x) = (x₁² − 1)²/4 + x₂²/2`.
    pub fn double_well() -> Self {
        SmoothMap::new(
            2,
            "double-well",
            |x| DVector::from_vec(vec![x[0] - x[0].powi(3), -x[1]]),
            |x| DMatrix::from_row_slice(2, 2, &[1.0 - 3.0 * x[0] * x[0], 0.0, 0.0, -1.0]),
        )
    }

    /// `(0, x₁²)`, the nonlinearity of `ẋ = x, ẏ = −y + x²` with `B = diag(1, −1)`.
    pub fn quadratic_saddle() -> Self {
        SmoothMap::new(
            2,
            "(0,x^2)",
            |x| DVector::from_vec(vec![0.0, x[0] * x[0]]),
            |x| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0 * x[0], 0.0]),
        )
    }

    /// `(x − x³, −y + x²)`.
    pub fn cubic_saddle() -> Self {
        SmoothMap::new(
            2,
            "(x-x^3,-y+x^2)",
            |x| DVector::from_vec(vec![x[0] - x[0].powi(3), -x[1] + x[0] * x[0]]),
            |x| DMatrix::from_row_slice(2, 2, &[1.0 - 3.0 * x[0] * x[0], 0.0, 2.0 * x[0], -1.0]),
        )
    }
}

/// The conjugated random ODE for a given `B`, `f` and `κ`.
#[derive(Debug, Clone)]
pub struct ConjugatedField {
    pub b: DMatrix<f64>,
    pub f: SmoothMap,
    pub shape: NoiseShape,
}

pub fn build_rde(b: DMatrix<f64>, f: SmoothMap, shape: NoiseShape) -> Result<ConjugatedField> {
    if b.nrows() != f.dim() || b.ncols() != f.dim() {
        return Err(Error::InvalidArgument(format!("B is {}x{} but f acts on R^{}", b.nrows(), b.ncols(), f.dim())));
    }
    Ok(ConjugatedField { b, f, shape })
}

impl ConjugatedField {
    /// `(η κ_t z, η (κ_t − κ̇_t) z)` at relative time `t`.
    fn exponents(&self, eta: f64, t: f64, pp: &PathPoint) -> Result<(f64, f64)> {
        let z = pp.z_star(t)?;
        let abs_t = pp.tau + t;
        Ok((eta * self.shape.kappa(abs_t) * z, eta * (self.shape.kappa(abs_t) - self.shape.kappa_dot(abs_t)) * z))
    }
}

impl VectorField for ConjugatedField {
    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn label(&self) -> String {
        format!("conjugated[{}; kappa={}]", self.f.label(), self.shape.label())
    }

    fn rhs(&self, eta: f64, t: f64, pp: &PathPoint, v: &DVector<f64>) -> Result<DVector<f64>> {
        if eta == 0.0 {
            return Ok(&self.b * v + self.f.eval(v));
        }
        let (s, c) = self.exponents(eta, t, pp)?;
        let e = s.exp();
        Ok(&self.b * v + self.f.eval(&(v * e)) / e + v * c)
    }

    fn jac(&self, eta: f64, t: f64, pp: &PathPoint, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        if eta == 0.0 {
            return Ok(&self.b + self.f.jacobian(v));
        }
        let (s, c) = self.exponents(eta, t, pp)?;
        let n = self.dim();
        Ok(&self.b + self.f.jacobian(&(v * s.exp())) + DMatrix::identity(n, n) * c)
    }

    fn uses_driver(&self, eta: f64) -> bool {
        eta != 0.0
    }
}

/// `y = e^{η κ_t z*(θ_t ω)} v`.
pub fn conjugate_state(v: &DVector<f64>, t: f64, pp: &PathPoint, eta: f64, shape: NoiseShape) -> Result<DVector<f64>> {
    if eta == 0.0 {
        return Ok(v.clone());
    }
    let z = pp.z_star(t)?;
    Ok(v * (eta * shape.kappa(pp.tau + t) * z).exp())
}

/// `v = e^{-η κ_t z*(θ_t ω)} y`.
pub fn deconjugate_state(y: &DVector<f64>, t: f64, pp: &PathPoint, eta: f64, shape: NoiseShape) -> Result<DVector<f64>> {
    if eta == 0.0 {
        return Ok(y.clone());
    }
    let z = pp.z_star(t)?;
    Ok(y * (-eta * shape.kappa(pp.tau + t) * z).exp())
}

/// Heun scheme for the Stratonovich equation `dy = (By + f(y))dt + ηκ_t y ∘ dω`
/// driven by the increments of the path seen from `pp`.
#[allow(clippy::too_many_arguments)]
pub fn sde_oracle(
    b: &DMatrix<f64>,
    f: &SmoothMap,
    shape: NoiseShape,
    eta: f64,
    pp: &PathPoint,
    y0: &DVector<f64>,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<Trajectory> {
    let n = crate::cocycle::step_count(t1 - t0, dt)?;
    let drift = |y: &DVector<f64>| b * y + f.eval(y);
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut y = y0.clone();
    times.push(t0);
    states.push(y.clone());
    let mut w0 = pp.path.value(t0)?;
    for i in 0..n {
        let t = t0 + i as f64 * dt;
        let tn = t0 + (i + 1) as f64 * dt;
        let w1 = pp.path.value(tn)?;
        let dw = w1 - w0;
        let s0 = eta * shape.kappa(pp.tau + t);
        let s1 = eta * shape.kappa(pp.tau + tn);
        let a0 = drift(&y);
        let pred = &y + &a0 * dt + &y * (s0 * dw);
        let a1 = drift(&pred);
        y = &y + (a0 + a1) * (0.5 * dt) + (&y * s0 + &pred * s1) * (0.5 * dw);
        if !y.norm().is_finite() || y.norm() > crate::cocycle::BLOW_UP_BOUND {
            return Err(Error::Diverged { t: tn, bound: crate::cocycle::BLOW_UP_BOUND });
        }
        times.push(tn);
        states.push(y.clone());
        w0 = w1;
    }
    Ok(Trajectory { times, states, eta, pp: pp.clone() })
}

/// Grid maxima of `|κ_t z*(θ_t ω)|` and `|(κ_t − κ̇_t) z*(θ_t ω)|` over a window.
pub fn m1_m2_estimate(shape: NoiseShape, pp: &PathPoint, window: (f64, f64), n_grid: usize) -> Result<(f64, f64)> {
    let n = n_grid.max(2);
    let (mut m1, mut m2) = (0.0f64, 0.0f64);
    for k in 0..n {
        let t = window.0 + (window.1 - window.0) * k as f64 / (n - 1) as f64;
        let z = pp.z_star(t)?;
        let abs_t = pp.tau + t;
        m1 = m1.max((shape.kappa(abs_t) * z).abs());
        m2 = m2.max(((shape.kappa(abs_t) - shape.kappa_dot(abs_t)) * z).abs());
    }
    Ok((m1, m2))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SaturationReport {
    pub half_widths: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    /// Relative change of both estimates between the two widest windows is below 5%.
    pub saturated: bool,
}

/// [`m1_m2_estimate`] on the symmetric windows `[−T, T]`, `n_per_unit` grid points per unit time.
pub fn m1_m2_saturation(shape: NoiseShape, pp: &PathPoint, half_widths: &[f64], n_per_unit: usize) -> Result<SaturationReport> {
    let mut m1 = Vec::new();
    let mut m2 = Vec::new();
    for &w in half_widths {
        let (a, b) = m1_m2_estimate(shape, pp, (-w, w), (2.0 * w * n_per_unit as f64) as usize + 1)?;
        m1.push(a);
        m2.push(b);
    }
    let rel = |v: &[f64]| {
        let n = v.len();
        if n < 2 {
            return f64::INFINITY;
        }
        (v[n - 1] - v[n - 2]).abs() / v[n - 2].abs().max(1e-300)
    };
    let saturated = rel(&m1) < 0.05 && rel(&m2) < 0.05;
    Ok(SaturationReport { half_widths: half_widths.to_vec(), m1, m2, saturated })
}
