//! Galerkin truncation of the damped wave equation `u_tt + β_η u_t = Δu + f(u)`
//! on `(0, π)` with Dirichlet conditions, where the damping carries the noise:
//! `β_η(t) = β + η |κ_t z*(θ_t ω)|`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cocycle::{integrate, VectorField};
use crate::conjugation::NoiseShape;
use crate::driver::PathPoint;
use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, linear_fit, spectral_norm};

pub const MAX_MODES: usize = 64;

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar nonlinearity with two derivatives and the primitive `G(s) = ∫₀ˢ f`.
#[derive(Clone)]
pub struct ScalarNonlinearity {
    pub label: String,
    pub f: Scalar,
    pub df: Scalar,
    pub ddf: Scalar,
    pub g: Scalar,
}

impl std::fmt::Debug for ScalarNonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ScalarNonlinearity({})", self.label)
    }
}

impl ScalarNonlinearity {
    pub fn zero() -> Self {
        ScalarNonlinearity {
            label: "zero".into(),
            f: Arc::new(|_| 0.0),
            df: Arc::new(|_| 0.0),
            ddf: Arc::new(|_| 0.0),
            g: Arc::new(|_| 0.0),
        }
    }

    /// `f(s) = μ s − s³`.
    pub fn cubic(mu: f64) -> Self {
        ScalarNonlinearity {
            label: if mu == 1.0 { "u-u^3".into() } else { format!("{mu}u-u^3") },
            f: Arc::new(move |s| mu * s - s * s * s),
            df: Arc::new(move |s| mu - 3.0 * s * s),
            ddf: Arc::new(|s| -6.0 * s),
            g: Arc::new(move |s| 0.5 * mu * s * s - 0.25 * s.powi(4)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WaveGalerkinSpec {
    pub n_modes: usize,
    pub beta: f64,
    pub f: ScalarNonlinearity,
    pub shape: NoiseShape,
}

impl WaveGalerkinSpec {
    pub fn new(n_modes: usize, beta: f64) -> Self {
        WaveGalerkinSpec { n_modes, beta, f: ScalarNonlinearity::cubic(1.0), shape: NoiseShape::Decaying }
    }

    pub fn with_f(mut self, f: ScalarNonlinearity) -> Self {
        self.f = f;
        self
    }
}

/// Mode coefficients of `u` and `v = u_t` in the basis `sin(kx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
}

impl WaveState {
    pub fn from_vector(y: &DVector<f64>) -> Self {
        let n = y.len() / 2;
        WaveState { a: y.rows(0, n).into_owned(), b: y.rows(n, n).into_owned() }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.a.len();
        let mut y = DVector::zeros(2 * n);
        y.rows_mut(0, n).copy_from(&self.a);
        y.rows_mut(n, n).copy_from(&self.b);
        y
    }

    pub fn h1_norm(&self) -> f64 {
        self.a.iter().enumerate().map(|(i, a)| ((i + 1) as f64 * a).powi(2) * PI / 2.0).sum::<f64>().sqrt()
    }

    /// `H¹₀ × L²` norm.
    pub fn energy_norm(&self) -> f64 {
        (self.h1_norm().powi(2) + self.b.norm_squared() * PI / 2.0).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct WaveSystem {
    pub spec: WaveGalerkinSpec,
    /// Collocation points `x_j = πj/(M+1)`, `j = 1..M`, `M = 4N`.
    pub nodes: Vec<f64>,
    /// `sin(k x_j)`, `M × N`.
    synth: DMatrix<f64>,
    /// Discrete sine projection, `N × M`.
    proj: DMatrix<f64>,
}

pub fn build_wave_family(spec: WaveGalerkinSpec) -> Result<WaveSystem> {
    let n = spec.n_modes;
    if n == 0 || n > MAX_MODES {
        return Err(Error::InvalidArgument(format!("mode count {n} outside 1..={MAX_MODES}")));
    }
    if !(spec.beta > 0.0) {
        return Err(Error::InvalidArgument(format!("damping beta = {} must be positive", spec.beta)));
    }
    let m = 4 * n;
    let nodes: Vec<f64> = (1..=m).map(|j| PI * j as f64 / (m + 1) as f64).collect();
    let synth = DMatrix::from_fn(m, n, |j, k| ((k + 1) as f64 * nodes[j]).sin());
    let proj = synth.transpose() * (2.0 / (m + 1) as f64);
    Ok(WaveSystem { spec, nodes, synth, proj })
}

impl WaveSystem {
    pub fn n_modes(&self) -> usize {
        self.spec.n_modes
    }

    pub fn wavenumbers_sq(&self) -> Vec<f64> {
        (1..=self.n_modes()).map(|k| (k * k) as f64).collect()
    }

    pub fn damping(&self, eta: f64, t: f64, pp: &PathPoint) -> Result<f64> {
        if eta == 0.0 {
            return Ok(self.spec.beta);
        }
        let z = pp.z_star(t)?;
        Ok(self.spec.beta + eta * (self.spec.shape.kappa(pp.tau + t) * z).abs())
    }

    /// `u` at the collocation points.
    pub fn synthesize(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.synth * a
    }

    /// Sine coefficients of a function sampled at the collocation points.
    pub fn project(&self, values: &DVector<f64>) -> DVector<f64> {
        &self.proj * values
    }

    /// Projection of `x ↦ (u(x), v(x))` onto the first `N` modes.
    pub fn project_state(&self, u: impl Fn(f64) -> f64, v: impl Fn(f64) -> f64) -> WaveState {
        let uu = DVector::from_iterator(self.nodes.len(), self.nodes.iter().map(|&x| u(x)));
        let vv = DVector::from_iterator(self.nodes.len(), self.nodes.iter().map(|&x| v(x)));
        WaveState { a: self.project(&uu), b: self.project(&vv) }
    }

    /// `P_N f(u)`.
    pub fn nonlinear_term(&self, a: &DVector<f64>) -> DVector<f64> {
        let u = self.synthesize(a);
        self.project(&u.map(|s| (self.spec.f.f)(s)))
    }

    /// Linear part `[[0, I], [−diag(k²), −β_η I]]`.
    pub fn linear_matrix(&self, damping: f64) -> DMatrix<f64> {
        let n = self.n_modes();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for k in 0..n {
            m[(k, n + k)] = 1.0;
            m[(n + k, k)] = -(((k + 1) * (k + 1)) as f64);
            m[(n + k, n + k)] = -damping;
        }
        m
    }

    /// `½∫|∇u|² + c_v ∫v² − ∫G(u)` with quadratic parts taken spectrally.
    fn energy_with(&self, y: &WaveState, c_v: f64) -> f64 {
        let grad: f64 = y.a.iter().enumerate().map(|(i, a)| ((i + 1) as f64 * a).powi(2)).sum::<f64>() * PI / 4.0;
        let kin = c_v * y.b.norm_squared() * PI / 2.0;
        let u = self.synthesize(&y.a);
        let w = PI / (self.nodes.len() + 1) as f64;
        let pot: f64 = u.iter().map(|s| (self.spec.f.g)(*s)).sum::<f64>() * w;
        grad + kin - pot
    }
}

impl VectorField for WaveSystem {
    fn dim(&self) -> usize {
        2 * self.n_modes()
    }

    fn label(&self) -> String {
        format!("wave[N={}; beta={}; f={}; kappa={}]", self.n_modes(), self.spec.beta, self.spec.f.label, self.spec.shape.label())
    }

    fn rhs(&self, eta: f64, t: f64, pp: &PathPoint, y: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n_modes();
        let beta = self.damping(eta, t, pp)?;
        let a = y.rows(0, n).into_owned();
        let b = y.rows(n, n);
        let nl = self.nonlinear_term(&a);
        let mut out = DVector::zeros(2 * n);
        for k in 0..n {
            out[k] = b[k];
            out[n + k] = -(((k + 1) * (k + 1)) as f64) * a[k] - beta * b[k] + nl[k];
        }
        Ok(out)
    }

    fn jac(&self, eta: f64, t: f64, pp: &PathPoint, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.n_modes();
        let mut j = self.linear_matrix(self.damping(eta, t, pp)?);
        let u = self.synthesize(&y.rows(0, n).into_owned());
        let d = DMatrix::from_diagonal(&u.map(|s| (self.spec.f.df)(s)));
        let block = &self.proj * d * &self.synth;
        let mut lower = j.view_mut((n, 0), (n, n));
        lower += &block;
        Ok(j)
    }

    fn uses_driver(&self, eta: f64) -> bool {
        eta != 0.0
    }
}

/// `E(u, v) = ½∫|∇u|² + ½∫v² − ∫G(u)`, nonincreasing along `η = 0` trajectories.
pub fn lyapunov_energy(sys: &WaveSystem, y: &WaveState) -> f64 {
    sys.energy_with(y, 0.5)
}

/// The variant with `β/2` on `∫v²`; reported along trajectories, never asserted.
pub fn lyapunov_energy_beta(sys: &WaveSystem, y: &WaveState) -> f64 {
    sys.energy_with(y, 0.5 * sys.spec.beta)
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub energy_beta: Vec<f64>,
    /// Largest per-step increase of `E`.
    pub max_increase: f64,
    pub max_increase_beta: f64,
}

pub fn energy_trace(sys: &WaveSystem, eta: f64, pp: &PathPoint, y0: &WaveState, t_end: f64, dt: f64) -> Result<EnergyTrace> {
    let tr = integrate(sys, eta, pp, &y0.to_vector(), 0.0, t_end, dt)?;
    let states: Vec<WaveState> = tr.states.iter().map(WaveState::from_vector).collect();
    let energy: Vec<f64> = states.iter().map(|s| lyapunov_energy(sys, s)).collect();
    let energy_beta: Vec<f64> = states.iter().map(|s| lyapunov_energy_beta(sys, s)).collect();
    let rise = |e: &[f64]| e.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(EnergyTrace { max_increase: rise(&energy), max_increase_beta: rise(&energy_beta), times: tr.times, energy, energy_beta })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DampingBounds {
    pub b0: f64,
    pub b1: f64,
}

/// Min and max of `β_η` over the grid `t_window.0 + i·dt`.
pub fn damping_bounds(sys: &WaveSystem, eta: f64, pp: &PathPoint, t_window: (f64, f64), dt: f64) -> Result<DampingBounds> {
    let (t0, t1) = t_window;
    if !(t1 > t0) || !(dt > 0.0) {
        return Err(Error::InvalidInterval(format!("damping window [{t0}, {t1}] with dt {dt}")));
    }
    let n = ((t1 - t0) / dt).round() as usize;
    let mut b = DampingBounds { b0: f64::INFINITY, b1: f64::NEG_INFINITY };
    for i in 0..=n {
        let d = sys.damping(eta, t0 + (t1 - t0) * i as f64 / n as f64, pp)?;
        b.b0 = b.b0.min(d);
        b.b1 = b.b1.max(d);
    }
    Ok(b)
}

#[derive(Debug, Clone, Serialize)]
pub struct DampingSaturation {
    pub half_widths: Vec<f64>,
    pub bounds: Vec<DampingBounds>,
    /// Relative change between the two widest windows below 5% in both bounds.
    pub saturated: bool,
}

pub fn damping_saturation(sys: &WaveSystem, eta: f64, pp: &PathPoint, half_widths: &[f64], dt: f64) -> Result<DampingSaturation> {
    let bounds: Vec<DampingBounds> = half_widths.iter().map(|&h| damping_bounds(sys, eta, pp, (-h, h), dt)).collect::<Result<_>>()?;
    let saturated = match bounds.as_slice() {
        [.., p, q] => (q.b0 - p.b0).abs() <= 0.05 * p.b0 && (q.b1 - p.b1).abs() <= 0.05 * p.b1,
        _ => false,
    };
    Ok(DampingSaturation { half_widths: half_widths.to_vec(), bounds, saturated })
}

/// Roots of `λ² + βλ + k² = 0`, `k = 1..N`.
pub fn mode_eigenvalues(n: usize, beta: f64) -> Vec<nalgebra::Complex<f64>> {
    let mut out = Vec::with_capacity(2 * n);
    for k in 1..=n {
        let disc = nalgebra::Complex::new(beta * beta - 4.0 * (k * k) as f64, 0.0).sqrt();
        out.push((-beta + disc) * 0.5);
        out.push((-beta - disc) * 0.5);
    }
    out
}

/// Largest distance from a dense eigenvalue of the linear part to the
/// nearest mode-wise root, and back.
pub fn mode_eigenvalue_error(sys: &WaveSystem) -> f64 {
    let dense = eigenvalues(&sys.linear_matrix(sys.spec.beta));
    let modes = mode_eigenvalues(sys.n_modes(), sys.spec.beta);
    let near =
        |x: &nalgebra::Complex<f64>, set: &[nalgebra::Complex<f64>]| set.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min);
    let a = dense.iter().map(|x| near(x, &modes)).fold(0.0, f64::max);
    let b = modes.iter().map(|x| near(x, &dense)).fold(0.0, f64::max);
    a.max(b)
}

/// Slowest mode-wise decay rate `min_k |Re λ_k|`.
pub fn predicted_decay(n: usize, beta: f64) -> f64 {
    mode_eigenvalues(n, beta).iter().map(|l| l.re.abs()).fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthFit {
    pub c: f64,
    pub p: f64,
    pub passes: bool,
}

/// Least-squares fit of `max(|f'(s)|, |f''(s)|) ≈ c (1 + |s|)^p` on `|s| ∈ [1, s_max]`;
/// `c` is then raised so the bound holds on the whole probe grid.
pub fn growth_check(f: &ScalarNonlinearity, s_max: f64, n: usize) -> Result<GrowthFit> {
    let probe: Vec<f64> = (0..=n).map(|i| -s_max + 2.0 * s_max * i as f64 / n as f64).collect();
    let m = |s: f64| (f.df)(s).abs().max((f.ddf)(s).abs());
    let (x, y): (Vec<f64>, Vec<f64>) =
        probe.iter().filter(|s| s.abs() >= 1.0 && m(**s) > 0.0).map(|&s| ((1.0 + s.abs()).ln(), m(s).ln())).unzip();
    let p = match linear_fit(&x, &y) {
        Some((_, b, _)) => b.max(0.0),
        None => 0.0,
    };
    let c = probe.iter().map(|&s| m(s) / (1.0 + s.abs()).powf(p)).fold(0.0, f64::max);
    Ok(GrowthFit { c, p, passes: p < 2.0 })
}

/// Fundamental matrix of `ẏ = B_η(t) y` at every step of `[0, t_end]`.
pub fn linear_flow(sys: &WaveSystem, eta: f64, pp: &PathPoint, t_end: f64, dt: f64) -> Result<Vec<DMatrix<f64>>> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidStep(format!("dt {dt}, horizon {t_end}")));
    }
    let steps = (t_end / dt).round() as usize;
    if ((steps as f64) * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::InvalidStep(format!("dt {dt} does not divide {t_end}")));
    }
    let d = sys.dim();
    let mut phi = DMatrix::identity(d, d);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(phi.clone());
    for i in 0..steps {
        let t = i as f64 * dt;
        let b0 = sys.linear_matrix(sys.damping(eta, t, pp)?);
        let bh = sys.linear_matrix(sys.damping(eta, t + 0.5 * dt, pp)?);
        let b1 = sys.linear_matrix(sys.damping(eta, t + dt, pp)?);
        let k1 = &b0 * &phi;
        let k2 = &bh * (&phi + &k1 * (0.5 * dt));
        let k3 = &bh * (&phi + &k2 * (0.5 * dt));
        let k4 = &b1 * (&phi + &k3 * dt);
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        out.push(phi.clone());
    }
    Ok(out)
}

fn energy_weights(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let s = (PI / 2.0).sqrt();
    let w = DVector::from_fn(2 * n, |i, _| if i < n { s * (i + 1) as f64 } else { s });
    (DMatrix::from_diagonal(&w), DMatrix::from_diagonal(&w.map(|v| 1.0 / v)))
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearDecayReport {
    pub eta: f64,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub k_const: f64,
    pub r_squared: f64,
    pub predicted_alpha: f64,
    /// `(t, ‖φ_η(t)‖)` in the energy norm.
    pub norms: Vec<(f64, f64)>,
    /// `sup ‖ϕ_direct − ϕ_duhamel‖` over the probes at the end of the split window.
    pub duhamel_defect: f64,
    /// `sup ‖ϕ‖` over the same probes.
    pub remainder_norm: f64,
}

/// Fits `‖φ_η(t)‖ ≤ K e^{−αt}` on `[0, t_end]` and checks the splitting
/// `ψ = φ + ϕ` against the Duhamel integral on `[0, t_split]` for the probes.
pub fn linear_decay_split(
    sys: &WaveSystem,
    eta: f64,
    pp: &PathPoint,
    t_end: f64,
    dt: f64,
    probes: &[WaveState],
    t_split: f64,
) -> Result<LinearDecayReport> {
    let n = sys.n_modes();
    let flow = linear_flow(sys, eta, pp, t_end, dt)?;
    let (w, winv) = energy_weights(n);
    let every = ((0.1 / dt).round() as usize).max(1);
    let norms: Vec<(f64, f64)> =
        flow.iter().enumerate().step_by(every).map(|(i, phi)| (i as f64 * dt, spectral_norm(&(&w * phi * &winv)))).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = norms.iter().map(|(t, v)| (*t, v.ln())).unzip();
    let (_, slope, r2) = linear_fit(&x, &y).ok_or_else(|| Error::FitFailure("decay fit needs two samples".into()))?;
    let alpha = -slope;
    if !(alpha > 0.0) {
        return Err(Error::FitFailure(format!("fitted decay rate {alpha:.3e} is not positive")));
    }
    let k_const = norms.iter().map(|(t, v)| v * (alpha * t).exp()).fold(1.0, f64::max);

    let ns = (t_split / dt).round() as usize;
    if ns == 0 || ns >= flow.len() {
        return Err(Error::InvalidArgument(format!("split horizon {t_split} outside (0, {t_end}]")));
    }
    let inv: Vec<DMatrix<f64>> = flow[..=ns]
        .iter()
        .map(|p| p.clone().try_inverse().ok_or_else(|| Error::FitFailure("singular fundamental matrix".into())))
        .collect::<Result<_>>()?;
    let mut duhamel_defect: f64 = 0.0;
    let mut remainder_norm: f64 = 0.0;
    for y0 in probes {
        let v0 = y0.to_vector();
        let tr = integrate(sys, eta, pp, &v0, 0.0, ns as f64 * dt, dt)?;
        let direct = &tr.states[ns] - &flow[ns] * &v0;
        let forcing = |i: usize| -> DVector<f64> {
            let mut g = DVector::zeros(2 * n);
            g.rows_mut(n, n).copy_from(&sys.nonlinear_term(&tr.states[i].rows(0, n).into_owned()));
            &flow[ns] * (&inv[i] * g)
        };
        let mut acc = (forcing(0) + forcing(ns)) * 0.5;
        for i in 1..ns {
            acc += forcing(i);
        }
        acc *= dt;
        duhamel_defect = duhamel_defect.max(WaveState::from_vector(&(direct.clone() - acc)).energy_norm());
        remainder_norm = remainder_norm.max(WaveState::from_vector(&direct).energy_norm());
    }
    Ok(LinearDecayReport {
        eta,
        alpha,
        k_const,
        r_squared: r2,
        predicted_alpha: predicted_decay(n, sys.spec.beta),
        norms,
        duhamel_defect,
        remainder_norm,
    })
}

/// `‖k² a − P_N f(u)‖` for a candidate equilibrium `(a, 0)`.
pub fn galerkin_residual(sys: &WaveSystem, a: &DVector<f64>) -> f64 {
    let nl = sys.nonlinear_term(a);
    let lap = DVector::from_fn(a.len(), |k, _| ((k + 1) * (k + 1)) as f64 * a[k]);
    (lap - nl).norm()
}
