//! Nonautonomous random vector fields, fixed-step RK4 cocycles and checks of
//! the cocycle axioms.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::driver::PathPoint;
use crate::error::{Error, Result};
use crate::linalg::spectral_norm;

/// Default bound on the state norm before a trajectory is declared divergent.
pub const BLOW_UP_BOUND: f64 = 1e6;

/// An η-indexed family `F(η, t, Θ_t ω_τ, y)` with analytic Jacobian.
///
/// `t` is time relative to the path point; implementations read the driver
/// through `pp` at relative time `t` (absolute time `pp.tau + t`).
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn label(&self) -> String;
    fn rhs(&self, eta: f64, t: f64, pp: &PathPoint, y: &DVector<f64>) -> Result<DVector<f64>>;
    fn jac(&self, eta: f64, t: f64, pp: &PathPoint, y: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Whether the `η` member reads the driver at all.
    fn uses_driver(&self, eta: f64) -> bool {
        let _ = eta;
        false
    }
}

/// An autonomous field `ẏ = g(y)` with no η dependence.
pub struct Autonomous<G, J> {
    dim: usize,
    label: String,
    g: G,
    j: J,
}

impl<G, J> Autonomous<G, J>
where
    G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
    J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync,
{
    pub fn new(dim: usize, label: impl Into<String>, g: G, j: J) -> Self {
        Autonomous { dim, label: label.into(), g, j }
    }
}

impl<G, J> VectorField for Autonomous<G, J>
where
    G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
    J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn label(&self) -> String {
        self.label.clone()
    }
    fn rhs(&self, _eta: f64, _t: f64, _pp: &PathPoint, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.g)(y))
    }
    fn jac(&self, _eta: f64, _t: f64, _pp: &PathPoint, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok((self.j)(y))
    }
}

/// Linear autonomous field `ẏ = A y`.
pub fn linear_field(a: DMatrix<f64>) -> impl VectorField {
    let n = a.nrows();
    let a2 = a.clone();
    Autonomous::new(n, "linear", move |y: &DVector<f64>| &a * y, move |_: &DVector<f64>| a2.clone())
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub eta: f64,
    pub pp: PathPoint,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = self.states.first().map_or(0, |s| s.len());
        write!(w, "t")?;
        for k in 1..=dim {
            write!(w, ",y_{k}")?;
        }
        writeln!(w)?;
        for (t, y) in self.times.iter().zip(&self.states) {
            write!(w, "{t}")?;
            for v in y.iter() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub(crate) fn step_count(len: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::InvalidStep(format!("step {dt} must be positive")));
    }
    if len < 0.0 {
        return Err(Error::InvalidStep(format!("interval length {len} is negative")));
    }
    let n = (len / dt).round();
    if (n * dt - len).abs() > 1e-9 * len.abs().max(1.0) {
        return Err(Error::InvalidStep(format!("step {dt} does not divide {len}")));
    }
    Ok(n as usize)
}

pub fn rk4_step(field: &dyn VectorField, eta: f64, pp: &PathPoint, t: f64, y: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let k1 = field.rhs(eta, t, pp, y)?;
    let k2 = field.rhs(eta, t + 0.5 * h, pp, &(y + &k1 * (0.5 * h)))?;
    let k3 = field.rhs(eta, t + 0.5 * h, pp, &(y + &k2 * (0.5 * h)))?;
    let k4 = field.rhs(eta, t + h, pp, &(y + &k3 * h))?;
    Ok(y + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0))
}

/// `n` RK4 steps of size `h` from `(t0, y0)`, keeping only the endpoint.
pub fn flow_steps(field: &dyn VectorField, eta: f64, pp: &PathPoint, y0: &DVector<f64>, t0: f64, n: usize, h: f64) -> Result<DVector<f64>> {
    let mut y = y0.clone();
    for i in 0..n {
        let t = t0 + i as f64 * h;
        y = rk4_step(field, eta, pp, t, &y, h)?;
        check_bound(&y, t + h, BLOW_UP_BOUND)?;
    }
    Ok(y)
}

/// Endpoint of the cocycle `ψ_η(t1 - t0, Θ_{t0} ω_τ) y0` with step `dt`.
pub fn flow(field: &dyn VectorField, eta: f64, pp: &PathPoint, y0: &DVector<f64>, t0: f64, t1: f64, dt: f64) -> Result<DVector<f64>> {
    let n = step_count(t1 - t0, dt)?;
    check_driver(field, eta, pp, t0, t1)?;
    flow_steps(field, eta, pp, y0, t0, n, dt)
}

fn check_bound(y: &DVector<f64>, t: f64, bound: f64) -> Result<()> {
    let n = y.norm();
    if !n.is_finite() || n > bound {
        return Err(Error::Diverged { t, bound });
    }
    Ok(())
}

pub(crate) fn check_driver(field: &dyn VectorField, eta: f64, pp: &PathPoint, t0: f64, t1: f64) -> Result<()> {
    if !field.uses_driver(eta) {
        return Ok(());
    }
    let p = &pp.path;
    if t1 > p.t_max() + 1e-9 * p.dt() {
        return Err(Error::WindowExhausted { t: t1, t_min: p.t_min(), t_max: p.t_max() });
    }
    if t0 < p.z_star_t_min() - 1e-9 * p.dt() {
        return Err(Error::InsufficientLeftWindow { required: t0, available: p.z_star_t_min() });
    }
    Ok(())
}

/// RK4 trajectory of `ẏ = F(η, t, Θ_t pp, y)` on `[t0, t1]`.
pub fn integrate(field: &dyn VectorField, eta: f64, pp: &PathPoint, y0: &DVector<f64>, t0: f64, t1: f64, dt: f64) -> Result<Trajectory> {
    integrate_with_bound(field, eta, pp, y0, t0, t1, dt, BLOW_UP_BOUND)
}

#[allow(clippy::too_many_arguments)]
pub fn integrate_with_bound(
    field: &dyn VectorField,
    eta: f64,
    pp: &PathPoint,
    y0: &DVector<f64>,
    t0: f64,
    t1: f64,
    dt: f64,
    bound: f64,
) -> Result<Trajectory> {
    if y0.len() != field.dim() {
        return Err(Error::InvalidArgument(format!("state has {} components, field expects {}", y0.len(), field.dim())));
    }
    let n = step_count(t1 - t0, dt)?;
    check_driver(field, eta, pp, t0, t1)?;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(t0);
    states.push(y0.clone());
    let mut y = y0.clone();
    for i in 0..n {
        let t = t0 + i as f64 * dt;
        y = rk4_step(field, eta, pp, t, &y, dt)?;
        check_bound(&y, t + dt, bound)?;
        times.push(t0 + (i + 1) as f64 * dt);
        states.push(y.clone());
    }
    Ok(Trajectory { times, states, eta, pp: pp.clone() })
}

fn leg(field: &dyn VectorField, eta: f64, pp: &PathPoint, y0: &DVector<f64>, len: f64, dt: f64) -> Result<DVector<f64>> {
    if len == 0.0 {
        return Ok(y0.clone());
    }
    let n = ((len / dt) - 1e-9).ceil().max(1.0) as usize;
    check_driver(field, eta, pp, 0.0, len)?;
    flow_steps(field, eta, pp, y0, 0.0, n, len / n as f64)
}

/// `‖ψ(t+s, pp) y0 − ψ(t, Θ_s pp) ψ(s, pp) y0‖`; each leg uses the largest
/// uniform step not exceeding `dt`.
#[allow(clippy::too_many_arguments)]
pub fn cocycle_defect(field: &dyn VectorField, eta: f64, pp: &PathPoint, y0: &DVector<f64>, t: f64, s: f64, dt: f64) -> Result<f64> {
    if t < 0.0 || s < 0.0 {
        return Err(Error::InvalidArgument("cocycle times must be nonnegative".into()));
    }
    let direct = leg(field, eta, pp, y0, t + s, dt)?;
    let mid = leg(field, eta, pp, y0, s, dt)?;
    let shifted = pp.shift(s)?;
    let composed = leg(field, eta, &shifted, &mid, t, dt)?;
    Ok((direct - composed).norm())
}

/// Max over seeded probes `(t, x)`, `x ∈ B(0, r)`, of
/// `‖F(η,t,x) − F(0,x)‖ + ‖D F(η,t,x) − D F(0,x)‖₂`.
pub fn convergence_gap(field: &dyn VectorField, eta: f64, pp: &PathPoint, r: f64, t_window: (f64, f64), n_probe: usize) -> Result<f64> {
    if eta == 0.0 {
        return Ok(0.0);
    }
    let points = ball_probes(field.dim(), r, n_probe, 0x5eed);
    let nt = n_probe.max(2);
    let mut gap: f64 = 0.0;
    for k in 0..nt {
        let t = t_window.0 + (t_window.1 - t_window.0) * k as f64 / (nt - 1) as f64;
        for x in &points {
            let d = (field.rhs(eta, t, pp, x)? - field.rhs(0.0, t, pp, x)?).norm();
            let dj = spectral_norm(&(field.jac(eta, t, pp, x)? - field.jac(0.0, t, pp, x)?));
            gap = gap.max(d + dj);
        }
    }
    Ok(gap)
}

/// Deterministic uniform samples from the closed ball `B(0, r)` in `R^dim`.
pub fn ball_probes(dim: usize, r: f64, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..=1.0));
        if x.norm() <= 1.0 {
            out.push(x * r);
        }
    }
    out
}

/// Max relative discrepancy between the analytic Jacobian and central
/// differences of `rhs` at the given probe.
pub fn jacobian_fd_error(field: &dyn VectorField, eta: f64, t: f64, pp: &PathPoint, y: &DVector<f64>) -> Result<f64> {
    let j = field.jac(eta, t, pp, y)?;
    let n = field.dim();
    let mut fd = DMatrix::zeros(n, n);
    for k in 0..n {
        let h = 1e-6 * y[k].abs().max(1.0);
        let mut yp = y.clone();
        let mut ym = y.clone();
        yp[k] += h;
        ym[k] -= h;
        let col = (field.rhs(eta, t, pp, &yp)? - field.rhs(eta, t, pp, &ym)?) / (2.0 * h);
        fd.set_column(k, &col);
    }
    Ok((j - &fd).norm() / fd.norm().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::WienerPath;

    fn pp() -> PathPoint {
        PathPoint::new(0.0, WienerPath::zero(-1.0, 1.0, 0.5).unwrap())
    }

    fn decay() -> impl VectorField {
        linear_field(DMatrix::from_element(1, 1, -1.0))
    }

    #[test]
    fn linear_decay_closed_form() {
        let tr = integrate(&decay(), 0.0, &pp(), &DVector::from_element(1, 1.0), 0.0, 1.0, 1e-3).unwrap();
        assert!((tr.last()[0] - (-1.0f64).exp()).abs() < 1e-9);
        assert_eq!(tr.times.len(), tr.states.len());
    }

    #[test]
    fn empty_interval_is_identity() {
        let y0 = DVector::from_element(1, 0.3);
        let tr = integrate(&decay(), 0.0, &pp(), &y0, 2.0, 2.0, 0.1).unwrap();
        assert_eq!(tr.states, vec![y0]);
    }

    #[test]
    fn step_must_divide_interval() {
        let r = integrate(&decay(), 0.0, &pp(), &DVector::from_element(1, 1.0), 0.0, 1.0, 0.3);
        assert!(matches!(r, Err(Error::InvalidStep(_))));
    }

    #[test]
    fn blow_up_is_reported() {
        let f =
            Autonomous::new(1, "square", |y: &DVector<f64>| y.map(|v| v * v), |y: &DVector<f64>| DMatrix::from_element(1, 1, 2.0 * y[0]));
        let r = integrate(&f, 0.0, &pp(), &DVector::from_element(1, 1.0), 0.0, 2.0, 0.01);
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }

    #[test]
    fn defect_zero_at_s_zero_and_small_for_linear() {
        let f = decay();
        let y0 = DVector::from_element(1, 1.0);
        assert_eq!(cocycle_defect(&f, 0.0, &pp(), &y0, 0.5, 0.0, 0.01).unwrap(), 0.0);
        assert!(cocycle_defect(&f, 0.0, &pp(), &y0, 0.5, 0.5, 0.01).unwrap() <= 1e-10);
    }

    #[test]
    fn ball_probes_are_in_ball() {
        for x in ball_probes(3, 2.0, 50, 1) {
            assert!(x.norm() <= 2.0);
        }
    }
}
