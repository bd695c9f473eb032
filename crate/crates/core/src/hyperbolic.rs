//! Hyperbolic equilibria, their continuation to hyperbolic solutions of the
//! perturbed process, and exponential-dichotomy estimates.

use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::cocycle::VectorField;
use crate::driver::PathPoint;
use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, linear_fit, projection_rank, spectral_norm, unstable_projection};

/// Spectral gaps below this are treated as non-hyperbolic.
pub const GAP_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub y_star: DVector<f64>,
    pub spectrum: Vec<Complex<f64>>,
    pub gap: f64,
    pub unstable_dim: usize,
    pub residual: f64,
}

impl Equilibrium {
    pub fn is_hyperbolic(&self) -> bool {
        self.gap >= GAP_THRESHOLD
    }

    pub fn jacobian(&self, field: &dyn VectorField, pp: &PathPoint) -> Result<DMatrix<f64>> {
        field.jac(0.0, 0.0, pp, &self.y_star)
    }

    /// Equilibrium data at a known root of the `η = 0` member.
    pub fn at(field: &dyn VectorField, pp: &PathPoint, y: DVector<f64>) -> Result<Self> {
        let residual = field.rhs(0.0, 0.0, pp, &y)?.norm();
        let spectrum = eigenvalues(&field.jac(0.0, 0.0, pp, &y)?);
        let gap = spectrum.iter().map(|l| l.re.abs()).fold(f64::INFINITY, f64::min);
        let unstable_dim = spectrum.iter().filter(|l| l.re > 0.0).count();
        Ok(Equilibrium { y_star: y, spectrum, gap, unstable_dim, residual })
    }
}

fn newton(field: &dyn VectorField, pp: &PathPoint, seed: &DVector<f64>) -> Option<DVector<f64>> {
    let mut y = seed.clone();
    for _ in 0..60 {
        let r = field.rhs(0.0, 0.0, pp, &y).ok()?;
        if r.norm() <= 1e-14 {
            return Some(y);
        }
        let j = field.jac(0.0, 0.0, pp, &y).ok()?;
        let step = j.lu().solve(&r)?;
        y -= &step;
        if !y.iter().all(|v| v.is_finite()) || y.norm() > 1e8 {
            return None;
        }
        if step.norm() <= 1e-15 * (1.0 + y.norm()) {
            break;
        }
    }
    let r = field.rhs(0.0, 0.0, pp, &y).ok()?;
    (r.norm() <= 1e-10).then_some(y)
}

fn dedup_and_sort(field: &dyn VectorField, pp: &PathPoint, roots: Vec<DVector<f64>>) -> Result<Vec<Equilibrium>> {
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for r in roots {
        if kept.iter().all(|k| (k - &r).norm() > 1e-6) {
            kept.push(r);
        }
    }
    kept.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    kept.into_iter().map(|y| Equilibrium::at(field, pp, y)).collect()
}

/// Newton iteration from a uniform seed lattice of about `n_seeds` points in the box.
pub fn find_equilibria(field: &dyn VectorField, pp: &PathPoint, bbox: &[(f64, f64)], n_seeds: usize) -> Result<Vec<Equilibrium>> {
    let d = field.dim();
    if bbox.len() != d {
        return Err(Error::InvalidArgument(format!("box has {} sides for a {d}-dimensional field", bbox.len())));
    }
    if bbox.iter().any(|(a, b)| !(a <= b)) {
        return Err(Error::InvalidArgument("empty box".into()));
    }
    let per_dim = ((n_seeds.max(1) as f64).powf(1.0 / d as f64).ceil() as usize).max(1);
    let seeds = lattice(bbox, per_dim);
    let roots: Vec<DVector<f64>> = seeds
        .iter()
        .filter_map(|s| newton(field, pp, s))
        .filter(|y| {
            y.iter().zip(bbox).all(|(v, (a, b))| {
                let slack = 1e-9 * (b - a).max(1.0);
                *v >= a - slack && *v <= b + slack
            })
        })
        .collect();
    dedup_and_sort(field, pp, roots)
}

/// Newton iteration from explicit seeds.
pub fn find_equilibria_from(field: &dyn VectorField, pp: &PathPoint, seeds: &[DVector<f64>]) -> Result<Vec<Equilibrium>> {
    let roots = seeds.iter().filter_map(|s| newton(field, pp, s)).collect();
    dedup_and_sort(field, pp, roots)
}

/// Uniform lattice with `per_dim` points per axis (midpoint when `per_dim = 1`).
pub fn lattice(bbox: &[(f64, f64)], per_dim: usize) -> Vec<DVector<f64>> {
    let d = bbox.len();
    let axis = |k: usize, i: usize| {
        let (a, b) = bbox[k];
        if per_dim == 1 {
            0.5 * (a + b)
        } else {
            a + (b - a) * i as f64 / (per_dim - 1) as f64
        }
    };
    let total = per_dim.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut v = DVector::zeros(d);
            for k in 0..d {
                v[k] = axis(k, idx % per_dim);
                idx /= per_dim;
            }
            v
        })
        .collect()
}

/// A matrix-valued function of time sampled on a uniform grid, linearly
/// interpolated in between.
#[derive(Debug, Clone)]
pub struct LinearizedProcess {
    pub times: Vec<f64>,
    pub mats: Vec<DMatrix<f64>>,
}

impl LinearizedProcess {
    pub fn constant(a: DMatrix<f64>, window: (f64, f64), dt: f64) -> Self {
        let n = ((window.1 - window.0) / dt).round() as usize;
        let times = (0..=n).map(|i| window.0 + i as f64 * dt).collect();
        LinearizedProcess { times, mats: vec![a; n + 1] }
    }

    pub fn dim(&self) -> usize {
        self.mats[0].nrows()
    }

    fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            1.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn at(&self, t: f64) -> DMatrix<f64> {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.mats[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.mats[n - 1].clone();
        }
        let pos = (t - self.times[0]) / self.dt();
        let i = (pos.floor() as usize).min(n - 2);
        let lam = pos - i as f64;
        if lam < 1e-12 {
            return self.mats[i].clone();
        }
        &self.mats[i] * (1.0 - lam) + &self.mats[i + 1] * lam
    }

    /// RK4 solution of `X' = L(t) X` from `(t0, x0)` with step `h` (may be
    /// negative), returning the states after each of `n` steps.
    fn propagate(&self, t0: f64, x0: &DMatrix<f64>, h: f64, n: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(n + 1);
        let mut x = x0.clone();
        out.push(x.clone());
        for i in 0..n {
            let t = t0 + i as f64 * h;
            let a0 = self.at(t);
            let am = self.at(t + 0.5 * h);
            let a1 = self.at(t + h);
            let k1 = &a0 * &x;
            let k2 = &am * (&x + &k1 * (0.5 * h));
            let k3 = &am * (&x + &k2 * (0.5 * h));
            let k4 = &a1 * (&x + &k3 * h);
            x = &x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            out.push(x.clone());
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct DichotomyEstimate {
    pub proj_u: DMatrix<f64>,
    pub proj_s: DMatrix<f64>,
    pub m_bound: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub unstable_dim: usize,
    pub stable_dim: usize,
    pub r_squared: f64,
    pub spectral_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DichotomyReport {
    pub unstable_rank: usize,
    pub stable_rank: usize,
    #[serde(rename = "M")]
    pub m_bound: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub fit_r2: f64,
    pub spectral_gap: f64,
    pub projection_sum_defect: f64,
    pub idempotence_defect: f64,
}

impl DichotomyEstimate {
    /// `‖Π^u + Π^s − I‖` and `‖(Π^u)² − Π^u‖` (Frobenius).
    pub fn projection_defects(&self) -> (f64, f64) {
        let n = self.proj_u.nrows();
        let sum = (&self.proj_u + &self.proj_s - DMatrix::identity(n, n)).norm();
        let idem = (&self.proj_u * &self.proj_u - &self.proj_u).norm();
        (sum, idem)
    }

    pub fn report(&self) -> DichotomyReport {
        let (s, i) = self.projection_defects();
        DichotomyReport {
            unstable_rank: self.unstable_dim,
            stable_rank: self.stable_dim,
            m_bound: self.m_bound,
            alpha: self.alpha,
            gamma: self.gamma,
            fit_r2: self.r_squared,
            spectral_gap: self.spectral_gap,
            projection_sum_defect: s,
            idempotence_defect: i,
        }
    }
}

/// Projections from the spectral splitting at the window midpoint; `M`, `α`
/// from least-squares fits of `log‖φ(t)Π^s‖` forward and `log‖φ(−t)Π^u‖`
/// backward from the midpoint.
pub fn dichotomy_estimate(lp: &LinearizedProcess, window: (f64, f64), proj_guess: Option<&DMatrix<f64>>) -> Result<DichotomyEstimate> {
    let n = lp.dim();
    let (a, b) = window;
    let lo = lp.times[0];
    let hi = *lp.times.last().expect("nonempty process");
    if !(a < b) || a < lo - 1e-9 || b > hi + 1e-9 {
        return Err(Error::InvalidArgument(format!("window [{a}, {b}] not inside [{lo}, {hi}]")));
    }
    let mid_idx = {
        let m = 0.5 * (a + b);
        ((m - lo) / lp.dt()).round() as usize
    };
    let mid = lp.times[mid_idx.min(lp.times.len() - 1)];
    let a_mid = lp.at(mid);
    let spec = eigenvalues(&a_mid);
    let gap = spec.iter().map(|l| l.re.abs()).fold(f64::INFINITY, f64::min);
    if gap < GAP_THRESHOLD {
        return Err(Error::NoGap { gap, threshold: GAP_THRESHOLD });
    }
    let proj_u = match proj_guess {
        Some(p) => p.clone(),
        None => unstable_projection(&a_mid)?,
    };
    let proj_s = DMatrix::identity(n, n) - &proj_u;
    let unstable_dim = projection_rank(&proj_u);
    let stable_dim = n - unstable_dim;

    let max_u = spec.iter().map(|l| l.re).fold(0.0f64, f64::max);
    let max_s = spec.iter().filter(|l| l.re < 0.0).map(|l| -l.re).fold(0.0f64, f64::max);
    let spread = (max_u + max_s).max(gap);
    let horizon = |room: f64| room.min(40.0 / spread);
    let h = lp.dt();

    let mut fits = Vec::new();
    let mut curves: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    if stable_dim > 0 {
        let steps = (horizon(b - mid) / h).floor() as usize;
        if steps < 4 {
            return Err(Error::FitFailure("forward window too short".into()));
        }
        let xs = lp.propagate(mid, &proj_s, h, steps);
        let s: Vec<f64> = (0..=steps).map(|i| i as f64 * h).collect();
        let norms: Vec<f64> = xs.iter().map(spectral_norm).collect();
        fits.push(fit_rate(&s, &norms)?);
        curves.push((s, norms));
    }
    if unstable_dim > 0 {
        let steps = (horizon(mid - a) / h).floor() as usize;
        if steps < 4 {
            return Err(Error::FitFailure("backward window too short".into()));
        }
        let ys = lp.propagate(mid, &proj_u, -h, steps);
        let s: Vec<f64> = (0..=steps).map(|i| i as f64 * h).collect();
        let norms: Vec<f64> = ys.iter().map(spectral_norm).collect();
        fits.push(fit_rate(&s, &norms)?);
        curves.push((s, norms));
    }
    let alpha = fits.iter().map(|f| f.0).fold(f64::INFINITY, f64::min);
    let r_squared = fits.iter().map(|f| f.1).fold(1.0f64, f64::min);
    let gamma = if stable_dim > 0 { fits[0].0 } else { alpha };
    let mut m_bound: f64 = 1.0;
    for (s, norms) in &curves {
        for (si, ni) in s.iter().zip(norms) {
            m_bound = m_bound.max(ni * (alpha * si).exp());
        }
    }
    Ok(DichotomyEstimate { proj_u, proj_s, m_bound, alpha, gamma, unstable_dim, stable_dim, r_squared, spectral_gap: gap })
}

fn fit_rate(s: &[f64], norms: &[f64]) -> Result<(f64, f64)> {
    let logs: Vec<f64> = norms.iter().map(|v| v.max(1e-300).ln()).collect();
    let (_, slope, r2) = linear_fit(s, &logs).ok_or_else(|| Error::FitFailure("degenerate samples".into()))?;
    let rate = -slope;
    if !rate.is_finite() || rate <= 0.0 {
        return Err(Error::FitFailure(format!("fitted decay rate {rate:.3e} is not positive")));
    }
    Ok((rate, r2))
}

#[derive(Debug, Clone)]
pub struct ContinuationOptions {
    /// Half-width of the window; `None` means `20 / gap`.
    pub t_h: Option<f64>,
    pub dt: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub check_window: bool,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions { t_h: None, dt: 0.01, tol: 1e-10, max_iter: 200, check_window: true }
    }
}

#[derive(Debug, Clone)]
pub struct HyperbolicSolutionTrace {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub eta: f64,
    pub pp: PathPoint,
    pub y_star: DVector<f64>,
    pub residual: f64,
    pub sup_dist: f64,
    pub iterations: usize,
    /// Ratios of successive update norms.
    pub contraction: Vec<f64>,
}

impl HyperbolicSolutionTrace {
    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn t_h(&self) -> f64 {
        -self.times[0]
    }

    /// Grid index of time `t`, if `t` is a grid point of the trace.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let pos = (t - self.times[0]) / self.dt();
        let k = pos.round();
        ((pos - k).abs() < 1e-6 && k >= 0.0 && (k as usize) < self.times.len()).then_some(k as usize)
    }

    /// State at time `t`, linearly interpolated.
    pub fn state_at(&self, t: f64) -> Result<DVector<f64>> {
        let n = self.times.len();
        let pos = (t - self.times[0]) / self.dt();
        if pos < -1e-9 || pos > (n - 1) as f64 + 1e-9 {
            return Err(Error::WindowExhausted { t, t_min: self.times[0], t_max: self.times[n - 1] });
        }
        let i = (pos.floor().max(0.0) as usize).min(n - 2);
        let lam = (pos - i as f64).clamp(0.0, 1.0);
        Ok(&self.states[i] * (1.0 - lam) + &self.states[i + 1] * lam)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = self.y_star.len();
        write!(w, "t")?;
        for k in 1..=dim {
            write!(w, ",xi_{k}")?;
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

/// Lyapunov-Perron iteration for the bounded solution near a hyperbolic equilibrium.
pub fn continue_hyperbolic_solution(
    field: &dyn VectorField,
    eta: f64,
    pp: &PathPoint,
    eq: &Equilibrium,
    opts: &ContinuationOptions,
) -> Result<HyperbolicSolutionTrace> {
    if !eq.is_hyperbolic() {
        return Err(Error::NoGap { gap: eq.gap, threshold: GAP_THRESHOLD });
    }
    let t_h = opts.t_h.unwrap_or(20.0 / eq.gap);
    let trace = lyapunov_perron(field, eta, pp, eq, t_h, opts)?;
    if opts.check_window && eta != 0.0 {
        let wider = lyapunov_perron(field, eta, pp, eq, t_h + 5.0, opts)?;
        let shift = (trace.state_at(0.0)? - wider.state_at(0.0)?).norm();
        if shift > 10.0 * opts.tol {
            return Err(Error::WindowTooShort { shift });
        }
    }
    Ok(trace)
}

fn lyapunov_perron(
    field: &dyn VectorField,
    eta: f64,
    pp: &PathPoint,
    eq: &Equilibrium,
    t_h: f64,
    opts: &ContinuationOptions,
) -> Result<HyperbolicSolutionTrace> {
    let dt = opts.dt;
    let n = crate::cocycle::step_count(2.0 * t_h, dt)?;
    if n < 2 {
        return Err(Error::InvalidStep("window holds fewer than two steps".into()));
    }
    crate::cocycle::check_driver(field, eta, pp, -t_h, t_h)?;
    let dim = field.dim();
    let y_star = &eq.y_star;
    let a = eq.jacobian(field, pp)?;
    let pu = unstable_projection(&a)?;
    let ps = DMatrix::identity(dim, dim) - &pu;
    let e = (&a * dt).exp();
    let einv = (&a * (-dt)).exp();
    let r0 = field.rhs(0.0, 0.0, pp, y_star)?;
    let times: Vec<f64> = (0..=n).map(|i| -t_h + i as f64 * dt).collect();

    let mut xi: Vec<DVector<f64>> = vec![y_star.clone(); n + 1];
    let mut updates: Vec<f64> = Vec::new();
    let mut stalled = 0;
    let mut iterations = 0;
    let residual;
    loop {
        iterations += 1;
        let mut g = Vec::with_capacity(n + 1);
        for (t, x) in times.iter().zip(&xi) {
            g.push(field.rhs(eta, *t, pp, x)? - &a * (x - y_star) - &r0);
        }
        let gs: Vec<DVector<f64>> = g.iter().map(|v| &ps * v).collect();
        let gu: Vec<DVector<f64>> = g.iter().map(|v| &pu * v).collect();
        let mut u = vec![DVector::zeros(dim); n + 1];
        for i in 0..n {
            let next = &e * (&u[i] + &gs[i] * (0.5 * dt)) + &gs[i + 1] * (0.5 * dt);
            u[i + 1] = &ps * next;
        }
        let mut w = vec![DVector::zeros(dim); n + 1];
        for i in (0..n).rev() {
            let prev = &einv * (&w[i + 1] + &gu[i + 1] * (0.5 * dt)) + &gu[i] * (0.5 * dt);
            w[i] = &pu * prev;
        }
        let new: Vec<DVector<f64>> = (0..=n).map(|i| y_star + &u[i] - &w[i]).collect();
        let update = crate::linalg::sup_norm_diff(&new, &xi);
        xi = new;
        if !update.is_finite() {
            return Err(Error::NoContraction { iterations, last_update: update });
        }
        if let Some(&prev) = updates.last() {
            if update >= prev {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
        updates.push(update);
        if update < opts.tol {
            residual = update;
            break;
        }
        if stalled >= 5 || iterations >= opts.max_iter {
            return Err(Error::NoContraction { iterations, last_update: update });
        }
    }
    let contraction = updates.windows(2).filter(|p| p[0] > 0.0).map(|p| p[1] / p[0]).collect();
    let sup_dist = xi.iter().map(|x| (x - y_star).norm()).fold(0.0, f64::max);
    Ok(HyperbolicSolutionTrace {
        times,
        states: xi,
        eta,
        pp: pp.clone(),
        y_star: y_star.clone(),
        residual,
        sup_dist,
        iterations,
        contraction,
    })
}

/// `t ↦ D_y F(η, t, Θ_t pp, ξ(t))` along a trace.
pub fn linearize_along(field: &dyn VectorField, eta: f64, trace: &HyperbolicSolutionTrace) -> Result<LinearizedProcess> {
    let mats = trace.times.iter().zip(&trace.states).map(|(t, x)| field.jac(eta, *t, &trace.pp, x)).collect::<Result<Vec<_>>>()?;
    Ok(LinearizedProcess { times: trace.times.clone(), mats })
}
