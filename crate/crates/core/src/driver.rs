//! Sampled two-sided Wiener paths, the Wiener shift and the stationary
//! Ornstein-Uhlenbeck process `z*(θ_t ω) = -∫_{-∞}^0 e^s (θ_t ω)(s) ds`.

use std::io::{BufRead, Write};
use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Default cap on the number of grid samples in one path.
pub const DEFAULT_MAX_SAMPLES: usize = 20_000_000;
/// Default truncation horizon for the `z*` integral.
pub const DEFAULT_T_TRUNC: f64 = 30.0;

const GRID_EPS: f64 = 1e-9;

#[derive(Debug)]
struct PathData {
    values: Vec<f64>,
    dt: f64,
    /// Raw index of absolute time zero of the sampled path.
    zero: usize,
    seed: Option<u64>,
    ou: OnceLock<Vec<f64>>,
}

/// A Brownian path on a uniform grid, viewed through a shift: the value at
/// relative time `t` is `raw(origin + t) - raw(origin)`, so `ω(0) = 0` and
/// shifting only moves the origin.
#[derive(Debug, Clone)]
pub struct WienerPath {
    data: Arc<PathData>,
    origin: usize,
}

impl WienerPath {
    pub fn sample(seed: u64, t_min: f64, t_max: f64, dt: f64) -> Result<Self> {
        Self::sample_with_cap(seed, t_min, t_max, dt, DEFAULT_MAX_SAMPLES)
    }

    pub fn sample_with_cap(seed: u64, t_min: f64, t_max: f64, dt: f64, cap: usize) -> Result<Self> {
        let (n_left, n_right) = grid_extent(t_min, t_max, dt)?;
        let len = n_left + n_right + 1;
        if len > cap {
            return Err(Error::GridTooLarge { requested: len, cap });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = dt.sqrt();
        let mut values = Vec::with_capacity(len);
        let mut acc = 0.0;
        values.push(acc);
        for _ in 1..len {
            let g: f64 = StandardNormal.sample(&mut rng);
            acc += sd * g;
            values.push(acc);
        }
        let base = values[n_left];
        for v in &mut values {
            *v -= base;
        }
        Ok(Self::from_parts(values, dt, n_left, Some(seed)))
    }

    /// Builds a path from samples `values[i] = ω(t_min + i dt)`; the samples are
    /// re-anchored so that the value at `t = 0` is exactly zero.
    pub fn from_samples(t_min: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInterval("need at least two samples".into()));
        }
        let t_max = t_min + (values.len() - 1) as f64 * dt;
        let (n_left, _) = grid_extent(t_min, t_max, dt)?;
        let base = values[n_left];
        let values = values.into_iter().map(|v| v - base).collect();
        Ok(Self::from_parts(values, dt, n_left, None))
    }

    /// Path given by a closed-form function of time, sampled on the grid.
    pub fn from_fn(t_min: f64, t_max: f64, dt: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let (n_left, n_right) = grid_extent(t_min, t_max, dt)?;
        let values = (0..=n_left + n_right).map(|i| f((i as f64 - n_left as f64) * dt)).collect();
        Self::from_samples(-(n_left as f64) * dt, dt, values)
    }

    pub fn zero(t_min: f64, t_max: f64, dt: f64) -> Result<Self> {
        Self::from_fn(t_min, t_max, dt, |_| 0.0)
    }

    fn from_parts(values: Vec<f64>, dt: f64, zero: usize, seed: Option<u64>) -> Self {
        let data = PathData { values, dt, zero, seed, ou: OnceLock::new() };
        WienerPath { data: Arc::new(data), origin: zero }
    }

    pub fn dt(&self) -> f64 {
        self.data.dt
    }

    pub fn seed(&self) -> Option<u64> {
        self.data.seed
    }

    pub fn len(&self) -> usize {
        self.data.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.values.is_empty()
    }

    pub fn t_min(&self) -> f64 {
        -(self.origin as f64) * self.data.dt
    }

    pub fn t_max(&self) -> f64 {
        (self.len() - 1 - self.origin) as f64 * self.data.dt
    }

    /// Offset of this view's time zero relative to the time zero of the sampled path.
    pub fn offset(&self) -> f64 {
        (self.origin as f64 - self.data.zero as f64) * self.data.dt
    }

    /// Grid times of this view, from `t_min` to `t_max`.
    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| (i as f64 - self.origin as f64) * self.data.dt).collect()
    }

    /// Samples `ω(t)` on the grid, aligned with [`WienerPath::times`].
    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.raw_rel(i)).collect()
    }

    fn raw_rel(&self, i: usize) -> f64 {
        self.data.values[i] - self.data.values[self.origin]
    }

    fn grid_index(&self, t: f64) -> Option<isize> {
        let k = (t / self.data.dt).round();
        if (t / self.data.dt - k).abs() <= GRID_EPS * k.abs().max(1.0) {
            Some(k as isize)
        } else {
            None
        }
    }

    fn check_window(&self, t: f64) -> Result<()> {
        let (lo, hi) = (self.t_min(), self.t_max());
        let slack = GRID_EPS * self.data.dt;
        if t < lo - slack || t > hi + slack {
            return Err(Error::WindowExhausted { t, t_min: lo, t_max: hi });
        }
        Ok(())
    }

    /// `ω(t)`, linearly interpolated between grid points.
    pub fn value(&self, t: f64) -> Result<f64> {
        self.check_window(t)?;
        let (i, lambda) = self.locate(t);
        if lambda == 0.0 {
            return Ok(self.raw_rel(i));
        }
        let a = self.raw_rel(i);
        let b = self.raw_rel(i + 1);
        Ok(a + lambda * (b - a))
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let pos = self.origin as f64 + t / self.data.dt;
        let last = self.len() - 1;
        let nearest = pos.round();
        if (pos - nearest).abs() <= GRID_EPS * pos.abs().max(1.0) {
            return ((nearest.max(0.0) as usize).min(last), 0.0);
        }
        let i = (pos.floor().max(0.0) as usize).min(last.saturating_sub(1));
        (i, (pos - i as f64).clamp(0.0, 1.0))
    }

    /// The Wiener shift `θ_t ω(·) = ω(t + ·) - ω(t)`; `t` must lie on the grid.
    pub fn shift(&self, t: f64) -> Result<Self> {
        let k = self.grid_index(t).ok_or(Error::OffGridShift { shift: t, dt: self.data.dt })?;
        let origin = self.origin as isize + k;
        if origin < 0 || origin as usize >= self.len() {
            return Err(Error::WindowExhausted { t, t_min: self.t_min(), t_max: self.t_max() });
        }
        Ok(WienerPath { data: Arc::clone(&self.data), origin: origin as usize })
    }

    /// Direct trapezoid evaluation of `-∫_{-T}^0 e^s (θ_t ω)(s) ds` on the grid.
    pub fn ou_stationary(&self, t: f64, t_trunc: f64) -> Result<f64> {
        let shifted = self.shift(t)?;
        shifted.ou_at_origin(t_trunc)
    }

    fn ou_at_origin(&self, t_trunc: f64) -> Result<f64> {
        if !(t_trunc > 0.0) {
            return Err(Error::InvalidArgument(format!("truncation horizon {t_trunc} must be positive")));
        }
        let h = self.data.dt;
        let n = (t_trunc / h - GRID_EPS).ceil() as usize;
        if n > self.origin {
            return Err(Error::InsufficientLeftWindow { required: -(n as f64) * h, available: self.t_min() });
        }
        let decay = (-h).exp();
        let mut weight = 1.0;
        let mut sum = 0.0;
        for j in 0..=n {
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            sum += w * weight * self.raw_rel(self.origin - j);
            weight *= decay;
        }
        Ok(-h * sum)
    }

    fn ou_table(&self) -> &[f64] {
        self.data.ou.get_or_init(|| {
            // Running trapezoid recursions for J_i = ∫ e^{s-t_i} ω ds and
            // W_i = ∫ e^{s-t_i} ds from the left edge; z_i = ω_i W_i - J_i.
            let v = &self.data.values;
            let h = self.data.dt;
            let e = (-h).exp();
            let mut table = Vec::with_capacity(v.len());
            let (mut j, mut w) = (0.0, 0.0);
            table.push(0.0);
            for i in 1..v.len() {
                j = e * j + 0.5 * h * (e * v[i - 1] + v[i]);
                w = e * w + 0.5 * h * (e + 1.0);
                table.push(v[i] * w - j);
            }
            table
        })
    }

    /// Fast `z*(θ_t ω)` for any `t` with at least [`DEFAULT_T_TRUNC`] of history.
    /// Grid values agree with [`WienerPath::ou_stationary`] up to the truncation
    /// error; between grid points the exact OU update for a linear segment of
    /// `ω` is used, rescaled so that it hits the next grid value.
    pub fn z_star(&self, t: f64) -> Result<f64> {
        self.check_window(t)?;
        if t - DEFAULT_T_TRUNC < self.t_min() - GRID_EPS {
            return Err(Error::InsufficientLeftWindow { required: t - DEFAULT_T_TRUNC, available: self.t_min() });
        }
        let table = self.ou_table();
        let (i, lambda) = self.locate(t);
        if lambda == 0.0 {
            return Ok(table[i]);
        }
        let h = self.data.dt;
        let e1 = (-h).exp();
        let el = (-lambda * h).exp();
        let frac = (1.0 - el) / (1.0 - e1);
        Ok(el * table[i] + frac * (table[i + 1] - e1 * table[i]))
    }

    /// Earliest time at which [`WienerPath::z_star`] is available.
    pub fn z_star_t_min(&self) -> f64 {
        self.t_min() + DEFAULT_T_TRUNC
    }

    /// RMS over the grid steps in `[t0, t1]` of the discrete residual
    /// `Δz + z̄ Δt − Δω` of `dz = −z dt + dω` along `t ↦ z*(θ_t ω)`.
    pub fn ou_residual_rms(&self, t0: f64, t1: f64) -> Result<f64> {
        let h = self.data.dt;
        let n = ((t1 - t0) / h).round() as usize;
        if n == 0 {
            return Err(Error::InvalidInterval(format!("[{t0}, {t1}] holds no grid step")));
        }
        let mut prev = (self.z_star(t0)?, self.value(t0)?);
        let mut sum = 0.0;
        for i in 1..=n {
            let t = t0 + i as f64 * h;
            let cur = (self.z_star(t)?, self.value(t)?);
            let r = (cur.0 - prev.0) + 0.5 * (cur.0 + prev.0) * h - (cur.1 - prev.1);
            sum += r * r;
            prev = cur;
        }
        Ok((sum / n as f64).sqrt())
    }

    /// Pairs `(t, |z*(θ_t ω)| / max(1, |t|))`.
    pub fn sublinear_report(&self, t_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
        t_grid.iter().map(|&t| Ok((t, self.ou_stationary(t, DEFAULT_T_TRUNC)?.abs() / t.abs().max(1.0)))).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,omega")?;
        for (t, v) in self.times().into_iter().zip(self.values()) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut ts = Vec::new();
        let mut vs = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with('t')) {
                continue;
            }
            let mut parts = line.split(',');
            let mut next = || -> Result<f64> {
                parts
                    .next()
                    .ok_or_else(|| Error::Parse(format!("line {}: missing column", n + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))
            };
            ts.push(next()?);
            vs.push(next()?);
        }
        if ts.len() < 2 {
            return Err(Error::Parse("path file needs at least two rows".into()));
        }
        let dt = (ts[ts.len() - 1] - ts[0]) / (ts.len() - 1) as f64;
        for (i, pair) in ts.windows(2).enumerate() {
            if ((pair[1] - pair[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(Error::Parse(format!("non-uniform grid at row {}", i + 2)));
            }
        }
        Self::from_samples(ts[0], dt, vs)
    }
}

fn grid_extent(t_min: f64, t_max: f64, dt: f64) -> Result<(usize, usize)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInterval(format!("step {dt} must be positive")));
    }
    if !(t_min < 0.0 && 0.0 < t_max) {
        return Err(Error::InvalidInterval(format!("0 must lie inside ({t_min}, {t_max})")));
    }
    let left = -t_min / dt;
    let right = t_max / dt;
    if left > 1e15 || right > 1e15 {
        return Err(Error::GridTooLarge { requested: usize::MAX, cap: DEFAULT_MAX_SAMPLES });
    }
    let n_left = left.round();
    if (left - n_left).abs() > 1e-6 * n_left.max(1.0) {
        return Err(Error::InvalidInterval(format!("t_min = {t_min} is not a multiple of dt = {dt}")));
    }
    let n_right = (right + 1e-6).floor();
    Ok((n_left as usize, n_right as usize))
}

/// A point `ω_τ = (τ, ω)` of the driving system; `Θ_t` moves it to `(τ + t, θ_t ω)`.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub tau: f64,
    pub path: WienerPath,
}

impl PathPoint {
    pub fn new(tau: f64, path: WienerPath) -> Self {
        PathPoint { tau, path }
    }

    pub fn shift(&self, t: f64) -> Result<Self> {
        Ok(PathPoint { tau: self.tau + t, path: self.path.shift(t)? })
    }

    /// `z*(θ_t ω)` along the orbit of this point.
    pub fn z_star(&self, t: f64) -> Result<f64> {
        self.path.z_star(t)
    }

    pub fn label(&self) -> String {
        match self.path.seed() {
            Some(s) => format!("seed{s}@tau{}", self.tau),
            None => format!("path@tau{}", self.tau),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchored_and_deterministic() {
        let a = WienerPath::sample(7, -5.0, 5.0, 0.01).unwrap();
        let b = WienerPath::sample(7, -5.0, 5.0, 0.01).unwrap();
        assert_eq!(a.value(0.0).unwrap(), 0.0);
        assert_eq!(a.values(), b.values());
        assert_eq!(a.len(), 1001);
    }

    #[test]
    fn rejects_bad_intervals() {
        assert!(matches!(WienerPath::sample(1, 0.5, 2.0, 0.1), Err(Error::InvalidInterval(_))));
        assert!(matches!(WienerPath::sample_with_cap(1, -10.0, 10.0, 0.01, 100), Err(Error::GridTooLarge { .. })));
    }

    #[test]
    fn shift_flow_is_exact() {
        let p = WienerPath::sample(3, -10.0, 10.0, 0.01).unwrap();
        let a = p.shift(1.5).unwrap().shift(-0.7).unwrap();
        let b = p.shift(0.8).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.value(0.0).unwrap(), 0.0);
        assert_eq!(p.shift(0.0).unwrap().values(), p.values());
        assert!(matches!(p.shift(0.005), Err(Error::OffGridShift { .. })));
        assert!(matches!(p.shift(11.0), Err(Error::WindowExhausted { .. })));
    }

    #[test]
    fn ou_closed_form_linear_path() {
        let p = WienerPath::from_fn(-40.0, 1.0, 1e-4, |s| s).unwrap();
        let z = p.ou_stationary(0.0, 30.0).unwrap();
        assert!((z - 1.0).abs() < 1e-8, "z = {z}");
        let zero = WienerPath::zero(-40.0, 1.0, 0.01).unwrap();
        assert_eq!(zero.ou_stationary(0.0, 30.0).unwrap(), 0.0);
    }

    #[test]
    fn ou_stationary_commutes_with_shift() {
        let p = WienerPath::sample(11, -50.0, 10.0, 0.01).unwrap();
        for &t in &[0.0, 0.37, 4.0, -3.21] {
            let direct = p.ou_stationary(t, 30.0).unwrap();
            let shifted = p.shift(t).unwrap().ou_stationary(0.0, 30.0).unwrap();
            assert_eq!(direct, shifted);
        }
    }

    #[test]
    fn insufficient_history_is_reported() {
        let p = WienerPath::sample(1, -20.0, 5.0, 0.01).unwrap();
        assert!(matches!(p.ou_stationary(0.0, 30.0), Err(Error::InsufficientLeftWindow { .. })));
        assert!(matches!(p.z_star(0.0), Err(Error::InsufficientLeftWindow { .. })));
    }

    #[test]
    fn table_matches_direct_quadrature() {
        let p = WienerPath::sample(5, -60.0, 10.0, 0.01).unwrap();
        for &t in &[-20.0, 0.0, 3.3, 9.99] {
            let direct = p.ou_stationary(t, 30.0).unwrap();
            let fast = p.z_star(t).unwrap();
            assert!((direct - fast).abs() < 1e-10, "t={t}: {direct} vs {fast}");
        }
    }

    #[test]
    fn off_grid_interpolation_is_continuous() {
        let p = WienerPath::sample(5, -40.0, 2.0, 0.01).unwrap();
        let z0 = p.z_star(1.0).unwrap();
        let z1 = p.z_star(1.01).unwrap();
        assert!((p.z_star(1.0 + 1e-13).unwrap() - z0).abs() < 1e-9);
        assert!((p.z_star(1.01 - 1e-12).unwrap() - z1).abs() < 1e-9);
        let mid = p.z_star(1.005).unwrap();
        assert!(mid.is_finite() && (mid - 0.5 * (z0 + z1)).abs() < 0.05);
    }

    #[test]
    fn truncation_error_bound() {
        let p = WienerPath::sample(9, -60.0, 1.0, 0.01).unwrap();
        let a = p.ou_stationary(0.0, 20.0).unwrap();
        let b = p.ou_stationary(0.0, 30.0).unwrap();
        let tail = p.values()[..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((a - b).abs() <= (-20.0f64).exp() * (1.0 + tail));
    }

    #[test]
    fn csv_round_trip() {
        let p = WienerPath::sample(2, -1.0, 1.0, 0.25).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = WienerPath::read_csv(&buf[..]).unwrap();
        assert_eq!(p.values(), q.values());
        assert_eq!(q.t_min(), -1.0);
    }

    #[test]
    fn sublinear_report_at_origin() {
        let p = WienerPath::sample(4, -40.0, 1.0, 0.01).unwrap();
        let r = p.sublinear_report(&[0.0]).unwrap();
        assert_eq!(r[0].1, p.ou_stationary(0.0, 30.0).unwrap().abs());
    }
}
