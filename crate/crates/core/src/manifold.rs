//! Local unstable sets of hyperbolic solutions as Lipschitz graphs over the
//! unstable subspace, built by a backward Lyapunov-Perron iteration, together
//! with the smallness conditions and the backward decay and attraction bounds.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::{rk4_step, VectorField};
use crate::error::{Error, Result};
use crate::hyperbolic::{DichotomyEstimate, HyperbolicSolutionTrace};
use crate::linalg::{linear_fit, projection_rank, range_basis, spectral_norm};

#[derive(Debug, Clone, Serialize)]
pub struct SmallnessReport {
    pub rho: f64,
    #[serde(rename = "M")]
    pub m_bound: f64,
    pub alpha: f64,
    #[serde(rename = "L")]
    pub lipschitz: f64,
    pub conditions: [bool; 4],
}

impl SmallnessReport {
    pub fn all_true(&self) -> bool {
        self.conditions.iter().all(|&c| c)
    }

    /// Backward decay exponent `α − ρM(1+L)`.
    pub fn decay_rate(&self) -> f64 {
        self.alpha - self.rho * self.m_bound * (1.0 + self.lipschitz)
    }
}

fn evaluate_conditions(rho: f64, m: f64, alpha: f64, l: f64) -> [bool; 4] {
    let q = rho * m * (1.0 + l);
    let c1 = rho * m / alpha <= l;
    let c2 = q / alpha < 1.0;
    let c3 = alpha - q > 0.0 && rho * m * m * (1.0 + l) / (alpha - q) <= l;
    let c4 = 2.0 * alpha - q > 0.0 && rho * m + rho * rho * m * m * (1.0 + l) * (1.0 + m) / (2.0 * alpha - q) < alpha / 2.0;
    [c1, c2, c3, c4]
}

/// The four smallness inequalities for `(ρ, M, α, L)`.
pub fn check_smallness(rho: f64, m: f64, alpha: f64, l: f64) -> Result<SmallnessReport> {
    if !(rho > 0.0 && m > 0.0 && alpha > 0.0 && l > 0.0) {
        return Err(Error::InvalidArgument(format!("smallness inputs must be positive (rho={rho}, M={m}, alpha={alpha}, L={l})")));
    }
    Ok(SmallnessReport { rho, m_bound: m, alpha, lipschitz: l, conditions: evaluate_conditions(rho, m, alpha, l) })
}

/// Smallest `L` (on a fine geometric scan) for which all four conditions
/// hold, if any.
pub fn minimal_lipschitz(rho: f64, m: f64, alpha: f64) -> Option<f64> {
    if rho == 0.0 {
        return Some(0.0);
    }
    let lo = rho * m / alpha;
    // condition 2 caps L below α/(ρM) − 1
    let hi = alpha / (rho * m) - 1.0;
    if hi <= lo {
        return None;
    }
    let steps = 20_000;
    (0..=steps).map(|i| lo * (hi / lo).powf(i as f64 / steps as f64)).find(|&l| evaluate_conditions(rho, m, alpha, l).iter().all(|&c| c))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RhoEstimate {
    pub rho: f64,
    pub sup_norm: f64,
    pub sup_lipschitz: f64,
}

/// Sup of `‖h(t,z)‖` and of its Lipschitz quotients over a probe set in the
/// ball `‖z‖ ≤ δ` and sampled trace times, where
/// `h(t,z) = F(ξ+z) − F(ξ) − DF(ξ) z`.
pub fn estimate_rho(field: &dyn VectorField, eta: f64, trace: &HyperbolicSolutionTrace, delta: f64) -> Result<RhoEstimate> {
    estimate_rho_with(field, eta, trace, delta, 21, 25)
}

pub fn estimate_rho_with(
    field: &dyn VectorField,
    eta: f64,
    trace: &HyperbolicSolutionTrace,
    delta: f64,
    per_dim: usize,
    n_times: usize,
) -> Result<RhoEstimate> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("probe radius must be positive".into()));
    }
    let d = field.dim();
    let probes: Vec<DVector<f64>> = if d <= 3 {
        let bbox = vec![(-delta, delta); d];
        crate::hyperbolic::lattice(&bbox, per_dim.max(2)).into_iter().filter(|z| z.norm() <= delta * (1.0 + 1e-12)).collect()
    } else {
        let mut p = crate::cocycle::ball_probes(d, delta, 4 * per_dim, 0xb0b);
        p.push(DVector::zeros(d));
        p
    };
    let nt = n_times.max(1).min(trace.times.len());
    let idx: Vec<usize> = (0..nt).map(|k| if nt == 1 { trace.times.len() / 2 } else { k * (trace.times.len() - 1) / (nt - 1) }).collect();
    let per_time: Vec<(f64, f64)> = idx
        .par_iter()
        .map(|&i| -> Result<(f64, f64)> {
            let t = trace.times[i];
            let xi = &trace.states[i];
            let f0 = field.rhs(eta, t, &trace.pp, xi)?;
            let j0 = field.jac(eta, t, &trace.pp, xi)?;
            let hs: Vec<DVector<f64>> =
                probes.iter().map(|z| Ok(field.rhs(eta, t, &trace.pp, &(xi + z))? - &f0 - &j0 * z)).collect::<Result<_>>()?;
            let sup_norm = hs.iter().map(|h| h.norm()).fold(0.0, f64::max);
            let mut lip: f64 = 0.0;
            for a in 0..probes.len() {
                for b in (a + 1)..probes.len() {
                    let dz = (&probes[a] - &probes[b]).norm();
                    if dz > 0.0 {
                        lip = lip.max((&hs[a] - &hs[b]).norm() / dz);
                    }
                }
            }
            Ok((sup_norm, lip))
        })
        .collect::<Result<_>>()?;
    let sup_norm = per_time.iter().map(|p| p.0).fold(0.0, f64::max);
    let sup_lipschitz = per_time.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(RhoEstimate { rho: sup_norm.max(sup_lipschitz), sup_norm, sup_lipschitz })
}

/// Smooth cutoff: 1 on `[0, r]`, 0 beyond `2r`, cubic smoothstep in between.
fn cutoff(norm: f64, r: f64) -> f64 {
    if norm <= r {
        1.0
    } else if norm >= 2.0 * r {
        0.0
    } else {
        let x = (norm - r) / r;
        1.0 - x * x * (3.0 - 2.0 * x)
    }
}

#[derive(Debug, Clone)]
pub struct GraphOptions {
    pub delta0: f64,
    pub grid_n: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Backward horizon of the Lyapunov-Perron solves; `None` means `15/α`.
    pub t_back: Option<f64>,
    pub anchors: Vec<f64>,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions { delta0: 0.2, grid_n: 17, tol: 1e-12, max_iter: 100, t_back: None, anchors: vec![0.0] }
    }
}

struct LpContext<'a> {
    field: &'a dyn VectorField,
    eta: f64,
    trace: &'a HyperbolicSolutionTrace,
    a: DMatrix<f64>,
    e: DMatrix<f64>,
    einv: DMatrix<f64>,
    pu: DMatrix<f64>,
    ps: DMatrix<f64>,
    basis: DMatrix<f64>,
    f_xi: Vec<DVector<f64>>,
    j_xi: Vec<DMatrix<f64>>,
    radius: f64,
    tol: f64,
    max_iter: usize,
}

impl<'a> LpContext<'a> {
    fn new(
        field: &'a dyn VectorField,
        eta: f64,
        trace: &'a HyperbolicSolutionTrace,
        dich: &DichotomyEstimate,
        radius: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<Self> {
        let mid = trace.times.len() / 2;
        let a = field.jac(eta, trace.times[mid], &trace.pp, &trace.states[mid])?;
        let dt = trace.dt();
        let pu = dich.proj_u.clone();
        let ps = dich.proj_s.clone();
        let basis = range_basis(&pu, projection_rank(&pu));
        let mut f_xi = Vec::with_capacity(trace.times.len());
        let mut j_xi = Vec::with_capacity(trace.times.len());
        for (t, x) in trace.times.iter().zip(&trace.states) {
            f_xi.push(field.rhs(eta, *t, &trace.pp, x)?);
            j_xi.push(field.jac(eta, *t, &trace.pp, x)?);
        }
        Ok(LpContext {
            field,
            eta,
            trace,
            e: (&a * dt).exp(),
            einv: (&a * (-dt)).exp(),
            a,
            pu,
            ps,
            basis,
            f_xi,
            j_xi,
            radius,
            tol,
            max_iter,
        })
    }

    fn nonlinearity(&self, i: usize, z: &DVector<f64>) -> Result<DVector<f64>> {
        let lin = (&self.j_xi[i] - &self.a) * z;
        let chi = cutoff(z.norm(), self.radius);
        if chi == 0.0 {
            return Ok(lin);
        }
        let x = &self.trace.states[i] + z;
        let h = self.field.rhs(self.eta, self.trace.times[i], &self.trace.pp, &x)? - &self.f_xi[i] - &self.j_xi[i] * z;
        Ok(lin + h * chi)
    }

    /// Backward-bounded solution on the grid indices `s_idx, s_idx−1, …, s_idx−nb`
    /// with unstable part `U c` at `s_idx`.
    fn backward_solution(&self, c: &DVector<f64>, s_idx: usize, nb: usize) -> Result<Vec<DVector<f64>>> {
        let h = self.trace.dt();
        let z0 = &self.basis * c;
        let dim = z0.len();
        let mut z: Vec<DVector<f64>> = Vec::with_capacity(nb + 1);
        z.push(z0.clone());
        for j in 0..nb {
            let prev = &self.einv * &z[j];
            z.push(prev);
        }
        let mut last = f64::INFINITY;
        let mut stalled = 0;
        for it in 1..=self.max_iter {
            let n: Vec<DVector<f64>> = (0..=nb).map(|j| self.nonlinearity(s_idx - j, &z[j])).collect::<Result<_>>()?;
            let nu: Vec<DVector<f64>> = n.iter().map(|v| &self.pu * v).collect();
            let ns: Vec<DVector<f64>> = n.iter().map(|v| &self.ps * v).collect();
            let mut v = vec![DVector::zeros(dim); nb + 1];
            v[0] = z0.clone();
            for j in 0..nb {
                let next = &self.einv * (&v[j] - &nu[j] * (0.5 * h)) - &nu[j + 1] * (0.5 * h);
                v[j + 1] = &self.pu * next;
            }
            let mut w = vec![DVector::zeros(dim); nb + 1];
            for j in (0..nb).rev() {
                let next = &self.e * (&w[j + 1] + &ns[j + 1] * (0.5 * h)) + &ns[j] * (0.5 * h);
                w[j] = &self.ps * next;
            }
            let new: Vec<DVector<f64>> = v.into_iter().zip(w).map(|(a, b)| a + b).collect();
            let update = crate::linalg::sup_norm_diff(&new, &z);
            z = new;
            if !update.is_finite() {
                return Err(Error::NoContraction { iterations: it, last_update: update });
            }
            if update < self.tol {
                return Ok(z);
            }
            if update >= last {
                stalled += 1;
                if stalled >= 5 {
                    return Err(Error::NoContraction { iterations: it, last_update: update });
                }
            } else {
                stalled = 0;
            }
            last = update;
        }
        Err(Error::NoContraction { iterations: self.max_iter, last_update: last })
    }
}

/// Discretized graph `Σ^u(s, ·)` over a ball in unstable coordinates.
#[derive(Debug, Clone)]
pub struct GraphMap {
    pub eta: f64,
    pub center: Arc<HyperbolicSolutionTrace>,
    pub dich: DichotomyEstimate,
    pub delta0: f64,
    pub grid_n: usize,
    /// Orthonormal basis of `range Π^u` (columns).
    pub basis: DMatrix<f64>,
    pub axis: Vec<f64>,
    pub nodes: Vec<DVector<f64>>,
    pub anchors: Vec<f64>,
    /// `values[a][n]`: stable component at anchor `a`, node `n`.
    pub values: Vec<Vec<DVector<f64>>>,
    pub l_est: f64,
    pub smallness: SmallnessReport,
    /// Radius on which the smallness conditions were verified.
    pub licensed_radius: f64,
    pub t_back: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl GraphMap {
    pub fn unstable_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    fn node_index(&self, multi: &[usize]) -> usize {
        multi.iter().rev().fold(0, |acc, &i| acc * self.grid_n + i)
    }

    /// `Σ^u` at anchor index `a` by tensor 4-point Lagrange interpolation.
    pub fn sigma_at_anchor(&self, a: usize, c: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self.unstable_dim();
        if k == 0 {
            return Ok(self.values[a][0].clone());
        }
        let n = self.grid_n;
        let h = self.axis[1] - self.axis[0];
        let mut stencils: Vec<Vec<(usize, f64)>> = Vec::with_capacity(k);
        for d in 0..k {
            let x = c[d];
            if x < self.axis[0] - 1e-12 || x > self.axis[n - 1] + 1e-12 {
                return Err(Error::TubeEscape { t: f64::NAN, radius: self.delta0 });
            }
            let pos = (x - self.axis[0]) / h;
            let start = (pos.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
            let pts: Vec<usize> = (start..start + 4.min(n)).collect();
            let st = pts
                .iter()
                .map(|&i| {
                    let w = pts.iter().filter(|&&j| j != i).map(|&j| (x - self.axis[j]) / (self.axis[i] - self.axis[j])).product::<f64>();
                    (i, w)
                })
                .collect();
            stencils.push(st);
        }
        let mut out = DVector::zeros(self.dim());
        let mut idx = vec![0usize; k];
        let mut combo = vec![0usize; k];
        loop {
            let mut w = 1.0;
            for d in 0..k {
                let (i, wd) = stencils[d][combo[d]];
                idx[d] = i;
                w *= wd;
            }
            out += &self.values[a][self.node_index(&idx)] * w;
            let mut d = 0;
            while d < k {
                combo[d] += 1;
                if combo[d] < stencils[d].len() {
                    break;
                }
                combo[d] = 0;
                d += 1;
            }
            if d == k {
                break;
            }
        }
        Ok(out)
    }

    /// `Σ^u(t, c)`, linear in time between anchors.
    pub fn sigma(&self, t: f64, c: &DVector<f64>) -> Result<DVector<f64>> {
        let na = self.anchors.len();
        if na == 1 {
            if (t - self.anchors[0]).abs() > 1e-9 {
                return Err(Error::WindowExhausted { t, t_min: self.anchors[0], t_max: self.anchors[0] });
            }
            return self.sigma_at_anchor(0, c);
        }
        let (lo, hi) = (self.anchors[0], self.anchors[na - 1]);
        if t < lo - 1e-9 || t > hi + 1e-9 {
            return Err(Error::WindowExhausted { t, t_min: lo, t_max: hi });
        }
        let i = self.anchors.partition_point(|&a| a <= t).clamp(1, na - 1) - 1;
        let (a0, a1) = (self.anchors[i], self.anchors[i + 1]);
        let lam = ((t - a0) / (a1 - a0)).clamp(0.0, 1.0);
        let v0 = self.sigma_at_anchor(i, c)?;
        if lam == 0.0 {
            return Ok(v0);
        }
        Ok(v0 * (1.0 - lam) + self.sigma_at_anchor(i + 1, c)? * lam)
    }

    /// Unstable coordinates `Uᵀ Π^u z`.
    pub fn coords(&self, z: &DVector<f64>) -> DVector<f64> {
        self.basis.transpose() * (&self.dich.proj_u * z)
    }

    /// Largest `‖Σ(s, 0)‖` over anchors.
    pub fn origin_defect(&self) -> Result<f64> {
        let zero = DVector::zeros(self.unstable_dim());
        (0..self.anchors.len()).map(|a| Ok(self.sigma_at_anchor(a, &zero)?.norm())).try_fold(0.0, |m, v: Result<f64>| Ok(f64::max(m, v?)))
    }

    /// Largest `‖Π^u v‖` over stored values.
    pub fn range_defect(&self) -> f64 {
        self.values.iter().flatten().map(|v| (&self.dich.proj_u * v).norm()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "s")?;
        for k in 1..=self.unstable_dim() {
            write!(w, ",c_{k}")?;
        }
        for k in 1..=self.dim() {
            write!(w, ",sigma_{k}")?;
        }
        writeln!(w)?;
        for (a, s) in self.anchors.iter().enumerate() {
            for (n, c) in self.nodes.iter().enumerate() {
                write!(w, "{s}")?;
                for v in c.iter() {
                    write!(w, ",{v}")?;
                }
                for v in self.values[a][n].iter() {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Builds `Σ^u` on a node grid for each anchor time by the backward
/// Lyapunov-Perron iteration, with the nonlinearity cut off outside `2δ₀`.
pub fn graph_transform(
    field: &dyn VectorField,
    eta: f64,
    trace: Arc<HyperbolicSolutionTrace>,
    dich: &DichotomyEstimate,
    opts: &GraphOptions,
) -> Result<GraphMap> {
    if !(opts.delta0 > 0.0) || opts.grid_n < 4 {
        return Err(Error::InvalidArgument("graph needs delta0 > 0 and at least 4 nodes per axis".into()));
    }
    let smallness_and_radius = calibrate_smallness(field, eta, &trace, dich, opts.delta0)?;
    let (smallness, licensed_radius) = smallness_and_radius;

    let ctx = LpContext::new(field, eta, &trace, dich, opts.delta0, opts.tol, opts.max_iter)?;
    let k = ctx.basis.ncols();
    let t_back = opts.t_back.unwrap_or(15.0 / dich.alpha);
    let dt = trace.dt();
    let nb = (t_back / dt).round() as usize;
    let mut anchor_idx = Vec::with_capacity(opts.anchors.len());
    for &s in &opts.anchors {
        let i = trace.index_of(s).ok_or_else(|| Error::InvalidArgument(format!("anchor {s} is not a trace grid time")))?;
        if i < nb {
            return Err(Error::InsufficientLeftWindow { required: s - t_back, available: trace.times[0] });
        }
        anchor_idx.push(i);
    }
    let n = opts.grid_n;
    let axis: Vec<f64> = (0..n).map(|i| -opts.delta0 + 2.0 * opts.delta0 * i as f64 / (n - 1) as f64).collect();
    let nodes: Vec<DVector<f64>> = if k == 0 {
        vec![DVector::zeros(0)]
    } else {
        (0..n.pow(k as u32))
            .map(|mut idx| {
                let mut c = DVector::zeros(k);
                for d in 0..k {
                    c[d] = axis[idx % n];
                    idx /= n;
                }
                c
            })
            .collect()
    };
    let jobs: Vec<(usize, usize)> = (0..anchor_idx.len()).flat_map(|a| (0..nodes.len()).map(move |m| (a, m))).collect();
    let solved: Vec<DVector<f64>> = jobs
        .par_iter()
        .map(|&(a, m)| {
            let z = ctx.backward_solution(&nodes[m], anchor_idx[a], nb)?;
            Ok(&ctx.ps * &z[0])
        })
        .collect::<Result<_>>()?;
    let mut values = vec![Vec::with_capacity(nodes.len()); anchor_idx.len()];
    for ((a, _), v) in jobs.iter().zip(solved) {
        values[*a].push(v);
    }
    let in_ball: Vec<usize> = (0..nodes.len()).filter(|&m| nodes[m].norm() <= opts.delta0 * (1.0 + 1e-12)).collect();
    let mut l_est: f64 = 0.0;
    for vals in &values {
        for (ia, &p) in in_ball.iter().enumerate() {
            for &q in &in_ball[ia + 1..] {
                let dc = (&nodes[p] - &nodes[q]).norm();
                l_est = l_est.max((&vals[p] - &vals[q]).norm() / dc);
            }
        }
    }
    Ok(GraphMap {
        eta,
        center: Arc::clone(&trace),
        dich: dich.clone(),
        delta0: opts.delta0,
        grid_n: n,
        basis: ctx.basis.clone(),
        axis,
        nodes,
        anchors: opts.anchors.clone(),
        values,
        l_est,
        smallness,
        licensed_radius,
        t_back,
        tol: opts.tol,
        max_iter: opts.max_iter,
    })
}

/// Halves the probe radius from `δ₀` until the four conditions admit some `L`.
fn calibrate_smallness(
    field: &dyn VectorField,
    eta: f64,
    trace: &HyperbolicSolutionTrace,
    dich: &DichotomyEstimate,
    delta0: f64,
) -> Result<(SmallnessReport, f64)> {
    let (m, alpha) = (dich.m_bound, dich.alpha);
    let mut delta = delta0;
    for _ in 0..7 {
        let rho = estimate_rho(field, eta, trace, delta)?.rho;
        if let Some(l) = minimal_lipschitz(rho, m, alpha) {
            let report = SmallnessReport { rho, m_bound: m, alpha, lipschitz: l, conditions: evaluate_conditions(rho, m, alpha, l) };
            return Ok((report, delta));
        }
        delta *= 0.5;
    }
    Err(Error::SmallnessViolated(format!(
        "no Lipschitz constant satisfies the conditions for radii down to {delta:.3e} (M={m:.3}, alpha={alpha:.3})"
    )))
}

#[derive(Debug, Clone, Serialize)]
pub struct SandwichSample {
    pub c_norm: f64,
    pub zeta_s: f64,
    pub max_norm: f64,
    pub worst_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    pub delta: f64,
    pub delta_prime: f64,
    pub delta_dprime: f64,
    pub rate: f64,
    pub anchor: f64,
    pub samples: Vec<SandwichSample>,
    pub escaped: usize,
    pub within_delta_prime: bool,
    pub worst_ratio: f64,
    pub passed: bool,
}

/// Samples graph points with `‖c‖ ≤ δ''`, follows the actual solutions
/// through them forward from a far-back time, and checks that they stay in
/// the `δ`-tube and obey `‖ζ(t)‖ ≤ M²(1+L) e^{(α−ρM(1+L))(t−s)} ‖ζ(s)‖` for
/// `t ≤ s` within `slack`.
pub fn sandwich_check(field: &dyn VectorField, gm: &GraphMap, delta: f64, n_solutions: usize, slack: f64) -> Result<SandwichReport> {
    let sm = &gm.smallness;
    let (m, l) = (sm.m_bound, sm.lipschitz);
    let factor = m * m * (1.0 + l);
    let delta_prime = delta / factor;
    let delta_dprime = delta_prime / factor;
    let rate = sm.decay_rate();
    let trace = &gm.center;
    let ctx = LpContext::new(field, gm.eta, trace, &gm.dich, gm.delta0, gm.tol, gm.max_iter)?;
    let s = *gm.anchors.last().expect("graph has anchors");
    let s_idx = trace.index_of(s).expect("anchors lie on the trace grid");
    let dt = trace.dt();
    let nb = (gm.t_back / dt).round() as usize;
    let nf = nb / 2;
    let k = gm.unstable_dim();
    let cs: Vec<DVector<f64>> = (0..if k == 0 { 0 } else { n_solutions })
        .map(|i| {
            let r = delta_dprime * (i + 1) as f64 / n_solutions as f64;
            match k {
                1 => DVector::from_element(1, if i % 2 == 0 { r } else { -r }),
                _ => {
                    let th = 2.399_963_229_728_653 * i as f64;
                    let mut c = DVector::zeros(k);
                    c[0] = r * th.cos();
                    c[1] = r * th.sin();
                    c
                }
            }
        })
        .collect();
    let samples: Vec<(SandwichSample, bool)> = cs
        .par_iter()
        .map(|c| -> Result<(SandwichSample, bool)> {
            let z = ctx.backward_solution(c, s_idx, nb)?;
            let start = s_idx - nf;
            let mut y = &trace.states[start] + &z[nf];
            let mut zetas = vec![(&y - &trace.states[start]).norm()];
            for i in start..s_idx {
                y = rk4_step(field, gm.eta, &trace.pp, trace.times[i], &y, dt)?;
                zetas.push((&y - &trace.states[i + 1]).norm());
            }
            let zeta_s = *zetas.last().expect("nonempty");
            let max_norm = zetas.iter().copied().fold(0.0, f64::max);
            let mut worst: f64 = 0.0;
            for (j, zn) in zetas.iter().enumerate() {
                let t_minus_s = -((nf - j) as f64) * dt;
                let bound = factor * (rate * t_minus_s).exp() * zeta_s;
                worst = worst.max(zn / bound);
            }
            let escaped = max_norm > delta;
            Ok((SandwichSample { c_norm: c.norm(), zeta_s, max_norm, worst_ratio: worst }, escaped))
        })
        .collect::<Result<_>>()?;
    let escaped = samples.iter().filter(|s| s.1).count();
    let samples: Vec<SandwichSample> = samples.into_iter().map(|s| s.0).collect();
    let worst_ratio = samples.iter().map(|s| s.worst_ratio).fold(0.0, f64::max);
    let within_delta_prime = samples.iter().all(|s| s.max_norm <= delta_prime);
    let passed = rate > 0.0 && escaped == 0 && worst_ratio <= slack;
    Ok(SandwichReport { delta, delta_prime, delta_dprime, rate, anchor: s, samples, escaped, within_delta_prime, worst_ratio, passed })
}

#[derive(Debug, Clone, Serialize)]
pub struct AttractionReport {
    pub gamma_ref: f64,
    #[serde(rename = "M")]
    pub m_bound: f64,
    pub fitted_gamma: Option<f64>,
    pub g0: f64,
    pub max_gap: f64,
    pub worst_ratio: f64,
    pub passed: bool,
    pub gaps: Vec<(f64, f64)>,
}

/// Follows the solution `ξ + ζ` from `ξ(s) + ζ₀` and checks the exponential
/// decay of its distance to the graph,
/// `g(t) = ‖Π^s ζ(t) − Σ^u(t, Π^u ζ(t))‖ ≤ M e^{−γ(t−s)} g(s)` within `slack`.
pub fn attraction_rate_check(
    field: &dyn VectorField,
    gm: &GraphMap,
    zeta0: &DVector<f64>,
    window: (f64, f64),
    slack: f64,
) -> Result<AttractionReport> {
    let trace = &gm.center;
    let (s, t_end) = window;
    let i0 = trace.index_of(s).ok_or_else(|| Error::InvalidArgument(format!("start {s} is not a trace grid time")))?;
    let i1 = trace.index_of(t_end).ok_or_else(|| Error::InvalidArgument(format!("end {t_end} is not a trace grid time")))?;
    if i1 <= i0 {
        return Err(Error::InvalidArgument("attraction window must have positive length".into()));
    }
    let dt = trace.dt();
    let pu = &gm.dich.proj_u;
    let ps = &gm.dich.proj_s;
    let gap = |t: f64, zeta: &DVector<f64>| -> Result<f64> {
        if (pu * zeta).norm() > gm.delta0 || zeta.norm() > 2.0 * gm.delta0 {
            return Err(Error::TubeEscape { t, radius: gm.delta0 });
        }
        let c = gm.coords(zeta);
        Ok((ps * zeta - gm.sigma(t, &c)?).norm())
    };
    let mut y = &trace.states[i0] + zeta0;
    let mut gaps = vec![(s, gap(s, zeta0)?)];
    for i in i0..i1 {
        y = rk4_step(field, gm.eta, &trace.pp, trace.times[i], &y, dt)?;
        let t = trace.times[i + 1];
        gaps.push((t, gap(t, &(&y - &trace.states[i + 1]))?));
    }
    let g0 = gaps[0].1;
    let max_gap = gaps.iter().map(|p| p.1).fold(0.0, f64::max);
    let gamma_ref = gm.dich.gamma;
    let m = gm.dich.m_bound;
    if g0 <= 1e-9 {
        return Ok(AttractionReport {
            gamma_ref,
            m_bound: m,
            fitted_gamma: None,
            g0,
            max_gap,
            worst_ratio: 0.0,
            passed: max_gap <= 1e-6,
            gaps,
        });
    }
    let usable: Vec<(f64, f64)> = gaps.iter().filter(|p| p.1 > 1e-12 * g0 && p.1 > 1e-14).map(|p| (p.0 - s, p.1.ln())).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = usable.into_iter().unzip();
    let fitted = linear_fit(&xs, &ys).map(|f| -f.1);
    let worst_ratio = gaps.iter().map(|(t, g)| g / (m * (-gamma_ref * (t - s)).exp() * g0)).fold(0.0, f64::max);
    let passed = fitted.is_some_and(|g| g > 0.0) && worst_ratio <= slack;
    Ok(AttractionReport { gamma_ref, m_bound: m, fitted_gamma: fitted, g0, max_gap, worst_ratio, passed, gaps })
}

/// `‖Π^u_η − Π^u_0‖₂ + max ‖Σ_η − Σ_0‖` over shared anchors and nodes in the ball.
pub fn graph_continuity_gap(gm_eta: &GraphMap, gm_0: &GraphMap) -> Result<f64> {
    if gm_eta.grid_n != gm_0.grid_n
        || gm_eta.delta0 != gm_0.delta0
        || gm_eta.anchors != gm_0.anchors
        || gm_eta.basis.shape() != gm_0.basis.shape()
    {
        return Err(Error::GridMismatch("graphs differ in node grid, radius, anchors or dimensions".into()));
    }
    let proj = spectral_norm(&(&gm_eta.dich.proj_u - &gm_0.dich.proj_u));
    let mut val: f64 = 0.0;
    for (va, vb) in gm_eta.values.iter().zip(&gm_0.values) {
        for (m, c) in gm_0.nodes.iter().enumerate() {
            if c.norm() <= gm_0.delta0 * (1.0 + 1e-12) {
                val = val.max((&va[m] - &vb[m]).norm());
            }
        }
    }
    Ok(proj + val)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallness_examples() {
        let r = check_smallness(0.05, 1.0, 1.0, 0.1).unwrap();
        assert!(r.all_true());
        let r = check_smallness(0.5, 2.0, 1.0, 0.1).unwrap();
        assert!(!r.conditions[0]);
        assert!(check_smallness(0.0, 1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn minimal_lipschitz_satisfies_conditions() {
        let l = minimal_lipschitz(0.05, 1.0, 1.0).unwrap();
        assert!(check_smallness(0.05, 1.0, 1.0, l).unwrap().all_true());
        assert!(l < 0.1);
        assert!(minimal_lipschitz(2.0, 1.0, 1.0).is_none());
    }

    #[test]
    fn cutoff_profile() {
        assert_eq!(cutoff(0.1, 0.2), 1.0);
        assert_eq!(cutoff(0.2, 0.2), 1.0);
        assert_eq!(cutoff(0.4, 0.2), 0.0);
        assert!((cutoff(0.3, 0.2) - 0.5).abs() < 1e-12);
    }
}
