//! Pullback-attractor sections as point clouds, Hausdorff distances, the
//! η-continuity sweep, unstable-set clouds and connection digraphs.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use nalgebra::DVector;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::{flow, integrate, Trajectory, VectorField};
use crate::driver::PathPoint;
use crate::error::{Error, Result};
use crate::hyperbolic::{lattice, HyperbolicSolutionTrace};
use crate::linalg::{projection_rank, range_basis, unstable_projection};
use crate::manifold::GraphMap;

#[derive(Debug, Clone, Serialize)]
pub struct CloudMeta {
    pub t_back: f64,
    pub grid_n: usize,
    pub eps_cluster: f64,
    pub dt: f64,
    pub converged: bool,
    pub integrations: usize,
}

#[derive(Debug, Clone)]
pub struct SetCloud {
    pub points: Vec<DVector<f64>>,
    pub t_anchor: f64,
    pub eta: f64,
    pub pp_label: String,
    pub meta: CloudMeta,
}

impl SetCloud {
    pub fn from_points(points: Vec<DVector<f64>>, t_anchor: f64, eta: f64) -> Self {
        SetCloud {
            points,
            t_anchor,
            eta,
            pp_label: String::new(),
            meta: CloudMeta { t_back: 0.0, grid_n: 0, eps_cluster: 0.0, dt: 0.0, converged: true, integrations: 0 },
        }
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    /// Componentwise `(min, max)` of the cloud.
    pub fn extent(&self, k: usize) -> (f64, f64) {
        self.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[k]), hi.max(p[k])))
    }

    pub fn write_csv_rows<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.points {
            write!(w, "{},{}", self.t_anchor, self.eta)?;
            for v in p.iter() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn csv_header(dim: usize) -> String {
        let mut h = String::from("t_anchor,eta");
        for k in 1..=dim {
            h.push_str(&format!(",y_{k}"));
        }
        h
    }
}

fn nonempty(a: &SetCloud) -> Result<()> {
    if a.points.is_empty() {
        Err(Error::EmptyCloud)
    } else {
        Ok(())
    }
}

/// `sup_{a ∈ A} inf_{b ∈ B} ‖a − b‖`.
pub fn hausdorff_semidist(a: &SetCloud, b: &SetCloud) -> Result<f64> {
    nonempty(a)?;
    nonempty(b)?;
    Ok(a.points.par_iter().map(|p| b.points.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)).reduce(|| 0.0, f64::max))
}

pub fn hausdorff_dist(a: &SetCloud, b: &SetCloud) -> Result<f64> {
    Ok(hausdorff_semidist(a, b)?.max(hausdorff_semidist(b, a)?))
}

/// Greedy pruning: a point is kept unless a kept point lies within `eps/2`.
pub fn cluster(points: &[DVector<f64>], eps: f64) -> Vec<DVector<f64>> {
    let r = 0.5 * eps;
    let cell = |p: &DVector<f64>| -> Vec<i64> { p.iter().map(|v| (v / r).floor() as i64).collect() };
    let mut grid: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for p in points {
        let c = cell(p);
        let d = c.len();
        let mut near = false;
        let total = 3usize.pow(d as u32);
        'outer: for mut code in 0..total {
            let mut key = c.clone();
            for k in key.iter_mut() {
                *k += (code % 3) as i64 - 1;
                code /= 3;
            }
            if let Some(ids) = grid.get(&key) {
                for &i in ids {
                    if (&kept[i] - p).norm() < r {
                        near = true;
                        break 'outer;
                    }
                }
            }
        }
        if !near {
            grid.entry(c).or_default().push(kept.len());
            kept.push(p.clone());
        }
    }
    kept
}

/// Images of the segments `a_e → b_e` under a map, with adaptive bisection of
/// the parameter wherever consecutive images are farther apart than `thr`.
/// Returns the images in parameter order, edge by edge, and the number of
/// map evaluations.
fn refine_segments<F>(
    starts: &[(DVector<f64>, DVector<f64>)],
    images: Vec<(DVector<f64>, DVector<f64>)>,
    map: F,
    thr: f64,
    max_depth: u32,
) -> Result<(Vec<DVector<f64>>, usize)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let min_gap = 0.5f64.powi(max_depth as i32);
    let mut curves: Vec<Vec<(f64, DVector<f64>)>> = images.into_iter().map(|(ia, ib)| vec![(0.0, ia), (1.0, ib)]).collect();
    let mut evals = 0;
    loop {
        let mut jobs: Vec<(usize, usize, f64)> = Vec::new();
        for (e, c) in curves.iter().enumerate() {
            for j in 0..c.len() - 1 {
                if (&c[j + 1].1 - &c[j].1).norm() > thr && c[j + 1].0 - c[j].0 > min_gap {
                    jobs.push((e, j, 0.5 * (c[j].0 + c[j + 1].0)));
                }
            }
        }
        if jobs.is_empty() {
            break;
        }
        evals += jobs.len();
        let new: Vec<DVector<f64>> = jobs
            .par_iter()
            .map(|&(e, _, lam)| {
                let (a, b) = &starts[e];
                map(&(a + (b - a) * lam))
            })
            .collect::<Result<_>>()?;
        for ((e, j, lam), img) in jobs.into_iter().zip(new).rev() {
            curves[e].insert(j + 1, (lam, img));
        }
    }
    let out = curves.into_iter().flat_map(|c| c.into_iter().map(|p| p.1)).collect();
    Ok((out, evals))
}

#[derive(Debug, Clone)]
pub struct CloudOptions {
    pub bbox: Vec<(f64, f64)>,
    pub t_back: f64,
    pub grid_n: usize,
    pub t_anchor: f64,
    /// `None` means one percent of the box diameter.
    pub eps_cluster: Option<f64>,
    pub dt: f64,
    pub max_doublings: usize,
    /// Bisect lattice edges whose images drift apart; without it a uniform
    /// lattice collapses onto the stable equilibria and misses the unstable sets.
    pub refine: bool,
    pub max_depth: u32,
}

impl CloudOptions {
    pub fn new(bbox: Vec<(f64, f64)>) -> Self {
        CloudOptions {
            bbox,
            t_back: 10.0,
            grid_n: 41,
            t_anchor: 0.0,
            eps_cluster: None,
            dt: 0.01,
            max_doublings: 8,
            refine: true,
            max_depth: 48,
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps_cluster.unwrap_or_else(|| 0.01 * self.bbox.iter().map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct CloudResult {
    pub cloud: SetCloud,
    pub converged: bool,
    pub t_back_used: f64,
    /// Hausdorff distance between the last two pullback horizons.
    pub last_change: f64,
}

fn lattice_edges(n: usize, d: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    let total = n.pow(d as u32);
    for idx in 0..total {
        let mut stride = 1;
        let mut rest = idx;
        for _ in 0..d {
            if rest % n + 1 < n {
                edges.push((idx, idx + stride));
            }
            rest /= n;
            stride *= n;
        }
    }
    edges
}

/// `ψ(T, Θ_{t−T} pp)` applied to the box lattice (with edge refinement), clustered.
pub fn pullback_points(
    field: &dyn VectorField,
    eta: f64,
    pp: &PathPoint,
    opts: &CloudOptions,
    t_back: f64,
) -> Result<(Vec<DVector<f64>>, usize)> {
    let eps = opts.eps();
    let pts = lattice(&opts.bbox, opts.grid_n);
    let t0 = opts.t_anchor - t_back;
    let map = |y: &DVector<f64>| flow(field, eta, pp, y, t0, opts.t_anchor, opts.dt);
    let imgs: Vec<DVector<f64>> = pts.par_iter().map(map).collect::<Result<_>>()?;
    let mut evals = pts.len();
    let all = if opts.refine && opts.grid_n > 1 {
        let edges = lattice_edges(opts.grid_n, opts.bbox.len());
        let starts: Vec<(DVector<f64>, DVector<f64>)> = edges.iter().map(|&(a, b)| (pts[a].clone(), pts[b].clone())).collect();
        let images: Vec<(DVector<f64>, DVector<f64>)> = edges.iter().map(|&(a, b)| (imgs[a].clone(), imgs[b].clone())).collect();
        let (mut out, e) = refine_segments(&starts, images, map, 0.5 * eps, opts.max_depth)?;
        evals += e;
        out.extend(imgs);
        out
    } else {
        imgs
    };
    Ok((cluster(&all, eps), evals))
}

fn check_absorbing(field: &dyn VectorField, eta: f64, pp: &PathPoint, opts: &CloudOptions, t_back: f64) -> Result<()> {
    let wide: Vec<(f64, f64)> = opts
        .bbox
        .iter()
        .map(|&(a, b)| {
            let (c, h) = (0.5 * (a + b), (b - a));
            (c - h, c + h)
        })
        .collect();
    let probes = lattice(&wide, opts.grid_n.clamp(2, 9));
    let inside = |y: &DVector<f64>| y.iter().zip(&opts.bbox).all(|(v, (a, b))| *v >= *a && *v <= *b);
    let t0 = opts.t_anchor - t_back;
    let verdicts: Vec<Option<String>> = probes
        .par_iter()
        .map(|y0| {
            let tr = integrate(field, eta, pp, y0, t0, opts.t_anchor, opts.dt)?;
            let first_in = tr.states.iter().position(inside);
            Ok(match first_in {
                Some(i) if tr.states[i..].iter().all(inside) => None,
                _ => Some(format!("probe {:?} does not settle in the box within {t_back}", y0.as_slice())),
            })
        })
        .collect::<Result<_>>()?;
    if let Some(msg) = verdicts.into_iter().flatten().next() {
        return Err(Error::NotAbsorbing(msg));
    }
    Ok(())
}

/// Pullback cloud at `t_anchor`, doubling the horizon until two consecutive
/// clouds are within `eps_cluster` in Hausdorff distance. The box must absorb
/// the lattice of its double within the final horizon.
pub fn pullback_cloud(field: &dyn VectorField, eta: f64, pp: &PathPoint, opts: &CloudOptions) -> Result<CloudResult> {
    let eps = opts.eps();
    let mut t = opts.t_back;
    let (mut pts, mut evals) = pullback_points(field, eta, pp, opts, t)?;
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    for _ in 0..opts.max_doublings.max(1) {
        let t2 = 2.0 * t;
        let (next, e) = pullback_points(field, eta, pp, opts, t2)?;
        evals += e;
        let a = SetCloud::from_points(pts, opts.t_anchor, eta);
        let b = SetCloud::from_points(next, opts.t_anchor, eta);
        last_change = hausdorff_dist(&a, &b)?;
        pts = b.points;
        t = t2;
        if last_change <= eps {
            converged = true;
            break;
        }
    }
    check_absorbing(field, eta, pp, opts, t)?;
    let cloud = SetCloud {
        points: pts,
        t_anchor: opts.t_anchor,
        eta,
        pp_label: pp.label(),
        meta: CloudMeta { t_back: t, grid_n: opts.grid_n, eps_cluster: eps, dt: opts.dt, converged, integrations: evals },
    };
    Ok(CloudResult { cloud, converged, t_back_used: t, last_change })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub eta: f64,
    pub t_anchor: f64,
    pub upper: f64,
    pub lower: f64,
    #[serde(rename = "dH")]
    pub d_h: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub eta: f64,
    pub max_upper: f64,
    pub max_lower: f64,
    pub max_d_h: f64,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
    pub clouds: Vec<SetCloud>,
    pub reference: SetCloud,
    pub all_converged: bool,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "eta,t_anchor,upper,lower,dH")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{}", r.eta, r.t_anchor, r.upper, r.lower, r.d_h)?;
        }
        Ok(())
    }
}

/// Per `(η, t_anchor)`: `dist_H(A_η, A₀)`, `dist_H(A₀, A_η)` and `d_H`, with
/// `A₀` the `η = 0` cloud at the first anchor; plus the max over anchors per η.
pub fn continuity_sweep(
    field: &dyn VectorField,
    pp: &PathPoint,
    etas: &[f64],
    t_anchors: &[f64],
    opts: &CloudOptions,
) -> Result<SweepTable> {
    if t_anchors.is_empty() || etas.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one eta and one anchor".into()));
    }
    let ref_opts = CloudOptions { t_anchor: t_anchors[0], ..opts.clone() };
    let reference = pullback_cloud(field, 0.0, pp, &ref_opts)?;
    let mut all_converged = reference.converged;
    let mut rows = Vec::new();
    let mut clouds = Vec::new();
    for &eta in etas {
        for &t in t_anchors {
            let o = CloudOptions { t_anchor: t, ..opts.clone() };
            let res = pullback_cloud(field, eta, pp, &o)?;
            all_converged &= res.converged;
            let upper = hausdorff_semidist(&res.cloud, &reference.cloud)?;
            let lower = hausdorff_semidist(&reference.cloud, &res.cloud)?;
            rows.push(SweepRow { eta, t_anchor: t, upper, lower, d_h: upper.max(lower) });
            clouds.push(res.cloud);
        }
    }
    let summary = summarize(&rows);
    Ok(SweepTable { rows, summary, clouds, reference: reference.cloud, all_converged })
}

/// Max over anchors of each column, per η, in first-appearance order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut out: Vec<SweepSummary> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|s| s.eta == r.eta) {
            Some(s) => {
                s.max_upper = s.max_upper.max(r.upper);
                s.max_lower = s.max_lower.max(r.lower);
                s.max_d_h = s.max_d_h.max(r.d_h);
            }
            None => out.push(SweepSummary { eta: r.eta, max_upper: r.upper, max_lower: r.lower, max_d_h: r.d_h }),
        }
    }
    out
}

/// `true` when each value is at most `(1 + tol)` times its predecessor and the
/// last is strictly below the first.
pub fn decreasing_within(values: &[f64], tol: f64) -> bool {
    values.windows(2).all(|w| w[1] <= (1.0 + tol) * w[0]) && values.len() >= 2 && values[values.len() - 1] < values[0]
}

/// `d_H(ψ(t−s, Θ_s pp) cloud_s, cloud_t)`.
pub fn invariance_defect(
    field: &dyn VectorField,
    eta: f64,
    pp: &PathPoint,
    cloud_s: &SetCloud,
    cloud_t: &SetCloud,
    dt: f64,
) -> Result<f64> {
    nonempty(cloud_s)?;
    nonempty(cloud_t)?;
    if cloud_t.t_anchor <= cloud_s.t_anchor {
        return Err(Error::InvalidArgument("target anchor must come after the source anchor".into()));
    }
    let imgs: Vec<DVector<f64>> =
        cloud_s.points.par_iter().map(|y| flow(field, eta, pp, y, cloud_s.t_anchor, cloud_t.t_anchor, dt)).collect::<Result<_>>()?;
    hausdorff_dist(&SetCloud::from_points(imgs, cloud_t.t_anchor, eta), cloud_t)
}

/// Section at `t_anchor` of the unstable set of the graph's center: the local
/// graph at `t_anchor − t_flow` pushed forward, with adaptive refinement in the
/// unstable coordinate.
pub fn unstable_cloud(field: &dyn VectorField, gm: &GraphMap, t_anchor: f64, t_flow: f64, eps: f64, dt: f64) -> Result<SetCloud> {
    let trace = &gm.center;
    let s = t_anchor - t_flow;
    let a_idx = gm
        .anchors
        .iter()
        .position(|&a| (a - s).abs() < 1e-9)
        .ok_or_else(|| Error::InvalidArgument(format!("graph has no anchor at {s}")))?;
    let xi_s = trace.state_at(s)?;
    let xi_t = trace.state_at(t_anchor)?;
    let k = gm.unstable_dim();
    let pp = &trace.pp;
    let eta = gm.eta;
    let mut points = vec![xi_t.clone()];
    let mut evals = 0;
    if k > 0 {
        let lift = |c: &DVector<f64>| -> Result<DVector<f64>> { Ok(&xi_s + &gm.basis * c + gm.sigma_at_anchor(a_idx, c)?) };
        let map = |c: &DVector<f64>| flow(field, eta, pp, &lift(c)?, s, t_anchor, dt);
        let r = gm.delta0;
        let (starts, images): (Vec<(DVector<f64>, DVector<f64>)>, Vec<(DVector<f64>, DVector<f64>)>) = if k == 1 {
            let zero = DVector::zeros(1);
            let ends = [DVector::from_element(1, -r), DVector::from_element(1, r)];
            let img0 = map(&zero)?;
            let mut st = Vec::new();
            let mut im = Vec::new();
            for e in ends {
                let ie = map(&e)?;
                st.push((zero.clone(), e));
                im.push((img0.clone(), ie));
            }
            (st, im)
        } else {
            // spokes through the origin along directions in the unstable plane
            let n_dir = 4 * gm.grid_n;
            let zero = DVector::zeros(k);
            let img0 = map(&zero)?;
            let mut st = Vec::new();
            let mut im = Vec::new();
            for i in 0..n_dir {
                let th = std::f64::consts::TAU * i as f64 / n_dir as f64;
                let mut e = DVector::zeros(k);
                e[0] = r * th.cos();
                e[1] = r * th.sin();
                let ie = map(&e)?;
                st.push((zero.clone(), e));
                im.push((img0.clone(), ie));
            }
            (st, im)
        };
        evals += starts.len() + 1;
        let (pts, e) = refine_segments(&starts, images, map, 0.5 * eps, 48)?;
        evals += e;
        points.extend(pts);
    }
    let points = cluster(&points, eps);
    Ok(SetCloud {
        points,
        t_anchor,
        eta,
        pp_label: pp.label(),
        meta: CloudMeta { t_back: t_flow, grid_n: gm.grid_n, eps_cluster: eps, dt, converged: true, integrations: evals },
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct UnionResidual {
    /// `dist_H(A, ⋃ W^u)`.
    pub residual: f64,
    /// `dist_H(⋃ W^u, A)`.
    pub reverse: f64,
}

pub fn unstable_union_residual(a: &SetCloud, unstable: &[SetCloud]) -> Result<UnionResidual> {
    nonempty(a)?;
    let pts: Vec<DVector<f64>> = unstable.iter().flat_map(|c| c.points.iter().cloned()).collect();
    if pts.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let u = SetCloud::from_points(pts, a.t_anchor, a.eta);
    Ok(UnionResidual { residual: hausdorff_semidist(a, &u)?, reverse: hausdorff_semidist(&u, a)? })
}

#[derive(Debug, Clone)]
pub struct ConnectionEdge {
    pub from: usize,
    pub to: usize,
    pub witness: Trajectory,
}

#[derive(Debug, Clone, Serialize)]
pub struct Unclassified {
    pub from: usize,
    pub probe: usize,
    pub nearest: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct ConnectionGraph {
    pub n_nodes: usize,
    pub edges: Vec<ConnectionEdge>,
    pub acyclic: bool,
    pub probes: usize,
    pub classified: usize,
    pub returns: usize,
    pub unclassified: Vec<Unclassified>,
}

impl ConnectionGraph {
    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().map(|e| (e.from, e.to)).collect()
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for (a, b) in self.edge_set() {
            adj[a].push(b);
        }
        adj
    }

    pub fn classification_rate(&self) -> f64 {
        if self.probes == 0 {
            1.0
        } else {
            self.classified as f64 / self.probes as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConnectionOptions {
    pub eps: f64,
    pub n_probe: usize,
    pub dt: f64,
    /// Time after the start of the traces at which probes are released.
    pub release: f64,
    /// Fraction of the run used as the trailing window for ω-limits.
    pub trailing: f64,
}

impl Default for ConnectionOptions {
    fn default() -> Self {
        ConnectionOptions { eps: 0.01, n_probe: 2, dt: 0.01, release: 1.0, trailing: 0.2 }
    }
}

/// Probes released along the unstable directions of each trace; edges `i → j`
/// when the probe's trailing window stays within `eps` of trace `j`.
pub fn classify_connections(
    field: &dyn VectorField,
    eta: f64,
    pp: &PathPoint,
    traces: &[HyperbolicSolutionTrace],
    opts: &ConnectionOptions,
) -> Result<ConnectionGraph> {
    let p = traces.len();
    if p == 0 {
        return Ok(ConnectionGraph {
            n_nodes: 0,
            edges: vec![],
            acyclic: true,
            probes: 0,
            classified: 0,
            returns: 0,
            unclassified: vec![],
        });
    }
    let times = &traces[0].times;
    if traces.iter().any(|t| t.times.len() != times.len() || (t.times[0] - times[0]).abs() > 1e-9) {
        return Err(Error::GridMismatch("traces must share one time grid".into()));
    }
    for i in 0..p {
        for j in (i + 1)..p {
            let d = crate::linalg::sup_norm_diff(&traces[i].states, &traces[j].states);
            let sep = traces[i].states.iter().zip(&traces[j].states).map(|(a, b)| (a - b).norm()).fold(f64::INFINITY, f64::min);
            if sep < 3.0 * opts.eps {
                return Err(Error::InvalidArgument(format!("traces {i} and {j} come within {sep:.3e} (sup distance {d:.3e})")));
            }
        }
    }
    let t_end = *times.last().expect("nonempty");
    let t_start = times[0] + opts.release;
    let span = ((t_end - t_start) / opts.dt).round() as usize;
    let trail_from = span - ((span as f64) * opts.trailing).round() as usize;
    let mut seeds: Vec<(usize, DVector<f64>)> = Vec::new();
    for (i, tr) in traces.iter().enumerate() {
        let x = tr.state_at(t_start)?;
        let j = field.jac(eta, t_start, pp, &x)?;
        let pu = unstable_projection(&j)?;
        let k = projection_rank(&pu);
        if k == 0 {
            continue;
        }
        let basis = range_basis(&pu, k);
        let dirs: Vec<DVector<f64>> = if k == 1 {
            vec![basis.column(0).into_owned(), -basis.column(0).into_owned()]
        } else {
            (0..opts.n_probe.max(2))
                .map(|m| {
                    let th = std::f64::consts::TAU * m as f64 / opts.n_probe.max(2) as f64;
                    basis.column(0) * th.cos() + basis.column(1) * th.sin()
                })
                .collect()
        };
        for d in dirs {
            seeds.push((i, &x + d * (0.25 * opts.eps)));
        }
    }
    let runs: Vec<Trajectory> =
        seeds.par_iter().map(|(_, y0)| integrate(field, eta, pp, y0, t_start, t_end, opts.dt)).collect::<Result<_>>()?;
    let mut edges: Vec<ConnectionEdge> = Vec::new();
    let mut unclassified = Vec::new();
    let mut classified = 0;
    let mut returns = 0;
    for (probe, ((from, _), run)) in seeds.iter().zip(runs).enumerate() {
        let offset = traces[0].index_of(t_start).expect("release time on the trace grid");
        let mut best = (usize::MAX, f64::INFINITY);
        for (j, tr) in traces.iter().enumerate() {
            let d = (trail_from..=span).map(|m| (&run.states[m] - &tr.states[offset + m]).norm()).fold(0.0, f64::max);
            if d < best.1 {
                best = (j, d);
            }
        }
        if best.1 > opts.eps {
            unclassified.push(Unclassified { from: *from, probe, nearest: best.0, distance: best.1 });
            continue;
        }
        classified += 1;
        if best.0 == *from {
            returns += 1;
            continue;
        }
        if !edges.iter().any(|e| e.from == *from && e.to == best.0) {
            edges.push(ConnectionEdge { from: *from, to: best.0, witness: run });
        }
    }
    let mut g: DiGraph<usize, ()> = DiGraph::new();
    let idx: Vec<_> = (0..p).map(|i| g.add_node(i)).collect();
    for e in &edges {
        g.add_edge(idx[e.from], idx[e.to], ());
    }
    let acyclic = !petgraph::algo::is_cyclic_directed(&g);
    Ok(ConnectionGraph { n_nodes: p, edges, acyclic, probes: seeds.len(), classified, returns, unclassified })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(v: &[f64]) -> SetCloud {
        SetCloud::from_points(v.iter().map(|x| DVector::from_element(1, *x)).collect(), 0.0, 0.0)
    }

    #[test]
    fn two_point_arithmetic() {
        let a = cloud(&[0.0]);
        let b = cloud(&[0.0, 3.0]);
        assert_eq!(hausdorff_semidist(&a, &b).unwrap(), 0.0);
        assert_eq!(hausdorff_semidist(&b, &a).unwrap(), 3.0);
        assert_eq!(hausdorff_dist(&a, &b).unwrap(), 3.0);
        assert_eq!(hausdorff_dist(&b, &b).unwrap(), 0.0);
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(matches!(hausdorff_dist(&cloud(&[]), &cloud(&[1.0])), Err(Error::EmptyCloud)));
    }

    #[test]
    fn clustering_keeps_separation() {
        let pts: Vec<DVector<f64>> = (0..1000).map(|i| DVector::from_element(1, i as f64 * 1e-3)).collect();
        let kept = cluster(&pts, 0.01);
        for i in 0..kept.len() {
            for j in (i + 1)..kept.len() {
                assert!((&kept[i] - &kept[j]).norm() >= 0.005 - 1e-12);
            }
        }
        let c = SetCloud::from_points(pts, 0.0, 0.0);
        let k = SetCloud::from_points(kept, 0.0, 0.0);
        assert!(hausdorff_dist(&c, &k).unwrap() < 0.005 + 1e-12);
    }

    #[test]
    fn lattice_edge_count() {
        assert_eq!(lattice_edges(5, 1).len(), 4);
        assert_eq!(lattice_edges(4, 2).len(), 24);
    }

    #[test]
    fn monotone_rule() {
        assert!(decreasing_within(&[1.0, 0.5, 0.55, 0.2], 0.2));
        assert!(!decreasing_within(&[1.0, 0.5, 0.7], 0.2));
        assert!(!decreasing_within(&[1.0], 0.2));
    }
}
