//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::error::Error as StdError;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use nrds_core::attractor::{
    classify_connections, continuity_sweep, decreasing_within, pullback_cloud, summarize, unstable_cloud, unstable_union_residual,
    CloudOptions, ConnectionOptions, SetCloud, SweepRow,
};
use nrds_core::cocycle::integrate;
use nrds_core::cocycle::{cocycle_defect, flow, linear_field, VectorField};
use nrds_core::conjugation::{build_rde, conjugate_state, deconjugate_state, sde_oracle, ConjugatedField, NoiseShape, SmoothMap};
use nrds_core::driver::{PathPoint, WienerPath};
use nrds_core::hyperbolic::{
    continue_hyperbolic_solution, dichotomy_estimate, find_equilibria, linearize_along, ContinuationOptions, DichotomyEstimate,
    Equilibrium, HyperbolicSolutionTrace, LinearizedProcess,
};
use nrds_core::manifold::{attraction_rate_check, graph_continuity_gap, graph_transform, sandwich_check, GraphMap, GraphOptions};
use nrds_core::waveapp::{build_wave_family, damping_bounds, energy_trace, linear_decay_split, mode_eigenvalue_error, WaveGalerkinSpec};

type Res<T> = Result<T, Box<dyn StdError>>;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Res<Verdict> {
    Ok(Verdict { passed, detail: detail.into() })
}

/// Projection defects of every dichotomy estimate produced below.
static DEFECTS: Mutex<Vec<f64>> = Mutex::new(Vec::new());

fn dichotomy(field: &dyn VectorField, eta: f64, tr: &HyperbolicSolutionTrace) -> Res<DichotomyEstimate> {
    let lp = linearize_along(field, eta, tr)?;
    let d = dichotomy_estimate(&lp, (tr.times[0], *tr.times.last().unwrap()), None)?;
    record(&d);
    Ok(d)
}

fn record(d: &DichotomyEstimate) {
    let (a, b) = d.projection_defects();
    DEFECTS.lock().unwrap().push(a.max(b));
}

fn cubic() -> ConjugatedField {
    build_rde(DMatrix::zeros(1, 1), SmoothMap::cubic(1), NoiseShape::Decaying).unwrap()
}

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn path(seed: u64, t_min: f64, t_max: f64, dt: f64) -> Res<PathPoint> {
    Ok(PathPoint::new(0.0, WienerPath::sample(seed, t_min, t_max, dt)?))
}

fn trace_at(field: &dyn VectorField, eta: f64, pp: &PathPoint, y: DVector<f64>, t_h: f64) -> Res<HyperbolicSolutionTrace> {
    let eq = Equilibrium::at(field, pp, y)?;
    let opts = ContinuationOptions { t_h: Some(t_h), ..Default::default() };
    Ok(continue_hyperbolic_solution(field, eta, pp, &eq, &opts)?)
}

fn c1_driver() -> Res<Verdict> {
    let dt = 1e-3;
    let p = WienerPath::sample(11, -40.0, 6.0, dt)?;
    // finite-difference residual of dz = -z dt + dω, trapezoidal in the drift
    let n = (10.0 / dt) as usize;
    let mut acc = 0.0;
    for i in 0..n {
        let (t0, t1) = (-5.0 + i as f64 * dt, -5.0 + (i + 1) as f64 * dt);
        let (z0, z1) = (p.z_star(t0)?, p.z_star(t1)?);
        let r = (z1 - z0) + 0.5 * (z0 + z1) * dt - (p.value(t1)? - p.value(t0)?);
        acc += r * r;
    }
    let rms = (acc / n as f64).sqrt();
    let lib = p.ou_residual_rms(-5.0, 5.0)?;
    let ramp = WienerPath::from_fn(-40.0, 1.0, 1e-4, |s| s)?;
    let z_ramp = ramp.z_star(0.0)?;
    let flow_exact = {
        let a = p.shift(1.0)?.shift(2.0)?;
        let b = p.shift(3.0)?;
        a.values() == b.values() && a.t_min() == b.t_min()
    };
    let pass = rms <= 3.0 * dt && (lib - rms).abs() <= 1e-12 + 1e-6 * rms && (z_ramp - 1.0).abs() <= 1e-8 && flow_exact;
    verdict(
        pass,
        format!(
            "OU residual RMS {rms:.3e} (library {lib:.3e}, bound {:.0e}); ramp z* {z_ramp:.10}; shift flow exact {flow_exact}",
            3.0 * dt
        ),
    )
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn ratios(errs: &[f64]) -> Vec<f64> {
    errs.windows(2).map(|w| w[0] / w[1]).collect()
}

fn c2_integrator() -> Res<Verdict> {
    let pp = PathPoint::new(0.0, WienerPath::zero(-40.0, 6.0, 1e-3)?);
    let decay = linear_field(DMatrix::from_element(1, 1, -1.0));
    let f = cubic();
    let y0 = 0.5f64;
    let t_end = 2.0f64;
    let exact_cubic = y0 * t_end.exp() / (1.0 - y0 * y0 + y0 * y0 * (2.0 * t_end).exp()).sqrt();
    let steps = [0.1, 0.05, 0.025];
    let mut lin = Vec::new();
    let mut cub = Vec::new();
    for &dt in &steps {
        lin.push((flow(&decay, 0.0, &pp, &v1(1.0), 0.0, 1.0, dt)?[0] - (-1.0f64).exp()).abs());
        cub.push((flow(&f, 0.0, &pp, &v1(y0), 0.0, t_end, dt)?[0] - exact_cubic).abs());
    }
    // leg lengths just short of multiples of the coarsest step: every leg's
    // step count doubles exactly under halving while the legs stay misaligned
    let (t, s) = (1.19, 0.69);
    let rot = linear_field(DMatrix::from_row_slice(2, 2, &[-0.3, 2.0, -2.0, -0.3]));
    let mut dc = Vec::new();
    let mut dr = Vec::new();
    for &dt in &steps {
        dc.push(cocycle_defect(&f, 0.0, &pp, &v1(y0), t, s, dt)?);
        dr.push(cocycle_defect(&rot, 0.0, &pp, &DVector::from_vec(vec![1.0, 0.0]), t, s, dt)?);
    }
    let noisy_pp = path(2, -40.0, 6.0, 0.01)?;
    let aligned = cocycle_defect(&f, 0.1, &noisy_pp, &v1(y0), 1.2, 0.7, 0.01)?;
    let all: Vec<f64> = [&lin, &cub, &dc, &dr].iter().flat_map(|e| ratios(e)).collect();
    let pass = all.iter().all(|r| (12.0..=20.0).contains(r)) && aligned <= 1e-10;
    verdict(
        pass,
        format!(
            "error ratios linear {:.2?}, cubic {:.2?}; defect ratios cubic {:.2?}, rotation {:.2?}; noisy aligned defect {aligned:.1e}",
            ratios(&lin),
            ratios(&cub),
            ratios(&dc),
            ratios(&dr)
        ),
    )
}

fn c3_conjugation() -> Res<Verdict> {
    let f = cubic();
    let eta = 0.1;
    let y0 = v1(0.5);
    let fine = 1e-4;
    let steps = [4e-3, 2e-3, 1e-3];
    let mut mean = [0.0; 3];
    let mut per_seed = Vec::new();
    for seed in 1u64..=3 {
        let pp = path(seed, -40.0, 6.0, fine)?;
        let v0 = deconjugate_state(&y0, 0.0, &pp, eta, f.shape)?;
        let reference = integrate(&f, eta, &pp, &v0, 0.0, 5.0, fine)?;
        let mut errs = [0.0; 3];
        for (k, &dt) in steps.iter().enumerate() {
            let o = sde_oracle(&f.b, &f.f, f.shape, eta, &pp, &y0, 0.0, 5.0, dt)?;
            let stride = (dt / fine).round() as usize;
            let mut sup: f64 = 0.0;
            for (i, y) in o.states.iter().enumerate() {
                let yr = conjugate_state(&reference.states[i * stride], o.times[i], &pp, eta, f.shape)?;
                sup = sup.max((y - yr).norm());
            }
            errs[k] = sup;
            mean[k] += sup / 3.0;
        }
        per_seed.push(ratios(&errs));
    }
    let r = ratios(&mean);
    let pass = r.iter().all(|x| (1.6..=2.6).contains(x));
    verdict(pass, format!("mean sup errors {}, ratios {r:.2?}; per-seed ratios {per_seed:.2?}", sci(&mean)))
}

fn c4_continuation() -> Res<Verdict> {
    let f = cubic();
    let pp = path(1, -70.0, 40.0, 0.01)?;
    let etas = [0.02, 0.04, 0.08];
    let mut lines = Vec::new();
    let mut pass = true;
    for y in [1.0, -1.0] {
        let zero = trace_at(&f, 0.0, &pp, v1(y), 20.0)?;
        dichotomy(&f, 0.0, &zero)?;
        let zero_ok = zero.sup_dist == 0.0 && zero.residual == 0.0;
        let mut q = Vec::new();
        for &eta in &etas {
            let tr = trace_at(&f, eta, &pp, v1(y), 20.0)?;
            dichotomy(&f, eta, &tr)?;
            q.push(tr.sup_dist / eta);
        }
        let spread = q.iter().copied().fold(0.0, f64::max) / q.iter().copied().fold(f64::INFINITY, f64::min);
        let a = trace_at(&f, 0.05, &pp, v1(y), 20.0)?;
        let b = trace_at(&f, 0.05, &pp.shift(1.0)?, v1(y), 20.0)?;
        let mut theta: f64 = 0.0;
        for i in 0..=1000 {
            let t = -5.0 + i as f64 * 0.01;
            theta = theta.max((b.state_at(t)? - a.state_at(t + 1.0)?).norm());
        }
        let tol = ContinuationOptions::default().tol;
        pass &= zero_ok && spread <= 2.0 && theta <= 2.0 * tol;
        lines.push(format!("y*={y}: sup_dist/eta {q:.4?} (spread {spread:.3}), eta=0 exact {zero_ok}, shift compatibility {theta:.1e}"));
    }
    verdict(pass, lines.join("; "))
}

fn c5_dichotomy() -> Res<Verdict> {
    let lp = LinearizedProcess::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])), (-10.0, 10.0), 0.01);
    let d = dichotomy_estimate(&lp, (-10.0, 10.0), None)?;
    record(&d);
    let defects = DEFECTS.lock().unwrap();
    let worst = defects.iter().copied().fold(0.0, f64::max);
    let pass = (1.0..=1.05).contains(&d.m_bound) && (0.95..=1.0).contains(&d.alpha) && worst <= 1e-8;
    verdict(pass, format!("M {:.4}, alpha {:.4}; worst projection defect over {} estimates {worst:.1e}", d.m_bound, d.alpha, defects.len()))
}

fn saddle_graph(field: &dyn VectorField, eta: f64, pp: &PathPoint, opts: &GraphOptions, t_h: f64) -> Res<GraphMap> {
    let tr = Arc::new(trace_at(field, eta, pp, DVector::zeros(field.dim()), t_h)?);
    let d = dichotomy(field, eta, &tr)?;
    Ok(graph_transform(field, eta, tr, &d, opts)?)
}

fn c6_unstable_graph() -> Res<Verdict> {
    let f = build_rde(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])), SmoothMap::quadratic_saddle(), NoiseShape::Decaying)?;
    let pp = path(1, -70.0, 40.0, 0.01)?;
    let gm = saddle_graph(&f, 0.0, &pp, &GraphOptions::default(), 20.0)?;
    let mut err: f64 = 0.0;
    for (c, sig) in gm.nodes.iter().zip(&gm.values[0]) {
        let x = &gm.basis * c;
        let expected = DVector::from_vec(vec![0.0, x[0] * x[0] / 3.0]);
        err = err.max((sig - expected).norm());
    }
    let origin = gm.origin_defect()?;
    let sm = &gm.smallness;
    let pass = err <= 5e-3 && origin <= 1e-12 && gm.l_est <= sm.lipschitz && sm.all_true();
    verdict(
        pass,
        format!(
            "max node error {err:.2e}, origin defect {origin:.1e}, L_est {:.4} vs L {:.4}, conditions {:?} (rho {:.3}, M {:.3}, alpha {:.3})",
            gm.l_est, sm.lipschitz, sm.conditions, sm.rho, sm.m_bound, sm.alpha
        ),
    )
}

fn c7_backward_bounds() -> Res<Verdict> {
    let f = cubic();
    let pp = path(1, -70.0, 40.0, 0.01)?;
    let mut lines = Vec::new();
    let mut pass = true;
    for eta in [0.0, 0.05] {
        let gm = saddle_graph(&f, eta, &pp, &GraphOptions::default(), 20.0)?;
        let sw = sandwich_check(&f, &gm, 0.2, 20, 2.0)?;
        pass &= sw.passed;
        lines.push(format!("eta {eta}: sandwich worst ratio {:.3}, escaped {}", sw.worst_ratio, sw.escaped));
        for y in [1.0, -1.0] {
            let tr = Arc::new(trace_at(&f, eta, &pp, v1(y), 20.0)?);
            let d = dichotomy(&f, eta, &tr)?;
            let anchors = (0..=20).map(|i| i as f64 * 0.25).collect();
            let opts = GraphOptions { anchors, t_back: Some(4.0), ..Default::default() };
            let gm = graph_transform(&f, eta, tr, &d, &opts)?;
            for z in [0.1, -0.1] {
                let at = attraction_rate_check(&f, &gm, &v1(z), (0.0, 5.0), 2.0)?;
                pass &= at.passed;
                lines.push(format!(
                    "eta {eta} y*={y} zeta0={z}: gamma {:.3}, worst ratio {:.3}",
                    at.fitted_gamma.unwrap_or(f64::NAN),
                    at.worst_ratio
                ));
            }
        }
    }
    verdict(pass, lines.join("; "))
}

fn c8_graph_continuity() -> Res<Verdict> {
    let f = build_rde(DMatrix::zeros(2, 2), SmoothMap::cubic_saddle(), NoiseShape::Decaying)?;
    let pp = path(1, -70.0, 40.0, 0.01)?;
    let opts = GraphOptions { anchors: vec![-2.0, 0.0, 2.0], ..Default::default() };
    let g0 = saddle_graph(&f, 0.0, &pp, &opts, 20.0)?;
    let mut gaps = Vec::new();
    for eta in [0.1, 0.05, 0.025] {
        let g = saddle_graph(&f, eta, &pp, &opts, 20.0)?;
        gaps.push(graph_continuity_gap(&g, &g0)?);
    }
    let pass = gaps.windows(2).all(|w| w[1] < w[0]);
    verdict(pass, format!("gaps {}", sci(&gaps)))
}

fn pullback_window(anchors: &[f64], t_back: f64) -> (f64, f64) {
    let lo = anchors.iter().copied().fold(0.0, f64::min);
    let hi = anchors.iter().copied().fold(0.0, f64::max);
    (lo - t_back * 256.0 - 40.0, hi + 35.0)
}

fn c9_attractor_continuity() -> Res<Verdict> {
    let f = cubic();
    let eps = 0.004;
    let anchors = [-2.0, 0.0, 2.0];
    let etas = [0.0, 0.2, 0.1, 0.05, 0.025];
    let opts = CloudOptions { eps_cluster: Some(eps), ..CloudOptions::new(vec![(-1.5, 1.5)]) };
    let (lo, hi) = pullback_window(&anchors, opts.t_back);
    let mut rows: Vec<SweepRow> = Vec::new();
    let mut self_ok = true;
    let mut span_ok = true;
    let mut converged = true;
    let mut extents = Vec::new();
    for seed in 1u64..=3 {
        let pp = path(seed, lo, hi, opts.dt)?;
        let table = continuity_sweep(&f, &pp, &etas, &anchors, &opts)?;
        converged &= table.all_converged;
        let (a, b) = table.reference.extent(0);
        span_ok &= (a + 1.0).abs() <= 0.02 && (b - 1.0).abs() <= 0.02;
        extents.push((a, b));
        for r in &table.rows {
            if r.eta == 0.0 {
                self_ok &= r.d_h <= eps;
            } else {
                rows.push(r.clone());
            }
        }
    }
    let mut pooled = summarize(&rows);
    pooled.sort_by(|a, b| b.eta.total_cmp(&a.eta));
    let up: Vec<f64> = pooled.iter().map(|p| p.max_upper).collect();
    let low: Vec<f64> = pooled.iter().map(|p| p.max_lower).collect();
    let pass = converged && span_ok && self_ok && decreasing_within(&up, 0.2) && decreasing_within(&low, 0.2);
    verdict(
        pass,
        format!(
            "reference extents {extents:.4?}; upper {}; lower {}; eta=0 self rows within eps {self_ok}; converged {converged}",
            sci(&up),
            sci(&low)
        ),
    )
}

struct Structure {
    residual: f64,
    edges: std::collections::BTreeSet<(usize, usize)>,
    acyclic: bool,
    rate: f64,
}

fn structure(field: &dyn VectorField, eta: f64, pp: &PathPoint, bbox: Vec<(f64, f64)>, grid_n: usize, eps: f64) -> Res<Structure> {
    let dt = 0.01;
    let t_flow = 8.0;
    let opts = CloudOptions { grid_n, eps_cluster: Some(eps), dt, ..CloudOptions::new(bbox.clone()) };
    let cloud = pullback_cloud(field, eta, pp, &opts)?.cloud;
    let eqs = find_equilibria(field, pp, &bbox, 41usize.pow(bbox.len() as u32))?;
    let mut traces = Vec::new();
    let mut us = Vec::new();
    for eq in &eqs {
        let tr =
            Arc::new(continue_hyperbolic_solution(field, eta, pp, eq, &ContinuationOptions { t_h: Some(20.0), dt, ..Default::default() })?);
        let d = dichotomy(field, eta, &tr)?;
        if d.unstable_dim == 0 {
            us.push(SetCloud::from_points(vec![tr.state_at(0.0)?], 0.0, eta));
        } else {
            let go = GraphOptions { anchors: vec![-t_flow], t_back: Some(t_flow), ..Default::default() };
            let gm = graph_transform(field, eta, tr.clone(), &d, &go)?;
            us.push(unstable_cloud(field, &gm, 0.0, t_flow, eps, dt)?);
        }
        traces.push((*tr).clone());
    }
    let res = unstable_union_residual(&cloud, &us)?;
    let g = classify_connections(field, eta, pp, &traces, &ConnectionOptions { eps, dt, ..Default::default() })?;
    Ok(Structure { residual: res.residual, edges: g.edge_set(), acyclic: g.acyclic, rate: g.classification_rate() })
}

fn c10_structure() -> Res<Verdict> {
    let (lo, hi) = pullback_window(&[0.0], 10.0);
    let mut lines = Vec::new();
    let mut pass = true;
    let f = cubic();
    let pp = path(1, lo, hi, 0.01)?;
    let mut graphs = Vec::new();
    for eta in [0.0, 0.05] {
        let s = structure(&f, eta, &pp, vec![(-1.5, 1.5)], 41, 0.01)?;
        pass &= s.residual <= 0.02 && s.acyclic && s.rate == 1.0;
        lines.push(format!("cubic eta {eta}: union residual {:.3e}, edges {:?}, acyclic {}", s.residual, s.edges, s.acyclic));
        graphs.push(s.edges);
    }
    pass &= graphs[0] == graphs[1];
    let g = build_rde(DMatrix::zeros(2, 2), SmoothMap::double_well(), NoiseShape::Decaying)?;
    let pp = path(3, lo, hi, 0.01)?;
    let s = structure(&g, 0.0, &pp, vec![(-1.5, 1.5), (-1.5, 1.5)], 21, 0.03)?;
    pass &= s.residual <= 0.06 && s.acyclic;
    lines.push(format!("double well eta 0: union residual {:.3e}, edges {:?}, acyclic {}", s.residual, s.edges, s.acyclic));
    verdict(pass, lines.join("; "))
}

fn c11_wave() -> Res<Verdict> {
    let sys = build_wave_family(WaveGalerkinSpec::new(8, 1.0))?;
    let beta = sys.spec.beta;
    let dt = 0.01;
    let t_end = 30.0;
    let pp = path(1, -t_end - 50.0, t_end + 15.0, dt)?;
    let mode_err = mode_eigenvalue_error(&sys);
    let y0 = sys.project_state(|x| 1.2 * x.sin() + 0.4 * (3.0 * x).sin(), |x| 0.5 * (2.0 * x).sin());
    let et = energy_trace(&sys, 0.0, &pp, &y0, 20.0, dt)?;
    let probes = vec![sys.project_state(|x| 0.8 * x.sin(), |_| 0.0), sys.project_state(|x| 0.3 * (2.0 * x).sin(), |x| 0.2 * x.sin())];
    let r0 = linear_decay_split(&sys, 0.0, &pp, t_end, dt, &probes, 2.0)?;
    let r1 = linear_decay_split(&sys, 0.1, &pp, t_end, dt, &probes, 2.0)?;
    let b = damping_bounds(&sys, 0.1, &pp, (-t_end, t_end), dt)?;
    let pass = et.max_increase <= 1e-8
        && mode_err <= 1e-10
        && r0.alpha > 0.0
        && (r0.alpha - r0.predicted_alpha).abs() <= 0.15 * r0.predicted_alpha
        && r1.alpha >= 0.95 * r0.alpha
        && b.b0 >= beta;
    verdict(
        pass,
        format!(
            "energy max step increase {:.2e}; mode error {mode_err:.1e}; alpha(0) {:.4} vs {:.4}; alpha(0.1) {:.4}; damping [{:.4}, {:.4}]",
            et.max_increase, r0.alpha, r0.predicted_alpha, r1.alpha, b.b0, b.b1
        ),
    )
}

const PASSING: &str = r#"
scenario = "cubic1d"
etas = [0.0, 0.1]
seeds = [4]
checks = ["driver", "attractor"]
numeric.dt = 0.01
numeric.T_back = 10.0
numeric.T_h = 20.0
numeric.eps_cluster = 0.01
numeric.grid_n = 41
"#;

const FAILING: &str = r#"
scenario = "cubic1d"
etas = [0.0]
seeds = [1]
checks = ["attractor"]
numeric.dt = 0.01
numeric.T_back = 0.01
numeric.T_h = 20.0
numeric.eps_cluster = 0.01
numeric.grid_n = 41
"#;

fn run_cli(config: &str, dir: &Path) -> Res<(i32, BTreeMap<String, Vec<u8>>)> {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config)?;
    let out = dir.join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_nrds")).arg("run").arg(&cfg).arg("--out-dir").arg(&out).output()?.status;
    let mut csvs = BTreeMap::new();
    let mut stack = vec![out.clone()];
    while let Some(d) = stack.pop() {
        if !d.is_dir() {
            continue;
        }
        for e in std::fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                csvs.insert(p.strip_prefix(&out)?.display().to_string(), std::fs::read(&p)?);
            }
        }
    }
    Ok((status.code().unwrap_or(-1), csvs))
}

fn c12_cli() -> Res<Verdict> {
    let (a, b, c) = (tempfile::tempdir()?, tempfile::tempdir()?, tempfile::tempdir()?);
    let (code_a, csv_a) = run_cli(PASSING, a.path())?;
    let (code_b, csv_b) = run_cli(PASSING, b.path())?;
    let (code_c, _) = run_cli(FAILING, c.path())?;
    let identical = !csv_a.is_empty() && csv_a == csv_b;
    let pass = identical && code_a == 0 && code_b == 0 && code_c == 2;
    verdict(
        pass,
        format!(
            "{} CSV files byte-identical across runs: {identical}; exit codes {code_a}, {code_b} (passing), {code_c} (failing)",
            csv_a.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Res<Verdict>); 12] = [
        ("driver", c1_driver),
        ("integrator order", c2_integrator),
        ("conjugation", c3_conjugation),
        ("hyperbolic continuation", c4_continuation),
        ("dichotomy fits", c5_dichotomy),
        ("unstable graph", c6_unstable_graph),
        ("backward bounds", c7_backward_bounds),
        ("graph continuity", c8_graph_continuity),
        ("attractor continuity", c9_attractor_continuity),
        ("structure", c10_structure),
        ("wave", c11_wave),
        ("cli determinism", c12_cli),
    ];
    // the dichotomy criterion audits every estimate, so it runs last
    let order = [0, 1, 2, 3, 5, 6, 7, 8, 9, 10, 11, 4];
    let mut results: Vec<Option<(Verdict, f64)>> = (0..12).map(|_| None).collect();
    for &i in &order {
        let start = Instant::now();
        let v = criteria[i].1().unwrap_or_else(|e| Verdict { passed: false, detail: format!("error: {e}") });
        results[i] = Some((v, start.elapsed().as_secs_f64()));
    }
    let mut failed = 0;
    for (i, r) in results.into_iter().enumerate() {
        let (v, secs) = r.unwrap();
        if !v.passed {
            failed += 1;
        }
        println!("{} {:>2} {}: {} ({secs:.1} s)", if v.passed { "PASS" } else { "FAIL" }, i + 1, criteria[i].0, v.detail);
    }
    println!("{} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
