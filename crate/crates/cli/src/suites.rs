//! Check suites. Each suite computes its per-(seed, η) cells in parallel and
//! returns an outcome plus the artifacts to write; files are written by the caller.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::json;

use nrds_core::attractor::{
    classify_connections, continuity_sweep, decreasing_within, invariance_defect, pullback_cloud, summarize, unstable_cloud,
    unstable_union_residual, CloudOptions, ConnectionOptions, SetCloud, SweepRow, SweepTable,
};
use nrds_core::cocycle::{integrate, VectorField};
use nrds_core::conjugation::{
    build_rde, conjugate_state, deconjugate_state, m1_m2_saturation, sde_oracle, ConjugatedField, NoiseShape, SmoothMap,
};
use nrds_core::driver::{PathPoint, WienerPath};
use nrds_core::hyperbolic::{
    continue_hyperbolic_solution, dichotomy_estimate, find_equilibria, linearize_along, ContinuationOptions, DichotomyEstimate,
    Equilibrium, HyperbolicSolutionTrace,
};
use nrds_core::manifold::{graph_transform, GraphOptions};
use nrds_core::waveapp::{
    build_wave_family, damping_bounds, energy_trace, growth_check, linear_decay_split, mode_eigenvalue_error, ScalarNonlinearity,
    WaveGalerkinSpec, WaveSystem,
};
use nrds_core::Error;

use crate::config::{Check, ExperimentConfig, Scenario};

/// Horizon over which local unstable graphs are pushed forward.
const T_FLOW: f64 = 8.0;
const MAX_DOUBLINGS: usize = 8;

pub struct Artifact {
    pub path: String,
    pub bytes: Vec<u8>,
}

pub struct CheckOutcome {
    pub check: Check,
    pub passed: bool,
    pub summary: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

/// Errors that mean a check failed rather than that the run broke.
fn is_check_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::Diverged { .. }
            | Error::NoGap { .. }
            | Error::FitFailure(_)
            | Error::NoContraction { .. }
            | Error::SmallnessViolated(_)
            | Error::TubeEscape { .. }
            | Error::NotAbsorbing(_)
            | Error::WindowTooShort { .. }
    )
}

type CellResult<T> = std::result::Result<T, String>;

fn soften<T>(r: nrds_core::Result<T>) -> nrds_core::Result<CellResult<T>> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(e) if is_check_failure(&e) => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    }
}

fn csv_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

fn states_header(prefix: &str, dim: usize) -> String {
    (1..=dim).map(|k| format!(",{prefix}_{k}")).collect()
}

struct Model {
    field: Option<ConjugatedField>,
    wave: Option<WaveSystem>,
    bbox: Vec<(f64, f64)>,
}

impl Model {
    fn new(cfg: &ExperimentConfig) -> nrds_core::Result<Self> {
        Ok(match cfg.scenario {
            Scenario::Cubic1d => Model {
                field: Some(build_rde(DMatrix::zeros(1, 1), SmoothMap::cubic(1), NoiseShape::Decaying)?),
                wave: None,
                bbox: vec![(-1.5, 1.5)],
            },
            Scenario::Gradient2d => Model {
                field: Some(build_rde(DMatrix::zeros(2, 2), SmoothMap::double_well(), NoiseShape::Decaying)?),
                wave: None,
                bbox: vec![(-1.5, 1.5), (-1.5, 1.5)],
            },
            Scenario::Wave => {
                let spec = WaveGalerkinSpec::new(cfg.numeric.n_modes, cfg.beta).with_f(ScalarNonlinearity::cubic(cfg.mu));
                Model { field: None, wave: Some(build_wave_family(spec)?), bbox: vec![] }
            }
        })
    }

    fn field(&self) -> &ConjugatedField {
        self.field.as_ref().expect("finite-dimensional scenario")
    }
}

/// Shared state across suites so later suites reuse earlier results.
pub struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    model: Model,
    paths: Vec<PathPoint>,
    equilibria: Option<Vec<Equilibrium>>,
    traces: HashMap<(usize, usize), CellResult<Vec<Arc<HyperbolicSolutionTrace>>>>,
    sweeps: Option<Vec<CellResult<SweepTable>>>,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> nrds_core::Result<Self> {
        let model = Model::new(cfg)?;
        let lo = cfg.t_anchors.iter().copied().fold(0.0, f64::min);
        let hi = cfg.t_anchors.iter().copied().fold(0.0, f64::max);
        let back = (cfg.numeric.t_back * 2f64.powi(MAX_DOUBLINGS as i32)).max(cfg.numeric.t_h + T_FLOW);
        let t_min = lo - back - nrds_core::driver::DEFAULT_T_TRUNC - 10.0;
        let t_max = hi + cfg.numeric.t_h.max(20.0) + 15.0;
        let paths = cfg
            .seeds
            .iter()
            .map(|&s| Ok(PathPoint::new(0.0, WienerPath::sample(s, t_min, t_max, cfg.numeric.dt)?)))
            .collect::<nrds_core::Result<_>>()?;
        Ok(Runner { cfg, model, paths, equilibria: None, traces: HashMap::new(), sweeps: None })
    }

    pub fn run(&mut self, check: Check) -> nrds_core::Result<CheckOutcome> {
        match check {
            Check::Driver => self.driver(),
            Check::Conjugation => self.conjugation(),
            Check::Hyperbolic => self.hyperbolic(),
            Check::Manifold => self.manifold(),
            Check::Attractor => self.attractor(),
            Check::Continuity => self.continuity(),
            Check::Gradient => self.gradient(),
            Check::Wave => self.wave(),
        }
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        (0..self.cfg.seeds.len()).flat_map(|s| (0..self.cfg.etas.len()).map(move |e| (s, e))).collect()
    }

    fn tag(&self, s: usize, e: usize) -> String {
        format!("seed{}_eta{}", self.cfg.seeds[s], self.cfg.etas[e])
    }

    fn driver(&mut self) -> nrds_core::Result<CheckOutcome> {
        let dt = self.cfg.numeric.dt;
        let lo = self.cfg.t_anchors.iter().copied().fold(0.0, f64::min) - 5.0;
        let hi = self.cfg.t_anchors.iter().copied().fold(0.0, f64::max) + 5.0;
        let mut passed = true;
        let mut summary = Vec::new();
        let mut artifacts = Vec::new();
        for (s, pp) in self.paths.iter().enumerate() {
            let path = &pp.path;
            let rms = path.ou_residual_rms(lo, hi)?;
            let composed = path.shift(1.0)?.shift(2.0)?;
            let direct = path.shift(3.0)?;
            let flow_exact = composed.values() == direct.values() && composed.t_min() == direct.t_min();
            let ok = rms <= 3.0 * dt && flow_exact;
            passed &= ok;
            summary.push(format!(
                "seed {}: OU residual RMS {rms:.3e} (bound {:.1e}), shift flow exact: {flow_exact}",
                self.cfg.seeds[s],
                3.0 * dt
            ));
            let mut csv = String::from("t,omega,z_star\n");
            let every = ((0.1 / dt).round() as usize).max(1);
            let n = ((hi - lo) / dt).round() as usize;
            for i in (0..=n).step_by(every) {
                let t = lo + i as f64 * dt;
                csv_row(&mut csv, [t, path.value(t)?, path.z_star(t)?]);
            }
            artifacts.push(Artifact { path: format!("driver/seed{}_ou.csv", self.cfg.seeds[s]), bytes: csv.into_bytes() });
            let report = path.sublinear_report(&self.cfg.t_anchors)?;
            let mut csv = String::from("t,ratio\n");
            for (t, r) in report {
                csv_row(&mut csv, [t, r]);
            }
            artifacts.push(Artifact { path: format!("driver/seed{}_sublinear.csv", self.cfg.seeds[s]), bytes: csv.into_bytes() });
        }
        Ok(CheckOutcome { check: Check::Driver, passed, summary, artifacts })
    }

    fn conjugation(&mut self) -> nrds_core::Result<CheckOutcome> {
        let f = self.model.field();
        let dt = self.cfg.numeric.dt;
        let d = f.dim();
        let y0 = DVector::from_element(d, 0.5);
        let cells: Vec<(usize, usize)> = self.cells().into_iter().filter(|&(_, e)| self.cfg.etas[e] > 0.0).collect();
        let results: Vec<nrds_core::Result<(String, bool, Artifact)>> = cells
            .par_iter()
            .map(|&(s, e)| {
                let eta = self.cfg.etas[e];
                let pp = &self.paths[s];
                let oracle = sde_oracle(&f.b, &f.f, f.shape, eta, pp, &y0, 0.0, 5.0, dt)?;
                let v0 = deconjugate_state(&y0, 0.0, pp, eta, f.shape)?;
                let rde = integrate(f, eta, pp, &v0, 0.0, 5.0, dt)?;
                let mut sup: f64 = 0.0;
                let mut roundtrip: f64 = 0.0;
                let mut csv = format!("t{}{}\n", states_header("y_sde", d), states_header("y_rde", d));
                for ((t, ys), v) in oracle.times.iter().zip(&oracle.states).zip(&rde.states) {
                    let y = conjugate_state(v, *t, pp, eta, f.shape)?;
                    let back = deconjugate_state(&y, *t, pp, eta, f.shape)?;
                    roundtrip = roundtrip.max((back - v).norm() / v.norm().max(1.0));
                    sup = sup.max((&y - ys).norm());
                    csv_row(&mut csv, std::iter::once(*t).chain(ys.iter().copied()).chain(y.iter().copied()));
                }
                let ok = sup <= 0.1 && roundtrip <= 1e-12;
                let line = format!("{}: sup |SDE - conjugated RDE| on [0,5] = {sup:.3e}, round trip {roundtrip:.1e}", self.tag(s, e));
                Ok((line, ok, Artifact { path: format!("conjugation/{}.csv", self.tag(s, e)), bytes: csv.into_bytes() }))
            })
            .collect();
        let mut passed = true;
        let mut summary = Vec::new();
        let mut artifacts = Vec::new();
        for r in results {
            let (line, ok, art) = r?;
            passed &= ok;
            summary.push(line);
            artifacts.push(art);
        }
        for (s, pp) in self.paths.iter().enumerate() {
            let sat = m1_m2_saturation(f.shape, pp, &[5.0, 10.0, 20.0], 20)?;
            summary.push(format!(
                "seed {}: m1 {:.4} m2 {:.4} over the widest window, saturated: {}",
                self.cfg.seeds[s],
                sat.m1.last().copied().unwrap_or(f64::NAN),
                sat.m2.last().copied().unwrap_or(f64::NAN),
                sat.saturated
            ));
        }
        if cells.is_empty() {
            summary.push("no positive noise amplitude: nothing to compare".into());
        }
        Ok(CheckOutcome { check: Check::Conjugation, passed, summary, artifacts })
    }

    fn equilibria(&mut self) -> nrds_core::Result<Vec<Equilibrium>> {
        if self.equilibria.is_none() {
            let d = self.model.bbox.len();
            let eqs = find_equilibria(self.model.field(), &self.paths[0], &self.model.bbox, 41usize.pow(d as u32))?;
            self.equilibria = Some(eqs);
        }
        Ok(self.equilibria.clone().expect("set above"))
    }

    fn ensure_traces(&mut self) -> nrds_core::Result<()> {
        let eqs = self.equilibria()?;
        let missing: Vec<(usize, usize)> = self.cells().into_iter().filter(|c| !self.traces.contains_key(c)).collect();
        let opts = ContinuationOptions { t_h: Some(self.cfg.numeric.t_h), dt: self.cfg.numeric.dt, ..Default::default() };
        let f = self.model.field();
        let computed: Vec<nrds_core::Result<CellResult<Vec<Arc<HyperbolicSolutionTrace>>>>> = missing
            .par_iter()
            .map(|&(s, e)| {
                let eta = self.cfg.etas[e];
                soften(
                    eqs.iter()
                        .map(|eq| Ok(Arc::new(continue_hyperbolic_solution(f, eta, &self.paths[s], eq, &opts)?)))
                        .collect::<nrds_core::Result<Vec<_>>>(),
                )
            })
            .collect();
        for (c, r) in missing.into_iter().zip(computed) {
            self.traces.insert(c, r?);
        }
        Ok(())
    }

    fn dichotomy(&self, eta: f64, tr: &HyperbolicSolutionTrace) -> nrds_core::Result<DichotomyEstimate> {
        let lp = linearize_along(self.model.field(), eta, tr)?;
        dichotomy_estimate(&lp, (tr.times[0], *tr.times.last().expect("nonempty trace")), None)
    }

    fn hyperbolic(&mut self) -> nrds_core::Result<CheckOutcome> {
        let eqs = self.equilibria()?;
        let mut passed = !eqs.is_empty();
        let mut summary = Vec::new();
        let mut artifacts = Vec::new();
        let mut csv = String::from("index,hyperbolic,unstable_dim,gap,residual");
        csv.push_str(&states_header("y", self.model.bbox.len()));
        csv.push('\n');
        for (i, eq) in eqs.iter().enumerate() {
            passed &= eq.is_hyperbolic();
            let _ = write!(csv, "{i},{},{},{},{}", eq.is_hyperbolic(), eq.unstable_dim, eq.gap, eq.residual);
            for v in eq.y_star.iter() {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
            summary.push(format!("equilibrium {i} at {:?}: unstable dim {}, gap {:.3}", eq.y_star.as_slice(), eq.unstable_dim, eq.gap));
        }
        artifacts.push(Artifact { path: "hyperbolic/equilibria.csv".into(), bytes: csv.into_bytes() });
        self.ensure_traces()?;
        let cells = self.cells();
        let results: Vec<nrds_core::Result<(Vec<String>, bool, Vec<Artifact>)>> = cells
            .par_iter()
            .map(|&(s, e)| {
                let eta = self.cfg.etas[e];
                let traces = match &self.traces[&(s, e)] {
                    Ok(t) => t,
                    Err(msg) => return Ok((vec![format!("{}: continuation failed: {msg}", self.tag(s, e))], false, vec![])),
                };
                let mut lines = Vec::new();
                let mut ok = true;
                let mut arts = Vec::new();
                let mut reports = Vec::new();
                for (i, tr) in traces.iter().enumerate() {
                    let dich = match soften(self.dichotomy(eta, tr))? {
                        Ok(d) => d,
                        Err(msg) => {
                            ok = false;
                            lines.push(format!("{} solution {i}: dichotomy fit failed: {msg}", self.tag(s, e)));
                            continue;
                        }
                    };
                    let (du, ds) = dich.projection_defects();
                    let cell_ok = tr.residual <= 1e-8 && du.max(ds) <= 1e-8;
                    ok &= cell_ok;
                    lines.push(format!(
                        "{} solution {i}: residual {:.2e}, sup distance {:.3e}, M {:.3}, alpha {:.3}, projection defect {:.1e}",
                        self.tag(s, e),
                        tr.residual,
                        tr.sup_dist,
                        dich.m_bound,
                        dich.alpha,
                        du.max(ds)
                    ));
                    reports.push(json!({ "solution": i, "residual": tr.residual, "sup_dist": tr.sup_dist, "dichotomy": dich.report() }));
                    let mut buf = Vec::new();
                    tr.write_csv(&mut buf)?;
                    arts.push(Artifact { path: format!("hyperbolic/{}_sol{i}.csv", self.tag(s, e)), bytes: buf });
                }
                let js = serde_json::to_vec_pretty(&reports).expect("serializable report");
                arts.push(Artifact { path: format!("hyperbolic/{}_dichotomy.json", self.tag(s, e)), bytes: js });
                Ok((lines, ok, arts))
            })
            .collect();
        for r in results {
            let (lines, ok, arts) = r?;
            passed &= ok;
            summary.extend(lines);
            artifacts.extend(arts);
        }
        Ok(CheckOutcome { check: Check::Hyperbolic, passed, summary, artifacts })
    }

    fn manifold(&mut self) -> nrds_core::Result<CheckOutcome> {
        self.ensure_traces()?;
        let cells = self.cells();
        let results: Vec<nrds_core::Result<(Vec<String>, bool, Vec<Artifact>)>> = cells
            .par_iter()
            .map(|&(s, e)| {
                let eta = self.cfg.etas[e];
                let traces = match &self.traces[&(s, e)] {
                    Ok(t) => t,
                    Err(msg) => return Ok((vec![format!("{}: continuation failed: {msg}", self.tag(s, e))], false, vec![])),
                };
                let mut lines = Vec::new();
                let mut ok = true;
                let mut arts = Vec::new();
                for (i, tr) in traces.iter().enumerate() {
                    let built = soften(self.dichotomy(eta, tr).and_then(|d| {
                        if d.unstable_dim == 0 {
                            return Ok(None);
                        }
                        graph_transform(self.model.field(), eta, tr.clone(), &d, &GraphOptions::default()).map(Some)
                    }))?;
                    match built {
                        Ok(None) => {}
                        Ok(Some(gm)) => {
                            let origin = gm.origin_defect()?;
                            let sm = &gm.smallness;
                            let cell_ok = sm.all_true() && origin <= 1e-10 && gm.l_est <= sm.lipschitz * (1.0 + 1e-9);
                            ok &= cell_ok;
                            lines.push(format!(
                                "{} solution {i}: licensed radius {}, rho {:.3}, M {:.3}, alpha {:.3}, L {:.3}, L_est {:.3}, conditions {:?}, origin defect {:.1e}",
                                self.tag(s, e),
                                gm.licensed_radius,
                                sm.rho,
                                sm.m_bound,
                                sm.alpha,
                                sm.lipschitz,
                                gm.l_est,
                                sm.conditions,
                                origin
                            ));
                            let mut buf = Vec::new();
                            gm.write_csv(&mut buf)?;
                            arts.push(Artifact { path: format!("manifold/{}_sol{i}_graph.csv", self.tag(s, e)), bytes: buf });
                        }
                        Err(msg) => {
                            ok = false;
                            lines.push(format!("{} solution {i}: graph construction failed: {msg}", self.tag(s, e)));
                        }
                    }
                }
                Ok((lines, ok, arts))
            })
            .collect();
        let mut passed = true;
        let mut summary = Vec::new();
        let mut artifacts = Vec::new();
        for r in results {
            let (lines, ok, arts) = r?;
            passed &= ok;
            summary.extend(lines);
            artifacts.extend(arts);
        }
        Ok(CheckOutcome { check: Check::Manifold, passed, summary, artifacts })
    }

    fn cloud_options(&self, t_anchor: f64) -> CloudOptions {
        CloudOptions {
            t_back: self.cfg.numeric.t_back,
            grid_n: self.cfg.numeric.grid_n,
            t_anchor,
            eps_cluster: Some(self.cfg.numeric.eps_cluster),
            dt: self.cfg.numeric.dt,
            max_doublings: MAX_DOUBLINGS,
            ..CloudOptions::new(self.model.bbox.clone())
        }
    }

    fn ensure_sweeps(&mut self) -> nrds_core::Result<()> {
        if self.sweeps.is_some() {
            return Ok(());
        }
        let opts = self.cloud_options(self.cfg.t_anchors[0]);
        let sweeps: Vec<nrds_core::Result<CellResult<SweepTable>>> = self
            .paths
            .par_iter()
            .map(|pp| soften(continuity_sweep(self.model.field(), pp, &self.cfg.etas, &self.cfg.t_anchors, &opts)))
            .collect();
        self.sweeps = Some(sweeps.into_iter().collect::<nrds_core::Result<_>>()?);
        Ok(())
    }

    fn attractor(&mut self) -> nrds_core::Result<CheckOutcome> {
        self.ensure_sweeps()?;
        let eps = self.cfg.numeric.eps_cluster;
        let f = self.model.field();
        let sweeps = self.sweeps.as_ref().expect("computed above");
        let mut passed = true;
        let mut summary = Vec::new();
        let mut artifacts = Vec::new();
        for (s, sweep) in sweeps.iter().enumerate() {
            let seed = self.cfg.seeds[s];
            let table = match sweep {
                Ok(t) => t,
                Err(msg) => {
                    passed = false;
                    summary.push(format!("seed {seed}: pullback failed: {msg}"));
                    continue;
                }
            };
            if !table.all_converged {
                passed = false;
                summary.push(format!("seed {seed}: pullback clouds did not converge within {MAX_DOUBLINGS} horizon doublings"));
            }
            for r in table.rows.iter().filter(|r| r.eta == 0.0) {
                let ok = r.upper <= eps && r.lower <= eps;
                passed &= ok;
                summary.push(format!(
                    "seed {seed} eta 0 anchor {}: self-comparison {:.3e} / {:.3e} (eps {eps})",
                    r.t_anchor, r.upper, r.lower
                ));
            }
            // invariance from the first anchor one time unit forward
            let t0 = self.cfg.t_anchors[0];
            let pp = &self.paths[s];
            for (e, &eta) in self.cfg.etas.iter().enumerate() {
                let src = &table.clouds[e * self.cfg.t_anchors.len()];
                let target = soften(pullback_cloud(f, eta, pp, &self.cloud_options(t0 + 1.0)))?;
                match target {
                    Ok(tg) => {
                        let defect = invariance_defect(f, eta, pp, src, &tg.cloud, self.cfg.numeric.dt)?;
                        let ok = defect <= 2.0 * eps;
                        passed &= ok;
                        summary.push(format!(
                            "seed {seed} eta {eta}: invariance defect over [{t0}, {}] = {defect:.3e} (bound {})",
                            t0 + 1.0,
                            2.0 * eps
                        ));
                    }
                    Err(msg) => {
                        passed = false;
                        summary.push(format!("seed {seed} eta {eta}: invariance target failed: {msg}"));
                    }
                }
            }
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            artifacts.push(Artifact { path: format!("attractor/seed{seed}_sweep.csv"), bytes: buf });
            let dim = self.model.bbox.len();
            let mut buf = format!("{}\n", SetCloud::csv_header(dim)).into_bytes();
            table.reference.write_csv_rows(&mut buf)?;
            artifacts.push(Artifact { path: format!("attractor/seed{seed}_reference_cloud.csv"), bytes: buf });
            let mut buf = format!("{}\n", SetCloud::csv_header(dim)).into_bytes();
            for c in &table.clouds {
                c.write_csv_rows(&mut buf)?;
            }
            artifacts.push(Artifact { path: format!("attractor/seed{seed}_clouds.csv"), bytes: buf });
            summary.push(format!(
                "seed {seed}: {} sweep rows, reference cloud of {} points",
                table.rows.len(),
                table.reference.points.len()
            ));
        }
        Ok(CheckOutcome { check: Check::Attractor, passed, summary, artifacts })
    }

    fn continuity(&mut self) -> nrds_core::Result<CheckOutcome> {
        self.ensure_sweeps()?;
        let sweeps = self.sweeps.as_ref().expect("computed above");
        let mut rows: Vec<SweepRow> = Vec::new();
        let mut summary = Vec::new();
        let mut passed = true;
        for (s, sw) in sweeps.iter().enumerate() {
            match sw {
                Ok(t) => rows.extend(t.rows.iter().filter(|r| r.eta > 0.0).cloned()),
                Err(msg) => {
                    passed = false;
                    summary.push(format!("seed {}: pullback failed: {msg}", self.cfg.seeds[s]));
                }
            }
        }
        let mut pooled = summarize(&rows);
        pooled.sort_by(|a, b| b.eta.total_cmp(&a.eta));
        let col = |f: fn(&nrds_core::attractor::SweepSummary) -> f64| pooled.iter().map(f).collect::<Vec<f64>>();
        let dh = decreasing_within(&col(|p| p.max_d_h), 0.2);
        let up = decreasing_within(&col(|p| p.max_upper), 0.2);
        let lo = decreasing_within(&col(|p| p.max_lower), 0.2);
        passed &= dh;
        let mut csv = String::from("eta,max_upper,max_lower,max_dH\n");
        for p in &pooled {
            csv_row(&mut csv, [p.eta, p.max_upper, p.max_lower, p.max_d_h]);
            summary.push(format!("eta {}: max upper {:.4e}, max lower {:.4e}, max dH {:.4e}", p.eta, p.max_upper, p.max_lower, p.max_d_h));
        }
        summary.push(format!("max dH decreasing: {dh} (upper column: {up}, lower column: {lo})"));
        Ok(CheckOutcome {
            check: Check::Continuity,
            passed,
            summary,
            artifacts: vec![Artifact { path: "continuity/summary.csv".into(), bytes: csv.into_bytes() }],
        })
    }

    fn gradient(&mut self) -> nrds_core::Result<CheckOutcome> {
        self.ensure_traces()?;
        self.ensure_sweeps()?;
        let eps = self.cfg.numeric.eps_cluster;
        let dt = self.cfg.numeric.dt;
        let t0 = self.cfg.t_anchors[0];
        let f = self.model.field();
        let cells = self.cells();
        let n_anchor = self.cfg.t_anchors.len();
        type GradCell = (f64, f64, BTreeSet<(usize, usize)>, bool, f64, serde_json::Value);
        let results: Vec<nrds_core::Result<CellResult<GradCell>>> = cells
            .par_iter()
            .map(|&(s, e)| {
                let eta = self.cfg.etas[e];
                let pp = &self.paths[s];
                let traces = match &self.traces[&(s, e)] {
                    Ok(t) => t,
                    Err(msg) => return Ok(Err(format!("continuation failed: {msg}"))),
                };
                let cloud = match &self.sweeps.as_ref().expect("computed")[s] {
                    Ok(t) => &t.clouds[e * n_anchor],
                    Err(msg) => return Ok(Err(format!("pullback failed: {msg}"))),
                };
                let computed = soften((|| {
                    let mut us = Vec::new();
                    for tr in traces {
                        let d = self.dichotomy(eta, tr)?;
                        if d.unstable_dim == 0 {
                            us.push(SetCloud::from_points(vec![tr.state_at(t0)?], t0, eta));
                            continue;
                        }
                        let opts = GraphOptions { anchors: vec![t0 - T_FLOW], t_back: Some(T_FLOW), ..Default::default() };
                        let gm = graph_transform(f, eta, tr.clone(), &d, &opts)?;
                        us.push(unstable_cloud(f, &gm, t0, T_FLOW, eps, dt)?);
                    }
                    let res = unstable_union_residual(cloud, &us)?;
                    let plain: Vec<HyperbolicSolutionTrace> = traces.iter().map(|t| (**t).clone()).collect();
                    let g = classify_connections(f, eta, pp, &plain, &ConnectionOptions { eps, dt, ..Default::default() })?;
                    let nodes: Vec<Vec<f64>> =
                        plain.iter().map(|t| t.state_at(t0).map(|v| v.iter().copied().collect())).collect::<nrds_core::Result<_>>()?;
                    let js = json!({
                        "eta": eta,
                        "seed": self.cfg.seeds[s],
                        "t_anchor": t0,
                        "nodes": nodes,
                        "adjacency": g.adjacency(),
                        "acyclic": g.acyclic,
                        "probes": g.probes,
                        "classified": g.classified,
                        "returns": g.returns,
                        "unclassified": g.unclassified,
                        "union_residual": res.residual,
                        "union_reverse": res.reverse,
                    });
                    Ok((res.residual, res.reverse, g.edge_set(), g.acyclic, g.classification_rate(), js))
                })())?;
                Ok(computed)
            })
            .collect();
        let mut passed = true;
        let mut summary = Vec::new();
        let mut artifacts = Vec::new();
        let mut reference: HashMap<usize, BTreeSet<(usize, usize)>> = HashMap::new();
        let mut csv = String::from("seed,eta,union_residual,union_reverse,edges,acyclic,classified\n");
        for (&(s, e), r) in cells.iter().zip(results) {
            let tag = self.tag(s, e);
            match r? {
                Err(msg) => {
                    passed = false;
                    summary.push(format!("{tag}: {msg}"));
                }
                Ok((residual, reverse, edges, acyclic, rate, js)) => {
                    let same = reference.entry(s).or_insert_with(|| edges.clone()) == &edges;
                    let ok = residual <= 2.0 * eps && acyclic && rate == 1.0 && same;
                    passed &= ok;
                    let edge_txt: Vec<String> = edges.iter().map(|(a, b)| format!("{a}->{b}")).collect();
                    summary.push(format!(
                        "{tag}: union residual {residual:.3e} (bound {}), reverse {reverse:.3e}, edges [{}], acyclic {acyclic}, classified {:.0}%, matches first eta: {same}",
                        2.0 * eps,
                        edge_txt.join(" "),
                        100.0 * rate
                    ));
                    let _ = writeln!(
                        csv,
                        "{},{},{residual},{reverse},{},{acyclic},{rate}",
                        self.cfg.seeds[s],
                        self.cfg.etas[e],
                        edge_txt.join(" ")
                    );
                    artifacts.push(Artifact {
                        path: format!("gradient/{tag}_connections.json"),
                        bytes: serde_json::to_vec_pretty(&js).expect("serializable report"),
                    });
                }
            }
        }
        artifacts.push(Artifact { path: "gradient/summary.csv".into(), bytes: csv.into_bytes() });
        Ok(CheckOutcome { check: Check::Gradient, passed, summary, artifacts })
    }

    fn wave(&mut self) -> nrds_core::Result<CheckOutcome> {
        let sys = self.model.wave.as_ref().expect("wave scenario");
        let dt = self.cfg.numeric.dt;
        let t_h = self.cfg.numeric.t_h;
        let beta = sys.spec.beta;
        let mut passed = true;
        let mut summary = Vec::new();
        let mut artifacts = Vec::new();

        let mode_err = mode_eigenvalue_error(sys);
        passed &= mode_err <= 1e-10;
        summary.push(format!("mode eigenvalues vs quadratic formula: {mode_err:.2e}"));
        let growth = growth_check(&sys.spec.f, 10.0, 2001)?;
        summary
            .push(format!("growth fit of max(|f'|,|f''|): c {:.3}, p {:.3} (p < 2: {}; reported only)", growth.c, growth.p, growth.passes));

        let y0 = sys.project_state(|x| 1.2 * x.sin() + 0.4 * (3.0 * x).sin(), |x| 0.5 * (2.0 * x).sin());
        let probes = vec![sys.project_state(|x| 0.8 * x.sin(), |_| 0.0), sys.project_state(|x| 0.3 * (2.0 * x).sin(), |x| 0.2 * x.sin())];
        let split = 2.0f64.min(t_h);
        for (s, pp) in self.paths.iter().enumerate() {
            let seed = self.cfg.seeds[s];
            let et = energy_trace(sys, 0.0, pp, &y0, 20.0, dt)?;
            let mono = et.max_increase <= 1e-8;
            passed &= mono;
            summary.push(format!(
                "seed {seed}: energy max per-step increase {:.3e} (tolerance 1e-8); beta/2 variant {:.3e}",
                et.max_increase, et.max_increase_beta
            ));
            let mut csv = String::from("t,E,E_beta\n");
            let every = ((0.1 / dt).round() as usize).max(1);
            for i in (0..et.times.len()).step_by(every) {
                csv_row(&mut csv, [et.times[i], et.energy[i], et.energy_beta[i]]);
            }
            artifacts.push(Artifact { path: format!("wave/seed{seed}_energy.csv"), bytes: csv.into_bytes() });

            let reports: Vec<nrds_core::Result<CellResult<nrds_core::waveapp::LinearDecayReport>>> =
                self.cfg.etas.par_iter().map(|&eta| soften(linear_decay_split(sys, eta, pp, t_h, dt, &probes, split))).collect();
            let mut alpha0: Option<f64> = None;
            let mut csv = String::from("eta,t,norm\n");
            let mut js = Vec::new();
            for (&eta, r) in self.cfg.etas.iter().zip(reports) {
                let rep = match r? {
                    Ok(rep) => rep,
                    Err(msg) => {
                        passed = false;
                        summary.push(format!("seed {seed} eta {eta}: decay fit failed: {msg}"));
                        continue;
                    }
                };
                let bounds = damping_bounds(sys, eta, pp, (-t_h, t_h), dt)?;
                let mut ok = rep.alpha > 0.0 && bounds.b0 >= beta;
                if eta == 0.0 {
                    ok &= (rep.alpha - rep.predicted_alpha).abs() <= 0.15 * rep.predicted_alpha;
                    alpha0 = Some(rep.alpha);
                }
                passed &= ok;
                summary.push(format!(
                    "seed {seed} eta {eta}: alpha {:.4} (mode-wise {:.4}), K {:.3}, damping in [{:.4}, {:.4}], Duhamel defect {:.2e}",
                    rep.alpha, rep.predicted_alpha, rep.k_const, bounds.b0, bounds.b1, rep.duhamel_defect
                ));
                for (t, n) in &rep.norms {
                    csv_row(&mut csv, [eta, *t, *n]);
                }
                js.push(json!({ "eta": eta, "alpha": rep.alpha, "K": rep.k_const, "predicted_alpha": rep.predicted_alpha,
                    "r_squared": rep.r_squared, "duhamel_defect": rep.duhamel_defect, "remainder_norm": rep.remainder_norm,
                    "b0": bounds.b0, "b1": bounds.b1 }));
            }
            if let Some(a0) = alpha0 {
                for v in &js {
                    let (eta, a) = (v["eta"].as_f64().unwrap_or(0.0), v["alpha"].as_f64().unwrap_or(0.0));
                    if eta > 0.0 && a < 0.95 * a0 {
                        passed = false;
                        summary.push(format!("seed {seed} eta {eta}: alpha {a:.4} below the noise-free {a0:.4} by more than 5%"));
                    }
                }
            }
            artifacts.push(Artifact { path: format!("wave/seed{seed}_decay.csv"), bytes: csv.into_bytes() });
            let report = json!({ "seed": seed, "mode_eigenvalue_error": mode_err, "growth": growth,
                "energy_max_increase": et.max_increase, "energy_beta_max_increase": et.max_increase_beta, "decay": js });
            artifacts.push(Artifact {
                path: format!("wave/seed{seed}_report.json"),
                bytes: serde_json::to_vec_pretty(&report).expect("serializable report"),
            });
        }
        Ok(CheckOutcome { check: Check::Wave, passed, summary, artifacts })
    }
}
