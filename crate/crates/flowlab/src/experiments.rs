//! The experiments behind each CLI subcommand.  Each returns its output
//! files in memory; [`run_experiment`] writes them and the manifest.

use std::path::Path;
use std::time::Instant;

use flowlab_core::estimators::{
    build_counterexample_datum, log_spaced, lower_bound_consistency, mc_indicator_expectation, mc_inverse_gradient_moment,
    mc_sobolev_norm, exact_indicator_expectation, MomentGrid, PathSpec, SobolevQuadrature,
};
use flowlab_core::flow::integrate_flow;
use flowlab_core::flow_calculus::{propagate_jacobian, OVERFLOW_THRESHOLD};
use flowlab_core::math::det;
use flowlab_core::paths::{make_graded_grid, sample_brownian, TimeGrid};
use flowlab_core::regime::{classify_regime, drift_q_norm, DriftField, QNorm, DIVERGENCE_GROWTH};
use flowlab_core::resolvent::{pde_residual_at_start, resolvent_slices, Boundary, GridFunction, Mesh};
use flowlab_core::rng::sample_seed;
use flowlab_core::Executor;

use crate::config::{ExperimentConfig, ExperimentKind, SourceProfile};
use crate::error::{from_core, HarnessError, Result};
use crate::output::{fmt, line_plot, regime_svg, Artifact, OutputDir, RunManifest, Series, Table};

/// `(q, α, 2/q, label)` over a grid uniform in `α` and in `2/q`.
pub fn emit_regime_diagram(q_range: (f64, f64), alpha_range: (f64, f64), resolution: usize, dim: usize) -> Result<(Table, String)> {
    let (y_lo, y_hi) = (2.0 / q_range.1, 2.0 / q_range.0);
    let mut t = Table::new(["q", "alpha", "two_over_q", "label"]);
    let mut cells = Vec::new();
    let step = |lo: f64, hi: f64, i: usize| if resolution == 1 { lo } else { lo + (hi - lo) * i as f64 / (resolution - 1) as f64 };
    let mut labels = Vec::new();
    for i in 0..resolution {
        let y = step(y_lo, y_hi, i);
        let q = if y == 0.0 { f64::INFINITY } else { 2.0 / y };
        for j in 0..resolution {
            let a = step(alpha_range.0, alpha_range.1, j);
            let c = classify_regime(q, a, dim).map_err(|e| from_core("classify", e))?;
            t.push(vec![fmt(q), fmt(a), fmt(c.two_over_q), c.label.as_str().into()]);
            labels.push((a, c.two_over_q, c.label.as_str()));
        }
    }
    cells.extend(labels.iter().map(|(a, y, l)| (*a, *y, *l)));
    let svg = regime_svg(&cells, alpha_range, y_hi.max(alpha_range.1 + 1.0));
    Ok((t, svg))
}

fn classify(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let c = &cfg.classify;
    let (t, svg) = emit_regime_diagram((c.q_min, c.q_max), (c.alpha_min, c.alpha_max), c.resolution, c.dim)?;
    Ok(vec![Artifact::csv("classify.csv", &t)?, Artifact::svg("classify.svg", svg)])
}

/// Grid on `[0, t_end]` graded toward the first singular time inside it.
pub fn flow_grid(drift: &DriftField, t_end: f64, n: usize, grading: f64) -> Result<TimeGrid> {
    let sp = drift.singular_times().into_iter().find(|s| *s >= 0.0 && *s <= t_end);
    let gamma = if sp.is_some() { grading } else { 1.0 };
    make_graded_grid(t_end, n, sp, gamma).map_err(|e| from_core("grid", e))
}

fn simulate_flow(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let drift = cfg.drift.build(ExperimentConfig::default_drift(ExperimentKind::SimulateFlow))?;
    let t_end = cfg.flow.t.unwrap_or(drift.horizon());
    let grid = flow_grid(&drift, t_end, cfg.grid.n_steps, cfg.grid.grading)?;
    let d = drift.dim();
    let path = sample_brownian(d, &grid, cfg.seed).map_err(|e| from_core("flow", e))?;
    let traj = integrate_flow(&drift, &path, &cfg.flow.x0).map_err(|e| from_core("flow", e))?;
    if traj.states().iter().any(|v| !(v.abs() <= OVERFLOW_THRESHOLD)) {
        return Err(HarnessError::Numerical(format!("flow state exceeds {OVERFLOW_THRESHOLD:e}")));
    }
    let jac = propagate_jacobian(&drift, &traj).map_err(|e| from_core("flow", e))?;
    let mut ft = Table::new(std::iter::once("t".to_string()).chain((1..=d).map(|i| format!("x_{i}"))));
    let mut jt = Table::new(
        std::iter::once("t".to_string())
            .chain((1..=d).flat_map(|i| (1..=d).map(move |j| format!("J_{i}{j}"))))
            .chain(["det".to_string(), "overflow_flag".to_string()]),
    );
    let mut series: Vec<Series> = (1..=d).map(|i| Series { name: format!("x_{i}"), points: Vec::new() }).collect();
    let mut overflowed = false;
    for (k, &t) in grid.nodes().iter().enumerate() {
        let x = traj.state(k);
        ft.push(std::iter::once(fmt(t)).chain(x.iter().map(|v| fmt(*v))).collect());
        for (s, v) in series.iter_mut().zip(x) {
            s.points.push((t, *v));
        }
        let m = jac.matrix(k);
        overflowed |= m.iter().any(|v| !(v.abs() <= OVERFLOW_THRESHOLD));
        jt.push(
            std::iter::once(fmt(t))
                .chain(m.iter().map(|v| fmt(*v)))
                .chain([fmt(det(d, m)), (overflowed as u8).to_string()])
                .collect(),
        );
    }
    let svg = line_plot("flow trajectory", "t", "x", &series, false, false);
    Ok(vec![Artifact::csv("simulate-flow.csv", &ft)?, Artifact::csv("simulate-flow-jacobian.csv", &jt)?, Artifact::svg("simulate-flow.svg", svg)])
}

/// Source `f(s, ·)` of the resolvent experiment.
pub fn resolvent_source(cfg: &ExperimentConfig, mesh: &Mesh, s: f64) -> GridFunction {
    let r = &cfg.resolvent;
    match r.f_profile {
        SourceProfile::Constant => GridFunction::from_fn(mesh, s, |_| 1.0),
        SourceProfile::Sine => GridFunction::from_fn(mesh, s, |x| x.iter().map(|v| (r.wavenumber * v).sin()).product()),
        SourceProfile::HolderBump => {
            let a = s.powf(-r.time_exponent);
            GridFunction::from_fn(mesh, s, |x| a * x.iter().map(|v| (1.0 - v * v).max(0.0).powf(r.alpha)).product::<f64>())
        }
    }
}

fn resolvent(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let r = &cfg.resolvent;
    let mesh = Mesh::cube(r.dim, r.box_half, r.grid_h).map_err(|e| from_core("resolvent", e))?;
    let dt = r.dt.unwrap_or(r.grid_h);
    let m = ((r.horizon / dt).round() as usize).max(3);
    let src = |s: f64| resolvent_source(cfg, &mesh, s);
    let slices = resolvent_slices(src, r.lambda, r.horizon, m, Boundary::Replicate).map_err(|e| from_core("resolvent", e))?;
    let res = pde_residual_at_start(&slices, src, r.lambda).map_err(|e| from_core("resolvent", e))?;
    let u = &slices.slices[0];
    let grad = u.gradient();
    let d = r.dim;
    let mut t = Table::new(
        (1..=d)
            .map(|i| format!("x_{i}"))
            .chain(["U".to_string()])
            .chain((1..=d).map(|i| format!("gradU_{i}")))
            .chain(["residual".to_string()]),
    );
    let mut p = vec![0.0; d];
    let mut profile = Series { name: "U(0, x) along axis 1".into(), points: Vec::new() };
    let centre = (mesh.n[0] - 1) / 2;
    let mut mi = vec![0; d];
    for i in 0..mesh.len() {
        mesh.point(i, &mut p);
        mesh.index(i, &mut mi);
        let mut row: Vec<String> = p.iter().map(|v| fmt(*v)).collect();
        row.push(fmt(u.values[i]));
        row.extend((0..d).map(|a| fmt(grad[i * d + a])));
        let rv = res.values[i];
        row.push(if rv.is_nan() { String::new() } else { fmt(rv) });
        t.push(row);
        if mi[1..].iter().all(|k| *k == centre) {
            profile.points.push((p[0], u.values[i]));
        }
    }
    let svg = line_plot("resolvent at t = 0", "x_1", "U", &[profile], false, false);
    Ok(vec![Artifact::csv("resolvent.csv", &t)?, Artifact::svg("resolvent.svg", svg)])
}

fn regularity_sweep(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let s = &cfg.sweep;
    let mut t = Table::new([
        "alpha",
        "eps",
        "kappa",
        "q_critical",
        "two_over_q_critical",
        "label",
        "q_below",
        "norm_below",
        "q_above",
        "norm_above",
    ]);
    let mut crit = Series { name: "2/q critical".into(), points: Vec::new() };
    let mut upper = Series { name: "alpha + 1".into(), points: Vec::new() };
    let mut lower = Series { name: "alpha".into(), points: Vec::new() };
    for &a in &s.alphas {
        let drift = flowlab_core::regime::counterexample_drift(a, s.eps, cfg.drift.t1).map_err(|e| from_core("sweep", e))?;
        let kappa = drift.profile().expect("shear drift").kappa();
        let qc = 1.0 / kappa;
        let q_below = (qc * (1.0 - s.margin)).max(1.0);
        let q_above = qc * (1.0 + s.margin);
        let label = classify_regime(q_below.min(qc), a, drift.dim()).map_err(|e| from_core("sweep", e))?;
        let render = |n: QNorm| match n {
            QNorm::Converged { value, .. } => fmt(value),
            QNorm::Diverged { .. } => "diverged".to_string(),
        };
        let below = drift_q_norm(&drift, q_below, s.n_t, DIVERGENCE_GROWTH).map_err(|e| from_core("sweep", e))?;
        let above = drift_q_norm(&drift, q_above, s.n_t, DIVERGENCE_GROWTH).map_err(|e| from_core("sweep", e))?;
        t.push(vec![
            fmt(a),
            fmt(s.eps),
            fmt(kappa),
            fmt(qc),
            fmt(2.0 * kappa),
            label.label.as_str().into(),
            fmt(q_below),
            render(below),
            fmt(q_above),
            render(above),
        ]);
        crit.points.push((a, 2.0 * kappa));
        upper.points.push((a, a + 1.0));
        lower.points.push((a, a));
    }
    let svg = line_plot("critical exponent of the counterexample", "alpha", "2/q", &[crit, upper, lower], false, false);
    Ok(vec![Artifact::csv("regularity-sweep.csv", &t)?, Artifact::svg("regularity-sweep.svg", svg)])
}

fn blowup_demo<E: Executor>(cfg: &ExperimentConfig, exec: &E) -> Result<Vec<Artifact>> {
    let b = &cfg.blowup;
    let drift = cfg.drift.build(ExperimentConfig::default_drift(ExperimentKind::BlowupDemo))?;
    let (alpha, eps, t1) = (cfg.drift.alpha, cfg.drift.eps, cfg.drift.t1);
    let r = cfg.support_radius()?;
    let datum = build_counterexample_datum(b.p, eps, r).map_err(|e| from_core("blowup", e))?;
    let base = make_graded_grid(t1, b.n_steps, Some(t1), b.grading).map_err(|e| from_core("blowup", e))?;
    let spec = PathSpec { base, refinements: 0 };
    let quad = SobolevQuadrature { points: b.points, cells_per_unit: b.cells_per_unit };
    let est = mc_sobolev_norm(&datum, &drift, t1, b.box_half.unwrap_or(r), &b.deltas, quad, &spec, b.n_paths, cfg.seed, exec)
        .map_err(|e| from_core("blowup", e))?;
    if est.iter().any(|e| e.n == 0) {
        return Err(HarnessError::Numerical("every Sobolev-norm sample overflowed".into()));
    }
    let pe = b.p * eps;
    let shape = |d: f64| (d.powf(-pe) - (r / 8.0).powf(-pe)) / pe;
    let mut t = Table::new(["delta", "mean", "std_error", "n", "censored", "shape"]);
    let mut s_mean = Series { name: "estimate".into(), points: Vec::new() };
    for (d, e) in b.deltas.iter().zip(&est) {
        t.push(vec![fmt(*d), fmt(e.mean), fmt(e.std_error), e.n.to_string(), e.censored.to_string(), fmt(shape(*d))]);
        s_mean.points.push((*d, e.mean));
    }
    let xs = log_spaced(b.x_min, b.x_max, b.n_x);
    let fit = lower_bound_consistency(&xs, t1, alpha, eps, b.lower_bound_radius).map_err(|e| from_core("blowup", e))?;
    let mut lb = Table::new(["x", "estimate", "shape", "ratio", "c"]);
    let mut s_est = Series { name: "time integral".into(), points: Vec::new() };
    let mut s_shape = Series { name: "c * shape".into(), points: Vec::new() };
    for ((x, e), s) in xs.iter().zip(&fit.estimates).zip(&fit.shapes) {
        lb.push(vec![fmt(*x), fmt(*e), fmt(*s), fmt(e / s), fmt(fit.c)]);
        s_est.points.push((*x, *e));
        s_shape.points.push((*x, fit.c * s));
    }
    Ok(vec![
        Artifact::csv("blowup-demo.csv", &t)?,
        Artifact::svg("blowup-demo.svg", line_plot("truncated Sobolev norm", "delta", "E norm", &[s_mean], true, true)),
        Artifact::csv("blowup-demo-lower-bound.csv", &lb)?,
        Artifact::svg("blowup-demo-lower-bound.svg", line_plot("lower bound consistency", "x", "value", &[s_est, s_shape], true, true)),
    ])
}

fn moment_study<E: Executor>(cfg: &ExperimentConfig, exec: &E) -> Result<Vec<Artifact>> {
    let m = &cfg.moment;
    let drift = cfg.drift.build(ExperimentConfig::default_drift(ExperimentKind::MomentStudy))?;
    let base = flow_grid(&drift, drift.horizon(), m.base_steps, cfg.grid.grading)?;
    let mut t = Table::new(["level", "points_per_axis", "eval_times", "n_steps", "mean", "std_error", "n", "censored", "matrix_norm"]);
    let mut s = Series { name: "moment".into(), points: Vec::new() };
    for &l in &m.levels {
        let grid = MomentGrid { points_per_axis: (m.points_per_axis - 1) * (1 << l) + 1, eval_times: m.eval_times << l };
        let spec = PathSpec { base: base.clone(), refinements: l };
        let e = mc_inverse_gradient_moment(&drift, m.r, m.radius, grid, &spec, m.n_paths, cfg.seed, exec).map_err(|e| from_core("moment", e))?;
        if e.n == 0 {
            return Err(HarnessError::Numerical("every moment sample overflowed".into()));
        }
        t.push(vec![
            l.to_string(),
            grid.points_per_axis.to_string(),
            grid.eval_times.to_string(),
            spec.grid().steps().to_string(),
            fmt(e.mean),
            fmt(e.std_error),
            e.n.to_string(),
            e.censored.to_string(),
            "frobenius".into(),
        ]);
        s.points.push((l as f64, e.mean));
    }
    let svg = line_plot("inverse-gradient moment under refinement", "level", "E sup |grad X^-1|^r", &[s], false, false);
    Ok(vec![Artifact::csv("moment-study.csv", &t)?, Artifact::svg("moment-study.svg", svg)])
}

fn oracle_check<E: Executor>(cfg: &ExperimentConfig, exec: &E) -> Result<Vec<Artifact>> {
    let o = &cfg.oracle;
    let mut t = Table::new(["tuple", "x", "s", "t1", "R", "alpha", "exact", "mean", "std_error", "n", "censored", "z_score"]);
    let mut s = Series { name: "|z|".into(), points: Vec::new() };
    for (i, tp) in o.tuples.iter().enumerate() {
        let [x, sv, t1, r, a] = *tp;
        let exact = exact_indicator_expectation(x, sv, t1, r, a).map_err(|e| from_core("oracle", e))?;
        let mc = mc_indicator_expectation(x, sv, t1, r, a, o.n, sample_seed(cfg.seed, i as u64), exec).map_err(|e| from_core("oracle", e))?;
        let z = (mc.mean - exact) / mc.std_error;
        t.push(vec![
            i.to_string(),
            fmt(x),
            fmt(sv),
            fmt(t1),
            fmt(r),
            fmt(a),
            fmt(exact),
            fmt(mc.mean),
            fmt(mc.std_error),
            mc.n.to_string(),
            mc.censored.to_string(),
            fmt(z),
        ]);
        s.points.push((i as f64, z.abs()));
    }
    let svg = line_plot("quadrature vs Monte Carlo", "tuple", "|z|", &[s], false, false);
    Ok(vec![Artifact::csv("oracle-check.csv", &t)?, Artifact::svg("oracle-check.svg", svg)])
}

/// Output files of the configured experiment, without touching the disk.
pub fn compute<E: Executor>(cfg: &ExperimentConfig, exec: &E) -> Result<Vec<Artifact>> {
    cfg.validate()?;
    match cfg.kind()? {
        ExperimentKind::Classify => classify(cfg),
        ExperimentKind::SimulateFlow => simulate_flow(cfg),
        ExperimentKind::Resolvent => resolvent(cfg),
        ExperimentKind::RegularitySweep => regularity_sweep(cfg),
        ExperimentKind::BlowupDemo => blowup_demo(cfg, exec),
        ExperimentKind::MomentStudy => moment_study(cfg, exec),
        ExperimentKind::OracleCheck => oracle_check(cfg, exec),
    }
}

/// Runs the experiment and writes its CSV/SVG files plus `manifest.json`
/// into `cfg.out_dir`.  Nothing is left behind on failure.
pub fn run_experiment<E: Executor>(cfg: &ExperimentConfig, exec: &E) -> Result<RunManifest> {
    let start = Instant::now();
    let artifacts = compute(cfg, exec)?;
    let mut out = OutputDir::create(Path::new(&cfg.out_dir))?;
    for a in &artifacts {
        out.write(a)?;
    }
    let mut manifest = RunManifest {
        experiment: cfg.kind()?.name().into(),
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        workers: exec.workers(),
        matrix_norm: "frobenius".into(),
        outputs: out.written(),
    };
    manifest.outputs.push("manifest.json".into());
    let json = match serde_json::to_vec_pretty(&manifest) {
        Ok(j) => j,
        Err(e) => {
            out.discard();
            return Err(e.into());
        }
    };
    out.write(&Artifact { name: "manifest.json".into(), bytes: json })?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flowlab_core::Serial;

    #[test]
    fn regime_diagram_covers_both_axes() {
        let (t, svg) = emit_regime_diagram((1.0, f64::INFINITY), (0.1, 0.9), 3, 2).unwrap();
        assert_eq!(t.rows.len(), 9);
        assert_eq!(t.rows[0][..3], ["inf".to_string(), "0.1".into(), "0.0".into()]);
        assert_eq!(t.rows[0][3], "StrongExistence");
        assert_eq!(t.rows[8][..4], ["1.0".to_string(), "0.9".into(), "2.0".into(), "NonExistence".into()]);
        assert!(svg.contains("circle"));
    }

    #[test]
    fn flow_grid_grades_toward_singular_time() {
        let d = flowlab_core::regime::counterexample_drift(0.5, 0.05, 1.0).unwrap();
        let g = flow_grid(&d, 1.0, 16, 2.0).unwrap();
        let n = g.nodes();
        assert!(n[16] - n[15] < n[1] - n[0]);
        let z = flow_grid(&DriftField::zero(2), 1.0, 4, 2.0).unwrap();
        assert_eq!(z.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn compute_requires_an_experiment() {
        let e = compute(&ExperimentConfig::default(), &Serial).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn oracle_rows_carry_z_scores() {
        let mut c = ExperimentConfig { experiment: Some(ExperimentKind::OracleCheck), ..Default::default() };
        c.oracle.n = 1000;
        c.oracle.tuples = vec![[0.3, 0.5, 1.0, 1.0, 0.5]];
        let a = compute(&c, &Serial).unwrap();
        let text = String::from_utf8(a[0].bytes.clone()).unwrap();
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row.len(), 12);
        assert_eq!(row[9], "1000");
        assert!(row[11].parse::<f64>().unwrap().abs() < 5.0);
    }
}
