//! Monte Carlo and quadrature estimators for gradient moments of the
//! inverse flow, Sobolev norms of the solution and the Gaussian indicator
//! expectations behind the counterexample lower bound.
//!
//! Every Monte Carlo estimator derives sample `i`'s seed as
//! `sample_seed(master, i)` and reduces in index order, so results depend
//! only on `(inputs, master_seed, n)`.  Matrix norms are Frobenius.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::exec::Executor;
use crate::flow::InverseMethod;
use crate::flow_calculus::{backward_flow_with_jacobian, inverse_jacobian, OVERFLOW_THRESHOLD};
use crate::math::{exp, frobenius, gaussian_density, gaussian_interval_prob, powf, sqrt};
use crate::paths::{refine_bridge, sample_brownian, BrownianPath, TimeGrid};
use crate::quad::{adaptive, geometric_breaks, GaussLegendre};
use crate::regime::{eval_g_prime, singularity_exponent, DriftField, DriftKind, PowerProfile};
use crate::rng::{normal, sample_seed, stream};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√n`; `NaN` when `n < 2`.
    pub std_error: f64,
    /// Samples entering the mean.
    pub n: usize,
    pub master_seed: u64,
    /// Samples that hit the overflow threshold.  Finite ones still enter
    /// the mean; non-finite ones are excluded.
    pub censored: usize,
}

/// One Monte Carlo sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub overflow: bool,
}

impl MonteCarloEstimate {
    pub fn from_samples(samples: &[Sample], master_seed: u64) -> Self {
        let censored = samples.iter().filter(|s| s.overflow || !s.value.is_finite()).count();
        let kept: Vec<f64> = samples.iter().map(|s| s.value).filter(|v| v.is_finite()).collect();
        let n = kept.len();
        let mean = if n == 0 { f64::NAN } else { kept.iter().sum::<f64>() / n as f64 };
        let std_error = if n < 2 {
            f64::NAN
        } else if kept.iter().all(|v| *v == kept[0]) {
            0.0
        } else {
            let ss: f64 = kept.iter().map(|v| (v - mean) * (v - mean)).sum();
            sqrt(ss / (n - 1) as f64) / sqrt(n as f64)
        };
        Self { mean, std_error, n, master_seed, censored }
    }
}

fn run_samples<E, F>(exec: &E, n: usize, master: u64, f: F) -> Result<Vec<Vec<Sample>>>
where
    E: Executor,
    F: Fn(u64) -> Result<Vec<Sample>> + Sync,
{
    exec.map_indexed(n, |i| f(sample_seed(master, i as u64))).into_iter().collect()
}

fn reduce(per_sample: &[Vec<Sample>], outputs: usize, master: u64) -> Vec<MonteCarloEstimate> {
    (0..outputs)
        .map(|j| {
            let col: Vec<Sample> = per_sample.iter().map(|s| s[j]).collect();
            MonteCarloEstimate::from_samples(&col, master)
        })
        .collect()
}

/// Driving paths: sampled on `base`, then refined `refinements` times by
/// Brownian bridge, so every refinement level shares the coarse skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSpec {
    pub base: TimeGrid,
    pub refinements: usize,
}

impl PathSpec {
    pub fn grid(&self) -> TimeGrid {
        let mut g = self.base.clone();
        for _ in 0..self.refinements {
            g = g.doubled();
        }
        g
    }

    pub fn sample(&self, d: usize, seed: u64) -> Result<BrownianPath> {
        let mut p = sample_brownian(d, &self.base, seed)?;
        let mut g = self.base.clone();
        for _ in 0..self.refinements {
            g = g.doubled();
            p = refine_bridge(&p, &g)?;
        }
        Ok(p)
    }
}

fn smoothstep(z: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else if z >= 1.0 {
        1.0
    } else {
        let a = exp(-1.0 / z);
        let b = exp(-1.0 / (1.0 - z));
        a / (a + b)
    }
}

fn smoothstep_prime(z: f64) -> f64 {
    if z <= 0.0 || z >= 1.0 {
        0.0
    } else {
        let a = exp(-1.0 / z);
        let b = exp(-1.0 / (1.0 - z));
        let da = a / (z * z);
        let db = -b / ((1.0 - z) * (1.0 - z));
        (da * (a + b) - a * (da + db)) / ((a + b) * (a + b))
    }
}

/// Product datum `u0(x, y) = u01(x) u02(y)` whose `x`-factor has derivative
/// exactly `x^{ε-1/p}` on `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialDatum {
    pub p_exponent: f64,
    pub eps: f64,
    pub support_radius: f64,
}

/// `R > 6/(1-α-2ε) T^{(1-α-2ε)/2}` keeps the box inclusion valid; the
/// default is twice that bound.
pub fn default_support_radius(alpha: f64, eps: f64, horizon: f64) -> Result<f64> {
    let e = 1.0 - alpha - 2.0 * eps;
    if !(e > 0.0) {
        return Err(invalid("eps", "needs 1 - α - 2ε > 0"));
    }
    Ok(2.0 * 6.0 / e * powf(horizon, 0.5 * e))
}

pub fn build_counterexample_datum(p: f64, eps: f64, support_radius: f64) -> Result<InitialDatum> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(invalid("p", "must lie in [1, ∞)"));
    }
    if !(eps > 0.0 && eps < 1.0 / p) {
        return Err(invalid("eps", "must lie in (0, 1/p)"));
    }
    if !(support_radius > 1.0) {
        return Err(invalid("support_radius", "must exceed 1"));
    }
    Ok(InitialDatum { p_exponent: p, eps, support_radius })
}

impl InitialDatum {
    /// `a = ε - 1/p + 1`, so `u01(x) = x^a / a` near 0.
    pub fn power(&self) -> f64 {
        self.eps - 1.0 / self.p_exponent + 1.0
    }

    // x-factor: x^a/a on (0, R], cut to 0 over [R, 1.5R]
    pub fn u01(&self, x: f64) -> f64 {
        let r = self.support_radius;
        if x <= 0.0 || x >= 1.5 * r {
            return 0.0;
        }
        let a = self.power();
        powf(x, a) / a * (1.0 - smoothstep((x - r) / (0.5 * r)))
    }

    pub fn u01_prime(&self, x: f64) -> f64 {
        let r = self.support_radius;
        if x <= 0.0 || x >= 1.5 * r {
            return 0.0;
        }
        let a = self.power();
        let z = (x - r) / (0.5 * r);
        powf(x, a - 1.0) * (1.0 - smoothstep(z)) - powf(x, a) / a * smoothstep_prime(z) / (0.5 * r)
    }

    // y-factor: 1 on [-2R/3, R/3], supported in (-R, 2R/3)
    pub fn u02(&self, y: f64) -> f64 {
        let r = self.support_radius;
        smoothstep((y + r) / (r / 3.0)) * (1.0 - smoothstep((y - r / 3.0) / (r / 3.0)))
    }

    pub fn u02_prime(&self, y: f64) -> f64 {
        let r = self.support_radius;
        let w = r / 3.0;
        let up = smoothstep((y + r) / w);
        let down = 1.0 - smoothstep((y - w) / w);
        smoothstep_prime((y + r) / w) / w * down - up * smoothstep_prime((y - w) / w) / w
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.u01(z[0]) * self.u02(z[1])
    }

    pub fn gradient(&self, z: &[f64], out: &mut [f64]) {
        out[0] = self.u01_prime(z[0]) * self.u02(z[1]);
        out[1] = self.u01(z[0]) * self.u02_prime(z[1]);
    }

    /// `∫_lo^hi |u01'|^p dx = (hi^{pε} - lo^{pε}) / (pε)` for `0 ≤ lo ≤ hi ≤ 1`.
    pub fn x_factor_integral(&self, lo: f64, hi: f64) -> Result<f64> {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(invalid("interval", "must satisfy 0 ≤ lo ≤ hi ≤ 1"));
        }
        let pe = self.p_exponent * self.eps;
        Ok((powf(hi, pe) - powf(lo, pe)) / pe)
    }

    /// Breakpoints of `u02` where its smooth transitions start and end.
    fn y_breaks(&self) -> [f64; 4] {
        let r = self.support_radius;
        [-r, -2.0 * r / 3.0, r / 3.0, 2.0 * r / 3.0]
    }
}

/// Spatial and temporal sampling for [`mc_inverse_gradient_moment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentGrid {
    /// Lattice points per axis on `[-R, R]`; points with `|y| > R` are dropped.
    pub points_per_axis: usize,
    /// Evaluation times: `eval_times + 1` path nodes spread evenly by index.
    pub eval_times: usize,
}

/// `E sup_{t, |y| ≤ R} ‖∇X⁻¹(t, y)‖_F^r` over the lattice and evaluation
/// times, with `∇X⁻¹` from the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn mc_inverse_gradient_moment<E: Executor>(
    drift: &DriftField,
    r: f64,
    radius: f64,
    grid: MomentGrid,
    paths: &PathSpec,
    n_paths: usize,
    master_seed: u64,
    exec: &E,
) -> Result<MonteCarloEstimate> {
    if !(r >= 1.0) {
        return Err(invalid("r", "must be at least 1"));
    }
    if !(radius > 0.0) || grid.points_per_axis < 2 || grid.eval_times == 0 || n_paths == 0 {
        return Err(invalid("grid", "needs R > 0, 2+ points per axis, 1+ evaluation time and 1+ path"));
    }
    let d = drift.dim();
    let m = grid.points_per_axis;
    let total = m.pow(d as u32);
    let mut points = Vec::new();
    for idx in 0..total {
        let mut rem = idx;
        let mut p = vec![0.0; d];
        for c in p.iter_mut() {
            *c = -radius + 2.0 * radius * (rem % m) as f64 / (m - 1) as f64;
            rem /= m;
        }
        if p.iter().map(|v| v * v).sum::<f64>() <= radius * radius * (1.0 + 1e-12) {
            points.push(p);
        }
    }
    let steps = paths.grid().steps();
    let ks: Vec<usize> = (0..=grid.eval_times).map(|j| j * steps / grid.eval_times).collect();
    let per = run_samples(exec, n_paths, master_seed, |seed| {
        let path = paths.sample(d, seed)?;
        let mut sup = 0.0f64;
        let mut overflow = false;
        for p in &points {
            for &k in &ks {
                let (_, jinv) = backward_flow_with_jacobian(drift, &path, p, k);
                let f = frobenius(&jinv);
                if !(f <= OVERFLOW_THRESHOLD) {
                    overflow = true;
                }
                sup = sup.max(f);
            }
        }
        Ok(vec![Sample { value: powf(sup, r), overflow }])
    })?;
    Ok(reduce(&per, 1, master_seed)[0])
}

/// Quadrature resolution of [`mc_sobolev_norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevQuadrature {
    /// Gauss–Legendre points per cell.
    pub points: usize,
    /// Cells per unit length of `x` above 1 and per `y` transition.
    pub cells_per_unit: usize,
}

impl Default for SobolevQuadrature {
    fn default() -> Self {
        Self { points: 8, cells_per_unit: 4 }
    }
}

/// `E ∫ |∇u(t, ·)|^p` over `[-L, L]²` minus the strip whose preimage has
/// `|X⁻¹(t,·)_1| < δ`, for each `δ` in `deltas`.  The datum vanishes for
/// negative first coordinate, so only preimages in `[δ, ·)` contribute.
///
/// Needs a triangular drift (zero, constant or shear): then the inverse flow
/// moves `y` by a translation that does not depend on `y`, and the first
/// coordinate alone fixes `∇X⁻¹`.
#[allow(clippy::too_many_arguments)]
pub fn mc_sobolev_norm<E: Executor>(
    datum: &InitialDatum,
    drift: &DriftField,
    t: f64,
    box_half: f64,
    deltas: &[f64],
    quad: SobolevQuadrature,
    paths: &PathSpec,
    n_paths: usize,
    master_seed: u64,
    exec: &E,
) -> Result<Vec<MonteCarloEstimate>> {
    if drift.dim() != 2 || !drift.is_triangular() {
        return Err(Error::MissingCapability("two-dimensional triangular structure"));
    }
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0 && *d < datum.support_radius / 8.0)) {
        return Err(invalid("delta", "each cutoff must lie in (0, R/8)"));
    }
    if !(box_half > 0.0) || n_paths == 0 {
        return Err(invalid("box", "needs a positive half-width and 1+ path"));
    }
    let mut sorted = deltas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let gl = GaussLegendre::new(quad.points);
    let p = datum.p_exponent;
    let ytab = YTable::new(datum, &gl, quad.cells_per_unit);
    let per = run_samples(exec, n_paths, master_seed, |seed| {
        let path = if t == 0.0 { None } else { Some(paths.sample(2, seed)?) };
        let b1 = match &path {
            Some(pa) => pa.at_time(t)?[0],
            None => 0.0,
        };
        let shear = match (&path, drift.kind()) {
            (Some(pa), DriftKind::Shear(pr)) => Some(ShearInverse::new(pr, pa, t)?),
            _ => None,
        };
        let x_hi = (box_half - b1).min(1.5 * datum.support_radius);
        let cells = x_cells(&sorted, x_hi, quad.cells_per_unit);
        // contribution of x̃ ≥ sorted[j] accumulates into pieces[j]
        let mut pieces = vec![0.0; sorted.len()];
        let mut overflow = false;
        for w in cells.windows(2) {
            let (a, b) = (w[0], w[1]);
            let slot = sorted.partition_point(|d| *d <= a * (1.0 + 1e-12)) - 1;
            let hh = 0.5 * (b - a);
            let mut cell = 0.0;
            for (xn, wt) in gl.nodes.iter().zip(&gl.weights) {
                let xt = 0.5 * (a + b) + hh * xn;
                let (pre, jinv) = match (&path, &shear) {
                    (_, Some(sh)) => sh.inverse(xt),
                    (Some(pa), None) => inverse_jacobian(drift, pa, &[xt + b1, 0.0], t, InverseMethod::ClosedForm)?,
                    (None, None) => (vec![xt, 0.0], vec![1.0, 0.0, 0.0, 1.0]),
                };
                overflow |= jinv.iter().any(|v| !(v.abs() <= OVERFLOW_THRESHOLD));
                // the y-preimage is y + shift for every y
                let v = y_integral(datum, &ytab, pre[0], &jinv, pre[1], box_half, p, &gl);
                cell += wt * hh * v;
            }
            pieces[slot] += cell;
        }
        let mut out = vec![Sample { value: 0.0, overflow }; sorted.len()];
        let mut acc = 0.0;
        for j in (0..sorted.len()).rev() {
            acc += pieces[j];
            out[j].value = acc;
        }
        Ok(out)
    })?;
    let est = reduce(&per, sorted.len(), master_seed);
    Ok(deltas
        .iter()
        .map(|d| est[sorted.iter().position(|s| s == d).expect("delta present")])
        .collect())
}

/// Closed-form inverse and inverse Jacobian of the shear flow at `(x̃ + B1(t), 0)`
/// for many `x̃` on one path: the profile's segment weights are computed once
/// and `g`, `g'` share one power per node.
struct ShearInverse {
    weights: Vec<f64>,
    b1: Vec<f64>,
    b2_t: f64,
    alpha: f64,
}

impl ShearInverse {
    fn new(profile: &PowerProfile, path: &BrownianPath, t: f64) -> Result<Self> {
        let k_end = path.grid().index_of(t).ok_or(Error::TimeNotOnGrid { t })?;
        let nodes = path.grid().nodes();
        let weights = (0..k_end).map(|k| profile.segment_integral(nodes[k], nodes[k + 1])).collect();
        let b1 = (0..k_end).map(|k| path.at(k)[0]).collect();
        Ok(Self { weights, b1, b2_t: path.at(k_end)[1], alpha: profile.alpha })
    }

    /// `(X⁻¹, ∇X⁻¹)` at the point whose first preimage coordinate is `xt`.
    fn inverse(&self, xt: f64) -> (Vec<f64>, Vec<f64>) {
        let (mut i, mut c) = (0.0, 0.0);
        for (w, b) in self.weights.iter().zip(&self.b1) {
            let z = xt + b;
            if z >= 1.0 {
                i += w;
            } else if z > 0.0 {
                let pz = powf(z, self.alpha);
                i += w * pz;
                c += w * self.alpha * pz / z;
            }
        }
        (vec![xt, -self.b2_t - i], vec![1.0, 0.0, -c, 1.0])
    }
}

/// Cells in `x̃`: geometric (ratio ≤ 2) from the smallest cutoff up to 1,
/// uniform above, with every cutoff a breakpoint.
fn x_cells(sorted: &[f64], x_hi: f64, per_unit: usize) -> Vec<f64> {
    let lo = sorted[0];
    if !(x_hi > lo) {
        return vec![lo, lo];
    }
    let mut b = sorted.to_vec();
    let mut v = sorted[sorted.len() - 1];
    while v < 1.0 {
        v = (2.0 * v).min(1.0);
        b.push(v);
    }
    let mut u = 1.0;
    let step = 1.0 / per_unit as f64;
    while u < x_hi {
        u += step;
        b.push(u);
    }
    b.push(x_hi);
    for w in b.clone().windows(2) {
        // split cutoff gaps wider than a factor 2
        let mut c = w[0];
        while w[1] > 2.0 * c && c < 1.0 {
            c *= 2.0;
            b.push(c);
        }
    }
    b.retain(|x| *x >= lo && *x <= x_hi);
    b.sort_by(f64::total_cmp);
    b.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1.0));
    b
}

/// Gauss nodes of the two `u02` transition layers with the datum values
/// cached, shared by every `x̃` and path.
struct YTable {
    plateau: (f64, f64),
    cells: Vec<YCell>,
}

struct YCell {
    a: f64,
    b: f64,
    /// `(weight·half-width, u02, u02')` per node
    nodes: Vec<(f64, f64, f64)>,
}

fn y_cell(datum: &InitialDatum, gl: &GaussLegendre, a: f64, b: f64) -> YCell {
    let hh = 0.5 * (b - a);
    let nodes = gl
        .nodes
        .iter()
        .zip(&gl.weights)
        .map(|(yn, wt)| {
            let y = 0.5 * (a + b) + hh * yn;
            (wt * hh, datum.u02(y), datum.u02_prime(y))
        })
        .collect();
    YCell { a, b, nodes }
}

impl YTable {
    fn new(datum: &InitialDatum, gl: &GaussLegendre, per_unit: usize) -> Self {
        let yb = datum.y_breaks();
        let n_tr = ((per_unit as f64 * (yb[1] - yb[0])).max(4.0)) as usize;
        let mut cells = Vec::with_capacity(2 * n_tr);
        for &(s, e) in &[(yb[0], yb[1]), (yb[2], yb[3])] {
            for k in 0..n_tr {
                let a = s + (e - s) * k as f64 / n_tr as f64;
                let b = s + (e - s) * (k + 1) as f64 / n_tr as f64;
                cells.push(y_cell(datum, gl, a, b));
            }
        }
        Self { plateau: (yb[1], yb[2]), cells }
    }
}

fn abs_pow(sq: f64, p: f64) -> f64 {
    if p == 2.0 {
        sq
    } else {
        powf(sq, 0.5 * p)
    }
}

/// `∫_{-L}^{L} |∇u0(x̃, y + shift) · J|^p dy` for fixed `x̃`.
#[allow(clippy::too_many_arguments)]
fn y_integral(
    datum: &InitialDatum,
    table: &YTable,
    xt: f64,
    jinv: &[f64],
    shift: f64,
    box_half: f64,
    p: f64,
    gl: &GaussLegendre,
) -> f64 {
    let du1 = datum.u01_prime(xt);
    let u1 = datum.u01(xt);
    if du1 == 0.0 && u1 == 0.0 {
        return 0.0;
    }
    // integrate in the preimage variable ỹ = y + shift
    let lo = -box_half + shift;
    let hi = box_half + shift;
    let node_sum = |c: &YCell| {
        let mut t = 0.0;
        for &(w, v, dv) in &c.nodes {
            let g0 = du1 * v;
            let g1 = u1 * dv;
            let gx = g0 * jinv[0] + g1 * jinv[2];
            let gy = g0 * jinv[1] + g1 * jinv[3];
            t += w * abs_pow(gx * gx + gy * gy, p);
        }
        t
    };
    let mut total = 0.0;
    let (pa, pb) = table.plateau;
    let mut plateau_done = false;
    for c in &table.cells {
        if !plateau_done && c.a >= pb {
            plateau_done = true;
            let (a, b) = (pa.max(lo), pb.min(hi));
            if b > a {
                // u02 = 1 and u02' = 0: ∇u = (u01', 0) · J
                let gx = du1 * jinv[0];
                let gy = du1 * jinv[1];
                total += (b - a) * abs_pow(gx * gx + gy * gy, p);
            }
        }
        if c.b <= lo || c.a >= hi {
            continue;
        }
        if c.a >= lo && c.b <= hi {
            total += node_sum(c);
        } else {
            total += node_sum(&y_cell(datum, gl, c.a.max(lo), c.b.min(hi)));
        }
    }
    total
}

/// `∫₀¹ φ_v(w - x) P(|N(w - x, s)| ≤ R/3) μ(dw)` where `μ` has density `g'`
/// (power weight) or `1_{(0,1)}` (step weight).  The power weight is
/// removed by `w = u^{1/α}`, which turns `g'(w) dw` into `du`.
fn indicator_integral(x: f64, s: f64, t1: f64, radius: f64, alpha: Option<f64>) -> Result<f64> {
    if !(s > 0.0 && s < t1) {
        return Err(invalid("s", "must lie in (0, t1)"));
    }
    if !(radius > 0.0) {
        return Err(invalid("R", "must be positive"));
    }
    let v = t1 - s;
    let sd = sqrt(v);
    let third = radius / 3.0;
    let dens = |w: f64| gaussian_density(w - x, v) * gaussian_interval_prob(w - x, s, -third, third);
    // breakpoints in w around the Gaussian peak at w = x
    let mut wb: Vec<f64> = (-10..=10).map(|j| x + j as f64 * sd).filter(|w| *w > 0.0 && *w < 1.0).collect();
    wb.push(0.0);
    wb.push(1.0);
    wb.sort_by(f64::total_cmp);
    wb.dedup();
    let mut total = 0.0;
    for w in wb.windows(2) {
        total += match alpha {
            Some(a) => {
                let (ua, ub) = (powf(w[0], a), powf(w[1], a));
                adaptive(|u| dens(powf(u, 1.0 / a)), ua, ub, 1e-15, 1e-12, 400)
            }
            None => adaptive(dens, w[0], w[1], 1e-15, 1e-12, 400),
        };
    }
    Ok(total)
}

/// `E[1_{|B(t1)| ≤ R/3} g'(x + B(t1) - B(s))]` by one-dimensional
/// quadrature over the increment, with the `B(s)` integral in closed form.
pub fn exact_indicator_expectation(x: f64, s: f64, t1: f64, radius: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", "must lie in (0, 1)"));
    }
    indicator_integral(x, s, t1, radius, Some(alpha))
}

/// Same expectation with `g'` replaced by `1_{(0,1)}`:
/// `P(|B(t1)| ≤ R/3, 0 < x + B(t1) - B(s) < 1)`.
pub fn step_indicator_expectation(x: f64, s: f64, t1: f64, radius: f64) -> Result<f64> {
    indicator_integral(x, s, t1, radius, None)
}

/// Plain Monte Carlo of [`exact_indicator_expectation`]: sample `i` draws
/// `B(s)` and the increment from stream `AUX` of `sample_seed(master, i)`.
#[allow(clippy::too_many_arguments)]
pub fn mc_indicator_expectation<E: Executor>(
    x: f64,
    s: f64,
    t1: f64,
    radius: f64,
    alpha: f64,
    n: usize,
    master_seed: u64,
    exec: &E,
) -> Result<MonteCarloEstimate> {
    if !(s > 0.0 && s < t1) || !(alpha > 0.0 && alpha < 1.0) || n == 0 {
        return Err(invalid("parameters", "need 0 < s < t1, α ∈ (0,1) and n > 0"));
    }
    let (ss, sv) = (sqrt(s), sqrt(t1 - s));
    let samples: Vec<Sample> = exec.map_indexed(n, |i| {
        let seed = sample_seed(master_seed, i as u64);
        let y = ss * normal(seed, stream::AUX, 0);
        let z = sv * normal(seed, stream::AUX, 1);
        let value = if (y + z).abs() <= radius / 3.0 { eval_g_prime(x + z, alpha) } else { 0.0 };
        Sample { value, overflow: false }
    });
    Ok(MonteCarloEstimate::from_samples(&samples, master_seed))
}

/// `Γ_upper(a, z) = ∫_z^∞ s^{a-1} e^{-s} ds` for `a > 0`, `z ≥ 0`.
///
/// Below 1 the substitution `v = s^a` makes the integrand `e^{-v^{1/a}}/a`.
pub fn upper_incomplete_gamma(a: f64, z: f64) -> Result<f64> {
    if !(a > 0.0) || !(z >= 0.0) {
        return Err(invalid("upper_incomplete_gamma", "needs a > 0 and z ≥ 0"));
    }
    let tail = |lo: f64| {
        let hi = lo + 80.0;
        adaptive(|s| powf(s, a - 1.0) * exp(-s), lo, hi, 1e-16, 1e-13, 400)
    };
    if z >= 1.0 {
        return Ok(tail(z));
    }
    let head = adaptive(|v| exp(-powf(v, 1.0 / a)) / a, powf(z, a), 1.0, 1e-16, 1e-13, 400);
    Ok(head + tail(1.0))
}

/// `Φ(x) = x^{-2ε} Γ_upper(ε, x²/t1)`.
pub fn incomplete_gamma_shape(x: f64, t1: f64, eps: f64) -> Result<f64> {
    if !(x > 0.0) || !(t1 > 0.0) {
        return Err(invalid("x", "needs x > 0 and t1 > 0"));
    }
    Ok(powf(x, -2.0 * eps) * upper_incomplete_gamma(eps, x * x / t1)?)
}

/// Result of [`lower_bound_consistency`].
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundFit {
    /// Largest `c` with `estimate(x) ≥ c Φ(x)` on the sample.
    pub c: f64,
    pub estimates: Vec<f64>,
    pub shapes: Vec<f64>,
}

impl LowerBoundFit {
    /// `max ratio / min ratio` of `estimate / Φ` over the sample.
    pub fn ratio_spread(&self) -> f64 {
        let r: Vec<f64> = self.estimates.iter().zip(&self.shapes).map(|(e, s)| e / s).collect();
        let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
        hi / lo
    }
}

/// `∫₀^{t1} (t1-s)^{-κ} E[1_{|B(t1)| ≤ R/3} g'(x + B(t1) - B(s))] ds`,
/// integrated in `u = t1 - s` over geometric cells toward `u = 0`.
pub fn weighted_indicator_integral(x: f64, t1: f64, alpha: f64, eps: f64, radius: f64) -> Result<f64> {
    let kappa = singularity_exponent(alpha, eps);
    let breaks = geometric_breaks(t1, 60, 0.5);
    let gl = GaussLegendre::new(8);
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let hh = 0.5 * (b - a);
        for (un, wt) in gl.nodes.iter().zip(&gl.weights) {
            let u = 0.5 * (a + b) + hh * un;
            let s = t1 - u;
            // below u ~ 1e-16 the factor e^{-x²/u} has long underflowed
            if s <= 0.0 || s >= t1 {
                continue;
            }
            total += wt * hh * powf(u, -kappa) * exact_indicator_expectation(x, s, t1, radius, alpha)?;
        }
    }
    Ok(total)
}

/// Fits the largest `c` with `∫ f E[…] ds ≥ c Φ(x)` over `xs`; the time
/// integral is deterministic quadrature of the exact expectation.
pub fn lower_bound_consistency(xs: &[f64], t1: f64, alpha: f64, eps: f64, radius: f64) -> Result<LowerBoundFit> {
    if xs.is_empty() || xs.iter().any(|x| !(*x > 0.0 && *x < radius / 8.0)) {
        return Err(invalid("xs", "need points in (0, R/8)"));
    }
    let mut estimates = Vec::with_capacity(xs.len());
    let mut shapes = Vec::with_capacity(xs.len());
    for &x in xs {
        let e = weighted_indicator_integral(x, t1, alpha, eps, radius)?;
        if !(e > 0.0) {
            return Err(Error::NonPositiveEstimate { x, value: e });
        }
        estimates.push(e);
        shapes.push(incomplete_gamma_shape(x, t1, eps)?);
    }
    let c = estimates.iter().zip(&shapes).map(|(e, s)| e / s).fold(f64::INFINITY, f64::min);
    Ok(LowerBoundFit { c, estimates, shapes })
}

/// Log-spaced points `lo·(hi/lo)^{k/(n-1)}`.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo * powf(hi / lo, k as f64 / (n - 1) as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Serial;
    use crate::paths::make_graded_grid;
    use crate::regime::counterexample_drift;

    #[test]
    fn estimate_statistics() {
        let s: Vec<Sample> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| Sample { value: v, overflow: false }).collect();
        let e = MonteCarloEstimate::from_samples(&s, 9);
        assert_eq!(e.mean, 2.5);
        assert!((e.std_error - sqrt(5.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!((e.n, e.censored, e.master_seed), (4, 0, 9));
        let s = vec![Sample { value: f64::INFINITY, overflow: true }, Sample { value: 1.0, overflow: true }];
        let e = MonteCarloEstimate::from_samples(&s, 0);
        assert_eq!((e.n, e.censored, e.mean), (1, 2, 1.0));
        assert!(e.std_error.is_nan());
    }

    #[test]
    fn datum_properties() {
        let d = build_counterexample_datum(2.0, 0.05, 30.0).unwrap();
        assert!((d.x_factor_integral(0.0, 1.0).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(d.u02(0.0), 1.0);
        assert!(d.u01(1e-12) < 1e-6);
        assert_eq!(d.u01(-1.0), 0.0);
        for k in 0..40 {
            let x = 0.5 * powf(10.0, -(k as f64) / 8.0);
            let ratio = d.u01_prime(x) / powf(x, 0.05 - 0.5);
            assert!((ratio - 1.0).abs() < 1e-12);
        }
        assert!(build_counterexample_datum(2.0, 0.5, 30.0).is_err());
        assert!(build_counterexample_datum(0.5, 0.05, 30.0).is_err());
        assert_eq!(d.u02(-30.0), 0.0);
        assert_eq!(d.u02(20.0), 0.0);
        assert_eq!(d.u01(45.0), 0.0);
        // derivatives against central differences
        for &x in &[0.3, 5.0, 31.0, 37.5, 44.0] {
            let h = 1e-6;
            let fd = (d.u01(x + h) - d.u01(x - h)) / (2.0 * h);
            assert!((fd - d.u01_prime(x)).abs() < 1e-6 * (1.0 + fd.abs()), "{x}");
        }
        for &y in &[-25.0, -21.0, 0.0, 12.0, 17.0] {
            let h = 1e-6;
            let fd = (d.u02(y + h) - d.u02(y - h)) / (2.0 * h);
            assert!((fd - d.u02_prime(y)).abs() < 1e-6, "{y}");
        }
        // sup-norm of ∇u0 finite energy: ∫|u01'|^2 over (0, 1] closed form vs quadrature
        let q = adaptive(|x| d.u01_prime(x) * d.u01_prime(x), 1e-9, 1.0, 1e-12, 1e-10, 2000);
        assert!((q - d.x_factor_integral(1e-9, 1.0).unwrap()).abs() < 1e-6);
        assert!((default_support_radius(0.5, 0.05, 1.0).unwrap() - 30.0).abs() < 1e-12);
    }

    #[test]
    fn zero_drift_moment_is_exact() {
        let g = make_graded_grid(1.0, 16, None, 1.0).unwrap();
        let spec = PathSpec { base: g, refinements: 0 };
        let z = DriftField::zero(2);
        for r in [1.0, 2.0, 3.5] {
            let e = mc_inverse_gradient_moment(&z, r, 2.0, MomentGrid { points_per_axis: 5, eval_times: 4 }, &spec, 8, 1, &Serial).unwrap();
            assert!((e.mean - powf(sqrt(2.0), r)).abs() < 1e-12);
            assert_eq!(e.std_error, 0.0);
        }
    }

    #[test]
    fn sobolev_at_time_zero_matches_quadrature() {
        let d = build_counterexample_datum(2.0, 0.05, 8.0).unwrap();
        let b = counterexample_drift(0.5, 0.05, 1.0).unwrap();
        let spec = PathSpec { base: make_graded_grid(1.0, 32, Some(1.0), 2.0).unwrap(), refinements: 0 };
        let e = mc_sobolev_norm(&d, &b, 0.0, 8.0, &[0.01], SobolevQuadrature::default(), &spec, 2, 0, &Serial).unwrap();
        // separable oracle: ∫u01'^2 ∫u02^2 + ∫u01^2 ∫u02'^2 over the box
        let ax1 = adaptive(|x| d.u01_prime(x).powi(2), 0.01, 8.0, 1e-12, 1e-11, 4000);
        let ax0 = adaptive(|x| d.u01(x).powi(2), 0.01, 8.0, 1e-12, 1e-11, 4000);
        let ay0 = adaptive(|y| d.u02(y).powi(2), -8.0, 8.0, 1e-12, 1e-11, 4000);
        let ay1 = adaptive(|y| d.u02_prime(y).powi(2), -8.0, 8.0, 1e-12, 1e-11, 4000);
        let oracle = ax1 * ay0 + ax0 * ay1;
        assert!((e[0].mean - oracle).abs() < 0.01 * oracle, "{} {}", e[0].mean, oracle);
        // the [δ, 1] part of the x-factor is closed form
        let part = d.x_factor_integral(0.01, 1.0).unwrap();
        let q = adaptive(|x| d.u01_prime(x).powi(2), 0.01, 1.0, 1e-13, 1e-12, 4000);
        assert!((part - q).abs() < 1e-9);
    }

    #[test]
    fn sobolev_zero_drift_is_translation_invariant() {
        let d = build_counterexample_datum(2.0, 0.05, 8.0).unwrap();
        let z = DriftField::zero(2);
        let spec = PathSpec { base: make_graded_grid(1.0, 16, None, 1.0).unwrap(), refinements: 0 };
        let q = SobolevQuadrature::default();
        let at0 = mc_sobolev_norm(&d, &z, 0.0, 16.0, &[0.02], q, &spec, 2, 0, &Serial).unwrap()[0].mean;
        let at1 = mc_sobolev_norm(&d, &z, 1.0, 16.0, &[0.02], q, &spec, 20, 5, &Serial).unwrap()[0];
        assert!((at1.mean - at0).abs() <= 3.0 * at1.std_error + 1e-6 * at0, "{} {}", at1.mean, at0);
    }

    #[test]
    fn sobolev_deltas_are_monotone() {
        let d = build_counterexample_datum(2.0, 0.05, 8.0).unwrap();
        let b = counterexample_drift(0.5, 0.05, 1.0).unwrap();
        let spec = PathSpec { base: make_graded_grid(1.0, 128, Some(1.0), 2.0).unwrap(), refinements: 0 };
        let e = mc_sobolev_norm(&d, &b, 1.0, 8.0, &[0.04, 0.01, 0.02], SobolevQuadrature::default(), &spec, 3, 4, &Serial).unwrap();
        assert!(e[1].mean > e[2].mean && e[2].mean > e[0].mean);
        assert!(mc_sobolev_norm(&d, &b, 1.0, 8.0, &[2.0], SobolevQuadrature::default(), &spec, 3, 4, &Serial).is_err());
    }

    #[test]
    fn indicator_limits_and_step_fixture() {
        // increment variance 1e-6 with x ≥ 1 + R/3: support misses the mass
        let v = exact_indicator_expectation(1.0 + 10.0 / 3.0, 1.0 - 1e-6, 1.0, 10.0, 0.5).unwrap();
        assert!(v.abs() < 1e-12);
        // step fixture vs an independent 2D tensor quadrature
        let (x, s, t1, r) = (0.3, 0.5, 1.0, 2.0);
        let step = step_indicator_expectation(x, s, t1, r).unwrap();
        let gl = GaussLegendre::new(40);
        let mut ys: Vec<f64> = (0..=40).map(|k| -8.0 * sqrt(s) + 16.0 * sqrt(s) * k as f64 / 40.0).collect();
        // kinks of the inner integral
        ys.extend([x - r / 3.0, r / 3.0 - 1.0 + x, -r / 3.0 + x - 1.0, r / 3.0 + x]);
        ys.sort_by(f64::total_cmp);
        let oracle = gl.integrate_cells(&ys, |y| {
            // z ∈ (-x, 1-x) ∩ (-R/3 - y, R/3 - y)
            let lo = (-x).max(-r / 3.0 - y);
            let hi = (1.0 - x).min(r / 3.0 - y);
            if hi <= lo {
                return 0.0;
            }
            gaussian_density(y, s) * gl.integrate(lo, hi, |z| gaussian_density(z, t1 - s))
        });
        assert!((step - oracle).abs() < 1e-6, "{step} {oracle}");
        assert!(exact_indicator_expectation(0.1, 0.0, 1.0, 10.0, 0.5).is_err());
    }

    #[test]
    fn indicator_matches_tensor_quadrature() {
        let (x, s, t1, r, a) = (0.3, 0.5, 1.0, 10.0, 0.5);
        let v = exact_indicator_expectation(x, s, t1, r, a).unwrap();
        // oracle: 2D in (y, w) with w = x + z, singular weight handled by w = u²
        let gl = GaussLegendre::new(30);
        let ys: Vec<f64> = (0..=30).map(|k| -9.0 * sqrt(s) + 18.0 * sqrt(s) * k as f64 / 30.0).collect();
        let us: Vec<f64> = (0..=30).map(|k| k as f64 / 30.0).collect();
        let oracle = gl.integrate_cells(&ys, |y| {
            gaussian_density(y, s)
                * gl.integrate_cells(&us, |u| {
                    let w = u * u;
                    let z = w - x;
                    if (y + z).abs() > r / 3.0 {
                        return 0.0;
                    }
                    // g'(w) dw = a w^{a-1} 2u du = du for a = 1/2
                    gaussian_density(z, t1 - s)
                })
        });
        assert!((v - oracle).abs() < 1e-8, "{v} {oracle}");
    }

    #[test]
    fn indicator_mc_agrees() {
        let e = mc_indicator_expectation(0.3, 0.5, 1.0, 10.0, 0.7, 200_000, 17, &Serial).unwrap();
        let v = exact_indicator_expectation(0.3, 0.5, 1.0, 10.0, 0.7).unwrap();
        assert!((e.mean - v).abs() < 4.0 * e.std_error, "{} {} {}", e.mean, v, e.std_error);
    }

    #[test]
    fn incomplete_gamma_values() {
        // Γ_upper(1, z) = e^{-z}; Γ_upper(1/2, z) = √π erfc(√z)
        for &z in &[0.0, 0.3, 1.0, 4.5] {
            assert!((upper_incomplete_gamma(1.0, z).unwrap() - exp(-z)).abs() < 1e-12);
            let e = sqrt(core::f64::consts::PI) * crate::math::erfc(sqrt(z));
            assert!((upper_incomplete_gamma(0.5, z).unwrap() - e).abs() < 1e-10);
        }
        let g = upper_incomplete_gamma(0.05, 0.0).unwrap();
        assert!((g - crate::math::tgamma(0.05)).abs() < 1e-9 * g);
        // Φ·x^{2ε} increases toward Γ(ε) and Φ is decreasing
        let xs = log_spaced(1e-4, 3.0, 30);
        let phis: Vec<f64> = xs.iter().map(|&x| incomplete_gamma_shape(x, 1.0, 0.05).unwrap()).collect();
        assert!(phis.windows(2).all(|w| w[1] < w[0]));
        let scaled: Vec<f64> = xs.iter().zip(&phis).map(|(x, p)| p * powf(*x, 0.1)).collect();
        assert!(scaled.windows(2).all(|w| w[1] < w[0]) && scaled[0] < g);
        // lower incomplete gamma series closes the gap to Γ(ε)
        for (&x, &sc) in xs.iter().zip(&scaled).take(10) {
            let z = x * x;
            let mut term = 1.0;
            let mut series = 0.0;
            for k in 0..30 {
                series += term / (0.05 + k as f64);
                term *= -z / (k as f64 + 1.0);
            }
            let lower = powf(z, 0.05) * series;
            assert!((sc + lower - g).abs() < 1e-9 * g);
        }
    }

    #[test]
    fn lower_bound_positive_with_bounded_ratio() {
        let xs = log_spaced(1e-3, 1e-1, 5);
        let fit = lower_bound_consistency(&xs, 1.0, 0.5, 0.05, 10.0).unwrap();
        assert!(fit.c > 0.0);
        assert!(fit.ratio_spread() < 10.0, "{}", fit.ratio_spread());
        assert!(lower_bound_consistency(&[2.0], 1.0, 0.5, 0.05, 10.0).is_err());
    }

    #[test]
    fn estimators_are_deterministic() {
        let a = mc_indicator_expectation(0.2, 0.3, 1.0, 10.0, 0.6, 1000, 3, &Serial).unwrap();
        let b = mc_indicator_expectation(0.2, 0.3, 1.0, 10.0, 0.6, 1000, 3, &Serial).unwrap();
        assert_eq!(a, b);
    }
}
