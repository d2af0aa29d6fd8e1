//! The characteristic flow `dX = b(t,X)dt + dB`, closed forms for the shear
//! counterexample, numeric inversion and the solution `u = u0 ∘ X⁻¹`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::flow_calculus::flow_map_with_jacobian;
use crate::math::{sqrt, solve};
use crate::paths::{singular_time_integral, BrownianPath, TimeGrid};
use crate::regime::{eval_g, DriftField, DriftKind, PowerProfile};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    grid: TimeGrid,
    dim: usize,
    states: Vec<f64>,
    driving_seed: u64,
}

impl FlowTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn driving_seed(&self) -> u64 {
        self.driving_seed
    }
    pub fn start(&self) -> &[f64] {
        self.state(0)
    }
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }
    pub fn last(&self) -> &[f64] {
        self.state(self.grid.len() - 1)
    }
    pub fn states(&self) -> &[f64] {
        &self.states
    }
}

pub(crate) fn check_compatible(drift: &DriftField, path: &BrownianPath, x: &[f64]) -> Result<()> {
    if drift.dim() != path.dim() {
        return Err(Error::DimensionMismatch { expected: drift.dim(), got: path.dim() });
    }
    if x.len() != drift.dim() {
        return Err(Error::DimensionMismatch { expected: drift.dim(), got: x.len() });
    }
    for s in drift.singular_times() {
        if !path.grid().resolves(s) {
            return Err(Error::UngradedGrid { singular_time: s });
        }
    }
    Ok(())
}

/// One Euler–Maruyama step `x ← x + ∫_{t_k}^{t_{k+1}} b(s, x) ds + ΔB_k`,
/// the time integral exact for the supported drift kinds.
#[inline]
pub(crate) fn euler_step(drift: &DriftField, path: &BrownianPath, k: usize, x: &mut [f64], scratch: &mut [f64]) {
    let nodes = path.grid().nodes();
    drift.time_increment(nodes[k], nodes[k + 1], x, scratch);
    for i in 0..x.len() {
        x[i] += scratch[i] + path.increment(k, i);
    }
}

/// Euler–Maruyama flow of `x0` over the whole grid of `path`.
pub fn integrate_flow(drift: &DriftField, path: &BrownianPath, x0: &[f64]) -> Result<FlowTrajectory> {
    integrate_flow_from(drift, path, 0, x0)
}

/// Flow started from `x` at node `start`; the trajectory lives on the grid
/// tail `nodes[start..]` (re-based so `states[0] = x`).
pub fn integrate_flow_from(drift: &DriftField, path: &BrownianPath, start: usize, x: &[f64]) -> Result<FlowTrajectory> {
    check_compatible(drift, path, x)?;
    let d = drift.dim();
    let n = path.grid().len();
    if start >= n {
        return Err(invalid("start", "beyond the grid"));
    }
    let mut states = Vec::with_capacity((n - start) * d);
    let mut cur = x.to_vec();
    let mut scratch = vec![0.0; d];
    states.extend_from_slice(&cur);
    for k in start..n - 1 {
        euler_step(drift, path, k, &mut cur, &mut scratch);
        states.extend_from_slice(&cur);
    }
    let grid = if start == 0 {
        path.grid().clone()
    } else {
        // shifted grid is only used for indexing the tail
        let t0 = path.grid().nodes()[start];
        let tail: Vec<f64> = path.grid().nodes()[start..].iter().map(|t| t - t0).collect();
        if tail.len() < 2 {
            TimeGrid::from_nodes(vec![0.0, f64::MIN_POSITIVE])?
        } else {
            TimeGrid::from_nodes(tail)?
        }
    };
    Ok(FlowTrajectory { grid, dim: d, states, driving_seed: path.seed() })
}

/// Endpoint `X(t_k, x0)` at node `k` without storing the trajectory.
pub fn flow_to(drift: &DriftField, path: &BrownianPath, x0: &[f64], k_end: usize) -> Result<Vec<f64>> {
    check_compatible(drift, path, x0)?;
    let mut cur = x0.to_vec();
    let mut scratch = vec![0.0; x0.len()];
    for k in 0..k_end {
        euler_step(drift, path, k, &mut cur, &mut scratch);
    }
    Ok(cur)
}

fn node_index(path: &BrownianPath, t: f64) -> Result<usize> {
    path.grid().index_of(t).ok_or(Error::TimeNotOnGrid { t })
}

/// `(x + B1(t), y + B2(t) + ∫₀ᵗ f(s) g(x + B1(s)) ds)`.
pub fn closed_form_flow(profile: &PowerProfile, path: &BrownianPath, p: [f64; 2], t: f64) -> Result<[f64; 2]> {
    if path.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: path.dim() });
    }
    let b = path.at(node_index(path, t)?);
    let alpha = profile.alpha;
    let i = singular_time_integral(path, profile, |z| eval_g(z, alpha), p[0], t)?;
    Ok([p[0] + b[0], p[1] + b[1] + i])
}

/// Pathwise inverse of [`closed_form_flow`]:
/// `(x - B1(t), y - B2(t) - ∫₀ᵗ f(s) g(x - B1(t) + B1(s)) ds)`.
pub fn closed_form_inverse(profile: &PowerProfile, path: &BrownianPath, p: [f64; 2], t: f64) -> Result<[f64; 2]> {
    if path.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: path.dim() });
    }
    let b = path.at(node_index(path, t)?);
    let x0 = p[0] - b[0];
    let alpha = profile.alpha;
    let i = singular_time_integral(path, profile, |z| eval_g(z, alpha), x0, t)?;
    Ok([x0, p[1] - b[1] - i])
}

/// Inverse in closed form when the drift admits one (zero, constant, shear).
pub fn closed_form_inverse_of(drift: &DriftField, path: &BrownianPath, y: &[f64], t: f64) -> Result<Vec<f64>> {
    let k = node_index(path, t)?;
    let b = path.at(k);
    match drift.kind() {
        DriftKind::Zero => Ok(y.iter().zip(b).map(|(y, b)| y - b).collect()),
        DriftKind::Constant(c) => Ok(y.iter().zip(b).zip(c).map(|((y, b), c)| y - b - c * t).collect()),
        DriftKind::Shear(p) => Ok(closed_form_inverse(p, path, [y[0], y[1]], t)?.to_vec()),
        _ => Err(Error::MissingCapability("closed-form inverse")),
    }
}

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_DAMPING: f64 = 0.5;

fn norm(v: &[f64]) -> f64 {
    sqrt(v.iter().map(|a| a * a).sum())
}

/// Solves `X(t, x) = y` for `x` with damped Newton on the Euler flow map,
/// Jacobians from the variational recursion.  Step lengths are halved
/// until the residual decreases; triangular drifts fall back to bisection
/// on each coordinate if Newton stalls.
pub fn inverse_flow_numeric(drift: &DriftField, path: &BrownianPath, y: &[f64], t: f64, tol: f64) -> Result<Vec<f64>> {
    check_compatible(drift, path, y)?;
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    let k_end = node_index(path, t)?;
    if k_end == 0 {
        return Ok(y.to_vec());
    }
    let d = y.len();
    let b = path.at(k_end);
    let mut x: Vec<f64> = y.iter().zip(b).map(|(y, b)| y - b).collect();
    let (fx, mut jac) = flow_map_with_jacobian(drift, path, &x, k_end);
    let mut res: Vec<f64> = fx.iter().zip(y).map(|(a, b)| a - b).collect();
    let mut r = norm(&res);
    let mut iterations = 0;
    while r > tol && iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let mut step = res.clone();
        if !solve(d, &jac, &mut step) {
            break;
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = x.iter().zip(&step).map(|(x, s)| x - lambda * s).collect();
            let (fc, jc) = flow_map_with_jacobian(drift, path, &cand, k_end);
            let rc: Vec<f64> = fc.iter().zip(y).map(|(a, b)| a - b).collect();
            let nc = norm(&rc);
            if nc < r {
                x = cand;
                jac = jc;
                res = rc;
                r = nc;
                accepted = true;
                break;
            }
            lambda *= NEWTON_DAMPING;
        }
        if !accepted {
            break;
        }
    }
    if r <= tol {
        return Ok(x);
    }
    if drift.is_triangular() {
        return bisect_triangular(drift, path, y, k_end, tol, x);
    }
    Err(Error::NonConvergence { iterations, residual: r })
}

/// Coordinate-wise bisection for flows whose `i`-th output depends only on
/// inputs `≤ i` and increases in input `i`.
fn bisect_triangular(
    drift: &DriftField,
    path: &BrownianPath,
    y: &[f64],
    k_end: usize,
    tol: f64,
    mut x: Vec<f64>,
) -> Result<Vec<f64>> {
    let d = y.len();
    let eval = |x: &[f64], i: usize| -> f64 { flow_to(drift, path, x, k_end).map(|v| v[i]).unwrap_or(f64::NAN) };
    for i in 0..d {
        let target = y[i];
        let mut lo = x[i] - 1.0;
        let mut hi = x[i] + 1.0;
        let mut probe = x.clone();
        let f_at = |v: f64, probe: &mut Vec<f64>| {
            probe[i] = v;
            eval(probe, i) - target
        };
        let mut widen = 1.0;
        while f_at(lo, &mut probe) > 0.0 && widen < 1e18 {
            lo -= widen;
            widen *= 2.0;
        }
        widen = 1.0;
        while f_at(hi, &mut probe) < 0.0 && widen < 1e18 {
            hi += widen;
            widen *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f_at(mid, &mut probe) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        x[i] = 0.5 * (lo + hi);
    }
    let fx = flow_to(drift, path, &x, k_end)?;
    let r = norm(&fx.iter().zip(y).map(|(a, b)| a - b).collect::<Vec<_>>());
    if r <= tol {
        Ok(x)
    } else {
        Err(Error::NonConvergence { iterations: NEWTON_MAX_ITER, residual: r })
    }
}

/// How `X⁻¹(t, ·)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InverseMethod {
    ClosedForm,
    Numeric { tol: f64 },
}

/// `u(t, ·) = u0 ∘ X⁻¹(t, ·)`.
#[derive(Debug, Clone)]
pub struct SolutionField<U> {
    pub u0: U,
    pub t: f64,
    pub inverse: InverseMethod,
}

pub(crate) fn invert(drift: &DriftField, path: &BrownianPath, y: &[f64], t: f64, method: InverseMethod) -> Result<Vec<f64>> {
    match method {
        InverseMethod::ClosedForm => closed_form_inverse_of(drift, path, y, t),
        InverseMethod::Numeric { tol } => inverse_flow_numeric(drift, path, y, t, tol),
    }
}

/// `u(t, x)`; exactly `u0(x)` at `t = 0`.
pub fn evaluate_solution<U: Fn(&[f64]) -> f64>(
    field: &SolutionField<U>,
    drift: &DriftField,
    path: &BrownianPath,
    x: &[f64],
) -> Result<f64> {
    if field.t == 0.0 {
        return Ok((field.u0)(x));
    }
    let z = invert(drift, path, x, field.t, field.inverse)?;
    Ok((field.u0)(&z))
}
