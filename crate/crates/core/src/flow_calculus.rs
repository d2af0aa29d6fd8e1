//! Spatial derivatives of the flow: variational recursion, finite-difference
//! cross-checks, the determinant identity and the chain rule for `∇u`.
//!
//! Matrices are row-major `d×d` with rows indexing outputs and columns
//! inputs, so the shear counterexample has its integral entry at `(2,1)`.
//! Norms of matrices are Frobenius norms throughout.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::flow::{check_compatible, euler_step, flow_to, invert, FlowTrajectory, InverseMethod};
use crate::math::{det, exp, identity, inverse, matmul};
use crate::paths::{singular_time_integral, BrownianPath, TimeGrid};
use crate::regime::{eval_g_prime, DriftField, DriftKind, PowerProfile};

/// Entries beyond this magnitude raise the overflow flag.
pub const OVERFLOW_THRESHOLD: f64 = 1e15;

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianPath {
    grid: TimeGrid,
    dim: usize,
    matrices: Vec<f64>,
    overflow: bool,
}

impl JacobianPath {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn matrix(&self, k: usize) -> &[f64] {
        let m = self.dim * self.dim;
        &self.matrices[k * m..(k + 1) * m]
    }
    pub fn last(&self) -> &[f64] {
        self.matrix(self.grid.len() - 1)
    }
    pub fn overflow(&self) -> bool {
        self.overflow
    }
}

fn exceeds(m: &[f64]) -> bool {
    m.iter().any(|v| !(v.abs() <= OVERFLOW_THRESHOLD))
}

/// `J_{k+1} = (I + ∫_{t_k}^{t_{k+1}} ∇b(s, X_k) ds) J_k`, `J_0 = I`.
pub fn propagate_jacobian(drift: &DriftField, traj: &FlowTrajectory) -> Result<JacobianPath> {
    let d = traj.dim();
    if drift.dim() != d {
        return Err(Error::DimensionMismatch { expected: drift.dim(), got: d });
    }
    let nodes = traj.grid().nodes();
    let n = nodes.len();
    let mut matrices = Vec::with_capacity(n * d * d);
    let mut j = identity(d);
    let mut g = vec![0.0; d * d];
    let mut next = vec![0.0; d * d];
    let mut overflow = false;
    matrices.extend_from_slice(&j);
    for k in 0..n - 1 {
        drift.gradient_increment(nodes[k], nodes[k + 1], traj.state(k), &mut g);
        step_jacobian(d, &g, &j, &mut next, 1.0);
        core::mem::swap(&mut j, &mut next);
        overflow |= exceeds(&j);
        matrices.extend_from_slice(&j);
    }
    Ok(JacobianPath { grid: traj.grid().clone(), dim: d, matrices, overflow })
}

/// `out = (I + sign·g) j`.
#[inline]
fn step_jacobian(d: usize, g: &[f64], j: &[f64], out: &mut [f64], sign: f64) {
    matmul(d, g, j, out);
    for (o, jv) in out.iter_mut().zip(j) {
        *o = jv + sign * *o;
    }
}

/// Endpoint and Jacobian of the Euler flow map `x ↦ X(t_k, x)`.
pub fn flow_map_with_jacobian(drift: &DriftField, path: &BrownianPath, x: &[f64], k_end: usize) -> (Vec<f64>, Vec<f64>) {
    let d = x.len();
    let nodes = path.grid().nodes();
    let mut cur = x.to_vec();
    let mut scratch = vec![0.0; d];
    let mut j = identity(d);
    let mut g = vec![0.0; d * d];
    let mut next = vec![0.0; d * d];
    for k in 0..k_end {
        drift.gradient_increment(nodes[k], nodes[k + 1], &cur, &mut g);
        step_jacobian(d, &g, &j, &mut next, 1.0);
        core::mem::swap(&mut j, &mut next);
        euler_step(drift, path, k, &mut cur, &mut scratch);
    }
    (cur, j)
}

/// Step `max(1e-4, 1e-6·|x|)` used for finite-difference Jacobians.
pub fn default_fd_step(x: &[f64]) -> f64 {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    (1e-6 * m).max(1e-4)
}

/// `default_fd_step`, shrunk for the shear drift to a tenth of the closest
/// approach of the trajectory's first coordinate to the kinks of `g` at 0
/// and 1, so the difference stencil never straddles one.
pub fn kink_aware_fd_step(drift: &DriftField, traj: &FlowTrajectory) -> f64 {
    let h = default_fd_step(traj.start());
    match drift.kind() {
        DriftKind::Shear(_) => {
            let d = traj.dim();
            let gap = traj
                .states()
                .chunks(d)
                .map(|x| x[0].abs().min((x[0] - 1.0).abs()))
                .fold(f64::INFINITY, f64::min);
            h.min(0.1 * gap)
        }
        _ => h,
    }
}

/// Central differences of the Euler flow at `t`, all evaluations driven by
/// the same path.
pub fn finite_difference_jacobian(drift: &DriftField, path: &BrownianPath, x: &[f64], t: f64, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(invalid("h", "must be positive"));
    }
    check_compatible(drift, path, x)?;
    let k_end = path.grid().index_of(t).ok_or(Error::TimeNotOnGrid { t })?;
    let d = x.len();
    let mut jac = vec![0.0; d * d];
    let mut xp = x.to_vec();
    for c in 0..d {
        xp[c] = x[c] + h;
        let fp = flow_to(drift, path, &xp, k_end)?;
        xp[c] = x[c] - h;
        let fm = flow_to(drift, path, &xp, k_end)?;
        xp[c] = x[c];
        for r in 0..d {
            jac[r * d + c] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// `max_k |det J_k - exp(Σ_{j<k} div b(t_j, X_j) Δt_j)|`.
pub fn determinant_identity_check(drift: &DriftField, traj: &FlowTrajectory, jac: &JacobianPath) -> Result<f64> {
    let d = traj.dim();
    let nodes = traj.grid().nodes();
    let mut integral = 0.0;
    let mut worst = 0.0f64;
    for k in 0..nodes.len() {
        if k > 0 {
            let div = drift
                .divergence(nodes[k - 1], traj.state(k - 1))
                .ok_or(Error::MissingCapability("divergence"))?;
            if div != 0.0 {
                integral += div * (nodes[k] - nodes[k - 1]);
            }
        }
        let dev = (det(d, jac.matrix(k)) - exp(integral)).abs();
        worst = worst.max(dev);
    }
    Ok(worst)
}

/// `[[1, 0], [∫₀ᵗ f(s) g'(x + B1(s)) ds, 1]]` for the shear flow.
pub fn closed_form_jacobian(profile: &PowerProfile, path: &BrownianPath, x: f64, t: f64) -> Result<[f64; 4]> {
    let a = profile.alpha;
    let c = singular_time_integral(path, profile, |z| eval_g_prime(z, a), x, t)?;
    Ok([1.0, 0.0, c, 1.0])
}

/// `∇X⁻¹(t, (x, y)) = [[1, 0], [-∫₀ᵗ f(s) g'(x - B1(t) + B1(s)) ds, 1]]`.
pub fn closed_form_inverse_jacobian(profile: &PowerProfile, path: &BrownianPath, x: f64, t: f64) -> Result<[f64; 4]> {
    let b1 = path.at_time(t)?[0];
    let a = profile.alpha;
    let c = singular_time_integral(path, profile, |z| eval_g_prime(z, a), x - b1, t)?;
    Ok([1.0, 0.0, -c, 1.0])
}

/// `∇X⁻¹(t, y)` from the closed form where available, otherwise as the
/// inverse of the forward Jacobian at the numeric preimage.
pub fn inverse_jacobian(drift: &DriftField, path: &BrownianPath, y: &[f64], t: f64, method: InverseMethod) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = y.len();
    let pre = invert(drift, path, y, t, method)?;
    let jinv = match (method, drift.kind()) {
        (InverseMethod::ClosedForm, DriftKind::Shear(p)) => closed_form_inverse_jacobian(p, path, y[0], t)?.to_vec(),
        (InverseMethod::ClosedForm, DriftKind::Zero | DriftKind::Constant(_)) => identity(d),
        _ => {
            let k = path.grid().index_of(t).ok_or(Error::TimeNotOnGrid { t })?;
            let (_, jf) = flow_map_with_jacobian(drift, path, &pre, k);
            inverse(d, &jf).ok_or(Error::NonConvergence { iterations: 0, residual: f64::INFINITY })?
        }
    };
    Ok((pre, jinv))
}

/// Gradient of `u = u0 ∘ X⁻¹` with its overflow flag.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionGradient {
    pub grad: Vec<f64>,
    pub overflow: bool,
}

/// `∇u(t, x) = ∇u0(X⁻¹(t,x)) · ∇X⁻¹(t,x)` (row vector times matrix).
/// `u0_grad(z, out)` writes `∇u0(z)`.
pub fn solution_gradient<G: Fn(&[f64], &mut [f64])>(
    u0_grad: G,
    drift: &DriftField,
    path: &BrownianPath,
    x: &[f64],
    t: f64,
    method: InverseMethod,
) -> Result<SolutionGradient> {
    let d = x.len();
    let mut g0 = vec![0.0; d];
    if t == 0.0 {
        u0_grad(x, &mut g0);
        return Ok(SolutionGradient { grad: g0, overflow: false });
    }
    let (pre, jinv) = inverse_jacobian(drift, path, x, t, method)?;
    u0_grad(&pre, &mut g0);
    let mut grad = vec![0.0; d];
    for (j, gj) in grad.iter_mut().enumerate() {
        *gj = (0..d).map(|i| g0[i] * jinv[i * d + j]).sum();
    }
    Ok(SolutionGradient { overflow: exceeds(&jinv), grad })
}

/// Backward Euler pass from node `k_end` to 0 for the time-reversed flow:
/// `Z_k = Z_{k+1} - ∫ b(s, Z_{k+1}) ds - ΔB_k`, `M_k = (I - ∫∇b(s, Z_{k+1})ds) M_{k+1}`.
/// Returns approximations of `X⁻¹(t, y)` and `∇X⁻¹(t, y)`.
pub fn backward_flow_with_jacobian(drift: &DriftField, path: &BrownianPath, y: &[f64], k_end: usize) -> (Vec<f64>, Vec<f64>) {
    let d = y.len();
    let nodes = path.grid().nodes();
    let mut z = y.to_vec();
    let mut m = identity(d);
    let mut g = vec![0.0; d * d];
    let mut next = vec![0.0; d * d];
    let mut inc = vec![0.0; d];
    for k in (0..k_end).rev() {
        drift.gradient_increment(nodes[k], nodes[k + 1], &z, &mut g);
        step_jacobian(d, &g, &m, &mut next, -1.0);
        core::mem::swap(&mut m, &mut next);
        drift.time_increment(nodes[k], nodes[k + 1], &z, &mut inc);
        for i in 0..d {
            z[i] -= inc[i] + path.increment(k, i);
        }
    }
    (z, m)
}
