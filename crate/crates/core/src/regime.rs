//! Drift fields and the `(q, α, d)` regime classification.
//!
//! A drift `b ∈ L^q(0,T; C^α_b)` yields strong solutions with bounded
//! gradient moments when `2/q < α`; for `2/q > α + 1` and `d ≥ 2` the shear
//! drift `b(t,x,y) = (0, f(t)g(x))` produces solutions outside `W^{1,p}_loc`.
//! Between the two thresholds nothing is claimed.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::math::{exp, powf, sqrt};
use crate::quad::GaussLegendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegimeLabel {
    StrongExistence,
    Indeterminate,
    NonExistence,
}

impl RegimeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeLabel::StrongExistence => "StrongExistence",
            RegimeLabel::Indeterminate => "Indeterminate",
            RegimeLabel::NonExistence => "NonExistence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeClassification {
    pub label: RegimeLabel,
    pub two_over_q: f64,
    /// `α`
    pub threshold_low: f64,
    /// `α + 1`
    pub threshold_high: f64,
}

/// Classifies `(q, α, d)`; `q = f64::INFINITY` is allowed and gives `2/q = 0`.
/// Both boundaries are strict, so `2/q = α` and `2/q = α + 1` are
/// `Indeterminate`.
pub fn classify_regime(q: f64, alpha: f64, d: usize) -> Result<RegimeClassification> {
    if !(q >= 1.0) {
        return Err(invalid("q", "must lie in [1, ∞]"));
    }
    check_alpha(alpha)?;
    if d == 0 {
        return Err(invalid("d", "must be positive"));
    }
    let two_over_q = if q.is_infinite() { 0.0 } else { 2.0 / q };
    let label = if two_over_q < alpha {
        RegimeLabel::StrongExistence
    } else if two_over_q > alpha + 1.0 && d >= 2 {
        RegimeLabel::NonExistence
    } else {
        RegimeLabel::Indeterminate
    };
    Ok(RegimeClassification { label, two_over_q, threshold_low: alpha, threshold_high: alpha + 1.0 })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid("alpha", "must lie in (0, 1)"))
    }
}

/// `g(x) = x^α` on `(0,1)`, `1` for `x ≥ 1`, `0` for `x ≤ 0`.
#[inline]
pub fn eval_g(x: f64, alpha: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        powf(x, alpha)
    }
}

/// `g'(x) = α x^{α-1}` on `(0,1)`; zero elsewhere, including the kinks.
#[inline]
pub fn eval_g_prime(x: f64, alpha: f64) -> f64 {
    if x > 0.0 && x < 1.0 {
        alpha * powf(x, alpha - 1.0)
    } else {
        0.0
    }
}

/// Exponent `κ = (α+1)/2 + ε` of the time singularity.
#[inline]
pub fn singularity_exponent(alpha: f64, eps: f64) -> f64 {
    0.5 * (alpha + 1.0) + eps
}

/// `f(t) = (t1 - t)^{-κ}` on `[0, t1)`, zero otherwise.  Returns `+∞` at
/// `t = t1` exactly; callers integrate `f` in closed form instead.
pub fn eval_f(t: f64, t1: f64, alpha: f64, eps: f64) -> f64 {
    if t == t1 {
        f64::INFINITY
    } else if t >= 0.0 && t < t1 {
        powf(t1 - t, -singularity_exponent(alpha, eps))
    } else {
        0.0
    }
}

/// `h(t) = t^{-κ}` on `(0, T]`, zero otherwise; `+∞` at `t = 0`.
pub fn eval_h(t: f64, alpha: f64, eps: f64, horizon: f64) -> f64 {
    if t == 0.0 {
        f64::INFINITY
    } else if t > 0.0 && t <= horizon {
        powf(t, -singularity_exponent(alpha, eps))
    } else {
        0.0
    }
}

/// Which end the power-law time profile blows up at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileKind {
    /// `f`: singular as `t ↑ t1`, zero after.
    Terminal { t1: f64 },
    /// `h`: singular as `t ↓ 0`, zero after `horizon`.
    Initial { horizon: f64 },
}

/// Power-law time factor of the shear drift with exact segment integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerProfile {
    pub kind: ProfileKind,
    pub alpha: f64,
    pub eps: f64,
}

impl PowerProfile {
    pub fn new(kind: ProfileKind, alpha: f64, eps: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(eps > 0.0) {
            return Err(invalid("eps", "must be positive"));
        }
        if eps >= 0.5 * (1.0 - alpha) {
            return Err(invalid("eps", "must be below (1 - alpha)/2"));
        }
        match kind {
            ProfileKind::Terminal { t1 } if !(t1 > 0.0) => {
                return Err(invalid("t1", "must be positive"))
            }
            ProfileKind::Initial { horizon } if !(horizon > 0.0) => {
                return Err(invalid("horizon", "must be positive"))
            }
            _ => {}
        }
        Ok(Self { kind, alpha, eps })
    }

    pub fn kappa(&self) -> f64 {
        singularity_exponent(self.alpha, self.eps)
    }

    /// `β = 1 - κ = (1-α)/2 - ε`, the exponent of the antiderivative.
    pub fn beta(&self) -> f64 {
        1.0 - self.kappa()
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.kind {
            ProfileKind::Terminal { t1 } => eval_f(t, t1, self.alpha, self.eps),
            ProfileKind::Initial { horizon } => eval_h(t, self.alpha, self.eps, horizon),
        }
    }

    pub fn singular_time(&self) -> f64 {
        match self.kind {
            ProfileKind::Terminal { t1 } => t1,
            ProfileKind::Initial { .. } => 0.0,
        }
    }

    /// Exact `∫_a^b φ(s) ds` for `a ≤ b`.
    pub fn segment_integral(&self, a: f64, b: f64) -> f64 {
        let beta = self.beta();
        match self.kind {
            ProfileKind::Terminal { t1 } => {
                let lo = a.max(0.0);
                let hi = b.min(t1);
                if hi <= lo {
                    return 0.0;
                }
                (powf(t1 - lo, beta) - powf(t1 - hi, beta)) / beta
            }
            ProfileKind::Initial { horizon } => {
                let lo = a.max(0.0);
                let hi = b.min(horizon);
                if hi <= lo {
                    return 0.0;
                }
                (powf(hi, beta) - powf(lo, beta)) / beta
            }
        }
    }

    /// `∫ φ` over the whole support: `t1^β/β` (resp. `T^β/β`).  Coincides
    /// with `2/(1-α-2ε)·t1^{(1-α-2ε)/2}`, the bound on `∫ f g(·) ds`.
    pub fn total_mass(&self) -> f64 {
        let s = match self.kind {
            ProfileKind::Terminal { t1 } => t1,
            ProfileKind::Initial { horizon } => horizon,
        };
        powf(s, self.beta()) / self.beta()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriftKind {
    Zero,
    Constant(Vec<f64>),
    /// `b(x) = A x`, `A` row-major `d×d`.
    Linear(Vec<f64>),
    /// `b_i(x) = a_i exp(-|x - c|² / (2w²))`.
    SmoothBump { amplitude: Vec<f64>, center: Vec<f64>, width: f64 },
    /// `b(t,x,y) = (0, φ(t) g(x))` in `d = 2`.
    Shear(PowerProfile),
}

/// Time–space vector field with regularity metadata.
///
/// `q_exponent` is the temporal integrability exponent; for the shear drift
/// it is the supremum `1/κ` of admissible `q` (every `q < 1/κ` works).
#[derive(Debug, Clone, PartialEq)]
pub struct DriftField {
    dim: usize,
    kind: DriftKind,
    q_exponent: f64,
    alpha: f64,
    horizon: f64,
}

impl DriftField {
    pub fn zero(dim: usize) -> Self {
        Self { dim, kind: DriftKind::Zero, q_exponent: f64::INFINITY, alpha: 0.99, horizon: 1.0 }
    }

    pub fn constant(c: Vec<f64>) -> Self {
        Self {
            dim: c.len(),
            kind: DriftKind::Constant(c),
            q_exponent: f64::INFINITY,
            alpha: 0.99,
            horizon: 1.0,
        }
    }

    /// Unbounded in space, so outside `C^α_b`; kept for calculus fixtures.
    pub fn linear(dim: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() != dim * dim {
            return Err(crate::Error::DimensionMismatch { expected: dim * dim, got: a.len() });
        }
        Ok(Self { dim, kind: DriftKind::Linear(a), q_exponent: f64::INFINITY, alpha: 0.99, horizon: 1.0 })
    }

    pub fn smooth_bump(amplitude: Vec<f64>, center: Vec<f64>, width: f64, alpha: f64) -> Result<Self> {
        if amplitude.len() != center.len() {
            return Err(crate::Error::DimensionMismatch { expected: amplitude.len(), got: center.len() });
        }
        if !(width > 0.0) {
            return Err(invalid("width", "must be positive"));
        }
        check_alpha(alpha)?;
        Ok(Self {
            dim: amplitude.len(),
            kind: DriftKind::SmoothBump { amplitude, center, width },
            q_exponent: f64::INFINITY,
            alpha,
            horizon: 1.0,
        })
    }

    fn shear(profile: PowerProfile, horizon: f64) -> Self {
        Self {
            dim: 2,
            q_exponent: 1.0 / profile.kappa(),
            alpha: profile.alpha,
            kind: DriftKind::Shear(profile),
            horizon,
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn kind(&self) -> &DriftKind {
        &self.kind
    }
    pub fn q_exponent(&self) -> f64 {
        self.q_exponent
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn profile(&self) -> Option<&PowerProfile> {
        match &self.kind {
            DriftKind::Shear(p) => Some(p),
            _ => None,
        }
    }

    pub fn singular_times(&self) -> Vec<f64> {
        match &self.kind {
            DriftKind::Shear(p) => vec![p.singular_time()],
            _ => Vec::new(),
        }
    }

    /// Lower-triangular Jacobian structure (coordinate `i` depends only on
    /// coordinates `≤ i`), which permits coordinate-wise inversion.
    pub fn is_triangular(&self) -> bool {
        matches!(self.kind, DriftKind::Zero | DriftKind::Constant(_) | DriftKind::Shear(_))
    }

    pub fn regime(&self) -> Result<RegimeClassification> {
        classify_regime(self.q_exponent, self.alpha, self.dim)
    }

    /// `b(t, x)` into `out`.
    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            DriftKind::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            DriftKind::Constant(c) => out.copy_from_slice(c),
            DriftKind::Linear(a) => {
                let d = self.dim;
                for i in 0..d {
                    out[i] = (0..d).map(|j| a[i * d + j] * x[j]).sum();
                }
            }
            DriftKind::SmoothBump { amplitude, center, width } => {
                let e = bump_envelope(x, center, *width);
                for (o, a) in out.iter_mut().zip(amplitude) {
                    *o = a * e;
                }
            }
            DriftKind::Shear(p) => {
                out[0] = 0.0;
                let phi = p.eval(t);
                let g = eval_g(x[0], p.alpha);
                out[1] = if g == 0.0 { 0.0 } else { phi * g };
            }
        }
    }

    /// Spatial Jacobian `∂b_i/∂x_j` (row-major) at `(t, x)`.
    pub fn spatial_gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|o| *o = 0.0);
        match &self.kind {
            DriftKind::Zero | DriftKind::Constant(_) => {}
            DriftKind::Linear(a) => out.copy_from_slice(a),
            DriftKind::SmoothBump { amplitude, center, width } => {
                let e = bump_envelope(x, center, *width);
                let w2 = width * width;
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = -amplitude[i] * e * (x[j] - center[j]) / w2;
                    }
                }
            }
            DriftKind::Shear(p) => {
                let gp = eval_g_prime(x[0], p.alpha);
                out[2] = if gp == 0.0 { 0.0 } else { p.eval(t) * gp };
            }
        }
    }

    pub fn divergence(&self, t: f64, x: &[f64]) -> Option<f64> {
        let d = self.dim;
        match &self.kind {
            DriftKind::Zero | DriftKind::Constant(_) | DriftKind::Shear(_) => Some(0.0),
            DriftKind::Linear(a) => Some((0..d).map(|i| a[i * d + i]).sum()),
            DriftKind::SmoothBump { .. } => {
                let mut j = vec![0.0; d * d];
                self.spatial_gradient(t, x, &mut j);
                Some((0..d).map(|i| j[i * d + i]).sum())
            }
        }
    }

    /// `∫_{t0}^{t1} b(s, x) ds` with `x` frozen: exact in time for every kind.
    pub fn time_increment(&self, t0: f64, t1: f64, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            DriftKind::Shear(p) => {
                out[0] = 0.0;
                let g = eval_g(x[0], p.alpha);
                out[1] = if g == 0.0 { 0.0 } else { g * p.segment_integral(t0, t1) };
            }
            _ => {
                self.eval(t0, x, out);
                let dt = t1 - t0;
                out.iter_mut().for_each(|o| *o *= dt);
            }
        }
    }

    /// `∫_{t0}^{t1} ∇b(s, x) ds` with `x` frozen.
    pub fn gradient_increment(&self, t0: f64, t1: f64, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            DriftKind::Shear(p) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let gp = eval_g_prime(x[0], p.alpha);
                out[2] = if gp == 0.0 { 0.0 } else { gp * p.segment_integral(t0, t1) };
            }
            _ => {
                self.spatial_gradient(t0, x, out);
                let dt = t1 - t0;
                out.iter_mut().for_each(|o| *o *= dt);
            }
        }
    }

    /// `sup_x |b(t, x)|` (Euclidean), known in closed form for each kind.
    pub fn sup_norm(&self, t: f64) -> f64 {
        match &self.kind {
            DriftKind::Zero => 0.0,
            DriftKind::Constant(c) => sqrt(c.iter().map(|v| v * v).sum()),
            DriftKind::Linear(a) => {
                if a.iter().all(|v| *v == 0.0) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            DriftKind::SmoothBump { amplitude, .. } => sqrt(amplitude.iter().map(|v| v * v).sum()),
            DriftKind::Shear(p) => p.eval(t),
        }
    }
}

impl DriftField {
    /// `sup_x |b(anchor + offset, ·)|`, evaluated from the offset when the
    /// anchor is the singular time so tiny offsets keep full precision.
    pub fn sup_norm_offset(&self, anchor: f64, offset: f64) -> f64 {
        if let DriftKind::Shear(p) = &self.kind {
            if anchor == p.singular_time() && offset != 0.0 {
                let t = anchor + offset;
                let inside = match p.kind {
                    ProfileKind::Terminal { .. } => offset < 0.0 && t >= 0.0,
                    ProfileKind::Initial { horizon } => offset > 0.0 && t <= horizon,
                };
                return if inside { powf(offset.abs(), -p.kappa()) } else { 0.0 };
            }
        }
        self.sup_norm(anchor + offset)
    }
}

fn bump_envelope(x: &[f64], center: &[f64], width: f64) -> f64 {
    let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
    exp(-0.5 * r2 / (width * width))
}

/// Shear drift `b = (0, f(t)g(x))` with `f` singular at `t1`; horizon `t1`.
pub fn counterexample_drift(alpha: f64, eps: f64, t1: f64) -> Result<DriftField> {
    let p = PowerProfile::new(ProfileKind::Terminal { t1 }, alpha, eps)?;
    Ok(DriftField::shear(p, t1))
}

/// Shear drift with `h(t) = t^{-κ}` on `(0, T]`.
pub fn counterexample_h_drift(alpha: f64, eps: f64, horizon: f64) -> Result<DriftField> {
    let p = PowerProfile::new(ProfileKind::Initial { horizon }, alpha, eps)?;
    Ok(DriftField::shear(p, horizon))
}

/// Result of [`drift_q_norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QNorm {
    /// Value at the finest level and the last refinement ratio.
    Converged { value: f64, last_ratio: f64 },
    /// Both successive refinement ratios exceeded the growth factor.
    Diverged { last_value: f64, growth: f64 },
}

impl QNorm {
    pub fn value(&self) -> Option<f64> {
        match self {
            QNorm::Converged { value, .. } => Some(*value),
            QNorm::Diverged { .. } => None,
        }
    }
}

/// Default growth factor that marks divergence across two mesh doublings.
pub const DIVERGENCE_GROWTH: f64 = 1.5;
const Q_NORM_GRADING: f64 = 4.0;

/// Graded-mesh quadrature of `∫₀ᵀ (sup_x |b(t,x)|)^q dt`.
///
/// Evaluated with `n_t`, `2n_t` and `4n_t` cells per singular-adjacent piece,
/// four Gauss points per cell; cells cluster toward each singular time with
/// grading exponent 4.  Divergence is reported when both refinement ratios
/// exceed `growth_factor`.
pub fn drift_q_norm(field: &DriftField, q: f64, n_t: usize, growth_factor: f64) -> Result<QNorm> {
    if !(q >= 1.0) || q.is_infinite() {
        return Err(invalid("q", "must be finite and ≥ 1"));
    }
    if n_t < 2 {
        return Err(invalid("n_t", "needs at least 2 nodes"));
    }
    let gl = GaussLegendre::new(4);
    let levels = [n_t, 2 * n_t, 4 * n_t];
    let mut vals = [0.0; 3];
    for (v, &n) in vals.iter_mut().zip(&levels) {
        *v = graded_time_integral(field, &gl, n, |anchor, offset| {
            let m = field.sup_norm_offset(anchor, offset);
            if m == 0.0 {
                0.0
            } else {
                powf(m, q)
            }
        });
        if v.is_infinite() {
            return Ok(QNorm::Diverged { last_value: *v, growth: f64::INFINITY });
        }
    }
    let r1 = ratio(vals[1], vals[0]);
    let r2 = ratio(vals[2], vals[1]);
    if r1 > growth_factor && r2 > growth_factor {
        Ok(QNorm::Diverged { last_value: vals[2], growth: r2 })
    } else {
        Ok(QNorm::Converged { value: vals[2], last_ratio: r2 })
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

fn graded_time_integral<F: Fn(f64, f64) -> f64>(field: &DriftField, gl: &GaussLegendre, n: usize, f: F) -> f64 {
    let horizon = field.horizon();
    let mut cuts = vec![0.0];
    for s in field.singular_times() {
        if s > 0.0 && s < horizon {
            cuts.push(s);
        }
    }
    cuts.push(horizon);
    let sing = field.singular_times();
    let is_sing = |t: f64| sing.contains(&t);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = b - a;
        match (is_sing(a), is_sing(b)) {
            (false, false) => {
                let cells: Vec<f64> = (0..=n).map(|k| a + len * k as f64 / n as f64).collect();
                total += gl.integrate_cells(&cells, |t| f(t, 0.0));
            }
            (_, true) => total += gl.integrate_cells(&singular_breaks(len, n), |r| f(b, -r)),
            (true, false) => total += gl.integrate_cells(&singular_breaks(len, n), |r| f(a, r)),
        }
    }
    total
}

/// Distances from a singular endpoint: polynomially graded cells, with the
/// first cell split into 60 halving levels and every later cell whose end
/// ratio exceeds 2 split geometrically.
fn singular_breaks(len: f64, n: usize) -> Vec<f64> {
    let graded = crate::quad::graded_breaks(len, n, Q_NORM_GRADING);
    let mut breaks = crate::quad::geometric_breaks(graded[1], 60, 0.5);
    for w in graded[1..].windows(2) {
        let mut a = w[0];
        while w[1] > 2.0 * a {
            a *= 2.0;
            breaks.push(a);
        }
        breaks.push(w[1]);
    }
    breaks
}
