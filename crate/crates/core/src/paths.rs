//! Time grids, Brownian paths and time-singular path integrals.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math::{powf, round, sqrt};
use crate::regime::PowerProfile;
use crate::rng::{normal, stream};

/// Strictly increasing nodes on `[0, T]`, optionally clustered toward one
/// singular time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    grading: f64,
    singular_point: Option<f64>,
    left_cells: usize,
}

impl TimeGrid {
    /// Grid from explicit nodes; they must start at 0 and increase strictly.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0.0 {
            return Err(invalid("nodes", "need at least two nodes starting at 0"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("nodes", "must be strictly increasing"));
        }
        let cells = nodes.len() - 1;
        Ok(Self { nodes, grading: 1.0, singular_point: None, left_cells: cells })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }
    pub fn end(&self) -> f64 {
        *self.nodes.last().expect("grid has nodes")
    }
    pub fn grading(&self) -> f64 {
        self.grading
    }
    pub fn singular_point(&self) -> Option<f64> {
        self.singular_point
    }

    /// Index of the node equal to `t` (up to `1e-13·T`).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-13 * self.end().max(1.0);
        let k = self.nodes.partition_point(|&s| s < t - tol);
        (k < self.nodes.len() && (self.nodes[k] - t).abs() <= tol).then_some(k)
    }

    /// Whether the grid refines toward `s` (or `s` lies outside its span).
    pub fn resolves(&self, s: f64) -> bool {
        if s < 0.0 || s > self.end() {
            return true;
        }
        match self.singular_point {
            Some(p) => (p - s).abs() <= 1e-13 * self.end().max(1.0),
            None => false,
        }
    }

    /// Same grading with twice the cells; contains every node of `self`.
    pub fn doubled(&self) -> Self {
        match self.singular_point {
            Some(s) if s > 0.0 && s < self.end() => {
                let right = self.steps() - self.left_cells;
                interior_grid(self.end(), s, 2 * self.left_cells, 2 * right, self.grading)
            }
            _ => {
                let mut g = make_graded_grid(self.end(), 2 * self.steps(), self.singular_point, self.grading)
                    .expect("parameters already validated");
                g.left_cells = g.steps();
                g
            }
        }
    }
}

/// `n + 1` nodes on `[0, T]`.  With a singular point `s` the map
/// `t_k = s - s(1 - k/n)^γ` (toward the right end) or its mirror is used;
/// an interior `s` splits the cells proportionally between the two sides.
pub fn make_graded_grid(t_end: f64, n: usize, singular_point: Option<f64>, gamma: f64) -> Result<TimeGrid> {
    if !(t_end > 0.0) {
        return Err(invalid("T", "must be positive"));
    }
    if n < 2 {
        return Err(invalid("n", "needs at least 2 steps"));
    }
    if !(gamma >= 1.0) {
        return Err(invalid("gamma", "must be ≥ 1"));
    }
    let uniform = |n: usize| -> Vec<f64> { (0..=n).map(|k| t_end * k as f64 / n as f64).collect() };
    let grid = match singular_point {
        None => TimeGrid { nodes: uniform(n), grading: gamma, singular_point: None, left_cells: n },
        Some(s) if !(0.0..=t_end).contains(&s) => {
            return Err(invalid("singular_point", "must lie in [0, T]"));
        }
        Some(s) if s == t_end => {
            let mut nodes: Vec<f64> =
                (0..=n).map(|k| t_end - t_end * powf(1.0 - k as f64 / n as f64, gamma)).collect();
            nodes[n] = t_end;
            TimeGrid { nodes, grading: gamma, singular_point: Some(s), left_cells: n }
        }
        Some(s) if s == 0.0 => {
            let nodes = (0..=n).map(|k| t_end * powf(k as f64 / n as f64, gamma)).collect();
            TimeGrid { nodes, grading: gamma, singular_point: Some(s), left_cells: n }
        }
        Some(s) => {
            let left = (round(n as f64 * s / t_end) as usize).clamp(1, n - 1);
            interior_grid(t_end, s, left, n - left, gamma)
        }
    };
    Ok(grid)
}

fn interior_grid(t_end: f64, s: f64, left: usize, right: usize, gamma: f64) -> TimeGrid {
    let mut nodes = Vec::with_capacity(left + right + 1);
    for k in 0..left {
        nodes.push(s - s * powf(1.0 - k as f64 / left as f64, gamma));
    }
    nodes.push(s);
    let len = t_end - s;
    for k in 1..=right {
        nodes.push(s + len * powf(k as f64 / right as f64, gamma));
    }
    nodes[left + right] = t_end;
    TimeGrid { nodes, grading: gamma, singular_point: Some(s), left_cells: left }
}

/// A `d`-dimensional Brownian trajectory sampled on a grid.  Values are
/// stored node-major: coordinate `i` at node `k` is `values[k * d + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
    seed: u64,
}

impl BrownianPath {
    /// Assembles a path from given node values; `values` must start at 0.
    pub fn from_values(grid: TimeGrid, dim: usize, values: Vec<f64>, seed: u64) -> Result<Self> {
        if values.len() != grid.len() * dim {
            return Err(Error::DimensionMismatch { expected: grid.len() * dim, got: values.len() });
        }
        if values[..dim].iter().any(|v| *v != 0.0) {
            return Err(invalid("values", "path must start at the origin"));
        }
        Ok(Self { grid, dim, values, seed })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `B(t_k)`.
    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// `B(t)` for `t` on the grid.
    pub fn at_time(&self, t: f64) -> Result<&[f64]> {
        let k = self.grid.index_of(t).ok_or(Error::TimeNotOnGrid { t })?;
        Ok(self.at(k))
    }

    /// `B(t_{k+1}) - B(t_k)` for coordinate `i`.
    #[inline]
    pub fn increment(&self, k: usize, i: usize) -> f64 {
        self.values[(k + 1) * self.dim + i] - self.values[k * self.dim + i]
    }

    /// Same path seen on a coarser grid whose nodes are all nodes of this one.
    pub fn restrict(&self, coarse: &TimeGrid) -> Result<Self> {
        let d = self.dim;
        let mut values = Vec::with_capacity(coarse.len() * d);
        for &t in coarse.nodes() {
            let k = self.grid.index_of(t).ok_or(Error::TimeNotOnGrid { t })?;
            values.extend_from_slice(self.at(k));
        }
        Ok(Self { grid: coarse.clone(), dim: d, values, seed: self.seed })
    }
}

/// Path with increments `N(0, Δt_k I)`; draw `(k, i)` uses counter `k·d + i`
/// on the increment stream of `seed`.
pub fn sample_brownian(d: usize, grid: &TimeGrid, seed: u64) -> Result<BrownianPath> {
    if d == 0 {
        return Err(invalid("d", "must be positive"));
    }
    let nodes = grid.nodes();
    let mut values = vec![0.0; nodes.len() * d];
    for k in 0..nodes.len() - 1 {
        let s = sqrt(nodes[k + 1] - nodes[k]);
        for i in 0..d {
            let z = normal(seed, stream::INCREMENTS, (k * d + i) as u64);
            values[(k + 1) * d + i] = values[k * d + i] + s * z;
        }
    }
    Ok(BrownianPath { grid: grid.clone(), dim: d, values, seed })
}

/// Fills the new nodes of `finer` by Brownian-bridge sampling between the
/// known neighbours; nodes past the old end are continued with free
/// increments.  Existing node values are copied unchanged.
pub fn refine_bridge(path: &BrownianPath, finer: &TimeGrid) -> Result<BrownianPath> {
    let d = path.dim;
    let old = path.grid.nodes();
    let new = finer.nodes();
    for &t in old {
        if finer.index_of(t).is_none() {
            return Err(Error::DroppedNode { t });
        }
    }
    let mut values = vec![0.0; new.len() * d];
    let mut j = 0; // next old node at or after the current fine node
    let mut last_t = 0.0;
    let mut last = vec![0.0; d];
    let tol = 1e-13 * finer.end().max(1.0);
    for (k, &t) in new.iter().enumerate() {
        while j < old.len() && old[j] < t - tol {
            j += 1;
        }
        let out = &mut values[k * d..(k + 1) * d];
        if j < old.len() && (old[j] - t).abs() <= tol {
            out.copy_from_slice(path.at(j));
        } else if j < old.len() {
            let tr = old[j];
            let right = path.at(j);
            let w = (t - last_t) / (tr - last_t);
            let sd = sqrt((t - last_t) * (tr - t) / (tr - last_t));
            for i in 0..d {
                let z = normal(path.seed, stream::BRIDGE, (k * d + i) as u64);
                out[i] = last[i] + w * (right[i] - last[i]) + sd * z;
            }
        } else {
            let sd = sqrt(t - last_t);
            for i in 0..d {
                let z = normal(path.seed, stream::BRIDGE, (k * d + i) as u64);
                out[i] = last[i] + sd * z;
            }
        }
        last.copy_from_slice(out);
        last_t = t;
    }
    Ok(BrownianPath { grid: finer.clone(), dim: d, values, seed: path.seed })
}

/// `Σ_k g(x + B1(t_k)) ∫_{t_k}^{t_{k+1}} φ(s) ds` up to time `t`, with the
/// segment integrals of the power-law profile in closed form.  A final
/// partial segment is used when `t` falls between nodes.
pub fn singular_time_integral<G: Fn(f64) -> f64>(
    path: &BrownianPath,
    profile: &PowerProfile,
    g_eval: G,
    x: f64,
    t: f64,
) -> Result<f64> {
    let nodes = path.grid.nodes();
    let end = path.grid.end();
    if t > end * (1.0 + 1e-14) || t < 0.0 {
        return Err(Error::TimeOutOfRange { t, end });
    }
    let d = path.dim;
    let mut s = 0.0;
    for k in 0..nodes.len() - 1 {
        let a = nodes[k];
        if a >= t {
            break;
        }
        let b = nodes[k + 1].min(t);
        let w = profile.segment_integral(a, b);
        if w != 0.0 {
            let g = g_eval(x + path.values[k * d]);
            if g != 0.0 {
                s += g * w;
            }
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regime::{eval_g, ProfileKind};

    fn profile() -> PowerProfile {
        PowerProfile::new(ProfileKind::Terminal { t1: 1.0 }, 0.5, 0.05).unwrap()
    }

    #[test]
    fn grid_examples() {
        let g = make_graded_grid(1.0, 4, None, 1.0).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_graded_grid(1.0, 4, Some(1.0), 2.0).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.4375, 0.75, 0.9375, 1.0]);
        let g = make_graded_grid(1.0, 2, Some(0.0), 2.0).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 1.0]);
        assert!(make_graded_grid(1.0, 4, Some(1.5), 2.0).is_err());
        assert!(make_graded_grid(1.0, 1, None, 1.0).is_err());
        assert!(make_graded_grid(1.0, 4, None, 0.5).is_err());
    }

    #[test]
    fn interior_grid_contains_singular_point() {
        let g = make_graded_grid(2.0, 40, Some(0.5), 2.0).unwrap();
        assert_eq!(g.steps(), 40);
        assert!(g.index_of(0.5).is_some());
        assert_eq!(g.end(), 2.0);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        let d = g.doubled();
        for &t in g.nodes() {
            assert!(d.index_of(t).is_some());
        }
    }

    #[test]
    fn graded_step_ratio_follows_map() {
        let n = 64;
        let gamma = 2.0;
        let g = make_graded_grid(1.0, n, Some(1.0), gamma).unwrap();
        let steps: Vec<f64> = g.nodes().windows(2).map(|w| w[1] - w[0]).collect();
        let smallest = steps.iter().cloned().fold(f64::INFINITY, f64::min);
        let largest = steps.iter().cloned().fold(0.0, f64::max);
        // (1/n)^γ against 1 - (1 - 1/n)^γ
        let expect = powf(1.0 / n as f64, gamma) / (1.0 - powf(1.0 - 1.0 / n as f64, gamma));
        assert!((smallest / largest - expect).abs() < 1e-12);
    }

    #[test]
    fn doubling_is_nested() {
        for sp in [None, Some(0.0), Some(1.0)] {
            let g = make_graded_grid(1.0, 16, sp, 2.0).unwrap();
            let d = g.doubled();
            assert_eq!(d.steps(), 32);
            for &t in g.nodes() {
                assert!(d.index_of(t).is_some(), "{sp:?} {t}");
            }
        }
    }

    #[test]
    fn brownian_is_deterministic_and_starts_at_zero() {
        let g = make_graded_grid(1.0, 32, Some(1.0), 2.0).unwrap();
        let a = sample_brownian(2, &g, 9).unwrap();
        let b = sample_brownian(2, &g, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.at(0), &[0.0, 0.0]);
        assert_ne!(a, sample_brownian(2, &g, 10).unwrap());
    }

    #[test]
    fn terminal_variance() {
        let g = make_graded_grid(1.0, 8, None, 1.0).unwrap();
        let n = 100_000;
        let mut s2 = 0.0;
        let mut s1 = 0.0;
        for seed in 0..n {
            let v = sample_brownian(1, &g, seed).unwrap().at(8)[0];
            s1 += v;
            s2 += v * v;
        }
        let m = s1 / n as f64;
        let var = s2 / n as f64 - m * m;
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn increments_are_standard_normal_after_scaling() {
        let g = make_graded_grid(1.0, 100_000, Some(1.0), 2.0).unwrap();
        let p = sample_brownian(1, &g, 3).unwrap();
        let n = g.steps() as f64;
        let (mut m2, mut m4) = (0.0, 0.0);
        for k in 0..g.steps() {
            let dt = g.nodes()[k + 1] - g.nodes()[k];
            let z = p.increment(k, 0) / sqrt(dt);
            m2 += z * z;
            m4 += z * z * z * z;
        }
        assert!((m2 / n - 1.0).abs() < 4.0 / sqrt(n) * 1.5);
        assert!((m4 / n - 3.0).abs() < 0.1);
    }

    #[test]
    fn bridge_identity_and_drop_rejection() {
        let g = make_graded_grid(1.0, 8, None, 1.0).unwrap();
        let p = sample_brownian(2, &g, 1).unwrap();
        assert_eq!(refine_bridge(&p, &g).unwrap(), p);
        let coarse = make_graded_grid(1.0, 4, None, 1.0).unwrap();
        let odd = TimeGrid::from_nodes(vec![0.0, 0.3, 1.0]).unwrap();
        assert!(matches!(refine_bridge(&p, &odd), Err(Error::DroppedNode { .. })));
        let fine = refine_bridge(&sample_brownian(1, &coarse, 5).unwrap(), &g).unwrap();
        assert_eq!(fine.at(0), &[0.0]);
    }

    #[test]
    fn bridge_midpoint_law() {
        let coarse = TimeGrid::from_nodes(vec![0.0, 1.0]).unwrap();
        let fine = TimeGrid::from_nodes(vec![0.0, 0.5, 1.0]).unwrap();
        let n = 100_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for seed in 0..n {
            let p = sample_brownian(1, &coarse, seed).unwrap();
            let r = refine_bridge(&p, &fine).unwrap();
            assert_eq!(r.at(2), p.at(1));
            let dev = r.at(1)[0] - 0.5 * p.at(1)[0];
            s1 += dev;
            s2 += dev * dev;
        }
        let nf = n as f64;
        let mean = s1 / nf;
        let var = s2 / nf - mean * mean;
        let se = sqrt(0.25 / nf);
        assert!(mean.abs() < 3.0 * se, "{mean}");
        assert!((var - 0.25).abs() < 0.01, "{var}");
    }

    #[test]
    fn bridge_extends_past_old_end() {
        let coarse = make_graded_grid(0.5, 4, None, 1.0).unwrap();
        let p = sample_brownian(1, &coarse, 2).unwrap();
        let fine = TimeGrid::from_nodes((0..=8).map(|k| k as f64 * 0.125).collect()).unwrap();
        let r = refine_bridge(&p, &fine).unwrap();
        assert_eq!(r.at_time(0.5).unwrap(), p.at(4));
        assert_eq!(r.grid().end(), 1.0);
    }

    #[test]
    fn integral_examples() {
        let g = make_graded_grid(1.0, 64, Some(1.0), 2.0).unwrap();
        let p = sample_brownian(2, &g, 4).unwrap();
        let v = singular_time_integral(&p, &profile(), |_| 1.0, 0.0, 1.0).unwrap();
        assert!((v - 5.0).abs() < 1e-12, "{v}");
        let late = PowerProfile::new(ProfileKind::Terminal { t1: 0.2 }, 0.5, 0.05).unwrap();
        let grid = make_graded_grid(1.0, 64, Some(0.2), 2.0).unwrap();
        let p2 = sample_brownian(2, &grid, 4).unwrap();
        let tail = singular_time_integral(&p2, &late, |_| 1.0, 0.0, 1.0).unwrap()
            - singular_time_integral(&p2, &late, |_| 1.0, 0.0, 0.2).unwrap();
        assert_eq!(tail, 0.0);
        let max_b = (0..g.len()).map(|k| p.at(k)[0].abs()).fold(0.0, f64::max);
        let v = singular_time_integral(&p, &profile(), |z| eval_g(z, 0.5), -1.0 - max_b, 1.0).unwrap();
        assert_eq!(v, 0.0);
        assert!(singular_time_integral(&p, &profile(), |_| 1.0, 0.0, 1.5).is_err());
    }

    #[test]
    fn integral_nonnegative_and_bounded() {
        let g = make_graded_grid(1.0, 128, Some(1.0), 2.0).unwrap();
        let bound = profile().total_mass();
        for seed in 0..50 {
            let p = sample_brownian(2, &g, seed).unwrap();
            for &x in &[-0.5, 0.0, 0.3, 0.9, 2.0] {
                let v = singular_time_integral(&p, &profile(), |z| eval_g(z, 0.5), x, 1.0).unwrap();
                assert!(v >= 0.0 && v <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn bridge_refined_integrals_converge() {
        let n0 = 256;
        let levels = 6;
        let mut mean_diff = vec![0.0; levels];
        for seed in 0..100 {
            let mut grid = make_graded_grid(1.0, n0, Some(1.0), 2.0).unwrap();
            let mut p = sample_brownian(2, &grid, seed).unwrap();
            for _ in 0..levels {
                grid = grid.doubled();
                p = refine_bridge(&p, &grid).unwrap();
            }
            let mut vals = Vec::new();
            let mut g = make_graded_grid(1.0, n0, Some(1.0), 2.0).unwrap();
            for _ in 0..=levels {
                let r = p.restrict(&g).unwrap();
                vals.push(singular_time_integral(&r, &profile(), |z| eval_g(z, 0.5), 0.3, 1.0).unwrap());
                g = g.doubled();
            }
            for (m, w) in mean_diff.iter_mut().zip(vals.windows(2)) {
                *m += (w[1] - w[0]).abs() / 100.0;
            }
        }
        assert!(mean_diff.windows(2).all(|w| w[1] < w[0]), "{mean_diff:?}");
    }
}
