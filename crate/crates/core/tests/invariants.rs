//! Randomized invariants across modules.

use flowlab_core::estimators::{mc_indicator_expectation, mc_inverse_gradient_moment, MomentGrid, PathSpec};
use flowlab_core::exec::{Executor, Serial};
use flowlab_core::flow::{closed_form_inverse, integrate_flow, integrate_flow_from};
use flowlab_core::flow_calculus::{closed_form_inverse_jacobian, closed_form_jacobian, propagate_jacobian};
use flowlab_core::math::{det, matmul};
use flowlab_core::paths::{make_graded_grid, sample_brownian, singular_time_integral};
use flowlab_core::regime::{counterexample_drift, eval_g, DriftField};
use flowlab_core::resolvent::{resolvent_solve, semigroup_apply, Boundary, GridFunction, Mesh, ResolventQuadrature};
use proptest::prelude::*;

/// Runs chunks on scoped threads, in reverse chunk order, to exercise the
/// index-order contract.
struct Threads(usize);

impl Executor for Threads {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        let chunk = n.div_ceil(self.0).max(1);
        let f = &f;
        let mut parts: Vec<(usize, Vec<T>)> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .rev()
                .map(|lo| s.spawn(move || (lo, (lo..(lo + chunk).min(n)).map(f).collect::<Vec<T>>())))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        parts.sort_by_key(|p| p.0);
        parts.into_iter().flat_map(|p| p.1).collect()
    }

    fn workers(&self) -> usize {
        self.0
    }
}

fn shear() -> DriftField {
    counterexample_drift(0.5, 0.05, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn restarting_the_flow_is_exact(seed in 0u64..1000, split in 1usize..255, x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let b = DriftField::smooth_bump(vec![0.5, -0.3], vec![0.2, -0.1], 0.7, 0.9).unwrap();
        let g = make_graded_grid(1.0, 256, None, 1.0).unwrap();
        let p = sample_brownian(2, &g, seed).unwrap();
        let full = integrate_flow(&b, &p, &[x, y]).unwrap();
        let tail = integrate_flow_from(&b, &p, split, full.state(split)).unwrap();
        prop_assert_eq!(tail.last(), full.last());
    }

    #[test]
    fn flowed_first_coordinates_stay_ordered(seed in 0u64..1000, x in -1.0f64..1.0, dx in 1e-9f64..0.5) {
        let b = shear();
        let g = make_graded_grid(1.0, 256, Some(1.0), 2.0).unwrap();
        let p = sample_brownian(2, &g, seed).unwrap();
        let lo = integrate_flow(&b, &p, &[x, 0.0]).unwrap();
        let hi = integrate_flow(&b, &p, &[x + dx, 0.3]).unwrap();
        for k in 0..g.len() {
            prop_assert!(lo.state(k)[0] < hi.state(k)[0]);
        }
    }

    #[test]
    fn shear_jacobians_are_unit_and_mutually_inverse(seed in 0u64..1000, x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let b = shear();
        let profile = *b.profile().unwrap();
        let g = make_graded_grid(1.0, 512, Some(1.0), 2.0).unwrap();
        let p = sample_brownian(2, &g, seed).unwrap();
        let traj = integrate_flow(&b, &p, &[x, y]).unwrap();
        let jac = propagate_jacobian(&b, &traj).unwrap();
        for k in 0..g.len() {
            prop_assert_eq!(det(2, jac.matrix(k)), 1.0);
        }
        let pre = closed_form_inverse(&profile, &p, [x, y], 1.0).unwrap();
        let fwd = closed_form_jacobian(&profile, &p, pre[0], 1.0).unwrap();
        let inv = closed_form_inverse_jacobian(&profile, &p, x, 1.0).unwrap();
        let mut prod = [0.0; 4];
        matmul(2, &fwd, &inv, &mut prod);
        for (a, e) in prod.iter().zip([1.0, 0.0, 0.0, 1.0]) {
            prop_assert!((a - e).abs() < 1e-6);
        }
    }

    #[test]
    fn singular_integral_is_within_bounds(seed in 0u64..1000, x in -2.0f64..2.0, npow in 4u32..12) {
        let b = shear();
        let profile = *b.profile().unwrap();
        let g = make_graded_grid(1.0, 1 << npow, Some(1.0), 2.0).unwrap();
        let p = sample_brownian(2, &g, seed).unwrap();
        let v = singular_time_integral(&p, &profile, |z| eval_g(z, 0.5), x, 1.0).unwrap();
        let bound = 2.0 / (1.0 - 0.5 - 0.1);
        prop_assert!(v >= 0.0 && v <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn shear_drift_is_divergence_free(t in 0.0f64..0.99, x in -2.0f64..2.0, y in -2.0f64..2.0) {
        prop_assume!(x.abs() > 1e-3 && (x - 1.0).abs() > 1e-3);
        let b = shear();
        let h = 1e-5;
        let mut p = [0.0; 2];
        let mut m = [0.0; 2];
        b.eval(t, &[x + h, y], &mut p);
        b.eval(t, &[x - h, y], &mut m);
        let dx = (p[0] - m[0]) / (2.0 * h);
        b.eval(t, &[x, y + h], &mut p);
        b.eval(t, &[x, y - h], &mut m);
        let dy = (p[1] - m[1]) / (2.0 * h);
        prop_assert!((dx + dy).abs() < 1e-9);
        prop_assert_eq!(b.divergence(t, &[x, y]), Some(0.0));
    }

    #[test]
    fn semigroup_composes(r in 0.01f64..0.3, s in 0.01f64..0.3) {
        let m = Mesh::cube(1, 8.0, 0.05).unwrap();
        let phi = GridFunction::from_fn(&m, 0.0, |x| (2.0 * x[0]).cos() * (-0.5 * x[0] * x[0]).exp());
        let two = semigroup_apply(&semigroup_apply(&phi, r, Boundary::Replicate).unwrap().value, s, Boundary::Replicate).unwrap().value;
        let one = semigroup_apply(&phi, r + s, Boundary::Replicate).unwrap().value;
        let err = two.values.iter().zip(&one.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-7);
    }

    #[test]
    fn resolvent_is_additive(a in -2.0f64..2.0, c in -2.0f64..2.0, t in 0.0f64..0.9) {
        let m = Mesh::cube(1, 2.0, 0.1).unwrap();
        let f1 = |s: f64| GridFunction::from_fn(&m, s, |x| a * x[0].sin() * (1.0 + s));
        let f2 = |s: f64| GridFunction::from_fn(&m, s, |x| c * (-x[0] * x[0]).exp());
        let f12 = |s: f64| GridFunction::from_fn(&m, s, |x| a * x[0].sin() * (1.0 + s) + c * (-x[0] * x[0]).exp());
        let q = ResolventQuadrature::default();
        let u1 = resolvent_solve(f1, 1.5, 1.0, t, q).unwrap().u;
        let u2 = resolvent_solve(f2, 1.5, 1.0, t, q).unwrap().u;
        let u12 = resolvent_solve(f12, 1.5, 1.0, t, q).unwrap().u;
        for i in 0..m.len() {
            prop_assert!((u1.values[i] + u2.values[i] - u12.values[i]).abs() < 1e-10);
        }
        let end = resolvent_solve(f12, 1.5, 1.0, 1.0, q).unwrap().u;
        prop_assert_eq!(end.sup_norm(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn estimators_ignore_worker_count(master in any::<u64>(), workers in 2usize..6) {
        let b = DriftField::smooth_bump(vec![0.5, -0.3], vec![0.2, -0.1], 0.7, 0.9).unwrap();
        let spec = PathSpec { base: make_graded_grid(1.0, 32, None, 1.0).unwrap(), refinements: 1 };
        let grid = MomentGrid { points_per_axis: 3, eval_times: 2 };
        let m1 = mc_inverse_gradient_moment(&b, 2.0, 1.0, grid, &spec, 23, master, &Serial).unwrap();
        let m2 = mc_inverse_gradient_moment(&b, 2.0, 1.0, grid, &spec, 23, master, &Threads(workers)).unwrap();
        prop_assert_eq!(m1.mean.to_bits(), m2.mean.to_bits());
        prop_assert_eq!(m1.std_error.to_bits(), m2.std_error.to_bits());
        let i1 = mc_indicator_expectation(0.3, 0.5, 1.0, 1.0, 0.5, 997, master, &Serial).unwrap();
        let i2 = mc_indicator_expectation(0.3, 0.5, 1.0, 1.0, 0.5, 997, master, &Threads(workers)).unwrap();
        prop_assert_eq!(i1.mean.to_bits(), i2.mean.to_bits());
        prop_assert_eq!(i1.std_error.to_bits(), i2.std_error.to_bits());
    }
}
