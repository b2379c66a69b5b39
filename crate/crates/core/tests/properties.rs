use proptest::prelude::*;
use safebac::barrier::{
    gradient_check, relaxed_log, relaxed_log_d1, relaxed_log_d2, Constraint, InequalitySet,
    RelaxedBarrier,
};
use safebac::constraints::{shrink, tube_radius};
use safebac::oracle::{dare_residual, riccati_lq};
use safebac::{Matrix, Vector};

fn v(x: &[f64]) -> Vector {
    Vector::from_column_slice(x)
}

/// Box `[lo, hi]` in two dimensions with the origin strictly inside.
fn box_2d() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-2.0..-0.1f64, 2),
        prop::collection::vec(0.1..2.0f64, 2),
    )
}

fn box_barrier(lo: &[f64], hi: &[f64], kappa: f64) -> RelaxedBarrier {
    let set = InequalitySet::boxed("x", lo, hi).unwrap();
    RelaxedBarrier::new(set, Vector::zeros(lo.len()), kappa).unwrap()
}

proptest! {
    #[test]
    fn relaxed_box_barrier_is_nonnegative_and_zero_at_center(
        (lo, hi) in box_2d(),
        kappa in 0.01..0.1f64,
        t in prop::collection::vec(-0.5..1.5f64, 2),
    ) {
        let b = box_barrier(&lo, &hi, kappa);
        prop_assert!(b.value(&Vector::zeros(2)).abs() < 1e-12);
        prop_assert!(b.gradient(&Vector::zeros(2)).norm() < 1e-12);
        let z = v(&[lo[0] + t[0] * (hi[0] - lo[0]), lo[1] + t[1] * (hi[1] - lo[1])]);
        prop_assert!(b.value(&z) >= -1e-12);
    }

    #[test]
    fn relaxed_barrier_gradient_matches_finite_differences(
        (lo, hi) in box_2d(),
        kappa in 0.02..0.1f64,
        t in prop::collection::vec(-0.3..1.3f64, 2),
    ) {
        let b = box_barrier(&lo, &hi, kappa);
        let z = v(&[lo[0] + t[0] * (hi[0] - lo[0]), lo[1] + t[1] * (hi[1] - lo[1])]);
        prop_assert!(gradient_check(&b, &z, 1e-6) < 1e-5);
    }

    #[test]
    fn relaxed_log_is_c2_at_the_switch(kappa in 1e-3..1.0f64) {
        let (below, above) = (kappa * (1.0 - 1e-12), kappa * (1.0 + 1e-12));
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        prop_assert!(close(relaxed_log(below, kappa), relaxed_log(above, kappa)));
        prop_assert!(close(relaxed_log_d1(below, kappa), relaxed_log_d1(above, kappa)));
        prop_assert!(close(relaxed_log_d2(below, kappa), relaxed_log_d2(above, kappa)));
    }

    #[test]
    fn relaxed_log_matches_log_on_the_strict_branch(kappa in 1e-3..0.5f64, s in 0.5..10.0f64) {
        let s = s.max(kappa);
        prop_assert_eq!(relaxed_log(s, kappa), -s.ln());
    }

    #[test]
    fn affine_barrier_hessian_is_dominated_by_its_bound(
        (lo, hi) in box_2d(),
        kappa in 0.01..0.2f64,
        z in prop::collection::vec(-3.0..3.0f64, 2),
    ) {
        let b = box_barrier(&lo, &hi, kappa);
        let gap = b.hessian_bound() - b.hessian(&v(&z));
        let eig = gap.symmetric_eigen().eigenvalues;
        let scale = b.hessian_bound().amax();
        prop_assert!(eig.iter().all(|&e| e >= -1e-9 * scale));
    }

    #[test]
    fn keepout_barrier_gradient_matches_finite_differences(
        r in 0.05..0.3f64,
        angle in 0.0..std::f64::consts::TAU,
        dist in 0.02..1.0f64,
    ) {
        let center = v(&[0.6, 0.0]);
        let mut cs = InequalitySet::boxed("x", &[-1.0, -1.0], &[1.5, 1.0]).unwrap().constraints().to_vec();
        cs.push(Constraint::Keepout { selector: Matrix::identity(2, 2), center: center.clone(), radius: r });
        let set = InequalitySet::new("x", cs, v(&[-1.0, -1.0]), v(&[1.5, 1.0])).unwrap();
        let b = RelaxedBarrier::new(set, v(&[-0.3, 0.0]), 0.05).unwrap();
        let z = &center + v(&[dist * angle.cos(), dist * angle.sin()]);
        prop_assert!(gradient_check(&b, &z, 1e-7) < 1e-5);
    }

    #[test]
    fn shrunk_boxes_are_nested_and_keep_their_margin(
        (lo, hi) in box_2d(),
        r1 in 0.0..0.05f64,
        extra in 0.0..0.05f64,
        t in prop::collection::vec(0.0..1.0f64, 2),
    ) {
        let set = InequalitySet::boxed("x", &lo, &hi).unwrap();
        let r2 = r1 + extra;
        let inner = shrink(&set, r2).unwrap();
        let outer = shrink(&set, r1).unwrap();
        let z = v(&[lo[0] + t[0] * (hi[0] - lo[0]), lo[1] + t[1] * (hi[1] - lo[1])]);
        if inner.contains(&z) {
            prop_assert!(outer.contains(&z));
            prop_assert!(set.contains(&z));
            prop_assert!(set.min_margin(&z) >= r2 - 1e-12);
        }
    }

    #[test]
    fn shrunk_keepout_excludes_the_ball(
        r in 0.05..0.3f64,
        pad in 0.0..0.2f64,
        angle in 0.0..std::f64::consts::TAU,
        dist in 0.0..1.0f64,
    ) {
        let keep = Constraint::Keepout { selector: Matrix::identity(2, 2), center: v(&[0.0, 0.0]), radius: r };
        let set = InequalitySet::new("k", vec![keep], v(&[-2.0, -2.0]), v(&[2.0, 2.0])).unwrap();
        let inner = shrink(&set, pad).unwrap();
        let z = v(&[dist * angle.cos(), dist * angle.sin()]);
        if inner.contains(&z) {
            // every point within `pad` of z stays outside the disc
            let toward = if z.norm() > 0.0 { -&z / z.norm() } else { v(&[1.0, 0.0]) };
            prop_assert!(set.contains(&(&z + toward * pad * (1.0 - 1e-9))));
        }
    }

    #[test]
    fn tube_radius_is_monotone_and_follows_its_recursion(
        l_f in 0.5..2.0f64,
        eps in 0.0..0.01f64,
        j in 0usize..20,
    ) {
        let r = tube_radius(l_f, eps, j);
        let next = tube_radius(l_f, eps, j + 1);
        prop_assert!(next >= r);
        prop_assert!((next - (l_f * r + eps)).abs() <= 1e-12 * next.max(1.0));
    }

    #[test]
    fn scalar_riccati_solves_its_equation(
        a in -1.5..1.5f64,
        b in 0.2..2.0f64,
        q in 0.1..5.0f64,
        r in 0.1..5.0f64,
        gamma in 0.5..0.99f64,
    ) {
        let m = |x: f64| Matrix::from_element(1, 1, x);
        let sol = riccati_lq(&m(a), &m(b), &m(q), &m(r), gamma, 100_000).unwrap();
        prop_assert!(sol.p[(0, 0)] >= q - 1e-12);
        prop_assert!(dare_residual(&m(a), &m(b), &m(q), &m(r), gamma, &sol.p) < 1e-9 * sol.p.amax().max(1.0));
    }
}
