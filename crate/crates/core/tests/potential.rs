use std::sync::Arc;

use dwell::potential::{verify_assumptions, DoubleWell, Potential, PotentialError};
use dwell::{ArctanModel, Branch, Quartic};
use proptest::prelude::*;

struct Negated<P>(P);

impl<P: Potential<f64>> Potential<f64> for Negated<P> {
    fn name(&self) -> &str {
        "negated"
    }
    fn h(&self, x: f64) -> f64 {
        -self.0.h(x)
    }
    fn d1(&self, x: f64) -> f64 {
        -self.0.d1(x)
    }
    fn d2(&self, x: f64) -> f64 {
        -self.0.d2(x)
    }
    fn d3(&self, x: f64) -> f64 {
        -self.0.d3(x)
    }
}

#[test]
fn quartic_landmarks_closed_form() {
    let dw = DoubleWell::<f64>::quartic();
    let l = dw.landmarks();
    let s3 = 3f64.sqrt();
    assert!((l.x_star - 1.0 / s3).abs() < 1e-12);
    assert!((l.sigma_star - 8.0 / (3.0 * s3)).abs() < 1e-12);
    assert!((l.x_star_star - 2.0 / s3).abs() < 1e-12);
    assert!((l.h_crit - 1.0).abs() < 1e-12);
    assert!((l.h_star - 3.0).abs() < 1e-12);
    assert!((l.c_spinodal - 4.0).abs() < 1e-12);
    assert!((dw.d3(-l.x_star).abs() - 24.0 / s3).abs() < 1e-12);
}

#[test]
fn arctan_landmarks() {
    let dw = DoubleWell::<f64>::arctan();
    let l = dw.landmarks();
    assert!((l.x_star - 1.0).abs() < 1e-12);
    assert!((l.sigma_star - (std::f64::consts::FRAC_PI_2 - 1.0)).abs() < 1e-12);
    // reference values from 30-digit arithmetic
    assert!((l.x_star_star - 3.085_573_885_476_822).abs() < 1e-10);
    assert!((l.h_crit - 0.855_448_885_110_074_8).abs() < 1e-10);
    assert!((l.h_star - 2.600_179_244_311_092).abs() < 1e-10);
}

#[test]
fn quartic_barriers_at_half() {
    let dw = DoubleWell::<f64>::quartic();
    let (hm, hp) = dw.barrier_heights(0.5).unwrap();
    assert!((hm - 0.548_250_657_846_203_9).abs() < 1e-10);
    assert!((hp - 1.546_255_790_836_660_4).abs() < 1e-10);
    assert!((dw.branch_inverse(Branch::Minus, 0.5).unwrap() + 0.930_402_926_555_851_7).abs() < 1e-12);
    assert!((dw.branch_inverse(Branch::Zero, 0.5).unwrap() + 0.127_050_844_182_526_2).abs() < 1e-12);
    assert!((dw.branch_inverse(Branch::Plus, 0.5).unwrap() - 1.057_453_770_738_378).abs() < 1e-12);
}

#[test]
fn barrier_endpoints() {
    for dw in [DoubleWell::<f64>::quartic(), DoubleWell::<f64>::arctan()] {
        let s = dw.sigma_star();
        let hs = dw.landmarks().h_star;
        let (hm, hp) = dw.barrier_heights(-s).unwrap();
        assert!((hm - hs).abs() < 1e-10, "{} {hm} {hs}", dw.name());
        assert!(hp.abs() < 1e-10);
        let (hm, hp) = dw.barrier_heights(s).unwrap();
        assert!(hm.abs() < 1e-10);
        assert!((hp - hs).abs() < 1e-10);
        let (hm0, hp0) = dw.barrier_heights(0.0).unwrap();
        assert!((hm0 - dw.landmarks().h_crit).abs() < 1e-10);
        assert!((hp0 - dw.landmarks().h_crit).abs() < 1e-10);
    }
}

#[test]
fn curvature_vanishes_at_spinodal_ends() {
    let dw = DoubleWell::<f64>::quartic();
    let s = dw.sigma_star();
    let (am, a0, _) = dw.curvatures(s).unwrap();
    assert!(am.abs() < 1e-12 && a0.abs() < 1e-12);
    let (_, a0, ap) = dw.curvatures(-s).unwrap();
    assert!(ap.abs() < 1e-12 && a0.abs() < 1e-12);
    let (am, a0, ap) = dw.curvatures(0.0).unwrap();
    assert!((am - 8.0).abs() < 1e-12 && (a0 - 4.0).abs() < 1e-12 && (ap - 8.0).abs() < 1e-12);
}

#[test]
fn builtins_pass_assumptions() {
    let q = verify_assumptions::<f64>(Arc::new(Quartic));
    assert!(q.passed(), "{q:?}");
}

#[test]
fn arctan_model_fails_concavity() {
    // X_+(H'(x)) changes curvature near x = 0.2 (second differences of +2e-3
    // on a 0.05 grid), so only the first two assumptions hold
    let a = verify_assumptions::<f64>(Arc::new(ArctanModel));
    assert!(a.a1.ok && a.a2.ok, "{a:?}");
    assert!(!a.a3.ok, "{a:?}");
}

#[test]
fn negated_quartic_fails_branch_structure() {
    let r = verify_assumptions::<f64>(Arc::new(Negated(Quartic)));
    assert!(r.a1.ok);
    assert!(!r.a2.ok);
    assert!(!r.passed());
    assert!(matches!(DoubleWell::new(Arc::new(Negated(Quartic))), Err(PotentialError::NotDoubleWell(_))));
}

#[test]
fn single_precision_landmarks() {
    let dw = DoubleWell::<f32>::quartic();
    assert!((dw.x_star() - 1.0 / 3f32.sqrt()).abs() < 1e-6);
    let x = dw.branch_inverse(Branch::Plus, 0.3f32).unwrap();
    assert!((dw.d1(x) - 0.3).abs() < 1e-5);
}

fn wells() -> impl Strategy<Value = DoubleWell<f64>> {
    prop_oneof![Just(DoubleWell::<f64>::quartic()), Just(DoubleWell::<f64>::arctan())]
}

proptest! {
    #[test]
    fn branch_inverse_round_trip(dw in wells(), u in -1.0f64..1.0, b in 0usize..3) {
        let s = dw.sigma_star();
        let (branch, sigma) = match b {
            0 => (Branch::Minus, s - (u + 1.0) * 2.0 * s),
            1 => (Branch::Zero, u * s),
            _ => (Branch::Plus, -s + (u + 1.0) * 2.0 * s),
        };
        let x = dw.branch_inverse(branch, sigma).unwrap();
        prop_assert!((dw.d1(x) - sigma).abs() <= 1e-12 * sigma.abs().max(1.0));
        match branch {
            Branch::Minus => prop_assert!(x <= -dw.x_star()),
            Branch::Zero => prop_assert!(x.abs() <= dw.x_star()),
            Branch::Plus => prop_assert!(x >= dw.x_star()),
        }
    }

    #[test]
    fn outer_branches_are_reflections(dw in wells(), u in -1.0f64..1.0) {
        let sigma = u * dw.sigma_star() * 1.5;
        if sigma <= dw.sigma_star() {
            let xm = dw.branch_inverse(Branch::Minus, sigma).unwrap();
            let xp = dw.branch_inverse(Branch::Plus, -sigma).unwrap();
            prop_assert!((xm + xp).abs() <= 1e-12 * xp.abs().max(1.0));
        }
    }

    #[test]
    fn branches_monotone(dw in wells(), u in -0.99f64..0.99, du in 1e-4f64..0.5) {
        let s = dw.sigma_star();
        let (s1, s2) = (u * s, (u * s + du).min(s));
        let x = |b, v| dw.branch_inverse(b, v).unwrap();
        prop_assert!(x(Branch::Minus, s1) < x(Branch::Minus, s2));
        prop_assert!(x(Branch::Plus, s1) < x(Branch::Plus, s2));
        prop_assert!(x(Branch::Zero, s1) > x(Branch::Zero, s2));
    }

    #[test]
    fn barrier_monotonicity(dw in wells(), u in -0.98f64..0.98) {
        let s = dw.sigma_star();
        let e = 1e-3 * s;
        let (hm1, hp1) = dw.barrier_heights(u * s).unwrap();
        let (hm2, hp2) = dw.barrier_heights(u * s + e).unwrap();
        prop_assert!(hm2 < hm1);
        prop_assert!(hp2 > hp1);
        prop_assert!(hm1 > 0.0 && hp1 > 0.0);
    }
}
