use dwell::path::FnPath;
use dwell::potential::Branch;
use dwell::two_peaks::*;
use dwell::{DoubleWell, LinearPath};
use proptest::prelude::*;

#[test]
fn single_peak_sits_at_ell() {
    let dw = DoubleWell::quartic();
    let q = qs_solve(&dw, 1.0, -1.3, BranchPair::MinusPlus).unwrap();
    assert_eq!(q.x1, -1.3);
    assert_eq!(q.sigma, dw.d1(-1.3));
    let q = qs_solve(&dw, 1.0, 0.2, BranchPair::ZeroPlus).unwrap();
    assert_eq!(q.x1, 0.2);
    assert!(qs_solve(&dw, 1.0, 0.2, BranchPair::MinusPlus).is_err());
}

#[test]
fn symmetric_state_at_zero() {
    let dw = DoubleWell::quartic();
    let q = qs_solve(&dw, 0.5, 0.0, BranchPair::MinusPlus).unwrap();
    assert!(q.sigma.abs() < 1e-14);
    assert!((q.x1 + 1.0).abs() < 1e-14 && (q.x2 - 1.0).abs() < 1e-14);
    assert!((linear_decay_rate(&dw, 0.5, 0.0, 1.0) - 2.0).abs() < 1e-15);
}

#[test]
fn tangency_reference_values() {
    let dw = DoubleWell::quartic();
    // 30-digit references
    let s = tangency(&dw, 0.1).unwrap().unwrap();
    assert!((s - 1.468_725_991_407_101_8).abs() < 1e-10, "{s}");
    let s = tangency(&dw, 0.3).unwrap().unwrap();
    assert!((s - 0.376_242_809_127_116_8).abs() < 1e-10, "{s}");
    assert_eq!(tangency(&dw, 0.5).unwrap(), None);
    assert_eq!(tangency(&dw, 0.9).unwrap(), None);
}

#[test]
fn tangency_is_maximum_of_ell_on_spinodal_pair() {
    let dw = DoubleWell::quartic();
    let s = tangency(&dw, 0.1).unwrap().unwrap();
    let ell_me = 0.1 * dw.branch_inverse(Branch::Zero, s).unwrap() + 0.9 * dw.branch_inverse(Branch::Plus, s).unwrap();
    assert!((ell_me - 0.986_576_572_463_249_5).abs() < 1e-10);
    assert!(qs_solve(&dw, 0.1, ell_me + 1e-6, BranchPair::ZeroPlus).is_err());
    let q = qs_solve(&dw, 0.1, ell_me - 1e-6, BranchPair::ZeroPlus).unwrap();
    assert!(q.sigma > s);
}

#[test]
fn invalid_mass_rejected() {
    let dw = DoubleWell::quartic();
    assert!(matches!(qs_solve(&dw, 1.5, 0.0, BranchPair::MinusPlus), Err(TpmError::InvalidMass(_))));
    assert!(tangency(&dw, -0.1).is_err());
}

#[test]
fn massless_second_peak_tracks_the_constraint() {
    let dw = DoubleWell::quartic();
    let path = LinearPath::new(-1.5, 1.0);
    let tr = tpm_integrate(&dw, 1.0, 0.01, (-1.5, 1.0), &path, 0.0, 3.0, &TpmOptions::default()).unwrap();
    assert_eq!(tr.stop, TpmStop::Finished);
    for s in &tr.samples {
        assert!((s.x1 - (-1.5 + s.t)).abs() < 1e-9, "t = {}", s.t);
    }
}

#[test]
fn constraint_and_energy_balance() {
    let dw = DoubleWell::quartic();
    let path = FnPath { ell: |t: f64| -0.4 + 0.5 * t + 0.2 * (2.0 * t).sin(), ell_dot: |t: f64| 0.5 + 0.4 * (2.0 * t).cos() };
    let q = qs_solve(&dw, 0.6, -0.4, BranchPair::MinusPlus).unwrap();
    let audit = |tol: f64| {
        let o = TpmOptions { atol: tol, rtol: tol, stop_at_merging: false };
        let tr = tpm_integrate(&dw, 0.6, 0.05, (q.x1, q.x2), &path, 0.0, 1.0, &o).unwrap();
        for s in &tr.samples {
            assert!((0.6 * s.x1 + 0.4 * s.x2 - path.ell_fn(s.t)).abs() < 1e-6);
            assert!(s.dissipation >= 0.0);
        }
        tr.balance_audit
    };
    let a = audit(1e-6);
    let b = audit(1e-10);
    assert!(b < a && b < 1e-7, "{a:e} {b:e}");
}

#[test]
fn shadowing_gap_scales_with_tau() {
    let dw = DoubleWell::quartic();
    let (m1, l0, lo, hi) = (0.3, 0.15, 0.2, 0.55);
    let q = qs_solve(&dw, m1, l0, BranchPair::MinusPlus).unwrap();
    let path = LinearPath::new(l0, 1.0);
    let o = TpmOptions { atol: 1e-12, rtol: 1e-10, stop_at_merging: true };
    let gaps: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&tau| {
            let tr = tpm_integrate(&dw, m1, tau, (q.x1, q.x2), &path, 0.0, hi - l0, &o).unwrap();
            assert_eq!(tr.stop, TpmStop::Finished);
            tr.samples
                .iter()
                .filter(|s| l0 + s.t >= lo)
                .map(|s| {
                    let r = qs_solve(&dw, m1, l0 + s.t, BranchPair::MinusPlus).unwrap();
                    (s.x1 - r.x1).abs().max((s.x2 - r.x2).abs())
                })
                .fold(0.0, f64::max)
        })
        .collect();
    for w in gaps.windows(2) {
        assert!((w[0] / w[1] / 2.0 - 1.0).abs() <= 0.25, "{gaps:?}");
    }
}

trait EllFn {
    fn ell_fn(&self, t: f64) -> f64;
}
impl<F: Fn(f64) -> f64 + Send + Sync, G: Fn(f64) -> f64 + Send + Sync> EllFn for FnPath<F, G> {
    fn ell_fn(&self, t: f64) -> f64 {
        (self.ell)(t)
    }
}

#[test]
fn merging_onset_is_reported() {
    let dw = DoubleWell::quartic();
    let m1 = 0.1;
    let q = qs_solve(&dw, m1, 0.5, BranchPair::MinusPlus).unwrap();
    let path = LinearPath::new(0.5, 1.0);
    let o = TpmOptions { stop_at_merging: true, ..TpmOptions::default() };
    let tr = tpm_integrate(&dw, m1, 1e-3, (q.x1, q.x2), &path, 0.0, 1.0, &o).unwrap();
    assert_eq!(tr.stop, TpmStop::MergingOnset);
    let last = tr.samples.last().unwrap();
    let s_me = tangency(&dw, m1).unwrap().unwrap();
    // the tangency is passed with an O(tau) lag
    assert!((last.sigma - s_me).abs() < 0.05, "{} vs {s_me}", last.sigma);
}

#[test]
fn unstable_state_relaxes_to_the_merged_peak() {
    // after the tangency the small peak runs into the large one
    let dw = DoubleWell::quartic();
    let m1 = 0.1;
    let s_me = tangency(&dw, m1).unwrap().unwrap();
    let ell_me = m1 * dw.branch_inverse(Branch::Zero, s_me).unwrap() + (1.0 - m1) * dw.branch_inverse(Branch::Plus, s_me).unwrap();
    let q = qs_solve(&dw, m1, ell_me - 1e-3, BranchPair::ZeroPlus).unwrap();
    let path = LinearPath::new(ell_me - 1e-3, 1.0);
    let tr = tpm_integrate(&dw, m1, 1e-3, (q.x1, q.x2), &path, 0.0, 0.05, &TpmOptions::default()).unwrap();
    let last = tr.samples.last().unwrap();
    assert!((last.x1 - last.x2).abs() < 1e-3, "{last:?}");
    let first = tr.samples[0];
    assert!(last.energy < first.energy);
}

fn pair_and_ell(dw: &DoubleWell) -> impl Strategy<Value = (f64, f64, BranchPair)> {
    let s = dw.sigma_star();
    (0.05f64..0.95, -0.99f64..0.99, prop::bool::ANY)
        .prop_map(move |(m1, u, zero)| (m1, u * s, if zero { BranchPair::ZeroPlus } else { BranchPair::MinusPlus }))
}

proptest! {
    #[test]
    fn qs_solution_consistency((m1, sigma, pair) in pair_and_ell(&DoubleWell::quartic())) {
        let dw = DoubleWell::quartic();
        let (b1, b2) = pair.branches();
        let ell = m1 * dw.branch_inverse(b1, sigma).unwrap() + (1.0 - m1) * dw.branch_inverse(b2, sigma).unwrap();
        if pair == BranchPair::ZeroPlus {
            if let Some(s_me) = tangency(&dw, m1).unwrap() {
                prop_assume!(sigma > s_me);
            }
        }
        let q = qs_solve(&dw, m1, ell, pair).unwrap();
        prop_assert!((dw.d1(q.x1) - q.sigma).abs() <= 1e-10);
        prop_assert!((dw.d1(q.x2) - q.sigma).abs() <= 1e-10);
        prop_assert!((m1 * q.x1 + (1.0 - m1) * q.x2 - ell).abs() <= 1e-12);
        prop_assert!((q.sigma - sigma).abs() <= 1e-8);
    }

    #[test]
    fn corner_joins_both_pairs(m1 in 0.05f64..0.95) {
        let dw = DoubleWell::quartic();
        let ell = corner_ell(&dw, m1);
        let a = qs_solve(&dw, m1, ell, BranchPair::MinusPlus).unwrap();
        let b = qs_solve(&dw, m1, ell, BranchPair::ZeroPlus).unwrap();
        prop_assert!((a.sigma - b.sigma).abs() < 1e-9);
        prop_assert!((a.x1 - b.x1).abs() < 1e-4);
    }
}
