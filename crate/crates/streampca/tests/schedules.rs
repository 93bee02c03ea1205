//! Learning-rate plans against an evaluator written straight from the phase
//! formulas, point for point over entire horizons.

use proptest::prelude::*;
use streampca::schedules::{
    gap_dep_schedule, gap_free_schedule, insertion_columns, ojapp_plan, Schedule,
    ScheduleConstants,
};

fn defaults() -> ScheduleConstants {
    ScheduleConstants::default()
}

/// Three-phase rate written out by hand: flat warmup, flat plateau, harmonic
/// decay measured from the end of the warmup.
fn hand_eta(t: u64, key: f64, t0: u64, t1: u64) -> f64 {
    if t <= t0 {
        1.0 / (key * t0 as f64)
    } else if t <= t0 + t1 {
        1.0 / (key * t1 as f64)
    } else {
        1.0 / (key * (t - t0) as f64)
    }
}

fn assert_curves_match(s: &Schedule, key: f64) {
    for t in 1..=s.total_steps() {
        let got = s.eta_at(t).unwrap();
        let want = hand_eta(t, key, s.t0(), s.t1());
        assert!(
            (got - want).abs() <= 1e-15 * want,
            "η at t = {t}: {got} vs hand value {want}"
        );
    }
}

#[test]
fn gap_keyed_curve_matches_the_hand_evaluator_everywhere() {
    // k=4, Λ=0.3, gap=0.1, ε=1, p=0.5 → T0=480, T1=30, T=540.
    let s = gap_dep_schedule(4, 0.3, 0.1, 1.0, 0.5, &defaults()).unwrap();
    assert_eq!((s.t0(), s.t1(), s.total_steps()), (480, 30, 540));
    assert_curves_match(&s, 0.1);
    assert!(s.eta_at(0).is_err());
    assert!(s.eta_at(541).is_err());
}

#[test]
fn band_keyed_curve_matches_the_hand_evaluator_everywhere() {
    // k=5, Λ1=0.4, Λ2=0.1, ρ=0.05, ε=1, p=0.5 → T0=8000, T1=200, tail=200.
    let s = gap_free_schedule(5, 0.4, 0.1, 0.05, 1.0, 0.5, &defaults()).unwrap();
    assert_eq!((s.t0(), s.t1(), s.total_steps()), (8000, 200, 8400));
    assert_curves_match(&s, 0.05);
}

#[test]
fn rate_sums_match_brute_force() {
    let s = gap_dep_schedule(4, 0.3, 0.1, 1.0, 0.5, &defaults()).unwrap();
    for (a, b) in [(1, 540), (1, 480), (479, 482), (505, 515), (510, 511), (37, 37)] {
        let brute: f64 = (a..=b).map(|t| s.eta_at(t).unwrap()).sum();
        let fast = s.eta_sum(a, b).unwrap();
        assert!(
            (fast - brute).abs() <= 1e-12 * brute.max(1.0),
            "Ση over [{a},{b}]: {fast} vs {brute}"
        );
    }
}

#[test]
fn staged_plan_shape_and_sawtooth() {
    // k=7 → installments [4, 2, 1]; Λ1=0.3, Λ2=0.1, ρ=0.05, ε=1, p=0.5:
    // T0 = (0.3 + 0.1/0.25)/(0.0025·0.25) = 1120, T1 = 0.4/0.0025 = 160,
    // tail = 160, total = 33·1120 + 320 = 37280.
    assert_eq!(insertion_columns(7).unwrap(), vec![4, 2, 1]);
    let plan = ojapp_plan(7, 0.3, 0.1, 0.05, 1.0, 0.5, &defaults()).unwrap();
    assert_eq!(plan.stages(), 3);
    assert_eq!(plan.total_columns(), 7);
    let s = &plan.schedule;
    assert_eq!((s.t0(), s.t1()), (1120, 160));
    assert_eq!(s.total_steps(), 37_280);
    assert_eq!(plan.epochs[0].length, 11 * 1120);
    assert_eq!(plan.epochs[1].length, 11 * 1120);
    assert_eq!(plan.epochs[2].length, 37_280 - 22 * 1120);

    let warmup = 1.0 / (0.05 * 1120.0);
    for epoch in 0..3u64 {
        let start = epoch * 11 * 1120;
        // Every epoch opens at the flat warmup rate...
        assert!((s.eta_at(start + 1).unwrap() - warmup).abs() < 1e-15 * warmup);
        // ...decays within the epoch...
        let mut prev = f64::INFINITY;
        let end = start + 11 * 1120;
        for t in (start + 1..=end).step_by(97) {
            let eta = s.eta_at(t).unwrap();
            assert!(eta <= prev + 1e-18, "rate rose inside epoch {epoch} at t = {t}");
            prev = eta;
        }
        // ...and the next epoch resets the rate upward.
        if epoch < 2 {
            assert!(s.eta_at(end + 1).unwrap() > s.eta_at(end).unwrap());
        }
    }

    // After the last insertion epoch: plateau then harmonic, hand-checked.
    let post = 33 * 1120u64;
    let plateau = 1.0 / (0.05 * 160.0);
    assert!((s.eta_at(post + 1).unwrap() - plateau).abs() < 1e-15 * plateau);
    let t = post + 160 + 40;
    let want = 1.0 / (0.05 * 200.0);
    assert!((s.eta_at(t).unwrap() - want).abs() < 1e-15 * want);
}

#[test]
fn total_overrides_preserve_the_curve_prefix() {
    let s = gap_dep_schedule(4, 0.3, 0.1, 1.0, 0.5, &defaults()).unwrap();
    let longer = s.with_total(1000);
    let shorter = s.with_total(520);
    for t in 1..=520 {
        let base = s.eta_at(t).unwrap();
        assert_eq!(longer.eta_at(t).unwrap(), base);
        assert_eq!(shorter.eta_at(t).unwrap(), base);
    }
    assert!(longer.eta_at(1000).unwrap() > 0.0);
    assert!(shorter.eta_at(521).is_err());

    let plan = ojapp_plan(3, 0.3, 0.0, 0.1, 1.0, 0.5, &defaults()).unwrap();
    let min_total = 11 * plan.stages() as u64 * plan.schedule.t0() + plan.schedule.t1() + 1;
    assert!(plan.with_total(min_total - 1).is_err());
    let grown = plan.with_total(plan.schedule.total_steps() + 500).unwrap();
    assert_eq!(
        grown.epochs.last().unwrap().length,
        plan.epochs.last().unwrap().length + 500
    );
    for t in 1..=plan.schedule.total_steps() {
        assert_eq!(
            grown.schedule.eta_at(t).unwrap(),
            plan.schedule.eta_at(t).unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gap_keyed_invariants_hold(
        k in 1_usize..6,
        lam in 0.05_f64..1.0,
        gap_frac in 0.3_f64..1.0,
        eps in 0.05_f64..1.0,
        p in 0.2_f64..1.0,
    ) {
        let gap = gap_frac / k as f64;
        let s = gap_dep_schedule(k, lam, gap, eps, p, &defaults()).unwrap();
        prop_assume!(s.total_steps() < 200_000);
        let warmup = s.eta_at(1).unwrap();
        let plateau = s.eta_at(s.t0() + 1).unwrap();
        prop_assert!(warmup <= plateau, "warmup {warmup} above plateau {plateau}");
        prop_assert!(s.nonincreasing_from(s.t0() + 1));
        let stride = (s.total_steps() / 199).max(1);
        for t in (1..=s.total_steps()).step_by(stride as usize) {
            let eta = s.eta_at(t).unwrap();
            prop_assert!(eta.is_finite() && eta > 0.0);
        }
    }

    #[test]
    fn band_keyed_invariants_hold(
        k in 1_usize..6,
        lam1 in 0.05_f64..0.9,
        lam2 in 0.0_f64..0.5,
        rho_frac in 0.3_f64..1.0,
        eps in 0.05_f64..1.0,
        p in 0.2_f64..1.0,
    ) {
        let rho = rho_frac / k as f64;
        let s = gap_free_schedule(k, lam1, lam2, rho, eps, p, &defaults()).unwrap();
        prop_assume!(s.total_steps() < 200_000);
        prop_assert!(s.eta_at(1).unwrap() <= s.eta_at(s.t0() + 1).unwrap());
        prop_assert!(s.nonincreasing_from(s.t0() + 1));
        let bounds = s.boundaries();
        prop_assert!(bounds.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(*bounds.last().unwrap(), s.total_steps());
    }
}
