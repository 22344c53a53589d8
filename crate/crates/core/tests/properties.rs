use ldf::autodiff::Tape;
use ldf::constraint::{
    dual_ascent_lambda, dual_ascent_mu, lagrangian_loss, violation_degree, violation_node, ConstraintKind,
    ConstraintTerm,
};
use ldf::data::Sample;
use ldf::domains::fairness::{dt_index, expectation_matching_violation};
use ldf::domains::monotone::{build_dominance_pairs, dominance, vc_smvc};
use ldf::trainer::{error_percent, gain};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = ConstraintKind> {
    prop_oneof![Just(ConstraintKind::Inequality), Just(ConstraintKind::Equality)]
}

proptest! {
    #[test]
    fn violation_degree_matches_definition(k in kind(), sigma in -1e3..1e3f64) {
        let nu = violation_degree(k, sigma).unwrap();
        prop_assert!(nu >= 0.0);
        let expected = match k {
            ConstraintKind::Inequality => sigma.max(0.0),
            ConstraintKind::Equality => sigma.abs(),
        };
        prop_assert_eq!(nu, expected);
        if nu == 0.0 && k == ConstraintKind::Equality {
            prop_assert_eq!(sigma, 0.0);
        }
    }

    #[test]
    fn slack_never_increases_violation(k in kind(), sigma in -5.0..5.0f64, e1 in 0.0..2.0f64, e2 in 0.0..2.0f64) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let mut t = Tape::new();
        let s = t.constant(sigma);
        let a = violation_node(&mut t, k, s, lo);
        let b = violation_node(&mut t, k, s, hi);
        prop_assert!(t.value(b) <= t.value(a));
        prop_assert!(t.value(b) >= 0.0);
    }

    #[test]
    fn zero_multipliers_leave_the_base_loss(base in -10.0..10.0f64, pred in prop::collection::vec(-3.0..3.0f64, 1..4)) {
        let term = ConstraintTerm::new("sum", ConstraintKind::Equality, 0, 1.0, |t, p, _| Ok(vec![t.sum(p)]));
        let mut tape = Tape::new();
        let b = tape.constant(base);
        let vars: Vec<_> = pred.iter().map(|&v| tape.constant(v)).collect();
        let sample = Sample::new(vec![], vec![], vec![]);
        let parts = lagrangian_loss(&mut tape, b, &[term], &vars, &sample, &[0.0]).unwrap();
        prop_assert_eq!(parts.loss, b);
        let total: f64 = pred.iter().sum();
        prop_assert!((parts.violations[0] - total.abs()).abs() < 1e-12);
    }

    #[test]
    fn ascent_is_monotone_and_nonnegative(
        start in prop::collection::vec(0.0..5.0f64, 1..5),
        step in 0.0..1.0f64,
        seed in prop::collection::vec(0.0..10.0f64, 5),
    ) {
        let v: Vec<f64> = seed.iter().take(start.len()).copied().collect();
        let l = dual_ascent_lambda(&start, step, &v).unwrap();
        let m = dual_ascent_mu(&start, step, &v).unwrap();
        for i in 0..start.len() {
            prop_assert!(l[i] >= start[i] && l[i] >= 0.0);
            prop_assert!(m[i] >= start[i] && m[i] >= 0.0);
        }
    }

    #[test]
    fn constant_violations_grow_linearly(step in 1e-5..1.0f64, v in 0.0..10.0f64, k in 1usize..40) {
        let mut lambda = vec![0.0];
        let mut mu = vec![0.0];
        for _ in 0..k {
            lambda = dual_ascent_lambda(&lambda, step, &[v]).unwrap();
            mu = dual_ascent_mu(&mu, step, &[v]).unwrap();
        }
        let expected = k as f64 * step * v;
        prop_assert!((lambda[0] - expected).abs() <= 1e-12 * expected.max(1.0));
        prop_assert!((mu[0] - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn dominance_pairs_match_brute_force(
        dim in 1usize..4,
        raw in prop::collection::vec(prop::collection::vec(2u32..=32, 3), 2..50),
    ) {
        let x: Vec<Vec<u32>> = raw.into_iter().map(|v| v[..dim].to_vec()).collect();
        let pairs = build_dominance_pairs(&x).unwrap();
        let mut brute = Vec::new();
        for a in 0..x.len() {
            for b in 0..x.len() {
                if a != b && (0..dim).all(|i| x[a][i] <= x[b][i]) {
                    brute.push((a, b));
                }
            }
        }
        prop_assert_eq!(&pairs, &brute);
        for &(a, b) in &pairs {
            prop_assert!(dominance(&x[a], &x[b]).unwrap());
        }
    }

    #[test]
    fn vc_and_smvc_vanish_together(
        preds in prop::collection::vec(-1.0..1.0f64, 2..30),
        picks in prop::collection::vec((0usize..30, 0usize..30), 0..60),
    ) {
        let n = preds.len();
        let pairs: Vec<(usize, usize)> = picks.into_iter().map(|(a, b)| (a % n, b % n)).filter(|(a, b)| a != b).collect();
        let (vc, smvc) = vc_smvc(&preds, &pairs);
        prop_assert_eq!(vc == 0, smvc == 0.0);
        prop_assert!(vc <= pairs.len());
        prop_assert!(smvc >= 0.0);
    }

    #[test]
    fn dt_is_a_symmetric_rate_gap(decisions in prop::collection::vec(any::<bool>(), 2..60), split in 1usize..59) {
        let n = decisions.len();
        let split = 1 + split % (n - 1);
        let protected: Vec<u8> = (0..n).map(|i| u8::from(i >= split)).collect();
        let flipped: Vec<u8> = protected.iter().map(|s| 1 - s).collect();
        let dt = dt_index(&decisions, &protected).unwrap();
        prop_assert!((0.0..=1.0).contains(&dt));
        prop_assert_eq!(dt, dt_index(&decisions, &flipped).unwrap());
        let r0 = decisions[..split].iter().filter(|&&d| d).count() as f64 / split as f64;
        let r1 = decisions[split..].iter().filter(|&&d| d).count() as f64 / (n - split) as f64;
        prop_assert!((dt - (r0 - r1).abs()).abs() < 1e-12);
    }

    #[test]
    fn expectation_matching_shrinks_with_slack(
        a in prop::collection::vec(0.0..1.0f64, 1..20),
        b in prop::collection::vec(0.0..1.0f64, 1..20),
        e1 in 0.0..0.5f64,
        e2 in 0.0..0.5f64,
    ) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let v_lo = expectation_matching_violation(&a, &b, lo).unwrap();
        let v_hi = expectation_matching_violation(&a, &b, hi).unwrap();
        prop_assert!(v_hi <= v_lo);
        prop_assert!(v_hi >= 0.0);
    }

    #[test]
    fn gain_times_error_recovers_baseline(base in 1e-4..1e3f64, err in 1e-4..1e3f64) {
        prop_assert!((gain(base, err) * err - base).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn exact_predictions_have_zero_error(rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 1..10)) {
        let (err, _) = error_percent(&rows, &rows, 0..3);
        prop_assert_eq!(err, 0.0);
    }

    #[test]
    fn tape_matches_analytic_derivatives(x in -2.0..2.0f64, y in 0.1..3.0f64) {
        let mut t = Tape::new();
        let px = t.param(x);
        let py = t.param(y);
        let s = t.sin(px);
        let e = t.exp(px);
        let l = t.ln(py);
        let m = t.mul(s, l);
        let d = t.div(e, py);
        let root = t.add(m, d);
        let g = t.backward(root).unwrap();
        let dx = x.cos() * y.ln() + x.exp() / y;
        let dy = x.sin() / y - x.exp() / (y * y);
        prop_assert!((g.param(0) - dx).abs() <= 1e-12 * dx.abs().max(1.0));
        prop_assert!((g.param(1) - dy).abs() <= 1e-12 * dy.abs().max(1.0));
    }
}

#[test]
fn error_percent_example() {
    let (err, absolute) = error_percent(&[vec![1.1, 0.9]], &[vec![1.0, 1.0]], 0..2);
    assert!((err - 10.0).abs() < 1e-12);
    assert!(!absolute);
}

#[test]
fn quoted_gain_example() {
    assert!((gain(3.3465, 0.0055) - 608.4).abs() < 0.1);
}
