use bpire::analyze::fit_exponent;
use bpire::gfalg::{compose_backward, compose_forward, conditional_pgf_n, product_c_both};
use bpire::renewal::solve_recursion_raw;
use bpire::stats::{isotonic_nonincreasing, mann_kendall};
use bpire::walk::{path_statistics, rho_from_stable};
use bpire::{EnvRealization, FracLinear, ImmigrationLaw, OffspringLaw, StableParams};
use proptest::prelude::*;

fn log_means(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 1..max_len)
}

fn env<'a>(xs: &[f64], g: &'a ImmigrationLaw) -> EnvRealization<'a> {
    let laws = xs
        .iter()
        .map(|&x| OffspringLaw::from_log_mean(x).unwrap())
        .collect();
    EnvRealization::new(laws, vec![g; xs.len()], g)
}

proptest! {
    #[test]
    fn fractional_linear_closed_under_composition(x in -6.0f64..6.0, y in -6.0f64..6.0, s in 0.0f64..1.0) {
        let f = OffspringLaw::from_log_mean(x).unwrap();
        let g = OffspringLaw::from_log_mean(y).unwrap();
        let h = FracLinear::geometric(&f).compose(&FracLinear::geometric(&g));
        let u = 1.0 - s;
        let direct = f.tail_gap(g.tail_gap(u));
        prop_assert!((h.eval_gap(u) - direct).abs() <= 1e-13 * direct);
        prop_assert!((FracLinear::IDENTITY.compose(&h).eval(s) - h.eval(s)).abs() <= 1e-15);
    }

    #[test]
    fn compositions_are_nondecreasing_pgfs(xs in log_means(40), s in 0.0f64..1.0, ds in 0.0f64..0.5) {
        let g = ImmigrationLaw::two_thirds_pair();
        let e = env(&xs, &g);
        let n = xs.len();
        let t = (s + ds).min(1.0);
        let (a, b) = (compose_forward(&e, 0, n, s).unwrap(), compose_forward(&e, 0, n, t).unwrap());
        prop_assert!((0.0..=1.0).contains(&a) && a <= b + 1e-15);
        let (a, b) = (compose_backward(&e, n, 0, s).unwrap(), compose_backward(&e, n, 0, t).unwrap());
        prop_assert!((0.0..=1.0).contains(&a) && a <= b + 1e-13, "{} {}", a, b);
        prop_assert_eq!(compose_forward(&e, 0, n, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn product_literal_equals_closed_form(xs in log_means(200), s in 0.0f64..1.0) {
        let g = ImmigrationLaw::two_thirds_pair();
        let e = env(&xs, &g);
        let (lit, closed) = product_c_both(&e, xs.len(), s);
        prop_assert!(((lit - closed) / closed).abs() <= 1e-12);
    }

    #[test]
    fn conditional_pgf_is_a_pgf(xs in log_means(10), s in 0.0f64..1.0) {
        let g = ImmigrationLaw::two_thirds_pair();
        let e = env(&xs, &g);
        let n = xs.len();
        let v = conditional_pgf_n(&e, n, s).unwrap();
        let v0 = conditional_pgf_n(&e, n, 0.0).unwrap();
        prop_assert!((0.0..=1.0 + 1e-15).contains(&v));
        prop_assert!(v0 <= v + 1e-15);
        prop_assert!((conditional_pgf_n(&e, n, 1.0).unwrap() - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn reflection_negates_the_path(xs in prop::collection::vec(-3.0f64..3.0, 0..50)) {
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        let a = path_statistics(&xs, true);
        let b = path_statistics(&neg, false);
        prop_assert_eq!(a.prefix_sums, b.prefix_sums);
        prop_assert_eq!(a.running_min, b.running_min);
        prop_assert_eq!(a.argmin_first, b.argmin_first);
    }

    #[test]
    fn walk_statistics_are_scale_invariant(xs in prop::collection::vec(-3i32..=3, 1..50), c in 1u32..8) {
        let a: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
        let b: Vec<f64> = xs.iter().map(|&x| (x as f64) * c as f64).collect();
        let (pa, pb) = (path_statistics(&a, false), path_statistics(&b, false));
        prop_assert_eq!(pa.argmin_first, pb.argmin_first);
        prop_assert_eq!(pa.running_min * c as f64, pb.running_min);
    }

    #[test]
    fn rho_reflects_with_skewness(alpha in 0.1f64..2.0, beta in -1.0f64..1.0) {
        prop_assume!((alpha - 1.0).abs() > 1e-3);
        let p = StableParams::new(alpha, beta, 1.0).unwrap();
        let r = rho_from_stable(&p) + rho_from_stable(&p.reflected());
        prop_assert!((r - 1.0).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&rho_from_stable(&p)));
    }

    #[test]
    fn immigration_gap_complements_pgf(ps in prop::collection::vec(0.0f64..1.0, 2..6), u in 0.0f64..1.0) {
        let total: f64 = ps.iter().sum();
        prop_assume!(total > 0.0);
        let law = ImmigrationLaw::finite_support(ps.iter().map(|p| p / total).collect()).unwrap();
        prop_assert!((law.tail_gap(u) + law.pgf(1.0 - u) - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn recursion_is_bounded_and_linear_in_h_star(h in prop::collection::vec(0.0f64..0.1, 1..30)) {
        // H from a nonincreasing d with d_0 = 1 and H* ≤ H keeps R in [0, 1]
        let mut d = vec![1.0];
        for x in &h {
            let last = *d.last().unwrap();
            d.push(last * (1.0 - x));
        }
        let hh: Vec<f64> = d.windows(2).map(|w| w[0] - w[1]).collect();
        let hs: Vec<f64> = hh.iter().map(|x| 0.5 * x).collect();
        let r = solve_recursion_raw(&hh, &hs);
        prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
        let doubled: Vec<f64> = hs.iter().map(|x| 2.0 * x).collect();
        let r2 = solve_recursion_raw(&hh, &doubled);
        prop_assert!(r.iter().zip(&r2).all(|(a, b)| (2.0 * a - b).abs() <= 1e-15));
    }

    #[test]
    fn mann_kendall_flips_under_reversal(xs in prop::collection::vec(-1.0f64..1.0, 3..40)) {
        let mut rev = xs.clone();
        rev.reverse();
        prop_assert_eq!(mann_kendall(&xs, 0.0).s, -mann_kendall(&rev, 0.0).s);
    }

    #[test]
    fn isotonic_fit_is_nonincreasing(xs in prop::collection::vec(0.0f64..1.0, 1..40)) {
        let w = vec![1.0; xs.len()];
        let fit = isotonic_nonincreasing(&xs, &w);
        prop_assert!(fit.windows(2).all(|p| p[0] >= p[1] - 1e-15));
        let (a, b): (f64, f64) = (xs.iter().sum(), fit.iter().sum());
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn exponent_fit_recovers_power_laws(slope in -2.0f64..0.0, c in 0.1f64..10.0) {
        let pts: Vec<(f64, f64, f64)> = (16..=2048)
            .map(|n| (n as f64, c * (n as f64).powf(slope), 0.0))
            .collect();
        let fit = fit_exponent(&pts, (16.0, 2048.0)).unwrap();
        prop_assert!((fit.slope - slope).abs() <= 1e-9);
        prop_assert!(!fit.drift_flag);
    }
}
