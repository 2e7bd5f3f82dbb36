use std::f64::consts::PI;

use isoboltz_core::constants::{compute_constants, phi, ModelParams};
use isoboltz_core::specfun::{digamma, gamma, ln_gamma_signed, sin_pi};
use proptest::prelude::*;

fn off_pole(x: f64) -> bool {
    x > 0.0 || (x - x.round()).abs() > 1e-3
}

/// `(d, gamma, s)` with `-d < gamma < -2s`.
fn very_soft() -> impl Strategy<Value = ModelParams> {
    (1usize..=5, 0.02f64..0.98, 0.01f64..0.99).prop_filter_map("empty gamma range", |(d, s, u)| {
        let (lo, hi) = (-(d as f64) + 0.01, -2.0 * s - 0.01);
        (lo < hi).then_some(ModelParams { d, gamma: lo + u * (hi - lo), s })
    })
}

proptest! {
    #[test]
    fn gamma_recurrence(x in -6.0f64..12.0) {
        prop_assume!(off_pole(x) && off_pole(x + 1.0));
        let (g, g1) = (gamma(x).unwrap(), gamma(x + 1.0).unwrap());
        prop_assert!((g1 - x * g).abs() <= 1e-13 * g1.abs());
    }

    #[test]
    fn gamma_reflection(x in -4.0f64..5.0) {
        prop_assume!(off_pole(x) && off_pole(1.0 - x));
        let lhs = gamma(x).unwrap() * gamma(1.0 - x).unwrap();
        let rhs = PI / sin_pi(x);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
    }

    #[test]
    fn log_gamma_matches_gamma(x in -5.0f64..30.0) {
        prop_assume!(off_pole(x));
        let (ln_abs, sign) = ln_gamma_signed(x).unwrap();
        let g = gamma(x).unwrap();
        prop_assert_eq!(sign, g.signum());
        prop_assert!((ln_abs - g.abs().ln()).abs() <= 1e-12 * ln_abs.abs().max(1.0));
    }

    #[test]
    fn digamma_recurrence(x in 0.01f64..20.0) {
        let (a, b) = (digamma(x).unwrap(), digamma(x + 1.0).unwrap());
        prop_assert!((b - a - 1.0 / x).abs() <= 1e-11 * b.abs().max(1.0 / x.abs()).max(1.0));
    }

    #[test]
    fn constant_identities_hold(p in very_soft()) {
        let c = compute_constants(&p).unwrap();
        prop_assert!(c.c_dgs > 0.0 && c.c_r > 0.0 && c.frac_norm > 0.0);
        prop_assert!(((c.c2 - c.c_dgs * c.c_r) / c.c2).abs() < 1e-11);
        prop_assert!(((c.c1 - c.c_dgs / c.frac_norm) / c.c1).abs() < 1e-11);
        let ph = phi(&p).unwrap();
        prop_assert!((c.ratio * (2.0 * ph - 1.0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ratio_exceeds_one_exactly_below_the_threshold(p in very_soft()) {
        let t = p.l2_threshold();
        prop_assume!((p.gamma - t).abs() > 1e-6);
        let c = compute_constants(&p).unwrap();
        prop_assert_eq!(c.ratio > 1.0, p.gamma < t, "gamma {} threshold {} ratio {}", p.gamma, t, c.ratio);
    }
}
