use proptest::prelude::*;
use shs_safe_core::bounds::{branch_values, finite_horizon_unsafe_bound, infinite_horizon_unsafe_bound, BoundBranch};

fn tuple() -> impl Strategy<Value = (f64, f64, f64, f64, u64)> {
    (0.0..2.0f64, 0.1..10.0f64, 0.0..0.1f64, 0.5..0.9999f64, 0u64..500)
        .prop_map(|(mu, gap, eta, gamma, t)| (mu, mu + gap, eta, gamma, t))
}

fn bound(mu: f64, beta: f64, eta: f64, gamma: f64, t: u64) -> f64 {
    finite_horizon_unsafe_bound(mu, beta, eta, gamma, t).unwrap().unsafe_bound
}

// Both branches are exact closed forms, so monotonicity holds up to rounding.
const SLACK: f64 = 1e-12;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn monotone_in_every_argument((mu, beta, eta, gamma, t) in tuple(), d in 0.0..1.0f64) {
        let base = bound(mu, beta, eta, gamma, t);
        prop_assert!(bound(mu, beta, eta, gamma, t + 1 + (d * 50.0) as u64) >= base - SLACK);
        prop_assert!(bound(mu + d * 0.99 * (beta - mu), beta, eta, gamma, t) >= base - SLACK);
        prop_assert!(bound(mu, beta, eta + d * 0.1, gamma, t) >= base - SLACK);
        prop_assert!(bound(mu, beta + d, eta, gamma, t) <= base + SLACK);
    }

    #[test]
    fn clamped_into_the_unit_interval((mu, beta, eta, gamma, t) in tuple()) {
        let b = finite_horizon_unsafe_bound(mu, beta, eta, gamma, t).unwrap();
        prop_assert!((0.0..=1.0).contains(&b.unsafe_bound));
        prop_assert_eq!(b.unsafe_bound, b.raw_value.clamp(0.0, 1.0));
        prop_assert!((b.safety_lower_bound - (1.0 - b.unsafe_bound)).abs() < 1e-15);
        let (small, large) = branch_values(mu, beta, eta, gamma, t);
        let expect = if beta >= eta / (1.0 - gamma) { (small, BoundBranch::EtaSmall) } else { (large, BoundBranch::EtaLarge) };
        prop_assert_eq!(b.raw_value, expect.0);
        prop_assert_eq!(b.branch, expect.1);
    }

    #[test]
    fn finite_horizon_without_drift_term_approaches_the_infinite_one(mu in 0.0..2.0f64, gap in 0.1..10.0f64, gamma in 0.5..0.999f64) {
        let beta = mu + gap;
        let inf = infinite_horizon_unsafe_bound(mu, beta, 0.0).unwrap().unsafe_bound;
        prop_assert!(bound(mu, beta, 0.0, gamma, 10_000) <= inf + SLACK);
    }
}
