use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sdde_control::car_following::{
    build_functionals, build_model, build_sliding_controller, build_sontag_controller, sample_interior_buffer,
    CarFollowingParams,
};
use sdde_control::controllers::{safety_admissible, sontag_kappa, DEFAULT_ZERO_THRESHOLD};
use sdde_control::functionals::finite_difference_gradient;
use sdde_control::verification::{identity_suite, wilson_interval, IdentityOptions, WILSON_Z95};
use sdde_control::HistorySegment;

fn samples(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, n)
}

fn history_from(values: &[f64], dt: f64) -> HistorySegment {
    let vs: Vec<DVector<f64>> = values.iter().map(|&v| DVector::from_element(1, v)).collect();
    HistorySegment::from_samples(dt * (values.len() - 1) as f64, dt, &vs).unwrap()
}

proptest! {
    #[test]
    fn on_grid_sampling_returns_stored_samples(values in samples(11)) {
        let h = history_from(&values, 0.1);
        for (k, v) in values.iter().enumerate() {
            let theta = -((10 - k) as f64) * 0.1;
            prop_assert_eq!(h.sample(theta).unwrap()[0], *v);
        }
    }

    #[test]
    fn interpolation_stays_between_neighbours(values in samples(11), frac in 0.0..1.0f64, k in 0usize..10) {
        let h = history_from(&values, 0.1);
        let theta = -((10 - k) as f64) * 0.1 + frac * 0.1;
        let x = h.sample(theta).unwrap()[0];
        let (lo, hi) = (values[k].min(values[k + 1]), values[k].max(values[k + 1]));
        prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
    }

    #[test]
    fn integral_is_linear_in_the_weight(values in samples(21), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let h = history_from(&values, 0.05);
        let w1 = |x: &[f64]| x[0] * x[0];
        let w2 = |x: &[f64]| x[0].sin();
        let lhs = h.integrate(|x| a * w1(x) + b * w2(x)).unwrap();
        let rhs = a * h.integrate(w1).unwrap() + b * h.integrate(w2).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn integral_of_a_constant_is_constant_times_delay(c in -10.0..10.0f64) {
        let h = HistorySegment::constant(0.2, 0.01, &[c]).unwrap();
        let got = h.integrate(|x| x[0]).unwrap();
        prop_assert!((got - 0.2 * c).abs() <= 1e-12 * (1.0 + c.abs()));
    }

    #[test]
    fn advance_shifts_the_window(values in samples(6), next in -50.0..50.0f64) {
        let mut h = history_from(&values, 0.1);
        h.advance(&[next]).unwrap();
        prop_assert_eq!(h.newest()[0], next);
        for k in 0..5 {
            prop_assert_eq!(h.get(k)[0], values[k + 1]);
        }
    }

    #[test]
    fn combine_is_pointwise(x in samples(6), y in samples(6), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let hx = history_from(&x, 0.1);
        let hy = history_from(&y, 0.1);
        let c = hx.combine(a, &hy, b).unwrap();
        for k in 0..6 {
            prop_assert_eq!(c.get(k)[0], a * x[k] + b * y[k]);
        }
    }

    #[test]
    fn sontag_decrement_matches_closed_form(
        p in -100.0..100.0f64,
        q in prop::collection::vec(-10.0..10.0f64, 1..4),
        lambda in 0.01..10.0f64,
    ) {
        let q = DVector::from_vec(q);
        let qn2 = q.norm_squared();
        prop_assume!(qn2 > 1e-6);
        let k = sontag_kappa(lambda, p, &q, DEFAULT_ZERO_THRESHOLD);
        let rhs = -(p * p + lambda * qn2 * qn2).sqrt();
        prop_assert!((p + q.dot(&k) - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        // The input is collinear with -q.
        prop_assert!(k.dot(&q) <= 0.0);
    }

    #[test]
    fn sontag_input_obeys_magnitude_bound(p in -1.0..1.0f64, s in 1e-6..1e-3f64, lambda in 0.1..10.0f64) {
        let q = DVector::from_element(1, s);
        let k = sontag_kappa(lambda, p, &q, DEFAULT_ZERO_THRESHOLD);
        // |κ| ≤ (|p| + √(p² + λs⁴))/s ; for p ≤ 0 it is O(s).
        if p <= 0.0 {
            prop_assert!(k.norm() <= lambda.sqrt() * s + 1e-12);
        } else {
            let bound = (p + (p * p + lambda * s.powi(4)).sqrt()) / s;
            prop_assert!(k.norm() <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn wilson_interval_contains_the_estimate(n in 1usize..5000, frac in 0.0..=1.0f64) {
        let s = ((n as f64) * frac).round() as usize;
        let (lo, hi) = wilson_interval(s, n, WILSON_Z95);
        let p = s as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        // Swapping successes and failures mirrors the interval.
        let (mlo, mhi) = wilson_interval(n - s, n, WILSON_Z95);
        prop_assert!((lo - (1.0 - mhi)).abs() < 1e-12 && (hi - (1.0 - mlo)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sliding_identities_hold_on_random_buffers(seed in any::<u64>(), noise in 0.0..2.0f64) {
        let params = CarFollowingParams { noise_scale: noise, ..CarFollowingParams::default() };
        let sliding = build_sliding_controller(&params).unwrap();
        let sontag = build_sontag_controller(&params, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let report = identity_suite(
            &sliding,
            &sontag,
            5,
            &mut || sample_interior_buffer(&mut rng, &params, 1e-2),
            IdentityOptions::default(),
        ).unwrap();
        prop_assert!(report.passed(), "{}", report.summary());
    }

    #[test]
    fn barrier_gradient_matches_central_differences(seed in any::<u64>()) {
        let params = CarFollowingParams::default();
        let fs = build_functionals(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = sample_interior_buffer(&mut rng, &params, 1e-2).unwrap();
        let barrier = fs.scbkf.barrier.as_ref();
        let x = phi.newest().to_vec();
        let analytic = barrier.pointwise_gradient(&phi, &x).unwrap();
        let numeric = finite_difference_gradient(barrier, &phi, &x, 1e-5).unwrap();
        for i in 0..3 {
            prop_assert!((analytic[i] - numeric[i]).abs() <= 1e-6 * (1.0 + analytic[i].abs()));
        }
    }

    #[test]
    fn admissibility_margin_is_affine_in_the_input(seed in any::<u64>(), u1 in -5.0..5.0f64, u2 in -5.0..5.0f64) {
        let params = CarFollowingParams::default();
        let fs = build_functionals(&params).unwrap();
        let model = build_model(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = sample_interior_buffer(&mut rng, &params, 1e-2).unwrap();
        let margin = |u: f64| safety_admissible(&fs.scbkf, &model, 0.0, &phi, &DVector::from_element(1, u)).unwrap().margin;
        let (m1, m2, mid) = (margin(u1), margin(u2), margin(0.5 * (u1 + u2)));
        prop_assert!((0.5 * (m1 + m2) - mid).abs() <= 1e-9 * (1.0 + mid.abs()));
    }
}
