//! Property tests for the pooling invariants: bounds, ordering, permutation
//! equivariance, gradient signs, and the generalized-family reductions.

use milpool_core::pooling::{finite_diff_check, pool_backward, pool_forward, BagActivation, PoolingSpec};
use proptest::prelude::*;

const TOL: f64 = 1e-12;

fn bag_strategy() -> impl Strategy<Value = BagActivation<f64>> {
    (
        prop::collection::vec(0.0f64..=1.0, 1..50),
        prop::collection::vec(0.1f64..=3.0, 50),
    )
        .prop_map(|(probs, weights)| {
            let n = probs.len();
            BagActivation::with_weights(probs, weights[..n].to_vec())
        })
}

fn forward(act: &BagActivation<f64>, spec: &PoolingSpec) -> f64 {
    pool_forward(act, spec).unwrap()
}

proptest! {
    #[test]
    fn pooled_value_is_bounded_by_the_frame_range(act in bag_strategy()) {
        let lo = act.probs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = act.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for spec in [
            PoolingSpec::Max,
            PoolingSpec::Average,
            PoolingSpec::LinearSoftmax,
            PoolingSpec::ExpSoftmax,
            PoolingSpec::Attention,
            PoolingSpec::generalized(1.5, 0.5).unwrap(),
        ] {
            let y = forward(&act, &spec);
            prop_assert!(y >= lo && y <= hi, "{spec}: {y} outside [{lo}, {hi}]");
        }
        prop_assert_eq!(forward(&act, &PoolingSpec::Max), hi);
    }

    #[test]
    fn softmax_poolings_sit_between_average_and_max(act in bag_strategy()) {
        let avg = forward(&act, &PoolingSpec::Average);
        let max = forward(&act, &PoolingSpec::Max);
        for spec in [PoolingSpec::LinearSoftmax, PoolingSpec::ExpSoftmax] {
            let y = forward(&act, &spec);
            prop_assert!(avg <= y + TOL, "{spec}: average {avg} > {y}");
            prop_assert!(y <= max + TOL, "{spec}: {y} > max {max}");
        }
    }

    #[test]
    fn permuting_frames_permutes_gradients(act in bag_strategy(), seed in any::<u64>()) {
        use rand::prelude::*;
        let mut order: Vec<usize> = (0..act.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let permuted = BagActivation::with_weights(
            order.iter().map(|&i| act.probs[i]).collect(),
            order.iter().map(|&i| act.weights.as_ref().unwrap()[i]).collect(),
        );
        let max_value = act.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let unique_max = act.probs.iter().filter(|&&p| p == max_value).count() == 1;
        for spec in [
            PoolingSpec::Max,
            PoolingSpec::Average,
            PoolingSpec::LinearSoftmax,
            PoolingSpec::ExpSoftmax,
            PoolingSpec::Attention,
            PoolingSpec::generalized(-0.5, 2.0).unwrap(),
        ] {
            let y = forward(&act, &spec);
            let yp = forward(&permuted, &spec);
            prop_assert!((y - yp).abs() <= TOL, "{spec}: {y} vs {yp}");
            if matches!(spec, PoolingSpec::Max) && !unique_max {
                // Tie-broken subgradient is index-dependent by design.
                continue;
            }
            let g = pool_backward(&act, &spec, y).unwrap();
            let gp = pool_backward(&permuted, &spec, yp).unwrap();
            for (slot, &src) in order.iter().enumerate() {
                prop_assert!((g.d_probs[src] - gp.d_probs[slot]).abs() <= TOL);
            }
            if let (Some(dw), Some(dwp)) = (&g.d_weights, &gp.d_weights) {
                for (slot, &src) in order.iter().enumerate() {
                    prop_assert!((dw[src] - dwp[slot]).abs() <= TOL);
                }
            }
        }
    }

    #[test]
    fn gradient_signs_match_the_analysis(act in bag_strategy()) {
        let n = act.len();

        // Max: exactly one nonzero entry, equal to 1.
        let y = forward(&act, &PoolingSpec::Max);
        let g = pool_backward(&act, &PoolingSpec::Max, y).unwrap();
        prop_assert_eq!(g.d_probs.iter().filter(|&&v| v != 0.0).count(), 1);
        prop_assert_eq!(g.d_probs.iter().copied().fold(0.0, f64::max), 1.0);

        // Average: every entry exactly 1/n.
        let y = forward(&act, &PoolingSpec::Average);
        let g = pool_backward(&act, &PoolingSpec::Average, y).unwrap();
        prop_assert!(g.d_probs.iter().all(|&v| v == 1.0 / n as f64));

        // Linear softmax: positive exactly where y_i > y/2.
        let y = forward(&act, &PoolingSpec::LinearSoftmax);
        let g = pool_backward(&act, &PoolingSpec::LinearSoftmax, y).unwrap();
        for (&yi, &gi) in act.probs.iter().zip(&g.d_probs) {
            prop_assert_eq!(gi > 0.0, yi > y / 2.0, "y_i {} y {} grad {}", yi, y, gi);
        }

        // Exponential softmax: strictly positive everywhere.
        let y = forward(&act, &PoolingSpec::ExpSoftmax);
        let g = pool_backward(&act, &PoolingSpec::ExpSoftmax, y).unwrap();
        prop_assert!(g.d_probs.iter().all(|&v| v > 0.0));

        // Attention: prob gradients always positive; weight gradients
        // positive exactly where y_i > y.
        let y = forward(&act, &PoolingSpec::Attention);
        let g = pool_backward(&act, &PoolingSpec::Attention, y).unwrap();
        prop_assert!(g.d_probs.iter().all(|&v| v > 0.0));
        for (&yi, &gi) in act.probs.iter().zip(g.d_weights.as_ref().unwrap()) {
            prop_assert_eq!(gi > 0.0, yi > y, "y_i {} y {} d_weight {}", yi, y, gi);
        }
    }

    #[test]
    fn generalized_family_reduces_to_named_kinds(act in bag_strategy()) {
        let reductions = [
            (PoolingSpec::generalized(0.0, 1.0).unwrap(), PoolingSpec::LinearSoftmax),
            (PoolingSpec::generalized(1.0, 0.0).unwrap(), PoolingSpec::ExpSoftmax),
            (PoolingSpec::generalized(0.0, 0.0).unwrap(), PoolingSpec::Average),
        ];
        for (gen, named) in reductions {
            let yg = forward(&act, &gen);
            let yn = forward(&act, &named);
            prop_assert!((yg - yn).abs() <= TOL, "{gen} vs {named}: {yg} vs {yn}");
            let gg = pool_backward(&act, &gen, yg).unwrap();
            let gn = pool_backward(&act, &named, yn).unwrap();
            for (a, b) in gg.d_probs.iter().zip(&gn.d_probs) {
                prop_assert!((a - b).abs() <= TOL, "{gen} vs {named}: {a} vs {b}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Bags bounded away from the [0,1] endpoints: the analytic-vs-numeric
    // comparison is meaningless across the subgradient kinks the endpoints
    // sit on (the all-zero linear-softmax branch in particular).
    #[test]
    fn analytic_gradients_agree_with_central_differences(
        probs in prop::collection::vec(0.01f64..=0.99, 1..40),
        weights in prop::collection::vec(0.1f64..=3.0, 40),
    ) {
        let n = probs.len();
        let act = BagActivation::with_weights(probs, weights[..n].to_vec());
        for spec in [
            PoolingSpec::Max,
            PoolingSpec::Average,
            PoolingSpec::LinearSoftmax,
            PoolingSpec::ExpSoftmax,
            PoolingSpec::Attention,
            PoolingSpec::generalized(0.0, 1.0).unwrap(),
            PoolingSpec::generalized(1.0, 0.0).unwrap(),
            PoolingSpec::generalized(0.5, 2.0).unwrap(),
        ] {
            let dev = finite_diff_check(&act, &spec, 1e-5).unwrap();
            prop_assert!(dev <= 1e-5, "{spec}: deviation {dev}");
        }
    }
}
