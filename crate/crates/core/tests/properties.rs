use proptest::prelude::*;

use loop_pe::composite::predict;
use loop_pe::gauge::{gauge_for, gauge_map, gauge_psi};
use loop_pe::neural::{init_params, HyperParams};
use loop_pe::oracle::solve_exact;
use loop_pe::problem::{feasibility_gap, objective, DecisionVector, Permutation, Permute, ProblemInstance};

fn instance(max_n: usize) -> impl Strategy<Value = ProblemInstance> {
    (1..=max_n)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(5.0..30.0f64, n),
                prop::collection::vec(5.0..30.0f64, n),
                1.0..120.0f64,
            )
        })
        .prop_filter_map("no interior point", |(cap, dem, p)| {
            let x = ProblemInstance::from_slices(&cap, &dem, p).ok()?;
            gauge_for(&x).is_ok().then_some(x)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gauge_output_is_always_feasible(x in instance(12), scale in -3.0..4.0f64, seed in 0u64..1000) {
        let gd = gauge_for(&x).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let v = DecisionVector(
            (0..x.len())
                .map(|_| 10f64.powf(scale) * rand::Rng::random_range(&mut rng, -1.0..1.0))
                .collect(),
        );
        let u = gauge_map(&gd, &v).unwrap();
        prop_assert!(feasibility_gap(&x, &u).unwrap() <= 1e-6);
        prop_assert!(gauge_psi(&gd, &v).unwrap() >= 0.0);
    }

    #[test]
    fn model_output_is_feasible_and_equivariant(x in instance(10), seed in 0u64..50, shift in 0usize..10) {
        let params = init_params(HyperParams { d_h: 8, ..HyperParams::default() }, seed).unwrap();
        let u = predict(&params, &x).unwrap();
        prop_assert!(feasibility_gap(&x, &u).unwrap() <= 1e-6);

        let n = x.len();
        let sigma = Permutation::new((0..n).map(|i| (i + shift) % n).collect()).unwrap();
        let moved = predict(&params, &x.permute(&sigma).unwrap()).unwrap();
        prop_assert!(moved.max_abs_diff(&u.permute(&sigma).unwrap()) <= 1e-6);
    }

    #[test]
    fn exact_solution_beats_feasible_perturbations(x in instance(8), t in 0.0..1.0f64) {
        let u_star = solve_exact(&x).unwrap();
        prop_assert!(feasibility_gap(&x, &u_star).unwrap() <= 1e-9);
        // Mixing with the interior point stays feasible by convexity.
        let u0 = gauge_for(&x).unwrap().u0;
        let mix = DecisionVector(u_star.0.iter().zip(&u0.0).map(|(a, b)| (1.0 - t) * a + t * b).collect());
        prop_assert!(objective(&x, &u_star).unwrap() <= objective(&x, &mix).unwrap() + 1e-9);
    }
}
