use proptest::prelude::*;
use psychoforge_core::cat::{generate_pattern, run_cat, CatConfig, Termination};
use psychoforge_core::dif::{dif_test, DifTest};
use psychoforge_core::irt::{
    item_information, prob_3pl, prob_gpcm, prob_nrm, test_information, IrtModel, ItemParams,
    ScoringMethod,
};
use psychoforge_core::math::sigmoid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn item_strategy() -> impl Strategy<Value = ItemParams> {
    prop_oneof![
        (0.2..3.0f64, -3.0..3.0f64).prop_map(|(a, b)| ItemParams::TwoPl { a, b }),
        (0.2..3.0f64, -3.0..3.0f64, 0.0..0.5f64).prop_map(|(a, b, c)| ItemParams::ThreePl { a, b, c }),
        (0.2..3.0f64, prop::collection::vec(-3.0..3.0f64, 1..5))
            .prop_map(|(a, b)| ItemParams::Gpcm { a, b }),
        (1usize..5).prop_flat_map(|k| {
            (
                prop::collection::vec(-3.0..3.0f64, k),
                prop::collection::vec(-3.0..3.0f64, k),
            )
                .prop_map(|(a, b)| ItemParams::Nrm { a, b })
        }),
    ]
}

proptest! {
    #[test]
    fn probabilities_are_distributions(item in item_strategy(), theta in -40.0..40.0f64) {
        let p = item.probabilities(theta);
        prop_assert_eq!(p.len(), item.categories());
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let lp = item.log_probabilities(theta);
        prop_assert!(lp.iter().all(|v| v.is_finite() || *v == f64::NEG_INFINITY));
    }

    #[test]
    fn information_is_nonnegative(item in item_strategy(), theta in -8.0..8.0f64) {
        let i = item_information(&item, theta);
        prop_assert!(i >= 0.0 && i.is_finite());
    }

    #[test]
    fn binary_collapses(a in 0.1..4.0f64, b in -4.0..4.0f64, theta in -6.0..6.0f64) {
        let two = sigmoid(a * (theta - b));
        prop_assert!((prob_3pl(a, b, 0.0, theta) - two).abs() < 1e-10);
        prop_assert!((prob_gpcm(a, &[b], theta)[1] - two).abs() < 1e-10);
        prop_assert!((prob_nrm(&[a], &[b], theta)[1] - two).abs() < 1e-10);
    }

    #[test]
    fn gpcm_adjacent_logits(a in 0.1..3.0f64, b in prop::collection::vec(-3.0..3.0f64, 1..6), theta in -4.0..4.0f64) {
        let p = prob_gpcm(a, &b, theta);
        for k in 1..p.len() {
            let lhs = (p[k] / p[k - 1]).ln();
            prop_assert!((lhs - a * (theta - b[k - 1])).abs() < 1e-10);
        }
    }

    #[test]
    fn information_is_additive(items in prop::collection::vec(item_strategy(), 2..8), theta in -4.0..4.0f64, cut in 1usize..7) {
        let n = items.len();
        let cut = cut.min(n - 1);
        let left: Vec<usize> = (0..cut).collect();
        let right: Vec<usize> = (cut..n).collect();
        let all: Vec<usize> = (0..n).collect();
        let sum = test_information(&items, theta, &left).unwrap() + test_information(&items, theta, &right).unwrap();
        prop_assert!((test_information(&items, theta, &all).unwrap() - sum).abs() < 1e-12 * sum.max(1.0));
        prop_assert!((test_information(&items, theta, &[0]).unwrap() - item_information(&items[0], theta)).abs() == 0.0);
    }
}

fn dif_data(seed: u64, n: usize) -> (Vec<u8>, Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut g = Vec::new();
    for i in 0..n {
        let theta = rng.random_range(-2.5..2.5);
        let gi = u8::from(i % 3 == 0);
        let p = sigmoid(0.3 + 1.1 * theta + 0.4 * f64::from(gi));
        y.push(u8::from(rng.random::<f64>() < p));
        t.push(theta);
        g.push(gi);
    }
    (y, t, g)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dif_statistic_is_affine_invariant(seed in 0u64..1000, scale in 0.2..5.0f64, shift in -3.0..3.0f64) {
        let (y, t, g) = dif_data(seed, 300);
        let t2: Vec<f64> = t.iter().map(|v| scale * v + shift).collect();
        for test in [DifTest::Both, DifTest::UniformOnly, DifTest::NonuniformOnly] {
            let a = dif_test(&y, &t, &g, test).unwrap();
            let b = dif_test(&y, &t2, &g, test).unwrap();
            prop_assert!((a.lrt_stat - b.lrt_stat).abs() < 1e-6);
            prop_assert_eq!(a.df, test.df());
        }
    }

    #[test]
    fn dif_statistic_ignores_group_labels(seed in 0u64..1000) {
        let (y, t, g) = dif_data(seed, 300);
        let swapped: Vec<u8> = g.iter().map(|v| 1 - v).collect();
        for test in [DifTest::Both, DifTest::UniformOnly, DifTest::NonuniformOnly] {
            let a = dif_test(&y, &t, &g, test).unwrap();
            let b = dif_test(&y, &t, &swapped, test).unwrap();
            prop_assert!((a.lrt_stat - b.lrt_stat).abs() < 1e-8);
            prop_assert!((a.p_value - b.p_value).abs() < 1e-8);
            prop_assert!(a.loglik_full >= a.loglik_sub);
        }
        let uni = dif_test(&y, &t, &g, DifTest::UniformOnly).unwrap();
        let uni_swapped = dif_test(&y, &t, &swapped, DifTest::UniformOnly).unwrap();
        prop_assert!((uni.beta[2] + uni_swapped.beta[2]).abs() < 1e-6);
    }

    #[test]
    fn cat_trajectories_are_well_formed(
        items in prop::collection::vec(item_strategy(), 1..15),
        true_theta in -3.0..3.0f64,
        seed in 0u64..10_000,
        min_sem in 0.05..1.5f64,
        max_items in 1usize..20,
        ml in any::<bool>(),
    ) {
        let names = (0..items.len()).map(|i| format!("i{i}")).collect();
        let model = IrtModel::from_items(names, items).unwrap();
        let pattern = generate_pattern(&model, true_theta, seed);
        let config = CatConfig {
            min_sem,
            max_items,
            theta_estimator: if ml { ScoringMethod::Ml } else { ScoringMethod::Eap },
            ..CatConfig::default()
        };
        let traj = run_cat(&model, &pattern, &config).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for s in &traj.steps {
            prop_assert!(s.item < model.len());
            prop_assert!(seen.insert(s.item));
            prop_assert_eq!(s.response, pattern[s.item]);
        }
        prop_assert!(traj.steps.len() <= max_items.min(model.len()));
        if traj.termination == Termination::SemMet {
            prop_assert!(traj.final_se.unwrap() <= min_sem);
        }
        prop_assert_eq!(&run_cat(&model, &pattern, &config).unwrap(), &traj);
    }
}
