use psychoforge_core::dataset::ScoredMatrix;
use psychoforge_core::irt::{fit_mml_em, EmConfig, ItemFamily, ItemParams};
use psychoforge_core::math::pearson;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn simulate(items: &[ItemParams], n: usize, seed: u64) -> Vec<Vec<Option<u32>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let theta: f64 = StandardNormal.sample(&mut rng);
            items
                .iter()
                .map(|item| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let p = item.probabilities(theta);
                    let mut k = p.len() - 1;
                    for (j, pj) in p.iter().enumerate() {
                        acc += pj;
                        if u < acc {
                            k = j;
                            break;
                        }
                    }
                    Some(k as u32)
                })
                .collect()
        })
        .collect()
}

#[test]
fn two_pl_recovery() {
    let truth: Vec<ItemParams> = (0..20)
        .map(|i| ItemParams::TwoPl {
            a: 0.8 + 1.2 * i as f64 / 19.0,
            b: -2.0 + 4.0 * ((i * 7) % 20) as f64 / 19.0,
        })
        .collect();
    let rows = simulate(&truth, 2000, 7);
    let scored = ScoredMatrix::binary(&rows).unwrap();
    let model = fit_mml_em(&scored, &[ItemFamily::TwoPl; 20], &EmConfig::default()).unwrap();
    assert!(model.converged);
    let (mut ta, mut tb, mut ea, mut eb) = (vec![], vec![], vec![], vec![]);
    for (t, e) in truth.iter().zip(&model.items) {
        if let (ItemParams::TwoPl { a, b }, ItemParams::TwoPl { a: a2, b: b2 }) = (t, e) {
            ta.push(*a);
            tb.push(*b);
            ea.push(*a2);
            eb.push(*b2);
        }
    }
    assert!(pearson(&ta, &ea).unwrap() > 0.95);
    assert!(pearson(&tb, &eb).unwrap() > 0.95);
    let mae = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64;
    assert!(mae(&ta, &ea) < 0.10 && mae(&tb, &eb) < 0.10);
    assert!(model.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8));
}

#[test]
fn mixed_families_ascend() {
    let truth = vec![
        ItemParams::TwoPl { a: 1.2, b: -0.5 },
        ItemParams::TwoPl { a: 0.9, b: 0.4 },
        ItemParams::ThreePl { a: 1.5, b: 0.3, c: 0.2 },
        ItemParams::ThreePl { a: 1.1, b: -0.2, c: 0.15 },
        ItemParams::Gpcm { a: 1.0, b: vec![-1.0, 0.0, 1.0] },
        ItemParams::Gpcm { a: 1.3, b: vec![-0.5, 0.7] },
        ItemParams::Nrm { a: vec![-1.2, -0.6, -0.9], b: vec![0.5, -0.5, 1.0] },
        ItemParams::TwoPl { a: 1.6, b: 1.0 },
    ];
    let rows = simulate(&truth, 1500, 9);
    let max_scores = truth.iter().map(|t| (t.categories() - 1) as u32).collect();
    let names = (0..truth.len()).map(|i| format!("i{i}")).collect();
    let scored = ScoredMatrix::from_rows(names, &rows, max_scores).unwrap();
    let families: Vec<ItemFamily> = truth.iter().map(ItemParams::family).collect();
    let model = fit_mml_em(&scored, &families, &EmConfig::default()).unwrap();
    assert!(model.converged);
    assert!(model.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8));
}

#[test]
fn refits_are_bit_identical() {
    let truth: Vec<ItemParams> = (0..6)
        .map(|i| ItemParams::TwoPl { a: 1.0 + 0.1 * i as f64, b: -1.0 + 0.4 * i as f64 })
        .collect();
    let scored = ScoredMatrix::binary(&simulate(&truth, 300, 1)).unwrap();
    let a = fit_mml_em(&scored, &[ItemFamily::TwoPl; 6], &EmConfig::default()).unwrap();
    let b = fit_mml_em(&scored, &[ItemFamily::TwoPl; 6], &EmConfig::default()).unwrap();
    assert_eq!(a, b);
}
