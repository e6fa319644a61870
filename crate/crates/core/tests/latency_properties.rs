use std::collections::BTreeMap;

use hwnas::latency::{expected_network_latency, expected_stage_latency, latency_alpha_grad, LatencySource, LatencyTable};
use hwnas::search::{path_probs, sample_gate};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stage() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..6).prop_flat_map(|m| (proptest::collection::vec(-3.0f64..3.0, m), proptest::collection::vec(0.0f64..5.0, m)))
}

fn expected_of(alpha: &[f64], f: &[f64]) -> f64 {
    expected_stage_latency(&path_probs(alpha), f).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gradient_sums_to_zero_and_matches_finite_differences((alpha, f) in stage()) {
        let p = path_probs(&alpha);
        let g = latency_alpha_grad(&p, &f).unwrap();
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        let h = 1e-5;
        for k in 0..alpha.len() {
            let mut up = alpha.clone();
            let mut dn = alpha.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (expected_of(&up, &f) - expected_of(&dn, &f)) / (2.0 * h);
            let scale = g[k].abs().max(fd.abs()).max(1e-3);
            prop_assert!((g[k] - fd).abs() / scale < 1e-6, "k={} analytic {} fd {}", k, g[k], fd);
        }
    }

    #[test]
    fn expectation_lies_between_extremes((alpha, f) in stage()) {
        let e = expected_of(&alpha, &f);
        let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(e >= lo - 1e-12 && e <= hi + 1e-12);
    }

    #[test]
    fn one_hot_probabilities_select_a_candidate((_, f) in stage(), pick in 0usize..6) {
        let j = pick % f.len();
        let p: Vec<f64> = (0..f.len()).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
        prop_assert_eq!(expected_stage_latency(&p, &f).unwrap(), f[j]);
        prop_assert!(latency_alpha_grad(&p, &f).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lut_json_round_trip(entries in proptest::collection::btree_map("[A-Za-z]{1,8}:k[1-7]", 0.0f64..100.0, 0..20)) {
        let mut lut = LatencyTable::new(LatencySource::Manual, "prop");
        lut.entries = entries.clone();
        let back = LatencyTable::from_json(&lut.to_json()).unwrap();
        prop_assert_eq!(back.entries, entries);
    }
}

#[test]
fn network_expectation_matches_monte_carlo() {
    let stages: Vec<(Vec<f64>, Vec<f64>)> = vec![
        (path_probs(&[0.3, -1.0, 0.8]), vec![0.4, 1.2, 0.1]),
        (path_probs(&[0.0, 0.0]), vec![2.0, 0.5]),
        (path_probs(&[1.5, 0.2, -0.4, 0.0]), vec![0.3, 0.9, 0.05, 1.7]),
    ];
    let exact = expected_network_latency(&stages).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 40_000;
    let mut total = 0.0;
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for _ in 0..n {
        for (i, (p, f)) in stages.iter().enumerate() {
            let j = sample_gate(p, &mut rng);
            *counts.entry((i, j)).or_default() += 1;
            total += f[j];
        }
    }
    let mc = total / n as f64;
    assert!((mc - exact).abs() / exact < 0.01, "monte carlo {mc} vs exact {exact}");
    assert_eq!(counts.values().sum::<usize>(), 3 * n);
}
