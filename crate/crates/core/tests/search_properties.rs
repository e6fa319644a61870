use hwnas::data::{generate_classification_dataset, DatasetSpec, Splits};
use hwnas::graph::{CompactNet, MixedStage, OperatorSpec, SuperNet, Task, TensorShape};
use hwnas::latency::{LatencySource, LatencyTable};
use hwnas::search::{derive_compact, evaluate, path_probs, sample_gate, train_compact, train_search, ArchParams, SearchConfig, TrainConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn zero_lut(net: &SuperNet) -> LatencyTable {
    let mut lut = LatencyTable::new(LatencySource::Manual, "zero");
    for (k, _, _) in net.unique_ops().unwrap() {
        lut.insert(k, 0.0).unwrap();
    }
    lut
}

fn small_net() -> SuperNet {
    SuperNet {
        task: Task::Classification,
        input_shape: TensorShape::new(3, 8, 8),
        stem: vec![OperatorSpec::conv(3, 1, 3, 4)],
        stages: vec![
            MixedStage::new(vec![OperatorSpec::conv(3, 1, 4, 4).into(), OperatorSpec::conv(5, 1, 4, 4).into()]),
            MixedStage::new(vec![
                OperatorSpec::dwconv(3, 1, 4).into(),
                OperatorSpec::leaky_relu_per_channel(4, 0.1).into(),
                OperatorSpec::pointwise(1, 4, 4).into(),
            ]),
        ],
        head: vec![OperatorSpec::avg_pool(3, 2, 4), OperatorSpec::linear(64, 3)],
        num_classes: Some(3),
        sr_scale: None,
    }
}

fn small_data() -> Splits<f64> {
    generate_classification_dataset(&DatasetSpec::classification(90, 8, 3, 5)).unwrap()
}

/// Flattened weights of one candidate.
fn candidate_weights(state: &hwnas::search::SearchState<f64>, stage: usize, cand: usize) -> Vec<f64> {
    state.model.stages[stage][cand].named_params().into_iter().flat_map(|(_, p)| p.value.data().to_vec()).collect()
}

#[test]
fn gate_frequencies_pass_chi_square() {
    let p = path_probs(&[0.4, -0.3, 1.1, 0.0]);
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[sample_gate(&p, &mut rng)] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(&p)
        .map(|(&o, &pi)| {
            let e = pi * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let p_value = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
    assert!(p_value > 0.01, "chi-square {stat}, p-value {p_value}");
}

#[test]
fn weight_step_only_touches_the_sampled_path() {
    let net = small_net();
    let d = small_data();
    let lut = zero_lut(&net);
    let base = SearchConfig { rounds: 0, batch_size: 8, ..Default::default() };
    let (init, _) = train_search::<f64>(&net, &lut, &d.train, &d.val, &base).unwrap();
    let one = SearchConfig { rounds: 1, weight_steps_per_round: 1, arch_steps_per_round: 0, ..base };
    let (after, _) = train_search::<f64>(&net, &lut, &d.train, &d.val, &one).unwrap();
    assert_eq!(after.arch, init.arch);
    for (i, stage) in net.stages.iter().enumerate() {
        let changed: Vec<usize> =
            (0..stage.len()).filter(|&j| candidate_weights(&after, i, j) != candidate_weights(&init, i, j)).collect();
        assert_eq!(changed.len(), 1, "stage {i}: candidates {changed:?} changed");
    }
}

#[test]
fn arch_steps_leave_every_weight_unchanged() {
    let net = small_net();
    let d = small_data();
    let lut = zero_lut(&net);
    let base = SearchConfig { rounds: 0, batch_size: 8, ..Default::default() };
    let (init, _) = train_search::<f64>(&net, &lut, &d.train, &d.val, &base).unwrap();
    let arch_only = SearchConfig { rounds: 3, weight_steps_per_round: 0, arch_steps_per_round: 4, ..base };
    let (after, hist) = train_search::<f64>(&net, &lut, &d.train, &d.val, &arch_only).unwrap();
    assert_eq!(after.model.weights_snapshot(), init.model.weights_snapshot());
    assert_ne!(after.arch, init.arch);
    assert_eq!(hist.len(), 3);
}

#[test]
fn search_is_deterministic() {
    let net = small_net();
    let d = small_data();
    let lut = zero_lut(&net);
    let cfg = SearchConfig { rounds: 3, batch_size: 8, ..Default::default() };
    let (a, ha) = train_search::<f64>(&net, &lut, &d.train, &d.val, &cfg).unwrap();
    let (b, hb) = train_search::<f64>(&net, &lut, &d.train, &d.val, &cfg).unwrap();
    assert_eq!(ha.to_csv(&net.stage_sizes()), hb.to_csv(&net.stage_sizes()));
    assert_eq!(a.model.weights_snapshot(), b.model.weights_snapshot());
}

/// Identity versus a 3x3 convolution ahead of a rectifier and pooling: without a spatial
/// filter the rectified energy is orientation-blind, so only the convolution path can learn.
#[test]
fn search_prefers_the_required_convolution() {
    let net = SuperNet {
        task: Task::Classification,
        input_shape: TensorShape::new(3, 8, 8),
        stem: vec![OperatorSpec::pointwise(1, 3, 8)],
        stages: vec![MixedStage::new(vec![OperatorSpec::identity(8).into(), OperatorSpec::conv(3, 1, 8, 8).into()])],
        head: vec![OperatorSpec::relu(8), OperatorSpec::avg_pool(3, 2, 8), OperatorSpec::linear(128, 2)],
        num_classes: Some(2),
        sr_scale: None,
    };
    let d = generate_classification_dataset(&DatasetSpec::classification(400, 8, 2, 42)).unwrap();

    let acc = |choice: usize| {
        let cn = CompactNet::from_choices(&net, &[choice]).unwrap();
        let (mut m, _) = train_compact(&cn, &d.train, &TrainConfig { epochs: 20, ..Default::default() }).unwrap();
        evaluate(&mut m, &d.test, 64).unwrap().accuracy.unwrap()
    };
    let (identity, conv) = (acc(0), acc(1));
    assert!(conv > 0.95 && identity < 0.7, "identity {identity}, conv {conv}");

    let cfg = SearchConfig { rounds: 80, lr_arch: 1.0, seed: 42, ..Default::default() };
    let (state, _) = train_search::<f64>(&net, &zero_lut(&net), &d.train, &d.val, &cfg).unwrap();
    let p_conv = state.arch.probs()[0][1];
    assert!(p_conv > 0.9, "p(conv) = {p_conv}");
    assert_eq!(derive_compact(&net, &state.arch).unwrap().choices[0].index, 1);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn derivation_ignores_per_stage_shifts(
        a0 in proptest::collection::vec(-5.0f64..5.0, 2),
        a1 in proptest::collection::vec(-5.0f64..5.0, 3),
        shift in -50.0f64..50.0,
    ) {
        let net = small_net();
        let arch = ArchParams { alpha: vec![a0.clone(), a1.clone()] };
        let shifted = ArchParams { alpha: vec![a0.iter().map(|v| v + shift).collect(), a1.clone()] };
        let x = derive_compact(&net, &arch).unwrap();
        let y = derive_compact(&net, &shifted).unwrap();
        prop_assert_eq!(
            x.choices.iter().map(|c| c.index).collect::<Vec<_>>(),
            y.choices.iter().map(|c| c.index).collect::<Vec<_>>()
        );
    }

    #[test]
    fn probabilities_are_normalized(alpha in proptest::collection::vec(-300.0f64..300.0, 1..8)) {
        let p = path_probs(&alpha);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
