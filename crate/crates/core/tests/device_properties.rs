use hwnas::costmodel::{evaluate_mape, simulate_records, train_cost_model, CostModelConfig, ProfileRecord};
use hwnas::graph::{CompactNet, OperatorSpec, Task, TensorShape};
use hwnas::lint::{lint_network, LintConfig, NetRef};
use hwnas::profiler::{measure_stacked_same, median, SimulatedVpu};
use proptest::prelude::*;

#[test]
fn stacking_leaves_exactly_overhead_over_depth() {
    let sim = SimulatedVpu::default();
    let s = TensorShape::new(16, 16, 16);
    for op in [OperatorSpec::conv(3, 1, 16, 16), OperatorSpec::dwconv(5, 1, 16), OperatorSpec::leaky_relu(16, 0.1)] {
        let f = sim.op_cost_ms(&op, s).unwrap();
        for n in [1usize, 10, 100] {
            let mut dev = sim.clone();
            let est = measure_stacked_same(&mut dev, &op, s, n, 3).unwrap();
            let bias = sim.graph_overhead_ms / n as f64;
            assert!(((est - f) - bias).abs() <= 1e-9 * est, "{op} n={n}: estimate {est}, per-op {f}, bias {bias}");
        }
    }
}

#[test]
fn noisy_stacking_converges_to_per_op_cost() {
    let sim = SimulatedVpu { noise_sigma_rel: 0.05, seed: 9, ..SimulatedVpu::default() };
    let s = TensorShape::new(16, 16, 16);
    let op = OperatorSpec::conv(3, 1, 16, 16);
    let f = sim.op_cost_ms(&op, s).unwrap();
    let est = measure_stacked_same(&mut sim.clone(), &op, s, 100, 9).unwrap();
    assert!((est - f).abs() / f < 0.05, "estimate {est} vs {f}");
}

fn cost_model_config() -> CostModelConfig {
    CostModelConfig { epochs: 60, ..CostModelConfig::default() }
}

#[test]
fn cost_model_predictions_are_positive_and_scale_with_targets() {
    let sim = SimulatedVpu::default();
    let records = simulate_records(&sim, 200, 4).unwrap();
    let (model, _) = train_cost_model(&records, &cost_model_config()).unwrap();
    let doubled: Vec<ProfileRecord> =
        records.iter().map(|r| ProfileRecord { measured_cycles: 2.0 * r.measured_cycles, ..r.clone() }).collect();
    let (model2, _) = train_cost_model(&doubled, &cost_model_config()).unwrap();
    let probe = simulate_records(&sim, 60, 77).unwrap();
    for r in &probe {
        let a = model.predict(&r.op, r.input_shape).unwrap();
        let b = model2.predict(&r.op, r.input_shape).unwrap();
        assert!(a > 0.0 && a.is_finite());
        assert!((b / a - 2.0).abs() < 1e-6, "{}: {a} then {b}", r.op);
    }
    let m1 = evaluate_mape(&model, &probe).unwrap();
    let doubled_probe: Vec<ProfileRecord> =
        probe.iter().map(|r| ProfileRecord { measured_cycles: 2.0 * r.measured_cycles, ..r.clone() }).collect();
    let m2 = evaluate_mape(&model2, &doubled_probe).unwrap();
    assert!((m1 - m2).abs() < 1e-6, "{m1} vs {m2}");
}

#[test]
fn lint_is_deterministic() {
    let s = TensorShape::new(3, 32, 32);
    let net = CompactNet::chain(
        Task::SuperResolution,
        s,
        vec![
            OperatorSpec::conv(3, 1, 3, 16),
            OperatorSpec::leaky_relu_per_channel(16, 0.1),
            OperatorSpec::upsample_bilinear(16, 2, true),
            OperatorSpec::depth_to_space(16, 2),
        ],
    );
    let cfg = LintConfig::default();
    let a = lint_network(NetRef::Compact(&net), &cfg).unwrap();
    let b = lint_network(NetRef::Compact(&net.clone()), &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.len() >= 3, "{a:?}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn median_ignores_order(mut v in proptest::collection::vec(0.0f64..100.0, 1..30), seed in any::<u64>()) {
        let m = median(&v);
        use rand::{seq::SliceRandom, SeedableRng};
        v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(median(&v), m);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m >= lo && m <= hi);
    }
}
