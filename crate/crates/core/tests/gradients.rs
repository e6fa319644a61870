use std::collections::BTreeSet;

use hwnas::graph::{OpKind, OperatorSpec, TensorShape};
use hwnas::nn::{grad_check, ModuleInstance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn cases() -> Vec<(OperatorSpec, TensorShape)> {
    let s = |c, h, w| TensorShape::new(c, h, w);
    vec![
        (OperatorSpec::conv(3, 1, 3, 4), s(3, 5, 5)),
        (OperatorSpec::conv(5, 2, 2, 3), s(2, 7, 6)),
        (OperatorSpec::dwconv(3, 1, 3), s(3, 5, 5)),
        (OperatorSpec::dwconv(7, 2, 2), s(2, 8, 8)),
        (OperatorSpec::pointwise(1, 4, 3), s(4, 4, 4)),
        (OperatorSpec::pointwise(2, 3, 2), s(3, 5, 5)),
        (OperatorSpec::mbconv(3, 1, 2, 2, 2), s(2, 5, 5)),
        (OperatorSpec::mbconv(5, 2, 3, 2, 3), s(2, 6, 6)),
        (OperatorSpec::avg_pool(3, 2, 2), s(2, 5, 5)),
        (OperatorSpec::max_pool(3, 1, 2), s(2, 4, 4)),
        (OperatorSpec::identity(3), s(3, 3, 3)),
        (OperatorSpec::relu(3), s(3, 4, 4)),
        (OperatorSpec::leaky_relu(3, 0.1), s(3, 4, 4)),
        (OperatorSpec::leaky_relu_per_channel(3, 0.2), s(3, 4, 4)),
        (OperatorSpec::upsample_nearest(2, 2), s(2, 3, 3)),
        (OperatorSpec::upsample_bilinear(2, 2, false), s(2, 3, 4)),
        (OperatorSpec::upsample_bilinear(2, 3, true), s(2, 3, 3)),
        (OperatorSpec::depth_to_space(8, 2), s(8, 3, 3)),
        (OperatorSpec::linear(2 * 3 * 3, 4), s(2, 3, 3)),
    ]
}

#[test]
fn every_operator_kind_matches_finite_differences() {
    let mut kinds = BTreeSet::new();
    for (i, (op, input)) in cases().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let mut inst = ModuleInstance::<f64>::new(op.clone(), &mut rng).unwrap();
        let dims = [2, input.channels as usize, input.height as usize, input.width as usize];
        for seed in 0..2 {
            let r = grad_check(&mut inst, &dims, 100 + seed, TOL).unwrap();
            assert!(r.passed, "{op}: max relative error {} at {}", r.max_rel_error, r.worst);
            assert!(r.checked > r.skipped_nonsmooth, "{op}: too few smooth coordinates");
        }
        kinds.insert(op.kind);
    }
    assert_eq!(kinds.len(), 13, "{kinds:?}");
    assert!(kinds.contains(&OpKind::MBConv) && kinds.contains(&OpKind::DepthToSpace));
}
