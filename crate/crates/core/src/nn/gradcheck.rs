use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ModuleInstance, NnError, Tensor};
use crate::Scalar;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-3;
/// Lower bound on the denominator of the relative error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name of the coordinate with the largest error (`input[i]` or `param[i]`).
    pub worst: String,
    pub checked: usize,
    /// Coordinates whose one-sided differences disagree, i.e. a ReLU or max-pool switch lies
    /// within one step. Central differences are meaningless there.
    pub skipped_nonsmooth: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares analytic input and parameter gradients of `instance` against central finite
/// differences of the scalar probe `L = sum(r * forward(x))`, with `x` and `r` drawn from `seed`.
///
/// Every operator kind is piecewise linear along any single coordinate, so away from
/// activation switches central differences are exact up to rounding. Coordinates within one
/// step of a switch are detected by comparing forward and backward one-sided differences
/// and are counted in `skipped_nonsmooth` instead of being compared.
pub fn grad_check<T: Scalar>(
    instance: &mut ModuleInstance<T>,
    input_dims: &[usize],
    seed: u64,
    tolerance: f64,
) -> Result<GradCheckReport, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(input_dims, |_| {
        let mag: f64 = rng.gen_range(0.1..1.0);
        T::of(if rng.gen_bool(0.5) { mag } else { -mag })
    });
    let out_dims = instance.output_dims(input_dims)?;
    let r = Tensor::from_fn(&out_dims, |_| T::of(rng.gen_range(-1.0..1.0)));

    instance.zero_grad();
    let y = instance.forward(&x)?;
    let f0 = y.dot(&r).as_f64();
    let dx = instance.backward(&r)?;
    let analytic_params: Vec<(String, Vec<T>)> =
        instance.params().iter().map(|(n, p)| (n.clone(), p.grad.data().to_vec())).collect();
    instance.zero_grad();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        skipped_nonsmooth: 0,
        tolerance,
        passed: true,
    };
    let h = T::of(FD_STEP);

    let probe = |inst: &mut ModuleInstance<T>, xin: &Tensor<T>| -> Result<f64, NnError> {
        let out = inst.forward(xin)?;
        inst.clear_cache();
        Ok(out.dot(&r).as_f64())
    };
    let record = |report: &mut GradCheckReport, name: String, analytic: f64, fp: f64, fm: f64| {
        let fwd = (fp - f0) / FD_STEP;
        let bwd = (f0 - fm) / FD_STEP;
        if (fwd - bwd).abs() > 1e-5 * fwd.abs().max(bwd.abs()).max(1.0) {
            report.skipped_nonsmooth += 1;
            return;
        }
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = err;
            report.worst = name;
        }
    };

    let mut xp = x.clone();
    for i in 0..x.numel() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + h;
        let fp = probe(instance, &xp)?;
        xp.data_mut()[i] = orig - h;
        let fm = probe(instance, &xp)?;
        xp.data_mut()[i] = orig;
        record(&mut report, format!("input[{i}]"), dx.data()[i].as_f64(), fp, fm);
    }

    for (name, grads) in &analytic_params {
        for (i, g) in grads.iter().enumerate() {
            let orig = instance.param(name).value.data()[i];
            let set = |inst: &mut ModuleInstance<T>, v: T| {
                inst.params_mut().get_mut(name).unwrap().value.data_mut()[i] = v;
            };
            set(instance, orig + h);
            let fp = probe(instance, &x)?;
            set(instance, orig - h);
            let fm = probe(instance, &x)?;
            set(instance, orig);
            record(&mut report, format!("{name}[{i}]"), g.as_f64(), fp, fm);
        }
    }
    report.passed = report.max_rel_error < tolerance;
    Ok(report)
}
