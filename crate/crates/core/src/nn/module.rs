use std::collections::BTreeMap;

use rand::Rng;

use super::kernels::{self, ConvGeom, PoolGeom};
use super::{NnError, Parameter, Tensor};
use crate::graph::{OpKind, OperatorSpec, TensorShape};
use crate::Scalar;

/// Activations retained by `forward` for the matching `backward`.
#[derive(Debug, Clone)]
enum Cache<T> {
    Input(Tensor<T>),
    MaxPool { input_dims: Vec<usize>, argmax: Vec<usize> },
    MbConv { x: Tensor<T>, a1: Vec<T>, h1: Vec<T>, a2: Vec<T>, h2: Vec<T>, proj: Vec<T> },
    Dims(Vec<usize>),
}

/// One operator with its learnable parameters.
///
/// Parameter layout by kind:
/// - `Conv` / `PointwiseConv`: `weight [out, in, k, k]`, `bias [out]`
/// - `DWConv`: `weight [c, 1, k, k]`, `bias [c]`
/// - `MBConv`: `expand.{weight,bias}` (1x1, in -> hidden), `dw.{weight,bias}` (k x k depthwise,
///   carries the stride), `project.{weight,bias}` (1x1, hidden -> out), `scale [out]`.
///   ReLU after expand and depthwise, linear projection, per-channel output scale, and a
///   residual add when `in == out` and stride is 1.
/// - `Linear`: `weight [out, in]`, `bias [out]` over the flattened `C*H*W` input
/// - per-channel `LeakyReLU`: `slope [c]`
#[derive(Debug, Clone)]
pub struct ModuleInstance<T> {
    spec: OperatorSpec,
    params: BTreeMap<String, Parameter<T>>,
    cache: Option<Cache<T>>,
}

fn kaiming<T: Scalar, R: Rng>(dims: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(dims, |_| T::of(rng.gen_range(-bound..bound)))
}

fn nchw(dims: &[usize]) -> Result<(usize, usize, usize, usize), NnError> {
    match dims {
        &[b, c, h, w] => Ok((b, c, h, w)),
        other => Err(NnError::ShapeMismatch { expected: vec![0, 0, 0, 0], actual: other.to_vec() }),
    }
}

impl<T: Scalar> ModuleInstance<T> {
    /// Builds an instance with Kaiming-uniform (fan-in) weights and zero biases.
    pub fn new<R: Rng>(spec: OperatorSpec, rng: &mut R) -> Result<Self, NnError> {
        if let Some(v) = spec.invariant_violations().into_iter().next() {
            return Err(NnError::InvalidOp(v));
        }
        let (ci, co, k) = (spec.in_channels as usize, spec.out_channels as usize, spec.kernel as usize);
        let mut params = BTreeMap::new();
        let mut add = |name: &str, t: Tensor<T>| {
            params.insert(name.to_string(), Parameter::new(t));
        };
        match spec.kind {
            OpKind::Conv | OpKind::PointwiseConv => {
                add("weight", kaiming(&[co, ci, k, k], ci * k * k, rng));
                add("bias", Tensor::zeros(&[co]));
            }
            OpKind::DWConv => {
                add("weight", kaiming(&[ci, 1, k, k], k * k, rng));
                add("bias", Tensor::zeros(&[ci]));
            }
            OpKind::MBConv => {
                let h = spec.hidden_channels().unwrap() as usize;
                add("expand.weight", kaiming(&[h, ci, 1, 1], ci, rng));
                add("expand.bias", Tensor::zeros(&[h]));
                add("dw.weight", kaiming(&[h, 1, k, k], k * k, rng));
                add("dw.bias", Tensor::zeros(&[h]));
                add("project.weight", kaiming(&[co, h, 1, 1], h, rng));
                add("project.bias", Tensor::zeros(&[co]));
                add("scale", Tensor::filled(&[co], T::one()));
            }
            OpKind::Linear => {
                add("weight", kaiming(&[co, ci], ci, rng));
                add("bias", Tensor::zeros(&[co]));
            }
            OpKind::LeakyReLU if spec.per_channel => {
                add("slope", Tensor::filled(&[ci], T::of(spec.activation_slope)));
            }
            _ => {}
        }
        Ok(ModuleInstance { spec, params, cache: None })
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &BTreeMap<String, Parameter<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Parameter<T>> {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> &Parameter<T> {
        &self.params[name]
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Parameter::zero_grad);
    }

    /// Drops retained activations.
    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn w(&self, name: &str) -> &[T] {
        self.params[name].value.data()
    }

    /// Expected output dims for an `[B, C, H, W]` input.
    pub fn output_dims(&self, input_dims: &[usize]) -> Result<Vec<usize>, NnError> {
        let (b, c, h, w) = nchw(input_dims)?;
        let shape = TensorShape::new(c as u32, h as u32, w as u32);
        let out = self.spec.output_shape(shape).map_err(|_| NnError::ShapeMismatch {
            expected: vec![b, self.spec.in_channels as usize, h, w],
            actual: input_dims.to_vec(),
        })?;
        Ok(vec![b, out.channels as usize, out.height as usize, out.width as usize])
    }

    fn conv_geom(&self, dims: &[usize], k: usize, stride: usize, out_c: usize, groups: usize) -> ConvGeom {
        ConvGeom {
            batch: dims[0],
            in_c: dims[1],
            h: dims[2],
            w: dims[3],
            out_c,
            k,
            stride,
            pad: (k - 1) / 2,
            groups,
        }
    }

    fn pool_geom(&self, dims: &[usize]) -> PoolGeom {
        let k = self.spec.kernel as usize;
        PoolGeom { batch: dims[0], c: dims[1], h: dims[2], w: dims[3], k, stride: self.spec.stride as usize, pad: (k - 1) / 2 }
    }

    /// Runs the operator on an `[B, C, H, W]` batch and retains what `backward` needs.
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let out_dims = self.output_dims(input.dims())?;
        let dims = input.dims().to_vec();
        let (b, c, h, w) = nchw(&dims)?;
        let s = &self.spec;
        let (k, stride, co) = (s.kernel as usize, s.stride as usize, s.out_channels as usize);
        let mut y = Tensor::zeros(&out_dims);
        let cache = match s.kind {
            OpKind::Conv | OpKind::PointwiseConv | OpKind::DWConv => {
                let groups = if s.kind == OpKind::DWConv { c } else { 1 };
                let g = self.conv_geom(&dims, k, stride, co, groups);
                kernels::conv_forward(&g, input.data(), self.w("weight"), self.w("bias"), y.data_mut());
                Cache::Input(input.clone())
            }
            OpKind::MBConv => return self.mbconv_forward(input, out_dims),
            OpKind::AvgPool => {
                kernels::avg_pool_forward(&self.pool_geom(&dims), input.data(), y.data_mut());
                Cache::Dims(dims)
            }
            OpKind::MaxPool => {
                let mut argmax = vec![0; y.numel()];
                kernels::max_pool_forward(&self.pool_geom(&dims), input.data(), y.data_mut(), &mut argmax);
                Cache::MaxPool { input_dims: dims, argmax }
            }
            OpKind::Identity => {
                y = input.clone();
                Cache::Dims(dims)
            }
            OpKind::ReLU => {
                for (o, &v) in y.data_mut().iter_mut().zip(input.data()) {
                    *o = if v > T::zero() { v } else { T::zero() };
                }
                Cache::Input(input.clone())
            }
            OpKind::LeakyReLU => {
                let plane = h * w;
                for (i, (o, &v)) in y.data_mut().iter_mut().zip(input.data()).enumerate() {
                    *o = if v > T::zero() { v } else { v * self.slope_at((i / plane) % c) };
                }
                Cache::Input(input.clone())
            }
            OpKind::UpsampleNearest => {
                kernels::upsample_nearest_forward(b * c, h, w, s.scale_factor as usize, input.data(), y.data_mut());
                Cache::Dims(dims)
            }
            OpKind::UpsampleBilinear => {
                kernels::upsample_bilinear_forward(
                    b * c,
                    h,
                    w,
                    s.scale_factor as usize,
                    s.align_corners,
                    input.data(),
                    y.data_mut(),
                );
                Cache::Dims(dims)
            }
            OpKind::DepthToSpace => {
                let map = kernels::depth_to_space_map(b, c, h, w, s.scale_factor as usize);
                for (o, &src) in y.data_mut().iter_mut().zip(&map) {
                    *o = input.data()[src];
                }
                Cache::Dims(dims)
            }
            OpKind::Linear => {
                let fin = c * h * w;
                let (wt, bias) = (self.w("weight"), self.w("bias"));
                for bi in 0..b {
                    let xr = &input.data()[bi * fin..(bi + 1) * fin];
                    for o in 0..co {
                        let wr = &wt[o * fin..(o + 1) * fin];
                        y.data_mut()[bi * co + o] = bias[o] + wr.iter().zip(xr).map(|(&a, &x)| a * x).sum::<T>();
                    }
                }
                Cache::Input(input.clone())
            }
        };
        self.cache = Some(cache);
        Ok(y)
    }

    fn slope_at(&self, channel: usize) -> T {
        match self.params.get("slope") {
            Some(p) => p.value.data()[channel],
            None => T::of(self.spec.activation_slope),
        }
    }

    fn mbconv_forward(&mut self, x: &Tensor<T>, out_dims: Vec<usize>) -> Result<Tensor<T>, NnError> {
        let dims = x.dims().to_vec();
        let s = &self.spec;
        let hid = s.hidden_channels().unwrap() as usize;
        let (k, stride, co) = (s.kernel as usize, s.stride as usize, s.out_channels as usize);
        let ge = self.conv_geom(&dims, 1, 1, hid, 1);
        let mut a1 = vec![T::zero(); dims[0] * hid * dims[2] * dims[3]];
        kernels::conv_forward(&ge, x.data(), self.w("expand.weight"), self.w("expand.bias"), &mut a1);
        let h1: Vec<T> = a1.iter().map(|&v| v.max(T::zero())).collect();

        let hdims = [dims[0], hid, dims[2], dims[3]];
        let gd = self.conv_geom(&hdims, k, stride, hid, hid);
        let mut a2 = vec![T::zero(); dims[0] * hid * out_dims[2] * out_dims[3]];
        kernels::conv_forward(&gd, &h1, self.w("dw.weight"), self.w("dw.bias"), &mut a2);
        let h2: Vec<T> = a2.iter().map(|&v| v.max(T::zero())).collect();

        let pdims = [dims[0], hid, out_dims[2], out_dims[3]];
        let gp = self.conv_geom(&pdims, 1, 1, co, 1);
        let mut proj = vec![T::zero(); out_dims.iter().product()];
        kernels::conv_forward(&gp, &h2, self.w("project.weight"), self.w("project.bias"), &mut proj);

        let plane = out_dims[2] * out_dims[3];
        let scale = self.w("scale");
        let mut y = Tensor::zeros(&out_dims);
        for (i, (o, &p)) in y.data_mut().iter_mut().zip(&proj).enumerate() {
            *o = p * scale[(i / plane) % co];
        }
        if self.has_residual() {
            y.add_assign(x);
        }
        self.cache = Some(Cache::MbConv { x: x.clone(), a1, h1, a2, h2, proj });
        Ok(y)
    }

    fn has_residual(&self) -> bool {
        self.spec.kind == OpKind::MBConv && self.spec.in_channels == self.spec.out_channels && self.spec.stride == 1
    }

    /// Propagates `upstream` (gradient w.r.t. the last forward output). Parameter gradients
    /// accumulate; the retained activations are consumed.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.take().ok_or(NnError::StaleState)?;
        let s = self.spec.clone();
        let (k, stride, co) = (s.kernel as usize, s.stride as usize, s.out_channels as usize);
        let dy = upstream.data();
        match cache {
            Cache::Input(x) => {
                let dims = x.dims().to_vec();
                let expected = self.output_dims(&dims)?;
                if upstream.dims() != expected.as_slice() {
                    return Err(NnError::ShapeMismatch { expected, actual: upstream.dims().to_vec() });
                }
                let mut dx = Tensor::zeros(&dims);
                let (b, c, h, w) = nchw(&dims)?;
                match s.kind {
                    OpKind::Conv | OpKind::PointwiseConv | OpKind::DWConv => {
                        let groups = if s.kind == OpKind::DWConv { c } else { 1 };
                        let g = self.conv_geom(&dims, k, stride, co, groups);
                        let weight = self.params["weight"].value.clone();
                        let (mut dw, mut db) = (vec![T::zero(); g.weight_len()], vec![T::zero(); co]);
                        kernels::conv_backward(&g, x.data(), weight.data(), dy, dx.data_mut(), &mut dw, &mut db);
                        self.accumulate("weight", &dw);
                        self.accumulate("bias", &db);
                    }
                    OpKind::ReLU => {
                        for ((d, &v), &u) in dx.data_mut().iter_mut().zip(x.data()).zip(dy) {
                            *d = if v > T::zero() { u } else { T::zero() };
                        }
                    }
                    OpKind::LeakyReLU => {
                        let plane = h * w;
                        let mut dslope = vec![T::zero(); c];
                        for (i, ((d, &v), &u)) in dx.data_mut().iter_mut().zip(x.data()).zip(dy).enumerate() {
                            let ch = (i / plane) % c;
                            if v > T::zero() {
                                *d = u;
                            } else {
                                *d = u * self.slope_at(ch);
                                dslope[ch] += u * v;
                            }
                        }
                        if self.params.contains_key("slope") {
                            self.accumulate("slope", &dslope);
                        }
                    }
                    OpKind::Linear => {
                        let fin = c * h * w;
                        let wt = self.params["weight"].value.clone();
                        let (mut dw, mut db) = (vec![T::zero(); co * fin], vec![T::zero(); co]);
                        for bi in 0..b {
                            let xr = &x.data()[bi * fin..(bi + 1) * fin];
                            let dxr = &mut dx.data_mut()[bi * fin..(bi + 1) * fin];
                            for o in 0..co {
                                let u = dy[bi * co + o];
                                db[o] += u;
                                let wr = &wt.data()[o * fin..(o + 1) * fin];
                                let dwr = &mut dw[o * fin..(o + 1) * fin];
                                for j in 0..fin {
                                    dwr[j] += u * xr[j];
                                    dxr[j] += u * wr[j];
                                }
                            }
                        }
                        self.accumulate("weight", &dw);
                        self.accumulate("bias", &db);
                    }
                    _ => unreachable!("kind {} does not retain its input", s.kind),
                }
                Ok(dx)
            }
            Cache::Dims(dims) => {
                let expected = self.output_dims(&dims)?;
                if upstream.dims() != expected.as_slice() {
                    return Err(NnError::ShapeMismatch { expected, actual: upstream.dims().to_vec() });
                }
                let (b, c, h, w) = nchw(&dims)?;
                let sf = s.scale_factor as usize;
                let mut dx = Tensor::zeros(&dims);
                match s.kind {
                    OpKind::Identity => dx = upstream.clone(),
                    OpKind::AvgPool => kernels::avg_pool_backward(&self.pool_geom(&dims), dy, dx.data_mut()),
                    OpKind::UpsampleNearest => kernels::upsample_nearest_backward(b * c, h, w, sf, dy, dx.data_mut()),
                    OpKind::UpsampleBilinear => {
                        kernels::upsample_bilinear_backward(b * c, h, w, sf, s.align_corners, dy, dx.data_mut())
                    }
                    OpKind::DepthToSpace => {
                        let map = kernels::depth_to_space_map(b, c, h, w, sf);
                        for (&u, &src) in dy.iter().zip(&map) {
                            dx.data_mut()[src] += u;
                        }
                    }
                    _ => unreachable!("kind {} does not retain only dims", s.kind),
                }
                Ok(dx)
            }
            Cache::MaxPool { input_dims, argmax } => {
                if upstream.numel() != argmax.len() {
                    return Err(NnError::ShapeMismatch {
                        expected: self.output_dims(&input_dims)?,
                        actual: upstream.dims().to_vec(),
                    });
                }
                let mut dx = Tensor::zeros(&input_dims);
                kernels::max_pool_backward(dy, &argmax, dx.data_mut());
                Ok(dx)
            }
            Cache::MbConv { x, a1, h1, a2, h2, proj } => self.mbconv_backward(upstream, x, a1, h1, a2, h2, proj),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn mbconv_backward(
        &mut self,
        upstream: &Tensor<T>,
        x: Tensor<T>,
        a1: Vec<T>,
        h1: Vec<T>,
        a2: Vec<T>,
        h2: Vec<T>,
        proj: Vec<T>,
    ) -> Result<Tensor<T>, NnError> {
        let dims = x.dims().to_vec();
        let out_dims = self.output_dims(&dims)?;
        if upstream.dims() != out_dims.as_slice() {
            return Err(NnError::ShapeMismatch { expected: out_dims, actual: upstream.dims().to_vec() });
        }
        let s = self.spec.clone();
        let hid = s.hidden_channels().unwrap() as usize;
        let (k, stride, co) = (s.kernel as usize, s.stride as usize, s.out_channels as usize);
        let plane = out_dims[2] * out_dims[3];
        let dy = upstream.data();

        let scale = self.params["scale"].value.data().to_vec();
        let mut dscale = vec![T::zero(); co];
        let mut dproj = vec![T::zero(); proj.len()];
        for i in 0..proj.len() {
            let ch = (i / plane) % co;
            dscale[ch] += dy[i] * proj[i];
            dproj[i] = dy[i] * scale[ch];
        }
        self.accumulate("scale", &dscale);

        let pdims = [dims[0], hid, out_dims[2], out_dims[3]];
        let gp = self.conv_geom(&pdims, 1, 1, co, 1);
        let wp = self.params["project.weight"].value.data().to_vec();
        let mut dh2 = vec![T::zero(); h2.len()];
        let (mut dwp, mut dbp) = (vec![T::zero(); gp.weight_len()], vec![T::zero(); co]);
        kernels::conv_backward(&gp, &h2, &wp, &dproj, &mut dh2, &mut dwp, &mut dbp);
        self.accumulate("project.weight", &dwp);
        self.accumulate("project.bias", &dbp);

        let da2: Vec<T> = dh2.iter().zip(&a2).map(|(&d, &a)| if a > T::zero() { d } else { T::zero() }).collect();
        let hdims = [dims[0], hid, dims[2], dims[3]];
        let gd = self.conv_geom(&hdims, k, stride, hid, hid);
        let wd = self.params["dw.weight"].value.data().to_vec();
        let mut dh1 = vec![T::zero(); h1.len()];
        let (mut dwd, mut dbd) = (vec![T::zero(); gd.weight_len()], vec![T::zero(); hid]);
        kernels::conv_backward(&gd, &h1, &wd, &da2, &mut dh1, &mut dwd, &mut dbd);
        self.accumulate("dw.weight", &dwd);
        self.accumulate("dw.bias", &dbd);

        let da1: Vec<T> = dh1.iter().zip(&a1).map(|(&d, &a)| if a > T::zero() { d } else { T::zero() }).collect();
        let ge = self.conv_geom(&dims, 1, 1, hid, 1);
        let we = self.params["expand.weight"].value.data().to_vec();
        let mut dx = if self.has_residual() { upstream.clone() } else { Tensor::zeros(&dims) };
        let (mut dwe, mut dbe) = (vec![T::zero(); ge.weight_len()], vec![T::zero(); hid]);
        kernels::conv_backward(&ge, x.data(), &we, &da1, dx.data_mut(), &mut dwe, &mut dbe);
        self.accumulate("expand.weight", &dwe);
        self.accumulate("expand.bias", &dbe);
        Ok(dx)
    }

    fn accumulate(&mut self, name: &str, g: &[T]) {
        let p = self.params.get_mut(name).expect("parameter exists for kind");
        for (a, &b) in p.grad.data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn identity_is_bitwise() {
        let mut m = ModuleInstance::<f64>::new(OperatorSpec::identity(2), &mut rng()).unwrap();
        let x = Tensor::from_fn(&[2, 2, 3, 3], |i| (i as f64 * 0.37).sin());
        let y = m.forward(&x).unwrap();
        assert_eq!(y, x);
        let up = Tensor::from_fn(&[2, 2, 3, 3], |i| i as f64);
        assert_eq!(m.backward(&up).unwrap(), up);
    }

    #[test]
    fn relu_forward_backward() {
        let mut m = ModuleInstance::<f64>::new(OperatorSpec::relu(1), &mut rng()).unwrap();
        let x = Tensor::new(vec![1, 1, 1, 2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(m.forward(&x).unwrap().data(), &[0.0, 2.0]);
        let g = m.backward(&Tensor::new(vec![1, 1, 1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0]);
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut m = ModuleInstance::<f64>::new(OperatorSpec::conv(1, 1, 3, 3), &mut rng()).unwrap();
        let w = &mut m.params_mut().get_mut("weight").unwrap().value;
        w.fill(0.0);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let x = Tensor::from_fn(&[2, 3, 4, 4], |i| (i as f64).cos());
        assert_eq!(m.forward(&x).unwrap(), x);
    }

    #[test]
    fn backward_without_forward_is_stale() {
        let mut m = ModuleInstance::<f64>::new(OperatorSpec::relu(1), &mut rng()).unwrap();
        let up = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(matches!(m.backward(&up), Err(NnError::StaleState)));
    }

    #[test]
    fn wrong_input_channels() {
        let mut m = ModuleInstance::<f64>::new(OperatorSpec::conv(3, 1, 4, 8), &mut rng()).unwrap();
        assert!(matches!(m.forward(&Tensor::zeros(&[1, 3, 5, 5])), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn parameter_count_matches_spec() {
        for spec in [
            OperatorSpec::mbconv(3, 1, 6, 4, 4),
            OperatorSpec::mbconv(5, 2, 3, 4, 8),
            OperatorSpec::conv(3, 1, 3, 16),
            OperatorSpec::dwconv(5, 1, 8),
            OperatorSpec::linear(12, 5),
            OperatorSpec::leaky_relu_per_channel(6, 0.1),
        ] {
            let m = ModuleInstance::<f64>::new(spec.clone(), &mut rng()).unwrap();
            assert_eq!(m.parameter_count(), spec.parameter_count(), "{spec}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut m = ModuleInstance::<f64>::new(OperatorSpec::mbconv(3, 1, 2, 4, 4), &mut rng()).unwrap();
        let x = Tensor::from_fn(&[2, 4, 5, 5], |i| ((i * 7) as f64).sin());
        let a = m.forward(&x).unwrap();
        let b = m.forward(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
