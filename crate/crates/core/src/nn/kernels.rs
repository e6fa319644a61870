//! Batched NCHW kernels with explicit backward passes.

use crate::Scalar;

/// Geometry of a (grouped) 2-D convolution with symmetric zero padding.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * (self.in_c / self.groups) * self.k * self.k
    }

    /// Output positions `o` along one axis whose tap `t` lands inside the input.
    #[inline]
    fn valid(&self, t: usize, n: usize, out_n: usize) -> (usize, usize) {
        // i = o*stride + t - pad, need 0 <= i < n
        let lo = if t >= self.pad { 0 } else { (self.pad - t).div_ceil(self.stride) };
        let hi = if n + self.pad > t { (n + self.pad - t - 1) / self.stride + 1 } else { 0 };
        (lo, hi.min(out_n))
    }
}

pub fn conv_forward<T: Scalar>(g: &ConvGeom, x: &[T], weight: &[T], bias: &[T], y: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let cig = g.in_c / g.groups;
    let cog = g.out_c / g.groups;
    for b in 0..g.batch {
        for co in 0..g.out_c {
            let grp = co / cog;
            let yo = &mut y[(b * g.out_c + co) * oh * ow..(b * g.out_c + co + 1) * oh * ow];
            yo.iter_mut().for_each(|v| *v = bias[co]);
            for cl in 0..cig {
                let ci = grp * cig + cl;
                let xi = &x[(b * g.in_c + ci) * g.h * g.w..(b * g.in_c + ci + 1) * g.h * g.w];
                for kh in 0..g.k {
                    let (oy0, oy1) = g.valid(kh, g.h, oh);
                    for kw in 0..g.k {
                        let wv = weight[((co * cig + cl) * g.k + kh) * g.k + kw];
                        let (ox0, ox1) = g.valid(kw, g.w, ow);
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + kh - g.pad;
                            let row = &xi[iy * g.w..(iy + 1) * g.w];
                            let yrow = &mut yo[oy * ow..(oy + 1) * ow];
                            for ox in ox0..ox1 {
                                yrow[ox] += wv * row[ox * g.stride + kw - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates into `dx`, `dw` and `db`.
pub fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dy: &[T],
    dx: &mut [T],
    dw: &mut [T],
    db: &mut [T],
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let cig = g.in_c / g.groups;
    let cog = g.out_c / g.groups;
    for b in 0..g.batch {
        for co in 0..g.out_c {
            let grp = co / cog;
            let dyo = &dy[(b * g.out_c + co) * oh * ow..(b * g.out_c + co + 1) * oh * ow];
            db[co] += dyo.iter().copied().sum::<T>();
            for cl in 0..cig {
                let ci = grp * cig + cl;
                let base = (b * g.in_c + ci) * g.h * g.w;
                for kh in 0..g.k {
                    let (oy0, oy1) = g.valid(kh, g.h, oh);
                    for kw in 0..g.k {
                        let widx = ((co * cig + cl) * g.k + kh) * g.k + kw;
                        let wv = weight[widx];
                        let (ox0, ox1) = g.valid(kw, g.w, ow);
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + kh - g.pad;
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kw - g.pad;
                                let d = dyo[oy * ow + ox];
                                acc += d * x[base + iy * g.w + ix];
                                dx[base + iy * g.w + ix] += d * wv;
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
}

/// Pooling geometry; channels pass through unchanged.
#[derive(Debug, Clone, Copy)]
pub struct PoolGeom {
    pub batch: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PoolGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Clipped input window `[y0, y1) x [x0, x1)` for an output position.
    #[inline]
    fn window(&self, oy: usize, ox: usize) -> (usize, usize, usize, usize) {
        let y0 = (oy * self.stride).saturating_sub(self.pad);
        let y1 = (oy * self.stride + self.k - self.pad).min(self.h);
        let x0 = (ox * self.stride).saturating_sub(self.pad);
        let x1 = (ox * self.stride + self.k - self.pad).min(self.w);
        (y0, y1, x0, x1)
    }
}

/// Average over the in-bounds part of each window (padding excluded from the count).
pub fn avg_pool_forward<T: Scalar>(g: &PoolGeom, x: &[T], y: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    for bc in 0..g.batch * g.c {
        let xi = &x[bc * g.h * g.w..(bc + 1) * g.h * g.w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, y1, x0, x1) = g.window(oy, ox);
                let mut s = T::zero();
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        s += xi[iy * g.w + ix];
                    }
                }
                let n = T::of(((y1 - y0) * (x1 - x0)) as f64);
                y[bc * oh * ow + oy * ow + ox] = s / n;
            }
        }
    }
}

pub fn avg_pool_backward<T: Scalar>(g: &PoolGeom, dy: &[T], dx: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    for bc in 0..g.batch * g.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, y1, x0, x1) = g.window(oy, ox);
                let n = T::of(((y1 - y0) * (x1 - x0)) as f64);
                let d = dy[bc * oh * ow + oy * ow + ox] / n;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        dx[bc * g.h * g.w + iy * g.w + ix] += d;
                    }
                }
            }
        }
    }
}

/// Max over each window; records the flat input index of the (first) maximum.
pub fn max_pool_forward<T: Scalar>(g: &PoolGeom, x: &[T], y: &mut [T], argmax: &mut [usize]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    for bc in 0..g.batch * g.c {
        let base = bc * g.h * g.w;
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, y1, x0, x1) = g.window(oy, ox);
                let mut best = base + y0 * g.w + x0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let i = base + iy * g.w + ix;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                let o = bc * oh * ow + oy * ow + ox;
                y[o] = x[best];
                argmax[o] = best;
            }
        }
    }
}

pub fn max_pool_backward<T: Scalar>(dy: &[T], argmax: &[usize], dx: &mut [T]) {
    for (d, &i) in dy.iter().zip(argmax) {
        dx[i] += *d;
    }
}

pub fn upsample_nearest_forward<T: Scalar>(bc: usize, h: usize, w: usize, s: usize, x: &[T], y: &mut [T]) {
    let (oh, ow) = (h * s, w * s);
    for p in 0..bc {
        for oy in 0..oh {
            for ox in 0..ow {
                y[p * oh * ow + oy * ow + ox] = x[p * h * w + (oy / s) * w + ox / s];
            }
        }
    }
}

pub fn upsample_nearest_backward<T: Scalar>(bc: usize, h: usize, w: usize, s: usize, dy: &[T], dx: &mut [T]) {
    let (oh, ow) = (h * s, w * s);
    for p in 0..bc {
        for oy in 0..oh {
            for ox in 0..ow {
                dx[p * h * w + (oy / s) * w + ox / s] += dy[p * oh * ow + oy * ow + ox];
            }
        }
    }
}

/// Source taps `(i0, i1, frac)` along one axis for bilinear resampling from `n` to `n * s`.
pub fn bilinear_taps(n: usize, s: usize, align_corners: bool) -> Vec<(usize, usize, f64)> {
    let out = n * s;
    (0..out)
        .map(|o| {
            let src = if align_corners {
                if out > 1 {
                    o as f64 * (n - 1) as f64 / (out - 1) as f64
                } else {
                    0.0
                }
            } else {
                ((o as f64 + 0.5) / s as f64 - 0.5).max(0.0)
            };
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample_bilinear_forward<T: Scalar>(
    bc: usize,
    h: usize,
    w: usize,
    s: usize,
    align_corners: bool,
    x: &[T],
    y: &mut [T],
) {
    let ty = bilinear_taps(h, s, align_corners);
    let tx = bilinear_taps(w, s, align_corners);
    let (oh, ow) = (h * s, w * s);
    for p in 0..bc {
        let xi = &x[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::of(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::of(fx);
                let top = xi[y0 * w + x0] * (T::one() - fx) + xi[y0 * w + x1] * fx;
                let bot = xi[y1 * w + x0] * (T::one() - fx) + xi[y1 * w + x1] * fx;
                y[p * oh * ow + oy * ow + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
}

pub fn upsample_bilinear_backward<T: Scalar>(
    bc: usize,
    h: usize,
    w: usize,
    s: usize,
    align_corners: bool,
    dy: &[T],
    dx: &mut [T],
) {
    let ty = bilinear_taps(h, s, align_corners);
    let tx = bilinear_taps(w, s, align_corners);
    let (oh, ow) = (h * s, w * s);
    for p in 0..bc {
        let dxi = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::of(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::of(fx);
                let d = dy[p * oh * ow + oy * ow + ox];
                dxi[y0 * w + x0] += d * (T::one() - fy) * (T::one() - fx);
                dxi[y0 * w + x1] += d * (T::one() - fy) * fx;
                dxi[y1 * w + x0] += d * fy * (T::one() - fx);
                dxi[y1 * w + x1] += d * fy * fx;
            }
        }
    }
}

/// Index map for depth-to-space in CRD order:
/// `out[b, c, h*s + i, w*s + j] = in[b, c*s*s + i*s + j, h, w]`.
/// Returns, for each output element, the flat index of its source element.
pub fn depth_to_space_map(batch: usize, in_c: usize, h: usize, w: usize, s: usize) -> Vec<usize> {
    let oc = in_c / (s * s);
    let (oh, ow) = (h * s, w * s);
    let mut map = Vec::with_capacity(batch * in_c * h * w);
    for b in 0..batch {
        for c in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (yy, i) = (oy / s, oy % s);
                    let (xx, j) = (ox / s, ox % s);
                    let ci = c * s * s + i * s + j;
                    map.push(((b * in_c + ci) * h + yy) * w + xx);
                }
            }
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_ranges_match_brute_force() {
        for (n, k, s) in [(5, 3, 1), (8, 5, 2), (7, 7, 3), (4, 1, 2), (3, 5, 1)] {
            let g = ConvGeom { batch: 1, in_c: 1, h: n, w: n, out_c: 1, k, stride: s, pad: (k - 1) / 2, groups: 1 };
            let out = g.out_h();
            for t in 0..k {
                let (lo, hi) = g.valid(t, n, out);
                for o in 0..out {
                    let i = (o * s + t) as isize - g.pad as isize;
                    let inside = i >= 0 && (i as usize) < n;
                    assert_eq!(inside, o >= lo && o < hi, "n{n} k{k} s{s} t{t} o{o}");
                }
            }
        }
    }

    #[test]
    fn depth_to_space_crd() {
        // 4 channels of 1x1 -> 1 channel of 2x2, channel c*4 + i*2 + j lands at (i, j)
        let map = depth_to_space_map(1, 4, 1, 1, 2);
        assert_eq!(map, vec![0, 1, 2, 3]);
    }

    #[test]
    fn bilinear_constant_is_preserved() {
        let x = vec![2.5f64; 9];
        for ac in [false, true] {
            let mut y = vec![0.0; 36];
            upsample_bilinear_forward(1, 3, 3, 2, ac, &x, &mut y);
            assert!(y.iter().all(|&v| (v - 2.5).abs() < 1e-12));
        }
    }
}
