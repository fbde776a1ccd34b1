//! Grouped 2-D convolution over NCHW inputs with OIHW kernels.
//!
//! `groups == 1` is an ordinary convolution; `groups == channels` is a
//! depthwise convolution (with `out / in` as the channel multiplier).
//! Depthwise kernels run as direct loops, everything else lowers to
//! im2col followed by a GEMM per sample and group.

use super::{GradSink, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::gemm::{gemm, MatRef};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn depthwise(stride: usize, padding: usize, channels: usize) -> Self {
        Self {
            stride,
            padding,
            groups: channels,
        }
    }

    /// `floor((input + 2·pad − k) / stride) + 1`, or `None` if the kernel does not fit.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < kernel {
            None
        } else {
            Some((padded - kernel) / self.stride + 1)
        }
    }
}

#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    cg: usize,
    og: usize,
}

impl Dims {
    fn resolve(x: &[usize], k: &[usize], geom: &ConvGeom) -> Result<Self> {
        let shape_err = || Error::Shape {
            op: "conv2d",
            lhs: x.to_vec(),
            rhs: k.to_vec(),
        };
        let ([n, c, h, w], [o, ci, kh, kw]) = (x, k) else {
            return Err(shape_err());
        };
        let (n, c, h, w, o, ci, kh, kw) = (*n, *c, *h, *w, *o, *ci, *kh, *kw);
        if geom.stride == 0 {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                reason: "stride must be at least 1".into(),
            });
        }
        let g = geom.groups;
        if g == 0 || c % g != 0 || o % g != 0 || ci != c / g {
            return Err(shape_err());
        }
        let (Some(oh), Some(ow)) = (geom.output_extent(h, kh), geom.output_extent(w, kw)) else {
            return Err(shape_err());
        };
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            oh,
            ow,
            cg: c / g,
            og: o / g,
        })
    }

    fn plane(&self) -> usize {
        self.oh * self.ow
    }

    fn patch(&self) -> usize {
        self.cg * self.kh * self.kw
    }

    fn is_pointwise(&self, geom: &ConvGeom) -> bool {
        self.kh == 1 && self.kw == 1 && geom.stride == 1 && geom.padding == 0
    }
}

impl Graph {
    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let d = Dims::resolve(vx.shape(), vw.shape(), &geom)?;
        let mut out = vec![0.0; d.n * d.o * d.plane()];
        if d.cg == 1 {
            depthwise_forward(vx.data(), vw.data(), &mut out, &d, &geom);
        } else {
            im2col_forward(vx.data(), vw.data(), &mut out, &d, &geom);
        }
        let out = Tensor::new(vec![d.n, d.o, d.oh, d.ow], out)?;
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(out, Op::Conv2d { x, w, geom }, rg))
    }
}

fn im2col_forward(x: &[f64], w: &[f64], out: &mut [f64], d: &Dims, geom: &ConvGeom) {
    let (p, kc) = (d.plane(), d.patch());
    let groups = d.c / d.cg;
    let mut cols = vec![0.0; if d.is_pointwise(geom) { 0 } else { kc * p }];
    for n in 0..d.n {
        for g in 0..groups {
            let x_off = (n * d.c + g * d.cg) * d.h * d.w;
            let xs = &x[x_off..x_off + d.cg * d.h * d.w];
            let out_off = (n * d.o + g * d.og) * p;
            let wg = &w[g * d.og * kc..(g + 1) * d.og * kc];
            let rhs = if d.is_pointwise(geom) {
                MatRef::row_major(xs, p)
            } else {
                im2col(xs, d, geom, &mut cols);
                MatRef::row_major(&cols, p)
            };
            gemm(d.og, kc, p, MatRef::row_major(wg, kc), rhs, 0.0, &mut out[out_off..out_off + d.og * p]);
        }
    }
}

fn im2col(x: &[f64], d: &Dims, geom: &ConvGeom, cols: &mut [f64]) {
    let p = d.plane();
    let pad = geom.padding as isize;
    for c in 0..d.cg {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..d.oh {
                    let iy = (oy * geom.stride + ky) as isize - pad;
                    let line = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * d.h + iy as usize) * d.w..(c * d.h + iy as usize + 1) * d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * geom.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= d.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], d: &Dims, geom: &ConvGeom, dx: &mut [f64]) {
    let p = d.plane();
    let pad = geom.padding as isize;
    for c in 0..d.cg {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..d.oh {
                    let iy = (oy * geom.stride + ky) as isize - pad;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let base = (c * d.h + iy as usize) * d.w;
                    for ox in 0..d.ow {
                        let ix = (ox * geom.stride + kx) as isize - pad;
                        if ix >= 0 && ix < d.w as isize {
                            dx[base + ix as usize] += src[oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `k`.
fn valid_range(k: usize, input: usize, out: usize, stride: usize, pad: usize) -> (usize, usize) {
    // o*stride + k - pad in [0, input)
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if input + pad > k {
        ((input + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn depthwise_forward(x: &[f64], w: &[f64], out: &mut [f64], d: &Dims, geom: &ConvGeom) {
    let p = d.plane();
    let (s, pad) = (geom.stride, geom.padding);
    for n in 0..d.n {
        for o in 0..d.o {
            let ci = o / d.og;
            let xin = &x[(n * d.c + ci) * d.h * d.w..(n * d.c + ci + 1) * d.h * d.w];
            let k = &w[o * d.kh * d.kw..(o + 1) * d.kh * d.kw];
            let dst = &mut out[(n * d.o + o) * p..(n * d.o + o + 1) * p];
            for ky in 0..d.kh {
                let (y0, y1) = valid_range(ky, d.h, d.oh, s, pad);
                for kx in 0..d.kw {
                    let (x0, x1) = valid_range(kx, d.w, d.ow, s, pad);
                    let kv = k[ky * d.kw + kx];
                    for oy in y0..y1 {
                        let iy = oy * s + ky - pad;
                        let row = &xin[iy * d.w..(iy + 1) * d.w];
                        let drow = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                        for ox in x0..x1 {
                            drow[ox] += kv * row[ox * s + kx - pad];
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward(x: &[f64], w: &[f64], up: &[f64], d: &Dims, geom: &ConvGeom, dx: Option<&mut [f64]>, dw: Option<&mut [f64]>) {
    let p = d.plane();
    let (s, pad) = (geom.stride, geom.padding);
    let mut dx = dx;
    let mut dw = dw;
    for n in 0..d.n {
        for o in 0..d.o {
            let ci = o / d.og;
            let xoff = (n * d.c + ci) * d.h * d.w;
            let g = &up[(n * d.o + o) * p..(n * d.o + o + 1) * p];
            for ky in 0..d.kh {
                let (y0, y1) = valid_range(ky, d.h, d.oh, s, pad);
                for kx in 0..d.kw {
                    let (x0, x1) = valid_range(kx, d.w, d.ow, s, pad);
                    let kidx = o * d.kh * d.kw + ky * d.kw + kx;
                    let kv = w[kidx];
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * s + ky - pad;
                        let grow = &g[oy * d.ow..(oy + 1) * d.ow];
                        let rbase = xoff + iy * d.w;
                        if dw.is_some() {
                            let row = &x[rbase..rbase + d.w];
                            for ox in x0..x1 {
                                acc += grow[ox] * row[ox * s + kx - pad];
                            }
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            let drow = &mut dx[rbase..rbase + d.w];
                            for ox in x0..x1 {
                                drow[ox * s + kx - pad] += grow[ox] * kv;
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[kidx] += acc;
                    }
                }
            }
        }
    }
}

pub(super) fn backward(graph: &Graph, x: Var, w: Var, geom: &ConvGeom, up: &Tensor, sink: &mut GradSink<'_>) {
    let (vx, vw) = (graph.value(x), graph.value(w));
    let d = Dims::resolve(vx.shape(), vw.shape(), geom).expect("validated in forward");
    let want_x = sink.wants(x);
    let want_w = sink.wants(w);
    let mut dx = if want_x { vec![0.0; vx.len()] } else { Vec::new() };
    let mut dw = if want_w { vec![0.0; vw.len()] } else { Vec::new() };

    if d.cg == 1 {
        depthwise_backward(
            vx.data(),
            vw.data(),
            up.data(),
            &d,
            geom,
            want_x.then_some(dx.as_mut_slice()),
            want_w.then_some(dw.as_mut_slice()),
        );
    } else {
        let (p, kc) = (d.plane(), d.patch());
        let groups = d.c / d.cg;
        let pointwise = d.is_pointwise(geom);
        let mut cols = vec![0.0; if pointwise { 0 } else { kc * p }];
        let mut dcols = vec![0.0; if pointwise || !want_x { 0 } else { kc * p }];
        for n in 0..d.n {
            for g in 0..groups {
                let x_off = (n * d.c + g * d.cg) * d.h * d.w;
                let xlen = d.cg * d.h * d.w;
                let out_off = (n * d.o + g * d.og) * p;
                let gout = &up.data()[out_off..out_off + d.og * p];
                let w_off = g * d.og * kc;
                let wg = &vw.data()[w_off..w_off + d.og * kc];
                if want_w {
                    let rhs = if pointwise {
                        MatRef::transposed(&vx.data()[x_off..x_off + xlen], p)
                    } else {
                        im2col(&vx.data()[x_off..x_off + xlen], &d, geom, &mut cols);
                        MatRef::transposed(&cols, p)
                    };
                    gemm(d.og, p, kc, MatRef::row_major(gout, p), rhs, 1.0, &mut dw[w_off..w_off + d.og * kc]);
                }
                if want_x {
                    let lhs = MatRef::transposed(wg, kc);
                    if pointwise {
                        gemm(kc, d.og, p, lhs, MatRef::row_major(gout, p), 1.0, &mut dx[x_off..x_off + xlen]);
                    } else {
                        gemm(kc, d.og, p, lhs, MatRef::row_major(gout, p), 0.0, &mut dcols);
                        col2im(&dcols, &d, geom, &mut dx[x_off..x_off + xlen]);
                    }
                }
            }
        }
    }
    if want_x {
        sink.add_slice(x, &dx);
    }
    if want_w {
        sink.add_slice(w, &dw);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop reference, independent of the im2col and depthwise paths.
    fn naive(x: &Tensor, w: &Tensor, geom: ConvGeom) -> Tensor {
        let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [o, ci, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
        let oh = (h + 2 * geom.padding - kh) / geom.stride + 1;
        let ow = (wd + 2 * geom.padding - kw) / geom.stride + 1;
        let og = o / geom.groups;
        let mut out = vec![0.0; n * o * oh * ow];
        for b in 0..n {
            for oc in 0..o {
                let g = oc / og;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for icg in 0..ci {
                            let ic = g * ci + icg;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
                                    let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((b * c + ic) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((oc * ci + icg) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((b * o + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![n, o, oh, ow], out).unwrap()
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    fn run(x: Tensor, w: Tensor, geom: ConvGeom) -> Tensor {
        let mut g = Graph::new();
        let (vx, vw) = (g.constant(x), g.constant(w));
        let y = g.conv2d(vx, vw, geom).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn identity_kernel() {
        let x = pseudo(&[2, 1, 5, 5], 3);
        let y = run(x.clone(), Tensor::ones(&[1, 1, 1, 1]), ConvGeom::new(1, 0));
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_sum() {
        let y = run(Tensor::ones(&[1, 1, 3, 3]), Tensor::ones(&[1, 1, 3, 3]), ConvGeom::new(1, 0));
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn matches_naive_loops() {
        let cases = [
            (vec![1, 1, 4, 4], vec![1, 1, 3, 3], ConvGeom::new(1, 0)),
            (vec![2, 3, 7, 6], vec![4, 3, 3, 3], ConvGeom::new(1, 1)),
            (vec![2, 3, 7, 7], vec![5, 3, 3, 2], ConvGeom::new(2, 1)),
            (vec![2, 4, 5, 5], vec![6, 4, 1, 1], ConvGeom::new(1, 0)),
            (vec![2, 4, 6, 6], vec![4, 1, 3, 3], ConvGeom::depthwise(1, 1, 4)),
            (vec![1, 2, 6, 5], vec![6, 1, 3, 3], ConvGeom::depthwise(2, 1, 2)),
            (vec![1, 4, 5, 5], vec![6, 2, 3, 3], ConvGeom { stride: 1, padding: 2, groups: 2 }),
        ];
        for (i, (xs, ws, geom)) in cases.into_iter().enumerate() {
            let x = pseudo(&xs, i as u64);
            let w = pseudo(&ws, 100 + i as u64);
            let got = run(x.clone(), w.clone(), geom);
            let want = naive(&x, &w, geom);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-6, "case {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn output_extent_formula() {
        let g = ConvGeom::new(2, 1);
        assert_eq!(g.output_extent(7, 3), Some(4));
        assert_eq!(ConvGeom::new(1, 0).output_extent(2, 3), None);
    }

    #[test]
    fn incompatible_channels_name_both_shapes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 5, 5]));
        let w = g.constant(Tensor::zeros(&[2, 4, 3, 3]));
        let msg = g.conv2d(x, w, ConvGeom::new(1, 0)).unwrap_err().to_string();
        assert!(msg.contains("[1, 3, 5, 5]") && msg.contains("[2, 4, 3, 3]"), "{msg}");
    }

    #[test]
    fn zero_stride_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 5, 5]));
        let w = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(g.conv2d(x, w, ConvGeom::new(0, 0)).is_err());
    }
}
