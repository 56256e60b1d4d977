//! Direct 2-D convolution (cross-correlation) with stride, zero padding and
//! dilation. Kernels are plain loops parallelised over planes; every
//! output element is reduced in a fixed order, so results do not depend on
//! the thread count.

use rayon::prelude::*;

use super::tensor::{BackwardFn, Node};
use super::{Result, Scalar, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dGeom {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl Conv2dGeom {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    /// `floor((n + 2p - d(k-1) - 1)/s) + 1`, or `None` when the dilated
    /// kernel does not fit.
    pub fn out_dim(&self, n: usize, k: usize) -> Option<usize> {
        if self.stride == 0 || self.dilation == 0 || k == 0 {
            return None;
        }
        let span = self.dilation * (k - 1) + 1;
        let padded = n + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    /// Output indices `o` in `[lo, hi)` whose tap `k` lands inside `[0, n)`.
    fn valid_range(&self, tap: usize, n: usize, n_out: usize) -> (usize, usize) {
        let off = tap * self.dilation;
        let s = self.stride;
        let lo = if self.padding > off {
            (self.padding - off).div_ceil(s)
        } else {
            0
        };
        let hi = if n + self.padding <= off {
            0
        } else {
            ((n - 1 + self.padding - off) / s + 1).min(n_out)
        };
        (lo, hi.max(lo))
    }
}

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

struct Conv2dBack {
    geom: Conv2dGeom,
    dims: Dims,
}

impl BackwardFn for Conv2dBack {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let gx = x
            .requires_grad()
            .then(|| input_grad(g, w.data(), self.dims, self.geom));
        let gw = w
            .requires_grad()
            .then(|| weight_grad(g, x.data(), self.dims, self.geom));
        let mut out = vec![gx, gw];
        if let Some(b) = inputs.get(2) {
            let d = self.dims;
            out.push(b.requires_grad().then(|| {
                let plane = d.oh * d.ow;
                let mut gb = vec![0.0; d.cout];
                for (i, p) in g.chunks(plane).enumerate() {
                    gb[i % d.cout] += p.iter().sum::<Scalar>();
                }
                gb
            }));
        }
        out
    }
}

/// Input row read by output row `oy` through kernel row `ky`, if any.
fn source_row(geom: Conv2dGeom, oy: usize, ky: usize, h: usize) -> Option<usize> {
    (oy * geom.stride + ky * geom.dilation)
        .checked_sub(geom.padding)
        .filter(|&iy| iy < h)
}

/// Output row that reads input row `iy` through kernel row `ky`, if any.
fn target_row(geom: Conv2dGeom, iy: usize, ky: usize, oh: usize) -> Option<usize> {
    let t = (iy + geom.padding).checked_sub(ky * geom.dilation)?;
    (t % geom.stride == 0 && t / geom.stride < oh).then_some(t / geom.stride)
}

/// Dot product with four fixed partial sums, so it vectorises and the
/// summation order is still fixed.
fn dot(a: &[Scalar], b: &[Scalar]) -> Scalar {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: Scalar = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

// All three kernels walk one row at a time so the rows being accumulated
// stay in cache across channels and taps.

fn forward(x: &[Scalar], w: &[Scalar], bias: Option<&[Scalar]>, d: Dims, geom: Conv2dGeom) -> Vec<Scalar> {
    let plane_out = d.oh * d.ow;
    let plane_in = d.h * d.w;
    let s = geom.stride;
    let ksize = d.kh * d.kw;
    let mut out = vec![0.0; d.batch * d.cout * plane_out];
    let cols: Vec<_> = (0..d.kw).map(|kx| geom.valid_range(kx, d.w, d.ow)).collect();
    out.par_chunks_mut(plane_out).enumerate().for_each(|(idx, o)| {
        let (b, co) = (idx / d.cout, idx % d.cout);
        let x_b = &x[b * d.cin * plane_in..(b + 1) * d.cin * plane_in];
        let w_co = &w[co * d.cin * ksize..(co + 1) * d.cin * ksize];
        for (oy, row_out) in o.chunks_exact_mut(d.ow).enumerate() {
            row_out.fill(bias.map_or(0.0, |bv| bv[co]));
            for ci in 0..d.cin {
                let inp = &x_b[ci * plane_in..(ci + 1) * plane_in];
                for ky in 0..d.kh {
                    let Some(iy) = source_row(geom, oy, ky, d.h) else { continue };
                    let row_in = &inp[iy * d.w..(iy + 1) * d.w];
                    for (kx, &(ox0, ox1)) in cols.iter().enumerate() {
                        if ox1 <= ox0 {
                            continue;
                        }
                        let wv = w_co[ci * ksize + ky * d.kw + kx];
                        let ix0 = ox0 * s + kx * geom.dilation - geom.padding;
                        let dst = &mut row_out[ox0..ox1];
                        if s == 1 {
                            let src = &row_in[ix0..ix0 + dst.len()];
                            dst.iter_mut().zip(src).for_each(|(o, i)| *o += wv * i);
                        } else {
                            for (j, o) in dst.iter_mut().enumerate() {
                                *o += wv * row_in[ix0 + j * s];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn input_grad(g: &[Scalar], w: &[Scalar], d: Dims, geom: Conv2dGeom) -> Vec<Scalar> {
    let plane_out = d.oh * d.ow;
    let plane_in = d.h * d.w;
    let s = geom.stride;
    let ksize = d.kh * d.kw;
    let mut gx = vec![0.0; d.batch * d.cin * plane_in];
    let cols: Vec<_> = (0..d.kw).map(|kx| geom.valid_range(kx, d.w, d.ow)).collect();
    gx.par_chunks_mut(plane_in).enumerate().for_each(|(idx, gi)| {
        let (b, ci) = (idx / d.cin, idx % d.cin);
        let g_b = &g[b * d.cout * plane_out..(b + 1) * d.cout * plane_out];
        for (iy, row) in gi.chunks_exact_mut(d.w).enumerate() {
            for co in 0..d.cout {
                let go = &g_b[co * plane_out..(co + 1) * plane_out];
                let wk = &w[(co * d.cin + ci) * ksize..(co * d.cin + ci + 1) * ksize];
                for ky in 0..d.kh {
                    let Some(oy) = target_row(geom, iy, ky, d.oh) else { continue };
                    let row_g = &go[oy * d.ow..(oy + 1) * d.ow];
                    for (kx, &(ox0, ox1)) in cols.iter().enumerate() {
                        if ox1 <= ox0 {
                            continue;
                        }
                        let wv = wk[ky * d.kw + kx];
                        let src = &row_g[ox0..ox1];
                        let ix0 = ox0 * s + kx * geom.dilation - geom.padding;
                        if s == 1 {
                            row[ix0..ix0 + src.len()]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(o, g)| *o += wv * g);
                        } else {
                            for (j, gv) in src.iter().enumerate() {
                                row[ix0 + j * s] += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    });
    gx
}

fn weight_grad(g: &[Scalar], x: &[Scalar], d: Dims, geom: Conv2dGeom) -> Vec<Scalar> {
    let plane_out = d.oh * d.ow;
    let plane_in = d.h * d.w;
    let s = geom.stride;
    let ksize = d.kh * d.kw;
    let mut gw = vec![0.0; d.cout * d.cin * ksize];
    let cols: Vec<_> = (0..d.kw).map(|kx| geom.valid_range(kx, d.w, d.ow)).collect();
    gw.par_chunks_mut(d.cin * ksize).enumerate().for_each(|(co, gwc)| {
        let mut strided = Vec::new();
        for b in 0..d.batch {
            let go = &g[(b * d.cout + co) * plane_out..(b * d.cout + co + 1) * plane_out];
            let x_b = &x[b * d.cin * plane_in..(b + 1) * d.cin * plane_in];
            for (oy, row_g) in go.chunks_exact(d.ow).enumerate() {
                for ci in 0..d.cin {
                    let inp = &x_b[ci * plane_in..(ci + 1) * plane_in];
                    for ky in 0..d.kh {
                        let Some(iy) = source_row(geom, oy, ky, d.h) else { continue };
                        let row_in = &inp[iy * d.w..(iy + 1) * d.w];
                        for (kx, &(ox0, ox1)) in cols.iter().enumerate() {
                            if ox1 <= ox0 {
                                continue;
                            }
                            let src = &row_g[ox0..ox1];
                            let ix0 = ox0 * s + kx * geom.dilation - geom.padding;
                            gwc[ci * ksize + ky * d.kw + kx] += if s == 1 {
                                dot(src, &row_in[ix0..ix0 + src.len()])
                            } else {
                                strided.clear();
                                strided.extend((0..src.len()).map(|j| row_in[ix0 + j * s]));
                                dot(src, &strided)
                            };
                        }
                    }
                }
            }
        }
    });
    gw
}

impl Tensor {
    /// `input[B,Cin,H,W]` ⋆ `weight[Cout,Cin,kh,kw]` (+ `bias[Cout]`).
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, geom: Conv2dGeom) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("expected rank-4 input and weight, got {xs:?} and {ws:?}"),
            });
        }
        if xs[1] != ws[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("input has {} channels, weight expects {}", xs[1], ws[1]),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [ws[0]] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("bias {:?}, expected [{}]", b.shape(), ws[0]),
                });
            }
        }
        let (oh, ow) = match (geom.out_dim(xs[2], ws[2]), geom.out_dim(xs[3], ws[3])) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => (oh, ow),
            _ => {
                return Err(TensorError::Geometry {
                    op: "conv2d",
                    detail: format!("input {xs:?}, kernel {ws:?}, {geom:?}"),
                })
            }
        };
        let dims = Dims {
            batch: xs[0],
            cin: xs[1],
            cout: ws[0],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            oh,
            ow,
        };
        let data = forward(self.data(), weight.data(), bias.map(Tensor::data), dims, geom);
        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Ok(Tensor::from_op(
            data,
            vec![dims.batch, dims.cout, oh, ow],
            inputs,
            Conv2dBack { geom, dims },
        ))
    }
}
